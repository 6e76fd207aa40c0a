//! Closed-form Hessian of the squared-loss prediction-weight problem and
//! curvature analysis built on it.
//!
//! With phi frozen and parameters ordered `[vec(W_L^T); vec(W_{L+1}^T)]`
//! (column-stacking), the Hessian is
//!
//! ```text
//! (2/N) * [ W^T W (x) V_L V_L^T      W^T (x) V_L B^T + E ]
//!         [ W (x) B V_L^T + E^T      I_{N_o} (x) B B^T   ]
//! ```
//!
//! where `W = W_{L+1}`, `B = sum_i W_i V_i` is the residual-representation
//! stack, `E = [I_M (x) V_L d_1, .., I_M (x) V_L d_{N_o}]` and `d_j` are the
//! columns of `Delta = (Yhat - Y)^T`. The two mixed blocks are exact
//! transposes of one another, so the assembled matrix is symmetric by
//! construction; the whole expression is validated against a
//! finite-difference Hessian in the test suite.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{kron, rank, sym_eig, Matrix};
use crate::models::{FeatureMatrices, FeatureWeights};
use crate::risk::Dataset;

/// Hard guard on the assembled dimension `M K_L + M N_o`.
pub const MAX_HESSIAN_DIM: usize = 2000;

/// Relative tolerance used to call an eigenvalue zero.
pub const CURVATURE_TOL: f64 = 1e-8;

/// The four Hessian blocks plus the pieces they are built from.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// `(2/N) W^T W (x) V_L V_L^T`, `M K_L` square.
    pub h_ll: Matrix,
    /// `(2/N) (W^T (x) V_L B^T + E)`, `M K_L x M N_o`.
    pub h_lo: Matrix,
    /// Transpose of `h_lo`.
    pub h_ol: Matrix,
    /// `(2/N) I_{N_o} (x) B B^T`, `M N_o` square.
    pub h_oo: Matrix,
    /// Unscaled `E` as defined above.
    pub e_mat: Matrix,
    /// `Delta = (Yhat - Y)^T`, `N x N_o`.
    pub delta: Matrix,
    /// `V_L Delta`, reused by the semidefiniteness test.
    pub v_l_delta: Matrix,
    /// Gram matrix `W_{L+1}^T W_{L+1}`.
    pub w_gram: Matrix,
    pub m: usize,
    pub k_l: usize,
    pub n_o: usize,
}

impl HessianBlocks {
    /// Assembles the full symmetric Hessian.
    pub fn full(&self) -> Matrix {
        let top = Matrix::hstack(&[&self.h_ll, &self.h_lo]);
        let bottom = Matrix::hstack(&[&self.h_ol, &self.h_oo]);
        Matrix::vstack(&[&top, &bottom])
    }

    pub fn dim(&self) -> usize {
        self.m * self.k_l + self.m * self.n_o
    }
}

/// Sign pattern of a symmetric spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureClass {
    Indefinite,
    Psd,
    Nsd,
    Zero,
}

/// Spectrum summary of the assembled Hessian.
#[derive(Debug, Clone)]
pub struct CurvatureCertificate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Unit-norm direction achieving `lambda_min`, present iff
    /// `lambda_min < -tol`.
    pub neg_direction: Option<Vec<f64>>,
    pub classification: CurvatureClass,
    /// The scale-invariant zero threshold used: `1e-8 * ||H||_F`.
    pub tol: f64,
}

/// Outcome of the generalized-Schur necessary condition for the Hessian to
/// be positive (or negative) semidefinite: either `W^T W (W^T W)^+ = I_M`
/// or `V_L Delta = 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SchurReport {
    pub condition_a: bool,
    pub condition_b: bool,
    /// `condition_a || condition_b`; false rules out semidefiniteness.
    pub psd_possible: bool,
    pub projector_residual: f64,
    pub v_l_delta_norm: f64,
}

/// Assembles the prediction-weight Hessian at `(w_l, w_out)` over frozen
/// features (squared loss). Errors if the assembled dimension exceeds
/// [`MAX_HESSIAN_DIM`].
pub fn assemble_hessian(
    w_l: &Matrix,
    w_out: &Matrix,
    features: &FeatureMatrices,
    data: &Dataset,
) -> Result<HessianBlocks> {
    let v_l = features.v_last();
    let (m, k_l, n_o) = (w_l.rows(), w_l.cols(), w_out.rows());
    if w_out.cols() != m || v_l.rows() != k_l || data.n_out() != n_o {
        return Err(Error::shape(
            "assemble_hessian",
            format!(
                "w_l {m}x{k_l}, w_out {}x{}, V_L {} rows, targets {} rows",
                w_out.rows(),
                w_out.cols(),
                v_l.rows(),
                data.n_out()
            ),
        ));
    }
    let dim = m * k_l + m * n_o;
    if dim > MAX_HESSIAN_DIM {
        return Err(Error::Resource(format!(
            "Hessian dimension {dim} exceeds guard {MAX_HESSIAN_DIM}"
        )));
    }
    let n = data.n_samples();
    let two_over_n = 2.0 / n as f64;

    let b = crate::backprop::prediction_representation(w_l, features);
    let y_hat = w_out.matmul(&b);
    let delta = y_hat.sub(&data.y).transpose(); // N x N_o

    let w_gram = w_out.matmul_tn(w_out);
    let h_ll = kron(&w_gram, &v_l.matmul_nt(v_l)).scale(two_over_n);

    let v_l_delta = v_l.matmul(&delta); // K_L x N_o
    let mut e_mat = Matrix::zeros(m * k_l, m * n_o);
    for j in 0..n_o {
        // block j is I_M (x) (V_L d_j)
        for mi in 0..m {
            for ki in 0..k_l {
                e_mat.set(mi * k_l + ki, j * m + mi, v_l_delta.get(ki, j));
            }
        }
    }

    let h_lo = kron(&w_out.transpose(), &v_l.matmul_nt(&b))
        .add(&e_mat)
        .scale(two_over_n);
    let h_ol = h_lo.transpose();
    let h_oo = kron(&Matrix::identity(n_o), &b.matmul_nt(&b)).scale(two_over_n);

    Ok(HessianBlocks {
        h_ll,
        h_lo,
        h_ol,
        h_oo,
        e_mat,
        delta,
        v_l_delta,
        w_gram,
        m,
        k_l,
        n_o,
    })
}

/// Evaluates the necessary condition from the generalized Schur complement.
pub fn schur_semidefinite_test(blocks: &HessianBlocks) -> SchurReport {
    let gram = &blocks.w_gram;
    let projector = gram.matmul(&crate::linalg::pinv(gram, None));
    let projector_residual = projector.sub(&Matrix::identity(blocks.m)).frobenius_norm();
    let condition_a = projector_residual <= 1e-8 * (blocks.m as f64).sqrt().max(1.0);

    let v_l_delta_norm = blocks.v_l_delta.frobenius_norm();
    let scale = 1.0 + blocks.delta.frobenius_norm();
    let condition_b = v_l_delta_norm <= 1e-8 * scale;

    SchurReport {
        condition_a,
        condition_b,
        psd_possible: condition_a || condition_b,
        projector_residual,
        v_l_delta_norm,
    }
}

/// Eigendecomposes the full Hessian and classifies its sign pattern with the
/// scale-invariant threshold `1e-8 * ||H||_F`.
pub fn curvature_probe(blocks: &HessianBlocks) -> Result<CurvatureCertificate> {
    let h = blocks.full();
    let tol = CURVATURE_TOL * h.frobenius_norm();
    let eig = sym_eig(&h)?;
    let lambda_min = eig.eigenvalues[0];
    let lambda_max = *eig.eigenvalues.last().unwrap();
    let classification = if lambda_min < -tol && lambda_max > tol {
        CurvatureClass::Indefinite
    } else if lambda_min >= -tol && lambda_max > tol {
        CurvatureClass::Psd
    } else if lambda_max <= tol && lambda_min < -tol {
        CurvatureClass::Nsd
    } else {
        CurvatureClass::Zero
    };
    let neg_direction = if lambda_min < -tol {
        Some(eig.eigenvectors.column(0))
    } else {
        None
    };
    Ok(CurvatureCertificate {
        lambda_min,
        lambda_max,
        neg_direction,
        classification,
        tol,
    })
}

/// Result of a never-negative-semidefinite sweep over random prediction
/// weights.
#[derive(Debug, Clone, Serialize)]
pub struct NoNsdReport {
    pub n_points: usize,
    pub all_non_nsd: bool,
    /// Smallest `lambda_max / ||H||_F` seen; strictly positive on a pass.
    pub min_relative_lambda_max: f64,
}

/// Samples `n_points` random prediction-weight pairs (the first probe is
/// forced to the `W_{L+1} = 0` set) and asserts no Hessian is negative
/// semidefinite. Requires the data/phi pair to satisfy the nonzero
/// cross-term and full-rank feature-Gram assumption; errors otherwise.
pub fn no_nsd_scan(
    phi: &FeatureWeights,
    m: usize,
    data: &Dataset,
    n_points: usize,
    seed: u64,
) -> Result<NoNsdReport> {
    let features = phi.features(&data.x)?;
    check_assumption1(&features, data)?;
    let v_l = features.v_last();
    let k_l = v_l.rows();
    let n_o = data.n_out();

    let mut rng = crate::rng::stream(seed, "no-nsd-scan");
    let mut min_rel = f64::INFINITY;
    let mut all_non_nsd = true;
    for point in 0..n_points {
        let w_l = random_matrix(m, k_l, &mut rng);
        let w_out = if point == 0 {
            Matrix::zeros(n_o, m)
        } else {
            random_matrix(n_o, m, &mut rng)
        };
        let blocks = assemble_hessian(&w_l, &w_out, &features, data)?;
        let h = blocks.full();
        let norm = h.frobenius_norm();
        let eig = sym_eig(&h)?;
        let lambda_max = *eig.eigenvalues.last().unwrap();
        let rel = if norm > 0.0 { lambda_max / norm } else { 0.0 };
        min_rel = min_rel.min(rel);
        if lambda_max <= CURVATURE_TOL * norm {
            all_non_nsd = false;
        }
    }
    Ok(NoNsdReport {
        n_points,
        all_non_nsd,
        min_relative_lambda_max: min_rel,
    })
}

/// The data assumption behind the indefiniteness results:
/// `sum_n v_L(x^n) (y^n)^T != 0` and `V_L V_L^T` full rank.
pub fn check_assumption1(features: &FeatureMatrices, data: &Dataset) -> Result<()> {
    let v_l = features.v_last();
    let cross = v_l.matmul_nt(&data.y);
    let scale = 1.0 + v_l.frobenius_norm() * data.y.frobenius_norm();
    if cross.frobenius_norm() <= 1e-8 * scale {
        return Err(Error::Precondition(
            "sum_n v_L(x^n) y^n^T is numerically zero".into(),
        ));
    }
    let gram = v_l.matmul_nt(v_l);
    if rank(&gram, None) < v_l.rows() {
        return Err(Error::Precondition(
            "V_L V_L^T is rank deficient".into(),
        ));
    }
    Ok(())
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}
