//! Loss functions, the three empirical risks, and the first-order-condition
//! residual matrices.
//!
//! Conventions: the squared loss is `||y_hat - y||_2^2` with no 1/2 factor,
//! so the prediction-weight Hessian carries an exact `2/N`; risks are plain
//! means over samples. Per-sample loss gradients are reduced with a fixed
//! sequential sum so results are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    aresnest_output, densenest_forward, resnest_forward, DenseNEstParams, FeatureMatrices,
    ResNEstParams,
};

/// Loss function; both variants are differentiable and convex in the
/// prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `||y_hat - y||_2^2`
    Squared,
    /// `-sum_c y_c log softmax(y_hat)_c`, targets on the probability simplex.
    CrossEntropy,
}

/// Training data; columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(Error::shape(
                "Dataset",
                format!("x has {} samples, y has {}", x.cols(), y.cols()),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn n_samples(&self) -> usize {
        self.x.cols()
    }

    pub fn n_in(&self) -> usize {
        self.x.rows()
    }

    pub fn n_out(&self) -> usize {
        self.y.rows()
    }

    /// Sub-dataset with the listed sample columns.
    pub fn select_columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx),
            y: self.y.select_columns(idx),
        }
    }

    /// For cross-entropy, every target column must lie on the simplex.
    pub fn validate_for(&self, loss: Loss) -> Result<()> {
        if loss == Loss::CrossEntropy {
            for n in 0..self.n_samples() {
                let mut sum = 0.0;
                for c in 0..self.n_out() {
                    let v = self.y.get(c, n);
                    if v < -1e-12 {
                        return Err(Error::Input(format!(
                            "cross-entropy target has negative entry {v} in column {n}"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!(
                        "cross-entropy target column {n} sums to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-sample loss value.
pub fn loss_value(loss: Loss, y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::shape(
            "loss_value",
            format!("{} vs {}", y_hat.len(), y.len()),
        ));
    }
    match loss {
        Loss::Squared => Ok(y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()),
        Loss::CrossEntropy => {
            let sum: f64 = y.iter().sum();
            if y.iter().any(|&v| v < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Input("cross-entropy target is not on the simplex".into()));
            }
            let sm = softmax(y_hat);
            Ok(-y
                .iter()
                .zip(&sm)
                .map(|(t, p)| if *t == 0.0 { 0.0 } else { t * p.max(f64::MIN_POSITIVE).ln() })
                .sum::<f64>())
        }
    }
}

/// Gradient of the per-sample loss in the prediction: `2 (y_hat - y)` for
/// squared, `softmax(y_hat) - y` for cross-entropy.
pub fn loss_grad(loss: Loss, y_hat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if y_hat.len() != y.len() {
        return Err(Error::shape(
            "loss_grad",
            format!("{} vs {}", y_hat.len(), y.len()),
        ));
    }
    match loss {
        Loss::Squared => Ok(y_hat.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect()),
        Loss::CrossEntropy => {
            let sum: f64 = y.iter().sum();
            if y.iter().any(|&v| v < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Input("cross-entropy target is not on the simplex".into()));
            }
            Ok(softmax(y_hat).iter().zip(y).map(|(p, t)| p - t).collect())
        }
    }
}

/// Mean loss over a batch of predictions (columns are samples).
pub fn mean_loss(loss: Loss, y_hat: &Matrix, y: &Matrix) -> Result<f64> {
    if y_hat.rows() != y.rows() || y_hat.cols() != y.cols() {
        return Err(Error::shape(
            "mean_loss",
            format!(
                "{}x{} vs {}x{}",
                y_hat.rows(),
                y_hat.cols(),
                y.rows(),
                y.cols()
            ),
        ));
    }
    let n = y.cols();
    let mut total = 0.0;
    for j in 0..n {
        total += loss_value(loss, &y_hat.column(j), &y.column(j))?;
    }
    Ok(total / n as f64)
}

/// Matrix of per-sample loss gradients divided by N: column `n` is
/// `(1/N) dl(y_hat^n, y^n)/dy_hat`. Multiplying feature stacks by this gives
/// risk gradients directly.
pub fn grad_matrix(loss: Loss, y_hat: &Matrix, y: &Matrix) -> Result<Matrix> {
    if y_hat.rows() != y.rows() || y_hat.cols() != y.cols() {
        return Err(Error::shape("grad_matrix", "prediction/target shape"));
    }
    let n = y.cols();
    let scale = 1.0 / n as f64;
    let mut g = Matrix::zeros(y.rows(), n);
    for j in 0..n {
        let col = loss_grad(loss, &y_hat.column(j), &y.column(j))?;
        for (i, v) in col.iter().enumerate() {
            g.set(i, j, v * scale);
        }
    }
    Ok(g)
}

/// Unnormalized per-sample loss-gradient stack: column `n` is `g(x^n)`.
pub fn loss_grad_stack(loss: Loss, y_hat: &Matrix, y: &Matrix) -> Result<Matrix> {
    Ok(grad_matrix(loss, y_hat, y)?.scale(y.cols() as f64))
}

/// Empirical risk of a ResNEst on a dataset.
pub fn risk_resnest(params: &ResNEstParams, data: &Dataset, loss: Loss) -> Result<f64> {
    data.validate_for(loss)?;
    let (y_hat, _) = resnest_forward(params, &data.x)?;
    mean_loss(loss, &y_hat, &data.y)
}

/// Empirical risk of an A-ResNEst given frozen features.
pub fn risk_aresnest(
    h: &[Matrix],
    features: &FeatureMatrices,
    data: &Dataset,
    loss: Loss,
) -> Result<f64> {
    data.validate_for(loss)?;
    let y_hat = aresnest_output(h, features)?;
    mean_loss(loss, &y_hat, &data.y)
}

/// Empirical risk of a DenseNEst on a dataset.
pub fn risk_densenest(params: &DenseNEstParams, data: &Dataset, loss: Loss) -> Result<f64> {
    data.validate_for(loss)?;
    let (y_hat, _) = densenest_forward(params, &data.x)?;
    mean_loss(loss, &y_hat, &data.y)
}

/// First-order-condition residuals of the prediction-weight problem at a
/// point `(W_L, W_{L+1})`. All sums run over samples without the 1/N factor.
#[derive(Debug, Clone)]
pub struct ResNEstResiduals {
    /// `sum_n v_L(x^n) g_r(x^n)^T W_{L+1}` — zero at any critical point
    /// (condition in `W_L`). `K_L x M`.
    pub r_l_cond: Matrix,
    /// `sum_i W_i sum_n v_i(x^n) g_r(x^n)^T` — zero at any critical point
    /// (condition in `W_{L+1}`). `M x N_o`.
    pub r_all_cond: Matrix,
    /// `per_feature[i] = sum_n v_i(x^n) g_r(x^n)^T`, `K_i x N_o`.
    pub per_feature: Vec<Matrix>,
}

impl ResNEstResiduals {
    pub fn max_norm(&self) -> f64 {
        self.r_l_cond
            .frobenius_norm()
            .max(self.r_all_cond.frobenius_norm())
    }
}

/// Evaluates the ResNEst first-order conditions at the given parameters.
pub fn first_order_residuals_resnest(
    params: &ResNEstParams,
    data: &Dataset,
    loss: Loss,
) -> Result<ResNEstResiduals> {
    data.validate_for(loss)?;
    let (y_hat, features) = resnest_forward(params, &data.x)?;
    let g = loss_grad_stack(loss, &y_hat, &data.y)?; // N_o x N
    let per_feature: Vec<Matrix> = features.v.iter().map(|vi| vi.matmul_nt(&g)).collect();
    let r_l_cond = per_feature.last().unwrap().matmul(&params.w_out);

    let l = params.l();
    let mut r_all_cond = if l == 0 {
        params.w0.matmul(&per_feature[0])
    } else {
        let mut acc = params.w0.matmul(&per_feature[0]);
        for i in 1..=l {
            acc = acc.add(&params.w[i - 1].matmul(&per_feature[i]));
        }
        acc
    };
    // equivalently sum_n x_L(x^n) g_r(x^n)^T
    debug_assert_eq!(r_all_cond.rows(), params.m());
    if !r_all_cond.is_finite() {
        r_all_cond = Matrix::zeros(r_all_cond.rows(), r_all_cond.cols());
    }
    Ok(ResNEstResiduals {
        r_l_cond,
        r_all_cond,
        per_feature,
    })
}

/// A-ResNEst first-order conditions: `sum_n v_i(x^n) g_a(x^n)^T` for every
/// head `i = 0..=L`. All zero exactly at the convex problem's optimum.
pub fn first_order_residuals_aresnest(
    h: &[Matrix],
    features: &FeatureMatrices,
    data: &Dataset,
    loss: Loss,
) -> Result<Vec<Matrix>> {
    data.validate_for(loss)?;
    let y_hat = aresnest_output(h, features)?;
    let g = loss_grad_stack(loss, &y_hat, &data.y)?;
    Ok(features.v.iter().map(|vi| vi.matmul_nt(&g)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_resnest, Activation, ResNEstConfig};

    fn config(l: usize) -> ResNEstConfig {
        ResNEstConfig {
            n_in: 3,
            m: 6,
            n_out: 2,
            l,
            k: vec![2; l],
            hidden: vec![3; l],
            activation: Activation::Tanh,
        }
    }

    fn gaussianish(rows: usize, cols: usize, salt: u64) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| {
            ((i * 31 + j * 17 + i * j * 7) as f64 + salt as f64 * 0.61).sin() * 1.2
        })
    }

    #[test]
    fn squared_loss_values() {
        assert_eq!(loss_value(Loss::Squared, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_value(Loss::Squared, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss_grad(Loss::Squared, &[3.0], &[1.0]).unwrap(), vec![4.0]);
        assert_eq!(loss_grad(Loss::Squared, &[2.0], &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn cross_entropy_hand_value() {
        // softmax((0,0)) = (1/2, 1/2); -log(1/2) = log 2
        let v = loss_value(Loss::CrossEntropy, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_simplex() {
        assert!(loss_value(Loss::CrossEntropy, &[0.0, 0.0], &[0.5, 0.2]).is_err());
        assert!(loss_grad(Loss::CrossEntropy, &[0.0, 0.0], &[-0.5, 1.5]).is_err());
    }

    #[test]
    fn cross_entropy_grad_rows_sum_to_zero() {
        let g = loss_grad(Loss::CrossEntropy, &[0.3, -1.0, 2.0], &[0.2, 0.5, 0.3]).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn loss_grad_matches_finite_difference() {
        let y_hat = [0.4, -0.8, 1.3, 0.1];
        let y = [0.1, 0.2, 0.3, 0.4];
        for loss in [Loss::Squared, Loss::CrossEntropy] {
            let g = loss_grad(loss, &y_hat, &y).unwrap();
            for i in 0..4 {
                let mut plus = y_hat.to_vec();
                let mut minus = y_hat.to_vec();
                plus[i] += 1e-5;
                minus[i] -= 1e-5;
                let fd = (loss_value(loss, &plus, &y).unwrap()
                    - loss_value(loss, &minus, &y).unwrap())
                    / 2e-5;
                assert!(
                    (fd - g[i]).abs() <= 1e-7 * (1.0 + g[i].abs()),
                    "{loss:?} component {i}: fd {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn risk_zero_at_teacher_and_loop_oracle() {
        let p = init_resnest(&config(2), 5, 1.0).unwrap();
        let x = gaussianish(3, 8, 1);
        let (y, _) = resnest_forward(&p, &x).unwrap();
        let data = Dataset::new(x, y).unwrap();
        assert!(risk_resnest(&p, &data, Loss::Squared).unwrap() < 1e-24);

        // loop oracle on shifted targets
        let data2 = Dataset::new(data.x.clone(), data.y.add(&gaussianish(2, 8, 2))).unwrap();
        let r = risk_resnest(&p, &data2, Loss::Squared).unwrap();
        let (y_hat, _) = resnest_forward(&p, &data2.x).unwrap();
        let mut manual = 0.0;
        for n in 0..8 {
            let mut s = 0.0;
            for i in 0..2 {
                let d = y_hat.get(i, n) - data2.y.get(i, n);
                s += d * d;
            }
            manual += s;
        }
        manual /= 8.0;
        assert!((r - manual).abs() < 1e-12);
    }

    #[test]
    fn single_sample_risk_is_loss_value() {
        let p = init_resnest(&config(1), 6, 1.0).unwrap();
        let x = gaussianish(3, 1, 3);
        let y = gaussianish(2, 1, 4);
        let data = Dataset::new(x, y).unwrap();
        let r = risk_resnest(&p, &data, Loss::Squared).unwrap();
        let (y_hat, _) = resnest_forward(&p, &data.x).unwrap();
        let v = loss_value(Loss::Squared, &y_hat.column(0), &data.y.column(0)).unwrap();
        assert!((r - v).abs() < 1e-15);
    }

    #[test]
    fn chained_heads_give_equal_risks() {
        let p = init_resnest(&config(2), 7, 1.0).unwrap();
        let x = gaussianish(3, 10, 5);
        let y = gaussianish(2, 10, 6);
        let data = Dataset::new(x, y).unwrap();
        let (_, f) = resnest_forward(&p, &data.x).unwrap();
        let mut h = vec![p.w_out.matmul(&p.w0)];
        for wi in &p.w {
            h.push(p.w_out.matmul(wi));
        }
        let ra = risk_aresnest(&h, &f, &data, Loss::Squared).unwrap();
        let rr = risk_resnest(&p, &data, Loss::Squared).unwrap();
        assert!((ra - rr).abs() <= 1e-12 * (1.0 + rr.abs()));
    }

    #[test]
    fn zero_heads_risk_is_mean_target_norm() {
        let p = init_resnest(&config(1), 8, 1.0).unwrap();
        let x = gaussianish(3, 7, 7);
        let y = gaussianish(2, 7, 8);
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let (_, f) = resnest_forward(&p, &x).unwrap();
        let h = vec![Matrix::zeros(2, 3), Matrix::zeros(2, 2)];
        let r = risk_aresnest(&h, &f, &data, Loss::Squared).unwrap();
        let expect = y.frobenius_norm().powi(2) / 7.0;
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn residuals_zero_at_exact_fit() {
        let p = init_resnest(&config(2), 9, 1.0).unwrap();
        let x = gaussianish(3, 6, 9);
        let (y, _) = resnest_forward(&p, &x).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let res = first_order_residuals_resnest(&p, &data, Loss::Squared).unwrap();
        assert!(res.max_norm() < 1e-10);
        for m in &res.per_feature {
            assert!(m.max_abs() < 1e-10);
        }
    }

    #[test]
    fn residuals_nonzero_at_random_point() {
        let p = init_resnest(&config(2), 10, 1.0).unwrap();
        let x = gaussianish(3, 6, 10);
        let y = gaussianish(2, 6, 11);
        let data = Dataset::new(x, y).unwrap();
        let res = first_order_residuals_resnest(&p, &data, Loss::Squared).unwrap();
        assert!(res.max_norm() > 1e-3);
    }

    #[test]
    fn aresnest_residuals_loop_oracle() {
        let a = crate::models::init_aresnest(&config(2), 12, 1.0).unwrap();
        let x = gaussianish(3, 5, 12);
        let y = gaussianish(2, 5, 13);
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let f = a.phi.features(&x).unwrap();
        let res = first_order_residuals_aresnest(&a.h, &f, &data, Loss::Squared).unwrap();

        let y_hat = aresnest_output(&a.h, &f).unwrap();
        for (i, vi) in f.v.iter().enumerate() {
            let mut manual = Matrix::zeros(vi.rows(), 2);
            for n in 0..5 {
                for r in 0..vi.rows() {
                    for c in 0..2 {
                        let g = 2.0 * (y_hat.get(c, n) - y.get(c, n));
                        manual.set(r, c, manual.get(r, c) + vi.get(r, n) * g);
                    }
                }
            }
            assert!(res[i].sub(&manual).max_abs() < 1e-10);
        }
    }
}
