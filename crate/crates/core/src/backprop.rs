//! Exact analytic gradients of the three empirical risks.
//!
//! Reverse accumulation is hand-derived for the fixed single-hidden-layer
//! block form instead of a general tape; each rule below is checked against
//! central finite differences in the test suite. Throughout, `G` denotes the
//! `N_o x N` stack of per-sample loss gradients already carrying the `1/N`
//! risk factor, so every parameter gradient is a small number of matrix
//! products against `G`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{AResNEstParams, BlockFn, DenseNEstParams, FeatureMatrices, ResNEstParams};
use crate::risk::{grad_matrix, Dataset, Loss};

/// Gradients of one block's weights.
#[derive(Debug, Clone)]
pub struct BlockGrad {
    pub d_weight_in: Matrix,
    pub d_weight_out: Matrix,
}

/// Gradient of the ResNEst risk with respect to every trainable parameter;
/// shapes mirror [`ResNEstParams`].
#[derive(Debug, Clone)]
pub struct GradResNEst {
    pub d_w0: Matrix,
    pub d_w: Vec<Matrix>,
    pub d_w_out: Matrix,
    pub d_blocks: Vec<BlockGrad>,
}

impl GradResNEst {
    pub fn norm(&self) -> f64 {
        let mut s = self.d_w0.frobenius_norm().powi(2) + self.d_w_out.frobenius_norm().powi(2);
        for m in &self.d_w {
            s += m.frobenius_norm().powi(2);
        }
        for b in &self.d_blocks {
            s += b.d_weight_in.frobenius_norm().powi(2) + b.d_weight_out.frobenius_norm().powi(2);
        }
        s.sqrt()
    }
}

/// Gradient of the A-ResNEst risk; `d_phi` is present iff phi was included.
#[derive(Debug, Clone)]
pub struct GradAResNEst {
    pub d_h: Vec<Matrix>,
    pub d_phi: Option<GradPhi>,
}

/// Gradient of the feature finding weights.
#[derive(Debug, Clone)]
pub struct GradPhi {
    /// Gradients for `W_0..W_{L-1}`.
    pub d_w: Vec<Matrix>,
    pub d_blocks: Vec<BlockGrad>,
}

/// Gradient of the DenseNEst risk.
#[derive(Debug, Clone)]
pub struct GradDenseNEst {
    pub d_w_out: Matrix,
    /// Present iff phi (the dense functions) was included.
    pub d_blocks: Option<Vec<BlockGrad>>,
}

/// Gradient of the prediction-weight problem at `(w_l, w_out)` with phi
/// frozen: `d w_l = W_{L+1}^T G V_L^T`, `d w_out = G x_L^T`. For the squared
/// loss these are exactly `(2/N) W_{L+1}^T (Yhat - Y) V_L^T` and
/// `(2/N)(Yhat - Y) x_L^T`.
pub fn grad_pphi(
    w_l: &Matrix,
    w_out: &Matrix,
    features: &FeatureMatrices,
    data: &Dataset,
    loss: Loss,
) -> Result<(Matrix, Matrix)> {
    let v_l = features.v_last();
    if w_l.cols() != v_l.rows() || w_out.cols() != w_l.rows() {
        return Err(Error::shape(
            "grad_pphi",
            format!(
                "w_l {}x{}, w_out {}x{}, V_L rows {}",
                w_l.rows(),
                w_l.cols(),
                w_out.rows(),
                w_out.cols(),
                v_l.rows()
            ),
        ));
    }
    let rep = prediction_representation(w_l, features);
    let y_hat = w_out.matmul(&rep);
    let g = grad_matrix(loss, &y_hat, &data.y)?;
    let d_w_l = w_out.matmul_tn(&g).matmul_nt(v_l);
    let d_w_out = g.matmul_nt(&rep);
    Ok((d_w_l, d_w_out))
}

/// `x_L` stack for a candidate `W_L` over frozen features:
/// `sum_{i<L} W_i V_i + W_L V_L`.
pub fn prediction_representation(w_l: &Matrix, features: &FeatureMatrices) -> Matrix {
    let last = w_l.matmul(features.v_last());
    match features.phi_prefix_rep() {
        Some(c) => c.add(&last),
        None => last,
    }
}

struct BlockCache {
    /// pre-activations `weight_in * x_{i-1}`
    z: Matrix,
    /// activations `act(z)`
    a: Matrix,
}

fn block_forward(b: &BlockFn, x: &Matrix) -> (Matrix, BlockCache) {
    let z = b.weight_in.matmul(x);
    let a = Matrix::from_fn(z.rows(), z.cols(), |i, j| b.activation.apply(z.get(i, j)));
    let v = b.weight_out.matmul(&a);
    (v, BlockCache { z, a })
}

/// `dZ = (weight_out^T dV) .* act'(z)`; returns `(dZ, block grads)`.
fn block_backward(b: &BlockFn, cache: &BlockCache, x_prev: &Matrix, d_v: &Matrix) -> (Matrix, BlockGrad) {
    let d_a = b.weight_out.matmul_tn(d_v);
    let d_z = Matrix::from_fn(d_a.rows(), d_a.cols(), |i, j| {
        d_a.get(i, j) * b.activation.derivative(cache.z.get(i, j))
    });
    let grad = BlockGrad {
        d_weight_in: d_z.matmul_nt(x_prev),
        d_weight_out: d_v.matmul_nt(&cache.a),
    };
    (d_z, grad)
}

/// Full-model ResNEst gradient by reverse accumulation through the residual
/// recursion. The `(W_L, W_{L+1})` sub-blocks agree with [`grad_pphi`].
pub fn grad_full_resnest(
    params: &ResNEstParams,
    data: &Dataset,
    loss: Loss,
) -> Result<GradResNEst> {
    params.validate()?;
    data.validate_for(loss)?;
    if data.n_in() != params.n_in() {
        return Err(Error::shape("grad_full_resnest", "input dim"));
    }
    let l = params.l();

    // forward with caches
    let mut xs = Vec::with_capacity(l + 1); // x_0..x_L
    let mut vs = Vec::with_capacity(l); // v_1..v_L
    let mut caches = Vec::with_capacity(l);
    let mut x = params.w0.matmul(&data.x);
    for i in 0..l {
        let (v, cache) = block_forward(&params.blocks[i], &x);
        let next = x.add(&params.w[i].matmul(&v));
        xs.push(std::mem::replace(&mut x, next));
        vs.push(v);
        caches.push(cache);
    }
    xs.push(x);
    let y_hat = params.w_out.matmul(xs.last().unwrap());
    let g = grad_matrix(loss, &y_hat, &data.y)?;

    // backward
    let d_w_out = g.matmul_nt(xs.last().unwrap());
    let mut u = params.w_out.matmul_tn(&g); // dR/dx_i, starting at i = L
    let mut d_w: Vec<Matrix> = Vec::with_capacity(l);
    let mut d_blocks: Vec<BlockGrad> = Vec::with_capacity(l);
    for i in (0..l).rev() {
        d_w.push(u.matmul_nt(&vs[i]));
        let d_v = params.w[i].matmul_tn(&u);
        let (d_z, grad) = block_backward(&params.blocks[i], &caches[i], &xs[i], &d_v);
        d_blocks.push(grad);
        u = u.add(&params.blocks[i].weight_in.matmul_tn(&d_z));
    }
    d_w.reverse();
    d_blocks.reverse();
    let d_w0 = u.matmul_nt(&data.x);
    Ok(GradResNEst {
        d_w0,
        d_w,
        d_w_out,
        d_blocks,
    })
}

/// A-ResNEst gradient. With `include_phi = false` only the head gradients
/// `dH_i = (1/N) sum_n g_a(x^n) v_i(x^n)^T` are returned.
pub fn grad_aresnest(
    params: &AResNEstParams,
    data: &Dataset,
    loss: Loss,
    include_phi: bool,
) -> Result<GradAResNEst> {
    params.validate()?;
    data.validate_for(loss)?;
    let l = params.l();

    // forward with caches; x_i is computed only up to i = L-1
    let mut xs = Vec::with_capacity(l); // x_0..x_{L-1}
    let mut vs: Vec<Matrix> = Vec::with_capacity(l + 1);
    let mut caches = Vec::with_capacity(l);
    vs.push(data.x.clone());
    if l > 0 {
        let mut x = params.phi.w[0].matmul(&data.x);
        for i in 1..=l {
            let (v, cache) = block_forward(&params.phi.blocks[i - 1], &x);
            if i < l {
                let next = x.add(&params.phi.w[i].matmul(&v));
                xs.push(std::mem::replace(&mut x, next));
            } else {
                xs.push(x.clone());
            }
            vs.push(v);
            caches.push(cache);
        }
    }

    let n_out = params.n_out();
    let n = data.n_samples();
    let mut y_hat = Matrix::zeros(n_out, n);
    for (hi, vi) in params.h.iter().zip(&vs) {
        y_hat = y_hat.add(&hi.matmul(vi));
    }
    let g = grad_matrix(loss, &y_hat, &data.y)?;

    let d_h: Vec<Matrix> = vs.iter().map(|vi| g.matmul_nt(vi)).collect();
    if !include_phi || l == 0 {
        return Ok(GradAResNEst {
            d_h,
            d_phi: if include_phi { Some(GradPhi { d_w: vec![], d_blocks: vec![] }) } else { None },
        });
    }

    // phi backward: the head paths inject H_i^T g at every feature
    let mut d_blocks: Vec<BlockGrad> = Vec::with_capacity(l);
    let mut d_w: Vec<Matrix> = Vec::with_capacity(l);

    // block L first: its input x_{L-1} receives no skip gradient from above
    let d_v_l = params.h[l].matmul_tn(&g);
    let (d_z, grad_l) = block_backward(&params.phi.blocks[l - 1], &caches[l - 1], &xs[l - 1], &d_v_l);
    d_blocks.push(grad_l);
    let mut u = params.phi.blocks[l - 1].weight_in.matmul_tn(&d_z); // dR/dx_{L-1}

    for i in (1..l).rev() {
        d_w.push(u.matmul_nt(&vs[i]));
        let d_v = params.h[i].matmul_tn(&g).add(&params.phi.w[i].matmul_tn(&u));
        let (d_z, grad) = block_backward(&params.phi.blocks[i - 1], &caches[i - 1], &xs[i - 1], &d_v);
        d_blocks.push(grad);
        u = u.add(&params.phi.blocks[i - 1].weight_in.matmul_tn(&d_z));
    }
    d_w.push(u.matmul_nt(&data.x)); // d W_0
    d_w.reverse();
    d_blocks.reverse();

    Ok(GradAResNEst {
        d_h,
        d_phi: Some(GradPhi { d_w, d_blocks }),
    })
}

/// DenseNEst gradient. With `include_phi = false` only
/// `d W_{L+1} = (1/N) sum_n g(x^n) x_L(x^n)^T` is returned.
pub fn grad_densenest(
    params: &DenseNEstParams,
    data: &Dataset,
    loss: Loss,
    include_phi: bool,
) -> Result<GradDenseNEst> {
    params.validate()?;
    data.validate_for(loss)?;
    if data.n_in() != params.n_in {
        return Err(Error::shape("grad_densenest", "input dim"));
    }
    let l = params.l();

    let mut xs = Vec::with_capacity(l + 1); // x_0..x_L (growing dims)
    let mut caches = Vec::with_capacity(l);
    let mut x = data.x.clone();
    xs.push(x.clone());
    for i in 0..l {
        let (v, cache) = block_forward(&params.blocks[i], &x);
        x = Matrix::vstack(&[&x, &v]);
        xs.push(x.clone());
        caches.push(cache);
    }
    let y_hat = params.w_out.matmul(&x);
    let g = grad_matrix(loss, &y_hat, &data.y)?;
    let d_w_out = g.matmul_nt(&x);
    if !include_phi {
        return Ok(GradDenseNEst {
            d_w_out,
            d_blocks: None,
        });
    }

    let mut d_blocks: Vec<BlockGrad> = Vec::with_capacity(l);
    let mut dx = params.w_out.matmul_tn(&g); // dR/dx_L
    let n = data.n_samples();
    for i in (0..l).rev() {
        let m_prev = xs[i].rows();
        let d_i = params.blocks[i].out_dim();
        let d_v = dx.block(m_prev, 0, d_i, n);
        let (d_z, grad) = block_backward(&params.blocks[i], &caches[i], &xs[i], &d_v);
        d_blocks.push(grad);
        dx = dx
            .block(0, 0, m_prev, n)
            .add(&params.blocks[i].weight_in.matmul_tn(&d_z));
    }
    d_blocks.reverse();
    Ok(GradDenseNEst {
        d_w_out,
        d_blocks: Some(d_blocks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_aresnest, init_densenest, init_resnest, resnest_forward, Activation, DenseNEstConfig, ResNEstConfig};

    fn tiny_config() -> ResNEstConfig {
        ResNEstConfig {
            n_in: 2,
            m: 4,
            n_out: 2,
            l: 2,
            k: vec![2, 2],
            hidden: vec![3, 3],
            activation: Activation::Tanh,
        }
    }

    fn pseudo(rows: usize, cols: usize, salt: u64) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| {
            ((i * 37 + j * 11 + i * j * 5) as f64 * 0.71 + salt as f64 * 1.17).sin()
        })
    }

    #[test]
    fn exact_fit_gradient_is_zero() {
        let p = init_resnest(&tiny_config(), 3, 1.0).unwrap();
        let x = pseudo(2, 6, 0);
        let (y, _) = resnest_forward(&p, &x).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let g = grad_full_resnest(&p, &data, Loss::Squared).unwrap();
        assert!(g.norm() < 1e-12);
        let (dl, dout) = grad_pphi(
            p.prediction_w_l(),
            &p.w_out,
            &resnest_forward(&p, &data.x).unwrap().1,
            &data,
            Loss::Squared,
        )
        .unwrap();
        assert!(dl.max_abs() < 1e-12 && dout.max_abs() < 1e-12);
    }

    #[test]
    fn zero_w_out_annihilates_d_w_l() {
        let p = init_resnest(&tiny_config(), 4, 1.0).unwrap();
        let x = pseudo(2, 5, 1);
        let y = pseudo(2, 5, 2);
        let data = Dataset::new(x, y).unwrap();
        let (_, f) = resnest_forward(&p, &data.x).unwrap();
        let zero_out = Matrix::zeros(2, 4);
        let (dl, _) = grad_pphi(p.prediction_w_l(), &zero_out, &f, &data, Loss::Squared).unwrap();
        assert_eq!(dl.max_abs(), 0.0);
    }

    #[test]
    fn pphi_slices_agree_with_full_gradient() {
        let p = init_resnest(&tiny_config(), 5, 1.0).unwrap();
        let x = pseudo(2, 6, 3);
        let y = pseudo(2, 6, 4);
        let data = Dataset::new(x, y).unwrap();
        let (_, f) = resnest_forward(&p, &data.x).unwrap();
        let (dl, dout) = grad_pphi(p.prediction_w_l(), &p.w_out, &f, &data, Loss::Squared).unwrap();
        let full = grad_full_resnest(&p, &data, Loss::Squared).unwrap();
        assert!(full.d_w.last().unwrap().sub(&dl).max_abs() <= 1e-12);
        assert!(full.d_w_out.sub(&dout).max_abs() <= 1e-12);
    }

    // central finite differences over a single matrix entry of a closure
    fn fd_entry(f: &mut dyn FnMut(&Matrix) -> f64, at: &Matrix, i: usize, j: usize, h: f64) -> f64 {
        let mut plus = at.clone();
        plus.set(i, j, at.get(i, j) + h);
        let mut minus = at.clone();
        minus.set(i, j, at.get(i, j) - h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn assert_fd_matches(analytic: &Matrix, f: &mut dyn FnMut(&Matrix) -> f64, at: &Matrix, tol: f64) {
        let h = 1e-5;
        for i in 0..at.rows() {
            for j in 0..at.cols() {
                let fd = fd_entry(f, at, i, j, h);
                let a = analytic.get(i, j);
                assert!(
                    (fd - a).abs() <= tol * (1.0 + a.abs().max(fd.abs())),
                    "entry ({i},{j}): fd {fd} vs analytic {a}"
                );
            }
        }
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let p = init_resnest(&tiny_config(), 6, 1.1).unwrap();
        let x = pseudo(2, 6, 5);
        let y = pseudo(2, 6, 6);
        let data = Dataset::new(x, y).unwrap();
        let g = grad_full_resnest(&p, &data, Loss::Squared).unwrap();

        let risk_at = |q: &ResNEstParams| crate::risk::risk_resnest(q, &data, Loss::Squared).unwrap();

        assert_fd_matches(
            &g.d_w0,
            &mut |m| {
                let mut q = p.clone();
                q.w0 = m.clone();
                risk_at(&q)
            },
            &p.w0,
            1e-6,
        );
        assert_fd_matches(
            &g.d_w_out,
            &mut |m| {
                let mut q = p.clone();
                q.w_out = m.clone();
                risk_at(&q)
            },
            &p.w_out,
            1e-6,
        );
        for bi in 0..2 {
            assert_fd_matches(
                &g.d_blocks[bi].d_weight_in,
                &mut |m| {
                    let mut q = p.clone();
                    q.blocks[bi].weight_in = m.clone();
                    risk_at(&q)
                },
                &p.blocks[bi].weight_in,
                1e-6,
            );
            assert_fd_matches(
                &g.d_w[bi],
                &mut |m| {
                    let mut q = p.clone();
                    q.w[bi] = m.clone();
                    risk_at(&q)
                },
                &p.w[bi],
                1e-6,
            );
        }
    }

    #[test]
    fn aresnest_gradient_matches_finite_differences() {
        let a = init_aresnest(&tiny_config(), 7, 1.0).unwrap();
        let x = pseudo(2, 5, 7);
        let y = pseudo(2, 5, 8);
        let data = Dataset::new(x.clone(), y).unwrap();
        let g = grad_aresnest(&a, &data, Loss::Squared, true).unwrap();
        let phi_g = g.d_phi.as_ref().unwrap();

        let risk_at = |q: &AResNEstParams| {
            let f = q.phi.features(&data.x).unwrap();
            crate::risk::risk_aresnest(&q.h, &f, &data, Loss::Squared).unwrap()
        };

        for hi in 0..3 {
            assert_fd_matches(
                &g.d_h[hi],
                &mut |m| {
                    let mut q = a.clone();
                    q.h[hi] = m.clone();
                    risk_at(&q)
                },
                &a.h[hi],
                1e-6,
            );
        }
        for wi in 0..2 {
            assert_fd_matches(
                &phi_g.d_w[wi],
                &mut |m| {
                    let mut q = a.clone();
                    q.phi.w[wi] = m.clone();
                    risk_at(&q)
                },
                &a.phi.w[wi],
                1e-6,
            );
        }
        for bi in 0..2 {
            assert_fd_matches(
                &phi_g.d_blocks[bi].d_weight_out,
                &mut |m| {
                    let mut q = a.clone();
                    q.phi.blocks[bi].weight_out = m.clone();
                    risk_at(&q)
                },
                &a.phi.blocks[bi].weight_out,
                1e-6,
            );
        }
    }

    #[test]
    fn densenest_gradient_matches_finite_differences() {
        let c = DenseNEstConfig {
            n_in: 2,
            n_out: 2,
            l: 2,
            d: vec![2, 3],
            hidden: vec![3, 3],
            activation: Activation::Tanh,
        };
        let p = init_densenest(&c, 8, 1.0).unwrap();
        let x = pseudo(2, 5, 9);
        let y = pseudo(2, 5, 10);
        let data = Dataset::new(x, y).unwrap();
        let g = grad_densenest(&p, &data, Loss::Squared, true).unwrap();
        let blocks = g.d_blocks.as_ref().unwrap();

        let risk_at = |q: &DenseNEstParams| crate::risk::risk_densenest(q, &data, Loss::Squared).unwrap();

        assert_fd_matches(
            &g.d_w_out,
            &mut |m| {
                let mut q = p.clone();
                q.w_out = m.clone();
                risk_at(&q)
            },
            &p.w_out,
            1e-6,
        );
        for bi in 0..2 {
            assert_fd_matches(
                &blocks[bi].d_weight_in,
                &mut |m| {
                    let mut q = p.clone();
                    q.blocks[bi].weight_in = m.clone();
                    risk_at(&q)
                },
                &p.blocks[bi].weight_in,
                1e-6,
            );
        }
    }

    #[test]
    fn head_gradient_linear_in_residual() {
        let a = init_aresnest(&tiny_config(), 9, 1.0).unwrap();
        let x = pseudo(2, 6, 11);
        let f = a.phi.features(&x).unwrap();
        let y_hat = crate::models::aresnest_output(&a.h, &f).unwrap();
        let y = pseudo(2, 6, 12);

        let data1 = Dataset::new(x.clone(), y.clone()).unwrap();
        // targets moved to double the residual y_hat - y
        let y2 = y_hat.scale(-1.0).add(&y.scale(2.0)).scale(1.0); // 2y - y_hat
        let data2 = Dataset::new(x, y2).unwrap();

        let g1 = grad_aresnest(&a, &data1, Loss::Squared, false).unwrap();
        let g2 = grad_aresnest(&a, &data2, Loss::Squared, false).unwrap();
        for (d1, d2) in g1.d_h.iter().zip(&g2.d_h) {
            assert!(d2.sub(&d1.scale(2.0)).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn densenest_w_out_gradient_loop_oracle() {
        let c = DenseNEstConfig {
            n_in: 2,
            n_out: 2,
            l: 1,
            d: vec![2],
            hidden: vec![3],
            activation: Activation::Tanh,
        };
        let p = init_densenest(&c, 10, 1.0).unwrap();
        let x = pseudo(2, 4, 13);
        let y = pseudo(2, 4, 14);
        let data = Dataset::new(x, y).unwrap();
        let g = grad_densenest(&p, &data, Loss::Squared, false).unwrap();

        let (y_hat, f) = crate::models::densenest_forward(&p, &data.x).unwrap();
        let x_l = f.x_res.last().unwrap();
        let mut manual = Matrix::zeros(2, x_l.rows());
        for n in 0..4 {
            for r in 0..2 {
                let gr = 2.0 * (y_hat.get(r, n) - data.y.get(r, n)) / 4.0;
                for cidx in 0..x_l.rows() {
                    manual.set(r, cidx, manual.get(r, cidx) + gr * x_l.get(cidx, n));
                }
            }
        }
        assert!(g.d_w_out.sub(&manual).max_abs() < 1e-12);
    }
}
