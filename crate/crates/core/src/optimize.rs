//! Solvers and critical-point analysis.
//!
//! The convex problems (heads over frozen features, the linear baseline,
//! the DenseNEst prediction matrix) get closed-form least-squares solves
//! under the squared loss. Everything else runs full-batch gradient descent
//! or SGD with Nesterov momentum over a packed parameter vector; convergence
//! means the full-batch gradient norm dropped below `grad_tol`.

use serde::{Deserialize, Serialize};

use crate::backprop::{self, prediction_representation};
use crate::error::{Error, Result};
use crate::hessian::{assemble_hessian, curvature_probe, CurvatureClass};
use crate::linalg::{lstsq, pinv, rank, Matrix};
use crate::models::{
    densenest_forward, AResNEstParams, DenseNEstParams, FeatureMatrices,
    FeatureWeights, ResNEstParams,
};
use crate::risk::{grad_matrix, mean_loss, Dataset, Loss};
use crate::rng;

/// Which empirical risk is being minimized, and over which weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// ResNEst prediction weights `(W_L, W_{L+1})`, phi frozen.
    PPhi,
    /// All ResNEst weights.
    PFull,
    /// A-ResNEst heads `H_0..H_L`, phi frozen (the convex problem).
    Pa,
    /// DenseNEst prediction matrix `W_{L+1}`, dense functions frozen.
    PdPhi,
    /// All DenseNEst weights.
    PdFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Full-batch steepest descent (momentum ignored). Traced risks must be
    /// non-increasing; a violation aborts with a lower-the-lr diagnostic.
    Gd,
    /// Nesterov momentum: `v <- mu v - lr grad(x + mu v); x <- x + v`.
    /// Runs full batch unless `batch_size` selects minibatches.
    SgdNesterov,
}

/// Stepwise learning-rate decay: multiply by `factor` at each listed
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub at_iters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    /// 0 (or >= N) means full batch.
    #[serde(default)]
    pub batch_size: usize,
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<LrDecay>,
}

fn default_grad_tol() -> f64 {
    1e-8
}

fn default_trace_every() -> usize {
    100
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Input("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Input("momentum must lie in [0, 1)".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Input("grad_tol must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Input("trace_every must be >= 1".into()));
        }
        if let Some(d) = &self.lr_decay {
            if !(d.factor > 0.0 && d.factor.is_finite()) {
                return Err(Error::Input("lr decay factor must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Parameters of whichever family was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    Resnest(ResNEstParams),
    Aresnest(AResNEstParams),
    Densenest(DenseNEstParams),
}

impl ModelParams {
    pub fn as_resnest(&self) -> Option<&ResNEstParams> {
        match self {
            ModelParams::Resnest(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_aresnest(&self) -> Option<&AResNEstParams> {
        match self {
            ModelParams::Aresnest(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_densenest(&self) -> Option<&DenseNEstParams> {
        match self {
            ModelParams::Densenest(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub final_params: ModelParams,
    pub final_risk: f64,
    /// Full-batch gradient norm at the final parameters.
    pub grad_norm: f64,
    /// `(iteration, full-batch risk)` samples.
    pub trace: Vec<(usize, f64)>,
    /// True iff `grad_norm <= grad_tol`.
    pub converged: bool,
    pub iters: usize,
}

const DIVERGENCE_RISK: f64 = 1e12;

// ── Closed-form solves ──────────────────────────────────────────────

/// Global minimum of the head problem under the squared loss: stack the
/// features into `Vtilde = [V_0; ..; V_L]` and solve `min ||H Vtilde - Y||`
/// by pseudoinverse (minimum-norm on rank-deficient stacks). Returns the
/// split heads and the achieved risk.
pub fn solve_pa_closed_form(
    features: &FeatureMatrices,
    data: &Dataset,
) -> Result<(Vec<Matrix>, f64)> {
    let stacks: Vec<&Matrix> = features.v.iter().collect();
    let vtilde = Matrix::vstack(&stacks);
    if vtilde.cols() != data.n_samples() {
        return Err(Error::shape("solve_pa_closed_form", "sample count"));
    }
    let h_stacked = data.y.matmul(&pinv(&vtilde, None));
    let mut h = Vec::with_capacity(features.v.len());
    let mut at = 0;
    for vi in &features.v {
        h.push(h_stacked.block(0, at, data.n_out(), vi.rows()));
        at += vi.rows();
    }
    let risk = crate::risk::risk_aresnest(&h, features, data, Loss::Squared)?;
    Ok((h, risk))
}

/// Global minimum of the DenseNEst prediction problem under the squared
/// loss: least squares of `Y` on the final concatenated representation.
pub fn solve_pd_closed_form(params: &DenseNEstParams, data: &Dataset) -> Result<(Matrix, f64)> {
    let (_, features) = densenest_forward(params, &data.x)?;
    let x_l = features.x_res.last().unwrap();
    let w = data.y.matmul(&pinv(x_l, None));
    let risk = mean_loss(Loss::Squared, &w.matmul(x_l), &data.y)?;
    Ok((w, risk))
}

/// Best linear predictor `min_A (1/N) sum l(A x^n, y^n)`. Squared loss is
/// the closed form `A = Y pinv(X)`; cross-entropy runs Nesterov descent on
/// the (convex) objective to gradient norm 1e-9.
pub fn best_linear_predictor(data: &Dataset, loss: Loss) -> Result<(Matrix, f64)> {
    data.validate_for(loss)?;
    match loss {
        Loss::Squared => {
            let a = lstsq(&data.x.transpose(), &data.y.transpose())?.transpose();
            let risk = mean_loss(loss, &a.matmul(&data.x), &data.y)?;
            Ok((a, risk))
        }
        Loss::CrossEntropy => {
            let a0 = Matrix::zeros(data.n_out(), data.n_in());
            linear_cross_entropy_solve(&a0, data)
        }
    }
}

/// Nesterov descent for the linear cross-entropy model from a given start.
/// The learning rate comes from the smoothness bound of softmax composed
/// with the data Gram.
pub fn linear_cross_entropy_solve(init: &Matrix, data: &Dataset) -> Result<(Matrix, f64)> {
    let n = data.n_samples() as f64;
    let lr = n / (data.x.frobenius_norm().powi(2) + 1e-12);
    let mu = 0.9;
    let mut a = init.clone();
    let mut vel = Matrix::zeros(a.rows(), a.cols());
    for _ in 0..200_000 {
        let g_here = grad_matrix(Loss::CrossEntropy, &a.matmul(&data.x), &data.y)?
            .matmul_nt(&data.x);
        if g_here.frobenius_norm() <= 1e-9 {
            break;
        }
        let mut look = a.clone();
        look.axpy(mu, &vel);
        let g = grad_matrix(Loss::CrossEntropy, &look.matmul(&data.x), &data.y)?
            .matmul_nt(&data.x);
        vel = vel.scale(mu);
        vel.axpy(-lr, &g);
        a.axpy(1.0, &vel);
    }
    let risk = mean_loss(Loss::CrossEntropy, &a.matmul(&data.x), &data.y)?;
    Ok((a, risk))
}

// ── Iterative training ──────────────────────────────────────────────

/// Packed view of one training problem: parameters flattened row-major in a
/// fixed documented order, with risk/gradient evaluation over the full batch
/// or a column subset.
enum Target {
    PPhi {
        base: ResNEstParams,
        features: FeatureMatrices,
    },
    PFull {
        base: ResNEstParams,
    },
    Pa {
        base: AResNEstParams,
        features: FeatureMatrices,
    },
    PdPhi {
        base: DenseNEstParams,
        x_l: Matrix,
    },
    PdFull {
        base: DenseNEstParams,
    },
}

fn pack_matrices(ms: &[&Matrix]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ms.iter().map(|m| m.data().len()).sum());
    for m in ms {
        out.extend_from_slice(m.data());
    }
    out
}

fn take_matrix(theta: &[f64], at: &mut usize, rows: usize, cols: usize) -> Matrix {
    let len = rows * cols;
    let m = Matrix::from_raw(rows, cols, theta[*at..*at + len].to_vec());
    *at += len;
    m
}

impl Target {
    fn pack(&self) -> Vec<f64> {
        match self {
            Target::PPhi { base, .. } => pack_matrices(&[base.prediction_w_l(), &base.w_out]),
            Target::PFull { base } => {
                let mut ms: Vec<&Matrix> = vec![&base.w0];
                for (wi, b) in base.w.iter().zip(&base.blocks) {
                    ms.push(wi);
                    ms.push(&b.weight_in);
                    ms.push(&b.weight_out);
                }
                ms.push(&base.w_out);
                pack_matrices(&ms)
            }
            Target::Pa { base, .. } => pack_matrices(&base.h.iter().collect::<Vec<_>>()),
            Target::PdPhi { base, .. } => pack_matrices(&[&base.w_out]),
            Target::PdFull { base } => {
                let mut ms: Vec<&Matrix> = Vec::new();
                for b in &base.blocks {
                    ms.push(&b.weight_in);
                    ms.push(&b.weight_out);
                }
                ms.push(&base.w_out);
                pack_matrices(&ms)
            }
        }
    }

    fn rebuild(&self, theta: &[f64]) -> ModelParams {
        let mut at = 0;
        match self {
            Target::PPhi { base, .. } => {
                let mut p = base.clone();
                let w_l = take_matrix(
                    theta,
                    &mut at,
                    base.prediction_w_l().rows(),
                    base.prediction_w_l().cols(),
                );
                p.set_prediction_w_l(w_l);
                p.w_out = take_matrix(theta, &mut at, base.w_out.rows(), base.w_out.cols());
                ModelParams::Resnest(p)
            }
            Target::PFull { base } => {
                let mut p = base.clone();
                p.w0 = take_matrix(theta, &mut at, base.w0.rows(), base.w0.cols());
                for i in 0..base.l() {
                    p.w[i] = take_matrix(theta, &mut at, base.w[i].rows(), base.w[i].cols());
                    p.blocks[i].weight_in = take_matrix(
                        theta,
                        &mut at,
                        base.blocks[i].weight_in.rows(),
                        base.blocks[i].weight_in.cols(),
                    );
                    p.blocks[i].weight_out = take_matrix(
                        theta,
                        &mut at,
                        base.blocks[i].weight_out.rows(),
                        base.blocks[i].weight_out.cols(),
                    );
                }
                p.w_out = take_matrix(theta, &mut at, base.w_out.rows(), base.w_out.cols());
                ModelParams::Resnest(p)
            }
            Target::Pa { base, .. } => {
                let mut p = base.clone();
                for h in &mut p.h {
                    *h = take_matrix(theta, &mut at, h.rows(), h.cols());
                }
                ModelParams::Aresnest(p)
            }
            Target::PdPhi { base, .. } | Target::PdFull { base } => {
                let mut p = base.clone();
                if matches!(self, Target::PdFull { .. }) {
                    for b in &mut p.blocks {
                        b.weight_in =
                            take_matrix(theta, &mut at, b.weight_in.rows(), b.weight_in.cols());
                        b.weight_out =
                            take_matrix(theta, &mut at, b.weight_out.rows(), b.weight_out.cols());
                    }
                }
                p.w_out = take_matrix(theta, &mut at, base.w_out.rows(), base.w_out.cols());
                ModelParams::Densenest(p)
            }
        }
    }

    /// Risk and gradient at `theta`, over the full dataset or a column
    /// subset.
    fn eval(
        &self,
        theta: &[f64],
        data: &Dataset,
        loss: Loss,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Target::PPhi { base, features } => {
                let mut at = 0;
                let w_l = take_matrix(
                    theta,
                    &mut at,
                    base.prediction_w_l().rows(),
                    base.prediction_w_l().cols(),
                );
                let w_out = take_matrix(theta, &mut at, base.w_out.rows(), base.w_out.cols());
                let v_l = features.v_last();
                let (rep, v_l_b, y) = match batch {
                    None => (
                        prediction_representation(&w_l, features),
                        v_l.clone(),
                        data.y.clone(),
                    ),
                    Some(idx) => {
                        let v_sub = v_l.select_columns(idx);
                        let mut rep = w_l.matmul(&v_sub);
                        if let Some(c) = features.phi_prefix_rep() {
                            rep = rep.add(&c.select_columns(idx));
                        }
                        (rep, v_sub, data.y.select_columns(idx))
                    }
                };
                let y_hat = w_out.matmul(&rep);
                let risk = mean_loss(loss, &y_hat, &y)?;
                let g = grad_matrix(loss, &y_hat, &y)?;
                let d_w_l = w_out.matmul_tn(&g).matmul_nt(&v_l_b);
                let d_w_out = g.matmul_nt(&rep);
                Ok((risk, pack_matrices(&[&d_w_l, &d_w_out])))
            }
            Target::PFull { .. } => {
                let ModelParams::Resnest(p) = self.rebuild(theta) else {
                    unreachable!()
                };
                let sub;
                let d = match batch {
                    None => data,
                    Some(idx) => {
                        sub = data.select_columns(idx);
                        &sub
                    }
                };
                let risk = crate::risk::risk_resnest(&p, d, loss)?;
                let g = backprop::grad_full_resnest(&p, d, loss)?;
                let mut ms: Vec<&Matrix> = vec![&g.d_w0];
                for (wi, b) in g.d_w.iter().zip(&g.d_blocks) {
                    ms.push(wi);
                    ms.push(&b.d_weight_in);
                    ms.push(&b.d_weight_out);
                }
                ms.push(&g.d_w_out);
                Ok((risk, pack_matrices(&ms)))
            }
            Target::Pa { base, features } => {
                let mut at = 0;
                let h: Vec<Matrix> = base
                    .h
                    .iter()
                    .map(|hi| take_matrix(theta, &mut at, hi.rows(), hi.cols()))
                    .collect();
                let (vs, y): (Vec<Matrix>, Matrix) = match batch {
                    None => (features.v.clone(), data.y.clone()),
                    Some(idx) => (
                        features.v.iter().map(|vi| vi.select_columns(idx)).collect(),
                        data.y.select_columns(idx),
                    ),
                };
                let n_out = base.n_out();
                let mut y_hat = Matrix::zeros(n_out, y.cols());
                for (hi, vi) in h.iter().zip(&vs) {
                    y_hat = y_hat.add(&hi.matmul(vi));
                }
                let risk = mean_loss(loss, &y_hat, &y)?;
                let g = grad_matrix(loss, &y_hat, &y)?;
                let grads: Vec<Matrix> = vs.iter().map(|vi| g.matmul_nt(vi)).collect();
                Ok((risk, pack_matrices(&grads.iter().collect::<Vec<_>>())))
            }
            Target::PdPhi { base, x_l } => {
                let mut at = 0;
                let w = take_matrix(theta, &mut at, base.w_out.rows(), base.w_out.cols());
                let (rep, y) = match batch {
                    None => (x_l.clone(), data.y.clone()),
                    Some(idx) => (x_l.select_columns(idx), data.y.select_columns(idx)),
                };
                let y_hat = w.matmul(&rep);
                let risk = mean_loss(loss, &y_hat, &y)?;
                let g = grad_matrix(loss, &y_hat, &y)?;
                Ok((risk, pack_matrices(&[&g.matmul_nt(&rep)])))
            }
            Target::PdFull { .. } => {
                let ModelParams::Densenest(p) = self.rebuild(theta) else {
                    unreachable!()
                };
                let sub;
                let d = match batch {
                    None => data,
                    Some(idx) => {
                        sub = data.select_columns(idx);
                        &sub
                    }
                };
                let risk = crate::risk::risk_densenest(&p, d, loss)?;
                let g = backprop::grad_densenest(&p, d, loss, true)?;
                let blocks = g.d_blocks.as_ref().unwrap();
                let mut ms: Vec<&Matrix> = Vec::new();
                for b in blocks {
                    ms.push(&b.d_weight_in);
                    ms.push(&b.d_weight_out);
                }
                ms.push(&g.d_w_out);
                Ok((risk, pack_matrices(&ms)))
            }
        }
    }
}

fn build_target(problem: Problem, init: ModelParams, data: &Dataset) -> Result<Target> {
    match (problem, init) {
        (Problem::PPhi, ModelParams::Resnest(p)) => {
            p.validate()?;
            let features = p.phi().features(&data.x)?;
            Ok(Target::PPhi { base: p, features })
        }
        (Problem::PFull, ModelParams::Resnest(p)) => {
            p.validate()?;
            Ok(Target::PFull { base: p })
        }
        (Problem::Pa, ModelParams::Aresnest(p)) => {
            p.validate()?;
            let features = p.phi.features(&data.x)?;
            Ok(Target::Pa { base: p, features })
        }
        (Problem::PdPhi, ModelParams::Densenest(p)) => {
            p.validate()?;
            let (_, f) = densenest_forward(&p, &data.x)?;
            let x_l = f.x_res.last().unwrap().clone();
            Ok(Target::PdPhi { base: p, x_l })
        }
        (Problem::PdFull, ModelParams::Densenest(p)) => {
            p.validate()?;
            Ok(Target::PdFull { base: p })
        }
        (problem, init) => Err(Error::Input(format!(
            "problem {problem:?} does not match the supplied {} parameters",
            match init {
                ModelParams::Resnest(_) => "ResNEst",
                ModelParams::Aresnest(_) => "A-ResNEst",
                ModelParams::Densenest(_) => "DenseNEst",
            }
        ))),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(iter: usize, risk: f64, grad: &[f64]) -> Result<()> {
    if !risk.is_finite() || risk > DIVERGENCE_RISK || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { iter, risk });
    }
    Ok(())
}

/// Trains `problem` from `init` with the given schedule. Deterministic given
/// `(init, schedule, seed)`: the only randomness is the minibatch shuffle
/// stream. Frozen weights are carried through bitwise untouched.
pub fn train(
    problem: Problem,
    init: ModelParams,
    data: &Dataset,
    loss: Loss,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainResult> {
    schedule.validate()?;
    data.validate_for(loss)?;
    let target = build_target(problem, init, data)?;
    let mut theta = target.pack();
    let dim = theta.len();
    let n = data.n_samples();
    let minibatch = schedule.optimizer == OptimizerKind::SgdNesterov
        && schedule.batch_size > 0
        && schedule.batch_size < n;

    let mut lr = schedule.lr;
    let mut velocity = vec![0.0; dim];
    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut shuffle_rng = rng::stream(seed, "train/shuffle");

    let (risk0, grad0) = target.eval(&theta, data, loss, None)?;
    check_finite(0, risk0, &grad0)?;
    trace.push((0, risk0));
    let mut last_risk = risk0;
    let mut last_grad_norm = norm(&grad0);
    let mut iters_done = 0;
    let mut converged = last_grad_norm <= schedule.grad_tol;

    if !converged {
        if minibatch {
            let mut order: Vec<usize> = (0..n).collect();
            'epochs: loop {
                // Fisher-Yates with the run stream
                for i in (1..n).rev() {
                    let j = rand::Rng::gen_range(&mut shuffle_rng, 0..=i);
                    order.swap(i, j);
                }
                for chunk in order.chunks(schedule.batch_size) {
                    iters_done += 1;
                    if let Some(decay) = &schedule.lr_decay {
                        if decay.at_iters.contains(&iters_done) {
                            lr *= decay.factor;
                        }
                    }
                    let look: Vec<f64> = theta
                        .iter()
                        .zip(&velocity)
                        .map(|(t, v)| t + schedule.momentum * v)
                        .collect();
                    let (_, g) = target.eval(&look, data, loss, Some(chunk))?;
                    for ((v, g), t) in velocity.iter_mut().zip(&g).zip(theta.iter_mut()) {
                        *v = schedule.momentum * *v - lr * g;
                        *t += *v;
                    }
                    if iters_done >= schedule.max_iters {
                        break 'epochs;
                    }
                }
                let (risk, grad) = target.eval(&theta, data, loss, None)?;
                check_finite(iters_done, risk, &grad)?;
                last_risk = risk;
                last_grad_norm = norm(&grad);
                if iters_done % schedule.trace_every == 0 {
                    trace.push((iters_done, risk));
                }
                if last_grad_norm <= schedule.grad_tol {
                    converged = true;
                    break;
                }
            }
        } else {
            for iter in 1..=schedule.max_iters {
                if let Some(decay) = &schedule.lr_decay {
                    if decay.at_iters.contains(&iter) {
                        lr *= decay.factor;
                    }
                }
                match schedule.optimizer {
                    OptimizerKind::Gd => {
                        let (risk, grad) = target.eval(&theta, data, loss, None)?;
                        check_finite(iter, risk, &grad)?;
                        if risk > last_risk + 1e-12 * (1.0 + last_risk.abs()) {
                            return Err(Error::Divergence { iter, risk });
                        }
                        last_risk = risk;
                        last_grad_norm = norm(&grad);
                        iters_done = iter - 1;
                        if last_grad_norm <= schedule.grad_tol {
                            converged = true;
                            break;
                        }
                        if iter % schedule.trace_every == 0 {
                            trace.push((iter, risk));
                        }
                        for (t, g) in theta.iter_mut().zip(&grad) {
                            *t -= lr * g;
                        }
                        iters_done = iter;
                    }
                    OptimizerKind::SgdNesterov => {
                        let (risk, grad) = target.eval(&theta, data, loss, None)?;
                        check_finite(iter, risk, &grad)?;
                        last_risk = risk;
                        last_grad_norm = norm(&grad);
                        iters_done = iter - 1;
                        if last_grad_norm <= schedule.grad_tol {
                            converged = true;
                            break;
                        }
                        if iter % schedule.trace_every == 0 {
                            trace.push((iter, risk));
                        }
                        let look: Vec<f64> = theta
                            .iter()
                            .zip(&velocity)
                            .map(|(t, v)| t + schedule.momentum * v)
                            .collect();
                        let (_, g_la) = target.eval(&look, data, loss, None)?;
                        for ((v, g), t) in velocity.iter_mut().zip(&g_la).zip(theta.iter_mut()) {
                            *v = schedule.momentum * *v - lr * g;
                            *t += *v;
                        }
                        iters_done = iter;
                    }
                }
            }
            if !converged || iters_done == schedule.max_iters {
                // refresh the final full-batch numbers after the last step
                let (risk, grad) = target.eval(&theta, data, loss, None)?;
                check_finite(iters_done, risk, &grad)?;
                last_risk = risk;
                last_grad_norm = norm(&grad);
                converged = last_grad_norm <= schedule.grad_tol;
            }
        }
    }

    if trace.last().map(|&(i, _)| i) != Some(iters_done) {
        trace.push((iters_done, last_risk));
    }
    Ok(TrainResult {
        final_params: target.rebuild(&theta),
        final_risk: last_risk,
        grad_norm: last_grad_norm,
        trace,
        converged,
        iters: iters_done,
    })
}

// ── Critical-point analysis ─────────────────────────────────────────

/// Verdict for a candidate critical point of the prediction-weight problem.
/// `LocalMinCandidate` is deliberately not called a local minimum: a PSD
/// Hessian is necessary but not sufficient at degenerate points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalPointVerdict {
    NotCritical,
    Global,
    Saddle,
    LocalMinCandidate,
    LocalMaxCandidate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub grad_norm: f64,
    pub grad_tol: f64,
    pub rank_w_out: usize,
    pub full_rank: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub curvature: CurvatureClass,
    pub epsilon: f64,
    pub verdict: CriticalPointVerdict,
}

/// Classifies a point `(w_l, w_out)` of the squared-loss prediction-weight
/// problem: global (critical with full-rank `W_{L+1}`), saddle (critical
/// with indefinite Hessian), or local-minimum candidate (critical with PSD
/// Hessian). Points with gradient norm above `grad_tol` are `NotCritical`.
pub fn classify_critical_point(
    w_l: &Matrix,
    w_out: &Matrix,
    phi: &FeatureWeights,
    data: &Dataset,
    grad_tol: f64,
) -> Result<CriticalPointReport> {
    let features = phi.features(&data.x)?;
    let (d_w_l, d_w_out) = backprop::grad_pphi(w_l, w_out, &features, data, Loss::Squared)?;
    let grad_norm = (d_w_l.frobenius_norm().powi(2) + d_w_out.frobenius_norm().powi(2)).sqrt();

    let rank_w_out = rank(w_out, None);
    let full_rank = rank_w_out == w_out.rows().min(w_out.cols());
    let blocks = assemble_hessian(w_l, w_out, &features, data)?;
    let cert = curvature_probe(&blocks)?;
    let epsilon = epsilon_from_features(w_l, w_out, &features, data, Loss::Squared)?;

    let verdict = if grad_norm > grad_tol {
        CriticalPointVerdict::NotCritical
    } else if full_rank {
        CriticalPointVerdict::Global
    } else {
        match cert.classification {
            CurvatureClass::Indefinite => CriticalPointVerdict::Saddle,
            CurvatureClass::Psd | CurvatureClass::Zero => CriticalPointVerdict::LocalMinCandidate,
            CurvatureClass::Nsd => CriticalPointVerdict::LocalMaxCandidate,
        }
    };
    Ok(CriticalPointReport {
        grad_norm,
        grad_tol,
        rank_w_out,
        full_rank,
        lambda_min: cert.lambda_min,
        lambda_max: cert.lambda_max,
        curvature: cert.classification,
        epsilon,
        verdict,
    })
}

/// Excess risk over the head-problem optimum:
/// `epsilon = R(W_L, W_{L+1}; phi) - A*(phi) >= 0`. Squared loss uses the
/// closed-form optimum; cross-entropy runs the convex descent to tolerance.
pub fn compute_epsilon(
    w_l: &Matrix,
    w_out: &Matrix,
    phi: &FeatureWeights,
    data: &Dataset,
    loss: Loss,
) -> Result<f64> {
    let features = phi.features(&data.x)?;
    epsilon_from_features(w_l, w_out, &features, data, loss)
}

/// [`compute_epsilon`] over already-extracted features.
pub fn epsilon_from_features(
    w_l: &Matrix,
    w_out: &Matrix,
    features: &FeatureMatrices,
    data: &Dataset,
    loss: Loss,
) -> Result<f64> {
    let rep = prediction_representation(w_l, features);
    let risk = mean_loss(loss, &w_out.matmul(&rep), &data.y)?;
    let a_star = aresnest_optimum(features, data, loss)?;
    Ok(risk - a_star)
}

/// Global minimum value of the head problem for the given features.
pub fn aresnest_optimum(features: &FeatureMatrices, data: &Dataset, loss: Loss) -> Result<f64> {
    match loss {
        Loss::Squared => Ok(solve_pa_closed_form(features, data)?.1),
        Loss::CrossEntropy => {
            // convex: Nesterov descent on the stacked-feature linear model
            let stacks: Vec<&Matrix> = features.v.iter().collect();
            let vtilde = Matrix::vstack(&stacks);
            let stacked_data = Dataset::new(vtilde, data.y.clone())?;
            let init = Matrix::zeros(data.n_out(), stacked_data.n_in());
            Ok(linear_cross_entropy_solve(&init, &stacked_data)?.1)
        }
    }
}
