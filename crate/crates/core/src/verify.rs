//! Mechanical checks of the landscape guarantees: assumption verification,
//! lower-bound and local-minimum experiments, curvature probes, prefix
//! monotonicity, linear-baseline comparisons, and the DenseNEst-to-ResNEst
//! embedding. Every experiment is a pure function of `(config, data, seed)`
//! and reports named pass/fail/skip checks with numeric metrics, so reruns
//! reproduce reports byte for byte.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{assemble_hessian, curvature_probe, no_nsd_scan, CurvatureClass};
use crate::linalg::{pinv, rank, Matrix};
use crate::models::{
    densenest_forward, init_densenest, init_resnest, resnest_forward, BlockFn, DenseNEstConfig,
    DenseNEstParams, FeatureMatrices, ResNEstConfig, ResNEstParams,
};
use crate::optimize::{
    best_linear_predictor, classify_critical_point, solve_pa_closed_form, solve_pd_closed_form,
    train, CriticalPointVerdict, ModelParams, OptimizerKind, Problem, TrainResult, TrainSchedule,
};
use crate::risk::{mean_loss, Dataset, Loss};
use crate::rng;

// ── Assumption checks ───────────────────────────────────────────────

/// Numerical verdicts for the model assumptions at a concrete
/// `(params, dataset, loss)` triple.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// `||sum_n v_L(x^n) y^n^T||_F`; must be positive for Assumption 1.
    pub a1_cross_term_norm: f64,
    /// Rank of `V_L V_L^T` against `K_L`.
    pub a1_gram_rank: usize,
    pub k_l: usize,
    pub a1_ok: bool,
    /// Differentiable and convex loss; true for both supported losses.
    pub a2_loss_ok: bool,
    /// `M >= N_o`.
    pub a3_ok: bool,
    /// Rank of `[W_0 .. W_{L-1}]` against `sum_{i<L} K_i`.
    pub a4_rank: usize,
    pub a4_expected: usize,
    pub a4_ok: bool,
    /// `M >= sum_{i<L} K_i`.
    pub bottleneck_ok: bool,
    pub all_pass: bool,
}

/// Checks Assumptions 1-4 plus the bottleneck width condition.
pub fn check_assumptions(
    params: &ResNEstParams,
    data: &Dataset,
    loss: Loss,
) -> Result<AssumptionReport> {
    params.validate()?;
    let phi = params.phi();
    let features = phi.features(&data.x)?;
    let v_l = features.v_last();
    let k_l = v_l.rows();

    let cross = v_l.matmul_nt(&data.y);
    let a1_cross_term_norm = cross.frobenius_norm();
    let cross_scale = 1.0 + v_l.frobenius_norm() * data.y.frobenius_norm();
    let a1_gram_rank = rank(&v_l.matmul_nt(v_l), None);
    let a1_ok = a1_cross_term_norm > 1e-8 * cross_scale && a1_gram_rank == k_l;

    let a2_loss_ok = matches!(loss, Loss::Squared | Loss::CrossEntropy);
    let a3_ok = params.m() >= params.n_out();

    let l = params.l();
    let a4_expected: usize = (0..l)
        .map(|i| if i == 0 { params.n_in() } else { params.w[i - 1].cols() })
        .sum();
    let a4_rank = if l == 0 {
        0
    } else {
        let stack: Vec<&Matrix> = phi.w.iter().collect();
        rank(&Matrix::hstack(&stack), None)
    };
    let a4_ok = a4_rank == a4_expected;
    let bottleneck_ok = params.m() >= a4_expected;

    let all_pass = a1_ok && a2_loss_ok && a3_ok && a4_ok;
    Ok(AssumptionReport {
        a1_cross_term_norm,
        a1_gram_rank,
        k_l,
        a1_ok,
        a2_loss_ok,
        a3_ok,
        a4_rank,
        a4_expected,
        a4_ok,
        bottleneck_ok,
        all_pass,
    })
}

// ── Reports ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    /// Sorted map keeps JSON output byte-stable.
    pub metrics: BTreeMap<String, f64>,
    pub details: String,
}

impl CheckResult {
    fn new(name: &str, status: CheckStatus, details: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            status,
            metrics: BTreeMap::new(),
            details: details.into(),
        }
    }

    fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.into(), value);
        self
    }
}

/// Structured verification output, serialized as
/// `{"version":1,"seed":..,"config":{..},"checks":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub version: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        VerificationReport {
            version: 1,
            seed,
            config,
            checks: Vec::new(),
        }
    }

    /// True when no non-skip check failed.
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    /// Concatenates the checks of several reports under one header. Check
    /// names must stay unique.
    pub fn merge(seed: u64, config: serde_json::Value, parts: Vec<VerificationReport>) -> Self {
        let mut out = VerificationReport::new(seed, config);
        for part in parts {
            out.checks.extend(part.checks);
        }
        debug_assert!(
            {
                let mut names: Vec<&str> = out.checks.iter().map(|c| c.name.as_str()).collect();
                names.sort_unstable();
                names.windows(2).all(|w| w[0] != w[1])
            },
            "duplicate check names in merged report"
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// Serializes a report: JSON round-trips through serde; markdown renders a
/// one-row-per-check summary table.
pub fn emit_report(report: &VerificationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!(
                "# Verification report (seed {})\n\n| check | status | metrics | details |\n|---|---|---|---|\n",
                report.seed
            ));
            for c in &report.checks {
                let status = match c.status {
                    CheckStatus::Pass => "pass",
                    CheckStatus::Fail => "fail",
                    CheckStatus::Skip => "skip",
                };
                let metrics = c
                    .metrics
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.3e}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                out.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    c.name, status, metrics, c.details
                ));
            }
            Ok(out)
        }
    }
}

// ── Shared experiment plumbing ──────────────────────────────────────

/// Nesterov schedule used by the experiment drivers unless overridden. The
/// staged decay settles runs that would otherwise orbit the optimum in a
/// momentum limit cycle just above the gradient tolerance.
pub fn default_pphi_schedule() -> TrainSchedule {
    TrainSchedule {
        optimizer: OptimizerKind::SgdNesterov,
        lr: 0.05,
        momentum: 0.9,
        batch_size: 0,
        max_iters: 250_000,
        grad_tol: 1e-8,
        trace_every: 50_000,
        lr_decay: Some(crate::optimize::LrDecay {
            factor: 0.2,
            at_iters: vec![50_000, 100_000],
        }),
    }
}

/// Metrics must serialize as JSON numbers; empty maxima come out as 0.
fn finite_metric(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Replaces the prediction weights of `params` with a seeded random draw.
fn randomize_prediction_weights(params: &mut ResNEstParams, seed: u64) {
    let mut rng = rng::stream(seed, "prediction-init");
    let w_l = random_matrix(params.prediction_w_l().rows(), params.prediction_w_l().cols(), &mut rng);
    params.set_prediction_w_l(w_l);
    params.w_out = random_matrix(params.w_out.rows(), params.w_out.cols(), &mut rng);
}

/// Gain for sampled feature weights. At gain 1 the tanh blocks sit in their
/// near-linear regime and the nonlinear features come out almost collinear
/// with `v_0`, which makes the head-problem optimum hide behind singular
/// values around 1e-2; gain 2 saturates the blocks and keeps the feature
/// stack well conditioned.
const PHI_GAIN: f64 = 2.0;

/// Samples feature weights until the assumption set holds (a bounded number
/// of retries); `require_a4` is dropped in counterexample mode where the
/// bottleneck is violated by construction.
fn sample_phi(
    config: &ResNEstConfig,
    data: &Dataset,
    seed: u64,
    require_a4: bool,
) -> Result<(ResNEstParams, AssumptionReport)> {
    const RETRIES: u64 = 8;
    let mut last = None;
    for attempt in 0..RETRIES {
        let params = init_resnest(
            config,
            rng::derive(seed, &format!("phi-attempt-{attempt}")),
            PHI_GAIN,
        )?;
        let report = check_assumptions(&params, data, Loss::Squared)?;
        let ok = report.a1_ok && report.a3_ok && (!require_a4 || report.a4_ok);
        if ok {
            return Ok((params, report));
        }
        last = Some(report);
    }
    Err(Error::Precondition(format!(
        "no phi sample passed the assumptions after {RETRIES} attempts: {:?}",
        last
    )))
}

struct PPhiOutcome {
    converged: bool,
    risk: f64,
    grad_norm: f64,
}

fn train_pphi(
    base: &ResNEstParams,
    data: &Dataset,
    schedule: &TrainSchedule,
    init_seed: u64,
) -> Result<PPhiOutcome> {
    let mut start = base.clone();
    randomize_prediction_weights(&mut start, init_seed);
    let result = train_with_lr_backoff(
        Problem::PPhi,
        ModelParams::Resnest(start),
        data,
        Loss::Squared,
        schedule,
        init_seed,
    )?;
    Ok(PPhiOutcome {
        converged: result.converged,
        risk: result.final_risk,
        grad_norm: result.grad_norm,
    })
}

/// Runs [`train`], halving the learning rate and restarting on divergence
/// (the retry sequence is deterministic). The smoothness constant of these
/// problems varies a lot across sampled feature weights, so a fixed rate
/// cannot serve every run.
pub fn train_with_lr_backoff(
    problem: Problem,
    init: ModelParams,
    data: &Dataset,
    loss: Loss,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainResult> {
    const BACKOFFS: usize = 12;
    let mut sched = schedule.clone();
    for _ in 0..BACKOFFS {
        match train(problem, init.clone(), data, loss, &sched, seed) {
            Err(Error::Divergence { .. }) => sched.lr *= 0.5,
            other => return other,
        }
    }
    train(problem, init, data, loss, &sched, seed)
}

/// Report wrapper around [`check_assumptions`] for a seeded instance of the
/// configured architecture.
pub fn run_assumptions(
    config: &ResNEstConfig,
    data: &Dataset,
    loss: Loss,
    init_scale: f64,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let params = init_resnest(config, rng::derive(seed, "assumptions"), init_scale)?;
    let a = check_assumptions(&params, data, loss)?;
    let mut failing = Vec::new();
    if !a.a1_ok {
        failing.push("A1 (nonzero cross term, full-rank feature Gram)");
    }
    if !a.a2_loss_ok {
        failing.push("A2 (differentiable convex loss)");
    }
    if !a.a3_ok {
        failing.push("A3 (M >= N_o)");
    }
    if !a.a4_ok {
        failing.push("A4 (unique feature recovery)");
    }
    let details = if a.all_pass {
        format!(
            "all assumptions hold; bottleneck {}",
            if a.bottleneck_ok { "satisfied" } else { "violated" }
        )
    } else {
        format!("failing: {}", failing.join(", "))
    };
    report.checks.push(
        CheckResult::new(
            "assumptions",
            if a.all_pass { CheckStatus::Pass } else { CheckStatus::Fail },
            details,
        )
        .metric("a1_cross_term_norm", a.a1_cross_term_norm)
        .metric("a1_gram_rank", a.a1_gram_rank as f64)
        .metric("a3_ok", if a.a3_ok { 1.0 } else { 0.0 })
        .metric("a4_rank", a.a4_rank as f64)
        .metric("a4_expected", a.a4_expected as f64)
        .metric("bottleneck_ok", if a.bottleneck_ok { 1.0 } else { 0.0 }),
    );
    Ok(report)
}

// ── Local-minimum quality / counterexample driver ───────────────────

/// Local-minimum quality experiment. With the bottleneck condition satisfied
/// it trains the prediction weights from many seeds over many feature
/// samples and requires every converged point to attain the head-problem
/// optimum (`epsilon <= 1e-6 (1 + A*)`). With the bottleneck violated it
/// flips into a counterexample search: scan seeds for a converged point with
/// `epsilon > 1e-3` and record the finding (the search itself never fails
/// the suite).
pub fn run_local_minimum_quality(
    config: &ResNEstConfig,
    data: &Dataset,
    n_phi: usize,
    n_inits: usize,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    if config.bottleneck_ok() {
        let jobs: Vec<(usize, usize)> = (0..n_phi)
            .flat_map(|p| (0..n_inits).map(move |i| (p, i)))
            .collect();
        // one phi sample (and its lower bound) per phi index
        let mut phis = Vec::with_capacity(n_phi);
        for p in 0..n_phi {
            let (params, _) = sample_phi(config, data, rng::derive(seed, &format!("localmin-phi-{p}")), true)?;
            let features = params.phi().features(&data.x)?;
            let (_, a_star) = solve_pa_closed_form(&features, data)?;
            phis.push((params, a_star));
        }
        let outcomes: Result<Vec<(usize, PPhiOutcome)>> = jobs
            .par_iter()
            .map(|&(p, i)| {
                let (params, _) = &phis[p];
                let out = train_pphi(
                    params,
                    data,
                    schedule,
                    rng::derive(seed, &format!("localmin-init-{p}-{i}")),
                )?;
                Ok((p, out))
            })
            .collect();
        let outcomes = outcomes?;

        let mut n_converged = 0usize;
        let mut max_eps_rel = f64::NEG_INFINITY;
        let mut max_eps_abs = f64::NEG_INFINITY;
        let mut worst_grad: f64 = 0.0;
        for (p, out) in &outcomes {
            let a_star = phis[*p].1;
            if out.converged {
                n_converged += 1;
                let eps = out.risk - a_star;
                max_eps_abs = max_eps_abs.max(eps);
                max_eps_rel = max_eps_rel.max(eps / (1.0 + a_star));
            }
            worst_grad = worst_grad.max(out.grad_norm);
        }
        let total = outcomes.len();
        let all_converged = n_converged == total;
        let pass = all_converged && max_eps_rel <= 1e-6;
        let min_a_star = phis.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
        report.checks.push(
            CheckResult::new(
                "local_minima_attain_lower_bound",
                if pass { CheckStatus::Pass } else { CheckStatus::Fail },
                format!(
                    "{n_converged}/{total} runs converged; max epsilon/(1+A*) = {max_eps_rel:.3e}"
                ),
            )
            .metric("runs_total", total as f64)
            .metric("runs_converged", n_converged as f64)
            .metric("max_epsilon_rel", finite_metric(max_eps_rel))
            .metric("max_epsilon_abs", finite_metric(max_eps_abs))
            .metric("min_a_star", min_a_star)
            .metric("worst_grad_norm", worst_grad),
        );
    } else {
        // counterexample search over seeds; sequential with early stop
        let budget = n_phi.max(1);
        let mut found = false;
        let mut found_eps = 0.0;
        let mut found_seed_idx = -1.0;
        let mut max_eps_seen = f64::NEG_INFINITY;
        let mut tried = 0usize;
        for s in 0..budget {
            let phi_seed = rng::derive(seed, &format!("counterexample-phi-{s}"));
            let Ok((params, _)) = sample_phi(config, data, phi_seed, false) else {
                continue;
            };
            let features = params.phi().features(&data.x)?;
            let (_, a_star) = solve_pa_closed_form(&features, data)?;
            let out = train_pphi(
                &params,
                data,
                schedule,
                rng::derive(seed, &format!("counterexample-init-{s}")),
            )?;
            tried += 1;
            if out.converged {
                let eps = out.risk - a_star;
                max_eps_seen = max_eps_seen.max(eps);
                if eps > 1e-3 {
                    found = true;
                    found_eps = eps;
                    found_seed_idx = s as f64;
                    break;
                }
            }
        }
        let details = if found {
            format!(
                "diminishing feature reuse observed: epsilon = {found_eps:.3e} at seed index {found_seed_idx}"
            )
        } else {
            format!("no epsilon > 1e-3 found in {tried} converged runs (budget {budget})")
        };
        report.checks.push(
            CheckResult::new("feature_reuse_counterexample_search", CheckStatus::Pass, details)
                .metric("found", if found { 1.0 } else { 0.0 })
                .metric("epsilon_found", finite_metric(if found { found_eps } else { max_eps_seen }))
                .metric("seeds_tried", tried as f64)
                .metric("budget", budget as f64),
        );
    }
    Ok(report)
}

// ── Empirical-risk lower bound battery ──────────────────────────────

/// Evaluates `epsilon = R - A*` at random `(phi, W_L, W_{L+1})` triples and
/// requires it never drops below `-1e-10`.
pub fn run_erlb(
    config: &ResNEstConfig,
    data: &Dataset,
    n_triples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let epsilons: Result<Vec<f64>> = (0..n_triples)
        .into_par_iter()
        .map(|t| {
            let params = init_resnest(config, rng::derive(seed, &format!("erlb-{t}")), 1.0)?;
            crate::optimize::compute_epsilon(
                params.prediction_w_l(),
                &params.w_out,
                &params.phi(),
                data,
                Loss::Squared,
            )
        })
        .collect();
    let epsilons = epsilons?;
    let min_eps = epsilons.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = min_eps >= -1e-10;
    report.checks.push(
        CheckResult::new(
            "erlb_epsilon_nonnegative",
            if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            format!("min epsilon over {n_triples} random triples = {min_eps:.3e}"),
        )
        .metric("n_triples", n_triples as f64)
        .metric("min_epsilon", min_eps),
    );
    Ok(report)
}

// ── Curvature battery ───────────────────────────────────────────────

/// Indefiniteness at the zero-prediction set plus the never-NSD scan.
pub fn run_curvature_battery(
    config: &ResNEstConfig,
    data: &Dataset,
    n_s_points: usize,
    n_scan: usize,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let (params, _) = sample_phi(config, data, rng::derive(seed, "curvature-phi"), false)?;
    let phi = params.phi();
    let features = phi.features(&data.x)?;

    let n_o = data.n_out();
    let k_l = features.v_last().rows();
    let results: Result<Vec<(bool, f64)>> = (0..n_s_points)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(rng::derive(seed, &format!("curvature-s-{p}")), "s-point");
            let w_l = random_matrix(config.m, k_l, &mut rng);
            let w_out = Matrix::zeros(n_o, config.m);
            let blocks = assemble_hessian(&w_l, &w_out, &features, data)?;
            let cert = curvature_probe(&blocks)?;
            Ok((
                cert.classification == CurvatureClass::Indefinite,
                cert.lambda_min / cert.tol.max(f64::MIN_POSITIVE),
            ))
        })
        .collect();
    let results = results?;
    let indefinite = results.iter().filter(|(ok, _)| *ok).count();
    report.checks.push(
        CheckResult::new(
            "zero_prediction_hessians_indefinite",
            if indefinite == n_s_points { CheckStatus::Pass } else { CheckStatus::Fail },
            format!("{indefinite}/{n_s_points} zero-prediction points have indefinite Hessians"),
        )
        .metric("n_points", n_s_points as f64)
        .metric("n_indefinite", indefinite as f64),
    );

    let scan = no_nsd_scan(&phi, config.m, data, n_scan, rng::derive(seed, "curvature-scan"))?;
    report.checks.push(
        CheckResult::new(
            "no_negative_semidefinite_scan",
            if scan.all_non_nsd { CheckStatus::Pass } else { CheckStatus::Fail },
            format!(
                "{}/{} probes non-NSD; min relative lambda_max = {:.3e}",
                if scan.all_non_nsd { scan.n_points } else { 0 },
                scan.n_points,
                scan.min_relative_lambda_max
            ),
        )
        .metric("n_points", scan.n_points as f64)
        .metric("min_relative_lambda_max", scan.min_relative_lambda_max),
    );
    Ok(report)
}

// ── Monotone blocks over nested prefixes ────────────────────────────

/// Prefix experiment: train the prediction weights of the full `L_alpha`
/// network and of its `l_beta`-block prefix, both from many seeds, and
/// require every alpha risk to sit at or below every beta risk (the beta
/// side is anchored against its closed-form optimum). Also reports the
/// closed-form prefix-risk sequence.
pub fn run_monotone_blocks(
    config: &ResNEstConfig,
    l_beta: usize,
    data: &Dataset,
    n_inits: usize,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    if l_beta >= config.l {
        return Err(Error::Precondition(format!(
            "prefix length {l_beta} must be strictly below L = {}",
            config.l
        )));
    }
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let (alpha, _) = sample_phi(config, data, rng::derive(seed, "monotone-phi"), true)?;

    // beta shares the prefix of alpha's feature weights bitwise
    let beta_config = ResNEstConfig {
        l: l_beta,
        k: config.k[..l_beta].to_vec(),
        hidden: config.hidden[..l_beta].to_vec(),
        ..config.clone()
    };
    let mut beta = init_resnest(&beta_config, rng::derive(seed, "monotone-beta-pred"), 1.0)?;
    beta.w0 = alpha.w0.clone();
    for i in 0..l_beta {
        beta.blocks[i] = alpha.blocks[i].clone();
        if i < l_beta {
            // W_i for i < l_beta is feature-finding in beta only when i < l_beta
            beta.w[i] = alpha.w[i].clone();
        }
    }
    let beta_assumptions = check_assumptions(&beta, data, Loss::Squared)?;
    if !(beta_assumptions.a1_ok && beta_assumptions.a3_ok && beta_assumptions.a4_ok) {
        report.checks.push(CheckResult::new(
            "monotone_block_ordering",
            CheckStatus::Skip,
            "prefix network failed the assumption checks".to_string(),
        ));
        return Ok(report);
    }

    let run_many = |base: &ResNEstParams, tag: &str| -> Result<Vec<PPhiOutcome>> {
        (0..n_inits)
            .into_par_iter()
            .map(|i| {
                train_pphi(
                    base,
                    data,
                    schedule,
                    rng::derive(seed, &format!("monotone-{tag}-{i}")),
                )
            })
            .collect()
    };
    let alpha_runs = run_many(&alpha, "alpha")?;
    let beta_runs = run_many(&beta, "beta")?;
    let n_converged = alpha_runs.iter().chain(&beta_runs).filter(|o| o.converged).count();
    let max_alpha = alpha_runs.iter().map(|o| o.risk).fold(f64::NEG_INFINITY, f64::max);
    let min_beta = beta_runs.iter().map(|o| o.risk).fold(f64::INFINITY, f64::min);

    // The beta optimum is pinned by the closed form over its own prefix, so
    // an under-optimized beta cannot fake the ordering. Alpha runs sometimes
    // grind out their last gradient digits past any fixed budget; their
    // final risks are what the claim compares.
    let features = alpha.phi().features(&data.x)?;
    let prefix = prefix_ls_risks(&features, data)?;
    let beta_anchor = prefix[l_beta];
    let anchored = (min_beta - beta_anchor).abs() <= 1e-6 * (1.0 + beta_anchor);

    let tol = 1e-6 * (1.0 + min_beta.abs());
    let pass = anchored && max_alpha <= min_beta + tol;
    report.checks.push(
        CheckResult::new(
            "monotone_block_ordering",
            if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            format!(
                "max alpha risk {max_alpha:.6e} vs min beta risk {min_beta:.6e} (L_alpha = {}, L_beta = {l_beta}; {n_converged}/{} runs at grad tol)",
                config.l,
                2 * n_inits
            ),
        )
        .metric("max_alpha_risk", max_alpha)
        .metric("min_beta_risk", min_beta)
        .metric("beta_anchor", beta_anchor)
        .metric("n_inits", n_inits as f64)
        .metric("n_converged", n_converged as f64),
    );

    // closed-form oracle: optimal risks over nested prefixes never increase
    let monotone = prefix.windows(2).all(|w| w[1] <= w[0] + 1e-10 * (1.0 + w[0]));
    let mut check = CheckResult::new(
        "prefix_least_squares_oracle",
        if monotone { CheckStatus::Pass } else { CheckStatus::Fail },
        format!("prefix least-squares risks: {prefix:?}"),
    );
    for (i, r) in prefix.iter().enumerate() {
        check = check.metric(&format!("prefix_{i}"), *r);
    }
    report.checks.push(check);
    Ok(report)
}

// ── Beating the linear baseline ─────────────────────────────────────

/// Trains the full ResNEst problem and solves the DenseNEst prediction
/// problem in closed form; both must match or beat the best linear
/// predictor. Also reports the strictness margin between the linear
/// baseline and the head-problem optimum at the trained features.
pub fn run_linear_baseline(
    config: &ResNEstConfig,
    dense_config: &DenseNEstConfig,
    data: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    dense_config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let (_, linear_risk) = best_linear_predictor(data, Loss::Squared)?;

    let init = init_resnest(config, rng::derive(seed, "baseline-init"), 1.0)?;
    let result = train_with_lr_backoff(
        Problem::PFull,
        ModelParams::Resnest(init),
        data,
        Loss::Squared,
        schedule,
        rng::derive(seed, "baseline-train"),
    )?;
    let trained = result.final_params.as_resnest().unwrap();
    let tol = 1e-6 * (1.0 + linear_risk);
    // the claim is about the achieved risk; convergence is reported but a
    // near-critical point below the baseline already witnesses the bound
    let resnest_pass = result.final_risk <= linear_risk + tol;

    // strictness margin per the lower-bound decomposition
    let features = trained.phi().features(&data.x)?;
    let (_, a_star) = solve_pa_closed_form(&features, data)?;
    let strict_margin = linear_risk - a_star;

    report.checks.push(
        CheckResult::new(
            "resnest_beats_linear",
            if resnest_pass { CheckStatus::Pass } else { CheckStatus::Fail },
            format!(
                "trained risk {:.6e} vs linear {linear_risk:.6e}; strict margin {strict_margin:.3e}",
                result.final_risk
            ),
        )
        .metric("trained_risk", result.final_risk)
        .metric("linear_risk", linear_risk)
        .metric("a_star", a_star)
        .metric("strict_margin", strict_margin)
        .metric("grad_norm", result.grad_norm)
        .metric("converged", if result.converged { 1.0 } else { 0.0 }),
    );

    let dense = init_densenest(dense_config, rng::derive(seed, "baseline-dense"), 1.0)?;
    let (_, pd_risk) = solve_pd_closed_form(&dense, data)?;
    let dense_pass = pd_risk <= linear_risk + 1e-8 * (1.0 + linear_risk);
    report.checks.push(
        CheckResult::new(
            "densenest_beats_linear",
            if dense_pass { CheckStatus::Pass } else { CheckStatus::Fail },
            format!("DenseNEst closed-form risk {pd_risk:.6e} vs linear {linear_risk:.6e}"),
        )
        .metric("densenest_risk", pd_risk)
        .metric("linear_risk", linear_risk),
    );
    Ok(report)
}

// ── Linear unpredictability (prefix risks) ──────────────────────────

/// Closed-form least-squares risk using features `v_0..v_i` for each prefix
/// length `i`; the sequence is non-increasing by nesting.
pub fn prefix_ls_risks(features: &FeatureMatrices, data: &Dataset) -> Result<Vec<f64>> {
    let mut risks = Vec::with_capacity(features.v.len());
    for i in 0..features.v.len() {
        let stacks: Vec<&Matrix> = features.v[..=i].iter().collect();
        let vtilde = Matrix::vstack(&stacks);
        let h = data.y.matmul(&pinv(&vtilde, None));
        risks.push(mean_loss(Loss::Squared, &h.matmul(&vtilde), &data.y)?);
    }
    Ok(risks)
}

/// Per-block linear-unpredictability report entry.
#[derive(Debug, Clone, Serialize)]
pub struct PrefixReport {
    pub prefix_len: usize,
    pub risk: f64,
    /// True when adding this block dropped the optimal risk by more than
    /// `1e-6` relative — the feature is linearly unpredictable from its
    /// predecessors and the representation strictly improved.
    pub strict_drop: bool,
}

/// Flags which features strictly improve the best achievable risk.
pub fn check_linear_unpredictability(
    features: &FeatureMatrices,
    data: &Dataset,
) -> Result<Vec<PrefixReport>> {
    let risks = prefix_ls_risks(features, data)?;
    Ok(risks
        .iter()
        .enumerate()
        .map(|(i, &risk)| PrefixReport {
            prefix_len: i,
            risk,
            strict_drop: i > 0 && risks[i - 1] - risk > 1e-6 * (1.0 + risks[i - 1]),
        })
        .collect())
}

/// Report wrapper around [`check_linear_unpredictability`] for the suite.
pub fn run_unpredictability(
    config: &ResNEstConfig,
    data: &Dataset,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let params = init_resnest(config, rng::derive(seed, "unpredictability-phi"), 1.0)?;
    let features = params.phi().features(&data.x)?;
    let rows = check_linear_unpredictability(&features, data)?;
    let monotone = rows.windows(2).all(|w| w[1].risk <= w[0].risk + 1e-10 * (1.0 + w[0].risk));
    let drops = rows.iter().filter(|r| r.strict_drop).count();
    let mut check = CheckResult::new(
        "linear_unpredictability_prefix_risks",
        if monotone { CheckStatus::Pass } else { CheckStatus::Fail },
        format!("{drops} of {} blocks strictly improved the representation", rows.len() - 1),
    );
    for r in &rows {
        check = check.metric(&format!("prefix_{}", r.prefix_len), r.risk);
    }
    report.checks.push(check);
    Ok(report)
}

// ── DenseNEst -> ResNEst embedding ──────────────────────────────────

/// Embeds a DenseNEst into a wide ResNEst with bottleneck blocks: each
/// feature gets its own orthogonal coordinate block of the `M = M_L`
/// residual space via the selection matrices `Pi_i` (ones on the block
/// diagonal), and each dense function reads back the first `M_{i-1}`
/// coordinates. Outputs agree exactly and the embedded feature weights have
/// orthonormal columns, so the unique-recovery assumption holds by
/// construction.
pub fn embed_densenest(dense: &DenseNEstParams) -> Result<ResNEstParams> {
    dense.validate()?;
    let l = dense.l();
    let m = dense.m_i(l); // M = M_L
    let pi = |offset: usize, k: usize| -> Matrix {
        let mut p = Matrix::zeros(m, k);
        for j in 0..k {
            p.set(offset + j, j, 1.0);
        }
        p
    };

    let w0 = pi(0, dense.n_in);
    let mut w = Vec::with_capacity(l);
    let mut blocks = Vec::with_capacity(l);
    let mut offset = dense.n_in;
    for i in 0..l {
        let d_i = dense.blocks[i].out_dim();
        w.push(pi(offset, d_i));
        // Q_i reads [Pi_0 .. Pi_{i-1}]^T x = the first M_{i-1} coordinates,
        // so the hidden layer just gets zero columns appended.
        let m_prev = dense.m_i(i);
        let q = &dense.blocks[i];
        let mut weight_in = Matrix::zeros(q.hidden_dim(), m);
        weight_in.set_block(0, 0, &q.weight_in);
        debug_assert_eq!(q.weight_in.cols(), m_prev);
        blocks.push(BlockFn {
            weight_in,
            weight_out: q.weight_out.clone(),
            activation: q.activation,
        });
        offset += d_i;
    }
    let out = ResNEstParams {
        w0,
        w,
        w_out: dense.w_out.clone(),
        blocks,
    };
    out.validate()?;
    Ok(out)
}

/// Max absolute output difference between a DenseNEst and a ResNEst over
/// seeded random inputs in `[-2, 2]`.
pub fn embedding_gap(
    dense: &DenseNEstParams,
    res: &ResNEstParams,
    n_inputs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, "embed-gap-inputs");
    let x = Matrix::from_fn(dense.n_in, n_inputs, |_, _| rng.gen_range(-2.0..2.0));
    let (y_dense, _) = densenest_forward(dense, &x)?;
    let (y_res, _) = resnest_forward(res, &x)?;
    Ok(y_dense.sub(&y_res).max_abs())
}

/// Embedding experiment: random DenseNEsts must match their embedded
/// ResNEsts on random inputs to `1e-10`, and the embedded feature weights
/// must pass the rank check exactly.
pub fn run_embedding(
    dense_config: &DenseNEstConfig,
    n_models: usize,
    n_inputs: usize,
    seed: u64,
) -> Result<VerificationReport> {
    dense_config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(dense_config)?);
    let mut max_gap = 0.0f64;
    let mut all_rank_ok = true;
    for k in 0..n_models {
        let dense = init_densenest(dense_config, rng::derive(seed, &format!("embed-{k}")), 1.0)?;
        let res = embed_densenest(&dense)?;
        let gap = embedding_gap(&dense, &res, n_inputs, rng::derive(seed, &format!("embed-inputs-{k}")))?;
        max_gap = max_gap.max(gap);

        if res.l() > 0 {
            let phi = res.phi();
            let stack: Vec<&Matrix> = phi.w.iter().collect();
            let stack = Matrix::hstack(&stack);
            let expected: usize = stack.cols();
            if rank(&stack, None) != expected {
                all_rank_ok = false;
            }
        }
        // dimension echo: M = M_L with K_i = D_i
        debug_assert_eq!(res.m(), dense.m_i(dense.l()));
    }
    let pass = max_gap <= 1e-10 && all_rank_ok;
    report.checks.push(
        CheckResult::new(
            "densenest_embedding_equivalence",
            if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            format!("max output gap over {n_models} models x {n_inputs} inputs = {max_gap:.3e}"),
        )
        .metric("max_gap", max_gap)
        .metric("n_models", n_models as f64)
        .metric("rank_check", if all_rank_ok { 1.0 } else { 0.0 }),
    );
    Ok(report)
}

// ── Saddle probe ────────────────────────────────────────────────────

/// Saddle-point quality experiment: every numerically converged point that
/// classifies as a saddle must have rank-deficient `W_{L+1}` and strictly
/// negative curvature. Zero observed saddles is a vacuous pass (the
/// zero-prediction battery supplies the unconditional curvature evidence).
pub fn run_saddle_probe(
    config: &ResNEstConfig,
    data: &Dataset,
    n_runs: usize,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<VerificationReport> {
    config.validate()?;
    let mut report = VerificationReport::new(seed, serde_json::to_value(config)?);
    let (params, _) = sample_phi(config, data, rng::derive(seed, "saddle-phi"), true)?;
    let phi = params.phi();

    // battery of constructed zero-prediction points
    let features = phi.features(&data.x)?;
    let k_l = features.v_last().rows();
    let n_s = 20;
    let mut n_indefinite = 0;
    for p in 0..n_s {
        let mut rng = rng::stream(rng::derive(seed, &format!("saddle-s-{p}")), "s-point");
        let w_l = random_matrix(config.m, k_l, &mut rng);
        let w_out = Matrix::zeros(data.n_out(), config.m);
        let blocks = assemble_hessian(&w_l, &w_out, &features, data)?;
        let cert = curvature_probe(&blocks)?;
        if cert.classification == CurvatureClass::Indefinite {
            n_indefinite += 1;
        }
    }
    report.checks.push(
        CheckResult::new(
            "saddle_zero_prediction_battery",
            if n_indefinite == n_s { CheckStatus::Pass } else { CheckStatus::Fail },
            format!("{n_indefinite}/{n_s} constructed zero-prediction points indefinite"),
        )
        .metric("n_points", n_s as f64)
        .metric("n_indefinite", n_indefinite as f64),
    );

    // training sweep; classify each converged endpoint
    let runs: Result<Vec<TrainResult>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut start = params.clone();
            randomize_prediction_weights(
                &mut start,
                rng::derive(seed, &format!("saddle-init-{i}")),
            );
            train_with_lr_backoff(
                Problem::PPhi,
                ModelParams::Resnest(start),
                data,
                Loss::Squared,
                schedule,
                rng::derive(seed, &format!("saddle-train-{i}")),
            )
        })
        .collect();
    let runs = runs?;

    let mut n_saddles = 0usize;
    let mut n_global = 0usize;
    let mut n_other = 0usize;
    let mut saddle_ok = true;
    for r in &runs {
        if !r.converged {
            n_other += 1;
            continue;
        }
        let p = r.final_params.as_resnest().unwrap();
        // criticality threshold one order above the training tolerance, so
        // a just-converged endpoint still counts as critical
        let rep = classify_critical_point(
            p.prediction_w_l(),
            &p.w_out,
            &phi,
            data,
            schedule.grad_tol.max(1e-8) * 10.0,
        )?;
        match rep.verdict {
            CriticalPointVerdict::Saddle => {
                n_saddles += 1;
                let h_scale = rep.lambda_max.abs().max(rep.lambda_min.abs());
                if rep.full_rank || rep.lambda_min >= -1e-8 * h_scale {
                    saddle_ok = false;
                }
            }
            CriticalPointVerdict::Global => n_global += 1,
            _ => n_other += 1,
        }
    }
    let details = if n_saddles == 0 {
        format!("vacuously pass: 0 saddles among {n_runs} runs ({n_global} global, {n_other} other)")
    } else {
        format!(
            "{n_saddles} saddles all rank-deficient with strict negative curvature ({n_global} global, {n_other} other)"
        )
    };
    report.checks.push(
        CheckResult::new(
            "saddles_rank_deficient",
            if saddle_ok { CheckStatus::Pass } else { CheckStatus::Fail },
            details,
        )
        .metric("n_runs", n_runs as f64)
        .metric("n_saddles", n_saddles as f64)
        .metric("n_global", n_global as f64),
    );
    Ok(report)
}
