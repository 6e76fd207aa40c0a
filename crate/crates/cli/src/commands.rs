//! The five subcommands. Every artifact is written atomically
//! (temp-then-rename) and every byte is a pure function of the config, so
//! reruns reproduce outputs exactly.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use resnest_core::hessian::{assemble_hessian, curvature_probe, schur_semidefinite_test};
use resnest_core::linalg::Matrix;
use resnest_core::models::{init_aresnest, init_densenest, init_resnest};
use resnest_core::optimize::{train, ModelParams};
use resnest_core::verify::{
    self, emit_report, CheckResult, CheckStatus, ReportFormat, VerificationReport,
};

use crate::config::{ModelKind, RunConfig};

/// Writes bytes via a temp file in the same directory plus a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)
}

/// `gen-data`: materialize the configured dataset as CSV plus a sidecar
/// spec echo.
pub fn cmd_gen_data(config: &RunConfig) -> Result<i32> {
    let spec = config.data_spec()?;
    let data = resnest_core::data::generate(spec)?;
    let csv_path = config.output_dir.join("data.csv");
    write_atomic(&csv_path, &resnest_core::data::to_csv_string(&data))?;
    write_json(&config.output_dir.join("data.spec.json"), spec)?;
    println!(
        "wrote {} ({} samples) and sidecar spec",
        csv_path.display(),
        data.n_samples()
    );
    Ok(0)
}

fn initial_params(config: &RunConfig) -> Result<ModelParams> {
    Ok(match config.model {
        ModelKind::Resnest => ModelParams::Resnest(init_resnest(
            &config.resnest_architecture()?,
            config.seed,
            config.init_scale,
        )?),
        ModelKind::Aresnest => ModelParams::Aresnest(init_aresnest(
            &config.resnest_architecture()?,
            config.seed,
            config.init_scale,
        )?),
        ModelKind::Densenest => ModelParams::Densenest(init_densenest(
            &config.densenest_architecture()?,
            config.seed,
            config.init_scale,
        )?),
    })
}

/// `train`: seeded init, one training run, results on disk.
pub fn cmd_train(config: &RunConfig) -> Result<i32> {
    let problem = config
        .problem
        .context("config is missing 'problem' (required by train)")?;
    let schedule = config
        .schedule
        .clone()
        .context("config is missing 'schedule' (required by train)")?;
    let data = config.load_dataset()?;
    let init = initial_params(config)?;
    write_json(&config.output_dir.join("init_params.json"), &init)?;

    let result = train(problem, init, &data, config.loss, &schedule, config.seed)?;
    write_json(&config.output_dir.join("train_result.json"), &result)?;
    println!(
        "trained {:?}: risk {:.6e}, grad norm {:.3e}, converged = {}, {} iterations",
        problem, result.final_risk, result.grad_norm, result.converged, result.iters
    );
    Ok(0)
}

pub const ALL_CHECKS: &[&str] = &[
    "assumptions",
    "erlb",
    "curvature",
    "local-minima",
    "monotone-blocks",
    "linear-baseline",
    "unpredictability",
    "saddle",
    "embedding",
];

/// `verify`: run the selected named checks (default: all applicable) and
/// emit JSON + markdown reports. Exit 0 only if no non-skip check failed.
pub fn cmd_verify(config: &RunConfig, checks: Option<&str>) -> Result<i32> {
    let selected: Vec<String> = match checks {
        None => ALL_CHECKS.iter().map(|s| s.to_string()).collect(),
        Some(list) => {
            let names: Vec<String> = list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            for name in &names {
                if !ALL_CHECKS.contains(&name.as_str()) {
                    bail!(
                        "unknown check '{name}'; valid checks are: {}",
                        ALL_CHECKS.join(", ")
                    );
                }
            }
            names
        }
    };

    let arch = config.resnest_architecture()?;
    let data = config.load_dataset()?;
    let opts = config.verify_options();
    let schedule = config.schedule_or_default();
    let seed = config.seed;

    let mut parts: Vec<VerificationReport> = Vec::new();
    for name in &selected {
        let part = match name.as_str() {
            "assumptions" => {
                verify::run_assumptions(&arch, &data, config.loss, config.init_scale, seed)?
            }
            "erlb" => verify::run_erlb(&arch, &data, opts.n_triples, seed)?,
            "curvature" => {
                verify::run_curvature_battery(&arch, &data, opts.n_s_points, opts.n_scan, seed)?
            }
            "local-minima" => {
                verify::run_local_minimum_quality(&arch, &data, opts.n_phi, opts.n_inits, &schedule, seed)?
            }
            "monotone-blocks" => {
                if arch.l < 2 {
                    let mut r = VerificationReport::new(seed, serde_json::Value::Null);
                    r.checks.push(CheckResult {
                        name: "monotone_block_ordering".into(),
                        status: CheckStatus::Skip,
                        metrics: Default::default(),
                        details: "needs L >= 2".into(),
                    });
                    r
                } else {
                    verify::run_monotone_blocks(
                        &arch,
                        opts.l_beta,
                        &data,
                        opts.n_inits.max(10),
                        &schedule,
                        seed,
                    )?
                }
            }
            "linear-baseline" => verify::run_linear_baseline(
                &arch,
                &config.densenest_architecture()?,
                &data,
                &schedule,
                seed,
            )?,
            "unpredictability" => verify::run_unpredictability(&arch, &data, seed)?,
            "saddle" => verify::run_saddle_probe(&arch, &data, opts.n_runs, &schedule, seed)?,
            "embedding" => verify::run_embedding(
                &config.densenest_architecture()?,
                opts.n_embed_models,
                opts.n_embed_inputs,
                seed,
            )?,
            _ => unreachable!(),
        };
        parts.push(part);
    }
    let report = VerificationReport::merge(seed, config.echo(), parts);

    let json = emit_report(&report, ReportFormat::Json)?;
    write_atomic(&config.output_dir.join("report.json"), &json)?;
    let md = emit_report(&report, ReportFormat::Markdown)?;
    write_atomic(&config.output_dir.join("report.md"), &md)?;

    for check in &report.checks {
        let status = match check.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "skip",
        };
        println!("{status:>5}  {}  {}", check.name, check.details);
    }
    Ok(if report.all_pass() { 0 } else { 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PointSource {
    /// Load a saved ResNEst parameter file (`--point`).
    File,
    /// Seeded feature weights with `W_{L+1} = 0`.
    SPoint,
    /// Seeded random parameters.
    Random,
}

#[derive(Serialize)]
struct HessianReport {
    point_source: String,
    m: usize,
    k_l: usize,
    n_o: usize,
    lambda_min: f64,
    lambda_max: f64,
    classification: resnest_core::hessian::CurvatureClass,
    eigenvalues: Vec<f64>,
    schur: resnest_core::hessian::SchurReport,
}

/// `hessian`: assemble the prediction-weight Hessian at a chosen point and
/// report its spectrum, classification and semidefiniteness flags.
pub fn cmd_hessian(config: &RunConfig, source: PointSource, point: Option<&Path>) -> Result<i32> {
    let data = config.load_dataset()?;
    let params = match source {
        PointSource::File => {
            let path = point.context("--point-source file needs --point <params.json>")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let loaded: ModelParams = serde_json::from_str(&text)?;
            match loaded {
                ModelParams::Resnest(p) => p,
                _ => bail!("hessian analysis needs ResNEst parameters"),
            }
        }
        PointSource::SPoint | PointSource::Random => {
            let arch = config.resnest_architecture()?;
            let mut p = init_resnest(&arch, config.seed, config.init_scale)?;
            if source == PointSource::SPoint {
                p.w_out = Matrix::zeros(arch.n_out, arch.m);
            }
            p
        }
    };
    let features = params.phi().features(&data.x)?;
    let blocks = assemble_hessian(params.prediction_w_l(), &params.w_out, &features, &data)?;
    let cert = curvature_probe(&blocks)?;
    let schur = schur_semidefinite_test(&blocks);
    let eigenvalues = resnest_core::linalg::sym_eig(&blocks.full())?.eigenvalues;

    let report = HessianReport {
        point_source: format!("{source:?}").to_lowercase(),
        m: blocks.m,
        k_l: blocks.k_l,
        n_o: blocks.n_o,
        lambda_min: cert.lambda_min,
        lambda_max: cert.lambda_max,
        classification: cert.classification,
        eigenvalues,
        schur,
    };
    write_json(&config.output_dir.join("hessian_report.json"), &report)?;
    println!(
        "hessian {}x{}: lambda in [{:.3e}, {:.3e}], {:?}, psd possible = {}",
        blocks.dim(),
        blocks.dim(),
        cert.lambda_min,
        cert.lambda_max,
        cert.classification,
        schur.psd_possible
    );
    Ok(0)
}

#[derive(Serialize)]
struct EmbedReport {
    m: usize,
    k: Vec<usize>,
    n_inputs: usize,
    max_abs_gap: f64,
    rank_check_ok: bool,
}

/// `embed`: build the wide-ResNEst equivalent of a DenseNEst and verify
/// output equality on random inputs.
pub fn cmd_embed(config: &RunConfig, params_file: Option<&Path>) -> Result<i32> {
    let dense = match params_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let loaded: ModelParams = serde_json::from_str(&text)?;
            match loaded {
                ModelParams::Densenest(p) => p,
                _ => bail!("embed needs DenseNEst parameters"),
            }
        }
        None => init_densenest(
            &config.densenest_architecture()?,
            config.seed,
            config.init_scale,
        )?,
    };
    let res = resnest_core::verify::embed_densenest(&dense)?;

    let n_inputs = 100;
    let max_abs_gap = resnest_core::verify::embedding_gap(&dense, &res, n_inputs, config.seed)?;

    let rank_check_ok = if res.l() > 0 {
        let phi = res.phi();
        let stack: Vec<&Matrix> = phi.w.iter().collect();
        let stack = Matrix::hstack(&stack);
        resnest_core::linalg::rank(&stack, None) == stack.cols()
    } else {
        true
    };

    let report = EmbedReport {
        m: res.m(),
        k: res.w.iter().map(Matrix::cols).collect(),
        n_inputs,
        max_abs_gap,
        rank_check_ok,
    };
    write_json(
        &config.output_dir.join("resnest_params.json"),
        &ModelParams::Resnest(res),
    )?;
    write_json(&config.output_dir.join("embed_report.json"), &report)?;
    println!(
        "embedded DenseNEst into M = {} ResNEst; max output gap {max_abs_gap:.3e} over {n_inputs} inputs",
        report.m
    );
    Ok(0)
}
