//! Synthetic dataset generation and CSV serialization.
//!
//! Every dataset is a pure function of its [`DataSpec`]: inputs are i.i.d.
//! standard normal from one ChaCha8 stream, teacher weights and noise come
//! from their own streams, so the same spec always reproduces the same bytes.
//! Noise is applied to targets only, keeping zero-noise teacher data an
//! exact fit for the teacher.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    densenest_forward, init_densenest, init_resnest, resnest_forward, DenseNEstConfig,
    DenseNEstParams, ResNEstConfig, ResNEstParams,
};
use crate::risk::Dataset;
use crate::rng;

/// Target-generation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    TeacherResnest,
    TeacherDensenest,
    Linear,
    NonlinearRegression,
    /// One-hot labels by nearest of `n_out` random centers; `noise_sigma` is
    /// the probability of replacing a label with a uniformly random one.
    Blobs,
}

/// Deterministic recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n: usize,
    pub noise_sigma: f64,
    pub n_in: usize,
    pub n_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_resnest: Option<ResNEstConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_densenest: Option<DenseNEstConfig>,
    pub seed: u64,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Input("n, n_in and n_out must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Input("noise_sigma must be finite and >= 0".into()));
        }
        match self.kind {
            DataKind::TeacherResnest => {
                let c = self
                    .teacher_resnest
                    .as_ref()
                    .ok_or_else(|| Error::Input("teacher_resnest config required".into()))?;
                c.validate()?;
                if c.n_in != self.n_in || c.n_out != self.n_out {
                    return Err(Error::Input("teacher dims disagree with data dims".into()));
                }
            }
            DataKind::TeacherDensenest => {
                let c = self
                    .teacher_densenest
                    .as_ref()
                    .ok_or_else(|| Error::Input("teacher_densenest config required".into()))?;
                c.validate()?;
                if c.n_in != self.n_in || c.n_out != self.n_out {
                    return Err(Error::Input("teacher dims disagree with data dims".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

/// The exact ResNEst teacher used by [`generate`] for `teacher_resnest`
/// data: `init_resnest(config, spec.seed, 1.0)`.
pub fn teacher_resnest_params(spec: &DataSpec) -> Result<ResNEstParams> {
    let c = spec
        .teacher_resnest
        .as_ref()
        .ok_or_else(|| Error::Input("spec has no teacher_resnest config".into()))?;
    init_resnest(c, spec.seed, 1.0)
}

/// The exact DenseNEst teacher used by [`generate`] for `teacher_densenest`
/// data.
pub fn teacher_densenest_params(spec: &DataSpec) -> Result<DenseNEstParams> {
    let c = spec
        .teacher_densenest
        .as_ref()
        .ok_or_else(|| Error::Input("spec has no teacher_densenest config".into()))?;
    init_densenest(c, spec.seed, 1.0)
}

/// The exact coefficient matrix behind `linear` data.
pub fn linear_teacher_matrix(spec: &DataSpec) -> Matrix {
    let mut rng = rng::stream(spec.seed, "data/teacher-linear");
    normal_matrix(spec.n_out, spec.n_in, 1.0 / (spec.n_in as f64).sqrt(), &mut rng)
}

/// Generates the dataset described by `spec`.
pub fn generate(spec: &DataSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut x_rng = rng::stream(spec.seed, "data/x");
    let x = normal_matrix(spec.n_in, spec.n, 1.0, &mut x_rng);
    let mut noise_rng = rng::stream(spec.seed, "data/noise");

    let y = match spec.kind {
        DataKind::Linear => {
            let a = linear_teacher_matrix(spec);
            let clean = a.matmul(&x);
            add_noise(&clean, spec.noise_sigma, &mut noise_rng)
        }
        DataKind::NonlinearRegression => {
            // fixed single-hidden-layer tanh teacher, gain 2 to leave the
            // near-linear regime
            let width = 8;
            let mut rng = rng::stream(spec.seed, "data/teacher-nonlinear");
            let w1 = normal_matrix(width, spec.n_in, 2.0 / (spec.n_in as f64).sqrt(), &mut rng);
            let w2 = normal_matrix(spec.n_out, width, 1.0 / (width as f64).sqrt(), &mut rng);
            let hidden = w1.matmul(&x);
            let act = Matrix::from_fn(hidden.rows(), hidden.cols(), |i, j| hidden.get(i, j).tanh());
            add_noise(&w2.matmul(&act), spec.noise_sigma, &mut noise_rng)
        }
        DataKind::TeacherResnest => {
            let teacher = teacher_resnest_params(spec)?;
            let (clean, _) = resnest_forward(&teacher, &x)?;
            add_noise(&clean, spec.noise_sigma, &mut noise_rng)
        }
        DataKind::TeacherDensenest => {
            let teacher = teacher_densenest_params(spec)?;
            let (clean, _) = densenest_forward(&teacher, &x)?;
            add_noise(&clean, spec.noise_sigma, &mut noise_rng)
        }
        DataKind::Blobs => {
            let mut rng = rng::stream(spec.seed, "data/teacher-blobs");
            let centers = normal_matrix(spec.n_in, spec.n_out, 2.0, &mut rng);
            let flip_p = spec.noise_sigma.min(1.0);
            let mut y = Matrix::zeros(spec.n_out, spec.n);
            for n in 0..spec.n {
                let mut best = 0;
                let mut best_dist = f64::INFINITY;
                for c in 0..spec.n_out {
                    let mut d = 0.0;
                    for i in 0..spec.n_in {
                        let diff = x.get(i, n) - centers.get(i, c);
                        d += diff * diff;
                    }
                    if d < best_dist {
                        best_dist = d;
                        best = c;
                    }
                }
                let label = if flip_p > 0.0 && noise_rng.gen_range(0.0..1.0) < flip_p {
                    noise_rng.gen_range(0..spec.n_out)
                } else {
                    best
                };
                y.set(label, n, 1.0);
            }
            y
        }
    };
    Dataset::new(x, y)
}

fn add_noise(clean: &Matrix, sigma: f64, rng: &mut impl Rng) -> Matrix {
    if sigma == 0.0 {
        return clean.clone();
    }
    Matrix::from_fn(clean.rows(), clean.cols(), |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        clean.get(i, j) + sigma * z
    })
}

// ── CSV ─────────────────────────────────────────────────────────────

/// Renders the dataset in the CSV layout `x1,..,xK,y1,..,yM`, one sample per
/// line. Floats are printed in the shortest form that parses back to the
/// same bit pattern, so a write/read round trip is exact.
pub fn to_csv_string(data: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..data.n_in() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "x{}", i + 1);
    }
    for i in 0..data.n_out() {
        let _ = write!(out, ",y{}", i + 1);
    }
    out.push('\n');
    for n in 0..data.n_samples() {
        for i in 0..data.n_in() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", data.x.get(i, n));
        }
        for i in 0..data.n_out() {
            let _ = write!(out, ",{}", data.y.get(i, n));
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(data))?;
    Ok(())
}

/// Parses a dataset from CSV text. Errors carry the offending 1-based line
/// number (the header is line 1).
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_in = names.iter().take_while(|s| s.starts_with('x')).count();
    let n_out = names.len() - n_in;
    if n_in == 0 || n_out == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must list x columns then y columns, got '{header}'"),
        });
    }
    for (i, name) in names.iter().enumerate() {
        let expect = if i < n_in {
            format!("x{}", i + 1)
        } else {
            format!("y{}", i - n_in + 1)
        };
        if *name != expect {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column '{expect}', found '{name}'"),
            });
        }
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut n = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_in + n_out {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", n_in + n_out, fields.len()),
            });
        }
        for (k, field) in fields.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("cannot parse '{field}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "non-finite value".into(),
                });
            }
            if k < n_in {
                xs.push(value);
            } else {
                ys.push(value);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    // values arrived sample-major; transpose into column-per-sample
    let x = Matrix::from_fn(n_in, n, |i, j| xs[j * n_in + i]);
    let y = Matrix::from_fn(n_out, n, |i, j| ys[j * n_out + i]);
    Dataset::new(x, y)
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}
