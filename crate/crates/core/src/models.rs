//! ResNEst, A-ResNEst and DenseNEst parameter containers and forward
//! evaluation.
//!
//! A ResNEst expands the input with `x_0 = W_0 x`, applies residual blocks
//! `x_i = x_{i-1} + W_i G_i(x_{i-1})`, and predicts `y = W_{L+1} x_L`. The
//! same network can be read feature-wise: `y = W_{L+1} sum_i W_i v_i` with
//! `v_0 = x` and `v_i = G_i(x_{i-1})`. The A-ResNEst replaces the coupled
//! products `W_{L+1} W_i` with free heads `H_i`; the DenseNEst concatenates
//! block outputs instead of adding them.
//!
//! Residual/dense functions are fixed to single-hidden-layer MLPs
//! ([`BlockFn`]). That is one admissible instantiation — the theory treats
//! them as black boxes — chosen so gradients stay hand-derivable.
//!
//! Batch layout everywhere: samples are columns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Pointwise nonlinearity for block hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Subgradient at 0 for relu is defined as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Single-hidden-layer MLP `z -> weight_out * act(weight_in * z)`, the fixed
/// realization of the residual functions `G_i` and dense functions `Q_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFn {
    /// `hidden x in_dim`
    pub weight_in: Matrix,
    /// `out_dim x hidden`
    pub weight_out: Matrix,
    pub activation: Activation,
}

impl BlockFn {
    pub fn in_dim(&self) -> usize {
        self.weight_in.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight_out.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight_in.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_out.cols() != self.weight_in.rows() {
            return Err(Error::shape(
                "BlockFn",
                format!(
                    "weight_out is {}x{} but hidden width is {}",
                    self.weight_out.rows(),
                    self.weight_out.cols(),
                    self.weight_in.rows()
                ),
            ));
        }
        Ok(())
    }

    /// Hidden pre-activations `weight_in * x` for a batch.
    pub(crate) fn preactivation(&self, x: &Matrix) -> Matrix {
        self.weight_in.matmul(x)
    }

    pub(crate) fn activate(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |i, j| self.activation.apply(z.get(i, j)))
    }

    /// Applies the block to a batch (columns are samples).
    pub fn apply_batch(&self, x: &Matrix) -> Matrix {
        self.weight_out.matmul(&self.activate(&self.preactivation(x)))
    }
}

/// Architecture of a ResNEst: input dim `n_in`, expansion factor `m`, output
/// dim `n_out`, `l` residual blocks with feature dims `k[i] = K_{i+1}` and
/// hidden widths `hidden[i]`. The linear feature always has `K_0 = n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNEstConfig {
    pub n_in: usize,
    pub m: usize,
    pub n_out: usize,
    pub l: usize,
    /// Feature dims `K_1..K_L` (empty when `l = 0`).
    pub k: Vec<usize>,
    /// Hidden widths `h_1..h_L`.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ResNEstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.m == 0 || self.n_out == 0 {
            return Err(Error::Input("dims must be >= 1".into()));
        }
        if self.k.len() != self.l || self.hidden.len() != self.l {
            return Err(Error::Input(format!(
                "k and hidden must have length l = {}",
                self.l
            )));
        }
        if self.k.iter().chain(&self.hidden).any(|&d| d == 0) {
            return Err(Error::Input("feature and hidden dims must be >= 1".into()));
        }
        Ok(())
    }

    /// Feature dim `K_i` for `i = 0..=L` (`K_0 = n_in`).
    pub fn feature_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.n_in
        } else {
            self.k[i - 1]
        }
    }

    /// Bottleneck condition `M >= K_0 + .. + K_{L-1}`.
    pub fn bottleneck_ok(&self) -> bool {
        self.m >= self.sum_k_below_l()
    }

    /// `K_0 + .. + K_{L-1}`, the width Assumption 4 needs.
    pub fn sum_k_below_l(&self) -> usize {
        (0..self.l).map(|i| self.feature_dim(i)).sum()
    }
}

/// Feature finding weights `phi = {W_0..W_{L-1}, theta_1..theta_L}`. These
/// alone determine every feature `v_0..v_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    /// `W_0..W_{L-1}`; `w[i]` is `M x K_i`.
    pub w: Vec<Matrix>,
    /// `theta_1..theta_L` as block functions (each maps `R^M -> R^{K_i}`).
    pub blocks: Vec<BlockFn>,
}

impl FeatureWeights {
    pub fn l(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.w.first().map_or(0, Matrix::rows)
    }

    /// Extracts features for a batch: `v_0..v_L` plus the partial residual
    /// representations `x_0..x_{L-1}` (all that phi determines).
    pub fn features(&self, x_batch: &Matrix) -> Result<FeatureMatrices> {
        let l = self.l();
        if self.w.len() != l {
            return Err(Error::shape(
                "features",
                format!("{} weight matrices for {} blocks", self.w.len(), l),
            ));
        }
        let mut v = Vec::with_capacity(l + 1);
        let mut x_res = Vec::with_capacity(l);
        v.push(x_batch.clone());
        if l == 0 {
            return Ok(FeatureMatrices { v, x_res });
        }
        if self.w[0].cols() != x_batch.rows() {
            return Err(Error::shape(
                "features",
                format!("W_0 expects {} rows, batch has {}", self.w[0].cols(), x_batch.rows()),
            ));
        }
        let mut x = self.w[0].matmul(x_batch);
        for i in 1..=l {
            let vi = self.blocks[i - 1].apply_batch(&x);
            if i < l {
                let next = x.add(&self.w[i].matmul(&vi));
                x_res.push(std::mem::replace(&mut x, next));
            } else {
                x_res.push(x.clone());
            }
            v.push(vi);
        }
        Ok(FeatureMatrices { v, x_res })
    }
}

/// Full ResNEst weights. The feature finding part is `{w0, w[..L-1], blocks}`;
/// the prediction weights are `W_L` (which is `w0` when `l = 0`, else the last
/// entry of `w`) and `w_out = W_{L+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNEstParams {
    /// `M x N_in` expansion.
    pub w0: Matrix,
    /// `W_1..W_L`; `w[i]` is `M x K_{i+1}`.
    pub w: Vec<Matrix>,
    /// `W_{L+1}`, `N_o x M`.
    pub w_out: Matrix,
    /// `theta_1..theta_L`.
    pub blocks: Vec<BlockFn>,
}

impl ResNEstParams {
    pub fn l(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.w0.rows()
    }

    pub fn n_in(&self) -> usize {
        self.w0.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w_out.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.blocks.len() {
            return Err(Error::shape(
                "ResNEstParams",
                format!("{} residual weights for {} blocks", self.w.len(), self.blocks.len()),
            ));
        }
        let m = self.m();
        if self.w_out.cols() != m {
            return Err(Error::shape(
                "ResNEstParams",
                format!("w_out has {} cols, expected M = {m}", self.w_out.cols()),
            ));
        }
        for (i, (wi, b)) in self.w.iter().zip(&self.blocks).enumerate() {
            b.validate()?;
            if wi.rows() != m || b.in_dim() != m || b.out_dim() != wi.cols() {
                return Err(Error::shape(
                    "ResNEstParams",
                    format!("block {} dimension chain broken", i + 1),
                ));
            }
        }
        Ok(())
    }

    /// The prediction weight `W_L`: `w0` when `l = 0`, else `w[l-1]`.
    pub fn prediction_w_l(&self) -> &Matrix {
        if self.w.is_empty() {
            &self.w0
        } else {
            &self.w[self.w.len() - 1]
        }
    }

    pub fn set_prediction_w_l(&mut self, w_l: Matrix) {
        if self.w.is_empty() {
            self.w0 = w_l;
        } else {
            let last = self.w.len() - 1;
            self.w[last] = w_l;
        }
    }

    /// Clones out the feature finding weights `{W_0..W_{L-1}, theta}`.
    pub fn phi(&self) -> FeatureWeights {
        let l = self.l();
        let mut w = Vec::with_capacity(l);
        if l > 0 {
            w.push(self.w0.clone());
            w.extend(self.w[..l - 1].iter().cloned());
        }
        FeatureWeights {
            w,
            blocks: self.blocks.clone(),
        }
    }
}

/// A-ResNEst weights: per-feature heads `H_0..H_L` plus shared feature
/// finding weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AResNEstParams {
    /// `h[i]` is `N_o x K_i`, `i = 0..=L`.
    pub h: Vec<Matrix>,
    pub phi: FeatureWeights,
}

impl AResNEstParams {
    pub fn l(&self) -> usize {
        self.phi.l()
    }

    pub fn n_out(&self) -> usize {
        self.h.first().map_or(0, Matrix::rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.len() != self.l() + 1 {
            return Err(Error::shape(
                "AResNEstParams",
                format!("{} heads for {} blocks", self.h.len(), self.l()),
            ));
        }
        let n_out = self.n_out();
        if self.h.iter().any(|hi| hi.rows() != n_out) {
            return Err(Error::shape("AResNEstParams", "head row counts differ"));
        }
        Ok(())
    }
}

/// DenseNEst weights: dense functions `Q_1..Q_L` and the single prediction
/// matrix over the final concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNEstParams {
    /// `Q_i : R^{M_{i-1}} -> R^{D_i}`.
    pub blocks: Vec<BlockFn>,
    /// `N_o x M_L`.
    pub w_out: Matrix,
    /// `D_0 = N_in`.
    pub n_in: usize,
}

impl DenseNEstParams {
    pub fn l(&self) -> usize {
        self.blocks.len()
    }

    /// Growth dims `D_1..D_L`.
    pub fn d(&self) -> Vec<usize> {
        self.blocks.iter().map(BlockFn::out_dim).collect()
    }

    /// `M_i = N_in + D_1 + .. + D_i`.
    pub fn m_i(&self, i: usize) -> usize {
        self.n_in + self.blocks[..i].iter().map(BlockFn::out_dim).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.in_dim() != self.m_i(i) {
                return Err(Error::shape(
                    "DenseNEstParams",
                    format!("Q_{} expects input dim {}, chain gives {}", i + 1, b.in_dim(), self.m_i(i)),
                ));
            }
        }
        if self.w_out.cols() != self.m_i(self.l()) {
            return Err(Error::shape(
                "DenseNEstParams",
                format!("w_out has {} cols, M_L = {}", self.w_out.cols(), self.m_i(self.l())),
            ));
        }
        Ok(())
    }
}

/// Architecture of a DenseNEst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseNEstConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub l: usize,
    /// Growth dims `D_1..D_L`.
    pub d: Vec<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl DenseNEstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Input("dims must be >= 1".into()));
        }
        if self.d.len() != self.l || self.hidden.len() != self.l {
            return Err(Error::Input(format!(
                "d and hidden must have length l = {}",
                self.l
            )));
        }
        if self.d.iter().chain(&self.hidden).any(|&x| x == 0) {
            return Err(Error::Input("growth and hidden dims must be >= 1".into()));
        }
        Ok(())
    }

    pub fn m_l(&self) -> usize {
        self.n_in + self.d.iter().sum::<usize>()
    }
}

/// Feature stacks for a batch.
///
/// `v[i]` is `K_i x N` holding `v_i(x^n)` in column `n` (`v[0]` is the input
/// batch itself). `x_res` holds the residual representations in order
/// `x_0, x_1, ...`: forward evaluation fills `x_0..x_L`, while extraction
/// from [`FeatureWeights`] alone fills `x_0..x_{L-1}` (all that phi
/// determines). For a DenseNEst the entries grow: `x_i` is `M_i x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrices {
    pub v: Vec<Matrix>,
    pub x_res: Vec<Matrix>,
}

impl FeatureMatrices {
    /// Number of blocks `L`.
    pub fn l(&self) -> usize {
        self.v.len() - 1
    }

    /// Last feature stack `V_L`.
    pub fn v_last(&self) -> &Matrix {
        self.v.last().expect("v is never empty")
    }

    /// `sum_{i<L} W_i V_i = x_{L-1}`, or `None` when `L = 0` (the sum is
    /// empty). This is the part of the residual representation that is fixed
    /// under prediction-weight changes.
    pub fn phi_prefix_rep(&self) -> Option<&Matrix> {
        let l = self.l();
        if l == 0 {
            None
        } else {
            Some(&self.x_res[l - 1])
        }
    }

    pub fn n_samples(&self) -> usize {
        self.v[0].cols()
    }

    /// `K_0 + .. + K_L`.
    pub fn total_feature_dim(&self) -> usize {
        self.v.iter().map(Matrix::rows).sum()
    }
}

/// Runs a ResNEst forward on a batch, returning predictions and the feature
/// stacks `v_0..v_L`, `x_0..x_L`.
pub fn resnest_forward(
    params: &ResNEstParams,
    x_batch: &Matrix,
) -> Result<(Matrix, FeatureMatrices)> {
    params.validate()?;
    if x_batch.rows() != params.n_in() {
        return Err(Error::shape(
            "resnest_forward",
            format!("batch has {} rows, expected {}", x_batch.rows(), params.n_in()),
        ));
    }
    let l = params.l();
    let mut v = Vec::with_capacity(l + 1);
    let mut x_res = Vec::with_capacity(l + 1);
    v.push(x_batch.clone());
    let mut x = params.w0.matmul(x_batch);
    for i in 1..=l {
        let vi = params.blocks[i - 1].apply_batch(&x);
        let next = x.add(&params.w[i - 1].matmul(&vi));
        x_res.push(std::mem::replace(&mut x, next));
        v.push(vi);
    }
    x_res.push(x);
    let y_hat = params.w_out.matmul(x_res.last().unwrap());
    Ok((y_hat, FeatureMatrices { v, x_res }))
}

/// Evaluates the feature-wise form `y = W_{L+1} sum_i W_i v_i` from frozen
/// features plus the current prediction weights. Equals [`resnest_forward`]
/// by construction.
pub fn output_from_features(params: &ResNEstParams, features: &FeatureMatrices) -> Result<Matrix> {
    if features.v.len() != params.l() + 1 {
        return Err(Error::shape(
            "output_from_features",
            format!("{} feature stacks for L = {}", features.v.len(), params.l()),
        ));
    }
    let w_l = params.prediction_w_l();
    if w_l.cols() != features.v_last().rows() {
        return Err(Error::shape(
            "output_from_features",
            format!("W_L has {} cols, V_L has {} rows", w_l.cols(), features.v_last().rows()),
        ));
    }
    let last = w_l.matmul(features.v_last());
    let rep = match features.phi_prefix_rep() {
        Some(c) => c.add(&last),
        None => last,
    };
    Ok(params.w_out.matmul(&rep))
}

/// Evaluates an A-ResNEst on frozen features: `y = sum_i H_i v_i`.
pub fn aresnest_forward(params: &AResNEstParams, features: &FeatureMatrices) -> Result<Matrix> {
    aresnest_output(&params.h, features)
}

/// Same as [`aresnest_forward`] but over a bare head list, used wherever the
/// heads are being optimized separately from phi.
pub fn aresnest_output(h: &[Matrix], features: &FeatureMatrices) -> Result<Matrix> {
    if h.len() != features.v.len() {
        return Err(Error::shape(
            "aresnest_forward",
            format!("{} heads for {} feature stacks", h.len(), features.v.len()),
        ));
    }
    let n_out = h[0].rows();
    let n = features.n_samples();
    let mut out = Matrix::zeros(n_out, n);
    for (hi, vi) in h.iter().zip(&features.v) {
        if hi.cols() != vi.rows() || hi.rows() != n_out {
            return Err(Error::shape(
                "aresnest_forward",
                format!("head is {}x{}, feature has {} rows", hi.rows(), hi.cols(), vi.rows()),
            ));
        }
        out = out.add(&hi.matmul(vi));
    }
    Ok(out)
}

/// Runs a DenseNEst forward on a batch: `x_i = x_{i-1} (c) Q_i(x_{i-1})`,
/// `y = W_{L+1} x_L`. Features record `v_i = Q_i(x_{i-1})` with `v_0 = x`.
pub fn densenest_forward(
    params: &DenseNEstParams,
    x_batch: &Matrix,
) -> Result<(Matrix, FeatureMatrices)> {
    params.validate()?;
    if x_batch.rows() != params.n_in {
        return Err(Error::shape(
            "densenest_forward",
            format!("batch has {} rows, expected {}", x_batch.rows(), params.n_in),
        ));
    }
    let l = params.l();
    let mut v = Vec::with_capacity(l + 1);
    let mut x_res = Vec::with_capacity(l + 1);
    v.push(x_batch.clone());
    let mut x = x_batch.clone();
    x_res.push(x.clone());
    for i in 1..=l {
        let vi = params.blocks[i - 1].apply_batch(&x);
        x = Matrix::vstack(&[&x, &vi]);
        v.push(vi);
        x_res.push(x.clone());
    }
    let y_hat = params.w_out.matmul(&x);
    Ok((y_hat, FeatureMatrices { v, x_res }))
}

// ── Initialization ──────────────────────────────────────────────────

fn sample_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    // fan-in scaled uniform; entries filled in row-major order
    let bound = scale / (cols as f64).sqrt();
    if bound == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

fn sample_block(
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    activation: Activation,
    scale: f64,
    rng: &mut impl Rng,
) -> BlockFn {
    BlockFn {
        weight_in: sample_matrix(hidden, in_dim, scale, rng),
        weight_out: sample_matrix(out_dim, hidden, scale, rng),
        activation,
    }
}

/// Seeded ResNEst initialization: every weight entry is i.i.d.
/// `uniform(-scale / sqrt(fanin), +scale / sqrt(fanin))`. Draw order is
/// fixed (`w0`, then per block `W_i`, `weight_in`, `weight_out`, then
/// `w_out`), so results are bitwise reproducible.
pub fn init_resnest(config: &ResNEstConfig, seed: u64, scale: f64) -> Result<ResNEstParams> {
    config.validate()?;
    if scale < 0.0 {
        return Err(Error::Input("scale must be >= 0".into()));
    }
    let mut rng = rng::stream(seed, "init/resnest");
    let w0 = sample_matrix(config.m, config.n_in, scale, &mut rng);
    let mut w = Vec::with_capacity(config.l);
    let mut blocks = Vec::with_capacity(config.l);
    for i in 0..config.l {
        w.push(sample_matrix(config.m, config.k[i], scale, &mut rng));
        blocks.push(sample_block(
            config.m,
            config.hidden[i],
            config.k[i],
            config.activation,
            scale,
            &mut rng,
        ));
    }
    let w_out = sample_matrix(config.n_out, config.m, scale, &mut rng);
    Ok(ResNEstParams { w0, w, w_out, blocks })
}

/// Seeded A-ResNEst initialization sharing the layout rules of
/// [`init_resnest`]: phi first (`W_0..W_{L-1}` interleaved with blocks),
/// then heads `H_0..H_L`.
pub fn init_aresnest(config: &ResNEstConfig, seed: u64, scale: f64) -> Result<AResNEstParams> {
    config.validate()?;
    if scale < 0.0 {
        return Err(Error::Input("scale must be >= 0".into()));
    }
    let mut rng = rng::stream(seed, "init/aresnest");
    let mut w = Vec::with_capacity(config.l);
    let mut blocks = Vec::with_capacity(config.l);
    for i in 0..config.l {
        w.push(sample_matrix(config.m, config.feature_dim(i), scale, &mut rng));
        blocks.push(sample_block(
            config.m,
            config.hidden[i],
            config.k[i],
            config.activation,
            scale,
            &mut rng,
        ));
    }
    let h = (0..=config.l)
        .map(|i| sample_matrix(config.n_out, config.feature_dim(i), scale, &mut rng))
        .collect();
    Ok(AResNEstParams {
        h,
        phi: FeatureWeights { w, blocks },
    })
}

/// Seeded DenseNEst initialization; draw order is per block
/// (`weight_in`, `weight_out`) then `w_out`.
pub fn init_densenest(config: &DenseNEstConfig, seed: u64, scale: f64) -> Result<DenseNEstParams> {
    config.validate()?;
    if scale < 0.0 {
        return Err(Error::Input("scale must be >= 0".into()));
    }
    let mut rng = rng::stream(seed, "init/densenest");
    let mut blocks = Vec::with_capacity(config.l);
    let mut m_prev = config.n_in;
    for i in 0..config.l {
        blocks.push(sample_block(
            m_prev,
            config.hidden[i],
            config.d[i],
            config.activation,
            scale,
            &mut rng,
        ));
        m_prev += config.d[i];
    }
    let w_out = sample_matrix(config.n_out, m_prev, scale, &mut rng);
    Ok(DenseNEstParams {
        blocks,
        w_out,
        n_in: config.n_in,
    })
}
