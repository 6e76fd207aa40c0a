//! Run configuration: one JSON file per run, schema-validated up front.
//! Unknown keys are rejected everywhere so typos fail loudly instead of
//! silently falling back to defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use resnest_core::data::DataSpec;
use resnest_core::models::{DenseNEstConfig, ResNEstConfig};
use resnest_core::optimize::{Problem, TrainSchedule};
use resnest_core::risk::{Dataset, Loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Resnest,
    Aresnest,
    Densenest,
}

/// Where the dataset comes from: an inline generation spec or a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Csv {
        csv_path: PathBuf,
    },
    Spec(DataSpec),
}

/// Knobs for the verification suite; every field has a desk-scale default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    /// Feature-weight samples for the local-minimum experiment (doubles as
    /// the seed budget in counterexample mode).
    pub n_phi: usize,
    /// Prediction-weight starts per feature sample.
    pub n_inits: usize,
    /// Random triples for the lower-bound battery.
    pub n_triples: usize,
    /// Zero-prediction points for the indefiniteness battery.
    pub n_s_points: usize,
    /// Random points for the never-NSD scan.
    pub n_scan: usize,
    /// Training runs for the saddle probe.
    pub n_runs: usize,
    /// Prefix length for the monotone-blocks experiment.
    pub l_beta: usize,
    /// Random DenseNEsts and inputs for the embedding check.
    pub n_embed_models: usize,
    pub n_embed_inputs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_phi: 20,
            n_inits: 20,
            n_triples: 120,
            n_s_points: 20,
            n_scan: 100,
            n_runs: 40,
            l_beta: 1,
            n_embed_models: 10,
            n_embed_inputs: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Parsed against `model` (ResNEst/A-ResNEst architectures share one
    /// schema; DenseNEsts have their own).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<serde_json::Value>,
    /// Separate DenseNEst architecture for checks that need both families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_architecture: Option<DenseNEstConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<TrainSchedule>,
    pub data: DataSource,
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyOptions>,
}

fn default_loss() -> Loss {
    Loss::Squared
}

fn default_init_scale() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    /// The ResNEst architecture, required by most commands.
    pub fn resnest_architecture(&self) -> Result<ResNEstConfig> {
        let value = self
            .architecture
            .clone()
            .context("config is missing 'architecture'")?;
        let arch: ResNEstConfig =
            serde_json::from_value(value).context("invalid ResNEst architecture")?;
        arch.validate()?;
        Ok(arch)
    }

    /// The DenseNEst architecture: `dense_architecture`, or `architecture`
    /// when the model is a DenseNEst, or one derived from the ResNEst dims
    /// (`D_i = K_i`).
    pub fn densenest_architecture(&self) -> Result<DenseNEstConfig> {
        if let Some(d) = &self.dense_architecture {
            d.validate()?;
            return Ok(d.clone());
        }
        if self.model == ModelKind::Densenest {
            let value = self
                .architecture
                .clone()
                .context("config is missing 'architecture'")?;
            let arch: DenseNEstConfig =
                serde_json::from_value(value).context("invalid DenseNEst architecture")?;
            arch.validate()?;
            return Ok(arch);
        }
        let r = self.resnest_architecture()?;
        let derived = DenseNEstConfig {
            n_in: r.n_in,
            n_out: r.n_out,
            l: r.l,
            d: r.k.clone(),
            hidden: r.hidden.clone(),
            activation: r.activation,
        };
        derived.validate()?;
        Ok(derived)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Spec(spec) => Ok(resnest_core::data::generate(spec)?),
            DataSource::Csv { csv_path } => Ok(resnest_core::data::read_csv(csv_path)?),
        }
    }

    pub fn data_spec(&self) -> Result<&DataSpec> {
        match &self.data {
            DataSource::Spec(spec) => Ok(spec),
            DataSource::Csv { .. } => bail!("this command needs an inline data spec, not a csv path"),
        }
    }

    pub fn schedule_or_default(&self) -> TrainSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(resnest_core::verify::default_pphi_schedule)
    }

    pub fn verify_options(&self) -> VerifyOptions {
        self.verify.clone().unwrap_or_default()
    }

    /// Echo of the effective configuration for report provenance.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
