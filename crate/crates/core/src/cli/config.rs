//! JSON run configuration shared by every subcommand.
//!
//! Every section and key is optional in the input; unknown keys are
//! rejected. [`RunConfig::resolve`] fills all defaults, and the resolved
//! document is itself a valid input that reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_bars, gen_gmm2d, load_idx, split, DataKind, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nets::{HiddenActivation, ModelArch, OutputActivation};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Gmm2d,
    Bars,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataSource,
    /// Generator seed (gmm2d, bars).
    pub seed: u64,
    pub n_points: Option<usize>,
    pub components: usize,
    pub spread: f64,
    pub h: usize,
    pub w: usize,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: DataSource::Gmm2d,
            seed: 0,
            n_points: None,
            components: 8,
            spread: 1.0,
            h: 8,
            w: 8,
            images: None,
            labels: None,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    /// Derived from the data when absent; must agree with it when present.
    pub input_dim: Option<usize>,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    /// Identity for vector data, sigmoid for images when absent.
    pub output_activation: Option<OutputActivation>,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            input_dim: None,
            latent_dim: 2,
            encoder_hidden: vec![128, 128],
            decoder_hidden: vec![128, 128],
            hidden_activation: HiddenActivation::Tanh,
            output_activation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            log_every: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LipschitzTarget {
    Decoder,
    Encoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seed: u64,
    /// Prior draws decoded for the generation distance.
    pub gen_samples: usize,
    /// β of the evaluation energy distance.
    pub distance_beta: f64,
    pub variance_k: usize,
    pub residual_k: usize,
    pub residual_points: usize,
    pub residual_bins: usize,
    pub lipschitz_points: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_target: LipschitzTarget,
    pub corr_points: usize,
    pub corr_m_ref: usize,
    pub corr_draws: usize,
    pub spectrum_images: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seed: 0,
            gen_samples: 1000,
            distance_beta: 1.0,
            variance_k: 50,
            residual_k: 10,
            residual_points: 200,
            residual_bins: 41,
            lipschitz_points: 1000,
            lipschitz_pairs: 1000,
            lipschitz_target: LipschitzTarget::Decoder,
            corr_points: 200,
            corr_m_ref: 100,
            corr_draws: 32,
            spectrum_images: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub arch: ArchSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// Parameters `sweep` may vary.
pub const SWEEP_PARAMS: [&str; 3] = ["loss.beta", "loss.m_samples", "arch.latent_dim"];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    fn data_shape(&self) -> Result<(usize, DataKind)> {
        let d = &self.data;
        Ok(match d.kind {
            DataSource::Gmm2d => (2, DataKind::Vector),
            DataSource::Bars => (d.h * d.w, DataKind::Image { h: d.h, w: d.w, c: 1 }),
            DataSource::Idx => {
                let path = d
                    .images
                    .as_ref()
                    .ok_or_else(|| Error::config("data.images is required for kind idx"))?;
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                let (_, rows, cols, _) = crate::data::parse_idx_images(&bytes)?;
                let (h, w) = (rows as usize, cols as usize);
                (h * w, DataKind::Image { h, w, c: 1 })
            }
        })
    }

    /// Fills every default and checks cross-section consistency.
    pub fn resolve(mut self) -> Result<Self> {
        let (dim, kind) = self.data_shape()?;
        if self.data.n_points.is_none() && self.data.kind != DataSource::Idx {
            self.data.n_points = Some(match self.data.kind {
                DataSource::Bars => 4000,
                _ => 2000,
            });
        }
        match self.arch.input_dim {
            Some(n) if n != dim => {
                return Err(Error::config(format!(
                    "arch.input_dim {n} does not match the data dimension {dim}"
                )))
            }
            _ => self.arch.input_dim = Some(dim),
        }
        if self.arch.output_activation.is_none() {
            self.arch.output_activation = Some(match kind {
                DataKind::Vector => OutputActivation::Identity,
                DataKind::Image { .. } => OutputActivation::Sigmoid,
            });
        }
        self.model_arch()?.validate()?;
        self.train_config()?.validate()?;
        if !(self.eval.distance_beta > 0.0 && self.eval.distance_beta <= 2.0) {
            return Err(Error::config("eval.distance_beta must lie in (0, 2]"));
        }
        Ok(self)
    }

    pub fn model_arch(&self) -> Result<ModelArch> {
        let a = &self.arch;
        Ok(ModelArch {
            input_dim: a.input_dim.ok_or_else(|| Error::config("config not resolved"))?,
            latent_dim: a.latent_dim,
            encoder_hidden: a.encoder_hidden.clone(),
            decoder_hidden: a.decoder_hidden.clone(),
            hidden_activation: a.hidden_activation,
            output_activation: a
                .output_activation
                .ok_or_else(|| Error::config("config not resolved"))?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: t.seed,
            log_every: t.log_every,
            loss: self.loss.clone(),
            arch: self.model_arch()?,
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        let n = d.n_points.unwrap_or(0);
        match d.kind {
            DataSource::Gmm2d => gen_gmm2d(d.components, d.spread, n, d.seed),
            DataSource::Bars => gen_bars(d.h, d.w, n, d.seed),
            DataSource::Idx => {
                let images = d
                    .images
                    .as_ref()
                    .ok_or_else(|| Error::config("data.images is required for kind idx"))?;
                let ds = load_idx(images, d.labels.as_deref())?;
                match d.n_points {
                    Some(n) if n < ds.len() => {
                        let idx: Vec<usize> = (0..n).collect();
                        Ok(Dataset {
                            x: ds.x.select_rows(&idx)?,
                            labels: ds.labels.map(|l| l[..n].to_vec()),
                            ..ds
                        })
                    }
                    _ => Ok(ds),
                }
            }
        }
    }

    /// `(train, test)` split of [`RunConfig::dataset`].
    pub fn split_dataset(&self) -> Result<(Dataset, Dataset)> {
        split(&self.dataset()?, self.data.test_fraction, self.data.split_seed)
    }

    /// Sets one whitelisted sweep parameter from its textual value.
    pub fn set_sweep_param(&mut self, param: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::config(format!("{param}={value}: {e}"));
        match param {
            "loss.beta" => self.loss.beta = value.parse().map_err(|e| bad(&e))?,
            "loss.m_samples" => self.loss.m_samples = value.parse().map_err(|e| bad(&e))?,
            "arch.latent_dim" => self.arch.latent_dim = value.parse().map_err(|e| bad(&e))?,
            other => {
                return Err(Error::config(format!(
                    "cannot sweep {other}; allowed: {}",
                    SWEEP_PARAMS.join(", ")
                )))
            }
        }
        Ok(())
    }
}
