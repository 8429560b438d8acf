//! Run configuration, read from TOML with every field defaulted.

use std::path::Path;

use advshap::attacks::{FillMode, L2AttackConfig, LinfAttackConfig, NormKind, PgdConfig};
use advshap::components::{ExtractionConfig, GammaSchedule};
use advshap::interaction::TaylorConfig;
use advshap::seeding::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a run depends on. Reports embed a copy, so a rerun with the
/// embedded config reproduces every number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every stage draws a seed derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainSection,
    pub extend: ExtendConfig,
    pub attack: AttackSection,
    pub attribute: AttributeSection,
    pub decompose: DecomposeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    /// Side of the square base images, before extension.
    pub size: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Inner maximization of the adversarially trained model.
    pub adversarial: PgdConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtendConfig {
    pub beta: f64,
    pub fill: FillMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub l2: L2AttackConfig,
    pub linf: LinfAttackConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeSection {
    /// Regions per side.
    pub l: usize,
    pub norms: Vec<NormKind>,
    /// Regions up to this count are attributed exactly; more are sampled.
    pub exact_max_players: usize,
    /// Draws per coalition size when sampling.
    pub samples_t: usize,
    /// Test-split indices.
    pub images: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSection {
    /// Side of the square super-pixels that form the units.
    pub super_pixel: usize,
    pub q: usize,
    pub k: usize,
    pub samples_t: usize,
    pub m_tilde_fraction: f64,
    /// Fraction of candidates above `γ` in the first round.
    pub gamma_first: f64,
    /// The same for later rounds.
    pub gamma_later: f64,
    pub coverage_stop: f64,
    /// Largest component, in super-pixels.
    pub max_size: usize,
    pub max_rounds: usize,
    pub pin_nearest: bool,
    pub images: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            train: TrainSection::default(),
            extend: ExtendConfig::default(),
            attack: AttackSection::default(),
            attribute: AttributeSection::default(),
            decompose: DecomposeSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 600,
            test_count: 200,
            size: 10,
            num_classes: 3,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = advshap::model::TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adversarial: PgdConfig::default(),
        }
    }
}

impl Default for ExtendConfig {
    fn default() -> Self {
        Self {
            beta: 1.0 / 6.0,
            fill: FillMode::Replicate,
        }
    }
}

impl Default for AttributeSection {
    fn default() -> Self {
        Self {
            l: 8,
            norms: vec![NormKind::L2, NormKind::Linf],
            exact_max_players: 16,
            samples_t: 4,
            images: vec![0, 1, 2, 3],
        }
    }
}

impl Default for DecomposeSection {
    fn default() -> Self {
        let e = ExtractionConfig::default();
        let (gamma_first, gamma_later) = match e.gamma {
            GammaSchedule::Quantile { first, later } => (first, later),
            GammaSchedule::Absolute { .. } => (0.2, 0.5),
        };
        Self {
            super_pixel: 4,
            q: e.q,
            k: e.taylor.k,
            samples_t: e.taylor.samples_t,
            m_tilde_fraction: e.m_tilde_fraction,
            gamma_first,
            gamma_later,
            coverage_stop: e.coverage_stop,
            max_size: e.max_size,
            max_rounds: e.max_rounds,
            pin_nearest: e.pin_nearest,
            images: vec![0, 1, 2, 3],
        }
    }
}

/// Stages that draw their own seed from the master seed.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Data = 1,
    Init = 2,
    Train = 3,
    Attribute = 4,
    Decompose = 5,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.data.test_count == 0 || self.data.train_count == 0 {
            return bad("data.train_count and data.test_count must be positive");
        }
        if !(self.extend.beta > 0.0) {
            return bad("extend.beta must be positive");
        }
        if self.attribute.l == 0 || self.attribute.norms.is_empty() {
            return bad("attribute.l must be positive and attribute.norms nonempty");
        }
        let d = &self.decompose;
        for (name, v) in [("gamma_first", d.gamma_first), ("gamma_later", d.gamma_later), ("m_tilde_fraction", d.m_tilde_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("decompose.{name} must lie in [0, 1]"));
            }
        }
        if d.super_pixel == 0 || d.k == 0 || d.samples_t == 0 {
            return bad("decompose.super_pixel, k and samples_t must be positive");
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, &[stage as u64])
    }

    pub fn train_config(&self) -> advshap::model::TrainConfig {
        advshap::model::TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.stage_seed(Stage::Train),
        }
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        let d = &self.decompose;
        ExtractionConfig {
            q: d.q,
            gamma: GammaSchedule::Quantile {
                first: d.gamma_first,
                later: d.gamma_later,
            },
            max_size: d.max_size,
            coverage_stop: d.coverage_stop,
            max_rounds: d.max_rounds,
            m_tilde_fraction: d.m_tilde_fraction,
            pin_nearest: d.pin_nearest,
            taylor: TaylorConfig {
                k: d.k,
                samples_t: d.samples_t,
            },
        }
    }
}
