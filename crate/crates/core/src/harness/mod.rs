//! Experiment configuration and the generate / train / eval / ablate /
//! gradcheck commands.
//!
//! Every random draw derives from the master `seed`: the dataset from its
//! `data` sub-stream, parameters from `init`, batches from `sampling` and the
//! single-shot gallery draws from `eval`.

mod ablate;
mod gradcheck;
mod run;

pub use ablate::{cmd_ablate, AblationCell, AblationRow, AblationSummary, AblationTable, GridSpec};
pub use gradcheck::{cmd_gradcheck, run_gradcheck, GradTerm, GradcheckConfig, GradcheckReport, TermCheck};
pub use run::{
    build_retrieval_set, cmd_eval, cmd_generate, cmd_train, embed, epoch_trace, evaluate, evaluate_state, generate,
    train_run, EvalArtifacts, GenerateSummary, TrainArtifacts,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evalkit::{Direction, MetricsReport};
use crate::model::TrainConfig;
use crate::rng;
use crate::synthgen::GeneratorConfig;

/// Which representation retrieval runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    /// Encoder output.
    Raw,
    /// Encoder output through the normalizer in eval mode.
    #[default]
    Neck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub direction: Direction,
    pub features: FeatureSpace,
    pub rerank: bool,
    pub k1: usize,
    pub k2: usize,
    pub lambda_rr: f64,
    /// Single-shot gallery draws averaged into one report.
    pub trials: usize,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            direction: Direction::I2v,
            features: FeatureSpace::default(),
            rerank: false,
            k1: 20,
            k2: 6,
            lambda_rr: 0.3,
            trials: 10,
            histogram_bins: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("eval.trials", "must be positive"));
        }
        if self.histogram_bins == 0 {
            return Err(invalid("eval.histogram_bins", "must be positive"));
        }
        if self.k2 == 0 || self.k1 <= self.k2 {
            return Err(invalid("eval.k1", "need k1 > k2 >= 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda_rr) {
            return Err(invalid("eval.lambda_rr", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One experiment, read from TOML.
///
/// ```toml
/// seed = 7
/// out_dir = "runs/reference"
///
/// [generator]
/// num_identities = 70
/// train_fraction = 0.7142857142857143
///
/// [train]
/// steps = 200
/// [train.terms]
/// mqr = false
///
/// [eval]
/// direction = "i2v"
/// ```
///
/// Omitted keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `generator.seed` must stay unset: the dataset seed comes from `seed`.
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::error::Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.seed != 0 {
            return Err(invalid("generator.seed", "set the top-level `seed` instead"));
        }
        self.generator.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.gradcheck.validate()
    }

    /// The generator config with its seed taken from the `data` sub-stream.
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: rng::substream_seed(self.seed, rng::DATA),
            ..self.generator.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Mean loss terms over the steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub id: f64,
    pub mtc: Option<f64>,
    pub center: Option<f64>,
    pub mqr: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub trace: Vec<EpochRecord>,
    /// Total loss of the first and last step.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub metrics: Vec<MetricsReport>,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nstep = 3").is_err());
    }

    #[test]
    fn bad_train_fraction_names_the_field() {
        let err = ExperimentConfig::from_toml("[generator]\ntrain_fraction = 1.5").unwrap_err();
        assert!(err.to_string().contains("train_fraction"), "{err}");
    }

    #[test]
    fn generator_seed_is_rejected() {
        let err = ExperimentConfig::from_toml("[generator]\nseed = 4").unwrap_err();
        assert!(err.to_string().contains("generator.seed"));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig {
            seed: 99,
            ..ExperimentConfig::default()
        };
        cfg.train.terms.mqr = false;
        cfg.eval.direction = Direction::V2i;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
