//! Run configuration files (TOML). Every key is optional in the file; missing
//! keys take built-in defaults, and command-line flags override both.

use std::path::{Path, PathBuf};

use gae_core::cir::{CirSchedule, ScheduleMode, StepPoint};
use gae_core::model::{GaeConfig, Nonlinearity};
use gae_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cir: CirSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_dim: Option<usize>,
    pub num_factors: Option<usize>,
    pub num_mappings: Option<usize>,
    pub nonlinearity: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub input_dropout_rate: Option<f64>,
    pub mapping_sparsity_coeff: Option<f64>,
    pub factor_sparsity_coeff: Option<f64>,
    pub weight_decay_coeff: Option<f64>,
    pub max_weight_norm: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub filter_norm_penalty_coeff: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirSection {
    pub enabled: Option<bool>,
    pub mode: Option<String>,
    pub lambda_max: Option<f64>,
    pub k_max: Option<usize>,
    pub ramp_epochs: Option<usize>,
    pub step_points: Option<Vec<StepPoint>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

pub const DEFAULT_NUM_FACTORS: usize = 128;
pub const DEFAULT_NUM_MAPPINGS: usize = 32;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;

/// Fully merged configuration of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` means "take it from the training data".
    pub input_dim: Option<usize>,
    pub num_factors: usize,
    pub num_mappings: usize,
    pub nonlinearity: Nonlinearity,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub no_cir: bool,
}

pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {}", e.message())))
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
        .map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
}

impl RunConfig {
    pub fn merge(file: ConfigFile, over: &Overrides) -> Result<Self, CliError> {
        let defaults = TrainConfig::default();
        let t = file.train;
        let c = file.cir;
        let nonlinearity = match file.model.nonlinearity.as_deref() {
            None => Nonlinearity::default(),
            Some(s) => s
                .parse()
                .map_err(|_| CliError::usage(format!("model.nonlinearity: unknown value '{s}'")))?,
        };
        let mode = match c.mode.as_deref() {
            None | Some("linear") => ScheduleMode::Linear,
            Some("stepwise") => ScheduleMode::Stepwise,
            Some(other) => {
                return Err(CliError::usage(format!("cir.mode: unknown value '{other}'")))
            }
        };
        let epochs = over.epochs.or(t.epochs).unwrap_or(defaults.epochs);
        let cir = match mode {
            ScheduleMode::Linear => CirSchedule {
                mode,
                lambda_max: c.lambda_max.unwrap_or(defaults.cir.lambda_max),
                k_max: c.k_max.unwrap_or(defaults.cir.k_max),
                ramp_epochs: c.ramp_epochs.unwrap_or(defaults.cir.ramp_epochs),
                step_points: c.step_points.unwrap_or_default(),
            },
            ScheduleMode::Stepwise => {
                let base = CirSchedule::default_stepwise(epochs);
                CirSchedule {
                    mode,
                    lambda_max: c.lambda_max.unwrap_or(base.lambda_max),
                    k_max: c.k_max.unwrap_or(base.k_max),
                    ramp_epochs: c.ramp_epochs.unwrap_or(base.ramp_epochs),
                    step_points: c.step_points.unwrap_or(base.step_points),
                }
            }
        };
        let mut train = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            epochs,
            input_dropout_rate: t.input_dropout_rate.unwrap_or(defaults.input_dropout_rate),
            mapping_sparsity_coeff: t
                .mapping_sparsity_coeff
                .unwrap_or(defaults.mapping_sparsity_coeff),
            factor_sparsity_coeff: t
                .factor_sparsity_coeff
                .unwrap_or(defaults.factor_sparsity_coeff),
            weight_decay_coeff: t.weight_decay_coeff.unwrap_or(defaults.weight_decay_coeff),
            max_weight_norm: t.max_weight_norm.or(defaults.max_weight_norm),
            grad_clip_norm: t.grad_clip_norm.or(defaults.grad_clip_norm),
            filter_norm_penalty_coeff: t
                .filter_norm_penalty_coeff
                .unwrap_or(defaults.filter_norm_penalty_coeff),
            cir_enabled: c.enabled.unwrap_or(defaults.cir_enabled),
            cir,
            seed: over.seed.or(file.seed).unwrap_or(defaults.seed),
        };
        if over.no_cir {
            train.cir_enabled = false;
            train.cir.lambda_max = 0.0;
        }
        train
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let checkpoint_every = over
            .checkpoint_every
            .or(t.checkpoint_every)
            .unwrap_or(DEFAULT_CHECKPOINT_EVERY);
        if checkpoint_every == 0 {
            return Err(CliError::usage("train.checkpoint_every must be positive"));
        }
        Ok(RunConfig {
            input_dim: file.model.input_dim,
            num_factors: file.model.num_factors.unwrap_or(DEFAULT_NUM_FACTORS),
            num_mappings: file.model.num_mappings.unwrap_or(DEFAULT_NUM_MAPPINGS),
            nonlinearity,
            train,
            checkpoint_every,
            data: over.data.clone().or(file.data.train),
            output_dir: over
                .output_dir
                .clone()
                .or(file.output.dir)
                .unwrap_or_else(|| PathBuf::from("runs/default")),
        })
    }

    pub fn gae_config(&self, data_dim: usize) -> Result<GaeConfig, CliError> {
        if let Some(dim) = self.input_dim {
            if dim != data_dim {
                return Err(CliError::incompatible(format!(
                    "model.input_dim is {dim} but the training data has {data_dim} pixels per image"
                )));
            }
        }
        GaeConfig::new(data_dim, self.num_factors, self.num_mappings, self.nonlinearity)
            .map_err(|e| CliError::usage(e.to_string()))
    }

    /// The effective configuration as a config document that parses back to
    /// the same run.
    pub fn to_toml(&self, input_dim: usize) -> String {
        let doc = EffectiveDoc {
            seed: self.train.seed,
            model: EffectiveModel {
                input_dim,
                num_factors: self.num_factors,
                num_mappings: self.num_mappings,
                nonlinearity: self.nonlinearity.to_string(),
            },
            train: EffectiveTrain {
                learning_rate: self.train.learning_rate,
                batch_size: self.train.batch_size,
                epochs: self.train.epochs,
                input_dropout_rate: self.train.input_dropout_rate,
                mapping_sparsity_coeff: self.train.mapping_sparsity_coeff,
                factor_sparsity_coeff: self.train.factor_sparsity_coeff,
                weight_decay_coeff: self.train.weight_decay_coeff,
                max_weight_norm: self.train.max_weight_norm,
                grad_clip_norm: self.train.grad_clip_norm,
                filter_norm_penalty_coeff: self.train.filter_norm_penalty_coeff,
                checkpoint_every: self.checkpoint_every,
            },
            cir: EffectiveCir {
                enabled: self.train.cir_enabled,
                mode: match self.train.cir.mode {
                    ScheduleMode::Linear => "linear".into(),
                    ScheduleMode::Stepwise => "stepwise".into(),
                },
                lambda_max: self.train.cir.lambda_max,
                k_max: self.train.cir.k_max,
                ramp_epochs: self.train.cir.ramp_epochs,
                step_points: self.train.cir.step_points.clone(),
            },
            data: EffectiveData {
                train: self.data.clone(),
            },
            output: EffectiveOutput {
                dir: self.output_dir.clone(),
            },
        };
        let mut text = String::from("# effective configuration of this run\n");
        for (key, value) in [
            ("train.max_weight_norm", self.train.max_weight_norm),
            ("train.grad_clip_norm", self.train.grad_clip_norm),
        ] {
            if value.is_none() {
                text.push_str(&format!("# {key}: none\n"));
            }
        }
        text.push_str(&toml::to_string(&doc).expect("config serializes"));
        text
    }
}

#[derive(Serialize)]
struct EffectiveDoc {
    seed: u64,
    model: EffectiveModel,
    train: EffectiveTrain,
    cir: EffectiveCir,
    data: EffectiveData,
    output: EffectiveOutput,
}

#[derive(Serialize)]
struct EffectiveModel {
    input_dim: usize,
    num_factors: usize,
    num_mappings: usize,
    nonlinearity: String,
}

#[derive(Serialize)]
struct EffectiveTrain {
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    input_dropout_rate: f64,
    mapping_sparsity_coeff: f64,
    factor_sparsity_coeff: f64,
    weight_decay_coeff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_weight_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_clip_norm: Option<f64>,
    filter_norm_penalty_coeff: f64,
    checkpoint_every: usize,
}

#[derive(Serialize)]
struct EffectiveCir {
    enabled: bool,
    mode: String,
    lambda_max: f64,
    k_max: usize,
    ramp_epochs: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    step_points: Vec<StepPoint>,
}

#[derive(Serialize)]
struct EffectiveData {
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
}

#[derive(Serialize)]
struct EffectiveOutput {
    dir: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::merge(parse_config("").unwrap(), &Overrides::default()).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.num_factors, DEFAULT_NUM_FACTORS);
        assert_eq!(cfg.checkpoint_every, DEFAULT_CHECKPOINT_EVERY);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[train]\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("learning_rat"), "{}", err.message);
        let err = parse_config("[trian]\n").unwrap_err();
        assert!(err.message.contains("trian"), "{}", err.message);
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config("seed = 3\n[train]\nepochs = 10\n[cir]\nlambda_max = 0.5\n").unwrap();
        let over = Overrides {
            seed: Some(9),
            no_cir: true,
            ..Overrides::default()
        };
        let cfg = RunConfig::merge(file, &over).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.epochs, 10);
        assert!(!cfg.train.cir_enabled);
        assert_eq!(cfg.train.cir.lambda_max, 0.0);
    }

    #[test]
    fn effective_config_round_trips() {
        let file = parse_config(
            "seed = 4\n[model]\nnum_factors = 16\nnonlinearity = \"tanh\"\n[train]\ngrad_clip_norm = 5.0\n[cir]\nmode = \"stepwise\"\n",
        )
        .unwrap();
        let cfg = RunConfig::merge(file, &Overrides::default()).unwrap();
        let text = cfg.to_toml(64);
        let again = RunConfig::merge(parse_config(&text).unwrap(), &Overrides::default()).unwrap();
        assert_eq!(again.input_dim, Some(64));
        assert_eq!(RunConfig { input_dim: None, ..again }, cfg);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let file = parse_config("[train]\nlearning_rate = -1.0\n").unwrap();
        assert_eq!(RunConfig::merge(file, &Overrides::default()).unwrap_err().code, 2);
        let file = parse_config("[model]\nnonlinearity = \"relu\"\n").unwrap();
        assert_eq!(RunConfig::merge(file, &Overrides::default()).unwrap_err().code, 2);
    }

    #[test]
    fn reference_config_parses() {
        let text = include_str!("../../../reference.cfg");
        RunConfig::merge(parse_config(text).unwrap(), &Overrides::default()).unwrap();
    }
}
