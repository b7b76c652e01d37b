use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Task;

/// Network widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared latent width of every branch.
    pub d_model: usize,
    pub lstm_hidden: usize,
    /// Output channels of the two depth convolutions.
    pub conv_channels: [usize; 2],
    /// Hidden width of the static and PFT dense branches.
    pub fc_hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub head_hidden: usize,
    /// Static feature names left out of the input (e.g. `"nutrient"`).
    pub drop_static: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            lstm_hidden: 64,
            conv_channels: [16, 32],
            fc_hidden: 64,
            heads: 4,
            layers: 2,
            ff_mult: 4,
            head_hidden: 64,
            drop_static: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Narrower network that trains in about a minute on one core.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            lstm_hidden: 16,
            conv_channels: [8, 16],
            fc_hidden: 32,
            head_hidden: 32,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Per-task loss weights by task name; missing tasks weigh 1.
    pub task_weights: BTreeMap<String, f64>,
    /// Weight of the NPP = GPP − AR penalty.
    pub lambda_phys: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Share of the training split held back for early stopping.
    pub val_fraction: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task_weights: BTreeMap::new(),
            lambda_phys: 1.0,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            val_fraction: 0.1,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn weight(&self, task: Task) -> f64 {
        self.task_weights.get(task.name()).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    /// Envelope tolerance as a fraction of the training range.
    pub tau: f64,
    /// Percentile of training latent scores used as the threshold.
    pub quantile: f64,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self { tau: 0.05, quantile: 99.0 }
    }
}

/// Everything a training run is parameterized by; the JSON config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ood: OodConfig,
}

impl Config {
    /// Desk-scale preset: the narrow network with a faster learning rate.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig {
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let t = &self.train;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.d_model == 0 || m.lstm_hidden == 0 || m.fc_hidden == 0 || m.head_hidden == 0 || m.ff_mult == 0 {
            return bad("model widths must be positive".into());
        }
        if m.conv_channels.contains(&0) {
            return bad("conv_channels must be positive".into());
        }
        if m.heads == 0 || m.d_model % m.heads != 0 {
            return bad(format!("d_model {} is not divisible by heads {}", m.d_model, m.heads));
        }
        if m.layers == 0 {
            return bad("fusion needs at least one layer".into());
        }
        for (name, &w) in &t.task_weights {
            if Task::from_str(name).is_err() {
                return bad(format!("unknown task '{name}' in train.task_weights"));
            }
            if !(w >= 0.0) {
                return bad(format!("task weight for {name} must be >= 0"));
            }
        }
        if Task::ALL.iter().all(|&task| t.weight(task) == 0.0) {
            return bad("at least one task weight must be positive".into());
        }
        if !(t.lambda_phys >= 0.0) {
            return bad("lambda_phys must be >= 0".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if t.batch_size == 0 || t.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        let o = &self.ood;
        if !(o.tau >= 0.0) || !(0.0..=100.0).contains(&o.quantile) {
            return bad("ood.tau must be >= 0 and ood.quantile in [0, 100]".into());
        }
        Ok(())
    }
}

/// Model variants of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCnn,
    NoFc,
    NoLstm,
    NoTrans,
    NoPhys,
    BaselineMlp,
    BaselinePinn,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoCnn,
        Variant::NoFc,
        Variant::NoLstm,
        Variant::NoTrans,
        Variant::NoPhys,
        Variant::BaselineMlp,
        Variant::BaselinePinn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCnn => "no_cnn",
            Variant::NoFc => "no_fc",
            Variant::NoLstm => "no_lstm",
            Variant::NoTrans => "no_trans",
            Variant::NoPhys => "no_phys",
            Variant::BaselineMlp => "baseline_mlp",
            Variant::BaselinePinn => "baseline_pinn",
        }
    }

    /// Physics weight actually used for this variant.
    pub fn lambda(self, cfg: &TrainConfig) -> f64 {
        if self == Variant::NoPhys {
            0.0
        } else {
            cfg.lambda_phys
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::BaselineMlp | Variant::BaselinePinn)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
