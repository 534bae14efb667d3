use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::OrderingKind;
use crate::ordernn::DEFAULT_SCALE;
use crate::rolegcn::AdjacencyConfig;

/// Which ordering feeds the role graph, and what trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Seeded random order per sequence.
    None,
    /// Fixed hand-defined ordering.
    Oracle(OrderingKind),
    /// Hard ranks from a frozen, pretrained ball-distance regressor.
    EuclDistEst,
    /// Score network trained jointly through the soft rank.
    E2e,
    /// As `E2e`, with the score network initialized from a pretrained
    /// regressor.
    E2eFinetune,
}

impl Variant {
    /// True when the ordering is soft and the score network is trained.
    pub fn is_soft(self) -> bool {
        matches!(self, Variant::E2e | Variant::E2eFinetune)
    }

    /// Ordering column of the metrics CSV.
    pub fn ordering_label(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Oracle(k) => k.name(),
            Variant::EuclDistEst => "eucl_dist_est",
            Variant::E2e | Variant::E2eFinetune => "learned",
        }
    }

    pub fn family(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Oracle(_) => "oracle",
            Variant::EuclDistEst => "eucl_dist_est",
            Variant::E2e => "e2e",
            Variant::E2eFinetune => "e2e_finetune",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Oracle(k) => write!(f, "oracle({k})"),
            v => f.write_str(v.family()),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("oracle(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Variant::Oracle(inner.trim().parse()?));
        }
        match s {
            "none" => Ok(Variant::None),
            "oracle" => Ok(Variant::Oracle(OrderingKind::BallDistanceMarking)),
            "eucl_dist_est" => Ok(Variant::EuclDistEst),
            "e2e" => Ok(Variant::E2e),
            "e2e_finetune" => Ok(Variant::E2eFinetune),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected none, oracle(<ordering>), eucl_dist_est, e2e or e2e_finetune)"
            ))),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub score_hidden: Vec<usize>,
    /// GCN widths after the 2 input channels.
    pub gcn_channels: Vec<usize>,
    pub decoder_hidden: usize,
    pub kernel_size: usize,
    /// Predict displacements from the last observed position instead of
    /// absolute positions.
    pub predict_offsets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            score_hidden: vec![32, 32],
            gcn_channels: vec![32, 64],
            decoder_hidden: 32,
            kernel_size: 3,
            predict_offsets: false,
        }
    }
}

/// Score network regression onto ball distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Soft-rank regularization strength.
    pub epsilon: f64,
    /// Width of the soft permutation kernel, in rank units.
    pub scale: f64,
    pub normalize_permutation: bool,
    pub adjacency: AdjacencyConfig,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub pretrain: PretrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_data: Option<PathBuf>,
    /// Pretrained checkpoint; required for `e2e_finetune`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Oracle(OrderingKind::BallDistanceMarking),
            epsilon: 1.0,
            scale: DEFAULT_SCALE,
            normalize_permutation: true,
            adjacency: AdjacencyConfig::default(),
            model: ModelConfig::default(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            grad_clip: None,
            seed: 0,
            pretrain: PretrainConfig::default(),
            train_data: None,
            eval_data: None,
            init: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML config; relative data paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.train_data, &mut config.eval_data, &mut config.init].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("epsilon", self.epsilon)?;
        positive("scale", self.scale)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.pretrain.learning_rate >= 0.0 && self.pretrain.learning_rate.is_finite()) {
            return Err(Error::Config("pretrain learning_rate must be >= 0".into()));
        }
        if let Some(c) = self.grad_clip {
            positive("grad_clip", c)?;
        }
        self.adjacency.validate()?;
        let m = &self.model;
        if m.score_hidden.contains(&0) || m.gcn_channels.is_empty() || m.gcn_channels.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if m.decoder_hidden == 0 || m.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("decoder needs a positive width and an odd kernel".into()));
        }
        Ok(())
    }

    /// Like [`ExperimentConfig::validate`], and also requires the init
    /// checkpoint path that `e2e_finetune` depends on.
    pub fn validate_paths(&self) -> Result<()> {
        self.validate()?;
        if self.variant == Variant::E2eFinetune && self.init.is_none() {
            return Err(Error::Config(
                "variant e2e_finetune requires a pretrained checkpoint (init)".into(),
            ));
        }
        Ok(())
    }
}
