//! Gated-fusion reranker over first-stage candidates.
//!
//! A text tower projects the pair embedding, a score tower projects the
//! scalar prior, a sigmoid gate conditioned on the raw inputs masks the
//! concatenated projections per dimension, and an output head maps the
//! fused vector to a score in (0, 1).

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;
use crate::prior::{PriorConfig, PriorMode};

pub use model::{triplet_loss, DavinciModel, ModelTape};
pub use train::{
    build_training_set, group_loss, rerank, rerank_features, train, Candidate, TrainOutcome,
    TrainingGroup, TrainingSet, TrainingTriplet, ValidationQuery,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// A1: no prior anywhere in the network.
    SemanticsOnly,
    /// A2: raw retrieval scores instead of rank priors.
    RawPrior,
    /// A3: softmax of retrieval scores instead of rank priors.
    SoftmaxPrior,
    /// A4: one scalar gate driven by the prior, broadcast over all features.
    ScalarGate,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::SemanticsOnly,
        Ablation::RawPrior,
        Ablation::SoftmaxPrior,
        Ablation::ScalarGate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SemanticsOnly => "A1",
            Ablation::RawPrior => "A2",
            Ablation::SoftmaxPrior => "A3",
            Ablation::ScalarGate => "A4",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "a1" | "semantics_only" => Ok(Ablation::SemanticsOnly),
            "a2" | "raw_prior" => Ok(Ablation::RawPrior),
            "a3" | "softmax_prior" => Ok(Ablation::SoftmaxPrior),
            "a4" | "scalar_gate" => Ok(Ablation::ScalarGate),
            _ => Err(Error::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DavinciConfig {
    pub d_enc2: usize,
    pub d_h: usize,
    /// Layers per tower.
    pub depth: usize,
    pub margin: f64,
    pub negatives: usize,
    pub prior: PriorConfig,
    pub ablation: Ablation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for DavinciConfig {
    fn default() -> Self {
        DavinciConfig {
            d_enc2: 256,
            d_h: 256,
            depth: 2,
            margin: 0.1,
            negatives: 4,
            prior: PriorConfig::default(),
            ablation: Ablation::Full,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl DavinciConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config(format!("margin {} must lie in (0, 1)", self.margin)));
        }
        if self.negatives == 0 || self.d_h == 0 || self.d_enc2 == 0 || self.depth == 0 {
            return Err(Error::Config(
                "negatives, d_h, d_enc2 and depth must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.prior.validate()?;
        self.optimizer.validate()
    }

    /// Prior settings after applying the ablation's prior override.
    pub fn effective_prior(&self) -> PriorConfig {
        let mode = match self.ablation {
            Ablation::RawPrior => PriorMode::RawScore,
            Ablation::SoftmaxPrior => PriorMode::Softmax,
            _ => self.prior.mode,
        };
        PriorConfig { mode, ..self.prior }
    }
}
