//! Turns first-stage scores into rank-based confidence priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::RetrievalList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// `p = lambda^rank`
    #[default]
    ExpRank,
    /// Retrieval score passed through.
    RawScore,
    /// Softmax of the scores over the candidate list.
    Softmax,
}

impl std::str::FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_rank" | "exp-rank" => Ok(PriorMode::ExpRank),
            "raw_score" | "raw-score" | "raw" => Ok(PriorMode::RawScore),
            "softmax" => Ok(PriorMode::Softmax),
            _ => Err(Error::Config(format!("unknown prior mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub lambda_decay: f64,
    pub mode: PriorMode,
    pub k: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            lambda_decay: 0.95,
            mode: PriorMode::ExpRank,
            k: 300,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_decay > 0.0 && self.lambda_decay < 1.0) {
            return Err(Error::Config(format!(
                "lambda_decay = {} must lie in (0, 1)",
                self.lambda_decay
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Offset below the list minimum given to an injected item in the
/// score-based modes.
pub const INJECTED_SCORE_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub doc_id: String,
    pub rank: usize,
    pub prior: f64,
    pub injected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorList {
    pub entries: Vec<PriorEntry>,
}

impl PriorList {
    pub fn get(&self, doc_id: &str) -> Option<&PriorEntry> {
        self.entries.iter().find(|e| e.doc_id == doc_id)
    }
}

/// 1-based positions in the (already ordered) list.
pub fn ranks_from_scores(scores: &RetrievalList) -> Vec<(String, usize)> {
    scores
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.doc_id.clone(), i + 1))
        .collect()
}

pub fn prior_from_rank(config: &PriorConfig, rank: usize) -> Result<f64> {
    if rank < 1 {
        return Err(Error::Validation("ranks start at 1".into()));
    }
    Ok(config.lambda_decay.powf(rank as f64))
}

/// Priors for every listed candidate, plus `injected` at rank `k + 1` when it
/// is not already in the list.
pub fn priors_for_candidates(
    config: &PriorConfig,
    scores: &RetrievalList,
    injected: Option<&str>,
) -> Result<PriorList> {
    config.validate()?;
    let mut items: Vec<(String, usize, f64, bool)> = scores
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.doc_id.clone(), i + 1, e.score, false))
        .collect();
    if let Some(gold) = injected {
        if scores.position(gold).is_none() {
            let floor = items.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
            let score = if floor.is_finite() { floor - INJECTED_SCORE_GAP } else { 0.0 };
            items.push((gold.to_string(), scores.k.max(items.len()) + 1, score, true));
        }
    }
    let priors: Vec<f64> = match config.mode {
        PriorMode::ExpRank => items
            .iter()
            .map(|x| prior_from_rank(config, x.1))
            .collect::<Result<_>>()?,
        PriorMode::RawScore => items.iter().map(|x| x.2).collect(),
        PriorMode::Softmax => {
            let max = items.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = items.iter().map(|x| (x.2 - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    };
    if let Some(bad) = priors.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("prior of {}", items[bad].0)));
    }
    Ok(PriorList {
        entries: items
            .into_iter()
            .zip(priors)
            .map(|((doc_id, rank, _, injected), prior)| PriorEntry {
                doc_id,
                rank,
                prior,
                injected,
            })
            .collect(),
    })
}
