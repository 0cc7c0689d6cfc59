//! Train/validation/test query splits and the per-query admissible corpus.
//!
//! In inductive mode an evaluation query may only be answered from documents
//! published strictly before it (day granularity) that are not themselves
//! evaluation documents. Evaluation queries whose gold citation falls outside
//! that set are dropped and counted.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Query};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitStrategy {
    ByDate,
    ByRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub strategy: SplitStrategy,
    /// Also apply the temporal filter to training queries' candidate sets.
    pub filter_training: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::Inductive,
            val_fraction: 0.1,
            test_fraction: 0.2,
            strategy: SplitStrategy::ByDate,
            filter_training: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.val_fraction) || !in_unit(self.test_fraction) {
            return Err(Error::Config(
                "val_fraction and test_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config(
                "val_fraction + test_fraction must be below 1".into(),
            ));
        }
        if self.mode == SplitMode::Inductive && matches!(self.strategy, SplitStrategy::ByRandom { .. })
        {
            return Err(Error::Config(
                "random splits are only available in transductive mode".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    /// Queries whose gold id is not a corpus document (any split).
    pub unresolved_gold: usize,
    /// Evaluation queries whose gold is not admissible.
    pub val: usize,
    pub test: usize,
}

/// Which documents a single query may retrieve.
#[derive(Debug, Clone, Copy)]
pub struct Admissibility<'a> {
    before: Option<NaiveDate>,
    excluded: Option<&'a BTreeSet<String>>,
    /// The query's own source; a paper never cites itself.
    source: Option<&'a str>,
}

impl Admissibility<'_> {
    pub fn admits(&self, doc_id: &str, date: NaiveDate) -> bool {
        self.before.is_none_or(|cutoff| date < cutoff)
            && self.excluded.is_none_or(|ex| !ex.contains(doc_id))
            && self.source != Some(doc_id)
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub mode: SplitMode,
    pub train: Vec<Query>,
    pub val: Vec<Query>,
    pub test: Vec<Query>,
    pub dropped: DropCounts,
    /// Documents admissible for every evaluation query at once (all documents
    /// in transductive mode).
    pub corpus_ids: BTreeSet<String>,
    eval_sources: BTreeSet<String>,
    doc_dates: BTreeMap<String, NaiveDate>,
    membership: BTreeMap<String, SplitName>,
    filter_training: bool,
}

/// Splits `queries` and, in inductive mode, enforces the disjointness and
/// temporal constraints on evaluation queries.
pub fn build_split(corpus: &Corpus, queries: &[Query], config: &SplitConfig) -> Result<SplitResult> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::Validation("no queries to split".into()));
    }

    let mut dropped = DropCounts::default();
    let mut ordered: Vec<Query> = queries
        .iter()
        .filter(|q| {
            let ok = corpus.contains(&q.gold_cited_id);
            if !ok {
                dropped.unresolved_gold += 1;
            }
            ok
        })
        .cloned()
        .collect();
    match config.strategy {
        SplitStrategy::ByDate => ordered.sort_by(|a, b| {
            a.pub_date
                .cmp(&b.pub_date)
                .then_with(|| a.query_id.cmp(&b.query_id))
        }),
        SplitStrategy::ByRandom { seed } => {
            ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
            ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }

    let n = ordered.len();
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let n_val = (n as f64 * config.val_fraction).round() as usize;
    if n_test + n_val == 0 || n_test + n_val > n {
        return Err(Error::Validation(format!(
            "{n} resolvable queries cannot be split with fractions {}/{}",
            config.val_fraction, config.test_fraction
        )));
    }
    let test = ordered.split_off(n - n_test);
    let val = ordered.split_off(n - n_test - n_val);
    let train = ordered;

    let doc_dates: BTreeMap<String, NaiveDate> = corpus
        .documents()
        .map(|d| (d.doc_id.clone(), d.pub_date))
        .collect();

    let mut result = SplitResult {
        mode: config.mode,
        train,
        val: Vec::new(),
        test: Vec::new(),
        dropped,
        corpus_ids: BTreeSet::new(),
        eval_sources: BTreeSet::new(),
        doc_dates,
        membership: BTreeMap::new(),
        filter_training: config.filter_training,
    };

    if config.mode == SplitMode::Inductive {
        result.eval_sources = val
            .iter()
            .chain(&test)
            .filter_map(|q| q.source_id.clone())
            .filter(|id| corpus.contains(id))
            .collect();
    }
    let (val, dropped_val) = result.retain_reachable(val);
    let (test, dropped_test) = result.retain_reachable(test);
    result.dropped.val = dropped_val;
    result.dropped.test = dropped_test;
    if val.is_empty() && test.is_empty() {
        return Err(Error::Validation(format!(
            "every evaluation query was dropped ({dropped_val} val, {dropped_test} test): \
             no gold citation is admissible under the {:?} constraints",
            config.mode
        )));
    }
    result.val = val;
    result.test = test;

    result.corpus_ids = match config.mode {
        SplitMode::Transductive => result.doc_dates.keys().cloned().collect(),
        SplitMode::Inductive => {
            let earliest = result.val.iter().chain(&result.test).map(|q| q.pub_date).min();
            let global = Admissibility {
                before: earliest,
                excluded: Some(&result.eval_sources),
                source: None,
            };
            result
                .doc_dates
                .iter()
                .filter(|(id, &date)| global.admits(id, date))
                .map(|(id, _)| id.clone())
                .collect()
        }
    };

    for (name, list) in [
        (SplitName::Train, &result.train),
        (SplitName::Val, &result.val),
        (SplitName::Test, &result.test),
    ] {
        for q in list {
            result.membership.insert(q.query_id.clone(), name);
        }
    }
    Ok(result)
}

impl SplitResult {
    fn rule<'a>(&'a self, query: &'a Query, split: SplitName) -> Admissibility<'a> {
        let source = query.source_id.as_deref();
        match (self.mode, split) {
            (SplitMode::Transductive, _) => Admissibility {
                before: None,
                excluded: None,
                source,
            },
            (SplitMode::Inductive, SplitName::Train) if !self.filter_training => Admissibility {
                before: None,
                excluded: Some(&self.eval_sources),
                source,
            },
            (SplitMode::Inductive, _) => Admissibility {
                before: Some(query.pub_date),
                excluded: Some(&self.eval_sources),
                source,
            },
        }
    }

    fn retain_reachable(&self, queries: Vec<Query>) -> (Vec<Query>, usize) {
        let before = queries.len();
        let kept: Vec<Query> = queries
            .into_iter()
            .filter(|q| {
                let rule = self.rule(q, SplitName::Test);
                rule.admits(&q.gold_cited_id, self.doc_dates[&q.gold_cited_id])
            })
            .collect();
        let dropped = before - kept.len();
        (kept, dropped)
    }

    pub fn split_of(&self, query_id: &str) -> Option<SplitName> {
        self.membership.get(query_id).copied()
    }

    pub fn queries(&self, split: SplitName) -> &[Query] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// Evaluation-set source documents removed from every candidate set.
    pub fn eval_sources(&self) -> &BTreeSet<String> {
        &self.eval_sources
    }

    /// Admissibility rule for a query of this split.
    pub fn admissibility<'a>(&'a self, query: &'a Query) -> Result<Admissibility<'a>> {
        let split = self
            .split_of(&query.query_id)
            .ok_or_else(|| Error::not_found("query", &query.query_id))?;
        Ok(self.rule(query, split))
    }

    /// Ids of every document the query may retrieve.
    pub fn admissible_corpus(&self, query: &Query) -> Result<BTreeSet<String>> {
        let rule = self.admissibility(query)?;
        Ok(self
            .doc_dates
            .iter()
            .filter(|(id, &date)| rule.admits(id, date))
            .map(|(id, _)| id.clone())
            .collect())
    }

    pub fn manifest(&self, config: &SplitConfig) -> SplitManifest {
        let ids = |qs: &[Query]| qs.iter().map(|q| q.query_id.clone()).collect();
        SplitManifest {
            mode: self.mode,
            strategy: config.strategy,
            filter_training: self.filter_training,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
            dropped: self.dropped.clone(),
            corpus_size: self.corpus_ids.len(),
            documents_total: self.doc_dates.len(),
            eval_sources: self.eval_sources.len(),
        }
    }
}

/// Serializable summary of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub strategy: SplitStrategy,
    pub filter_training: bool,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub dropped: DropCounts,
    pub corpus_size: usize,
    pub documents_total: usize,
    pub eval_sources: usize,
}
