//! End-to-end runs: split, profile, retrieve, train, rerank, evaluate.
//!
//! Every stage writes its output into the work directory. Stages hand data
//! to each other through those files, and a run manifest records the config
//! hash so artifacts from different configurations are never combined.

mod config;
mod workdir;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_queries, Corpus, Query};
use crate::davinci::{
    self, build_training_set, rerank_features, Ablation, Candidate, DavinciConfig, DavinciModel,
    TrainOutcome, ValidationQuery,
};
use crate::embedding::{PairEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, RankedQuery};
use crate::prior::{priors_for_candidates, PriorConfig};
use crate::profiler::{retrieve_split, ProfileComponents, ProfiledIndex, QueryEncoding, RetrievalList};
use crate::split::{build_split, SplitMode, SplitName, SplitResult};

pub use config::{EncoderSettings, EvalSettings, Paths, PipelineConfig, ProfileSettings};
pub use workdir::{corpus_hash, RunManifest, Workdir};

/// Loaded inputs shared by all stages.
pub struct Context {
    pub config: PipelineConfig,
    pub corpus: Corpus,
    /// The corpus whose edges feed the profiles: in inductive mode only
    /// citations made by candidate-corpus documents are kept.
    pub profile_corpus: Corpus,
    pub split: SplitResult,
    pub text_encoder: TextEncoder,
    pub pair_encoder: PairEncoder,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

impl Context {
    pub fn prepare(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let p = &config.paths;
        let (corpus, report) = stage("ingest", Corpus::ingest(&p.documents, &p.edges))?;
        log::info!(
            "corpus: {} documents, {} of {} edges kept",
            report.documents,
            report.edges_kept,
            report.edges_total
        );
        let queries = stage("ingest", load_queries(&p.queries))?;
        Self::from_parts(config, corpus, queries)
    }

    pub fn from_parts(config: &PipelineConfig, corpus: Corpus, queries: Vec<Query>) -> Result<Self> {
        config.validate()?;
        let split = stage("split", build_split(&corpus, &queries, &config.split))?;
        let profile_corpus = match split.mode {
            SplitMode::Inductive => corpus.with_citers(|d| split.corpus_ids.contains(&d.doc_id)),
            SplitMode::Transductive => corpus.clone(),
        };
        let enc = &config.encoder;
        let text_encoder = stage("encode", TextEncoder::from_choice(&enc.text, &enc.text_config))?;
        let pair_encoder = stage("encode", PairEncoder::from_choice(&enc.pair, &enc.pair_config))?;
        if pair_encoder.dim() != config.davinci.d_enc2 {
            return Err(Error::dims("pair encoder", config.davinci.d_enc2, pair_encoder.dim()));
        }
        Ok(Context {
            config: config.clone(),
            corpus,
            profile_corpus,
            split,
            text_encoder,
            pair_encoder,
        })
    }

    pub fn components(&self) -> Result<ProfileComponents> {
        stage("profile", ProfileComponents::encode(&self.profile_corpus, &self.text_encoder))
    }

    pub fn build_index(&self) -> Result<ProfiledIndex> {
        let s = &self.config.profile;
        stage("profile", self.components()?.fuse(&s.weights, s.renormalize))
    }

    pub fn encode_queries(&self, queries: &[Query]) -> Result<Vec<QueryEncoding>> {
        stage(
            "retrieve",
            queries
                .iter()
                .map(|q| QueryEncoding::new(q, &self.text_encoder))
                .collect(),
        )
    }

    pub fn retrieve(&self, index: &ProfiledIndex, split: SplitName, k: usize) -> Result<Vec<RetrievalList>> {
        let queries = self.split.queries(split);
        let enc = self.encode_queries(queries)?;
        stage(
            "retrieve",
            retrieve_split(index, &self.corpus, &self.split, queries, &enc, k),
        )
    }

    /// Candidate features of `lists` (no gold injection).
    pub fn candidates(
        &self,
        split: SplitName,
        lists: &[RetrievalList],
        prior: &PriorConfig,
    ) -> Result<Vec<Vec<Candidate>>> {
        self.candidates_for(self.split.queries(split), lists, prior)
    }

    pub fn train(
        &self,
        config: &DavinciConfig,
        train_lists: &[RetrievalList],
        val_lists: &[RetrievalList],
    ) -> Result<TrainOutcome> {
        let prior = config.effective_prior();
        let train_queries = self.split.queries(SplitName::Train);
        check_aligned(train_queries, train_lists)?;
        let set = stage(
            "train",
            build_training_set(
                train_queries,
                train_lists,
                &self.corpus,
                &self.pair_encoder,
                &prior,
                config.negatives,
                config.seed,
            ),
        )?;
        if set.skipped_no_negatives > 0 {
            log::warn!("{} training queries had no negatives", set.skipped_no_negatives);
        }
        let cap = self.config.eval.max_validation_queries.unwrap_or(usize::MAX);
        let val_queries = self.split.queries(SplitName::Val);
        let n_val = cap.min(val_lists.len());
        let val_candidates = self.candidates_for(&val_queries[..n_val], &val_lists[..n_val], &prior)?;
        let validation: Vec<ValidationQuery> = val_queries[..n_val]
            .iter()
            .zip(val_candidates)
            .map(|(q, candidates)| ValidationQuery {
                query_id: q.query_id.clone(),
                gold: q.gold_cited_id.clone(),
                candidates,
            })
            .collect();
        let model = stage("train", DavinciModel::new(config))?;
        stage("train", davinci::train(model, &set, Some(&validation)))
    }

    fn candidates_for(
        &self,
        queries: &[Query],
        lists: &[RetrievalList],
        prior: &PriorConfig,
    ) -> Result<Vec<Vec<Candidate>>> {
        check_aligned(queries, lists)?;
        stage(
            "rerank",
            queries
                .iter()
                .zip(lists)
                .map(|(q, l)| {
                    let priors = priors_for_candidates(prior, l, None)?;
                    Candidate::from_priors(q, &priors, &self.corpus, &self.pair_encoder)
                })
                .collect(),
        )
    }

    /// Reranked lists for `split`, one per retrieval list.
    pub fn rerank(
        &self,
        model: &DavinciModel<f32>,
        split: SplitName,
        lists: &[RetrievalList],
    ) -> Result<Vec<RetrievalList>> {
        let candidates = self.candidates(split, lists, &model.config.effective_prior())?;
        stage(
            "rerank",
            lists
                .iter()
                .zip(candidates)
                .map(|(l, c)| {
                    Ok(RetrievalList {
                        query_id: l.query_id.clone(),
                        k: l.k,
                        entries: rerank_features(model, &c)?,
                    })
                })
                .collect(),
        )
    }

    pub fn evaluate(&self, split: SplitName, lists: &[RetrievalList], ks: &[usize]) -> Result<EvalReport> {
        let queries = self.split.queries(split);
        check_aligned(queries, lists)?;
        let ranked: Vec<RankedQuery> = queries
            .iter()
            .zip(lists)
            .map(|(q, l)| RankedQuery::new(&q.query_id, l.doc_ids(), &q.gold_cited_id))
            .collect();
        let report = stage("evaluate", evaluate(&ranked, ks))?;
        Ok(if self.config.eval.per_query {
            report.with_ranks(&ranked)
        } else {
            report
        })
    }
}

fn check_aligned(queries: &[Query], lists: &[RetrievalList]) -> Result<()> {
    if queries.len() != lists.len()
        || queries.iter().zip(lists).any(|(q, l)| q.query_id != l.query_id)
    {
        return Err(Error::Validation(
            "retrieval lists do not match the split's queries".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub retrieval: EvalReport,
    pub rerank: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub loss_curve: Vec<f64>,
    pub validation_mrr: Vec<f64>,
    pub best_epoch: usize,
    pub steps: u64,
}

impl From<&TrainOutcome> for TrainingSummary {
    fn from(o: &TrainOutcome) -> Self {
        TrainingSummary {
            loss_curve: o.loss_curve.clone(),
            validation_mrr: o.validation_mrr.clone(),
            best_epoch: o.best_epoch,
            steps: o.steps,
        }
    }
}

struct Timer(BTreeMap<&'static str, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(BTreeMap::new(), Instant::now())
    }
    fn lap(&mut self, name: &'static str) {
        let now = Instant::now();
        self.0.insert(name, (now - self.1).as_secs_f64());
        self.1 = now;
    }
}

/// Runs every stage and writes all artifacts into the configured workdir.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let mut timer = Timer::new();
    let work = Workdir::create(&config.paths.workdir, config)?;
    let ctx = Context::prepare(config)?;
    work.write_json("split.json", &ctx.split.manifest(&config.split))?;
    timer.lap("split");
    let index = ctx.build_index()?;
    work.save_index(&index, &ctx.corpus)?;
    timer.lap("profile");

    let k = config.prior.k;
    let mut lists = BTreeMap::new();
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let l = ctx.retrieve(&index, split, k)?;
        work.write_retrievals(split, &l)?;
        lists.insert(split, l);
    }
    timer.lap("retrieve");

    let dcfg = config.davinci_config();
    let outcome = ctx.train(&dcfg, &lists[&SplitName::Train], &lists[&SplitName::Val])?;
    work.save_model(&outcome)?;
    work.write_training(&TrainingSummary::from(&outcome))?;
    timer.lap("train");

    let test = &lists[&SplitName::Test];
    let reranked = ctx.rerank(&outcome.model, SplitName::Test, test)?;
    work.write_jsonl("rerank_test.jsonl", &reranked)?;
    timer.lap("rerank");

    let report = PipelineReport {
        retrieval: ctx.evaluate(SplitName::Test, test, &config.eval.retrieval_ks)?,
        rerank: ctx.evaluate(SplitName::Test, &reranked, &config.eval.rerank_ks)?,
    };
    work.write_reports(&report)?;
    timer.lap("evaluate");
    work.write_timings(&timer.0)?;
    work.finish()?;
    Ok(report)
}

/// Trains and evaluates each reranker variant on shared retrieval lists.
pub fn ablation_study(ctx: &Context, variants: &[Ablation]) -> Result<Vec<(Ablation, EvalReport)>> {
    let k = ctx.config.prior.k;
    let index = ctx.build_index()?;
    let train = ctx.retrieve(&index, SplitName::Train, k)?;
    let val = ctx.retrieve(&index, SplitName::Val, k)?;
    let test = ctx.retrieve(&index, SplitName::Test, k)?;
    variants
        .iter()
        .map(|&a| {
            let cfg = DavinciConfig {
                ablation: a,
                ..ctx.config.davinci_config()
            };
            let outcome = ctx.train(&cfg, &train, &val)?;
            let reranked = ctx.rerank(&outcome.model, SplitName::Test, &test)?;
            log::info!("{}: best epoch {}", a.label(), outcome.best_epoch);
            Ok((a, ctx.evaluate(SplitName::Test, &reranked, &ctx.config.eval.rerank_ks)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepRow {
    pub k: usize,
    pub report: EvalReport,
}

/// Reranking quality as a function of the candidate-list size. With
/// `retrain` each `k` gets its own model; otherwise one model trained at the
/// configured `k` reranks truncated lists.
pub fn sweep_k(ctx: &Context, ks: &[usize], retrain: bool) -> Result<Vec<KSweepRow>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be non-empty and at least 1".into()));
    }
    let index = ctx.build_index()?;
    let max_k = ks.iter().copied().max().unwrap().max(ctx.config.prior.k);
    let test = ctx.retrieve(&index, SplitName::Test, max_k)?;
    let truncate = |lists: &[RetrievalList], k: usize| -> Vec<RetrievalList> {
        lists.iter().map(|l| l.truncated(k)).collect()
    };
    let base_cfg = ctx.config.davinci_config();
    let shared = if retrain {
        None
    } else {
        let k = ctx.config.prior.k;
        let train = ctx.retrieve(&index, SplitName::Train, k)?;
        let val = ctx.retrieve(&index, SplitName::Val, k)?;
        Some(ctx.train(&base_cfg, &train, &val)?.model)
    };
    ks.iter()
        .map(|&k| {
            let model = match &shared {
                Some(m) => m.clone(),
                None => {
                    let cfg = DavinciConfig {
                        prior: PriorConfig { k, ..base_cfg.prior },
                        ..base_cfg.clone()
                    };
                    let train = ctx.retrieve(&index, SplitName::Train, k)?;
                    let val = ctx.retrieve(&index, SplitName::Val, k)?;
                    ctx.train(&cfg, &train, &val)?.model
                }
            };
            let lists = truncate(&test, k);
            let reranked = ctx.rerank(&model, SplitName::Test, &lists)?;
            Ok(KSweepRow {
                k,
                report: ctx.evaluate(SplitName::Test, &reranked, &ctx.config.eval.rerank_ks)?,
            })
        })
        .collect()
}

pub fn k_sweep_csv(rows: &[KSweepRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut out = String::from("k,mrr");
    for k in first.report.recall_at.keys() {
        out.push_str(&format!(",recall@{k}"));
    }
    for k in first.report.ndcg_at.keys() {
        out.push_str(&format!(",ndcg@{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.k, r.report.mrr));
        for v in r.report.recall_at.values().chain(r.report.ndcg_at.values()) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
