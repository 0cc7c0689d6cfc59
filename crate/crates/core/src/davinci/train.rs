use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{triplet_loss, DavinciModel};
use crate::corpus::{Corpus, Query};
use crate::embedding::PairEncoder;
use crate::error::{Error, Result};
use crate::metrics::{self, RankedQuery};
use crate::nn::{OptimizerState, Scalar};
use crate::prior::{priors_for_candidates, PriorConfig, PriorList};
use crate::profiler::{RetrievalList, ScoredDoc};

/// A candidate document as the reranker sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub embedding: Vec<f32>,
    pub prior: f64,
}

impl Candidate {
    /// Features for every prior entry (listed candidates and any injected one).
    pub fn from_priors(
        query: &Query,
        priors: &PriorList,
        corpus: &Corpus,
        encoder: &PairEncoder,
    ) -> Result<Vec<Candidate>> {
        priors
            .entries
            .iter()
            .map(|p| {
                let doc = corpus
                    .document(&p.doc_id)
                    .ok_or_else(|| Error::not_found("document", &p.doc_id))?;
                Ok(Candidate {
                    doc_id: p.doc_id.clone(),
                    embedding: encoder.pair(query, doc)?,
                    prior: p.prior,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    pub query_id: String,
    pub positive: Candidate,
    pub negatives: Vec<Candidate>,
}

/// One (positive, negative) pair of a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingTriplet<'a> {
    pub query_id: &'a str,
    pub positive: &'a Candidate,
    pub negative: &'a Candidate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub groups: Vec<TrainingGroup>,
    pub skipped_no_negatives: usize,
}

impl TrainingSet {
    pub fn triplets(&self) -> impl Iterator<Item = TrainingTriplet<'_>> {
        self.groups.iter().flat_map(|g| {
            g.negatives.iter().map(move |n| TrainingTriplet {
                query_id: &g.query_id,
                positive: &g.positive,
                negative: n,
            })
        })
    }
}

/// Candidates and gold of one held-out query.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationQuery {
    pub query_id: String,
    pub gold: String,
    pub candidates: Vec<Candidate>,
}

/// Positive is the gold (injected at rank `k + 1` when missed), negatives are
/// `n` seeded draws from the other retrieved candidates.
pub fn build_training_set(
    queries: &[Query],
    retrievals: &[RetrievalList],
    corpus: &Corpus,
    encoder: &PairEncoder,
    prior: &PriorConfig,
    negatives: usize,
    seed: u64,
) -> Result<TrainingSet> {
    if queries.len() != retrievals.len() {
        return Err(Error::dims("retrieval lists", queries.len(), retrievals.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet::default();
    for (q, list) in queries.iter().zip(retrievals) {
        if q.query_id != list.query_id {
            return Err(Error::Validation(format!(
                "retrieval list {} does not belong to query {}",
                list.query_id, q.query_id
            )));
        }
        let priors = priors_for_candidates(prior, list, Some(&q.gold_cited_id))?;
        let pool: Vec<_> = priors
            .entries
            .iter()
            .filter(|e| e.doc_id != q.gold_cited_id)
            .collect();
        if pool.is_empty() {
            set.skipped_no_negatives += 1;
            continue;
        }
        let chosen: Vec<_> = pool.choose_multiple(&mut rng, negatives.min(pool.len())).collect();
        let feature = |doc_id: &str, prior: f64| -> Result<Candidate> {
            let doc = corpus
                .document(doc_id)
                .ok_or_else(|| Error::not_found("document", doc_id))?;
            Ok(Candidate {
                doc_id: doc_id.to_string(),
                embedding: encoder.pair(q, doc)?,
                prior,
            })
        };
        let gold = priors.get(&q.gold_cited_id).expect("gold is injected");
        set.groups.push(TrainingGroup {
            query_id: q.query_id.clone(),
            positive: feature(&gold.doc_id, gold.prior)?,
            negatives: chosen
                .into_iter()
                .map(|e| feature(&e.doc_id, e.prior))
                .collect::<Result<_>>()?,
        });
    }
    Ok(set)
}

fn to_scalar<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(f64::from(x))).collect()
}

/// `(1/n) Σ_j max(0, S⁻_j − S⁺ + m)`; when `grads` is given, adds
/// `scale · ∂loss/∂θ` to it. The hinge contributes no gradient at its kink.
pub fn group_loss<T: Scalar>(
    model: &DavinciModel<T>,
    positive: (&[T], T),
    negatives: &[(&[T], T)],
    grads: Option<&mut [f64]>,
    scale: f64,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Validation("a training group needs negatives".into()));
    }
    let m = model.config.margin;
    let n = negatives.len() as f64;
    let pos = model.score_with_tape(positive.0, positive.1)?;
    let mut loss = 0.0;
    let mut active = Vec::with_capacity(negatives.len());
    for &(e, p) in negatives {
        let tape = model.score_with_tape(e, p)?;
        let arg = tape.score_value - pos.score_value + m;
        loss += triplet_loss(pos.score_value, tape.score_value, m);
        if arg > 0.0 {
            active.push(tape);
        }
    }
    let loss = loss / n;
    if let Some(grads) = grads {
        for tape in &active {
            model.backward_into(tape, scale / n, grads)?;
        }
        if !active.is_empty() {
            model.backward_into(&pos, -scale * active.len() as f64 / n, grads)?;
        }
    }
    Ok(loss)
}

type GroupInputs<'a> = (&'a [f32], f32, Vec<(&'a [f32], f32)>);

fn group_inputs(g: &TrainingGroup) -> GroupInputs<'_> {
    (
        &g.positive.embedding,
        g.positive.prior as f32,
        g.negatives
            .iter()
            .map(|c| (c.embedding.as_slice(), c.prior as f32))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DavinciModel<f32>,
    /// Mean group loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation MRR per epoch (empty without validation data).
    pub validation_mrr: Vec<f64>,
    /// 1-based epoch of the returned parameters.
    pub best_epoch: usize,
    pub steps: u64,
}

fn divergence(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence(format!("epoch {epoch}: non-finite {what}")),
        other => other,
    }
}

/// Minibatch training; keeps the parameters of the epoch with the best
/// validation MRR (earliest on ties), or the last epoch without validation.
pub fn train(
    mut model: DavinciModel<f32>,
    set: &TrainingSet,
    validation: Option<&[ValidationQuery]>,
) -> Result<TrainOutcome> {
    let config = model.config.clone();
    config.validate()?;
    if set.groups.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let mut opt = OptimizerState::new(config.optimizer, model.param_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..set.groups.len()).collect();
    let mut grads = vec![0.0; model.param_count()];
    let mut outcome = TrainOutcome {
        model: model.clone(),
        loss_curve: Vec::with_capacity(config.epochs),
        validation_mrr: Vec::new(),
        best_epoch: 0,
        steps: 0,
    };
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; set.groups.len()];
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (e, p, negs) = group_inputs(&set.groups[i]);
                let loss = group_loss(&model, (e, p), &negs, Some(&mut grads), scale)
                    .map_err(|e| divergence(epoch, e))?;
                losses[i] = loss;
            }
            opt.apply_update(model.params_mut(), &grads)
                .map_err(|e| divergence(epoch, e))?;
        }
        let mean = losses.iter().sum::<f64>() / set.groups.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: loss is {mean}")));
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        outcome.loss_curve.push(mean);
        match validation {
            Some(val) if !val.is_empty() => {
                let mrr = validation_mrr(&model, val)?;
                outcome.validation_mrr.push(mrr);
                if mrr > best {
                    best = mrr;
                    outcome.best_epoch = epoch;
                    outcome.model = model.clone();
                }
            }
            _ => {
                outcome.best_epoch = epoch;
            }
        }
    }
    if outcome.validation_mrr.is_empty() {
        outcome.model = model;
    }
    outcome.steps = opt.steps;
    Ok(outcome)
}

pub fn validation_mrr(model: &DavinciModel<f32>, val: &[ValidationQuery]) -> Result<f64> {
    let ranked: Vec<RankedQuery> = val
        .iter()
        .map(|v| {
            let ranking = rerank_features(model, &v.candidates)?;
            Ok(RankedQuery::new(
                &v.query_id,
                ranking.into_iter().map(|s| s.doc_id).collect(),
                &v.gold,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(metrics::evaluate(&ranked, &[])?.mrr)
}

/// Scores and sorts candidates: descending score, ties by ascending id.
pub fn rerank_features(model: &DavinciModel<f32>, candidates: &[Candidate]) -> Result<Vec<ScoredDoc>> {
    let mut out = candidates
        .iter()
        .map(|c| {
            let e: Vec<f32> = to_scalar(&c.embedding);
            Ok(ScoredDoc {
                doc_id: c.doc_id.clone(),
                score: model.score_candidate(&e, c.prior as f32)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    Ok(out)
}

/// Reranks one query's retrieved candidates.
pub fn rerank(
    model: &DavinciModel<f32>,
    query: &Query,
    retrieval: &RetrievalList,
    priors: &PriorList,
    encoder: &PairEncoder,
    corpus: &Corpus,
) -> Result<Vec<ScoredDoc>> {
    let listed: Vec<_> = priors.entries.iter().filter(|p| !p.injected).collect();
    let aligned = listed.len() == retrieval.entries.len()
        && listed
            .iter()
            .zip(&retrieval.entries)
            .all(|(p, r)| p.doc_id == r.doc_id);
    if !aligned {
        return Err(Error::Validation(format!(
            "priors of query {} do not match its retrieval list",
            query.query_id
        )));
    }
    let only_listed = PriorList {
        entries: listed.into_iter().cloned().collect(),
    };
    let candidates = Candidate::from_priors(query, &only_listed, corpus, encoder)?;
    rerank_features(model, &candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::davinci::DavinciConfig;
    use crate::nn::{OptimizerConfig, UpdateRule};
    use rand::Rng;

    fn cand(id: &str, e: Vec<f32>, prior: f64) -> Candidate {
        Candidate {
            doc_id: id.into(),
            embedding: e,
            prior,
        }
    }

    /// Positives have embeddings clustered around +1 in the first coordinate,
    /// negatives around -1.
    fn separable(groups: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |sign: f32| -> Vec<f32> {
            let mut e: Vec<f32> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
            e[0] += sign;
            e
        };
        TrainingSet {
            groups: (0..groups)
                .map(|i| TrainingGroup {
                    query_id: format!("q{i}"),
                    positive: cand("p", v(1.0), 0.5),
                    negatives: (0..3).map(|j| cand(&format!("n{j}"), v(-1.0), 0.5)).collect(),
                })
                .collect(),
            skipped_no_negatives: 0,
        }
    }

    fn cfg() -> DavinciConfig {
        DavinciConfig {
            d_enc2: 4,
            d_h: 4,
            epochs: 50,
            batch_size: 64,
            optimizer: OptimizerConfig {
                rule: UpdateRule::adam(),
                step_size: 0.01,
            },
            ..Default::default()
        }
    }

    #[test]
    fn separable_task_converges() {
        let set = separable(64, 1);
        let out = train(DavinciModel::new(&cfg()).unwrap(), &set, None).unwrap();
        let last = *out.loss_curve.last().unwrap();
        assert!(last < 0.05 * 0.1, "{:?}", out.loss_curve);
    }

    #[test]
    fn zero_step_size_freezes_parameters() {
        let mut c = cfg();
        c.optimizer.step_size = 0.0;
        c.epochs = 3;
        let model = DavinciModel::new(&c).unwrap();
        let out = train(model.clone(), &separable(8, 2), None).unwrap();
        assert_eq!(out.model, model);
        assert!(out.loss_curve.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn best_validation_epoch_is_kept() {
        let mut c = cfg();
        c.epochs = 6;
        let set = separable(16, 3);
        let val = vec![ValidationQuery {
            query_id: "v".into(),
            gold: "p".into(),
            candidates: vec![set.groups[0].positive.clone(), set.groups[0].negatives[0].clone()],
        }];
        let out = train(DavinciModel::new(&c).unwrap(), &set, Some(&val)).unwrap();
        let best = out
            .validation_mrr
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let first_best = out.validation_mrr.iter().position(|&m| m == best).unwrap() + 1;
        assert_eq!(out.best_epoch, first_best);
        assert_eq!(validation_mrr(&out.model, &val).unwrap(), best);
    }

    #[test]
    fn training_is_deterministic() {
        let set = separable(16, 4);
        let mut c = cfg();
        c.epochs = 4;
        c.batch_size = 5;
        let a = train(DavinciModel::new(&c).unwrap(), &set, None).unwrap();
        let b = train(DavinciModel::new(&c).unwrap(), &set, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn rerank_orders_and_breaks_ties_by_id() {
        let zero = DavinciModel::<f32>::zeros(&cfg()).unwrap();
        let cands = vec![
            cand("c", vec![0.0; 4], 0.9),
            cand("a", vec![1.0; 4], 0.1),
            cand("b", vec![0.5; 4], 0.5),
        ];
        let out = rerank_features(&zero, &cands).unwrap();
        let ids: Vec<_> = out.iter().map(|s| s.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert!(out.iter().all(|s| s.score == 0.5));
        let one = rerank_features(&zero, &cands[..1]).unwrap();
        assert_eq!(one[0].doc_id, "c");
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(train(DavinciModel::new(&cfg()).unwrap(), &TrainingSet::default(), None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reranking_permutes_its_input(
                seed in any::<u64>(),
                cands in proptest::collection::vec((proptest::collection::vec(-1.0f32..1.0, 4), 0.0f64..1.0), 1..20),
            ) {
                let model = DavinciModel::new(&DavinciConfig { seed, ..cfg() }).unwrap();
                let input: Vec<Candidate> = cands
                    .into_iter()
                    .enumerate()
                    .map(|(i, (e, p))| cand(&format!("c{i:02}"), e, p))
                    .collect();
                let out = rerank_features(&model, &input).unwrap();
                let mut got: Vec<&str> = out.iter().map(|s| s.doc_id.as_str()).collect();
                got.sort_unstable();
                let want: Vec<&str> = input.iter().map(|c| c.doc_id.as_str()).collect();
                prop_assert_eq!(got, want);
                prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
            }
        }
    }
}
