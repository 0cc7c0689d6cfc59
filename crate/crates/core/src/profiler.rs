//! First-stage retrieval over profiled document vectors.
//!
//! Every document's base vector is shifted by the mean of its citers'
//! signals, `v̂ = v + mean_j(α·v_ctx(j) + β·v_citer(j))`; documents nobody
//! cites keep their base vector bit for bit. Queries mix the citation context
//! with the citing paper's metadata, `v_q = γ·v_ctx + δ·v_meta`, and are
//! scored against the index by exact cosine similarity.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Query};
use crate::embedding::{EmbeddingMatrix, TextEncoder};
use crate::error::{Error, Result};
use crate::metrics::{self, RankedQuery};
use crate::split::SplitResult;

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Ablation switch: when set, `alpha = beta = 0` is allowed.
    #[serde(default)]
    pub enrichment_disabled: bool,
}

impl Default for ProfileWeights {
    fn default() -> Self {
        ProfileWeights {
            alpha: 0.7,
            beta: 0.3,
            gamma: 0.7,
            delta: 0.3,
            enrichment_disabled: false,
        }
    }
}

impl ProfileWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let w = ProfileWeights {
            alpha,
            beta,
            gamma,
            delta,
            enrichment_disabled: false,
        };
        w.validate()?;
        Ok(w)
    }

    /// Base vectors only (`alpha = beta = 0`).
    pub fn without_enrichment(gamma: f64, delta: f64) -> Result<Self> {
        let w = ProfileWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma,
            delta,
            enrichment_disabled: true,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} = {x} is outside [0, 1]")));
            }
        }
        if (self.gamma + self.delta - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config("gamma + delta must equal 1".into()));
        }
        if self.enrichment_disabled {
            if self.alpha != 0.0 || self.beta != 0.0 {
                return Err(Error::Config(
                    "enrichment is disabled but alpha/beta are non-zero".into(),
                ));
            }
        } else if (self.alpha + self.beta - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config("alpha + beta must equal 1".into()));
        }
        Ok(())
    }

    /// Cartesian grid over `alpha` and `gamma`, with `beta = 1 - alpha` and
    /// `delta = 1 - gamma`.
    pub fn grid(alphas: &[f64], gammas: &[f64]) -> Result<Vec<ProfileWeights>> {
        let mut out = Vec::with_capacity(alphas.len() * gammas.len());
        for &a in alphas {
            for &g in gammas {
                out.push(ProfileWeights::new(a, 1.0 - a, g, 1.0 - g)?);
            }
        }
        Ok(out)
    }
}

/// Parses `start:end:step` into an inclusive list of values.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad range {spec:?}, expected start:end:step")))?;
    let [start, end, step] = parts[..] else {
        return Err(Error::Config(format!(
            "bad range {spec:?}, expected start:end:step"
        )));
    };
    if step <= 0.0 || end < start {
        return Err(Error::Config(format!("empty range {spec:?}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    // rounded to 1e-12 so 0.1 steps land on the decimal values
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += f64::from(x[i]) * f64::from(y[i]);
        }
    }
    lanes.iter().sum::<f64>() + tail
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-document ingredients of the profiled vectors, independent of the
/// fusion weights.
#[derive(Debug, Clone)]
pub struct ProfileComponents {
    dim: usize,
    doc_ids: Vec<String>,
    base: Vec<f32>,
    mean_context: Vec<f64>,
    mean_citer: Vec<f64>,
    cited: Vec<bool>,
}

impl ProfileComponents {
    /// `base` is keyed by document id, `contexts` by context text.
    pub fn new(corpus: &Corpus, base: &EmbeddingMatrix, contexts: &EmbeddingMatrix) -> Result<Self> {
        let dim = base.dim();
        if contexts.dim() != dim {
            return Err(Error::dims("context vectors", dim, contexts.dim()));
        }
        let n = corpus.len();
        let mut out = ProfileComponents {
            dim,
            doc_ids: Vec::with_capacity(n),
            base: Vec::with_capacity(n * dim),
            mean_context: vec![0.0; n * dim],
            mean_citer: vec![0.0; n * dim],
            cited: vec![false; n],
        };
        let mut rows = HashMap::with_capacity(n);
        for (i, doc) in corpus.documents().enumerate() {
            let v = base
                .get(&doc.doc_id)
                .ok_or_else(|| Error::not_found("document vector", &doc.doc_id))?;
            out.base.extend_from_slice(v);
            out.doc_ids.push(doc.doc_id.clone());
            rows.insert(doc.doc_id.as_str(), i);
        }

        let mut counts = vec![0usize; n];
        for edge in corpus.edges() {
            let i = rows[edge.cited_id.as_str()];
            let ctx = contexts
                .get(&edge.context_text)
                .ok_or_else(|| Error::not_found("context vector", &edge.context_text))?;
            let citer = base
                .get(&edge.citing_id)
                .ok_or_else(|| Error::not_found("document vector", &edge.citing_id))?;
            let row = i * dim..(i + 1) * dim;
            for ((acc, &x), (acc2, &y)) in out.mean_context[row.clone()]
                .iter_mut()
                .zip(ctx)
                .zip(out.mean_citer[row].iter_mut().zip(citer))
            {
                *acc += f64::from(x);
                *acc2 += f64::from(y);
            }
            counts[i] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            out.cited[i] = true;
            let inv = 1.0 / c as f64;
            let row = i * dim..(i + 1) * dim;
            out.mean_context[row.clone()].iter_mut().for_each(|x| *x *= inv);
            out.mean_citer[row].iter_mut().for_each(|x| *x *= inv);
        }
        Ok(out)
    }

    /// Encodes every document and distinct context with `encoder`.
    pub fn encode(corpus: &Corpus, encoder: &TextEncoder) -> Result<Self> {
        let mut base = EmbeddingMatrix::new(encoder.dim())?;
        for doc in corpus.documents() {
            base.push(doc.doc_id.clone(), &encoder.document(doc)?)?;
        }
        let mut contexts = EmbeddingMatrix::new(encoder.dim())?;
        let mut seen = BTreeSet::new();
        for edge in corpus.edges() {
            if seen.insert(edge.context_text.as_str()) {
                contexts.push(edge.context_text.clone(), &encoder.text(&edge.context_text)?)?;
            }
        }
        ProfileComponents::new(corpus, &base, &contexts)
    }

    pub fn fuse(&self, weights: &ProfileWeights, renormalize: bool) -> Result<ProfiledIndex> {
        weights.validate()?;
        let dim = self.dim;
        let mut vectors = Vec::with_capacity(self.base.len());
        for (i, &cited) in self.cited.iter().enumerate() {
            let row = i * dim..(i + 1) * dim;
            let base = &self.base[row.clone()];
            if !cited || weights.enrichment_disabled {
                vectors.extend_from_slice(base);
                continue;
            }
            let start = vectors.len();
            vectors.extend(
                base.iter()
                    .zip(&self.mean_context[row.clone()])
                    .zip(&self.mean_citer[row])
                    .map(|((&v, &c), &j)| {
                        (f64::from(v) + weights.alpha * c + weights.beta * j) as f32
                    }),
            );
            if renormalize {
                let fused = &mut vectors[start..];
                let n = norm(fused);
                if n > 0.0 {
                    fused.iter_mut().for_each(|x| *x = (f64::from(*x) / n) as f32);
                }
            }
        }
        if let Some(pos) = vectors.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "profiled vector of {}",
                self.doc_ids[pos / dim]
            )));
        }
        let norms = vectors.chunks_exact(dim).map(norm).collect();
        Ok(ProfiledIndex {
            dim,
            doc_ids: self.doc_ids.clone(),
            vectors,
            norms,
            weights_used: *weights,
            renormalized: renormalize,
        })
    }
}

/// Profiled vectors for every corpus document, rows ordered by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfiledIndex {
    dim: usize,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    pub weights_used: ProfileWeights,
    pub renormalized: bool,
}

/// Builds the profiled index from precomputed base and context vectors.
pub fn build_profiled_index(
    corpus: &Corpus,
    base_vectors: &EmbeddingMatrix,
    context_vectors: &EmbeddingMatrix,
    weights: &ProfileWeights,
) -> Result<ProfiledIndex> {
    ProfileComponents::new(corpus, base_vectors, context_vectors)?.fuse(weights, false)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IndexManifest {
    pub dim: usize,
    pub documents: usize,
    pub weights_used: ProfileWeights,
    pub renormalized: bool,
    pub corpus_hash: String,
}

impl ProfiledIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f32]> {
        self.doc_ids
            .binary_search_by(|id| id.as_str().cmp(doc_id))
            .ok()
            .map(|i| self.row(i))
    }

    /// Writes the vectors as CVEC plus a JSON manifest next to it.
    pub fn save(&self, cvec_path: &Path, manifest_path: &Path, corpus_hash: &str) -> Result<()> {
        let mut m = EmbeddingMatrix::new(self.dim)?;
        for (i, id) in self.doc_ids.iter().enumerate() {
            m.push(id.clone(), self.row(i))?;
        }
        m.write(cvec_path)?;
        let manifest = IndexManifest {
            dim: self.dim,
            documents: self.len(),
            weights_used: self.weights_used,
            renormalized: self.renormalized,
            corpus_hash: corpus_hash.to_string(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
    }

    pub fn load(cvec_path: &Path, manifest_path: &Path) -> Result<(Self, IndexManifest)> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: IndexManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("index manifest: {e}")))?;
        let m = EmbeddingMatrix::load(cvec_path)?;
        if m.dim() != manifest.dim || m.len() != manifest.documents {
            return Err(Error::Format("index payload does not match its manifest".into()));
        }
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| m.keys()[a].cmp(&m.keys()[b]));
        let mut vectors = Vec::with_capacity(m.len() * m.dim());
        for &i in &order {
            vectors.extend_from_slice(m.row(i));
        }
        let norms = vectors.chunks_exact(m.dim()).map(norm).collect();
        let index = ProfiledIndex {
            dim: m.dim(),
            doc_ids: order.iter().map(|&i| m.keys()[i].clone()).collect(),
            vectors,
            norms,
            weights_used: manifest.weights_used,
            renormalized: manifest.renormalized,
        };
        Ok((index, manifest))
    }
}

/// Base query encodings, kept separate so different `gamma`/`delta` mixes
/// reuse them.
#[derive(Debug, Clone)]
pub struct QueryEncoding {
    pub context: Vec<f32>,
    pub metadata: Vec<f32>,
}

impl QueryEncoding {
    pub fn new(query: &Query, encoder: &TextEncoder) -> Result<Self> {
        Ok(QueryEncoding {
            context: encoder.text(&query.context_text)?,
            metadata: encoder.text(&query.metadata_text())?,
        })
    }

    pub fn compose(&self, weights: &ProfileWeights) -> Result<Vec<f32>> {
        if self.context.len() != self.metadata.len() {
            return Err(Error::dims(
                "query encodings",
                self.context.len(),
                self.metadata.len(),
            ));
        }
        Ok(self
            .context
            .iter()
            .zip(&self.metadata)
            .map(|(&s, &m)| (weights.gamma * f64::from(s) + weights.delta * f64::from(m)) as f32)
            .collect())
    }
}

/// `gamma · ENC(context) + delta · ENC(title ⊕ abstract)`.
pub fn compose_query_vector(
    query: &Query,
    encoder: &TextEncoder,
    weights: &ProfileWeights,
) -> Result<Vec<f32>> {
    QueryEncoding::new(query, encoder)?.compose(weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub score: f64,
}

/// Top-k candidates for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalList {
    #[serde(rename = "qid")]
    pub query_id: String,
    pub k: usize,
    #[serde(rename = "candidates")]
    pub entries: Vec<ScoredDoc>,
}

impl RetrievalList {
    pub fn doc_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.doc_id.clone()).collect()
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id)
    }

    /// The first `k` entries.
    pub fn truncated(&self, k: usize) -> RetrievalList {
        RetrievalList {
            query_id: self.query_id.clone(),
            k,
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }
}

/// Descending score, ties by ascending row (rows are sorted by doc id).
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl ProfiledIndex {
    /// Cosine similarity of `v_q` against row `i`; zero vectors score 0.
    pub fn cosine(&self, v_q: &[f32], q_norm: f64, i: usize) -> f64 {
        let denom = q_norm * self.norms[i];
        if denom == 0.0 {
            return 0.0;
        }
        (dot(v_q, self.row(i)) / denom).clamp(-1.0, 1.0)
    }

    /// Exact top-k over the rows accepted by `admits`.
    pub fn retrieve_where<F>(
        &self,
        query_id: &str,
        v_q: &[f32],
        k: usize,
        mut admits: F,
    ) -> Result<RetrievalList>
    where
        F: FnMut(usize) -> bool,
    {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if v_q.len() != self.dim {
            return Err(Error::dims("query vector", self.dim, v_q.len()));
        }
        if v_q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("query vector of {query_id}")));
        }
        let q_norm = norm(v_q);
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| admits(i))
            .map(|i| (self.cosine(v_q, q_norm, i), i))
            .collect();
        if scored.is_empty() {
            return Err(Error::Validation(format!(
                "query {query_id} has an empty admissible corpus"
            )));
        }
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank_order);
        Ok(RetrievalList {
            query_id: query_id.to_string(),
            k,
            entries: scored
                .into_iter()
                .map(|(score, i)| ScoredDoc {
                    doc_id: self.doc_ids[i].clone(),
                    score,
                })
                .collect(),
        })
    }
}

/// Exact cosine top-k restricted to `admissible`.
pub fn retrieve(
    index: &ProfiledIndex,
    query_id: &str,
    v_q: &[f32],
    admissible: &BTreeSet<String>,
    k: usize,
) -> Result<RetrievalList> {
    index.retrieve_where(query_id, v_q, k, |i| admissible.contains(&index.doc_ids[i]))
}

/// Retrieves for every query, honouring each query's admissible set.
pub fn retrieve_split(
    index: &ProfiledIndex,
    corpus: &Corpus,
    split: &SplitResult,
    queries: &[Query],
    encodings: &[QueryEncoding],
    k: usize,
) -> Result<Vec<RetrievalList>> {
    let dates: Vec<_> = index
        .doc_ids
        .iter()
        .map(|id| {
            corpus
                .document(id)
                .map(|d| d.pub_date)
                .ok_or_else(|| Error::not_found("document", id))
        })
        .collect::<Result<_>>()?;
    queries
        .iter()
        .zip(encodings)
        .map(|(q, enc)| {
            let rule = split.admissibility(q)?;
            let v_q = enc.compose(&index.weights_used)?;
            index.retrieve_where(&q.query_id, &v_q, k, |i| rule.admits(&index.doc_ids[i], dates[i]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMetric {
    #[serde(rename = "mrr")]
    Mrr,
    #[serde(rename = "recall@10")]
    RecallAt10,
    #[serde(rename = "ndcg@10")]
    NdcgAt10,
}

impl std::str::FromStr for SweepMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrr" => Ok(SweepMetric::Mrr),
            "recall@10" | "r@10" => Ok(SweepMetric::RecallAt10),
            "ndcg@10" | "n@10" => Ok(SweepMetric::NdcgAt10),
            _ => Err(Error::Config(format!("unknown sweep metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub weights: ProfileWeights,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub metric: SweepMetric,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Highest value; the first grid point wins ties.
    pub fn best(&self) -> &SweepPoint {
        self.points
            .iter()
            .reduce(|best, p| if p.value > best.value { p } else { best })
            .expect("sweep has at least one point")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,gamma,delta,value\n");
        for p in &self.points {
            let w = p.weights;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                w.alpha, w.beta, w.gamma, w.delta, p.value
            ));
        }
        out
    }
}

/// Evaluates one retrieval metric over `queries` for each weight setting.
#[allow(clippy::too_many_arguments)]
pub fn sweep_profile_weights(
    corpus: &Corpus,
    components: &ProfileComponents,
    split: &SplitResult,
    queries: &[Query],
    encodings: &[QueryEncoding],
    grid: &[ProfileWeights],
    metric: SweepMetric,
    k: usize,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut cached: Option<(f64, f64, bool, ProfiledIndex)> = None;
    for w in grid {
        w.validate()?;
        let key = (w.alpha, w.beta, w.enrichment_disabled);
        let reuse = matches!(&cached, Some((a, b, d, _)) if (*a, *b, *d) == key);
        if !reuse {
            cached = Some((w.alpha, w.beta, w.enrichment_disabled, components.fuse(w, false)?));
        }
        let mut index = cached.as_ref().unwrap().3.clone();
        index.weights_used = *w;
        let lists = retrieve_split(&index, corpus, split, queries, encodings, k)?;
        let ranked: Vec<RankedQuery> = lists
            .iter()
            .zip(queries)
            .map(|(l, q)| RankedQuery::new(&q.query_id, l.doc_ids(), &q.gold_cited_id))
            .collect();
        let value = match metric {
            SweepMetric::Mrr => metrics::evaluate(&ranked, &[])?.mrr,
            SweepMetric::RecallAt10 => metrics::evaluate(&ranked, &[10])?.recall_at[&10],
            SweepMetric::NdcgAt10 => metrics::evaluate(&ranked, &[10])?.ndcg_at[&10],
        };
        points.push(SweepPoint { weights: *w, value });
    }
    Ok(SweepResult { metric, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CitationEdge, Document};

    fn doc(id: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: id.into(),
            abstract_text: String::new(),
            pub_date: "2020-01-01".parse().unwrap(),
        }
    }

    fn matrix(rows: &[(&str, &[f32])]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(rows[0].1.len()).unwrap();
        for (k, v) in rows {
            m.push(*k, v).unwrap();
        }
        m
    }

    #[test]
    fn hand_evaluated_profile() {
        let edges = vec![CitationEdge {
            citing_id: "j".into(),
            cited_id: "i".into(),
            context_text: "s".into(),
        }];
        let (corpus, _) = Corpus::from_parts(vec![doc("i"), doc("j")], edges).unwrap();
        let base = matrix(&[("i", &[1.0, 0.0]), ("j", &[0.0, 1.0])]);
        let ctx = matrix(&[("s", &[1.0, 1.0])]);
        let w = ProfileWeights::new(0.5, 0.5, 0.5, 0.5).unwrap();
        let index = build_profiled_index(&corpus, &base, &ctx, &w).unwrap();
        assert_eq!(index.vector("i").unwrap(), &[1.5, 1.0]);
        // j is uncited
        assert_eq!(index.vector("j").unwrap(), &[0.0, 1.0]);

        let off = ProfileWeights::without_enrichment(0.5, 0.5).unwrap();
        let plain = build_profiled_index(&corpus, &base, &ctx, &off).unwrap();
        assert_eq!(plain.vector("i").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn missing_vectors_are_named() {
        let edges = vec![CitationEdge {
            citing_id: "j".into(),
            cited_id: "i".into(),
            context_text: "unseen".into(),
        }];
        let (corpus, _) = Corpus::from_parts(vec![doc("i"), doc("j")], edges).unwrap();
        let base = matrix(&[("i", &[1.0, 0.0]), ("j", &[0.0, 1.0])]);
        let ctx = matrix(&[("s", &[1.0, 1.0])]);
        let err = build_profiled_index(&corpus, &base, &ctx, &ProfileWeights::default()).unwrap_err();
        assert!(err.to_string().contains("unseen"));
        let short = matrix(&[("s", &[1.0, 1.0, 1.0])]);
        assert!(matches!(
            build_profiled_index(&corpus, &base, &short, &ProfileWeights::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weight_validation() {
        assert!(ProfileWeights::new(0.6, 0.6, 0.5, 0.5).is_err());
        assert!(ProfileWeights::new(0.5, 0.5, 0.2, 0.2).is_err());
        assert!(ProfileWeights::new(1.2, -0.2, 0.5, 0.5).is_err());
        assert!(ProfileWeights::new(0.0, 0.0, 0.5, 0.5).is_err());
        assert!(ProfileWeights::without_enrichment(0.5, 0.5).is_ok());
        assert!(ProfileWeights::default().validate().is_ok());
    }

    #[test]
    fn query_composition_boundaries() {
        let enc = QueryEncoding {
            context: vec![1.0, 0.0],
            metadata: vec![0.0, 1.0],
        };
        let w = |g: f64| ProfileWeights::new(0.5, 0.5, g, 1.0 - g).unwrap();
        assert_eq!(enc.compose(&w(1.0)).unwrap(), vec![1.0, 0.0]);
        assert_eq!(enc.compose(&w(0.0)).unwrap(), vec![0.0, 1.0]);
        assert_eq!(enc.compose(&w(0.5)).unwrap(), vec![0.5, 0.5]);
    }

    fn toy_index(rows: &[(&str, &[f32])]) -> ProfiledIndex {
        let docs: Vec<Document> = rows.iter().map(|(id, _)| doc(id)).collect();
        let (corpus, _) = Corpus::from_parts(docs, vec![]).unwrap();
        let base = matrix(rows);
        let ctx = EmbeddingMatrix::new(base.dim()).unwrap();
        build_profiled_index(&corpus, &base, &ctx, &ProfileWeights::default()).unwrap()
    }

    fn all(index: &ProfiledIndex) -> BTreeSet<String> {
        index.doc_ids().iter().cloned().collect()
    }

    #[test]
    fn self_similarity_ranks_first() {
        let index = toy_index(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8]), ("c", &[0.0, 1.0])]);
        let list = retrieve(&index, "q", &[0.6, 0.8], &all(&index), 3).unwrap();
        assert_eq!(list.entries[0].doc_id, "b");
        assert!((list.entries[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_falls_back_to_id_order() {
        let index = toy_index(&[("c", &[1.0, 0.0, 0.0]), ("a", &[0.0, 1.0, 0.0]), ("b", &[1.0, 1.0, 0.0])]);
        let list = retrieve(&index, "q", &[0.0, 0.0, 1.0], &all(&index), 2).unwrap();
        assert_eq!(list.doc_ids(), vec!["a", "b"]);
        assert!(list.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn zero_vectors_score_zero() {
        let index = toy_index(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0])]);
        let list = retrieve(&index, "q", &[0.0, 0.0], &all(&index), 2).unwrap();
        assert!(list.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn admissible_set_and_k_are_respected() {
        let index = toy_index(&[("a", &[1.0, 0.0]), ("b", &[0.9, 0.1]), ("c", &[0.0, 1.0])]);
        let only: BTreeSet<String> = ["b", "c"].iter().map(|s| s.to_string()).collect();
        let list = retrieve(&index, "q", &[1.0, 0.0], &only, 5).unwrap();
        assert_eq!(list.doc_ids(), vec!["b", "c"]);
        assert!(retrieve(&index, "q", &[1.0, 0.0], &BTreeSet::new(), 5).is_err());
        assert!(retrieve(&index, "q", &[1.0, 0.0], &only, 0).is_err());
    }

    #[test]
    fn parse_range_is_inclusive() {
        let r = parse_range("0:1:0.1").unwrap();
        assert_eq!(r.len(), 11);
        assert_eq!(r[3], 0.3);
        assert_eq!(r[10], 1.0);
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn index_save_load_round_trip() {
        let index = toy_index(&[("b", &[0.5, 0.25]), ("a", &[1.0, -2.0])]);
        let dir = tempfile::tempdir().unwrap();
        let (p, m) = (dir.path().join("i.cvec"), dir.path().join("i.json"));
        index.save(&p, &m, "abc").unwrap();
        let (back, manifest) = ProfiledIndex::load(&p, &m).unwrap();
        assert_eq!(back, index);
        assert_eq!(manifest.corpus_hash, "abc");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn l2(v: &[f32]) -> f64 {
            v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
        }

        prop_compose! {
            fn corpus_parts()(n in 2usize..12)(
                n in Just(n),
                base in proptest::collection::vec(proptest::collection::vec(-2.0f32..2.0, 3), n),
                edges in proptest::collection::vec((0..n, 0..n, proptest::collection::vec(-2.0f32..2.0, 3)), 0..20),
            ) -> (Corpus, EmbeddingMatrix, EmbeddingMatrix) {
                let docs = (0..n).map(|i| doc(&format!("d{i:02}"))).collect();
                let mut ctx = EmbeddingMatrix::new(3).unwrap();
                let mut list = Vec::new();
                for (e, (a, b, v)) in edges.into_iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    let text = format!("c{e}");
                    ctx.push(&text, &v).unwrap();
                    list.push(CitationEdge {
                        citing_id: format!("d{a:02}"),
                        cited_id: format!("d{b:02}"),
                        context_text: text,
                    });
                }
                let mut m = EmbeddingMatrix::new(3).unwrap();
                for (i, v) in base.iter().enumerate() {
                    m.push(format!("d{i:02}"), v).unwrap();
                }
                let (corpus, _) = Corpus::from_parts(docs, list).unwrap();
                (corpus, m, ctx)
            }
        }

        proptest! {
            #[test]
            fn drift_is_bounded_by_the_largest_neighbour(
                (corpus, base, ctx) in corpus_parts(),
                alpha in 0.0f64..=1.0,
            ) {
                let beta = 1.0 - alpha;
                let parts = ProfileComponents::new(&corpus, &base, &ctx).unwrap();
                let w = ProfileWeights::new(alpha, beta, 0.5, 0.5).unwrap();
                let index = parts.fuse(&w, false).unwrap();
                let max_ctx = (0..ctx.len()).map(|i| l2(ctx.row(i))).fold(0.0, f64::max);
                let max_base = (0..base.len()).map(|i| l2(base.row(i))).fold(0.0, f64::max);
                for (i, id) in index.doc_ids().iter().enumerate() {
                    let v = base.row(i);
                    let drift: Vec<f32> = index.vector(id).unwrap().iter().zip(v).map(|(a, b)| a - b).collect();
                    prop_assert!(l2(&drift) <= alpha * max_ctx + beta * max_base + 1e-5);
                }
                prop_assert_eq!(parts.fuse(&w, false).unwrap(), index);
            }

            #[test]
            fn full_depth_retrieval_is_a_sorted_permutation(
                (corpus, base, ctx) in corpus_parts(),
                q in proptest::collection::vec(-1.0f32..1.0, 3),
                mask in proptest::collection::vec(any::<bool>(), 12),
                scale in -4i32..5,
            ) {
                let parts = ProfileComponents::new(&corpus, &base, &ctx).unwrap();
                let index = parts.fuse(&ProfileWeights::default(), true).unwrap();
                let admissible: BTreeSet<String> = index
                    .doc_ids()
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &keep)| keep)
                    .map(|(id, _)| id.clone())
                    .collect();
                prop_assume!(!admissible.is_empty());
                let list = retrieve(&index, "q", &q, &admissible, admissible.len()).unwrap();
                let got: BTreeSet<String> = list.doc_ids().into_iter().collect();
                prop_assert_eq!(&got, &admissible);
                for pair in list.entries.windows(2) {
                    prop_assert!(
                        pair[0].score > pair[1].score
                            || (pair[0].score == pair[1].score && pair[0].doc_id < pair[1].doc_id)
                    );
                }
                // powers of two scale exactly, so the order cannot move
                let c = 2f32.powi(scale);
                let scaled: Vec<f32> = q.iter().map(|x| x * c).collect();
                let again = retrieve(&index, "q", &scaled, &admissible, admissible.len()).unwrap();
                prop_assert_eq!(again.doc_ids(), list.doc_ids());
            }
        }
    }
}
