//! Seeded synthetic corpus with planted citation structure.
//!
//! Documents belong to topics and use topic-specific pseudo-words. Every
//! document owns a unique keyphrase that never appears in its own text, only
//! in contexts that cite it "specifically" ("adopting <kp> ...").
//! "Generic" background citations carry no keyphrase and favour a small set
//! of seminal documents, whose abstracts contain marker words. Citation
//! events of the newest documents, and a fraction of older ones, are withheld
//! from the edge list and emitted as queries.

use std::fs;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, CitationEdge, Corpus, Document, Query};
use crate::error::{Error, Result};
use crate::pipeline::{Paths, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub documents: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub seminal_fraction: f64,
    /// Sampling weight of a seminal document in generic citations.
    pub seminal_boost: f64,
    pub citations_per_doc: usize,
    /// Share of citations that name the cited keyphrase.
    pub specific_fraction: f64,
    /// Share of older citation events withheld as training queries.
    pub query_fraction: f64,
    /// Newest share of documents whose citations all become queries.
    pub heldout_fraction: f64,
    /// Documents that cite nothing (the start of the timeline).
    pub warmup_documents: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            documents: 2400,
            topics: 30,
            words_per_topic: 40,
            filler_words: 300,
            seminal_fraction: 0.05,
            seminal_boost: 50.0,
            citations_per_doc: 6,
            specific_fraction: 0.5,
            query_fraction: 0.2,
            heldout_fraction: 0.2,
            warmup_documents: 300,
            seed: 7,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.documents <= self.warmup_documents {
            return Err(Error::Config(
                "fixture needs topics and more documents than warm-up documents".into(),
            ));
        }
        if self.words_per_topic < 8 || self.filler_words < 8 {
            return Err(Error::Config("fixture vocabularies are too small".into()));
        }
        for (name, x) in [
            ("seminal_fraction", self.seminal_fraction),
            ("specific_fraction", self.specific_fraction),
            ("query_fraction", self.query_fraction),
            ("heldout_fraction", self.heldout_fraction),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.seminal_boost < 1.0 {
            return Err(Error::Config("seminal_boost must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub documents: Vec<Document>,
    pub edges: Vec<CitationEdge>,
    pub queries: Vec<Query>,
    /// Ids of seminal documents, sorted.
    pub seminal: Vec<String>,
}

const SYLLABLES: [&str; 16] = [
    "ba", "ke", "ri", "mo", "tu", "sa", "ne", "li", "po", "gu", "fa", "de", "zi", "vo", "hu", "ca",
];
const SEMINAL_MARKERS: [&str; 4] = ["foundational", "landmark", "widely", "pioneering"];
/// Cue words that mark the regime of a citation context.
const SPECIFIC_CUES: [&str; 3] = ["following", "adopting", "extending"];
const GENERIC_CUES: [&str; 3] = ["see", "surveyed", "overview"];

fn cues<R: Rng>(rng: &mut R, set: &[&str]) -> String {
    set.choose_multiple(rng, 2).copied().collect::<Vec<_>>().join(" ")
}

fn pseudo_word(mut n: usize, prefix: &str) -> String {
    let mut w = prefix.to_string();
    loop {
        w.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
    }
    w
}

fn keyphrase(doc: usize) -> String {
    format!("{} {}", pseudo_word(doc, "kx"), pseudo_word(doc * 7 + 3, "kz"))
}

struct Vocab {
    topics: Vec<Vec<String>>,
    filler: Vec<String>,
}

impl Vocab {
    fn new(c: &FixtureConfig) -> Self {
        Vocab {
            topics: (0..c.topics)
                .map(|t| {
                    (0..c.words_per_topic)
                        .map(|i| pseudo_word(t * c.words_per_topic + i, "t"))
                        .collect()
                })
                .collect(),
            filler: (0..c.filler_words).map(|i| pseudo_word(i, "f")).collect(),
        }
    }

    fn words<R: Rng>(&self, rng: &mut R, topic: usize, n_topic: usize, n_filler: usize) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::with_capacity(n_topic + n_filler);
        for _ in 0..n_topic {
            out.push(self.topics[topic].choose(rng).unwrap());
        }
        for _ in 0..n_filler {
            out.push(self.filler.choose(rng).unwrap());
        }
        out.shuffle(rng);
        out
    }
}

pub fn generate(config: &FixtureConfig) -> Result<Fixture> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Vocab::new(config);
    let n = config.documents;
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");

    let topics: Vec<usize> = (0..n).map(|_| rng.gen_range(0..config.topics)).collect();
    let seminal: Vec<bool> = (0..n).map(|_| rng.gen_bool(config.seminal_fraction)).collect();
    let id = |i: usize| format!("d{i:05}");

    let mut documents = Vec::with_capacity(n);
    let mut day = 0u64;
    for i in 0..n {
        day += rng.gen_range(1..=4);
        let t = topics[i];
        let title = vocab.words(&mut rng, t, 3, 1).join(" ");
        let mut body = vocab.words(&mut rng, t, 10, 12);
        if seminal[i] {
            for _ in 0..3 {
                let at = rng.gen_range(0..=body.len());
                body.insert(at, SEMINAL_MARKERS.choose(&mut rng).unwrap());
            }
        }
        documents.push(Document {
            doc_id: id(i),
            title,
            abstract_text: body.join(" "),
            pub_date: start + Days::new(day),
        });
    }

    // earlier documents per topic, for sampling cited papers
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); config.topics];
    let heldout_from = n - (n as f64 * config.heldout_fraction).round() as usize;
    let mut edges = Vec::new();
    let mut queries = Vec::new();
    for citer in 0..n {
        let t = topics[citer];
        if citer >= config.warmup_documents && !by_topic[t].is_empty() {
            let pool = &by_topic[t];
            let weights: Vec<f64> = pool
                .iter()
                .map(|&d| if seminal[d] { config.seminal_boost } else { 1.0 })
                .collect();
            let popular = WeightedIndex::new(&weights).expect("positive weights");
            let mut cited = Vec::new();
            for _ in 0..config.citations_per_doc.min(pool.len()) {
                let specific = rng.gen_bool(config.specific_fraction);
                let d = if specific {
                    *pool.choose(&mut rng).unwrap()
                } else {
                    pool[popular.sample(&mut rng)]
                };
                if cited.contains(&d) {
                    continue;
                }
                cited.push(d);
                let context = if specific {
                    format!(
                        "{} {} {}",
                        cues(&mut rng, &SPECIFIC_CUES),
                        keyphrase(d),
                        vocab.words(&mut rng, t, 3, 2).join(" ")
                    )
                } else {
                    format!(
                        "{} {}",
                        cues(&mut rng, &GENERIC_CUES),
                        vocab.words(&mut rng, t, 4, 2).join(" ")
                    )
                };
                let as_query = citer >= heldout_from || rng.gen_bool(config.query_fraction);
                if as_query {
                    let doc = &documents[citer];
                    queries.push(Query {
                        query_id: format!("q{:06}", queries.len()),
                        context_text: context,
                        title: doc.title.clone(),
                        abstract_text: doc.abstract_text.clone(),
                        pub_date: doc.pub_date,
                        gold_cited_id: id(d),
                        source_id: Some(id(citer)),
                    });
                } else {
                    edges.push(CitationEdge {
                        citing_id: id(citer),
                        cited_id: id(d),
                        context_text: context,
                    });
                }
            }
        }
        by_topic[t].push(citer);
    }

    Ok(Fixture {
        seminal: (0..n).filter(|&i| seminal[i]).map(id).collect(),
        documents,
        edges,
        queries,
    })
}

impl Fixture {
    pub fn corpus(&self) -> Result<Corpus> {
        Ok(Corpus::from_parts(self.documents.clone(), self.edges.clone())?.0)
    }

    /// Writes `documents.jsonl`, `edges.jsonl` and `queries.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(dir.join("documents.jsonl"), &self.documents)?;
        write_jsonl(dir.join("edges.jsonl"), &self.edges)?;
        write_jsonl(dir.join("queries.jsonl"), &self.queries)
    }
}

/// Pipeline settings sized for the fixture: a wide unigram retrieval encoder
/// (hash collisions otherwise drown the topic signal), a 256-d pair encoder,
/// a small reranker and a shallow candidate list.
pub fn pipeline_config(data_dir: &Path, workdir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(Paths {
        documents: data_dir.join("documents.jsonl"),
        edges: data_dir.join("edges.jsonl"),
        queries: data_dir.join("queries.jsonl"),
        workdir: workdir.to_path_buf(),
    });
    c.encoder.text_config.dim = 1024;
    c.encoder.text_config.ngram_range = (1, 1);
    c.encoder.pair_config.dim = 256;
    c.encoder.pair_config.ngram_range = (1, 1);
    c.davinci.d_enc2 = 256;
    c.davinci.d_h = 32;
    c.davinci.negatives = 8;
    c.davinci.epochs = 10;
    c.prior.k = 100;
    c.eval.retrieval_ks = vec![10, 50, 100];
    c.eval.max_validation_queries = Some(200);
    c
}
