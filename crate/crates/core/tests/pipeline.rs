use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use citerec::corpus::{load_queries, read_jsonl, Corpus, Query};
use citerec::fixture::{self, FixtureConfig};
use citerec::pipeline::{run_pipeline, PipelineConfig};
use citerec::profiler::RetrievalList;

fn small_run(dir: &Path) -> PipelineConfig {
    let data = dir.join("data");
    let f = FixtureConfig {
        documents: 600,
        topics: 8,
        warmup_documents: 100,
        ..Default::default()
    };
    fixture::generate(&f).unwrap().write(&data).unwrap();
    let mut config = fixture::pipeline_config(&data, &dir.join("work"));
    config.davinci.epochs = 2;
    config
}

#[test]
fn end_to_end_outputs_respect_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path());
    let report = run_pipeline(&config).unwrap();
    assert!(report.retrieval.mrr > 0.0 && report.rerank.mrr > 0.0);

    let data = dir.path().join("data");
    let (corpus, _) = Corpus::ingest(data.join("documents.jsonl"), data.join("edges.jsonl")).unwrap();
    let queries: BTreeMap<String, Query> = load_queries(data.join("queries.jsonl"))
        .unwrap()
        .into_iter()
        .map(|q| (q.query_id.clone(), q))
        .collect();
    let work = dir.path().join("work");
    let retrieved: Vec<RetrievalList> = read_jsonl(work.join("retrieval_test.jsonl")).unwrap();
    let reranked: Vec<RetrievalList> = read_jsonl(work.join("rerank_test.jsonl")).unwrap();
    assert!(!retrieved.is_empty());
    assert_eq!(retrieved.len(), reranked.len());

    let sources: BTreeSet<&str> = retrieved
        .iter()
        .filter_map(|l| queries[&l.query_id].source_id.as_deref())
        .collect();
    for (before, after) in retrieved.iter().zip(&reranked) {
        assert_eq!(before.query_id, after.query_id);
        let q = &queries[&before.query_id];
        assert!(before.entries.len() <= config.prior.k);
        for c in &before.entries {
            assert!(corpus.document(&c.doc_id).unwrap().pub_date < q.pub_date);
            assert!(!sources.contains(c.doc_id.as_str()), "{} retrieved an evaluation source", q.query_id);
        }
        let mut a = before.doc_ids();
        let mut b = after.doc_ids();
        a.sort();
        b.sort();
        assert_eq!(a, b, "reranking must permute the retrieved list");
    }
}

#[test]
fn a_workdir_is_bound_to_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path());
    let first = run_pipeline(&config).unwrap();
    assert_eq!(run_pipeline(&config).unwrap(), first);

    let mut other = config.clone();
    other.seed += 1;
    assert!(matches!(run_pipeline(&other), Err(e) if e.is_validation()));
}
