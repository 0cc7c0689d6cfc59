//! Document corpus, citation graph and citation-context snippets.
//!
//! Records are read from JSON-lines files (one object per line). The corpus is
//! immutable once built; the reverse index maps each cited document to the
//! edges that point at it so inward neighbourhoods can be read in O(degree).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "date")]
    pub pub_date: NaiveDate,
}

impl Document {
    /// Title and abstract joined by a single space; the abstract is skipped
    /// when empty.
    pub fn text(&self) -> String {
        join_title_abstract(&self.title, &self.abstract_text)
    }
}

pub(crate) fn join_title_abstract(title: &str, abstract_text: &str) -> String {
    let title = title.trim();
    let abstract_text = abstract_text.trim();
    match (title.is_empty(), abstract_text.is_empty()) {
        (_, true) => title.to_string(),
        (true, false) => abstract_text.to_string(),
        (false, false) => format!("{title} {abstract_text}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationEdge {
    #[serde(rename = "citing")]
    pub citing_id: String,
    #[serde(rename = "cited")]
    pub cited_id: String,
    #[serde(rename = "context")]
    pub context_text: String,
}

/// A citation context to recommend for, with the citing paper's metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "qid")]
    pub query_id: String,
    #[serde(rename = "context")]
    pub context_text: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "date")]
    pub pub_date: NaiveDate,
    #[serde(rename = "gold")]
    pub gold_cited_id: String,
    /// Corpus id of the citing paper, when it is part of the corpus.
    #[serde(rename = "source", default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl Query {
    /// The query's metadata text (title and abstract).
    pub fn metadata_text(&self) -> String {
        join_title_abstract(&self.title, &self.abstract_text)
    }
}

/// Counts gathered while validating a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub edges_total: usize,
    pub edges_kept: usize,
    pub dangling_edges: usize,
    pub self_citations: usize,
    pub temporal_violations: usize,
    pub empty_abstracts: usize,
}

impl IngestReport {
    pub fn edges_dropped(&self) -> usize {
        self.dangling_edges + self.self_citations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    edges: Vec<CitationEdge>,
    // cited_id -> indices into `edges`, ascending by (citing_id, edge position)
    inward: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Validates documents and edges and builds the reverse index.
    ///
    /// Duplicate or empty document ids are rejected. Edges with a missing
    /// endpoint or a self-citation are dropped and counted; edges where the
    /// citing paper predates the cited one are kept but counted.
    pub fn from_parts(
        documents: Vec<Document>,
        edges: Vec<CitationEdge>,
    ) -> Result<(Corpus, IngestReport)> {
        let mut report = IngestReport {
            edges_total: edges.len(),
            ..IngestReport::default()
        };
        let mut by_id = BTreeMap::new();
        for doc in documents {
            if doc.doc_id.is_empty() {
                return Err(Error::Validation("document with empty id".into()));
            }
            if doc.abstract_text.trim().is_empty() {
                report.empty_abstracts += 1;
            }
            if let Some(prev) = by_id.insert(doc.doc_id.clone(), doc) {
                return Err(Error::Validation(format!(
                    "duplicate document id {:?}",
                    prev.doc_id
                )));
            }
        }
        report.documents = by_id.len();

        let mut kept = Vec::with_capacity(edges.len());
        for edge in edges {
            if edge.citing_id == edge.cited_id {
                report.self_citations += 1;
                continue;
            }
            let (Some(citing), Some(cited)) =
                (by_id.get(&edge.citing_id), by_id.get(&edge.cited_id))
            else {
                report.dangling_edges += 1;
                continue;
            };
            if citing.pub_date < cited.pub_date {
                report.temporal_violations += 1;
            }
            kept.push(edge);
        }
        report.edges_kept = kept.len();

        Ok((Corpus::index(by_id, kept), report))
    }

    fn index(documents: BTreeMap<String, Document>, edges: Vec<CitationEdge>) -> Corpus {
        let mut inward: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, edge) in edges.iter().enumerate() {
            inward.entry(edge.cited_id.clone()).or_default().push(i);
        }
        for list in inward.values_mut() {
            list.sort_by(|&a, &b| edges[a].citing_id.cmp(&edges[b].citing_id).then(a.cmp(&b)));
        }
        Corpus {
            documents,
            edges,
            inward,
        }
    }

    pub fn documents(&self) -> impl ExactSizeIterator<Item = &Document> {
        self.documents.values()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.documents.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn edges(&self) -> &[CitationEdge] {
        &self.edges
    }

    /// All citing documents of `doc_id` with their context snippets, sorted by
    /// citing id and then by position in the edge list. Repeated citations
    /// from the same paper appear once per context.
    pub fn inward_neighbors(&self, doc_id: &str) -> Result<Vec<(&str, &str)>> {
        if !self.documents.contains_key(doc_id) {
            return Err(Error::not_found("document", doc_id));
        }
        Ok(self
            .inward_edges(doc_id)
            .map(|e| (e.citing_id.as_str(), e.context_text.as_str()))
            .collect())
    }

    pub(crate) fn inward_edges<'a>(
        &'a self,
        doc_id: &str,
    ) -> impl Iterator<Item = &'a CitationEdge> + 'a {
        self.inward
            .get(doc_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    /// A copy of this corpus keeping every document but only the edges whose
    /// citing paper satisfies `keep_citer`.
    pub fn with_citers<F>(&self, mut keep_citer: F) -> Corpus
    where
        F: FnMut(&Document) -> bool,
    {
        let edges = self
            .edges
            .iter()
            .filter(|e| keep_citer(&self.documents[&e.citing_id]))
            .cloned()
            .collect();
        Corpus::index(self.documents.clone(), edges)
    }

    /// Loads and validates a corpus from JSON-lines document and edge files.
    pub fn ingest(
        documents_path: impl AsRef<Path>,
        edges_path: impl AsRef<Path>,
    ) -> Result<(Corpus, IngestReport)> {
        let documents = read_jsonl(documents_path)?;
        let edges = read_jsonl(edges_path)?;
        Corpus::from_parts(documents, edges)
    }

    /// Writes documents (ordered by id) and edges (in stored order) back out
    /// in the ingestion format.
    pub fn persist(
        &self,
        documents_path: impl AsRef<Path>,
        edges_path: impl AsRef<Path>,
    ) -> Result<()> {
        write_jsonl(documents_path, self.documents.values())?;
        write_jsonl(edges_path, self.edges.iter())
    }
}

/// Reads queries, rejecting records with an empty context or gold id.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let queries: Vec<Query> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, q) in queries.iter().enumerate() {
        let problem = if q.query_id.is_empty() {
            Some("empty qid")
        } else if q.context_text.trim().is_empty() {
            Some("empty context")
        } else if q.gold_cited_id.is_empty() {
            Some("empty gold id")
        } else if !seen.insert(q.query_id.as_str()) {
            Some("duplicate qid")
        } else {
            None
        };
        if let Some(message) = problem {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: message.into(),
            });
        }
    }
    Ok(queries)
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, date: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: format!("title {id}"),
            abstract_text: format!("abstract {id}"),
            pub_date: date.parse().unwrap(),
        }
    }

    fn edge(citing: &str, cited: &str, ctx: &str) -> CitationEdge {
        CitationEdge {
            citing_id: citing.into(),
            cited_id: cited.into(),
            context_text: ctx.into(),
        }
    }

    fn three_docs() -> Vec<Document> {
        vec![
            doc("A", "2019-01-01"),
            doc("B", "2020-01-01"),
            doc("C", "2021-01-01"),
        ]
    }

    #[test]
    fn consistent_input_keeps_everything() {
        let edges = vec![edge("B", "A", "b cites a"), edge("C", "A", "c cites a")];
        let (corpus, report) = Corpus::from_parts(three_docs(), edges).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.edges().len(), 2);
        assert_eq!(report.edges_dropped(), 0);
    }

    #[test]
    fn dangling_edge_is_dropped_and_counted() {
        let (corpus, report) =
            Corpus::from_parts(three_docs(), vec![edge("B", "Z", "missing")]).unwrap();
        assert!(corpus.edges().is_empty());
        assert_eq!(report.dangling_edges, 1);
        assert_eq!(report.edges_kept + report.edges_dropped(), report.edges_total);
    }

    #[test]
    fn self_citations_are_dropped() {
        let (corpus, report) =
            Corpus::from_parts(three_docs(), vec![edge("A", "A", "me")]).unwrap();
        assert!(corpus.edges().is_empty());
        assert_eq!(report.self_citations, 1);
    }

    #[test]
    fn temporal_violation_is_kept_but_counted() {
        let (corpus, report) =
            Corpus::from_parts(three_docs(), vec![edge("A", "C", "back to the future")]).unwrap();
        assert_eq!(corpus.edges().len(), 1);
        assert_eq!(report.temporal_violations, 1);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut docs = three_docs();
        docs.push(doc("A", "2022-01-01"));
        let err = Corpus::from_parts(docs, vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn empty_abstract_is_accepted() {
        let mut docs = three_docs();
        docs[0].abstract_text.clear();
        let (corpus, report) = Corpus::from_parts(docs, vec![]).unwrap();
        assert_eq!(report.empty_abstracts, 1);
        assert_eq!(corpus.document("A").unwrap().text(), "title A");
    }

    #[test]
    fn neighbours_are_sorted_and_keep_multiplicity() {
        let edges = vec![
            edge("C", "A", "c first"),
            edge("B", "A", "b"),
            edge("C", "A", "c second"),
        ];
        let (corpus, _) = Corpus::from_parts(three_docs(), edges).unwrap();
        assert_eq!(
            corpus.inward_neighbors("A").unwrap(),
            vec![("B", "b"), ("C", "c first"), ("C", "c second")]
        );
        assert!(corpus.inward_neighbors("C").unwrap().is_empty());
        assert!(matches!(
            corpus.inward_neighbors("nope"),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"A\",\"title\":\"t\",\"abstract\":\"\",\"date\":\"2020-01-01\"}\n{\"id\":\"B\",\"title\":\"t\",\"abstract\":\"\"}\n",
        )
        .unwrap();
        match read_jsonl::<Document>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_date_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"A\",\"title\":\"t\",\"abstract\":\"\",\"date\":\"2020-02-30\"}\n",
        )
        .unwrap();
        assert!(matches!(
            read_jsonl::<Document>(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Corpus::ingest("/nonexistent/docs.jsonl", "/nonexistent/edges.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn query_schema_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        std::fs::write(
            &path,
            "{\"qid\":\"q1\",\"context\":\"ctx\",\"title\":\"t\",\"abstract\":\"a\",\"date\":\"2021-03-04\",\"gold\":\"A\"}\n\
             {\"qid\":\"q2\",\"context\":\"\",\"title\":\"t\",\"abstract\":\"a\",\"date\":\"2021-03-04\",\"gold\":\"A\"}\n",
        )
        .unwrap();
        assert!(matches!(load_queries(&path), Err(Error::Parse { line: 2, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ids(n: usize) -> impl Strategy<Value = String> {
            (0..n).prop_map(|i| format!("d{i}"))
        }

        prop_compose! {
            fn parts()(n in 1usize..8)(
                dates in proptest::collection::vec(2000i32..2020, n),
                edges in proptest::collection::vec((ids(n + 2), ids(n + 2), "[a-z ]{1,12}"), 0..25),
            ) -> (Vec<Document>, Vec<CitationEdge>) {
                let docs = dates
                    .iter()
                    .enumerate()
                    .map(|(i, y)| doc(&format!("d{i}"), &format!("{y}-06-01")))
                    .collect();
                let edges = edges.into_iter().map(|(a, b, c)| edge(&a, &b, &c)).collect();
                (docs, edges)
            }
        }

        proptest! {
            #[test]
            fn edge_accounting_and_reverse_index((docs, edges) in parts()) {
                let (corpus, report) = Corpus::from_parts(docs, edges).unwrap();
                prop_assert_eq!(report.edges_kept + report.edges_dropped(), report.edges_total);
                prop_assert_eq!(report.edges_kept, corpus.edges().len());
                for d in corpus.documents() {
                    let inward = corpus.inward_neighbors(&d.doc_id).unwrap();
                    let expected = corpus.edges().iter().filter(|e| e.cited_id == d.doc_id).count();
                    prop_assert_eq!(inward.len(), expected);
                    prop_assert!(inward.windows(2).all(|w| w[0].0 <= w[1].0));
                }
            }

            #[test]
            fn persist_then_ingest_is_identity((docs, edges) in parts()) {
                let (corpus, _) = Corpus::from_parts(docs, edges).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let (d, e) = (dir.path().join("d.jsonl"), dir.path().join("e.jsonl"));
                corpus.persist(&d, &e).unwrap();
                let (back, report) = Corpus::ingest(&d, &e).unwrap();
                prop_assert_eq!(report.edges_dropped(), 0);
                prop_assert_eq!(back, corpus);
            }
        }
    }
}
