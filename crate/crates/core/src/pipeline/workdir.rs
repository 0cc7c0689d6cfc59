use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineConfig, PipelineReport, TrainingSummary};
use crate::corpus::{read_jsonl, write_jsonl, Corpus};
use crate::davinci::{DavinciModel, TrainOutcome};
use crate::error::{Error, Result};
use crate::profiler::{ProfiledIndex, RetrievalList};
use crate::split::SplitName;

const MANIFEST: &str = "manifest.json";

/// Config hash, seed and content hash of every artifact in a workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
}

pub fn corpus_hash(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for d in corpus.documents() {
        h.update(serde_json::to_vec(d).expect("document serializes"));
        h.update(b"\n");
    }
    for e in corpus.edges() {
        h.update(serde_json::to_vec(e).expect("edge serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub struct Workdir {
    root: PathBuf,
    manifest: RefCell<RunManifest>,
}

impl Workdir {
    /// Opens `root` for writing. A workdir that already holds artifacts of a
    /// different configuration is refused.
    pub fn create(root: &Path, config: &PipelineConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let hash = config.hash();
        let manifest = match Self::read_manifest(root)? {
            Some(m) if m.config_hash != hash => {
                return Err(Error::Validation(format!(
                    "{} holds artifacts of config {}, not {}; use a fresh workdir",
                    root.display(),
                    m.config_hash,
                    hash
                )))
            }
            Some(m) => m,
            None => RunManifest {
                config_hash: hash,
                seed: config.seed,
                artifacts: BTreeMap::new(),
            },
        };
        let w = Workdir {
            root: root.to_path_buf(),
            manifest: RefCell::new(manifest),
        };
        w.write_text("config.toml", &config.to_toml())?;
        Ok(w)
    }

    /// Opens an existing workdir for reading; its config hash must match.
    pub fn open(root: &Path, config: &PipelineConfig) -> Result<Self> {
        let manifest = Self::read_manifest(root)?.ok_or_else(|| {
            Error::Validation(format!("{} has no run manifest", root.display()))
        })?;
        if manifest.config_hash != config.hash() {
            return Err(Error::Validation(format!(
                "{} was produced by config {}, current config is {}",
                root.display(),
                manifest.config_hash,
                config.hash()
            )));
        }
        Ok(Workdir {
            root: root.to_path_buf(),
            manifest: RefCell::new(manifest),
        })
    }

    fn read_manifest(root: &Path) -> Result<Option<RunManifest>> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> RunManifest {
        self.manifest.borrow().clone()
    }

    fn record(&self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.manifest
            .borrow_mut()
            .artifacts
            .insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        self.finish()
    }

    /// Rewrites the run manifest.
    pub fn finish(&self) -> Result<()> {
        let path = self.path(MANIFEST);
        let json = serde_json::to_string_pretty(&*self.manifest.borrow()).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Fails unless `name` is unchanged since this workdir recorded it.
    pub fn verify(&self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = self.manifest.borrow().artifacts.get(name).cloned();
        match expected {
            Some(h) if h == hex::encode(Sha256::digest(&bytes)) => Ok(()),
            Some(_) => Err(Error::Validation(format!("{name} was modified after it was written"))),
            None => Err(Error::Validation(format!("{name} is not an artifact of this run"))),
        }
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.record(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.write_text(name, &(json + "\n"))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        self.verify(name)?;
        let path = self.path(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<()> {
        write_jsonl(self.path(name), records)?;
        self.record(name)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        self.verify(name)?;
        read_jsonl(self.path(name))
    }

    pub fn retrieval_name(split: SplitName) -> String {
        format!("retrieval_{}.jsonl", split.as_str())
    }

    pub fn write_retrievals(&self, split: SplitName, lists: &[RetrievalList]) -> Result<()> {
        self.write_jsonl(&Self::retrieval_name(split), lists)
    }

    pub fn read_retrievals(&self, split: SplitName) -> Result<Vec<RetrievalList>> {
        self.read_jsonl(&Self::retrieval_name(split))
    }

    pub fn save_index(&self, index: &ProfiledIndex, corpus: &Corpus) -> Result<()> {
        index.save(&self.path("index.cvec"), &self.path("index.json"), &corpus_hash(corpus))?;
        self.record("index.cvec")?;
        self.record("index.json")
    }

    pub fn load_index(&self, corpus: &Corpus) -> Result<ProfiledIndex> {
        self.verify("index.cvec")?;
        self.verify("index.json")?;
        let (index, manifest) = ProfiledIndex::load(&self.path("index.cvec"), &self.path("index.json"))?;
        if manifest.corpus_hash != corpus_hash(corpus) {
            return Err(Error::Validation("the index was built from a different corpus".into()));
        }
        Ok(index)
    }

    pub fn save_model(&self, outcome: &TrainOutcome) -> Result<()> {
        let hash = self.manifest.borrow().config_hash.clone();
        outcome.model.save(
            &self.path("model.cvec"),
            &self.path("model.json"),
            outcome.best_epoch,
            outcome.steps,
            &hash,
        )?;
        self.record("model.cvec")?;
        self.record("model.json")
    }

    pub fn load_model(&self) -> Result<DavinciModel<f32>> {
        self.verify("model.cvec")?;
        self.verify("model.json")?;
        let (model, manifest) = DavinciModel::load(&self.path("model.cvec"), &self.path("model.json"))?;
        if manifest.config_hash != self.manifest.borrow().config_hash {
            return Err(Error::Validation("the model checkpoint belongs to another config".into()));
        }
        Ok(model)
    }

    pub fn write_training(&self, summary: &TrainingSummary) -> Result<()> {
        self.write_json("training.json", summary)
    }

    pub fn write_reports(&self, report: &PipelineReport) -> Result<()> {
        self.write_json("report_retrieval.json", &report.retrieval)?;
        self.write_json("report_rerank.json", &report.rerank)?;
        let table = format!(
            "{}{}",
            report.retrieval.to_table("profiler"),
            report.rerank.to_table("reranker")
        );
        self.write_text("report.txt", &table)
    }

    /// Wall-clock timings live apart from the reports, which stay
    /// byte-reproducible.
    pub fn write_timings(&self, timings: &BTreeMap<&'static str, f64>) -> Result<()> {
        let path = self.path("timings.json");
        let json = serde_json::to_string_pretty(timings).expect("timings serialize");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}
