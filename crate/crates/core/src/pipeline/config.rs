use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::davinci::DavinciConfig;
use crate::embedding::{EncoderChoice, EncoderConfig};
use crate::error::{Error, Result};
use crate::prior::PriorConfig;
use crate::profiler::ProfileWeights;
use crate::split::SplitConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub documents: PathBuf,
    pub edges: PathBuf,
    pub queries: PathBuf,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    /// Retrieval-stage encoder.
    pub text: EncoderChoice,
    pub text_config: EncoderConfig,
    /// Reranker pair encoder.
    pub pair: EncoderChoice,
    pub pair_config: EncoderConfig,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            text: EncoderChoice::Hash,
            text_config: EncoderConfig::default(),
            pair: EncoderChoice::Hash,
            pair_config: EncoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ProfileSettings {
    pub weights: ProfileWeights,
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub retrieval_ks: Vec<usize>,
    pub rerank_ks: Vec<usize>,
    /// Cap on validation queries used for checkpoint selection.
    pub max_validation_queries: Option<usize>,
    /// Write per-query gold ranks into the reports.
    pub per_query: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            retrieval_ks: crate::metrics::RETRIEVAL_KS.to_vec(),
            rerank_ks: crate::metrics::RERANK_KS.to_vec(),
            max_validation_queries: None,
            per_query: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub profile: ProfileSettings,
    /// Retrieval depth `k`, decay and prior mode.
    #[serde(default)]
    pub prior: PriorConfig,
    /// Its `prior` and `seed` fields are taken from the top level.
    #[serde(default)]
    pub davinci: DavinciConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(paths: Paths) -> Self {
        PipelineConfig {
            paths,
            split: SplitConfig::default(),
            encoder: EncoderSettings::default(),
            profile: ProfileSettings::default(),
            prior: PriorConfig::default(),
            davinci: DavinciConfig::default(),
            eval: EvalSettings::default(),
            seed: 0,
        }
    }

    /// Reads TOML (`.toml`) or JSON; relative paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for f in [&mut p.documents, &mut p.edges, &mut p.queries, &mut p.workdir] {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The reranker settings with the shared prior and seed applied.
    pub fn davinci_config(&self) -> DavinciConfig {
        DavinciConfig {
            prior: self.prior,
            seed: self.seed,
            ..self.davinci.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.encoder.text_config.validate()?;
        self.encoder.pair_config.validate()?;
        self.profile.weights.validate()?;
        self.prior.validate()?;
        self.davinci_config().validate()?;
        if self.encoder.pair == EncoderChoice::Hash && self.encoder.pair_config.dim != self.davinci.d_enc2 {
            return Err(Error::Config(format!(
                "davinci.d_enc2 = {} but the pair encoder produces {} dims",
                self.davinci.d_enc2, self.encoder.pair_config.dim
            )));
        }
        for &k in self.eval.retrieval_ks.iter().chain(&self.eval.rerank_ks) {
            if k == 0 {
                return Err(Error::Config("evaluation cutoffs must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of everything that influences results (the workdir is
    /// excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.workdir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::new(Paths {
            documents: "d.jsonl".into(),
            edges: "e.jsonl".into(),
            queries: "q.jsonl".into(),
            workdir: "out".into(),
        })
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, cfg().to_toml()).unwrap();
        let back = PipelineConfig::load(&path).unwrap();
        assert_eq!(back.paths.documents, dir.path().join("d.jsonl"));
        assert_eq!(back.davinci, cfg().davinci);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"paths": {"documents": "a", "edges": "b", "queries": "c", "workdir": "w"}, "prior": {"k": 50}}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.prior.k, 50);
        assert_eq!(c.prior.lambda_decay, 0.95);
    }

    #[test]
    fn hash_ignores_workdir_only() {
        let a = cfg();
        let mut b = cfg();
        b.paths.workdir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn pair_dim_must_match() {
        let mut c = cfg();
        c.davinci.d_enc2 = 64;
        assert!(c.validate().is_err());
        c.encoder.pair_config.dim = 64;
        assert!(c.validate().is_ok());
    }
}
