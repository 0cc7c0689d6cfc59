//! Base vector representations for documents, contexts and query/candidate
//! pairs.
//!
//! Two providers are supported: a deterministic signed feature-hashing
//! encoder over word n-grams, and precomputed vectors loaded from CVEC files
//! (see [`EmbeddingMatrix`]).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};

/// Marker placed between the two sides of a pair encoding.
pub const SEP: &str = "[SEP]";

const CVEC_MAGIC: &[u8; 6] = b"CVEC1\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram_range: (usize, usize),
    pub casefold: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 256,
            ngram_range: (1, 3),
            casefold: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn with_dim(dim: usize) -> Self {
        EncoderConfig {
            dim,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!(
                "encoder dim must be at least 8, got {}",
                self.dim
            )));
        }
        let (lo, hi) = self.ngram_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid n-gram range ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token<'a> {
    Word(&'a str),
    Sep,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    for (i, segment) in text.split(SEP).enumerate() {
        if i > 0 {
            out.push(Token::Sep);
        }
        out.extend(
            segment
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(Token::Word),
        );
    }
    out
}

// 64-bit FNV-1a followed by the splitmix64 finaliser, so bucket and sign
// bits are well mixed.
struct NgramHasher(u64);

impl NgramHasher {
    fn new(seed: u64) -> Self {
        let mut h = NgramHasher(0xcbf2_9ce4_8422_2325);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Encodes `text` as an L2-normalised signed hashed bag of word n-grams.
///
/// Words are maximal alphanumeric runs, so punctuation and whitespace runs
/// never matter. The `[SEP]` marker only takes part in n-grams of length two
/// or more. Text without any n-gram maps to the all-zeros vector.
pub fn encode_text(config: &EncoderConfig, text: &str) -> Vec<f32> {
    let tokens = tokenize(text);
    let words: Vec<String> = tokens
        .iter()
        .map(|t| match t {
            Token::Word(w) if config.casefold => w.to_lowercase(),
            Token::Word(w) => (*w).to_string(),
            Token::Sep => SEP.to_string(),
        })
        .collect();

    let mut acc = vec![0f64; config.dim];
    let (lo, hi) = config.ngram_range;
    for n in lo..=hi {
        for (start, window) in words.windows(n).enumerate() {
            if n == 1 && tokens[start] == Token::Sep {
                continue;
            }
            let mut h = NgramHasher::new(config.seed);
            h.write(&(n as u64).to_le_bytes());
            for w in window {
                h.write(w.as_bytes());
                h.write(&[0x1f]);
            }
            let z = h.finish();
            let bucket = (z % config.dim as u64) as usize;
            acc[bucket] += if z >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }

    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; config.dim];
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

/// Encodes a query/candidate pair as `query [SEP] candidate`.
pub fn encode_pair(config: &EncoderConfig, query_text: &str, candidate_text: &str) -> Vec<f32> {
    encode_text(config, &format!("{query_text} {SEP} {candidate_text}"))
}

/// The query side of a pair: context, then the citing paper's metadata.
pub fn pair_query_text(query: &Query) -> String {
    format!("{} {SEP} {}", query.context_text, query.metadata_text())
}

/// A keyed set of equal-length float vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dim must be positive".into()));
        }
        Ok(EmbeddingMatrix {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn push(&mut self, key: impl Into<String>, vector: &[f32]) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(Error::dims(format!("vector {key:?}"), self.dim, vector.len()));
        }
        if let Some(pos) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "vector {key:?} has a non-finite entry at {pos}"
            )));
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::Validation(format!(
                "key of {} bytes exceeds the CVEC limit",
                key.len()
            )));
        }
        if self.index.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate key {key:?}")));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.data.len() * 4 + self.keys.len() * 16);
        out.extend_from_slice(CVEC_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (i, key) in self.keys.iter().enumerate() {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for x in self.row(i) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(CVEC_MAGIC.as_slice())
            .ok_or_else(|| Error::Format("bad CVEC magic".into()))?;
        if rest.len() < 4 {
            return Err(Error::Format("truncated CVEC header".into()));
        }
        let dim = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let mut m = EmbeddingMatrix::new(dim)?;
        let mut pos = 4;
        let mut row = vec![0f32; dim];
        while pos < rest.len() {
            let record = m.len();
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let end = pos.checked_add(n).filter(|&e| e <= rest.len()).ok_or_else(|| {
                    Error::Format(format!("truncated CVEC record {record}"))
                })?;
                let s = &rest[*pos..end];
                *pos = end;
                Ok(s)
            };
            let klen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let key = std::str::from_utf8(take(&mut pos, klen)?)
                .map_err(|_| Error::Format(format!("CVEC record {record} key is not UTF-8")))?
                .to_string();
            let payload = take(&mut pos, dim * 4)?;
            for (x, chunk) in row.iter_mut().zip(payload.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            m.push(key, &row)?;
        }
        Ok(m)
    }

    /// Loads a CVEC file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Where base vectors come from: `hash` or `file:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderChoice {
    Hash,
    File(PathBuf),
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderChoice::Hash => f.write_str("hash"),
            EncoderChoice::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for EncoderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(EncoderChoice::Hash),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(EncoderChoice::File(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "encoder must be `hash` or `file:<path>`, got {s:?}"
                ))),
            },
        }
    }
}

impl TryFrom<String> for EncoderChoice {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EncoderChoice> for String {
    fn from(c: EncoderChoice) -> String {
        c.to_string()
    }
}

/// Provider of single-text vectors (the retrieval-stage encoder).
///
/// In file mode documents are looked up by id and every other text by its
/// exact string.
#[derive(Debug, Clone)]
pub enum TextEncoder {
    Hash(EncoderConfig),
    File(EmbeddingMatrix),
}

impl TextEncoder {
    pub fn from_choice(choice: &EncoderChoice, config: &EncoderConfig) -> Result<Self> {
        match choice {
            EncoderChoice::Hash => {
                config.validate()?;
                Ok(TextEncoder::Hash(config.clone()))
            }
            EncoderChoice::File(path) => Ok(TextEncoder::File(EmbeddingMatrix::load(path)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TextEncoder::Hash(c) => c.dim,
            TextEncoder::File(m) => m.dim(),
        }
    }

    pub fn document(&self, doc: &Document) -> Result<Vec<f32>> {
        match self {
            TextEncoder::Hash(c) => Ok(encode_text(c, &doc.text())),
            TextEncoder::File(m) => lookup(m, &doc.doc_id, "document vector"),
        }
    }

    pub fn text(&self, text: &str) -> Result<Vec<f32>> {
        match self {
            TextEncoder::Hash(c) => Ok(encode_text(c, text)),
            TextEncoder::File(m) => lookup(m, text, "text vector"),
        }
    }
}

/// Provider of query/candidate pair vectors (the reranker's input). File
/// mode keys pairs as `<qid>\t<doc_id>`.
#[derive(Debug, Clone)]
pub enum PairEncoder {
    Hash(EncoderConfig),
    File(EmbeddingMatrix),
}

impl PairEncoder {
    pub fn from_choice(choice: &EncoderChoice, config: &EncoderConfig) -> Result<Self> {
        match choice {
            EncoderChoice::Hash => {
                config.validate()?;
                Ok(PairEncoder::Hash(config.clone()))
            }
            EncoderChoice::File(path) => Ok(PairEncoder::File(EmbeddingMatrix::load(path)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PairEncoder::Hash(c) => c.dim,
            PairEncoder::File(m) => m.dim(),
        }
    }

    pub fn pair(&self, query: &Query, candidate: &Document) -> Result<Vec<f32>> {
        match self {
            PairEncoder::Hash(c) => Ok(encode_pair(c, &pair_query_text(query), &candidate.text())),
            PairEncoder::File(m) => lookup(
                m,
                &format!("{}\t{}", query.query_id, candidate.doc_id),
                "pair vector",
            ),
        }
    }
}

fn lookup(m: &EmbeddingMatrix, key: &str, kind: &'static str) -> Result<Vec<f32>> {
    m.get(key)
        .map(<[f32]>::to_vec)
        .ok_or_else(|| Error::not_found(kind, key))
}
