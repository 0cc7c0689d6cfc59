use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ablation, DavinciConfig};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Scalar, Tape};

/// The four towers. `mlp_score` is absent in the semantics-only variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DavinciModel<T> {
    pub config: DavinciConfig,
    pub mlp_text: Mlp<T>,
    pub mlp_score: Option<Mlp<T>>,
    pub mlp_gate: Mlp<T>,
    pub mlp_out: Mlp<T>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape<T> {
    text: Tape<T>,
    score: Option<Tape<T>>,
    gate: Tape<T>,
    out: Tape<T>,
    concat: Vec<f64>,
    pub score_value: f64,
}

impl<T> ModelTape<T> {
    /// Gate values as applied to the fused features.
    pub fn gate(&self) -> &[f64] {
        self.gate.output()
    }

    pub fn min_hidden_margin(&self) -> f64 {
        let mut m = self.text.min_hidden_margin();
        if let Some(s) = &self.score {
            m = m.min(s.min_hidden_margin());
        }
        m.min(self.gate.min_hidden_margin())
            .min(self.out.min_hidden_margin())
    }
}

fn tower_dims(input: usize, hidden: usize, output: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, depth - 1));
    dims.push(output);
    dims
}

struct Shapes {
    text: Vec<usize>,
    score: Option<Vec<usize>>,
    gate: Vec<usize>,
    out: Vec<usize>,
}

fn shapes(c: &DavinciConfig) -> Shapes {
    let (e, h, d) = (c.d_enc2, c.d_h, c.depth);
    match c.ablation {
        Ablation::SemanticsOnly => Shapes {
            text: tower_dims(e, h, h, d),
            score: None,
            gate: tower_dims(e, h, h, d),
            out: tower_dims(h, h, 1, d),
        },
        Ablation::ScalarGate => Shapes {
            text: tower_dims(e, h, h, d),
            score: Some(tower_dims(1, h, h, d)),
            gate: tower_dims(1, h, 1, d),
            out: tower_dims(2 * h, h, 1, d),
        },
        _ => Shapes {
            text: tower_dims(e, h, h, d),
            score: Some(tower_dims(1, h, h, d)),
            gate: tower_dims(e + 1, h, 2 * h, d),
            out: tower_dims(2 * h, h, 1, d),
        },
    }
}

/// `max(0, s_neg - s_pos + m)`.
pub fn triplet_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (s_neg - s_pos + margin).max(0.0)
}

impl<T: Scalar> DavinciModel<T> {
    fn build<F>(config: &DavinciConfig, mut make: F) -> Result<Self>
    where
        F: FnMut(&[usize], Activation) -> Result<Mlp<T>>,
    {
        config.validate()?;
        let s = shapes(config);
        Ok(DavinciModel {
            config: config.clone(),
            mlp_text: make(&s.text, Activation::Identity)?,
            mlp_score: s.score.map(|d| make(&d, Activation::Identity)).transpose()?,
            mlp_gate: make(&s.gate, Activation::Sigmoid)?,
            mlp_out: make(&s.out, Activation::Sigmoid)?,
        })
    }

    /// Seeded He-uniform initialisation.
    pub fn new(config: &DavinciConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build(config, |dims, act| Mlp::he_uniform(dims, act, &mut rng))
    }

    pub fn zeros(config: &DavinciConfig) -> Result<Self> {
        Self::build(config, Mlp::zeros)
    }

    fn towers(&self) -> Vec<&Mlp<T>> {
        let mut v = vec![&self.mlp_text];
        v.extend(self.mlp_score.as_ref());
        v.push(&self.mlp_gate);
        v.push(&self.mlp_out);
        v
    }

    pub fn param_count(&self) -> usize {
        self.towers().iter().map(|m| m.param_count()).sum()
    }

    /// All parameter slices in gradient-buffer order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.mlp_text.params_mut();
        if let Some(s) = self.mlp_score.as_mut() {
            v.extend(s.params_mut());
        }
        v.extend(self.mlp_gate.params_mut());
        v.extend(self.mlp_out.params_mut());
        v
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.towers()
            .into_iter()
            .flat_map(|m| m.params().into_iter().flatten().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dims("parameter vector", self.param_count(), flat.len()));
        }
        let mut it = flat.iter();
        for p in self.params_mut().into_iter().flatten() {
            *p = *it.next().expect("length checked");
        }
        Ok(())
    }

    pub fn score_with_tape(&self, e_cls: &[T], prior: T) -> Result<ModelTape<T>> {
        if e_cls.len() != self.config.d_enc2 {
            return Err(Error::dims("pair embedding", self.config.d_enc2, e_cls.len()));
        }
        if !prior.as_f64().is_finite() {
            return Err(Error::NonFinite("prior".into()));
        }
        let (h_text, text) = self.mlp_text.forward(e_cls)?;
        let mut concat = h_text;
        let score = match &self.mlp_score {
            Some(m) => {
                let (h_score, tape) = m.forward(&[prior])?;
                concat.extend(h_score);
                Some(tape)
            }
            None => None,
        };
        let gate_input: Vec<T> = match self.config.ablation {
            Ablation::SemanticsOnly => e_cls.to_vec(),
            Ablation::ScalarGate => vec![prior],
            _ => e_cls.iter().copied().chain([prior]).collect(),
        };
        let (g, gate) = self.mlp_gate.forward(&gate_input)?;
        let fused: Vec<T> = if g.len() == 1 {
            concat.iter().map(|&h| T::from_f64(g[0] * h)).collect()
        } else {
            concat.iter().zip(&g).map(|(&h, &g)| T::from_f64(g * h)).collect()
        };
        let (s, out) = self.mlp_out.forward(&fused)?;
        Ok(ModelTape {
            text,
            score,
            gate,
            out,
            concat,
            score_value: s[0],
        })
    }

    pub fn score_candidate(&self, e_cls: &[T], prior: T) -> Result<f64> {
        Ok(self.score_with_tape(e_cls, prior)?.score_value)
    }

    /// Adds `d_score * dS/dθ` into `grads` (length [`Self::param_count`]).
    pub fn backward_into(&self, tape: &ModelTape<T>, d_score: f64, grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.param_count() {
            return Err(Error::dims("gradient buffer", self.param_count(), grads.len()));
        }
        let n_text = self.mlp_text.param_count();
        let n_score = self.mlp_score.as_ref().map_or(0, Mlp::param_count);
        let n_gate = self.mlp_gate.param_count();
        let (g_text, rest) = grads.split_at_mut(n_text);
        let (g_score, rest) = rest.split_at_mut(n_score);
        let (g_gate, g_out) = rest.split_at_mut(n_gate);

        let d_fused = self.mlp_out.backward_into(&tape.out, &[d_score], g_out)?;
        let g = tape.gate.output();
        let (d_gate, d_concat): (Vec<f64>, Vec<f64>) = if g.len() == 1 {
            let dg = d_fused.iter().zip(&tape.concat).map(|(a, b)| a * b).sum();
            (vec![dg], d_fused.iter().map(|d| d * g[0]).collect())
        } else {
            (
                d_fused.iter().zip(&tape.concat).map(|(a, b)| a * b).collect(),
                d_fused.iter().zip(g).map(|(a, b)| a * b).collect(),
            )
        };
        self.mlp_gate.backward_into(&tape.gate, &d_gate, g_gate)?;
        let d_h = self.config.d_h;
        self.mlp_text.backward_into(&tape.text, &d_concat[..d_h], g_text)?;
        if let (Some(m), Some(t)) = (&self.mlp_score, &tape.score) {
            m.backward_into(t, &d_concat[d_h..], g_score)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> DavinciModel<U> {
        DavinciModel {
            config: self.config.clone(),
            mlp_text: self.mlp_text.cast(),
            mlp_score: self.mlp_score.as_ref().map(Mlp::cast),
            mlp_gate: self.mlp_gate.cast(),
            mlp_out: self.mlp_out.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: DavinciConfig,
    pub param_count: usize,
    pub epoch: usize,
    pub steps: u64,
    pub config_hash: String,
}

const PARAMS_KEY: &str = "parameters";

impl DavinciModel<f32> {
    pub fn save(&self, cvec_path: &Path, manifest_path: &Path, epoch: usize, steps: u64, config_hash: &str) -> Result<()> {
        let mut m = EmbeddingMatrix::new(self.param_count())?;
        m.push(PARAMS_KEY, &self.flat_params())?;
        m.write(cvec_path)?;
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            param_count: self.param_count(),
            epoch,
            steps,
            config_hash: config_hash.to_string(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
    }

    pub fn load(cvec_path: &Path, manifest_path: &Path) -> Result<(Self, CheckpointManifest)> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
        let m = EmbeddingMatrix::load(cvec_path)?;
        let flat = m
            .get(PARAMS_KEY)
            .ok_or_else(|| Error::Format("checkpoint has no parameter record".into()))?;
        let mut model = DavinciModel::zeros(&manifest.config)?;
        model.set_flat_params(flat)?;
        Ok((model, manifest))
    }
}
