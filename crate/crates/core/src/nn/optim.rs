use serde::{Deserialize, Serialize};

use super::layer::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub rule: UpdateRule,
    pub step_size: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rule: UpdateRule::adam(),
            step_size: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size {} is invalid", self.step_size)));
        }
        match self.rule {
            UpdateRule::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::Config(format!("momentum {momentum} must lie in [0, 1)")))
            }
            UpdateRule::Adam { beta1, beta2, epsilon }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 =>
            {
                Err(Error::Config("Adam needs betas in [0, 1) and epsilon > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Moment buffers over the concatenation of all parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        let second = match config.rule {
            UpdateRule::Adam { .. } => vec![0.0; param_count],
            UpdateRule::SgdMomentum { .. } => Vec::new(),
        };
        Ok(OptimizerState {
            config,
            first: vec![0.0; param_count],
            second,
            steps: 0,
        })
    }

    /// One update of `params` (in gradient-buffer order) using `grads`.
    pub fn apply_update<T: Scalar>(&mut self, params: Vec<&mut [T]>, grads: &[f64]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != grads.len() || total != self.first.len() {
            return Err(Error::dims("optimizer update", self.first.len(), grads.len().max(total)));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at parameter {i}")));
        }
        self.steps += 1;
        let lr = self.config.step_size;
        let mut i = 0;
        match self.config.rule {
            UpdateRule::SgdMomentum { momentum } => {
                for p in params.into_iter().flat_map(|s| s.iter_mut()) {
                    let v = &mut self.first[i];
                    *v = momentum * *v + grads[i];
                    *p = T::from_f64(p.as_f64() - lr * *v);
                    i += 1;
                }
            }
            UpdateRule::Adam { beta1, beta2, epsilon } => {
                let t = self.steps as f64;
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                for p in params.into_iter().flat_map(|s| s.iter_mut()) {
                    let g = grads[i];
                    let m = &mut self.first[i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    let v = &mut self.second[i];
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let step = lr * (self.first[i] / c1) / ((self.second[i] / c2).sqrt() + epsilon);
                    *p = T::from_f64(p.as_f64() - step);
                    i += 1;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(lr: f64, momentum: f64) -> OptimizerState {
        let config = OptimizerConfig {
            rule: UpdateRule::SgdMomentum { momentum },
            step_size: lr,
        };
        OptimizerState::new(config, 1).unwrap()
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = [1.0f64];
        sgd(0.1, 0.0).apply_update(vec![&mut p[..]], &[1.0]).unwrap();
        assert_eq!(p[0], 0.9);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = [0.25f32];
        let mut opt = sgd(0.5, 0.9);
        for _ in 0..3 {
            opt.apply_update(vec![&mut p[..]], &[0.0]).unwrap();
        }
        assert_eq!(p[0], 0.25);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // after one step m̂ = g and v̂ = g², so the update is lr·g/(|g| + eps)
        let config = OptimizerConfig {
            rule: UpdateRule::adam(),
            step_size: 0.01,
        };
        let mut opt = OptimizerState::new(config, 2).unwrap();
        let mut p = [1.0f64, -2.0];
        let g = [0.5, -3.0];
        opt.apply_update(vec![&mut p[..]], &g).unwrap();
        let want = |x: f64, g: f64| x - 0.01 * g / (g.abs() + 1e-8);
        assert!((p[0] - want(1.0, 0.5)).abs() < 1e-15);
        assert!((p[1] - want(-2.0, -3.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = [1.0f64];
        let mut opt = sgd(0.1, 0.0);
        assert!(matches!(
            opt.apply_update(vec![&mut p[..]], &[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(opt.apply_update(vec![&mut p[..]], &[1.0, 2.0]).is_err());
        assert_eq!(p[0], 1.0);
    }
}
