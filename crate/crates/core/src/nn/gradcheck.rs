/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Relative errors below this magnitude are measured against it instead,
/// so gradients that are essentially zero do not blow up the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Central differences `(f(x+eps) - f(x-eps)) / 2eps` for every parameter,
/// compared against `analytic`.
pub fn check_gradients<F>(params: &mut [f64], analytic: &[f64], eps: f64, mut f: F) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = f(params);
        params[i] = orig - eps;
        let down = f(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flatten(m: &Mlp<f64>) -> Vec<f64> {
        m.params().into_iter().flatten().copied().collect()
    }

    fn load(m: &mut Mlp<f64>, flat: &[f64]) {
        let mut it = flat.iter();
        for s in m.params_mut() {
            for p in s {
                *p = *it.next().unwrap();
            }
        }
    }

    #[test]
    fn quadratic() {
        let mut x = vec![1.0, -2.0];
        let r = check_gradients(&mut x, &[2.0, -4.0], 1e-4, |p| p[0] * p[0] + p[1] * p[1]);
        assert!(r.passes(1e-9));
        let r = check_gradients(&mut x, &[2.0, 4.0], 1e-4, |p| p[0] * p[0] + p[1] * p[1]);
        assert!(!r.passes(1e-3));
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn mlp_gradients_match_differences() {
        let mut checked = 0;
        for seed in 0u64.. {
            if checked == 20 {
                break;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = if seed % 2 == 0 { Activation::Sigmoid } else { Activation::Identity };
            let mut m = Mlp::<f64>::he_uniform(&[4, 6, 3], out, &mut rng).unwrap();
            for b in m.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
                *b = rng.gen_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, tape) = m.forward(&x).unwrap();
            if tape.min_hidden_margin() < 1e-2 {
                continue;
            }
            let mut grads = vec![0.0; m.param_count()];
            m.backward_into(&tape, &w, &mut grads).unwrap();
            let mut flat = flatten(&m);
            let mut probe = m.clone();
            let r = check_gradients(&mut flat, &grads, 1e-4, |p| {
                load(&mut probe, p);
                let (y, _) = probe.forward(&x).unwrap();
                y.iter().zip(&w).map(|(a, b)| a * b).sum()
            });
            assert!(r.passes(1e-3), "seed {seed}: {r:?}");
            checked += 1;
        }
    }
}
