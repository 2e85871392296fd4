use serde::{Deserialize, Serialize};

use super::LayerParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step at time `t` (1-based) on a flat parameter slice.
pub fn adam_update(
    cfg: &AdamConfig,
    t: u64,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam over a fixed, ordered list of layers. The layer order must not change
/// between steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<[Vec<f64>; 4]>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, layers: &mut [&mut LayerParams]) {
        if self.moments.is_empty() {
            self.moments = layers
                .iter()
                .map(|l| {
                    let (w, b) = (l.weights.len(), l.bias.len());
                    [vec![0.0; w], vec![0.0; w], vec![0.0; b], vec![0.0; b]]
                })
                .collect();
        }
        assert_eq!(self.moments.len(), layers.len(), "optimizer layer list changed");
        self.t += 1;
        for (layer, [mw, vw, mb, vb]) in layers.iter_mut().zip(&mut self.moments) {
            let LayerParams {
                weights,
                bias,
                grad_weights,
                grad_bias,
            } = &mut **layer;
            adam_update(&self.config, self.t, weights.data_mut(), grad_weights.data(), mw, vw);
            adam_update(&self.config, self.t, bias.data_mut(), grad_bias.data(), mb, vb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut p = [1.0, -1.0, 0.0];
        let g = [0.5, -3.0, 0.0];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_update(&cfg, 1, &mut p, &g, &mut m, &mut v);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut p = [3.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=2000 {
            let g = [2.0 * (p[0] - 1.0)];
            adam_update(&cfg, t, &mut p, &g, &mut m, &mut v);
        }
        assert!((p[0] - 1.0).abs() < 1e-3, "{}", p[0]);
    }
}
