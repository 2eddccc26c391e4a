//! Rectified Adam.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a list of flat parameter buffers.
#[derive(Debug, Clone)]
pub struct RAdam {
    config: RAdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl RAdam {
    pub fn new(config: RAdamConfig, sizes: &[usize]) -> Self {
        RAdam {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Length of the approximated simple moving average at the current step.
    fn rho(&self, t: f64) -> (f64, f64) {
        let b2 = self.config.beta2;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b2t = b2.powf(t);
        (rho_inf, rho_inf - 2.0 * t * b2t / (1.0 - b2t))
    }

    /// One update of every buffer. `grads[i]` may be `None` for buffers without gradient,
    /// which still see their moments decay.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let RAdamConfig { beta1, beta2, eps } = self.config;
        let (rho_inf, rho_t) = self.rho(t);
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        let rect = (rho_t > 4.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
        });
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i];
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                p[j] -= match rect {
                    Some(r) => lr * r * mhat / ((v[j] / bc2).sqrt() + eps),
                    None => lr * mhat,
                };
            }
        }
    }
}
