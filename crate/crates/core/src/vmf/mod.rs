//! Von Mises-Fisher negative log-likelihood between a free predicted vector and a unit
//! target vector.
//!
//! For a prediction `p` with `kappa = |p|` in `m` dimensions the loss is
//! `-log C_m(kappa) - p.e`, where `C_m(kappa) = kappa^(m/2-1) / ((2 pi)^(m/2) I_(m/2-1)(kappa))`.
//! Its gradient is `A_m(kappa) p / kappa - e` with `A_m = I_(m/2) / I_(m/2-1)`.

pub mod bessel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use bessel::log_bessel_i;

/// Below this norm the prediction is rejected: `log C_m` diverges as `kappa -> 0`.
pub const MIN_KAPPA: f64 = 1e-8;
pub const DEFAULT_LAMBDA1: f64 = 0.02;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VmfLossValue {
    pub loss: f64,
    pub grad_wrt_prediction: Vec<f64>,
}

/// Training objective for continuous-output heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousLoss {
    /// Plain vMF negative log-likelihood.
    Vmf,
    /// vMF plus `lambda1 * |p|`.
    VmfL1 { lambda1: f64 },
    /// `-log C_m(|p|) - lambda2 * p.e`.
    VmfL2 { lambda2: f64 },
    /// `1 - cos(p, e)`, kept for ablations.
    Cosine,
}

impl Default for ContinuousLoss {
    fn default() -> Self {
        ContinuousLoss::VmfL1 {
            lambda1: DEFAULT_LAMBDA1,
        }
    }
}

impl ContinuousLoss {
    pub fn evaluate(&self, prediction: &[f64], target: &[f64]) -> Result<VmfLossValue> {
        let mut grad = vec![0.0; prediction.len()];
        let loss = self.loss_and_grad(prediction, target, &mut grad)?;
        Ok(VmfLossValue {
            loss,
            grad_wrt_prediction: grad,
        })
    }

    /// Writes the gradient into `grad` and returns the loss.
    pub fn loss_and_grad(&self, prediction: &[f64], target: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (kappa, dot) = check_inputs(prediction, target)?;
        let m = prediction.len();
        if let ContinuousLoss::Cosine = self {
            let cos = dot / kappa;
            for ((g, &p), &e) in grad.iter_mut().zip(prediction).zip(target) {
                *g = -(e / kappa - dot * p / (kappa * kappa * kappa));
            }
            return Ok(1.0 - cos);
        }
        let (log_c, ratio) = log_normalizer_and_ratio(m, kappa)?;
        let (lambda1, lambda2) = match *self {
            ContinuousLoss::Vmf => (0.0, 1.0),
            ContinuousLoss::VmfL1 { lambda1 } => (lambda1, 1.0),
            ContinuousLoss::VmfL2 { lambda2 } => (0.0, lambda2),
            ContinuousLoss::Cosine => unreachable!(),
        };
        let radial = (ratio + lambda1) / kappa;
        for ((g, &p), &e) in grad.iter_mut().zip(prediction).zip(target) {
            *g = radial * p - lambda2 * e;
        }
        let mut loss = -log_c - lambda2 * dot;
        if lambda1 != 0.0 {
            loss += lambda1 * kappa;
        }
        Ok(loss)
    }
}

fn check_inputs(prediction: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    if prediction.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            found: prediction.len(),
        });
    }
    if prediction.is_empty() {
        return Err(Error::Empty("vMF loss needs at least one dimension"));
    }
    if prediction.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vMF loss input"));
    }
    let tnorm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (tnorm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!("vMF target must be unit norm, got {tnorm}")));
    }
    let kappa = prediction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if kappa < MIN_KAPPA {
        return Err(Error::invalid(format!("prediction norm {kappa} is below {MIN_KAPPA}")));
    }
    let dot = prediction.iter().zip(target).map(|(a, b)| a * b).sum();
    Ok((kappa, dot))
}

/// `log C_m(kappa)`.
pub fn log_normalizer(dim: usize, kappa: f64) -> Result<f64> {
    if dim < 2 {
        return Err(Error::invalid("vMF loss needs at least two dimensions"));
    }
    let nu = dim as f64 / 2.0 - 1.0;
    let log_i = log_bessel_i(nu, kappa)?;
    Ok(log_normalizer_from(dim, kappa, log_i))
}

fn log_normalizer_from(dim: usize, kappa: f64, log_i: f64) -> f64 {
    let half = dim as f64 / 2.0;
    (half - 1.0) * kappa.ln() - half * (2.0 * std::f64::consts::PI).ln() - log_i
}

/// `log C_m(kappa)` together with `A_m(kappa) = I_(m/2)(kappa) / I_(m/2-1)(kappa)`.
pub fn log_normalizer_and_ratio(dim: usize, kappa: f64) -> Result<(f64, f64)> {
    if dim < 2 {
        return Err(Error::invalid("vMF loss needs at least two dimensions"));
    }
    let nu = dim as f64 / 2.0 - 1.0;
    let (log_i, log_i_next) = bessel::log_bessel_i_pair(nu, kappa)?;
    Ok((log_normalizer_from(dim, kappa, log_i), (log_i_next - log_i).exp()))
}

/// Plain vMF negative log-likelihood.
pub fn nll_vmf(prediction: &[f64], target: &[f64]) -> Result<VmfLossValue> {
    ContinuousLoss::Vmf.evaluate(prediction, target)
}

/// vMF negative log-likelihood plus `lambda1 * |prediction|`.
pub fn nll_vmf_regularized(prediction: &[f64], target: &[f64], lambda1: f64) -> Result<VmfLossValue> {
    if !(lambda1 >= 0.0) {
        return Err(Error::invalid(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    if lambda1 == 0.0 {
        return nll_vmf(prediction, target);
    }
    ContinuousLoss::VmfL1 { lambda1 }.evaluate(prediction, target)
}

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub dim: usize,
    pub lambda1: f64,
    pub pairs: usize,
    pub max_rel_error: f64,
}

/// Analytic gradients against central differences for seeded random `(prediction, target)`
/// pairs. Predictions are drawn with norms spread over `[0.5, 60]` so every Bessel regime is
/// visited. The error of a pair is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over the whole gradient vector; near-zero components alone would only measure
/// cancellation in the differences.
pub fn gradient_check(dims: &[usize], lambdas: &[f64], pairs: usize, h: f64, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &dim in dims {
        for &lambda1 in lambdas {
            let mut worst = 0.0f64;
            for _ in 0..pairs {
                let (p, e) = random_pair(&mut rng, dim);
                let analytic = nll_vmf_regularized(&p, &e, lambda1)?.grad_wrt_prediction;
                let mut probe = p.clone();
                let mut numeric = vec![0.0; dim];
                for i in 0..dim {
                    probe[i] = p[i] + h;
                    let up = nll_vmf_regularized(&probe, &e, lambda1)?.loss;
                    probe[i] = p[i] - h;
                    let down = nll_vmf_regularized(&probe, &e, lambda1)?.loss;
                    probe[i] = p[i];
                    numeric[i] = (up - down) / (2.0 * h);
                }
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
                let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
                worst = worst.max(norm(&diff) / scale);
            }
            rows.push(GradCheckRow {
                dim,
                lambda1,
                pairs,
                max_rel_error: worst,
            });
        }
    }
    Ok(rows)
}

fn random_pair(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let norm = rng.gen_range(0.5..60.0);
    let p = unit(rng).into_iter().map(|x| x * norm).collect();
    (p, unit(rng))
}
