use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Linear variance schedule over `T` steps plus the accelerated sampling
/// sub-sequence. Step indices are 1-based throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sample_steps: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(t_max: usize, beta_start: f64, beta_end: f64, sample_count: usize) -> Result<Self> {
        if t_max == 0 || sample_count == 0 || sample_count > t_max {
            return Err(Error::InvalidArgument(format!(
                "need T >= T_s >= 1, got T={t_max}, T_s={sample_count}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta, sample_count))
    }

    /// Schedule from explicit betas (used for hand-built cases).
    pub fn from_betas(beta: Vec<f64>, sample_count: usize) -> Self {
        let t_max = beta.len();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        let sample_steps = if sample_count <= 1 {
            vec![t_max]
        } else {
            (0..sample_count)
                .map(|k| 1 + ((k * (t_max - 1)) as f64 / (sample_count - 1) as f64).round() as usize)
                .collect()
        };
        Self { t_max, beta, alpha, alpha_bar, sigma, sample_steps }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            Err(Error::InvalidArgument(format!("step {t} outside [1, {}]", self.t_max)))
        } else {
            Ok(())
        }
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma_at(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

/// Closed-form marginal `√ᾱ_t·v0 + √(1−ᾱ_t)·noise`.
pub fn forward_diffuse<S: Scalar>(v0: &Tensor<S>, t: usize, noise: &Tensor<S>, sched: &NoiseSchedule) -> Result<Tensor<S>> {
    sched.check(t)?;
    if v0.shape() != noise.shape() {
        return Err(Error::Shape(format!("v0 {:?} vs noise {:?}", v0.shape(), noise.shape())));
    }
    let ab = sched.alpha_bar_at(t);
    let (a, b) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()));
    v0.zip_map(noise, |x, e| a * x + b * e)
}

/// One ancestral step:
/// `v_{t−1} = (v_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z`. `z` must be absent at `t = 1`.
pub fn reverse_step<S: Scalar>(
    v_t: &Tensor<S>,
    eps_hat: &Tensor<S>,
    t: usize,
    sched: &NoiseSchedule,
    z: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    sched.check(t)?;
    if t == 1 && z.is_some() {
        return Err(Error::InvalidArgument("noise must be zero at t = 1".into()));
    }
    let c = sched.beta_at(t) / (1.0 - sched.alpha_bar_at(t)).sqrt();
    let inv = 1.0 / sched.alpha_at(t).sqrt();
    let (c, inv) = (S::lit(c), S::lit(inv));
    let mut out = v_t.zip_map(eps_hat, |v, e| inv * (v - c * e))?;
    if let Some(z) = z {
        let s = S::lit(sched.sigma_at(t));
        out = out.zip_map(z, |x, n| x + s * n)?;
    }
    Ok(out)
}
