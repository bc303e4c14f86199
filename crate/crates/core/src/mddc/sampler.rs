use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mddc::schedule::NoiseSchedule;
use crate::numerics::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Standard-normal `rows × cols` tensor, row `r` drawn from `rngs[r]`.
pub fn normal_rows<S: Scalar>(rngs: &mut [Rng], cols: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(rngs.len() * cols);
    for r in rngs.iter_mut() {
        for _ in 0..cols {
            let z: f64 = StandardNormal.sample(r);
            data.push(S::lit(z));
        }
    }
    Tensor::matrix(rngs.len(), cols, data).expect("sized")
}

/// Runs the accelerated sampler over `sched.sample_steps`, from `start`
/// (the latent at the last sampling step) down to step 0.
///
/// The deterministic variant applies the implicit update
/// `v_prev = √ᾱ_prev·v̂0 + √(1−ᾱ_prev)·ε̂`. The stochastic variant takes
/// ancestral steps with the respaced `β = 1 − ᾱ_τ/ᾱ_prev` and `σ² = β`,
/// which is exactly the one-step reverse update when the stride is 1.
/// `eps` receives the current latent and the step index; rows of fresh
/// noise come from `rngs`. With `clip`, each implied `v̂0` is clamped to
/// `[−clip, clip]` and the noise estimate re-derived from it.
pub fn run_sampler<S, F>(
    start: Tensor<S>,
    sched: &NoiseSchedule,
    deterministic: bool,
    clip: Option<f64>,
    mut eps: F,
    rngs: &mut [Rng],
) -> Result<Tensor<S>>
where
    S: Scalar,
    F: FnMut(&Tensor<S>, usize) -> Result<Tensor<S>>,
{
    if !deterministic && rngs.len() != start.rows() {
        return Err(Error::Shape(format!("{} noise streams for {} rows", rngs.len(), start.rows())));
    }
    let steps = &sched.sample_steps;
    let mut v = start;
    for k in (0..steps.len()).rev() {
        let tau = steps[k];
        let prev = if k == 0 { 0 } else { steps[k - 1] };
        let mut e = eps(&v, tau)?;
        if e.shape() != v.shape() {
            return Err(Error::Shape(format!("noise prediction {:?} vs latent {:?}", e.shape(), v.shape())));
        }
        let ab = sched.alpha_bar_at(tau);
        let ab_prev = sched.alpha_bar_at(prev);
        if let Some(c) = clip {
            let (sa, sb, c) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()), S::lit(c));
            e = v.zip_map(&e, |x, n| {
                let x0 = ((x - sb * n) / sa).max(-c).min(c);
                (x - sa * x0) / sb
            })?;
        }
        if deterministic {
            let (sa, sb) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()));
            let (pa, pb) = (S::lit(ab_prev.sqrt()), S::lit((1.0 - ab_prev).sqrt()));
            v = v.zip_map(&e, |x, n| pa * ((x - sb * n) / sa) + pb * n)?;
        } else {
            let a = ab / ab_prev;
            let beta = 1.0 - a;
            let c = S::lit(beta / (1.0 - ab).sqrt());
            let inv = S::lit(1.0 / a.sqrt());
            v = v.zip_map(&e, |x, n| inv * (x - c * n))?;
            if prev > 0 {
                let z: Tensor<S> = normal_rows(rngs, v.cols());
                let s = S::lit(beta.sqrt());
                v = v.zip_map(&z, |x, n| x + s * n)?;
            }
        }
        if !v.all_finite() {
            return Err(Error::NonFinite(format!("sampler latent at step {tau}")));
        }
    }
    Ok(v)
}
