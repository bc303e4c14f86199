use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mddc::model::{Availability, MddcModel};
use crate::mddc::schedule::{forward_diffuse, NoiseSchedule};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Loss nodes of one MDDC step, each averaged over the batch and summed
/// over modalities.
#[derive(Debug, Clone, Copy)]
pub struct MddcLosses {
    pub dm: Var,
    pub rec: Var,
    pub diff: Var,
}

/// `mean_b ‖a_b − b_b‖²` over the rows of two `B × n` nodes.
pub fn row_sq_error<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Result<Var> {
    let rows = g.shape(a).first().copied().unwrap_or(0);
    if rows == 0 {
        return Err(Error::Domain("squared error over an empty batch".into()));
    }
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.scale(s, S::one() / S::lit(rows as f64)))
}

/// Diffusion and reconstruction losses for per-modality batches of
/// observed items (`batches[m]`, possibly empty for some `m`).
///
/// Target latents and condition sources are computed from the current
/// encoders but enter the diffusion term as constants; the encoders learn
/// from the reconstruction term.
#[allow(clippy::too_many_arguments)]
pub fn mddc_losses<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    model: &MddcModel<S>,
    features: &[Tensor<S>],
    avail: &Availability,
    batches: &[Vec<usize>],
    sched: &NoiseSchedule,
    alpha1: f64,
    r: &mut Rng,
) -> Result<MddcLosses> {
    if batches.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty MDDC batch".into()));
    }
    let d = model.latent_dim();
    let mut dm: Option<Var> = None;
    let mut rec: Option<Var> = None;
    for (m, items) in batches.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let x = features[m].select_rows(items);
        let xv = g.constant(x.clone());
        let z = model.autoencoders[m].encode(g, store, xv)?;
        let xr = model.autoencoders[m].decode(g, store, z)?;
        let l_rec = row_sq_error(g, xr, xv)?;

        let lat: Vec<Tensor<S>> = (0..model.n_modalities())
            .map(|j| model.encode_rows(store, j, &features[j].select_rows(items)))
            .collect::<Result<_>>()?;
        let steps: Vec<usize> = items.iter().map(|_| r.random_range(1..=sched.t_max)).collect();
        let noise: Tensor<S> = Tensor::matrix(
            items.len(),
            d,
            (0..items.len() * d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *r);
                    S::lit(z)
                })
                .collect(),
        )?;
        let mut v_t = Tensor::zeros(&[items.len(), d]);
        for (b, &t) in steps.iter().enumerate() {
            let v0 = Tensor::matrix(1, d, lat[m].row(b).to_vec())?;
            let e = Tensor::matrix(1, d, noise.row(b).to_vec())?;
            v_t.row_mut(b).copy_from_slice(forward_diffuse(&v0, t, &e, sched)?.data());
        }
        let sources: Vec<Var> = lat.into_iter().map(|t| g.constant(t)).collect();
        let cond = model.condition(g, store, m, items, &sources, avail)?;
        let vt = g.constant(v_t);
        let eps_hat = model.predict_noise(g, store, m, vt, cond, &steps)?;
        let eps = g.constant(noise);
        let l_dm = row_sq_error(g, eps_hat, eps)?;

        dm = Some(match dm {
            Some(a) => g.add(a, l_dm)?,
            None => l_dm,
        });
        rec = Some(match rec {
            Some(a) => g.add(a, l_rec)?,
            None => l_rec,
        });
    }
    let (dm, rec) = (dm.expect("non-empty"), rec.expect("non-empty"));
    let weighted = g.scale(rec, S::lit(alpha1));
    let diff = g.add(dm, weighted)?;
    Ok(MddcLosses { dm, rec, diff })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_gives_zero() {
        let mut g = Graph::<f64>::new();
        let e = g.constant(Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]));
        let l = row_sq_error(&mut g, e, e).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn batch_mean_of_row_norms() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let l = row_sq_error(&mut g, a, b).unwrap();
        assert!((g.value(l).item() - 2.5).abs() < 1e-15);
    }
}
