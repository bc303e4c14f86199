use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::mddc::model::{Availability, MddcModel};
use crate::mddc::sampler::{normal_rows, run_sampler};
use crate::mddc::schedule::NoiseSchedule;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{self, stream, Rng};
use crate::scalar::Scalar;

/// Sampling controls shared by every generation call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationSpec {
    pub deterministic: bool,
    pub seed: u64,
    /// Refinement round; distinct rounds draw distinct noise.
    pub round: u64,
    /// Clamp implied clean latents to the observed latent range.
    pub clip: bool,
}

/// Largest absolute latent coordinate over the observed rows of `m`.
pub fn latent_bound<S: Scalar>(store: &ParamStore<S>, model: &MddcModel<S>, bundle: &DatasetBundle<S>, m: usize) -> Result<Option<f64>> {
    let obs = bundle.indicator().observed_set(m);
    if obs.is_empty() {
        return Ok(None);
    }
    let v = model.encode_rows(store, m, &bundle.modality(m).data.select_rows(&obs))?;
    Ok(Some(v.data().iter().fold(0.0f64, |a, x| a.max(x.as_f64().abs()))))
}

fn item_stream(spec: &GenerationSpec, m: usize, item: usize) -> Rng {
    rng::substream(spec.seed, stream::SAMPLING, &[spec.round, m as u64, item as u64])
}

/// Generates modality `m` for every item of `items` from the other
/// modalities' rows of `features`. Each item draws from its own noise
/// stream, so results do not depend on batch composition.
#[allow(clippy::too_many_arguments)]
pub fn generate_batch<S: Scalar>(
    store: &ParamStore<S>,
    model: &MddcModel<S>,
    m: usize,
    items: &[usize],
    features: &[Tensor<S>],
    avail: &Availability,
    sched: &NoiseSchedule,
    spec: &GenerationSpec,
    bound: Option<f64>,
) -> Result<Tensor<S>> {
    if items.is_empty() {
        return Ok(Tensor::zeros(&[0, model.dims[m]]));
    }
    let d = model.latent_dim();
    let mut g = Graph::new();
    let sources: Vec<Var> = (0..model.n_modalities())
        .map(|j| {
            let rows = if j == m {
                Tensor::zeros(&[items.len(), d])
            } else {
                model.encode_rows(store, j, &features[j].select_rows(items))?
            };
            Ok(g.constant(rows))
        })
        .collect::<Result<_>>()?;
    let cond = model.condition(&mut g, store, m, items, &sources, avail)?;
    let cond = g.value(cond).clone();

    let mut rngs: Vec<Rng> = items.iter().map(|&i| item_stream(spec, m, i)).collect();
    let start: Tensor<S> = normal_rows(&mut rngs, d);
    let v0 = run_sampler(
        start,
        sched,
        spec.deterministic,
        bound,
        |v, t| model.predict_noise_rows(store, m, v, &cond, &vec![t; items.len()]),
        &mut rngs,
    )?;
    let x = model.decode_rows(store, m, &v0)?;
    if !x.all_finite() {
        return Err(Error::NonFinite(format!("generated features for modality {m}")));
    }
    Ok(x)
}

/// Generated feature vector `x̂^m` for one missing cell.
#[allow(clippy::too_many_arguments)]
pub fn generate_missing<S: Scalar>(
    store: &ParamStore<S>,
    model: &MddcModel<S>,
    item: usize,
    m: usize,
    bundle: &DatasetBundle<S>,
    avail: &Availability,
    sched: &NoiseSchedule,
    spec: &GenerationSpec,
) -> Result<Vec<S>> {
    if bundle.indicator().is_observed(item, m) {
        return Err(Error::InvalidArgument(format!("modality {m} of item {item} is observed")));
    }
    if !(0..bundle.n_modalities()).any(|j| j != m && avail.is_available(item, j)) {
        return Err(Error::InvalidArgument(format!("item {item} has no available modality")));
    }
    let features: Vec<Tensor<S>> = bundle.modalities().iter().map(|f| f.data.clone()).collect();
    let bound = if spec.clip { latent_bound(store, model, bundle, m)? } else { None };
    let x = generate_batch(store, model, m, &[item], &features, avail, sched, spec, bound)?;
    Ok(x.row(0).to_vec())
}

/// Replaces every missing row with a fresh generation conditioned on the
/// current rows. All cells are generated from the same snapshot.
pub fn iterative_refine<S: Scalar>(
    bundle: &DatasetBundle<S>,
    store: &ParamStore<S>,
    model: &MddcModel<S>,
    avail: &Availability,
    sched: &NoiseSchedule,
    spec: &GenerationSpec,
) -> Result<DatasetBundle<S>> {
    let features: Vec<Tensor<S>> = bundle.modalities().iter().map(|f| f.data.clone()).collect();
    let mut out = features.clone();
    let mut changed = false;
    for (m, target) in out.iter_mut().enumerate() {
        let missing = bundle.indicator().missing_set(m);
        if missing.is_empty() {
            continue;
        }
        let bound = if spec.clip { latent_bound(store, model, bundle, m)? } else { None };
        let x = generate_batch(store, model, m, &missing, &features, avail, sched, spec, bound)?;
        for (b, &i) in missing.iter().enumerate() {
            target.row_mut(i).copy_from_slice(x.row(b));
        }
        changed = true;
    }
    if !changed {
        return Ok(bundle.clone());
    }
    bundle.with_features(out)
}
