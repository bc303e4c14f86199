use rand_distr::{Distribution, StandardNormal};

use crate::cfmr::cosine;
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::training::config::FillRule;

fn observed_moments<S: Scalar>(bundle: &DatasetBundle<S>, m: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = bundle.indicator().observed_set(m);
    let x = &bundle.modality(m).data;
    let dim = x.cols();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for &i in &rows {
        for (a, &v) in mean.iter_mut().zip(x.row(i)) {
            *a += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; dim];
    for &i in &rows {
        for ((a, &v), mu) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *a += (v.as_f64() - mu).powi(2);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

/// Most similar item observed in `m`, by cosine over the modalities both
/// items observe (other than `m`). Ties go to the lower index.
pub fn nearest_observed<S: Scalar>(bundle: &DatasetBundle<S>, item: usize, m: usize) -> Option<usize> {
    let ind = bundle.indicator();
    let own: Vec<usize> = (0..bundle.n_modalities()).filter(|&j| j != m && ind.is_observed(item, j)).collect();
    let mut best: Option<(usize, f64)> = None;
    for cand in ind.observed_set(m) {
        let shared: Vec<usize> = own.iter().copied().filter(|&j| ind.is_observed(cand, j)).collect();
        if cand == item || shared.is_empty() {
            continue;
        }
        let a: Vec<S> = shared.iter().flat_map(|&j| bundle.modality(j).data.row(item).to_vec()).collect();
        let b: Vec<S> = shared.iter().flat_map(|&j| bundle.modality(j).data.row(cand).to_vec()).collect();
        let s = cosine(&a, &b);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((cand, s));
        }
    }
    best.map(|b| b.0)
}

/// Feature tables with every missing cell filled by `rule`.
pub fn fill_missing<S: Scalar>(bundle: &DatasetBundle<S>, rule: FillRule, seed: u64) -> Result<Vec<Tensor<S>>> {
    let mut out: Vec<Tensor<S>> = bundle.modalities().iter().map(|f| f.data.clone()).collect();
    for (m, table) in out.iter_mut().enumerate() {
        let missing = bundle.indicator().missing_set(m);
        if missing.is_empty() {
            continue;
        }
        let (mean, std) = observed_moments(bundle, m);
        for &i in &missing {
            let row: Vec<S> = match rule {
                FillRule::Zero => vec![S::zero(); mean.len()],
                FillRule::Mean => mean.iter().map(|&v| S::lit(v)).collect(),
                FillRule::Random => {
                    let mut r = rng::substream(seed, stream::IMPUTE, &[m as u64, i as u64]);
                    mean.iter()
                        .zip(&std)
                        .map(|(&mu, &sd)| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            S::lit(mu + sd * z)
                        })
                        .collect()
                }
                FillRule::Nearest => {
                    let j = nearest_observed(bundle, i, m).ok_or_else(|| {
                        Error::Dataset(format!("no observed neighbour for item {i}, modality {m}"))
                    })?;
                    bundle.modality(m).data.row(j).to_vec()
                }
            };
            table.row_mut(i).copy_from_slice(&row);
        }
    }
    Ok(out)
}
