use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, IndicatorMatrix};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;
use crate::scalar::Scalar;

/// Which item–modality cells were hidden, and how they were chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub mr: f64,
    pub seed: u64,
    /// Per item, the masked modality indices (ascending).
    pub assignment: Vec<Vec<usize>>,
}

impl MaskPlan {
    pub fn masked_cells(&self) -> usize {
        self.assignment.iter().map(Vec::len).sum()
    }

    pub fn indicator(&self, n_modalities: usize) -> Result<IndicatorMatrix> {
        let n_items = self.assignment.len();
        let mut entries = vec![true; n_items * n_modalities];
        for (i, ms) in self.assignment.iter().enumerate() {
            for &m in ms {
                if m >= n_modalities {
                    return Err(Error::Dataset(format!("mask names modality {m} of {n_modalities}")));
                }
                entries[i * n_modalities + m] = false;
            }
        }
        IndicatorMatrix::from_entries(n_items, n_modalities, entries)
    }

    /// Applies this plan to a complete bundle: masked rows are zeroed and
    /// the indicator updated.
    pub fn apply<S: Scalar>(&self, bundle: &DatasetBundle<S>) -> Result<DatasetBundle<S>> {
        if self.assignment.len() != bundle.n_items() {
            return Err(Error::Dataset(format!(
                "mask covers {} items, bundle has {}",
                self.assignment.len(),
                bundle.n_items()
            )));
        }
        if bundle.indicator().missing_cells() > 0 {
            return Err(Error::Dataset("bundle is already masked".into()));
        }
        bundle.with_mask(self.indicator(bundle.n_modalities())?)
    }
}

pub fn max_missing_rate(n_modalities: usize) -> f64 {
    (n_modalities as f64 - 1.0) / n_modalities as f64
}

/// Hides a random `mr` fraction of item–modality cells while keeping at
/// least one observed modality per item.
///
/// Cells are shuffled with the seed and masked greedily in that order,
/// skipping any cell that would leave its item with nothing observed.
pub fn apply_missing_mask<S: Scalar>(
    bundle: &DatasetBundle<S>,
    mr: f64,
    seed: u64,
) -> Result<(DatasetBundle<S>, MaskPlan)> {
    let m = bundle.n_modalities();
    let max = max_missing_rate(m);
    if m < 2 || !(mr > 0.0 && mr <= max + 1e-12) {
        return Err(Error::MissingRate { mr, max, modalities: m });
    }
    let n = bundle.n_items();
    let target = (mr * (n * m) as f64).round() as usize;
    let mut cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |k| (i, k))).collect();
    let mut r = rng::stream(seed, rng::stream::MASK);
    cells.shuffle(&mut r);
    let mut assignment = vec![Vec::new(); n];
    let mut masked = 0;
    for (i, k) in cells {
        if masked == target {
            break;
        }
        if assignment[i].len() + 1 < m {
            assignment[i].push(k);
            masked += 1;
        }
    }
    for a in assignment.iter_mut() {
        a.sort_unstable();
    }
    let plan = MaskPlan { mr, seed, assignment };
    let out = plan.apply(bundle)?;
    Ok((out, plan))
}

/// Pre-mask ground truth of masked cells, kept apart from training data
/// for imputation-quality reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutFeatures<S> {
    /// Full pre-mask matrices; only rows in each missing set are meaningful.
    pub features: Vec<Tensor<S>>,
    pub missing: Vec<Vec<usize>>,
}

impl<S: Scalar> HeldOutFeatures<S> {
    pub fn capture(original: &DatasetBundle<S>, masked: &DatasetBundle<S>) -> Self {
        Self {
            features: original.modalities().iter().map(|f| f.data.clone()).collect(),
            missing: (0..masked.n_modalities()).map(|m| masked.indicator().missing_set(m)).collect(),
        }
    }

    pub fn masked_cells(&self) -> usize {
        self.missing.iter().map(Vec::len).sum()
    }

    /// Mean squared error of candidate feature matrices over masked cells,
    /// averaged per element.
    pub fn mse(&self, candidate: &[Tensor<S>]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (m, rows) in self.missing.iter().enumerate() {
            for &i in rows {
                for (&a, &b) in candidate[m].row(i).iter().zip(self.features[m].row(i)) {
                    let d = a.as_f64() - b.as_f64();
                    sum += d * d;
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}
