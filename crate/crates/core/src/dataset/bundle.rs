use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub split: Split,
}

/// One feature channel: an `N_I × d_m` matrix, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures<S> {
    pub name: String,
    pub data: Tensor<S>,
}

impl<S: Scalar> ModalityFeatures<S> {
    pub fn new(name: impl Into<String>, data: Tensor<S>) -> Result<Self> {
        let f = Self { name: name.into(), data };
        if f.data.shape().len() != 2 || f.dim() == 0 {
            return Err(Error::Dataset(format!("modality {} needs a non-empty 2-d matrix", f.name)));
        }
        if !f.data.all_finite() {
            return Err(Error::Dataset(format!("modality {} has non-finite values", f.name)));
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Binary `N_I × M` observation matrix with derived observed / missing sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorMatrix {
    n_items: usize,
    n_modalities: usize,
    entries: Vec<bool>,
}

impl IndicatorMatrix {
    pub fn all_observed(n_items: usize, n_modalities: usize) -> Self {
        Self { n_items, n_modalities, entries: vec![true; n_items * n_modalities] }
    }

    pub fn from_entries(n_items: usize, n_modalities: usize, entries: Vec<bool>) -> Result<Self> {
        if entries.len() != n_items * n_modalities {
            return Err(Error::Dataset("indicator size mismatch".into()));
        }
        let ind = Self { n_items, n_modalities, entries };
        if let Some(i) = (0..n_items).find(|&i| ind.observed_count(i) == 0) {
            return Err(Error::Dataset(format!("item {i} has no observed modality")));
        }
        Ok(ind)
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn is_observed(&self, item: usize, modality: usize) -> bool {
        self.entries[item * self.n_modalities + modality]
    }

    pub fn observed_count(&self, item: usize) -> usize {
        (0..self.n_modalities).filter(|&m| self.is_observed(item, m)).count()
    }

    /// An item is incomplete when any modality is missing.
    pub fn is_incomplete(&self, item: usize) -> bool {
        self.observed_count(item) < self.n_modalities
    }

    pub fn observed_set(&self, modality: usize) -> Vec<usize> {
        (0..self.n_items).filter(|&i| self.is_observed(i, modality)).collect()
    }

    pub fn missing_set(&self, modality: usize) -> Vec<usize> {
        (0..self.n_items).filter(|&i| !self.is_observed(i, modality)).collect()
    }

    pub fn missing_cells(&self) -> usize {
        self.entries.iter().filter(|&&e| !e).count()
    }

    pub fn missing_rate(&self) -> f64 {
        self.missing_cells() as f64 / (self.n_items * self.n_modalities) as f64
    }

    pub fn incomplete_items(&self) -> Vec<usize> {
        (0..self.n_items).filter(|&i| self.is_incomplete(i)).collect()
    }

    /// Fraction of incomplete items (P_d).
    pub fn incomplete_fraction(&self) -> f64 {
        self.incomplete_items().len() as f64 / self.n_items as f64
    }

    pub fn entries(&self) -> &[bool] {
        &self.entries
    }
}

/// Users, items, interactions, modality features and the observation mask.
///
/// Immutable after construction; transformations return new bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle<S = f32> {
    n_users: usize,
    n_items: usize,
    interactions: Vec<Interaction>,
    modalities: Vec<ModalityFeatures<S>>,
    indicator: IndicatorMatrix,
    train_items: Vec<Vec<usize>>,
    train_users: Vec<Vec<usize>>,
}

impl<S: Scalar> DatasetBundle<S> {
    /// Validates and indexes a bundle. Interactions are stored sorted by
    /// `(user, item)`.
    pub fn new(
        n_users: usize,
        n_items: usize,
        mut interactions: Vec<Interaction>,
        modalities: Vec<ModalityFeatures<S>>,
        indicator: IndicatorMatrix,
    ) -> Result<Self> {
        if n_users == 0 || n_items == 0 {
            return Err(Error::Dataset("need at least one user and one item".into()));
        }
        if modalities.is_empty() {
            return Err(Error::Dataset("need at least one modality".into()));
        }
        for m in &modalities {
            if m.data.rows() != n_items {
                return Err(Error::Dataset(format!(
                    "modality {} has {} rows, expected {n_items}",
                    m.name,
                    m.data.rows()
                )));
            }
        }
        if indicator.n_items() != n_items || indicator.n_modalities() != modalities.len() {
            return Err(Error::Dataset("indicator does not match items × modalities".into()));
        }
        interactions.sort_by_key(|x| (x.user, x.item));
        for w in interactions.windows(2) {
            if w[0].user == w[1].user && w[0].item == w[1].item {
                return Err(Error::Dataset(format!(
                    "duplicate interaction ({}, {}) across splits",
                    w[0].user, w[0].item
                )));
            }
        }
        if !interactions.iter().any(|x| x.split == Split::Train) {
            return Err(Error::Dataset("empty training split".into()));
        }
        let mut train_items = vec![Vec::new(); n_users];
        let mut train_users = vec![Vec::new(); n_items];
        for x in &interactions {
            if x.user >= n_users || x.item >= n_items {
                return Err(Error::Dataset(format!("interaction ({}, {}) out of range", x.user, x.item)));
            }
            if x.split == Split::Train {
                train_items[x.user].push(x.item);
                train_users[x.item].push(x.user);
            }
        }
        if let Some(u) = train_items.iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!("user {u} has no train interaction")));
        }
        if let Some(i) = train_users.iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!("item {i} has no train interaction")));
        }
        for list in train_users.iter_mut() {
            list.sort_unstable();
        }
        let bundle = Self { n_users, n_items, interactions, modalities, indicator, train_items, train_users };
        bundle.check_masked_rows_zero()?;
        Ok(bundle)
    }

    fn check_masked_rows_zero(&self) -> Result<()> {
        for (m, f) in self.modalities.iter().enumerate() {
            for i in self.indicator.missing_set(m) {
                if f.data.row(i).iter().any(|&x| x != S::zero()) {
                    return Err(Error::Dataset(format!(
                        "modality {} row {i} is masked but not zero",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn modalities(&self) -> &[ModalityFeatures<S>] {
        &self.modalities
    }

    pub fn modality(&self, m: usize) -> &ModalityFeatures<S> {
        &self.modalities[m]
    }

    pub fn indicator(&self) -> &IndicatorMatrix {
        &self.indicator
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(ModalityFeatures::dim).collect()
    }

    /// Sorted train items of `user`.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_items[user]
    }

    /// Sorted train users of `item`.
    pub fn train_users(&self, item: usize) -> &[usize] {
        &self.train_users[item]
    }

    pub fn is_train_positive(&self, user: usize, item: usize) -> bool {
        self.train_items[user].binary_search(&item).is_ok()
    }

    pub fn split_items(&self, user: usize, split: Split) -> Vec<usize> {
        let start = self.interactions.partition_point(|x| x.user < user);
        self.interactions[start..]
            .iter()
            .take_while(|x| x.user == user)
            .filter(|x| x.split == split)
            .map(|x| x.item)
            .collect()
    }

    /// Per-user positives of one split.
    pub fn positives(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for x in self.interactions.iter().filter(|x| x.split == split) {
            out[x.user].push(x.item);
        }
        out
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.interactions.iter().filter(|x| x.split == split).count()
    }

    /// Same bundle with features replaced. Rows of missing cells may now be
    /// non-zero (imputed content); the indicator keeps recording what was
    /// originally observed.
    pub fn with_features(&self, features: Vec<Tensor<S>>) -> Result<Self> {
        if features.len() != self.modalities.len() {
            return Err(Error::Dataset("feature count mismatch".into()));
        }
        let mut out = self.clone();
        for (m, t) in features.into_iter().enumerate() {
            if t.shape() != out.modalities[m].data.shape() {
                return Err(Error::Shape(format!(
                    "modality {m}: {:?} vs {:?}",
                    t.shape(),
                    out.modalities[m].data.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("imputed features for modality {m}")));
            }
            out.modalities[m].data = t;
        }
        Ok(out)
    }

    pub(crate) fn with_mask(&self, indicator: IndicatorMatrix) -> Result<Self> {
        let mut out = self.clone();
        for (m, f) in out.modalities.iter_mut().enumerate() {
            for i in indicator.missing_set(m) {
                for x in f.data.row_mut(i) {
                    *x = S::zero();
                }
            }
        }
        out.indicator = indicator;
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> DatasetBundle<T> {
        DatasetBundle {
            n_users: self.n_users,
            n_items: self.n_items,
            interactions: self.interactions.clone(),
            modalities: self
                .modalities
                .iter()
                .map(|m| ModalityFeatures { name: m.name.clone(), data: m.data.cast() })
                .collect(),
            indicator: self.indicator.clone(),
            train_items: self.train_items.clone(),
            train_users: self.train_users.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(interactions: Vec<Interaction>) -> Result<DatasetBundle<f32>> {
        let f = ModalityFeatures::new("v", Tensor::zeros(&[2, 3])).unwrap();
        DatasetBundle::new(2, 2, interactions, vec![f], IndicatorMatrix::all_observed(2, 1))
    }

    fn ix(user: usize, item: usize, split: Split) -> Interaction {
        Interaction { user, item, split }
    }

    #[test]
    fn empty_train_split_rejected() {
        let err = tiny(vec![ix(0, 0, Split::Test), ix(1, 1, Split::Val)]).unwrap_err();
        assert!(err.to_string().contains("empty training split"));
    }

    #[test]
    fn every_user_and_item_needs_train() {
        assert!(tiny(vec![ix(0, 0, Split::Train), ix(1, 0, Split::Train)]).is_err());
        assert!(tiny(vec![ix(0, 0, Split::Train), ix(1, 1, Split::Train)]).is_ok());
    }

    #[test]
    fn duplicate_pairs_rejected() {
        assert!(tiny(vec![ix(0, 0, Split::Train), ix(0, 0, Split::Test), ix(1, 1, Split::Train)]).is_err());
    }

    #[test]
    fn indicator_requires_one_observed_modality() {
        assert!(IndicatorMatrix::from_entries(1, 2, vec![false, false]).is_err());
        let ind = IndicatorMatrix::from_entries(2, 2, vec![true, false, true, true]).unwrap();
        assert_eq!(ind.missing_set(1), vec![0]);
        assert_eq!(ind.observed_set(1), vec![1]);
        assert_eq!(ind.incomplete_items(), vec![0]);
        assert!((ind.missing_rate() - 0.25).abs() < 1e-12);
    }
}
