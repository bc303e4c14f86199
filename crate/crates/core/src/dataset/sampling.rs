use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::{DatasetBundle, Split};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// `(user, positive item, negative item)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

fn draw_negative<S: Scalar>(bundle: &DatasetBundle<S>, user: usize, r: &mut Rng) -> Option<usize> {
    let n = bundle.n_items();
    let positives = bundle.train_items(user);
    if positives.len() >= n {
        return None;
    }
    loop {
        let i = r.random_range(0..n);
        if positives.binary_search(&i).is_err() {
            return Some(i);
        }
    }
}

/// Samples `batch_size` triples: a uniform train interaction plus a
/// negative drawn uniformly from items outside the user's train positives.
/// Users who interacted with every item are skipped.
pub fn sample_bpr_triples<S: Scalar>(bundle: &DatasetBundle<S>, batch_size: usize, r: &mut Rng) -> Vec<Triple> {
    let train: Vec<_> = bundle.interactions().iter().filter(|x| x.split == Split::Train).collect();
    let mut out = Vec::with_capacity(batch_size);
    let mut skipped = 0usize;
    for _ in 0..batch_size {
        let x = train[r.random_range(0..train.len())];
        match draw_negative(bundle, x.user, r) {
            Some(neg) => out.push(Triple { user: x.user, pos: x.item, neg }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} draws for users without negative candidates");
    }
    out
}

/// One triple per train interaction in shuffled order (one training epoch).
pub fn epoch_triples<S: Scalar>(bundle: &DatasetBundle<S>, r: &mut Rng) -> Vec<Triple> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for x in bundle.interactions().iter().filter(|x| x.split == Split::Train) {
        match draw_negative(bundle, x.user, r) {
            Some(neg) => out.push(Triple { user: x.user, pos: x.item, neg }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} interactions of users without negative candidates");
    }
    out.shuffle(r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IndicatorMatrix, Interaction, ModalityFeatures};
    use crate::numerics::Tensor;
    use crate::rng;

    fn bundle(n_items: usize, rows: &[(usize, usize, Split)]) -> DatasetBundle<f32> {
        let n_users = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let interactions = rows.iter().map(|&(user, item, split)| Interaction { user, item, split }).collect();
        let f = ModalityFeatures::new("x", Tensor::zeros(&[n_items, 2])).unwrap();
        DatasetBundle::new(n_users, n_items, interactions, vec![f], IndicatorMatrix::all_observed(n_items, 1)).unwrap()
    }

    #[test]
    fn negatives_exclude_train_positives_only() {
        // user 0 owns item 0 (train) and item 1 (test); user 1 covers the rest
        let mut rows = vec![(0, 0, Split::Train), (0, 1, Split::Test)];
        rows.extend((1..5).map(|i| (1, i, Split::Train)));
        let b = bundle(5, &rows);
        let mut r = rng::stream(1, "t");
        let mut saw_test_item = false;
        for t in sample_bpr_triples(&b, 2000, &mut r) {
            assert!(b.is_train_positive(t.user, t.pos));
            assert!(!b.is_train_positive(t.user, t.neg));
            assert_ne!(t.pos, t.neg);
            saw_test_item |= t.user == 0 && t.neg == 1;
        }
        assert!(saw_test_item);
    }

    #[test]
    fn zero_batch_is_empty() {
        let b = bundle(3, &[(0, 0, Split::Train), (0, 1, Split::Train), (0, 2, Split::Train)]);
        let mut r = rng::stream(1, "t");
        assert!(sample_bpr_triples(&b, 0, &mut r).is_empty());
    }

    #[test]
    fn saturated_user_skipped() {
        let b = bundle(2, &[(0, 0, Split::Train), (0, 1, Split::Train), (1, 0, Split::Train)]);
        let mut r = rng::stream(2, "t");
        let triples = sample_bpr_triples(&b, 200, &mut r);
        assert!(triples.iter().all(|t| t.user == 1 && t.neg == 1));
        assert!(!triples.is_empty() && triples.len() < 200);
    }

    #[test]
    fn negatives_uniform_chi_square() {
        // one user with a single positive among 11 items; 10 candidates
        let mut rows = vec![(0, 0, Split::Train)];
        rows.extend((1..11).map(|i| (1, i, Split::Train)));
        let b = bundle(11, &rows);
        let mut r = rng::stream(3, "chi");
        let mut counts = [0usize; 11];
        let mut draws = 0;
        while draws < 10_000 {
            for t in sample_bpr_triples(&b, 1000, &mut r) {
                if t.user == 0 && draws < 10_000 {
                    counts[t.neg] += 1;
                    draws += 1;
                }
            }
        }
        assert_eq!(counts[0], 0);
        let expected = 10_000.0 / 10.0;
        let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // χ²(9) critical value at 5%
        assert!(chi2 < 16.919, "chi2 = {chi2}");
    }

    #[test]
    fn epoch_covers_each_train_interaction() {
        let b = bundle(
            4,
            &[(0, 0, Split::Train), (0, 1, Split::Val), (1, 1, Split::Train), (1, 2, Split::Train), (1, 3, Split::Train)],
        );
        let mut r = rng::stream(4, "e");
        let t = epoch_triples(&b, &mut r);
        assert_eq!(t.len(), 4);
        let mut pos: Vec<_> = t.iter().map(|t| (t.user, t.pos)).collect();
        pos.sort_unstable();
        assert_eq!(pos, vec![(0, 0), (1, 1), (1, 2), (1, 3)]);
    }
}
