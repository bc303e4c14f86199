use std::cmp::Ordering;
use std::sync::Arc;

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::numerics::{Csr, Tensor};
use crate::scalar::Scalar;

/// Modality-aware user and item features: each user sums the latents of
/// its train items, each item sums the user features of its train users,
/// both scaled by `1/√|neighbourhood|`.
pub fn modality_aware_features<S: Scalar, B: Scalar>(
    bundle: &DatasetBundle<B>,
    latents: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if latents.rows() != bundle.n_items() {
        return Err(Error::Shape(format!("{} latent rows for {} items", latents.rows(), bundle.n_items())));
    }
    let d = latents.cols();
    let mut users = Tensor::zeros(&[bundle.n_users(), d]);
    for u in 0..bundle.n_users() {
        let items = bundle.train_items(u);
        if items.is_empty() {
            return Err(Error::Dataset(format!("user {u} has no train neighbour")));
        }
        let norm = S::one() / S::lit((items.len() as f64).sqrt());
        let out = users.row_mut(u);
        for &a in items {
            for (o, &x) in out.iter_mut().zip(latents.row(a)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= norm);
    }
    let mut items_out = Tensor::zeros(&[bundle.n_items(), d]);
    for i in 0..bundle.n_items() {
        let us = bundle.train_users(i);
        if us.is_empty() {
            return Err(Error::Dataset(format!("item {i} has no train neighbour")));
        }
        let norm = S::one() / S::lit((us.len() as f64).sqrt());
        let out = items_out.row_mut(i);
        for &b in us {
            for (o, &x) in out.iter_mut().zip(users.row(b)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= norm);
    }
    Ok((users, items_out))
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Top-`k` neighbour lists under cosine similarity in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityGraph {
    /// `user_neighbors[u]`: `(item, similarity)` by descending similarity.
    pub user_neighbors: Vec<Vec<(usize, f64)>>,
    pub item_neighbors: Vec<Vec<(usize, f64)>>,
}

fn top_k<S: Scalar>(query: &[S], table: &Tensor<S>, k: usize) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = (0..table.rows()).map(|j| (j, cosine(query, table.row(j)))).collect();
    let by_score = |a: &(usize, f64), b: &(usize, f64)| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
    if k < sims.len() {
        sims.select_nth_unstable_by(k, by_score);
        sims.truncate(k);
    }
    sims.sort_by(by_score);
    sims
}

/// For every user the `k` most similar items (ties to the lower index),
/// and for every item the `k` most similar users.
pub fn build_modality_graph<S: Scalar>(users: &Tensor<S>, items: &Tensor<S>, k: usize) -> Result<ModalityGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if users.cols() != items.cols() {
        return Err(Error::Shape(format!("user dim {} vs item dim {}", users.cols(), items.cols())));
    }
    Ok(ModalityGraph {
        user_neighbors: (0..users.rows()).map(|u| top_k(users.row(u), items, k)).collect(),
        item_neighbors: (0..items.rows()).map(|i| top_k(items.row(i), users, k)).collect(),
    })
}

/// Row-normalised aggregation matrix: row `r` averages its neighbours with
/// weight `1/√|N_r|`; empty rows stay zero.
pub fn aggregation_matrix<S: Scalar>(neighbors: &[Vec<(usize, f64)>], cols: usize) -> Result<Csr<S>> {
    let rows: Vec<Vec<(usize, S)>> = neighbors
        .iter()
        .map(|list| {
            if list.is_empty() {
                return Vec::new();
            }
            let w = S::lit(1.0 / (list.len() as f64).sqrt());
            let mut r: Vec<(usize, S)> = list.iter().map(|&(j, _)| (j, w)).collect();
            r.sort_by_key(|x| x.0);
            r
        })
        .collect();
    Csr::from_rows(cols, &rows)
}

/// Symmetrically normalised train interaction matrix
/// `Ỹ[u,i] = 1/√(|N_u|·|N_i|)` and its transpose.
pub fn normalized_interactions<S: Scalar, B: Scalar>(bundle: &DatasetBundle<B>) -> Result<(Arc<Csr<S>>, Arc<Csr<S>>)> {
    let rows: Vec<Vec<(usize, S)>> = (0..bundle.n_users())
        .map(|u| {
            let du = bundle.train_items(u).len() as f64;
            bundle
                .train_items(u)
                .iter()
                .map(|&i| {
                    let di = bundle.train_users(i).len() as f64;
                    (i, S::lit(1.0 / (du * di).sqrt()))
                })
                .collect()
        })
        .collect();
    let y = Csr::from_rows(bundle.n_items(), &rows)?;
    let yt = y.transpose();
    Ok((Arc::new(y), Arc::new(yt)))
}
