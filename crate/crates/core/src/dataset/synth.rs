use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, IndicatorMatrix, Interaction, ModalityFeatures, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};

/// Parameters of the planted block-structure generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub dims: Vec<usize>,
    pub n_latent_groups: usize,
    /// Expected fraction of non-zero cells in the interaction matrix.
    pub density: f64,
    pub seed: u64,
    /// Ratio of within-group to cross-group interaction probability.
    #[serde(default = "default_affinity")]
    pub group_affinity: f64,
    /// Per-dimension noise around the group mean of each modality.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Log-normal spread of per-item popularity; 0 disables it.
    #[serde(default)]
    pub popularity_spread: f64,
}

fn default_affinity() -> f64 {
    10.0
}

fn default_noise() -> f64 {
    0.3
}

impl SynthConfig {
    pub fn new(n_users: usize, n_items: usize, dims: Vec<usize>, n_latent_groups: usize, density: f64, seed: u64) -> Self {
        Self {
            n_users,
            n_items,
            dims,
            n_latent_groups,
            density,
            seed,
            group_affinity: default_affinity(),
            noise_std: default_noise(),
            popularity_spread: 0.0,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.dims.len()
    }
}

/// Names used for generated modalities.
const NAMES: [&str; 3] = ["visual", "textual", "acoustic"];

pub fn modality_name(m: usize) -> String {
    NAMES.get(m).map_or_else(|| format!("modality{m}"), |s| (*s).to_string())
}

const MAX_RETRIES: usize = 50;

/// Planted generator: users and items get latent groups, interactions are
/// likelier within a group, and every modality row is its group's mean plus
/// Gaussian noise, so modalities carry information about each other.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetBundle<f32>> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_latent_groups == 0 || cfg.dims.is_empty() {
        return Err(Error::InvalidArgument("counts must be positive".into()));
    }
    if cfg.dims.contains(&0) {
        return Err(Error::InvalidArgument("modality dims must be positive".into()));
    }
    if !(cfg.density > 0.0 && cfg.density < 1.0) {
        return Err(Error::InvalidArgument(format!("density {} outside (0, 1)", cfg.density)));
    }
    if cfg.group_affinity < 1.0 || cfg.noise_std < 0.0 || cfg.popularity_spread < 0.0 {
        return Err(Error::InvalidArgument("affinity ≥ 1, noise ≥ 0, spread ≥ 0".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::stream::SYNTH);
    let g = cfg.n_latent_groups;
    let user_group: Vec<usize> = (0..cfg.n_users).map(|_| r.random_range(0..g)).collect();
    let item_group: Vec<usize> = (0..cfg.n_items).map(|_| r.random_range(0..g)).collect();

    // E[p] = density under uniform group assignment
    let same = 1.0 / g as f64;
    let p_out = cfg.density / (same * cfg.group_affinity + (1.0 - same));
    let p_in = (p_out * cfg.group_affinity).min(1.0);
    let mut popularity: Vec<f64> = (0..cfg.n_items)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            (cfg.popularity_spread * z).exp()
        })
        .collect();
    let mean_pop = popularity.iter().sum::<f64>() / cfg.n_items as f64;
    popularity.iter_mut().for_each(|p| *p /= mean_pop);
    let prob = |u: usize, i: usize| {
        let base = if user_group[u] == item_group[i] { p_in } else { p_out };
        (base * popularity[i]).min(1.0)
    };

    let mut adj = vec![vec![false; cfg.n_items]; cfg.n_users];
    for (u, row) in adj.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = r.random::<f64>() < prob(u, i);
        }
    }
    // resample interaction-free rows / columns
    let mut retries = 0;
    loop {
        let empty_users: Vec<usize> = (0..cfg.n_users).filter(|&u| !adj[u].iter().any(|&x| x)).collect();
        let empty_items: Vec<usize> =
            (0..cfg.n_items).filter(|&i| !(0..cfg.n_users).any(|u| adj[u][i])).collect();
        if empty_users.is_empty() && empty_items.is_empty() {
            break;
        }
        if retries == MAX_RETRIES {
            return Err(Error::InvalidArgument(format!(
                "{} users and {} items remain interaction-free after {MAX_RETRIES} resamples; raise density",
                empty_users.len(),
                empty_items.len()
            )));
        }
        retries += 1;
        for &u in &empty_users {
            for i in 0..cfg.n_items {
                adj[u][i] = r.random::<f64>() < prob(u, i);
            }
        }
        for &i in &empty_items {
            for u in 0..cfg.n_users {
                if !adj[u][i] {
                    adj[u][i] = r.random::<f64>() < prob(u, i);
                }
            }
        }
    }

    let interactions = assign_splits(&adj, &mut r);

    let mut modalities = Vec::with_capacity(cfg.dims.len());
    for (m, &d) in cfg.dims.iter().enumerate() {
        let means: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        let mut data = Vec::with_capacity(cfg.n_items * d);
        for &grp in &item_group {
            for &mu in &means[grp] {
                let z: f64 = StandardNormal.sample(&mut r);
                data.push((mu + cfg.noise_std * z) as f32);
            }
        }
        modalities.push(ModalityFeatures::new(modality_name(m), Tensor::matrix(cfg.n_items, d, data)?)?);
    }
    let indicator = IndicatorMatrix::all_observed(cfg.n_items, cfg.dims.len());
    DatasetBundle::new(cfg.n_users, cfg.n_items, interactions, modalities, indicator)
}

/// 8:1:1 per user with stochastic rounding of the val/test quotas; every
/// user and item keeps at least one train interaction.
fn assign_splits(adj: &[Vec<bool>], r: &mut Rng) -> Vec<Interaction> {
    let n_items = adj.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for (u, row) in adj.iter().enumerate() {
        let mut items: Vec<usize> = (0..n_items).filter(|&i| row[i]).collect();
        items.shuffle(r);
        let n = items.len();
        let quota = |r: &mut Rng| ((n as f64 * 0.1) + r.random::<f64>()).floor() as usize;
        let mut n_val = quota(r);
        let mut n_test = quota(r);
        while n_val + n_test >= n && n_val + n_test > 0 {
            if n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        for (k, &i) in items.iter().enumerate() {
            let split = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            out.push(Interaction { user: u, item: i, split });
        }
    }
    out.sort_by_key(|x| (x.item, x.user));
    let mut start = 0;
    while start < out.len() {
        let item = out[start].item;
        let end = start + out[start..].iter().take_while(|x| x.item == item).count();
        if !out[start..end].iter().any(|x| x.split == Split::Train) {
            out[start].split = Split::Train;
        }
        start = end;
    }
    out.sort_by_key(|x| (x.user, x.item));
    out
}
