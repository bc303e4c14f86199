use std::marker::PhantomData;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cfmr::graphs::{
    aggregation_matrix, build_modality_graph, modality_aware_features, normalized_interactions, ModalityGraph,
};
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::numerics::{Csr, Graph, Mlp2, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfmrConfig {
    /// Embedding width `d` (equals the MDDC latent width).
    pub dim: usize,
    pub heads: usize,
    /// Propagation depth `L`.
    pub layers: usize,
    pub eta: f64,
    pub delta: f64,
    /// Neighbours kept per row of each modality graph.
    pub top_k: usize,
    pub init_std: f64,
}

impl Default for CfmrConfig {
    fn default() -> Self {
        Self { dim: 128, heads: 8, layers: 2, eta: 0.7, delta: 0.4, top_k: 10, init_std: 0.1 }
    }
}

/// Per-epoch constants derived from completed features: latents,
/// modality-aware features, modality graphs and the normalised base graph.
#[derive(Debug, Clone)]
pub struct RecContext<S> {
    pub latents: Vec<Tensor<S>>,
    pub user_features: Vec<Tensor<S>>,
    pub item_features: Vec<Tensor<S>>,
    pub graphs: Vec<ModalityGraph>,
    pub user_agg: Vec<Arc<Csr<S>>>,
    pub item_agg: Vec<Arc<Csr<S>>>,
    pub y_norm: Arc<Csr<S>>,
    pub y_norm_t: Arc<Csr<S>>,
    /// `δ·Σ_m ṽ^m/‖ṽ^m‖` per user and per item.
    pub user_side: Tensor<S>,
    pub item_side: Tensor<S>,
    /// Concatenated item latents fed to the item predictor.
    pub item_input: Tensor<S>,
}

/// `δ·Σ_m row/‖row‖` with zero rows contributing nothing.
pub fn modality_side<S: Scalar>(tables: &[Tensor<S>], delta: f64) -> Tensor<S> {
    let mut out = Tensor::zeros(tables[0].shape());
    for t in tables {
        for r in 0..t.rows() {
            let row = t.row(r);
            let n = row.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            let s = S::lit(delta / n);
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o += s * x;
            }
        }
    }
    out
}

impl<S: Scalar> RecContext<S> {
    pub fn build<B: Scalar>(bundle: &DatasetBundle<B>, latents: Vec<Tensor<S>>, config: &CfmrConfig) -> Result<Self> {
        if latents.len() != bundle.n_modalities() {
            return Err(Error::Shape(format!("{} latent tables for {} modalities", latents.len(), bundle.n_modalities())));
        }
        let mut user_features = Vec::new();
        let mut item_features = Vec::new();
        let mut graphs = Vec::new();
        let mut user_agg = Vec::new();
        let mut item_agg = Vec::new();
        for v in &latents {
            if v.cols() != config.dim {
                return Err(Error::Shape(format!("latent width {} vs embedding width {}", v.cols(), config.dim)));
            }
            let (fu, fi) = modality_aware_features(bundle, v)?;
            let graph = build_modality_graph(&fu, &fi, config.top_k)?;
            user_agg.push(Arc::new(aggregation_matrix(&graph.user_neighbors, bundle.n_items())?));
            item_agg.push(Arc::new(aggregation_matrix(&graph.item_neighbors, bundle.n_users())?));
            graphs.push(graph);
            user_features.push(fu);
            item_features.push(fi);
        }
        let (y_norm, y_norm_t) = normalized_interactions(bundle)?;
        let user_side = modality_side(&user_features, config.delta);
        let item_side = modality_side(&item_features, config.delta);
        let n = bundle.n_items();
        let md = latents.len() * config.dim;
        let mut item_input = Tensor::zeros(&[n, md]);
        for i in 0..n {
            let row = item_input.row_mut(i);
            for (m, v) in latents.iter().enumerate() {
                row[m * config.dim..(m + 1) * config.dim].copy_from_slice(v.row(i));
            }
        }
        Ok(Self { latents, user_features, item_features, graphs, user_agg, item_agg, y_norm, y_norm_t, user_side, item_side, item_input })
    }
}

/// Nodes produced by one recommender forward pass.
#[derive(Debug, Clone)]
pub struct RecForward {
    /// Final user embeddings `f_u` (`N_U × d`).
    pub users: Var,
    pub items: Var,
    /// Modality-aware user ID embeddings `e^m_u`, one node per modality.
    pub modal_users: Vec<Var>,
    /// Direct item scores `ŷ_i` (`N_I × 1`).
    pub item_scores: Var,
}

/// Item-only score MLP over concatenated modality latents.
pub fn item_score<S: Scalar>(g: &mut Graph<S>, store: &ParamStore<S>, predictor: &Mlp2, input: Var) -> Result<Var> {
    predictor.forward(g, store, input)
}

/// Multi-head cross-modal attention. For target modality `m` and head `h`,
/// scores `(e^m W^Q_h)·(e^n W^K_h)/√(d/H)` are normalised over `n` and
/// weight head slice `h` of `e^n`; heads are concatenated. Returns the
/// per-modality outputs and their mean.
pub fn cross_modal_attention<S: Scalar>(
    g: &mut Graph<S>,
    modal: &[Var],
    w_query: &[Var],
    w_key: &[Var],
) -> Result<(Vec<Var>, Var)> {
    let heads = w_query.len();
    if modal.is_empty() || heads == 0 || w_key.len() != heads {
        return Err(Error::InvalidArgument("attention needs modalities and matching heads".into()));
    }
    let d = g.shape(modal[0])[1];
    if !d.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!("embedding width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = S::lit(1.0 / (dh as f64).sqrt());
    let mut keys = Vec::with_capacity(heads);
    for &wk in w_key {
        let ks = modal.iter().map(|&e| g.matmul(e, wk)).collect::<Result<Vec<_>>>()?;
        keys.push(ks);
    }
    let mut outs = Vec::with_capacity(modal.len());
    for &em in modal {
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = g.matmul(em, w_query[h])?;
            let scores = keys[h].iter().map(|&k| g.row_dot(q, k)).collect::<Result<Vec<_>>>()?;
            let scores = g.concat(&scores, 1)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            let mut acc: Option<Var> = None;
            for (n, &en) in modal.iter().enumerate() {
                let w = g.slice_cols(attn, n, n + 1)?;
                let v = g.slice_cols(en, h * dh, (h + 1) * dh)?;
                let t = g.scale_rows(v, w)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, t)?,
                    None => t,
                });
            }
            head_outs.push(acc.expect("non-empty"));
        }
        outs.push(if heads == 1 { head_outs[0] } else { g.concat(&head_outs, 1)? });
    }
    let mut sum = outs[0];
    for &o in &outs[1..] {
        sum = g.add(sum, o)?;
    }
    let mean = g.scale(sum, S::one() / S::lit(modal.len() as f64));
    Ok((outs, mean))
}

/// `E + η·Ē/‖Ē‖²`, row by row; zero rows of `Ē` add nothing.
pub fn inject_modal<S: Scalar>(g: &mut Graph<S>, base: Var, modal: Var, eta: f64) -> Result<Var> {
    if eta == 0.0 {
        return Ok(base);
    }
    let norm = g.row_norm(modal)?;
    let is_zero = g.value(norm).map(|n| if n > S::zero() { S::zero() } else { S::one() });
    let keep = g.constant(is_zero.map(|z| S::one() - z));
    let shift = g.constant(is_zero);
    // 1/‖ē‖² = exp(−2·ln‖ē‖), with zero rows shifted to 1 and then masked
    let safe = g.add(norm, shift)?;
    let ln = g.log(safe)?;
    let ln2 = g.scale(ln, S::lit(-2.0));
    let inv_sq = g.exp(ln2);
    let inv_sq = g.mul(inv_sq, keep)?;
    let scaled = g.scale_rows(modal, inv_sq)?;
    let scaled = g.scale(scaled, S::lit(eta));
    g.add(base, scaled)
}

/// Alternating propagation over the normalised graph; returns the mean of
/// layers `1..=L` for users and items.
pub fn high_order_propagation<S: Scalar>(
    g: &mut Graph<S>,
    y: &Arc<Csr<S>>,
    yt: &Arc<Csr<S>>,
    users0: Var,
    items0: Var,
    layers: usize,
) -> Result<(Var, Var)> {
    if layers == 0 {
        return Err(Error::InvalidArgument("propagation depth must be at least 1".into()));
    }
    let (mut u, mut i) = (users0, items0);
    let (mut su, mut si): (Option<Var>, Option<Var>) = (None, None);
    for _ in 0..layers {
        let nu = g.spmm(y, i)?;
        let ni = g.spmm(yt, u)?;
        u = nu;
        i = ni;
        su = Some(match su {
            Some(a) => g.add(a, u)?,
            None => u,
        });
        si = Some(match si {
            Some(a) => g.add(a, i)?,
            None => i,
        });
    }
    let inv = S::one() / S::lit(layers as f64);
    let (su, si) = (su.expect("layers ≥ 1"), si.expect("layers ≥ 1"));
    Ok((g.scale(su, inv), g.scale(si, inv)))
}

/// Plain-tensor aggregation of ID embeddings through a modality graph:
/// `e^m_u = Σ_{a∈N^m_u} e_a/√|N^m_u|`, symmetric for items.
pub fn aggregate_id_embeddings<S: Scalar>(
    graph: &ModalityGraph,
    users: &Tensor<S>,
    items: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let ua = aggregation_matrix::<S>(&graph.user_neighbors, items.rows())?;
    let ia = aggregation_matrix::<S>(&graph.item_neighbors, users.rows())?;
    Ok((ua.matmul_dense(items)?, ia.matmul_dense(users)?))
}

/// `ŷ_{u,i} = f_u·f_i`.
pub fn predict_matching<S: Scalar>(fu: &[S], fi: &[S]) -> S {
    fu.iter().zip(fi).map(|(&a, &b)| a * b).sum()
}

/// Graph recommender with modality-aware ID aggregation, cross-modal
/// attention and an item-only predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommender<S> {
    pub config: CfmrConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub n_modalities: usize,
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub w_query: Vec<ParamId>,
    pub w_key: Vec<ParamId>,
    pub predictor: Mlp2,
    _scalar: PhantomData<fn() -> S>,
}

impl<S: Scalar> Recommender<S> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        n_users: usize,
        n_items: usize,
        n_modalities: usize,
        config: CfmrConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.heads == 0 || !config.dim.is_multiple_of(config.heads) {
            return Err(Error::InvalidArgument(format!(
                "embedding width {} not divisible by {} heads",
                config.dim, config.heads
            )));
        }
        if config.layers == 0 || config.top_k == 0 {
            return Err(Error::InvalidArgument("layers and top_k must be positive".into()));
        }
        let d = config.dim;
        let dh = d / config.heads;
        let user_emb = store.add_normal("cfmr.user_emb", n_users, d, config.init_std, rng);
        let item_emb = store.add_normal("cfmr.item_emb", n_items, d, config.init_std, rng);
        let w_query = (0..config.heads).map(|h| store.add_weight(format!("cfmr.wq{h}"), d, dh, rng)).collect();
        let w_key = (0..config.heads).map(|h| store.add_weight(format!("cfmr.wk{h}"), d, dh, rng)).collect();
        let predictor = Mlp2::new(store, "cfmr.item_pred", (n_modalities * d, d, 1), rng);
        Ok(Self { config, n_users, n_items, n_modalities, user_emb, item_emb, w_query, w_key, predictor, _scalar: PhantomData })
    }

    pub fn forward(&self, g: &mut Graph<S>, store: &ParamStore<S>, ctx: &RecContext<S>) -> Result<RecForward> {
        let eu = g.param(store, self.user_emb);
        let ei = g.param(store, self.item_emb);
        let mut modal_users = Vec::with_capacity(self.n_modalities);
        let mut modal_items = Vec::with_capacity(self.n_modalities);
        for m in 0..self.n_modalities {
            modal_users.push(g.spmm(&ctx.user_agg[m], ei)?);
            modal_items.push(g.spmm(&ctx.item_agg[m], eu)?);
        }
        let wq: Vec<Var> = self.w_query.iter().map(|&p| g.param(store, p)).collect();
        let wk: Vec<Var> = self.w_key.iter().map(|&p| g.param(store, p)).collect();
        let (_, bar_u) = cross_modal_attention(g, &modal_users, &wq, &wk)?;
        let (_, bar_i) = cross_modal_attention(g, &modal_items, &wq, &wk)?;
        let u0 = inject_modal(g, eu, bar_u, self.config.eta)?;
        let i0 = inject_modal(g, ei, bar_i, self.config.eta)?;
        let (hu, hi) = high_order_propagation(g, &ctx.y_norm, &ctx.y_norm_t, u0, i0, self.config.layers)?;
        let su = g.constant(ctx.user_side.clone());
        let si = g.constant(ctx.item_side.clone());
        let users = g.add(hu, su)?;
        let items = g.add(hi, si)?;
        let input = g.constant(ctx.item_input.clone());
        let item_scores = item_score(g, store, &self.predictor, input)?;
        Ok(RecForward { users, items, modal_users, item_scores })
    }

    /// Raw matching scores for all users × items and direct item scores.
    pub fn score_all(&self, store: &ParamStore<S>, ctx: &RecContext<S>) -> Result<Scores<S>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, store, ctx)?;
        let raw = g.value(f.users).matmul(&g.value(f.items).transpose())?;
        let item = g.value(f.item_scores).data().to_vec();
        Ok(Scores { raw, item })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.user_emb, self.item_emb];
        v.extend(&self.w_query);
        v.extend(&self.w_key);
        v.extend(self.predictor.param_ids());
        v
    }
}

/// Raw user–item scores `ŷ_{u,i}` and direct item scores `ŷ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores<S> {
    pub raw: Tensor<S>,
    pub item: Vec<S>,
}
