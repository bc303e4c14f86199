//! Finite-difference checks of every loss the trainer differentiates.
//!
//! 64-bit gradients are checked against 64-bit central differences. For
//! 32-bit gradients the reference difference is taken on the same
//! parameters in 64 bits, since 32-bit differences are dominated by
//! rounding.

use modicf::cfmr::{bpr_losses, contrastive_loss, item_score, RecContext, Recommender};
use modicf::dataset::{sample_bpr_triples, DatasetBundle};
use modicf::mddc::{mddc_losses, Availability, MddcModel};
use modicf::numerics::{grad_check, Graph, ParamId, ParamStore, Tensor, Var};
use modicf::rng;
use modicf::training::{reconstruction_loss, TrainConfig};
use modicf::{Result, Scalar};

const TOL_32: f64 = 1e-3;
const TOL_64: f64 = 1e-7;
const STEP: f64 = 1e-6;

type Reference<'a> = Option<&'a ParamStore<f64>>;

fn adopt<S: Scalar>(store: &mut ParamStore<S>, reference: Reference) {
    if let Some(r) = reference {
        assert_eq!(r.len(), store.len());
        for (k, e) in r.entries().iter().enumerate() {
            store.set(ParamId(k), e.value.cast()).unwrap();
        }
    }
}

fn config() -> TrainConfig {
    super::tiny_config(0)
}

fn bundle<S: Scalar>() -> DatasetBundle<S> {
    super::tiny_bundle(3, 0.4).1.cast()
}

fn features<S: Scalar>(b: &DatasetBundle<S>) -> Vec<Tensor<S>> {
    b.modalities().iter().map(|f| f.data.clone()).collect()
}

fn mddc<S: Scalar>(b: &DatasetBundle<S>, reference: Reference) -> (ParamStore<S>, MddcModel<S>) {
    let mut store = ParamStore::new();
    let mut r = rng::stream(5, "init");
    let model = MddcModel::new(&mut store, &b.dims(), config().mddc(), true, &mut r).unwrap();
    model.fit_standardization(&mut store, &features(b), b.indicator()).unwrap();
    adopt(&mut store, reference);
    (store, model)
}

fn batches<S: Scalar>(b: &DatasetBundle<S>) -> Vec<Vec<usize>> {
    (0..b.n_modalities()).map(|m| b.indicator().observed_set(m).into_iter().take(5).collect()).collect()
}

/// Worst relative error of 32-bit backward gradients against 64-bit
/// central differences of the same loss.
fn mixed_check(
    s32: &ParamStore<f32>,
    ids: &[ParamId],
    mut f32_loss: impl FnMut(&mut Graph<f32>, &ParamStore<f32>) -> Result<Var>,
    s64: &mut ParamStore<f64>,
    mut f64_loss: impl FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> f64 {
    let mut g = Graph::new();
    let l = f32_loss(&mut g, s32).unwrap();
    let grads = g.backward(l).unwrap();
    let mut eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = f64_loss(&mut g, s).unwrap();
        g.value(l).item()
    };
    let mut worst = 0.0f64;
    for &id in ids {
        for k in 0..s64.get(id).len() {
            let orig = s64.get(id).data()[k];
            s64.get_mut(id).data_mut()[k] = orig + STEP;
            let plus = eval(s64);
            s64.get_mut(id).data_mut()[k] = orig - STEP;
            let minus = eval(s64);
            s64.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grads.get(id).map_or(0.0, |t| t.data()[k] as f64);
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

type Case<S, F> = (ParamStore<S>, Vec<ParamId>, F);

/// Runs a case in 64 bits, then in 32 bits on the same parameters.
macro_rules! check_case {
    ($case:ident, $label:expr, $min:expr) => {{
        let (mut s64, ids, mut f64_loss) = $case::<f64>(None);
        let rep = grad_check(&mut s64, Some(&ids), STEP, &mut f64_loss).unwrap();
        assert!(rep.checked >= $min, "{}: only {} entries checked", $label, rep.checked);
        assert!(rep.passes(TOL_64), "{} (64-bit): {rep:?}", $label);
        let (s32, ids32, f32_loss) = $case::<f32>(Some(&s64));
        assert_eq!(ids, ids32);
        let err = mixed_check(&s32, &ids, f32_loss, &mut s64, f64_loss);
        assert!(err < TOL_32, "{} (32-bit): max relative error {err}", $label);
    }};
}

fn diffusion_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let b = bundle::<S>();
    let (store, model) = mddc(&b, reference);
    let avail = Availability::from_indicator(b.indicator(), false);
    let sched = config().schedule().unwrap();
    let bt = batches(&b);
    let feats = features(&b);
    // targets and condition sources enter the diffusion term as constants
    let ids = model.denoisers.iter().flat_map(|d| d.param_ids()).chain(model.fusion.iter().flat_map(|f| f.param_ids())).collect();
    let loss = move |g: &mut Graph<S>, s: &ParamStore<S>| {
        let mut r = rng::stream(9, "noise");
        Ok(mddc_losses(g, s, &model, &feats, &avail, &bt, &sched, 0.7, &mut r)?.dm)
    };
    (store, ids, loss)
}

fn reconstruction_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let b = bundle::<S>();
    let (store, model) = mddc(&b, reference);
    let bt = batches(&b);
    let feats = features(&b);
    let ids = model.autoencoders.iter().flat_map(|a| a.param_ids()).collect();
    (store, ids, move |g: &mut Graph<S>, s: &ParamStore<S>| reconstruction_loss(g, s, &model, &feats, &bt))
}

fn contrastive_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let mut r = rng::stream(2, "cl");
    let mut store = ParamStore::<S>::new();
    let f = store.add_normal("f", 4, 6, 0.8, &mut r);
    let e1 = store.add_normal("e1", 4, 6, 0.8, &mut r);
    let e2 = store.add_normal("e2", 4, 6, 0.8, &mut r);
    adopt(&mut store, reference);
    let loss = move |g: &mut Graph<S>, s: &ParamStore<S>| {
        let (f, e1, e2) = (g.param(s, f), g.param(s, e1), g.param(s, e2));
        contrastive_loss(g, f, &[e1, e2])
    };
    (store, vec![f, e1, e2], loss)
}

struct RecSetup<S: Scalar> {
    store: ParamStore<S>,
    rec: Recommender<S>,
    ctx: RecContext<S>,
    bundle: DatasetBundle<S>,
}

fn recommender<S: Scalar>(reference: Reference) -> RecSetup<S> {
    let b = bundle::<S>();
    let mut store = ParamStore::new();
    let mut r = rng::stream(5, "init");
    let model = MddcModel::new(&mut store, &b.dims(), config().mddc(), true, &mut r).unwrap();
    model.fit_standardization(&mut store, &features(&b), b.indicator()).unwrap();
    let rec = Recommender::new(&mut store, b.n_users(), b.n_items(), b.n_modalities(), config().cfmr(), &mut r).unwrap();
    adopt(&mut store, reference);
    let latents = model.encode_all(&store, &features(&b)).unwrap();
    let ctx = RecContext::build(&b, latents, &config().cfmr()).unwrap();
    RecSetup { store, rec, ctx, bundle: b }
}

fn matching_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let RecSetup { store, rec, ctx, bundle } = recommender::<S>(reference);
    let triples = sample_bpr_triples(&bundle, 12, &mut rng::stream(4, "triples"));
    let ids = rec.param_ids().into_iter().filter(|id| !rec.predictor.param_ids().contains(id)).collect();
    let loss = move |g: &mut Graph<S>, s: &ParamStore<S>| {
        let fwd = rec.forward(g, s, &ctx)?;
        Ok(bpr_losses(g, &fwd, &triples, 0.3)?.matching)
    };
    (store, ids, loss)
}

fn item_bpr_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let RecSetup { store, rec, ctx, bundle } = recommender::<S>(reference);
    let triples = sample_bpr_triples(&bundle, 12, &mut rng::stream(4, "triples"));
    let ids = rec.predictor.param_ids();
    let loss = move |g: &mut Graph<S>, s: &ParamStore<S>| {
        let fwd = rec.forward(g, s, &ctx)?;
        Ok(bpr_losses(g, &fwd, &triples, 0.3)?.item)
    };
    (store, ids, loss)
}

fn item_predictor_case<S: Scalar>(reference: Reference) -> Case<S, impl FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>> {
    let RecSetup { store, rec, ctx, .. } = recommender::<S>(reference);
    let input = ctx.item_input.select_rows(&[0, 3, 7, 11]);
    let pred = rec.predictor;
    let loss = move |g: &mut Graph<S>, s: &ParamStore<S>| {
        let x = g.constant(input.clone());
        let y = item_score(g, s, &pred, x)?;
        let sq = g.mul(y, y)?;
        Ok(g.sum(sq))
    };
    (store, rec.predictor.param_ids(), loss)
}

pub fn diffusion_loss_gradients() {
    check_case!(diffusion_case, "L_dm", 500);
}

pub fn reconstruction_loss_gradients() {
    check_case!(reconstruction_case, "L_rec", 100);
}

pub fn contrastive_loss_gradients() {
    check_case!(contrastive_case, "L_CL", 72);
}

pub fn matching_bpr_gradients() {
    check_case!(matching_case, "matching BPR", 200);
}

pub fn item_bpr_gradients() {
    check_case!(item_bpr_case, "item BPR", 20);
}

pub fn item_predictor_gradients() {
    check_case!(item_predictor_case, "item predictor", 20);
}
