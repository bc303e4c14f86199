use log::{debug, info};
use rand::seq::SliceRandom;

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::mddc::{iterative_refine, Availability, mddc_losses, row_sq_error, GenerationSpec, MddcModel};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
use crate::rng::{self, stream, Rng};
use crate::scalar::Scalar;
use crate::training::state::{History, ModelState, Stage};

/// `Σ_m` batch-mean reconstruction error of the autoencoders alone.
pub fn reconstruction_loss<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    model: &MddcModel<S>,
    features: &[Tensor<S>],
    batches: &[Vec<usize>],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (m, items) in batches.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let x = g.constant(features[m].select_rows(items));
        let z = model.autoencoders[m].encode(g, store, x)?;
        let xr = model.autoencoders[m].decode(g, store, z)?;
        let l = row_sq_error(g, xr, x)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("empty reconstruction batch".into()))
}

/// Diffusion-stage loss for one step: `L_dm + α₁·L_rec`, or `α₁·L_rec`
/// alone when the variant has no diffusion module. Conditions are built
/// from observed cells only.
pub(crate) fn stage_loss<S: Scalar>(
    state: &ModelState<S>,
    g: &mut Graph<S>,
    bundle: &DatasetBundle<S>,
    batches: &[Vec<usize>],
    r: &mut Rng,
) -> Result<Var> {
    if state.config.variant.uses_diffusion() {
        let sched = state.config.schedule()?;
        let avail = Availability::from_indicator(bundle.indicator(), false);
        let l = mddc_losses(g, &state.store, &state.mddc, &state.features, &avail, batches, &sched, state.config.alpha1, r)?;
        Ok(l.diff)
    } else {
        let rec = reconstruction_loss(g, &state.store, &state.mddc, &state.features, batches)?;
        Ok(g.scale(rec, S::lit(state.config.alpha1)))
    }
}

/// Weight of the previous average in the plateau detector's running loss.
pub const LOSS_SMOOTHING: f64 = 0.9;

/// Exponential moving average of `values`, seeded with the first entry.
pub fn smoothed(values: &[f64], keep: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let next = out.last().map_or(v, |&prev: &f64| keep * prev + (1.0 - keep) * v);
        out.push(next);
    }
    out
}

fn chunked(mut items: Vec<usize>, size: usize, r: &mut Rng) -> Vec<Vec<usize>> {
    items.shuffle(r);
    items.chunks(size).map(<[usize]>::to_vec).collect()
}

impl<S: Scalar> ModelState<S> {
    /// Regenerates every missing cell from the current model.
    pub fn refine(&mut self, bundle: &DatasetBundle<S>) -> Result<()> {
        if !self.config.variant.uses_diffusion() || bundle.indicator().missing_cells() == 0 {
            return Ok(());
        }
        let sched = self.config.schedule()?;
        let spec = GenerationSpec { deterministic: self.config.deterministic_sampling, seed: self.config.seed, round: self.round, clip: self.config.clip_latents };
        let current = self.completed(bundle)?;
        let avail = self.availability(bundle);
        let next = iterative_refine(&current, &self.store, &self.mddc, &avail, &sched, &spec)?;
        self.features = next.modalities().iter().map(|f| f.data.clone()).collect();
        self.imputed = true;
        self.round += 1;
        Ok(())
    }

    /// One pretraining epoch: minibatch passes over each modality's
    /// observed items.
    pub(crate) fn pretrain_epoch(&mut self, bundle: &DatasetBundle<S>) -> Result<f64> {
        let lr = self.config.pretrain_lr_at(self.epoch);
        self.adam.set_lr(lr);
        let mut r = rng::substream(self.config.seed, stream::DIFFUSION_NOISE, &[0, self.epoch as u64]);
        let chunks: Vec<Vec<Vec<usize>>> = (0..bundle.n_modalities())
            .map(|m| chunked(bundle.indicator().observed_set(m), self.config.mddc_batch, &mut r))
            .collect();
        let steps = chunks.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::Dataset("no observed rows to pretrain on".into()));
        }
        let mut total = 0.0;
        for s in 0..steps {
            let batches: Vec<Vec<usize>> =
                chunks.iter().map(|c| if c.is_empty() { Vec::new() } else { c[s % c.len()].clone() }).collect();
            let mut g = Graph::new();
            let loss = stage_loss(self, &mut g, bundle, &batches, &mut r)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("pretraining loss at epoch {}", self.epoch)));
            }
            total += value;
            let grads = g.backward(loss)?;
            adam_step(&mut self.store, &grads, &mut self.adam)?;
        }
        let mean = total / steps as f64;
        debug!("pretrain epoch {} lr {lr:.3e} loss {mean:.6}", self.epoch);
        self.history.pretrain_loss.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    /// True once the budget is spent or the smoothed loss has not improved
    /// for the configured patience.
    pub(crate) fn pretrain_finished(&self) -> bool {
        let h = &self.history.pretrain_loss;
        if h.len() >= self.config.pretrain_epochs {
            return true;
        }
        let smooth = smoothed(h, LOSS_SMOOTHING);
        match History::best_index(&smooth, true) {
            Some(b) => h.len() - 1 - b >= self.config.pretrain_patience,
            None => false,
        }
    }

    /// Moves to the joint stage with a fresh optimizer.
    pub(crate) fn begin_joint(&mut self, bundle: &DatasetBundle<S>) -> Result<()> {
        info!("pretraining done after {} epochs", self.epoch);
        self.refine(bundle)?;
        self.stage = Stage::Joint;
        self.epoch = 0;
        self.adam = AdamState::new(AdamConfig { lr: self.config.joint_lr, ..AdamConfig::default() });
        Ok(())
    }
}

/// Runs the pretraining stage to completion.
pub fn pretrain_mddc<S: Scalar>(state: &mut ModelState<S>, bundle: &DatasetBundle<S>) -> Result<()> {
    if state.stage != Stage::Pretrain {
        return Err(Error::InvalidArgument("state is past pretraining".into()));
    }
    if state.config.pretrain_epochs == 0 {
        return state.begin_joint(bundle);
    }
    loop {
        state.pretrain_epoch(bundle)?;
        if state.pretrain_finished() {
            return state.begin_joint(bundle);
        }
    }
}
