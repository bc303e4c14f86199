use log::debug;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cfmr::{bpr_losses, contrastive_loss, AdjustedScores, RecContext, Scorer};
use crate::dataset::{epoch_triples, DatasetBundle, Split, Triple};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cutoffs, fairness_f_fuse};
use crate::numerics::{adam_step, Graph, Var};
use crate::rng::{self, stream, Rng};
use crate::scalar::Scalar;
use crate::training::pretrain::stage_loss;
use crate::training::state::{History, ModelState, Stage};

/// Values of the objective's parts for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub diff: f64,
    pub bpr: f64,
    pub cl: f64,
    /// `‖Θ‖²`, unweighted.
    pub reg: f64,
    /// `diff + bpr + λ₁·cl + λ₂·reg`.
    pub total: f64,
}

/// Graph nodes of the objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub diff: Var,
    pub bpr: Var,
    pub cl: Option<Var>,
    pub reg: Var,
    pub total: Var,
}

impl ObjectiveNodes {
    pub fn values<S: Scalar>(&self, g: &Graph<S>) -> ObjectiveTerms {
        let v = |x: Var| g.value(x).item().as_f64();
        ObjectiveTerms {
            diff: v(self.diff),
            bpr: v(self.bpr),
            cl: self.cl.map_or(0.0, v),
            reg: v(self.reg),
            total: v(self.total),
        }
    }
}

/// One random minibatch of observed items per modality.
pub(crate) fn observed_batches<S: Scalar>(bundle: &DatasetBundle<S>, size: usize, r: &mut Rng) -> Vec<Vec<usize>> {
    (0..bundle.n_modalities())
        .map(|m| {
            let obs = bundle.indicator().observed_set(m);
            let mut idx: Vec<usize> = sample(r, obs.len(), size.min(obs.len())).into_iter().map(|k| obs[k]).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

impl<S: Scalar> ModelState<S> {
    /// Builds the full objective on `g` for one minibatch of triples:
    /// `L_diff + L_BPR + λ₁·L_CL + λ₂·‖Θ‖²`.
    pub fn objective(
        &self,
        g: &mut Graph<S>,
        bundle: &DatasetBundle<S>,
        ctx: &RecContext<S>,
        triples: &[Triple],
        mddc_batches: &[Vec<usize>],
        r: &mut Rng,
    ) -> Result<ObjectiveNodes> {
        let c = &self.config;
        let diff = stage_loss(self, g, bundle, mddc_batches, r)?;
        let fwd = self.rec.forward(g, &self.store, ctx)?;
        let bpr = bpr_losses(g, &fwd, triples, c.alpha2)?.total;
        let mut users: Vec<usize> = triples.iter().map(|t| t.user).collect();
        users.sort_unstable();
        users.dedup();
        let cl = if users.len() >= 2 {
            let fu = g.gather_rows(fwd.users, &users)?;
            let modal: Vec<Var> = fwd.modal_users.iter().map(|&e| g.gather_rows(e, &users)).collect::<Result<_>>()?;
            Some(contrastive_loss(g, fu, &modal)?)
        } else {
            None
        };
        let mut reg: Option<Var> = None;
        for id in self.regularized_params()? {
            let p = g.param(&self.store, id);
            let sq = g.mul(p, p)?;
            let s = g.sum(sq);
            reg = Some(match reg {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        let reg = reg.ok_or_else(|| Error::InvalidArgument("empty parameter set".into()))?;
        let mut total = g.add(diff, bpr)?;
        if let Some(cl) = cl {
            let w = g.scale(cl, S::lit(c.lambda1));
            total = g.add(total, w)?;
        }
        let w = g.scale(reg, S::lit(c.lambda2));
        total = g.add(total, w)?;
        Ok(ObjectiveNodes { diff, bpr, cl, reg, total })
    }

    /// Validation selection score: F_fuse@K, or Precision@K when the
    /// bundle has no incomplete item. With a reference-score grid, every
    /// candidate is scored and the best one returned alongside.
    pub fn validation_score(&self, bundle: &DatasetBundle<S>) -> Result<(f64, f64)> {
        let scores = self.scores(bundle)?;
        let k = validation_k(bundle);
        let positives = bundle.positives(Split::Val);
        let candidates: Vec<Option<f64>> = if !self.config.variant.counterfactual() {
            vec![None]
        } else if self.config.gamma_grid.is_empty() {
            vec![Some(self.gamma)]
        } else {
            self.config.gamma_grid.iter().copied().map(Some).collect()
        };
        let mut best: Option<(f64, f64)> = None;
        for gamma in candidates {
            let ranking = AdjustedScores { scores: &scores, gamma }.ranking_scores()?;
            let (cut, _) = evaluate_cutoffs(&ranking, bundle, &positives, &[k])?;
            let score = match cut[0].f {
                Some(f) => fairness_f_fuse(f, cut[0].precision),
                None => cut[0].precision,
            };
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, gamma.unwrap_or(self.gamma)));
            }
        }
        Ok(best.expect("at least one candidate"))
    }

    /// One joint epoch: refine, rebuild the recommender context, Adam passes
    /// over shuffled triples, validation and best-epoch tracking.
    pub(crate) fn joint_epoch(&mut self, bundle: &DatasetBundle<S>) -> Result<f64> {
        self.adam.set_lr(self.config.joint_lr);
        self.refine(bundle)?;
        let ctx = self.context(bundle)?;
        let mut neg = rng::substream(self.config.seed, stream::NEGATIVES, &[self.epoch as u64]);
        let triples = epoch_triples(bundle, &mut neg);
        if triples.is_empty() {
            return Err(Error::Dataset("no training triples".into()));
        }
        let mut r = rng::substream(self.config.seed, stream::DIFFUSION_NOISE, &[1, self.epoch as u64]);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in triples.chunks(self.config.bpr_batch) {
            let batches = observed_batches(bundle, self.config.mddc_batch, &mut r);
            let mut g = Graph::new();
            let nodes = self.objective(&mut g, bundle, &ctx, chunk, &batches, &mut r)?;
            let value = g.value(nodes.total).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("joint loss at epoch {}", self.epoch)));
            }
            total += value;
            steps += 1;
            let grads = g.backward(nodes.total)?;
            adam_step(&mut self.store, &grads, &mut self.adam)?;
        }
        let mean = total / steps as f64;
        let (score, gamma) = self.validation_score(bundle)?;
        debug!("joint epoch {} loss {mean:.6} val {score:.6}", self.epoch);
        self.history.joint_loss.push(mean);
        self.history.val_score.push(score);
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(self.snapshot(score, gamma));
        }
        self.epoch += 1;
        Ok(mean)
    }

    pub(crate) fn joint_finished(&self) -> bool {
        let h = &self.history.val_score;
        if h.len() >= self.config.joint_epochs {
            return true;
        }
        match History::best_index(h, false) {
            Some(b) => h.len() - 1 - b >= self.config.joint_patience,
            None => false,
        }
    }

    /// Restores the best validation snapshot and closes training.
    pub(crate) fn finish(&mut self) -> Result<()> {
        if let Some(best) = self.best.clone() {
            self.restore(&best)?;
        }
        self.stage = Stage::Done;
        Ok(())
    }
}

/// Cutoff for validation: 20, capped by the smallest candidate pool.
pub fn validation_k<S: Scalar>(bundle: &DatasetBundle<S>) -> usize {
    let min_candidates = (0..bundle.n_users())
        .map(|u| bundle.n_items() - bundle.train_items(u).len())
        .min()
        .unwrap_or(0);
    20.min(min_candidates).max(1)
}

/// Runs the joint stage to completion.
pub fn joint_train<S: Scalar>(state: &mut ModelState<S>, bundle: &DatasetBundle<S>) -> Result<()> {
    if state.stage != Stage::Joint {
        return Err(Error::InvalidArgument(format!("joint training needs a pretrained state, found {:?}", state.stage)));
    }
    while !state.joint_finished() {
        state.joint_epoch(bundle)?;
    }
    state.finish()
}
