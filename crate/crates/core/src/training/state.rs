use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cfmr::{AdjustedScores, RecContext, Recommender, Scorer, Scores};
use crate::dataset::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::mddc::{Availability, MddcModel};
use crate::metrics::{evaluate_cutoffs, exposure_counts, MetricReport, RankingResult};
use crate::numerics::{AdamConfig, AdamState, ParamId, ParamStore, Tensor};
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::training::config::TrainConfig;
use crate::training::impute::fill_missing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    Joint,
    Done,
}

/// Per-epoch trace of both stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    /// Mean pretraining loss per epoch.
    pub pretrain_loss: Vec<f64>,
    pub joint_loss: Vec<f64>,
    /// Validation selection score per joint epoch.
    pub val_score: Vec<f64>,
}

impl History {
    /// Index of the best entry (`lower` picks the minimum) with the first
    /// one winning ties.
    pub fn best_index(values: &[f64], lower: bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            let better = match best {
                None => true,
                Some(b) if lower => v < values[b],
                Some(b) => v > values[b],
            };
            if better {
                best = Some(i);
            }
        }
        best
    }
}

/// Parameters and completed features at the best validation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<S> {
    pub epoch: usize,
    pub score: f64,
    pub gamma: f64,
    pub params: Vec<Tensor<S>>,
    pub features: Vec<Tensor<S>>,
}

/// Complete trainable state: both modules in one parameter store, the
/// optimizer, the current completed features and the stage cursor.
#[derive(Debug, Clone)]
pub struct ModelState<S: Scalar> {
    pub config: TrainConfig,
    pub store: ParamStore<S>,
    pub mddc: MddcModel<S>,
    pub rec: Recommender<S>,
    pub adam: AdamState<S>,
    /// Feature tables with missing cells filled (zero until first filled).
    pub features: Vec<Tensor<S>>,
    /// Whether missing cells hold generated or filled content.
    pub imputed: bool,
    pub stage: Stage,
    /// Epochs completed in the current stage.
    pub epoch: usize,
    /// Refinement rounds run so far.
    pub round: u64,
    /// Reference score in use by the counterfactual ranking.
    pub gamma: f64,
    pub history: History,
    pub best: Option<Snapshot<S>>,
}

impl<S: Scalar> ModelState<S> {
    /// Fresh state for `bundle`; structure depends only on the config and
    /// the bundle's shape, so a checkpoint can be restored into it.
    pub fn new(bundle: &DatasetBundle<S>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, stream::INIT);
        let mut store = ParamStore::new();
        let mddc = MddcModel::new(&mut store, &bundle.dims(), config.mddc(), config.variant.conditioning(), &mut r)?;
        let rec = Recommender::new(&mut store, bundle.n_users(), bundle.n_items(), bundle.n_modalities(), config.cfmr(), &mut r)?;
        let features: Vec<Tensor<S>> = bundle.modalities().iter().map(|f| f.data.clone()).collect();
        mddc.fit_standardization(&mut store, &features, bundle.indicator())?;
        let (features, imputed) = match config.variant.fill_rule() {
            Some(rule) => (fill_missing(bundle, rule, config.seed)?, true),
            None => (features, false),
        };
        let adam = AdamState::new(AdamConfig { lr: config.pretrain_lr, ..AdamConfig::default() });
        let gamma = config.gamma;
        let state = Self {
            config,
            store,
            mddc,
            rec,
            adam,
            features,
            imputed,
            stage: Stage::Pretrain,
            epoch: 0,
            round: 0,
            gamma,
            history: History::default(),
            best: None,
        };
        state.regularized_params()?;
        Ok(state)
    }

    /// Parameters of modules the variant never runs.
    fn inactive_params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        if !self.config.variant.uses_diffusion() {
            for d in &self.mddc.denoisers {
                v.extend(d.param_ids());
            }
        }
        if !self.config.variant.uses_diffusion() || !self.config.variant.conditioning() {
            for f in &self.mddc.fusion {
                v.extend(f.param_ids());
            }
        }
        v
    }

    /// The regularized set Θ: every learnable parameter the variant trains.
    /// Fails if the store holds a trainable tensor no module registered.
    pub fn regularized_params(&self) -> Result<Vec<ParamId>> {
        let registered: BTreeSet<ParamId> = self.mddc.param_ids().into_iter().chain(self.rec.param_ids()).collect();
        let trainable: BTreeSet<ParamId> = self.store.trainable_ids().into_iter().collect();
        if registered != trainable {
            let stray: Vec<String> = trainable
                .symmetric_difference(&registered)
                .map(|&id| self.store.entry(id).name.clone())
                .collect();
            return Err(Error::InvalidArgument(format!("parameter bookkeeping mismatch: {stray:?}")));
        }
        let inactive: BTreeSet<ParamId> = self.inactive_params().into_iter().collect();
        Ok(trainable.difference(&inactive).copied().collect())
    }

    /// Scalar count of Θ.
    pub fn regularized_count(&self) -> Result<usize> {
        Ok(self.regularized_params()?.iter().map(|&id| self.store.get(id).len()).sum())
    }

    /// Bundle view with the current completed features.
    pub fn completed(&self, bundle: &DatasetBundle<S>) -> Result<DatasetBundle<S>> {
        bundle.with_features(self.features.clone())
    }

    pub fn availability(&self, bundle: &DatasetBundle<S>) -> Availability {
        Availability::from_indicator(bundle.indicator(), self.imputed)
    }

    /// Latents, modality graphs and side features under current parameters.
    pub fn context(&self, bundle: &DatasetBundle<S>) -> Result<RecContext<S>> {
        let latents = self.mddc.encode_all(&self.store, &self.features)?;
        RecContext::build(&self.completed(bundle)?, latents, &self.config.cfmr())
    }

    pub fn scores(&self, bundle: &DatasetBundle<S>) -> Result<Scores<S>> {
        self.rec.score_all(&self.store, &self.context(bundle)?)
    }

    /// Final ranking scores: counterfactually adjusted unless the variant
    /// disables the correction.
    pub fn ranking_scores(&self, bundle: &DatasetBundle<S>) -> Result<Vec<Vec<f64>>> {
        let scores = self.scores(bundle)?;
        let gamma = self.config.variant.counterfactual().then_some(self.gamma);
        AdjustedScores { scores: &scores, gamma }.ranking_scores()
    }

    /// Metrics of the current model on `split` at each cutoff.
    pub fn evaluate(&self, bundle: &DatasetBundle<S>, split: Split, ks: &[usize]) -> Result<(MetricReport, RankingResult)> {
        let scores = self.ranking_scores(bundle)?;
        let positives = bundle.positives(split);
        let (cutoffs, ranking) = evaluate_cutoffs(&scores, bundle, &positives, ks)?;
        let incomplete: Vec<bool> = (0..bundle.n_items()).map(|i| bundle.indicator().is_incomplete(i)).collect();
        let kmax = ks.iter().copied().max().unwrap_or(0);
        let exposure = exposure_counts(&ranking.truncated(kmax), &incomplete);
        let report = MetricReport {
            split: split.as_str().to_string(),
            users_evaluated: positives.iter().filter(|p| !p.is_empty()).count(),
            p_d: bundle.indicator().incomplete_fraction(),
            cutoffs,
            exposure_complete: exposure.complete,
            exposure_incomplete: exposure.incomplete,
            seed: self.config.seed,
            config_hash: self.config.hash(),
            variant: self.config.variant.as_str().to_string(),
        };
        Ok((report, ranking))
    }

    pub(crate) fn snapshot(&self, score: f64, gamma: f64) -> Snapshot<S> {
        Snapshot {
            epoch: self.epoch,
            score,
            gamma,
            params: self.store.entries().iter().map(|e| e.value.clone()).collect(),
            features: self.features.clone(),
        }
    }

    pub(crate) fn restore(&mut self, snap: &Snapshot<S>) -> Result<()> {
        for (i, t) in snap.params.iter().enumerate() {
            self.store.set(ParamId(i), t.clone())?;
        }
        self.features.clone_from(&snap.features);
        self.gamma = snap.gamma;
        Ok(())
    }
}
