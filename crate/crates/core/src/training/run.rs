use std::time::Instant;

use log::info;

use crate::dataset::{DatasetBundle, Split};
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::scalar::Scalar;
use crate::training::config::TrainConfig;
use crate::training::state::{ModelState, Stage};

/// What one call to [`ModelState::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Pretrained { epoch: usize, loss: f64 },
    Joint { epoch: usize, loss: f64 },
    /// A stage boundary was crossed without running an epoch.
    Transition(Stage),
    Done,
}

impl<S: Scalar> ModelState<S> {
    /// Advances training by one epoch or one stage transition. Every
    /// random draw is keyed by stage and epoch, so stepping a restored
    /// checkpoint continues the same trajectory.
    pub fn step(&mut self, bundle: &DatasetBundle<S>) -> Result<StepOutcome> {
        match self.stage {
            Stage::Pretrain => {
                if self.pretrain_finished() {
                    self.begin_joint(bundle)?;
                    return Ok(StepOutcome::Transition(Stage::Joint));
                }
                let epoch = self.epoch;
                let loss = self.pretrain_epoch(bundle)?;
                Ok(StepOutcome::Pretrained { epoch, loss })
            }
            Stage::Joint => {
                if self.joint_finished() {
                    self.finish()?;
                    return Ok(StepOutcome::Transition(Stage::Done));
                }
                let epoch = self.epoch;
                let loss = self.joint_epoch(bundle)?;
                Ok(StepOutcome::Joint { epoch, loss })
            }
            Stage::Done => Ok(StepOutcome::Done),
        }
    }

    /// Steps until `stop` says so or training is done; returns per-epoch
    /// wall-clock seconds.
    pub fn train_until(&mut self, bundle: &DatasetBundle<S>, mut stop: impl FnMut(&Self) -> bool) -> Result<Vec<f64>> {
        let mut timings = Vec::new();
        while self.stage != Stage::Done && !stop(self) {
            let t = Instant::now();
            let out = self.step(bundle)?;
            if matches!(out, StepOutcome::Pretrained { .. } | StepOutcome::Joint { .. }) {
                timings.push(t.elapsed().as_secs_f64());
            }
        }
        Ok(timings)
    }

    /// Trains both stages to completion.
    pub fn train(&mut self, bundle: &DatasetBundle<S>) -> Result<Vec<f64>> {
        self.train_until(bundle, |_| false)
    }

    /// Stops at the end of pretraining (state left in the joint stage).
    pub fn pretrain(&mut self, bundle: &DatasetBundle<S>) -> Result<Vec<f64>> {
        self.train_until(bundle, |s| s.stage != Stage::Pretrain)
    }
}

/// Cutoffs reported by default.
pub const REPORT_KS: [usize; 2] = [10, 20];

/// Trains a variant from scratch and evaluates it on the test split.
pub fn run_variant<S: Scalar>(bundle: &DatasetBundle<S>, config: TrainConfig) -> Result<(ModelState<S>, MetricReport)> {
    let mut state = ModelState::new(bundle, config)?;
    info!("{}: |Θ| = {} scalars", state.config.variant, state.regularized_count()?);
    state.train(bundle)?;
    let (report, _) = state.evaluate(bundle, Split::Test, &REPORT_KS)?;
    Ok((state, report))
}
