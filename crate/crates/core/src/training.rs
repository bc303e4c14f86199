//! Two-stage training: diffusion pretraining, joint optimization of the
//! full objective, ablation variants and the resumable model state.

mod config;
mod impute;
mod joint;
mod pretrain;
mod run;
mod state;

pub(crate) use config::hex;
pub use config::{FillRule, TrainConfig, Variant, GAMMA_GRID};
pub use impute::{fill_missing, nearest_observed};
pub use joint::{joint_train, validation_k, ObjectiveNodes, ObjectiveTerms};
pub use pretrain::{pretrain_mddc, reconstruction_loss, smoothed, LOSS_SMOOTHING};
pub use run::{run_variant, StepOutcome, REPORT_KS};
pub use state::{History, ModelState, Snapshot, Stage};
