//! Multimodal interaction data: loading, synthesis, missing-modality masks
//! and BPR triple sampling.

mod bundle;
mod mask;
mod sampling;
mod synth;

pub use bundle::{DatasetBundle, IndicatorMatrix, Interaction, ModalityFeatures, Split};
pub use mask::{apply_missing_mask, max_missing_rate, HeldOutFeatures, MaskPlan};
pub use sampling::{epoch_triples, sample_bpr_triples, Triple};
pub use synth::{generate_synthetic, modality_name, SynthConfig};

pub use crate::io::bundle_files::{load_bundle, save_bundle};
