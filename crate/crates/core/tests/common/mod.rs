#![allow(dead_code)]

pub mod grads;
pub mod oracles;
pub mod props;

use modicf::dataset::{apply_missing_mask, generate_synthetic, DatasetBundle, HeldOutFeatures, SynthConfig};
use modicf::training::TrainConfig;

/// Small masked bundle and its held-out truth.
pub fn tiny_bundle(seed: u64, mr: f64) -> (DatasetBundle<f32>, DatasetBundle<f32>, HeldOutFeatures<f32>) {
    let full = generate_synthetic(&SynthConfig::new(30, 40, vec![4, 3], 3, 0.2, seed)).unwrap();
    let (masked, _) = apply_missing_mask(&full, mr, seed).unwrap();
    let held = HeldOutFeatures::capture(&full, &masked);
    (full, masked, held)
}

/// Narrow widths and a few epochs per stage.
pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 4,
        hidden_dim: 8,
        time_dim: 4,
        heads: 2,
        t_max: 50,
        sample_steps: 5,
        pretrain_epochs: 4,
        pretrain_patience: 4,
        joint_epochs: 4,
        joint_patience: 4,
        mddc_batch: 8,
        bpr_batch: 64,
        seed,
        ..TrainConfig::desk()
    }
}
