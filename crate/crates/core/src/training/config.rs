use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfmr::CfmrConfig;
use crate::error::{Error, Result};
use crate::mddc::{MddcConfig, NoiseSchedule};

/// Fill rule replacing the diffusion module in the `impute-*` variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillRule {
    Mean,
    Zero,
    Random,
    Nearest,
}

/// Runnable ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoCounterfactual,
    NoConditioning,
    ImputeMean,
    ImputeZero,
    ImputeRandom,
    ImputeNearest,
    MeanAndNoCf,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoCounterfactual,
        Variant::NoConditioning,
        Variant::ImputeMean,
        Variant::ImputeZero,
        Variant::ImputeRandom,
        Variant::ImputeNearest,
        Variant::MeanAndNoCf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCounterfactual => "no-counterfactual",
            Variant::NoConditioning => "no-conditioning",
            Variant::ImputeMean => "impute-mean",
            Variant::ImputeZero => "impute-zero",
            Variant::ImputeRandom => "impute-random",
            Variant::ImputeNearest => "impute-nearest",
            Variant::MeanAndNoCf => "mean-and-no-cf",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "MoDiCF",
            Variant::NoCounterfactual => "MoDiCF-C",
            Variant::NoConditioning => "MoDiCF-con",
            Variant::ImputeMean => "MoDiCF-D+M",
            Variant::ImputeZero => "MoDiCF-D+Z",
            Variant::ImputeRandom => "MoDiCF-D+R",
            Variant::ImputeNearest => "MoDiCF-D+N",
            Variant::MeanAndNoCf => "MoDiCF-D-C+M",
        }
    }

    /// `None` when the diffusion module completes missing cells.
    pub fn fill_rule(self) -> Option<FillRule> {
        match self {
            Variant::ImputeMean | Variant::MeanAndNoCf => Some(FillRule::Mean),
            Variant::ImputeZero => Some(FillRule::Zero),
            Variant::ImputeRandom => Some(FillRule::Random),
            Variant::ImputeNearest => Some(FillRule::Nearest),
            _ => None,
        }
    }

    pub fn uses_diffusion(self) -> bool {
        self.fill_rule().is_none()
    }

    pub fn conditioning(self) -> bool {
        self != Variant::NoConditioning
    }

    pub fn counterfactual(self) -> bool {
        !matches!(self, Variant::NoCounterfactual | Variant::MeanAndNoCf)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Reference-score grid searched on validation.
pub const GAMMA_GRID: [f64; 9] = [0.001, 0.01, 0.1, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0];

/// Every knob of the two training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eta: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Candidate reference scores; when non-empty the one with the best
    /// validation score replaces `gamma` at each selection.
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    pub layers: usize,
    pub heads: usize,
    /// Latent and embedding width `d`.
    pub dim: usize,
    pub hidden_dim: usize,
    pub time_dim: usize,
    pub top_k: usize,
    pub init_std: f64,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sample_steps: usize,
    pub deterministic_sampling: bool,
    /// Clamp sampled latents to the observed latent range.
    pub clip_latents: bool,
    pub pretrain_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub pretrain_epochs: usize,
    pub pretrain_patience: usize,
    pub joint_lr: f64,
    pub joint_epochs: usize,
    pub joint_patience: usize,
    /// Items per modality in one diffusion minibatch.
    pub mddc_batch: usize,
    /// Triples per recommender minibatch.
    pub bpr_batch: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl TrainConfig {
    #[allow(clippy::too_many_arguments)]
    fn dataset_preset(lambda1: f64, t_s: usize, gamma: f64, a1: f64, a2: f64, eta: f64, delta: f64, layers: usize, heads: usize, dim: usize) -> Self {
        Self {
            lambda1,
            lambda2: 1e-5,
            alpha1: a1,
            alpha2: a2,
            eta,
            delta,
            gamma,
            gamma_grid: Vec::new(),
            layers,
            heads,
            dim,
            hidden_dim: dim,
            time_dim: 64,
            top_k: 10,
            init_std: 0.1,
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sample_steps: t_s,
            deterministic_sampling: true,
            clip_latents: true,
            pretrain_lr: 1e-4,
            lr_decay: 0.95,
            lr_decay_every: 100,
            pretrain_epochs: 500,
            pretrain_patience: 100,
            joint_lr: 1e-4,
            joint_epochs: 250,
            joint_patience: 20,
            mddc_batch: 256,
            bpr_batch: 2048,
            seed: 0,
            variant: Variant::Full,
        }
    }

    pub fn baby() -> Self {
        Self::dataset_preset(0.09, 10, 0.01, 1.0, 0.7, 0.7, 0.4, 2, 8, 256)
    }

    pub fn tiktok() -> Self {
        Self::dataset_preset(0.06, 10, 20.0, 0.7, 0.3, 0.6, 0.3, 2, 4, 256)
    }

    pub fn allrecipes() -> Self {
        Self::dataset_preset(0.15, 10, 20.0, 0.6, 0.5, 0.3, 0.4, 2, 8, 128)
    }

    /// Small widths and short budgets for the synthetic bundle.
    pub fn desk() -> Self {
        Self {
            dim: 16,
            hidden_dim: 128,
            time_dim: 16,
            heads: 2,
            pretrain_lr: 2e-3,
            lr_decay_every: 100,
            pretrain_epochs: 500,
            pretrain_patience: 100,
            joint_lr: 5e-3,
            joint_epochs: 60,
            joint_patience: 15,
            mddc_batch: 16,
            bpr_batch: 512,
            gamma_grid: GAMMA_GRID.to_vec(),
            ..Self::tiktok()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baby" => Ok(Self::baby()),
            "tiktok" => Ok(Self::tiktok()),
            "allrecipes" => Ok(Self::allrecipes()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pretrain_lr", self.pretrain_lr),
            ("joint_lr", self.joint_lr),
            ("lr_decay", self.lr_decay),
            ("beta_start", self.beta_start),
            ("beta_end", self.beta_end),
            ("init_std", self.init_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("eta", self.eta),
            ("delta", self.delta),
            ("gamma", self.gamma),
        ];
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument(format!("gamma grid entry must be non-negative, got {g}")));
        }
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        let counts = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("dim", self.dim),
            ("hidden_dim", self.hidden_dim),
            ("top_k", self.top_k),
            ("t_max", self.t_max),
            ("sample_steps", self.sample_steps),
            ("lr_decay_every", self.lr_decay_every),
            ("mddc_batch", self.mddc_batch),
            ("bpr_batch", self.bpr_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("time_dim must be even and ≥ 2, got {}", self.time_dim)));
        }
        if self.dim < 4 {
            return Err(Error::InvalidArgument("dim must be at least 4".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.t_max, self.beta_start, self.beta_end, self.sample_steps)
    }

    pub fn mddc(&self) -> MddcConfig {
        MddcConfig { latent_dim: self.dim, hidden_dim: self.hidden_dim, time_dim: self.time_dim }
    }

    pub fn cfmr(&self) -> CfmrConfig {
        CfmrConfig {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            eta: self.eta,
            delta: self.delta,
            top_k: self.top_k,
            init_std: self.init_std,
        }
    }

    /// Pretraining rate after `epoch` completed epochs.
    pub fn pretrain_lr_at(&self, epoch: usize) -> f64 {
        let k = i32::try_from(epoch / self.lr_decay_every).unwrap_or(i32::MAX);
        self.pretrain_lr * self.lr_decay.powi(k)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_presets() {
        let b = TrainConfig::baby();
        assert_eq!((b.lambda1, b.lambda2, b.sample_steps, b.gamma), (0.09, 1e-5, 10, 0.01));
        assert_eq!((b.alpha1, b.alpha2, b.eta, b.delta, b.layers, b.heads), (1.0, 0.7, 0.7, 0.4, 2, 8));
        let t = TrainConfig::tiktok();
        assert_eq!((t.lambda1, t.gamma, t.alpha1, t.alpha2, t.eta, t.delta, t.heads), (0.06, 20.0, 0.7, 0.3, 0.6, 0.3, 4));
        let a = TrainConfig::allrecipes();
        assert_eq!((a.lambda1, a.gamma, a.alpha1, a.alpha2, a.eta, a.delta, a.heads), (0.15, 20.0, 0.6, 0.5, 0.3, 0.4, 8));
        for c in [b, t, a, TrainConfig::desk()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn lr_decay_rule() {
        let c = TrainConfig::baby();
        assert_eq!(c.pretrain_lr_at(0), 1e-4);
        assert_eq!(c.pretrain_lr_at(99), 1e-4);
        assert!((c.pretrain_lr_at(250) - 9.025e-5).abs() < 1e-15);
    }

    #[test]
    fn variant_flags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
        assert!("bogus".parse::<Variant>().is_err());
        assert!(!Variant::NoCounterfactual.counterfactual());
        assert!(!Variant::MeanAndNoCf.uses_diffusion());
        assert!(!Variant::NoConditioning.conditioning());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::desk();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig::desk();
        c.joint_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.heads = 3;
        assert!(c.validate().is_err());
    }
}
