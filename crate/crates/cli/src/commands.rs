use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use modicf::dataset::{apply_missing_mask, generate_synthetic, DatasetBundle, HeldOutFeatures, Split, SynthConfig};
use modicf::io::{bundle_files, checkpoint, export};
use modicf::metrics::{rank_topk, MetricReport};
use modicf::training::{ModelState, Stage, StepOutcome, TrainConfig, Variant};
use modicf::Error;

use crate::{EvalArgs, ImputeArgs, MaskArgs, RecommendArgs, SynthArgs, TrainArgs};

pub const THREADS_VAR: &str = "MODICF_THREADS";

/// A malformed flag or argument value.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage_error(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Exit status and class label for a failure.
pub fn classify(e: &anyhow::Error) -> (u8, &'static str) {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return (2, "bad flag");
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::NonFinite(_) => (4, "NaN abort"),
                Error::InvalidArgument(_) | Error::MissingRate { .. } => (2, "bad flag"),
                Error::MissingFile(_)
                | Error::Format { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
                | Error::Dataset(_) => (3, "bad file"),
                _ => (1, "error"),
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return (3, "bad file");
        }
    }
    (1, "error")
}

/// Validates the thread cap. Every computation runs on the calling thread,
/// which satisfies any cap of at least one.
pub fn check_threads() -> Result<()> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(usage_error(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(()),
    }
}

/// One evaluated run, enough to reproduce and aggregate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub checkpoint: PathBuf,
    pub config: TrainConfig,
    pub seed: u64,
    pub variant: Variant,
    pub metrics: MetricReport,
    /// Imputation MSE against held-out truth, when the dataset carries it.
    pub imputation_mse: Option<f64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig::new(a.users, a.items, a.dims, a.groups, a.density, a.seed);
    let bundle = generate_synthetic(&cfg)?;
    bundle_files::save_bundle(&a.out, &bundle)?;
    fs::write(a.out.join("synth.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    info!("wrote {} users, {} items, {} interactions to {}", bundle.n_users(), bundle.n_items(), bundle.interactions().len(), a.out.display());
    Ok(())
}

fn load(dir: &Path) -> Result<DatasetBundle<f32>> {
    bundle_files::load_bundle(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn mask(a: MaskArgs) -> Result<()> {
    let bundle = load(&a.data)?;
    let (masked, plan) = apply_missing_mask(&bundle, a.mr, a.seed)?;
    let heldout = HeldOutFeatures::capture(&bundle, &masked);
    bundle_files::save_masked(&a.out, &masked, &plan, &heldout)?;
    info!("masked {} cells ({} incomplete items)", plan.masked_cells(), masked.indicator().incomplete_items().len());
    Ok(())
}

fn read_config(spec: &str) -> Result<TrainConfig> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {spec}"))?;
        let cfg: TrainConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {spec}"))?;
        Ok(cfg)
    } else {
        TrainConfig::preset(spec).map_err(|_| usage_error(format!("unknown preset {spec:?} and no such config file")))
    }
}

pub fn train(a: TrainArgs, pretrain_only: bool) -> Result<()> {
    let bundle = load(&a.data)?;
    let mut state = match &a.resume {
        Some(path) => {
            if a.variant.is_some() || a.seed.is_some() {
                return Err(usage_error("--variant and --seed come from the checkpoint when resuming"));
            }
            checkpoint::load(path, &bundle).with_context(|| format!("resuming {}", path.display()))?
        }
        None => {
            let mut cfg = read_config(&a.config)?;
            if let Some(v) = &a.variant {
                cfg.variant = v.parse().map_err(|e: Error| usage_error(e.to_string()))?;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            ModelState::new(&bundle, cfg)?
        }
    };
    let mut steps = 0usize;
    loop {
        if a.max_steps.is_some_and(|m| steps >= m) || state.stage == Stage::Done {
            break;
        }
        if pretrain_only && state.stage != Stage::Pretrain {
            break;
        }
        match state.step(&bundle)? {
            StepOutcome::Pretrained { epoch, loss } if epoch % 50 == 0 => info!("pretrain epoch {epoch}: loss {loss:.5}"),
            StepOutcome::Joint { epoch, loss } => info!("joint epoch {epoch}: loss {loss:.5}"),
            StepOutcome::Transition(s) => info!("entered stage {s:?}"),
            _ => {}
        }
        steps += 1;
    }
    checkpoint::save(&a.checkpoint, &state, &bundle)?;
    info!("saved {:?} state at epoch {} to {}", state.stage, state.epoch, a.checkpoint.display());
    Ok(())
}

fn restore(data: &Path, ckpt: &Path) -> Result<(DatasetBundle<f32>, ModelState<f32>)> {
    let bundle = load(data)?;
    let state = checkpoint::load(ckpt, &bundle).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok((bundle, state))
}

fn heldout_mse(data: &Path, bundle: &DatasetBundle<f32>, state: &ModelState<f32>) -> Result<Option<f64>> {
    Ok(bundle_files::load_heldout(data, bundle)?.map(|h| h.mse(&state.features)))
}

/// One header row and one value row: Recall, Precision, NDCG, F and
/// F_fuse at each cutoff, as fractions.
pub fn report_csv(report: &MetricReport) -> String {
    let mut head = Vec::new();
    let mut vals = Vec::new();
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for c in &report.cutoffs {
        for (name, v) in [
            ("Recall", c.recall.to_string()),
            ("Precision", c.precision.to_string()),
            ("NDCG", c.ndcg.to_string()),
            ("F", opt(c.f)),
            ("F_fuse", opt(c.f_fuse)),
        ] {
            head.push(format!("{name}@{}", c.k));
            vals.push(v);
        }
    }
    format!("{}\n{}\n", head.join(","), vals.join(","))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split = Split::parse(&a.split).ok_or_else(|| usage_error(format!("unknown split {:?}", a.split)))?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(usage_error("--k needs positive cutoffs"));
    }
    let (bundle, state) = restore(&a.data, &a.checkpoint)?;
    if state.stage != Stage::Done {
        log::warn!("evaluating a checkpoint in stage {:?}", state.stage);
    }
    let (metrics, _) = state.evaluate(&bundle, split, &a.k)?;
    let manifest = Manifest {
        dataset: a.data.clone(),
        dataset_hash: bundle_files::content_hash(&a.data)?,
        checkpoint: a.checkpoint.clone(),
        config: state.config.clone(),
        seed: state.config.seed,
        variant: state.config.variant,
        imputation_mse: heldout_mse(&a.data, &bundle, &state)?,
        metrics,
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&manifest.metrics)? + "\n")?;
    fs::write(a.out.join("report.csv"), report_csv(&manifest.metrics))?;
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for c in &manifest.metrics.cutoffs {
        info!("@{}: recall {:.4} precision {:.4} ndcg {:.4} F {:?} F_fuse {:?}", c.k, c.recall, c.precision, c.ndcg, c.f, c.f_fuse);
    }
    Ok(())
}

pub fn impute(a: ImputeArgs) -> Result<()> {
    let (bundle, state) = restore(&a.data, &a.checkpoint)?;
    let mse = heldout_mse(&a.data, &bundle, &state)?;
    export::write_imputed(&a.out, &bundle, &state.features, mse)?;
    if let Some(m) = mse {
        info!("imputation MSE on held-out cells: {m:.5}");
    }
    Ok(())
}

pub fn recommend(a: RecommendArgs) -> Result<()> {
    let (bundle, state) = restore(&a.data, &a.checkpoint)?;
    if let Some(&u) = a.user.iter().find(|&&u| u >= bundle.n_users()) {
        return Err(usage_error(format!("user {u} out of range ({} users)", bundle.n_users())));
    }
    let scores = state.ranking_scores(&bundle)?;
    let ranking = rank_topk(&scores, &bundle, a.top_k)?;
    let users = (!a.user.is_empty()).then_some(a.user.as_slice());
    let tsv = export::recommendations_tsv(&ranking, users)?;
    match &a.out {
        Some(p) => fs::write(p, tsv)?,
        None => print!("{tsv}"),
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow!(e).context(format!("parsing manifest {}", path.display())))
}
