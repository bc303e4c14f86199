//! Exports: ranked recommendations as TSV and completed feature matrices
//! with a JSON sidecar naming the generated rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::io::fmat;
use crate::metrics::RankingResult;
use crate::numerics::Tensor;

pub const IMPUTED_SIDECAR: &str = "imputed.json";

/// `user_id  rank  item_id  score`, ranks starting at 1, one line per
/// recommended item. `users` restricts the output; `None` writes everyone.
pub fn recommendations_tsv(ranking: &RankingResult, users: Option<&[usize]>) -> Result<String> {
    let all: Vec<usize> = (0..ranking.lists.len()).collect();
    let users = users.unwrap_or(&all);
    let mut s = String::from("user_id\trank\titem_id\tscore\n");
    for &u in users {
        let list = ranking
            .lists
            .get(u)
            .ok_or_else(|| Error::InvalidArgument(format!("user {u} out of range ({} users)", ranking.lists.len())))?;
        for (r, (item, score)) in list.iter().enumerate() {
            let _ = writeln!(s, "{u}\t{}\t{item}\t{score}", r + 1);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedModality {
    pub name: String,
    pub dim: usize,
    pub file: String,
    /// Rows that were generated rather than observed.
    pub imputed_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedSidecar {
    pub modalities: Vec<ImputedModality>,
    /// MSE over masked cells against held-out truth, when available.
    pub heldout_mse: Option<f64>,
}

/// Writes completed matrices (`<name>.fmat`) and the sidecar into `dir`.
pub fn write_imputed(
    dir: &Path,
    bundle: &DatasetBundle<f32>,
    features: &[Tensor<f32>],
    heldout_mse: Option<f64>,
) -> Result<ImputedSidecar> {
    if features.len() != bundle.n_modalities() {
        return Err(Error::Shape(format!("{} matrices for {} modalities", features.len(), bundle.n_modalities())));
    }
    fs::create_dir_all(dir)?;
    let mut modalities = Vec::with_capacity(features.len());
    for (m, (meta, t)) in bundle.modalities().iter().zip(features).enumerate() {
        let file = format!("{}.fmat", meta.name);
        fmat::write(&dir.join(&file), t)?;
        modalities.push(ImputedModality {
            name: meta.name.clone(),
            dim: t.cols(),
            file,
            imputed_rows: bundle.indicator().missing_set(m),
        });
    }
    let sidecar = ImputedSidecar { modalities, heldout_mse };
    fs::write(dir.join(IMPUTED_SIDECAR), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(sidecar)
}
