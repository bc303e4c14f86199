//! Dataset directory layout:
//!
//! ```text
//! interactions.tsv    user_id <TAB> item_id <TAB> split   (0-based ids)
//! modalities.json     [{"name", "dim", "file"}, …] in modality order
//! <file>.fmat         one feature matrix per modality
//! mask.json           optional MaskPlan; masked rows are stored as zeros
//! heldout/<file>      optional pre-mask ground truth (evaluation only)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    DatasetBundle, HeldOutFeatures, IndicatorMatrix, Interaction, MaskPlan, ModalityFeatures, Split,
};
use crate::error::{Error, Result};
use crate::io::fmat;
use crate::training::hex;

pub const INTERACTIONS: &str = "interactions.tsv";
pub const MODALITIES: &str = "modalities.json";
pub const MASK: &str = "mask.json";
pub const HELDOUT_DIR: &str = "heldout";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMeta {
    pub name: String,
    pub dim: usize,
    pub file: String,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

pub fn read_modalities_meta(dir: &Path) -> Result<Vec<ModalityMeta>> {
    let path = dir.join(MODALITIES);
    require(&path)?;
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
}

fn parse_interactions(text: &str) -> Result<Vec<Interaction>> {
    let bad = |line: usize, msg: String| Error::Format { file: format!("{INTERACTIONS}:{line}"), msg };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (n == 0 && line.starts_with("user_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 && cols.len() != 4 {
            return Err(bad(n + 1, format!("expected 3 or 4 columns, got {}", cols.len())));
        }
        let user = cols[0].parse().map_err(|_| bad(n + 1, format!("bad user id {:?}", cols[0])))?;
        let item = cols[1].parse().map_err(|_| bad(n + 1, format!("bad item id {:?}", cols[1])))?;
        let split = Split::parse(cols[2]).ok_or_else(|| bad(n + 1, format!("bad split {:?}", cols[2])))?;
        if let Some(v) = cols.get(3) {
            match v.trim() {
                "1" => {}
                "0" => continue,
                other => return Err(bad(n + 1, format!("non-binary interaction value {other:?}"))),
            }
        }
        out.push(Interaction { user, item, split });
    }
    Ok(out)
}

/// Loads and validates a dataset directory.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle<f32>> {
    let ipath = dir.join(INTERACTIONS);
    require(&ipath)?;
    let metas = read_modalities_meta(dir)?;
    if metas.is_empty() {
        return Err(Error::Dataset("modalities.json lists no modality".into()));
    }
    let interactions = parse_interactions(&fs::read_to_string(&ipath)?)?;

    let mut modalities = Vec::with_capacity(metas.len());
    let mut n_items = None;
    for meta in &metas {
        let t = fmat::read(&dir.join(&meta.file))?;
        if t.cols() != meta.dim {
            return Err(Error::Format {
                file: meta.file.clone(),
                msg: format!("modalities.json declares dim {}, matrix has {} columns", meta.dim, t.cols()),
            });
        }
        match n_items {
            None => n_items = Some(t.rows()),
            Some(n) if n != t.rows() => {
                return Err(Error::Format {
                    file: meta.file.clone(),
                    msg: format!("{} item rows, other modalities have {n}", t.rows()),
                })
            }
            _ => {}
        }
        modalities.push(ModalityFeatures::new(meta.name.clone(), t)?);
    }
    let n_items = n_items.unwrap_or(0);
    let n_users = interactions.iter().map(|x| x.user + 1).max().unwrap_or(0);
    if interactions.iter().all(|x| x.split != Split::Train) {
        return Err(Error::Dataset("empty training split".into()));
    }
    let mask_path = dir.join(MASK);
    let indicator = if mask_path.exists() {
        let plan: MaskPlan = serde_json::from_str(&fs::read_to_string(&mask_path)?)?;
        if plan.assignment.len() != n_items {
            return Err(Error::Dataset(format!(
                "mask covers {} items, features have {n_items}",
                plan.assignment.len()
            )));
        }
        plan.indicator(metas.len())?
    } else {
        IndicatorMatrix::all_observed(n_items, metas.len())
    };
    DatasetBundle::new(n_users, n_items, interactions.clone(), modalities, indicator)
}

pub fn interactions_tsv<S: crate::Scalar>(bundle: &DatasetBundle<S>) -> String {
    let mut s = String::from("user_id\titem_id\tsplit\n");
    for x in bundle.interactions() {
        let _ = writeln!(s, "{}\t{}\t{}", x.user, x.item, x.split.as_str());
    }
    s
}

fn feature_file(name: &str) -> String {
    format!("{name}.fmat")
}

/// Writes the bundle (features as currently stored) to `dir`.
pub fn save_bundle(dir: &Path, bundle: &DatasetBundle<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(INTERACTIONS), interactions_tsv(bundle))?;
    let metas: Vec<ModalityMeta> = bundle
        .modalities()
        .iter()
        .map(|m| ModalityMeta { name: m.name.clone(), dim: m.dim(), file: feature_file(&m.name) })
        .collect();
    for (meta, m) in metas.iter().zip(bundle.modalities()) {
        fmat::write(&dir.join(&meta.file), &m.data)?;
    }
    fs::write(dir.join(MODALITIES), serde_json::to_string_pretty(&metas)? + "\n")?;
    Ok(())
}

/// Writes a masked bundle with its plan and held-out ground truth.
pub fn save_masked(dir: &Path, bundle: &DatasetBundle<f32>, plan: &MaskPlan, heldout: &HeldOutFeatures<f32>) -> Result<()> {
    save_bundle(dir, bundle)?;
    fs::write(dir.join(MASK), serde_json::to_string(plan)? + "\n")?;
    let hdir = dir.join(HELDOUT_DIR);
    fs::create_dir_all(&hdir)?;
    for (m, t) in bundle.modalities().iter().zip(&heldout.features) {
        fmat::write(&hdir.join(feature_file(&m.name)), t)?;
    }
    Ok(())
}

/// Git-style digest of a dataset directory: every regular file (held-out
/// truth included) is hashed as a `blob <len>\0` object, and the sorted
/// `path digest` lines are hashed again.
pub fn content_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                files.push(path);
            }
        }
    }
    let mut lines: Vec<String> = Vec::with_capacity(files.len());
    for path in files {
        let bytes = fs::read(&path)?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()));
        h.update(&bytes);
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        lines.push(format!("{rel} {}", hex(&h.finalize())));
    }
    lines.sort();
    Ok(hex(&Sha256::digest(lines.join("\n"))))
}

/// Held-out ground truth, when the directory carries one.
pub fn load_heldout(dir: &Path, bundle: &DatasetBundle<f32>) -> Result<Option<HeldOutFeatures<f32>>> {
    let hdir = dir.join(HELDOUT_DIR);
    if !hdir.exists() {
        return Ok(None);
    }
    let metas = read_modalities_meta(dir)?;
    let mut features = Vec::with_capacity(metas.len());
    for (meta, m) in metas.iter().zip(bundle.modalities()) {
        let t = fmat::read(&hdir.join(&meta.file))?;
        if t.shape() != m.data.shape() {
            return Err(Error::Format { file: meta.file.clone(), msg: "held-out shape mismatch".into() });
        }
        features.push(t);
    }
    let missing = (0..bundle.n_modalities()).map(|m| bundle.indicator().missing_set(m)).collect();
    Ok(Some(HeldOutFeatures { features, missing }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_missing_mask, generate_synthetic, SynthConfig};

    #[test]
    fn content_hash_tracks_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let bundle = generate_synthetic(&SynthConfig::new(12, 10, vec![3, 2], 2, 0.3, 1)).unwrap();
        save_bundle(a.path(), &bundle).unwrap();
        save_bundle(b.path(), &bundle).unwrap();
        assert_eq!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
        fs::write(b.path().join(INTERACTIONS), "user_id\titem_id\tsplit\n0\t0\ttrain\n").unwrap();
        assert_ne!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
    }

    #[test]
    fn synthetic_roundtrip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_synthetic(&SynthConfig::new(30, 25, vec![4, 3], 3, 0.2, 7)).unwrap();
        save_bundle(dir.path(), &b).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn masked_roundtrip_keeps_indicator_and_heldout() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_synthetic(&SynthConfig::new(30, 25, vec![4, 3], 3, 0.2, 7)).unwrap();
        let (masked, plan) = apply_missing_mask(&b, 0.4, 1).unwrap();
        let held = HeldOutFeatures::capture(&b, &masked);
        save_masked(dir.path(), &masked, &plan, &held).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, masked);
        assert_eq!(load_heldout(dir.path(), &back).unwrap().unwrap(), held);
    }

    #[test]
    fn baby_style_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let metas = vec![
            ModalityMeta { name: "visual".into(), dim: 4096, file: "v.fmat".into() },
            ModalityMeta { name: "textual".into(), dim: 1024, file: "t.fmat".into() },
        ];
        fs::write(dir.path().join(MODALITIES), serde_json::to_string(&metas).unwrap()).unwrap();
        fmat::write(&dir.path().join("v.fmat"), &crate::numerics::Tensor::zeros(&[2, 4096])).unwrap();
        fmat::write(&dir.path().join("t.fmat"), &crate::numerics::Tensor::zeros(&[2, 1024])).unwrap();
        fs::write(dir.path().join(INTERACTIONS), "0\t0\ttrain\n1\t1\ttrain\n0\t1\ttest\n").unwrap();
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.n_modalities(), 2);
        assert_eq!(b.dims(), vec![4096, 1024]);
    }

    fn write_min(dir: &Path, tsv: &str, dim_decl: usize) {
        let metas = vec![ModalityMeta { name: "v".into(), dim: dim_decl, file: "v.fmat".into() }];
        fs::write(dir.join(MODALITIES), serde_json::to_string(&metas).unwrap()).unwrap();
        fmat::write(&dir.join("v.fmat"), &crate::numerics::Tensor::zeros(&[2, 3])).unwrap();
        fs::write(dir.join(INTERACTIONS), tsv).unwrap();
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::MissingFile(_))));

        write_min(dir.path(), "0\t0\ttest\n1\t1\tval\n", 3);
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("empty training split"), "{err}");

        write_min(dir.path(), "0\t0\ttrain\n1\t1\ttrain\n", 5);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Format { .. })));

        write_min(dir.path(), "0\t0\ttrain\t2\n1\t1\ttrain\t1\n", 3);
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-binary"), "{err}");

        write_min(dir.path(), "0\t0\ttrain\n1\t1\ttrain\n", 3);
        let metas = vec![
            ModalityMeta { name: "v".into(), dim: 3, file: "v.fmat".into() },
            ModalityMeta { name: "t".into(), dim: 3, file: "t.fmat".into() },
        ];
        fs::write(dir.path().join(MODALITIES), serde_json::to_string(&metas).unwrap()).unwrap();
        fmat::write(&dir.path().join("t.fmat"), &crate::numerics::Tensor::zeros(&[3, 3])).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("item rows"), "{err}");
    }
}
