//! Top-K ranking, accuracy and fairness metrics, exposure counting and the
//! paired t-test used to compare runs across seeds.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-user top-K lists of `(item, score)`, train positives removed.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    pub lists: Vec<Vec<(usize, f64)>>,
}

impl RankingResult {
    pub fn items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.lists[user].iter().map(|x| x.0)
    }

    /// The same ranking cut to its first `k` entries.
    pub fn truncated(&self, k: usize) -> Self {
        Self { k: k.min(self.k), lists: self.lists.iter().map(|l| l[..k.min(l.len())].to_vec()).collect() }
    }
}

/// Descending score, lower item index first on ties.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Ranks every user's non-train items by score and keeps the top `k`.
pub fn rank_topk<S: Scalar>(scores: &[Vec<f64>], bundle: &DatasetBundle<S>, k: usize) -> Result<RankingResult> {
    if scores.len() != bundle.n_users() {
        return Err(Error::Shape(format!("{} score rows for {} users", scores.len(), bundle.n_users())));
    }
    let mut lists = Vec::with_capacity(scores.len());
    for (u, row) in scores.iter().enumerate() {
        if row.len() != bundle.n_items() {
            return Err(Error::Shape(format!("user {u}: {} scores for {} items", row.len(), bundle.n_items())));
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of user {u}")));
        }
        let mut cand: Vec<(usize, f64)> =
            row.iter().enumerate().filter(|(i, _)| !bundle.is_train_positive(u, *i)).map(|(i, &s)| (i, s)).collect();
        if k > cand.len() {
            return Err(Error::InvalidArgument(format!(
                "K = {k} exceeds the {} candidate items of user {u}",
                cand.len()
            )));
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k, rank_order);
            cand.truncate(k);
        }
        cand.sort_by(rank_order);
        lists.push(cand);
    }
    Ok(RankingResult { k, lists })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    /// Users with at least one held-out positive.
    pub users: usize,
}

/// Recall, precision and binary-gain NDCG at the list length, macro-averaged
/// over users that have held-out positives.
pub fn accuracy_metrics(result: &RankingResult, positives: &[Vec<usize>]) -> Accuracy {
    let k = result.k;
    let mut acc = Accuracy::default();
    for (u, list) in result.lists.iter().enumerate() {
        let pos = positives.get(u).map_or(&[][..], Vec::as_slice);
        if pos.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (rank, &(item, _)) in list.iter().enumerate() {
            if pos.contains(&item) {
                hits += 1;
                dcg += 1.0 / ((rank + 2) as f64).log2();
            }
        }
        let idcg: f64 = (0..k.min(pos.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        acc.recall += hits as f64 / pos.len() as f64;
        acc.precision += hits as f64 / k as f64;
        acc.ndcg += dcg / idcg;
        acc.users += 1;
    }
    if acc.users > 0 {
        let n = acc.users as f64;
        acc.recall /= n;
        acc.precision /= n;
        acc.ndcg /= n;
    }
    acc
}

/// Mean share of incomplete items per top-K list.
pub fn incomplete_share(result: &RankingResult, incomplete: &[bool]) -> f64 {
    if result.lists.is_empty() {
        return 0.0;
    }
    let total: f64 = result
        .lists
        .iter()
        .map(|l| l.iter().filter(|x| incomplete[x.0]).count() as f64 / result.k as f64)
        .sum();
    total / result.lists.len() as f64
}

/// `1 − |P_r − P_d|/P_d`; absent when the dataset has no incomplete item.
pub fn fairness_from_shares(p_r: f64, p_d: f64) -> Option<f64> {
    (p_d > 0.0).then(|| 1.0 - (p_r - p_d).abs() / p_d)
}

/// F@K of a ranking, with `P_d` the incomplete fraction of the catalogue.
pub fn fairness_f(result: &RankingResult, incomplete: &[bool], p_d: f64) -> Option<f64> {
    fairness_from_shares(incomplete_share(result, incomplete), p_d)
}

/// Harmonic mean of F@K (clamped to `[0, 1]`) and Precision@K.
pub fn fairness_f_fuse(f: f64, precision: f64) -> f64 {
    let f = f.clamp(0.0, 1.0);
    if f + precision == 0.0 {
        0.0
    } else {
        2.0 * f * precision / (f + precision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    /// Number of top-K lists each item appears in.
    pub per_item: Vec<usize>,
    pub complete: usize,
    pub incomplete: usize,
}

pub fn exposure_counts(result: &RankingResult, incomplete: &[bool]) -> Exposure {
    let mut per_item = vec![0usize; incomplete.len()];
    for list in &result.lists {
        for &(i, _) in list {
            per_item[i] += 1;
        }
    }
    let (mut complete, mut inc) = (0, 0);
    for (i, &c) in per_item.iter().enumerate() {
        if incomplete[i] {
            inc += c;
        } else {
            complete += c;
        }
    }
    Exposure { per_item, complete, incomplete: inc }
}

/// Incomplete items whose exposure fell below a reference run's.
pub fn suppressed_items(run: &Exposure, reference: &Exposure, incomplete: &[bool]) -> usize {
    (0..incomplete.len())
        .filter(|&i| incomplete[i] && run.per_item[i] < reference.per_item[i])
        .count()
}

/// Two-sided 5% critical values of Student's t for df = 1..=30.
const T_CRIT_5: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

pub fn t_critical_5(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T_CRIT_5[df - 1],
        _ => 1.960,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// `None` when the differences have zero variance but a nonzero mean.
    pub significant: Option<bool>,
}

/// Paired t-test of `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!("paired samples need equal lengths ≥ 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, df, significant: Some(false) }
        } else {
            TTest { t: f64::INFINITY.copysign(mean), df, significant: None }
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    Ok(TTest { t, df, significant: Some(t.abs() > t_critical_5(df)) })
}

/// Metrics at one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    /// Raw F@K, possibly negative; absent without incomplete items.
    pub f: Option<f64>,
    pub f_fuse: Option<f64>,
    /// Mean incomplete share of the lists.
    pub p_r: f64,
}

/// Everything reported for one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub users_evaluated: usize,
    pub p_d: f64,
    pub cutoffs: Vec<CutoffMetrics>,
    pub exposure_complete: usize,
    pub exposure_incomplete: usize,
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
}

impl MetricReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }
}

/// Evaluates final scores at each cutoff against `positives`.
pub fn evaluate_cutoffs<S: Scalar>(
    scores: &[Vec<f64>],
    bundle: &DatasetBundle<S>,
    positives: &[Vec<usize>],
    ks: &[usize],
) -> Result<(Vec<CutoffMetrics>, RankingResult)> {
    let kmax = ks.iter().copied().max().ok_or_else(|| Error::InvalidArgument("no cutoff given".into()))?;
    let full = rank_topk(scores, bundle, kmax)?;
    let incomplete: Vec<bool> = (0..bundle.n_items()).map(|i| bundle.indicator().is_incomplete(i)).collect();
    let p_d = bundle.indicator().incomplete_fraction();
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let r = full.truncated(k);
        let acc = accuracy_metrics(&r, positives);
        let f = fairness_f(&r, &incomplete, p_d);
        out.push(CutoffMetrics {
            k,
            recall: acc.recall,
            precision: acc.precision,
            ndcg: acc.ndcg,
            f,
            f_fuse: f.map(|f| fairness_f_fuse(f, acc.precision)),
            p_r: incomplete_share(&r, &incomplete),
        });
    }
    Ok((out, full))
}
