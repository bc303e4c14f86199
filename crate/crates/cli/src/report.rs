use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::Result;
use log::info;

use modicf::metrics::{paired_ttest, CutoffMetrics};
use modicf::training::Variant;

use crate::commands::{read_manifest, usage_error, Manifest};
use crate::ReportArgs;

type Metric = (&'static str, fn(&CutoffMetrics) -> Option<f64>);

const METRICS: [Metric; 5] = [
    ("Recall", |c| Some(c.recall)),
    ("Precision", |c| Some(c.precision)),
    ("NDCG", |c| Some(c.ndcg)),
    ("F", |c| c.f),
    ("F_fuse", |c| c.f_fuse),
];

/// A named column and its per-manifest extractor.
struct Column {
    name: String,
    get: Box<dyn Fn(&Manifest) -> Option<f64>>,
}

fn columns(ks: &[usize]) -> Vec<Column> {
    let mut out = Vec::new();
    for &k in ks {
        for (name, f) in METRICS {
            out.push(Column {
                name: format!("{name}@{k}"),
                get: Box::new(move |m: &Manifest| m.metrics.at(k).and_then(f)),
            });
        }
    }
    out.push(Column { name: "MSE".into(), get: Box::new(|m: &Manifest| m.imputation_mse) });
    out
}

/// Mean over runs, absent if any run lacks the value.
fn mean(runs: &[&Manifest], get: &dyn Fn(&Manifest) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = runs.iter().map(|m| get(m)).collect();
    vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_cell(name: &str, v: Option<f64>) -> String {
    match v {
        // metrics are fractions internally and percentages in tables
        Some(x) if name != "MSE" => format!("{:.2}", 100.0 * x),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

pub fn run(a: ReportArgs) -> Result<()> {
    let baseline: Variant = a.baseline.parse().map_err(|e: modicf::Error| usage_error(e.to_string()))?;
    let manifests: Vec<Manifest> = a.manifests.iter().map(|p| read_manifest(p)).collect::<Result<_>>()?;
    let ks: Vec<usize> = manifests[0].metrics.cutoffs.iter().map(|c| c.k).collect();
    let cols = columns(&ks);

    let mut groups: BTreeMap<usize, (Variant, BTreeMap<u64, &Manifest>)> = BTreeMap::new();
    for m in &manifests {
        let order = Variant::ALL.iter().position(|&v| v == m.variant).unwrap_or(usize::MAX);
        let (_, runs) = groups.entry(order).or_insert_with(|| (m.variant, BTreeMap::new()));
        if runs.insert(m.seed, m).is_some() {
            return Err(usage_error(format!("two {} manifests for seed {}", m.variant, m.seed)));
        }
    }
    let base = groups.values().find(|(v, _)| *v == baseline).map(|(_, r)| r.clone());

    let mut md = String::new();
    let mut csv = String::from("variant,label,seeds");
    for c in &cols {
        let _ = write!(csv, ",{}", c.name);
    }
    csv.push('\n');
    let _ = writeln!(md, "| Method | Seeds | {} |", cols.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(" | "));
    let _ = writeln!(md, "|---|---|{}", "---|".repeat(cols.len()));
    let mut tests = String::new();
    let mut tests_csv = String::from("variant,baseline,metric,n,mean_diff,t,significant\n");
    for (variant, runs) in groups.values() {
        let list: Vec<&Manifest> = runs.values().copied().collect();
        let means: Vec<Option<f64>> = cols.iter().map(|c| mean(&list, &*c.get)).collect();
        let _ = write!(csv, "{},{},{}", variant.as_str(), variant.label(), list.len());
        for v in &means {
            let _ = write!(csv, ",{}", v.map_or(String::new(), |x| x.to_string()));
        }
        csv.push('\n');
        let cells: Vec<String> = cols.iter().zip(&means).map(|(c, &v)| fmt_cell(&c.name, v)).collect();
        let _ = writeln!(md, "| {} | {} | {} |", variant.label(), list.len(), cells.join(" | "));

        let Some(base) = &base else { continue };
        if *variant == baseline {
            continue;
        }
        let seeds: Vec<u64> = runs.keys().filter(|s| base.contains_key(s)).copied().collect();
        if seeds.len() < 2 {
            continue;
        }
        for c in &cols {
            let pa: Option<Vec<f64>> = seeds.iter().map(|s| (c.get)(base[s])).collect();
            let pb: Option<Vec<f64>> = seeds.iter().map(|s| (c.get)(runs[s])).collect();
            let (Some(pa), Some(pb)) = (pa, pb) else { continue };
            let t = paired_ttest(&pa, &pb)?;
            let diff = pa.iter().zip(&pb).map(|(x, y)| x - y).sum::<f64>() / pa.len() as f64;
            let sig = t.significant.map_or("undefined", |s| if s { "yes" } else { "no" });
            let _ = writeln!(
                tests_csv,
                "{},{},{},{},{diff},{},{sig}",
                variant.as_str(),
                baseline.as_str(),
                c.name,
                seeds.len(),
                t.t
            );
            let _ = writeln!(tests, "| {} | {} | {} | {diff:+.5} | {:.3} | {sig} |", variant.label(), c.name, seeds.len(), t.t);
        }
    }
    if !tests.is_empty() {
        let _ = writeln!(md, "\nPaired t-test against {} (difference = baseline − variant, two-sided 5%):\n", baseline.label());
        md.push_str("| Method | Metric | n | Mean diff | t | Significant |\n|---|---|---|---|---|---|\n");
        md.push_str(&tests);
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.md"), md)?;
    fs::write(a.out.join("report.csv"), csv)?;
    fs::write(a.out.join("ttest.csv"), tests_csv)?;
    info!("aggregated {} manifests into {}", manifests.len(), a.out.display());
    Ok(())
}
