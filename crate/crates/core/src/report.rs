//! Comparison table over finished run directories.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::pipeline::{read_summary, RunKind, Summary};

/// Mean and sample standard deviation; the deviation is `None` for a single
/// value.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, std))
}

/// `(baseline - dynamic) / baseline * 100`.
pub fn improvement_percent(baseline: f64, dynamic: f64) -> f64 {
    (baseline - dynamic) / baseline * 100.0
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn kind_name(kind: RunKind) -> &'static str {
    match kind {
        RunKind::Dynamic => "dynamic",
        RunKind::Baseline => "baseline",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub kind: RunKind,
    pub runs: usize,
    pub purity: Option<(f64, Option<f64>)>,
    pub test_mse: (f64, Option<f64>),
}

pub fn aggregate(summaries: &[Summary], kind: RunKind) -> Option<Aggregate> {
    let group: Vec<&Summary> = summaries.iter().filter(|s| s.kind == kind).collect();
    let purities: Vec<f64> = group.iter().filter_map(|s| s.clustering_purity).collect();
    let mses: Vec<f64> = group.iter().map(|s| s.test_mse).collect();
    Some(Aggregate {
        kind,
        runs: group.len(),
        purity: if purities.len() == group.len() {
            mean_std(&purities)
        } else {
            None
        },
        test_mse: mean_std(&mses)?,
    })
}

/// Per-run rows, per-kind mean/std rows and, when both kinds are present,
/// the improvement of the dynamic mean test MSE over the baseline mean.
pub fn render(runs: &[(PathBuf, Summary)]) -> String {
    let mut out = String::new();
    writeln!(out, "| run | kind | seed | k | purity | client purity | test MSE |").unwrap();
    writeln!(out, "|---|---|---|---|---|---|---|").unwrap();
    for (dir, s) in runs {
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.6} |",
            dir.display(),
            kind_name(s.kind),
            s.seed,
            s.final_k,
            cell(s.clustering_purity),
            cell(s.final_client_purity),
            s.test_mse
        )
        .unwrap();
    }
    let summaries: Vec<Summary> = runs.iter().map(|(_, s)| s.clone()).collect();
    let aggs: Vec<Aggregate> = [RunKind::Dynamic, RunKind::Baseline]
        .into_iter()
        .filter_map(|k| aggregate(&summaries, k))
        .filter(|a| a.runs > 0)
        .collect();
    writeln!(out).unwrap();
    writeln!(out, "| kind | runs | purity mean | purity std | test MSE mean | test MSE std |").unwrap();
    writeln!(out, "|---|---|---|---|---|---|").unwrap();
    for a in &aggs {
        writeln!(
            out,
            "| {} | {} | {} | {} | {:.6} | {} |",
            kind_name(a.kind),
            a.runs,
            cell(a.purity.map(|p| p.0)),
            cell(a.purity.and_then(|p| p.1)),
            a.test_mse.0,
            a.test_mse.1.map(|v| format!("{v:.6}")).unwrap_or_default()
        )
        .unwrap();
    }
    let find = |k| aggs.iter().find(|a| a.kind == k);
    if let (Some(d), Some(b)) = (find(RunKind::Dynamic), find(RunKind::Baseline)) {
        writeln!(
            out,
            "\nimprovement of dynamic over baseline (test MSE): {:.2}%",
            improvement_percent(b.test_mse.0, d.test_mse.0)
        )
        .unwrap();
    }
    out
}

pub fn report(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::structural("report needs at least one run directory"));
    }
    let runs = dirs
        .iter()
        .map(|d| Ok((d.clone(), read_summary(d)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(render(&runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), Some((2.0, None)));
        assert_eq!(mean_std(&[3.0, 3.0, 3.0]), Some((3.0, Some(0.0))));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn improvement_example() {
        assert!((improvement_percent(0.0123, 0.0088) - 28.455284552845526).abs() < 1e-9);
        assert_eq!(improvement_percent(2.0, 1.0), 50.0);
    }

    #[test]
    fn missing_summary_is_structural() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(&[dir.path().to_path_buf()]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }
}
