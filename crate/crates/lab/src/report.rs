//! Aggregation of run records into tables and summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{io_err, LabError, Result};
use crate::pipeline;
use crate::record::RunRecord;

/// One aggregate line: a variant at a budget over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub rho: f64,
    pub seeds: usize,
    pub incomplete: usize,
    pub mean_accuracy: f64,
    pub stddev_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub target_params: usize,
    pub prompt_params: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The config with the sweep axes (variant, rho, seeds) blanked out.
fn shared_part(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { variant: Variant::Full, rho: 0.5, seeds: Vec::new(), ..cfg.clone() }
}

/// Refuses records whose configs differ anywhere but the sweep axes.
pub fn check_compatible(records: &[RunRecord]) -> Result<()> {
    let first = records.first().ok_or_else(|| LabError::Aggregate("no records".into()))?;
    let reference = shared_part(&first.config);
    for r in &records[1..] {
        if shared_part(&r.config) != reference {
            let a = toml::to_string(&reference).unwrap_or_default();
            let b = toml::to_string(&shared_part(&r.config)).unwrap_or_default();
            let diff: Vec<String> = a
                .lines()
                .zip(b.lines())
                .filter(|(x, y)| x != y)
                .map(|(x, y)| format!("`{x}` vs `{y}`"))
                .take(3)
                .collect();
            return Err(LabError::Aggregate(format!(
                "record {} (seed {}) was run with a different config: {}",
                r.file_name(),
                r.seed,
                if diff.is_empty() { "structure differs".to_string() } else { diff.join(", ") }
            )));
        }
    }
    Ok(())
}

/// Mean and stddev per (rho, variant), rows ordered by rho then variant.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    check_compatible(records)?;
    if !records.iter().any(|r| r.complete) {
        return Err(LabError::Aggregate("no complete record to aggregate".into()));
    }
    let mut groups: BTreeMap<(u64, Variant), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.config.rho.to_bits(), r.config.variant)).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((rho_bits, variant), runs)| {
            let accs: Vec<f64> = runs.iter().filter(|r| r.complete).filter_map(|r| r.headline_accuracy()).collect();
            let (mean, std) = mean_std(&accs);
            let params = runs[0].params;
            SummaryRow {
                variant,
                rho: f64::from_bits(rho_bits),
                seeds: accs.len(),
                incomplete: runs.len() - accs.len(),
                mean_accuracy: mean,
                stddev_accuracy: std,
                min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
                max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                target_params: params.target_params,
                prompt_params: params.prompt_params,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.variant.cmp(&b.variant)));
    Ok(rows)
}

/// Runs `variants` at every budget in `rhos` and aggregates.
pub fn sweep_budget(cfg: &ExperimentConfig, rhos: &[f64], variants: &[Variant]) -> Result<(Vec<RunRecord>, Vec<SummaryRow>)> {
    if rhos.is_empty() {
        return Err(LabError::Config("no budgets to sweep".into()));
    }
    if let Some(r) = rhos.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(LabError::Config(format!("budget {r} outside (0, 1)")));
    }
    if rhos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::Config("budgets must be strictly ascending".into()));
    }
    let records = pipeline::run_grid(cfg, rhos, variants)?;
    let rows = aggregate(&records)?;
    Ok((records, rows))
}

pub fn table_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "rho",
        "seeds",
        "incomplete",
        "mean_accuracy",
        "stddev_accuracy",
        "min_accuracy",
        "max_accuracy",
        "target_params",
        "prompt_params",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.rho.to_string(),
            r.seeds.to_string(),
            r.incomplete.to_string(),
            r.mean_accuracy.to_string(),
            r.stddev_accuracy.to_string(),
            r.min_accuracy.to_string(),
            r.max_accuracy.to_string(),
            r.target_params.to_string(),
            r.prompt_params.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Aggregate(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Variant orderings per budget, with seed counts and parameter counts.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let mut by_rho: BTreeMap<u64, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_rho.entry(r.rho.to_bits()).or_default().push(r);
    }
    for (bits, mut group) in by_rho {
        group.sort_by(|a, b| b.mean_accuracy.total_cmp(&a.mean_accuracy));
        let _ = writeln!(out, "rho = {}", f64::from_bits(bits));
        let order: Vec<String> = group.iter().map(|r| format!("{} {:.2}", r.variant, 100.0 * r.mean_accuracy)).collect();
        let _ = writeln!(out, "  ordering: {}", order.join(" > "));
        for r in &group {
            let _ = writeln!(
                out,
                "  {:<24} {:6.2} +/- {:5.2}  seeds {:>3}{}  params target {} prompt {}",
                r.variant.name(),
                100.0 * r.mean_accuracy,
                100.0 * r.stddev_accuracy,
                r.seeds,
                if r.incomplete > 0 { format!(" ({} incomplete)", r.incomplete) } else { String::new() },
                r.target_params,
                r.prompt_params
            );
        }
    }
    out
}

/// Paths written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub records: Vec<PathBuf>,
    pub table: PathBuf,
    pub summary: PathBuf,
}

/// Writes `records/*.json`, `summary.csv` and `summary.txt` under `dir`.
pub fn write_report(records: &[RunRecord], dir: &Path) -> Result<ReportFiles> {
    let rows = aggregate(records)?;
    let record_dir = dir.join("records");
    std::fs::create_dir_all(&record_dir).map_err(io_err(&record_dir))?;
    let mut paths = Vec::with_capacity(records.len());
    for r in records {
        let p = record_dir.join(r.file_name());
        r.save(&p)?;
        paths.push(p);
    }
    let table = dir.join("summary.csv");
    std::fs::write(&table, table_csv(&rows)?).map_err(io_err(&table))?;
    let summary = dir.join("summary.txt");
    std::fs::write(&summary, summary_text(&rows)).map_err(io_err(&summary))?;
    Ok(ReportFiles { records: paths, table, summary })
}

/// Every `*.json` record in `dir` (or in `dir/records`), sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let nested = dir.join("records");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| RunRecord::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_stddev() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.2909944487358056).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn sweep_rejects_unsorted_budgets() {
        let cfg = ExperimentConfig::default();
        assert!(sweep_budget(&cfg, &[0.05, 0.01], &[Variant::SourceOnly]).is_err());
        assert!(sweep_budget(&cfg, &[0.0, 0.1], &[Variant::SourceOnly]).is_err());
    }
}
