//! Report files: `report.json`, `table.txt`, `ctv_curve.csv`.
//!
//! Nothing time-dependent is written, so rerunning an unchanged config
//! reproduces every file byte for byte.

use std::path::Path;

use super::{Ablation, AugmentFlags, PipelineError};
use crate::evaluate::EvalReport;

/// Short method label for a flag set, e.g. `+rotation+smote`.
pub fn method_name(flags: AugmentFlags) -> String {
    let mut parts = Vec::new();
    if flags.rotation {
        parts.push("+rotation");
    }
    if flags.gan_ingest {
        parts.push("+gan");
    }
    if flags.smote {
        parts.push("+smote");
    }
    if parts.is_empty() {
        "baseline (no augmentation)".to_string()
    } else {
        parts.concat()
    }
}

fn table(rows: &[(&str, &EvalReport)], baseline: Option<f64>) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!(
        "{:<width$}  {:>12}  {:>14}  {:>7}  {:>6}\n",
        "Method", "Accuracy (%)", "Delta vs base", "CTV (%)", "Seed"
    );
    for (name, r) in rows {
        let acc = 100.0 * r.mean_accuracy;
        let delta = match baseline {
            Some(b) => format!("{:+.2}", acc - 100.0 * b),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<width$}  {:>12.2}  {:>14}  {:>7}  {:>6}\n",
            name, acc, delta, r.best_ctv, r.master_seed
        ));
    }
    out
}

/// Aligned ablation table; deltas are against the baseline rung.
pub fn ablation_table(ab: &Ablation) -> String {
    let rows: Vec<(&str, &EvalReport)> = ab.rungs.iter().map(|(n, r)| (*n, r)).collect();
    let mut out = table(&rows, ab.baseline().map(|b| b.mean_accuracy));
    for (name, reason) in &ab.skipped {
        out.push_str(&format!("skipped {name}: {reason}\n"));
    }
    out
}

pub fn ctv_curve_csv(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("method,ctv_percent,mean_retained_components,mean_accuracy,std_accuracy\n");
    for (name, r) in rows {
        for p in &r.ctv_curve {
            out.push_str(&format!(
                "{name},{},{},{},{}\n",
                p.ctv_percent, p.mean_retained_components, p.mean_accuracy, p.std_accuracy
            ));
        }
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| PipelineError::Output { path, source })
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_experiment(dir: &Path, report: &EvalReport, flags: AugmentFlags) -> Result<(), PipelineError> {
    ensure_dir(dir)?;
    let name = method_name(flags);
    write(dir, "report.json", &(report.to_json() + "\n"))?;
    write(dir, "table.txt", &table(&[(&name, report)], None))?;
    write(dir, "ctv_curve.csv", &ctv_curve_csv(&[(&name, report)]))
}

pub fn write_ablation(dir: &Path, ab: &Ablation) -> Result<(), PipelineError> {
    ensure_dir(dir)?;
    let rungs: Vec<serde_json::Value> = ab
        .rungs
        .iter()
        .map(|(n, r)| serde_json::json!({ "method": n, "report": r }))
        .collect();
    let skipped: Vec<serde_json::Value> = ab
        .skipped
        .iter()
        .map(|(n, why)| serde_json::json!({ "method": n, "reason": why }))
        .collect();
    let json = serde_json::json!({ "rungs": rungs, "skipped": skipped });
    write(dir, "report.json", &(serde_json::to_string_pretty(&json).expect("json") + "\n"))?;
    write(dir, "table.txt", &ablation_table(ab))?;
    let rows: Vec<(&str, &EvalReport)> = ab.rungs.iter().map(|(n, r)| (*n, r)).collect();
    write(dir, "ctv_curve.csv", &ctv_curve_csv(&rows))
}
