use super::iso::{IsoOutcome, IsoRow};
use super::sweep::SweepResult;
use crate::error::{Error, Result};

/// `series,axis,mean_accuracy,std_error,episodes`, one row per point.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("series,axis,mean_accuracy,std_error,episodes\n");
    for p in &result.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.series, p.axis, p.mean_accuracy, p.std_error, p.episodes
        ));
    }
    out
}

pub fn sweep_json(result: &SweepResult) -> Result<String> {
    // JSON has no infinity; the SNR axis may contain it.
    let mut value = serde_json::to_value(result).map_err(|e| Error::Validation(e.to_string()))?;
    if let Some(points) = value.get_mut("points").and_then(|p| p.as_array_mut()) {
        for (p, src) in points.iter_mut().zip(&result.points) {
            if !src.axis.is_finite() {
                p["axis"] = serde_json::Value::String(src.axis.to_string());
            }
        }
    }
    serde_json::to_string_pretty(&value).map_err(|e| Error::Validation(e.to_string()))
}

/// `m,n,variation,baseline,iso_r,accuracy`; unreachable rows carry
/// `unreached` and the best accuracy seen.
pub fn iso_table_csv(rows: &[IsoRow]) -> String {
    let mut out = String::from("m,n,variation,baseline,iso_r,accuracy\n");
    for row in rows {
        let (r, acc) = match row.outcome {
            IsoOutcome::Reached { r, accuracy } => (r.to_string(), accuracy),
            IsoOutcome::Unreached { best_accuracy, .. } => ("unreached".to_string(), best_accuracy),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.m, row.n, row.variation, row.baseline, r, acc
        ));
    }
    out
}
