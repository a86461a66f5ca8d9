//! Result persistence: JSON-lines step records, CSV summaries, and tidy
//! plot/curve CSVs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::utility::CurvePoint;

use super::{HarnessError, StepRecord};

pub fn write_results_jsonl(path: &Path, records: &[StepRecord]) -> Result<(), HarnessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

// wall time stays on stdout: persisted files must be byte-identical across
// reruns of the same config and seed
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub controller: String,
    pub seeds: usize,
    pub steps: usize,
    pub rmse_kw: f64,
    pub safety_probability: f64,
    pub violation_count: u64,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy per-step trace for external plotting: reference vs aggregate power
/// and the minimum-voltage track.
pub fn write_plot_csv(path: &Path, records: &[StepRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "time_h",
        "p_ref_kw",
        "p_agg_kw",
        "min_voltage",
        "safe",
        "u",
        "lower",
        "upper",
    ])?;
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.t.to_string(),
            r.time_h.to_string(),
            r.p_ref_kw.to_string(),
            r.p_agg_kw.to_string(),
            opt(r.min_voltage),
            (r.safe as u8).to_string(),
            opt(r.u),
            opt(r.lower),
            opt(r.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["u", "nu_hat", "stderr", "n_s"])?;
    for p in points {
        w.write_record([
            p.u.to_string(),
            p.nu_hat.to_string(),
            p.std_err.to_string(),
            p.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
