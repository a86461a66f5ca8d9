//! Reference-signal sources: a two-column CSV loader with zero-order-hold
//! resampling, and a seeded synthetic generator shaped like a fast
//! regulation signal (smooth, zero-mean, bounded to [-1, 1]).

use std::path::Path;

use rand::Rng;

use crate::stream::StreamKey;

use super::AggError;

/// Load `(time_s, value)` rows from a two-column CSV (header optional).
pub fn load_reference_csv(path: &Path) -> Result<Vec<(f64, f64)>, AggError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AggError::SignalParse(e.to_string()))?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| AggError::SignalParse(e.to_string()))?;
        if record.len() < 2 {
            return Err(AggError::SignalParse(format!(
                "row {idx}: expected 2 columns"
            )));
        }
        let t: f64 = match record[0].parse() {
            Ok(v) => v,
            // tolerate one header row
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(AggError::SignalParse(format!("row {idx}: {e}"))),
        };
        let v: f64 = record[1]
            .parse()
            .map_err(|e| AggError::SignalParse(format!("row {idx}: {e}")))?;
        rows.push((t, v));
    }
    if rows.is_empty() {
        return Err(AggError::SignalParse(
            "reference file has no data rows".into(),
        ));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(rows)
}

/// Zero-order-hold resample onto `horizon` steps of `dt_s` starting at the
/// first sample time. Fails if the samples do not cover the horizon.
pub fn resample_zoh(
    samples: &[(f64, f64)],
    dt_s: f64,
    horizon: usize,
) -> Result<Vec<f64>, AggError> {
    if samples.is_empty() {
        return Err(AggError::SignalCoverage);
    }
    let t0 = samples[0].0;
    let t_end = samples[samples.len() - 1].0;
    let needed = t0 + (horizon.saturating_sub(1)) as f64 * dt_s;
    if needed > t_end + 1e-9 {
        return Err(AggError::SignalCoverage);
    }
    let mut out = Vec::with_capacity(horizon);
    let mut idx = 0;
    for k in 0..horizon {
        let t = t0 + k as f64 * dt_s;
        while idx + 1 < samples.len() && samples[idx + 1].0 <= t + 1e-9 {
            idx += 1;
        }
        out.push(samples[idx].1);
    }
    Ok(out)
}

/// Seeded synthetic regulation-style signal: a few sinusoids with random
/// periods and phases plus a slow random walk, normalized into [-1, 1].
pub fn synthesize_reference(key: StreamKey, horizon: usize, dt_s: f64) -> Vec<f64> {
    let mut rng = key.rng();
    let comps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let period_s = rng.gen_range(300.0..2400.0);
            let amp = rng.gen_range(0.3..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (period_s, amp, phase)
        })
        .collect();
    let mut walk = 0.0;
    let mut raw = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let t = k as f64 * dt_s;
        let mut v = 0.0;
        for &(period, amp, phase) in &comps {
            v += amp * (std::f64::consts::TAU * t / period + phase).sin();
        }
        walk = 0.95 * walk + 0.05 * rng.gen_range(-1.0..1.0);
        raw.push(v + 0.5 * walk);
    }
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    raw.iter().map(|v| v / peak).collect()
}
