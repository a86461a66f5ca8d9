//! Aggregator-side logic: an aggregate (mode x temperature-bin) Markov model
//! of the fleet used to forecast thermostat switch fractions and to pick the
//! broadcast command that best tracks the reference inside the utility's
//! constraint set.
//!
//! The aggregator sees population statistics only (parameter means and total
//! rated power), never individual devices.

pub mod signal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tcl::TclParams;

#[derive(Debug, Error)]
pub enum AggError {
    #[error("bin count must be an even integer >= 4, got {0}")]
    InvalidBinCount(usize),
    #[error("constraint bounds invalid: [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("reference signal io: {0}")]
    SignalIo(#[from] std::io::Error),
    #[error("reference signal parse: {0}")]
    SignalParse(String),
    #[error("reference signal does not cover the requested horizon")]
    SignalCoverage,
}

/// Closed interval of admissible commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    lower: f64,
    upper: f64,
}

impl ConstraintSet {
    pub fn new(lower: f64, upper: f64) -> Result<Self, AggError> {
        if !(-1.0..=1.0).contains(&lower) || !(-1.0..=1.0).contains(&upper) || lower > upper {
            return Err(AggError::InvalidBounds { lower, upper });
        }
        Ok(ConstraintSet { lower, upper })
    }
    pub fn full() -> Self {
        ConstraintSet {
            lower: -1.0,
            upper: 1.0,
        }
    }
    pub fn degenerate(u: f64) -> Self {
        ConstraintSet { lower: u, upper: u }
    }
    pub fn lower(&self) -> f64 {
        self.lower
    }
    pub fn upper(&self) -> f64 {
        self.upper
    }
    pub fn contains(&self, u: f64) -> bool {
        (self.lower..=self.upper).contains(&u)
    }
}

/// Aggregate fleet model: a probability mass vector over
/// `2 * bin_count` (mode, temperature-bin) cells with a row-stochastic
/// command-dependent transition. OFF cells occupy indices `0..bin_count`
/// (temperature ascending), ON cells `bin_count..2*bin_count` (same order).
#[derive(Debug, Clone)]
pub struct BinModel {
    bin_count: usize,
    state: Vec<f64>,
    // sparse base-transition rows (thermostat drift at u = 0)
    base_rows: Vec<Vec<(usize, f64)>>,
    // per OFF bin, fraction crossing into ON in one base step; mirrored for ON
    cross_on: Vec<f64>,
    cross_off: Vec<f64>,
    rated_power_total_kw: f64,
}

/// Build the aggregate model from population parameter means. OFF mass
/// drifts toward the hot edge at the mean warming rate, ON mass toward the
/// cold edge at the mean cooling rate; mass crossing an edge switches
/// column. The state starts at the stationary distribution of the base
/// transition.
pub fn build_bin_model(
    mean_params: &TclParams,
    rated_power_total_kw: f64,
    dt_s: f64,
    bin_count: usize,
) -> Result<BinModel, AggError> {
    if bin_count < 4 || bin_count % 2 != 0 {
        return Err(AggError::InvalidBinCount(bin_count));
    }
    let b = bin_count;
    let a = mean_params.thermal_factor(dt_s);
    let gamma = mean_params.deadband_width;
    // per-step drift at the setpoint, in units of dead-band widths
    let warm = (1.0 - a) * (mean_params.ambient_temp - mean_params.setpoint) / gamma;
    let cool = (1.0 - a)
        * (mean_params.ambient_temp + mean_params.thermal_resistance * mean_params.transfer_rate
            - mean_params.setpoint)
        / gamma;
    let shift_off = (warm.max(0.0) * b as f64).min(b as f64); // bins per step, upward
    let shift_on = ((-cool).max(0.0) * b as f64).min(b as f64); // bins per step, downward

    let mut base_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * b);
    let mut cross_on = vec![0.0; b];
    let mut cross_off = vec![0.0; b];
    // OFF rows: shift up, overflow lands in the hottest ON bin
    let k_off = shift_off.floor() as usize;
    let f_off = shift_off - shift_off.floor();
    for i in 0..b {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2);
        let mut cross = 0.0;
        for (offset, mass) in [(k_off, 1.0 - f_off), (k_off + 1, f_off)] {
            if mass == 0.0 {
                continue;
            }
            let target = i + offset;
            if target >= b {
                cross += mass;
            } else {
                row.push((target, mass));
            }
        }
        if cross > 0.0 {
            row.push((2 * b - 1, cross)); // hottest ON bin
            cross_on[i] = cross;
        }
        base_rows.push(row);
    }
    // ON rows: shift down, underflow lands in the coldest OFF bin
    let k_on = shift_on.floor() as usize;
    let f_on = shift_on - shift_on.floor();
    for i in 0..b {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2);
        let mut cross = 0.0;
        for (offset, mass) in [(k_on, 1.0 - f_on), (k_on + 1, f_on)] {
            if mass == 0.0 {
                continue;
            }
            if offset > i {
                cross += mass;
            } else {
                row.push((b + i - offset, mass));
            }
        }
        if cross > 0.0 {
            row.push((0, cross)); // coldest OFF bin
            cross_off[i] = cross;
        }
        base_rows.push(row);
    }

    let mut model = BinModel {
        bin_count: b,
        state: vec![0.0; 2 * b],
        base_rows,
        cross_on,
        cross_off,
        rated_power_total_kw,
    };
    model.state = model.stationary_state();
    Ok(model)
}

impl BinModel {
    pub fn bin_count(&self) -> usize {
        self.bin_count
    }
    pub fn state(&self) -> &[f64] {
        &self.state
    }
    pub fn set_state(&mut self, state: Vec<f64>) {
        assert_eq!(state.len(), 2 * self.bin_count);
        self.state = state;
    }
    pub fn rated_power_total_kw(&self) -> f64 {
        self.rated_power_total_kw
    }
    pub fn on_mass(&self) -> f64 {
        self.state[self.bin_count..].iter().sum()
    }
    pub fn off_mass(&self) -> f64 {
        self.state[..self.bin_count].iter().sum()
    }

    fn apply_base(&self, state: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; state.len()];
        for (i, row) in self.base_rows.iter().enumerate() {
            let m = state[i];
            if m == 0.0 {
                continue;
            }
            for &(j, w) in row {
                next[j] += m * w;
            }
        }
        next
    }

    fn apply_command(&self, state: &mut [f64], u: f64) {
        let b = self.bin_count;
        if u > 0.0 {
            for i in 0..b {
                let moved = u * state[i];
                state[i] -= moved;
                state[b + i] += moved;
            }
        } else if u < 0.0 {
            for i in 0..b {
                let moved = -u * state[b + i];
                state[b + i] -= moved;
                state[i] += moved;
            }
        }
    }

    /// Advance the model one step under command `u`.
    pub fn step(&mut self, u: f64) {
        let mut next = self.apply_base(&self.state);
        self.apply_command(&mut next, u);
        self.state = next;
    }

    /// One-step expected fleet power under command `u`, without mutating.
    pub fn expected_aggregate_power_kw(&self, u: f64) -> f64 {
        assert!((-1.0..=1.0).contains(&u));
        let mut next = self.apply_base(&self.state);
        self.apply_command(&mut next, u);
        let on: f64 = next[self.bin_count..].iter().sum();
        self.rated_power_total_kw * on
    }

    /// One-step-ahead thermostat switch fractions: mass crossing out of its
    /// column in the next base step, normalized by the column mass. Returns
    /// (0, 0) components where the column is (numerically) empty. The same
    /// scalar pair applies to every node.
    pub fn estimate_w_fractions(&self) -> (f64, f64) {
        let b = self.bin_count;
        let off_mass: f64 = self.state[..b].iter().sum();
        let on_mass: f64 = self.state[b..].iter().sum();
        let w_on = if off_mass < 1e-12 {
            0.0
        } else {
            let flux: f64 = (0..b).map(|i| self.state[i] * self.cross_on[i]).sum();
            (flux / off_mass).clamp(0.0, 1.0)
        };
        let w_off = if on_mass < 1e-12 {
            0.0
        } else {
            let flux: f64 = (0..b).map(|i| self.state[b + i] * self.cross_off[i]).sum();
            (flux / on_mass).clamp(0.0, 1.0)
        };
        (w_on, w_off)
    }

    /// Invariant distribution of the base transition: solves
    /// `(T' - I) x = 0` with the normalization row appended, by Gaussian
    /// elimination. Falls back to long-run averaging if the chain is
    /// reducible enough to defeat pivoting.
    pub fn stationary_state(&self) -> Vec<f64> {
        let n = 2 * self.bin_count;
        // dense A = T' - I, last row replaced by the normalization
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in self.base_rows.iter().enumerate() {
            for &(j, w) in row {
                a[j][i] += w;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] -= 1.0;
        }
        let mut rhs = vec![0.0; n];
        a[n - 1] = vec![1.0; n];
        rhs[n - 1] = 1.0;
        if let Some(x) = solve_dense(&mut a, &mut rhs) {
            let image = self.apply_base(&x);
            let err: f64 = x.iter().zip(&image).map(|(p, q)| (p - q).abs()).sum();
            if err < 1e-9 && x.iter().all(|&v| v >= -1e-12) {
                let total: f64 = x.iter().sum();
                return x.into_iter().map(|v| (v / total).max(0.0)).collect();
            }
        }
        // fallback: Cesaro-averaged power iteration
        let mut x = vec![1.0 / n as f64; n];
        let mut acc = vec![0.0; n];
        for _ in 0..200_000 {
            x = self.apply_base(&x);
            for (s, v) in acc.iter_mut().zip(&x) {
                *s += v;
            }
        }
        let total: f64 = acc.iter().sum();
        acc.into_iter().map(|v| v / total).collect()
    }

    /// Dense row-stochastic transition matrix for command `u`; diagnostic
    /// surface for conservation checks.
    pub fn transition_matrix(&self, u: f64) -> Vec<Vec<f64>> {
        let n = 2 * self.bin_count;
        let b = self.bin_count;
        let mut mat = vec![vec![0.0; n]; n];
        for (i, row) in self.base_rows.iter().enumerate() {
            for &(j, w) in row {
                // command redistribution applied after the base move
                if u > 0.0 && j < b {
                    mat[i][j] += w * (1.0 - u);
                    mat[i][b + j] += w * u;
                } else if u < 0.0 && j >= b {
                    mat[i][j] += w * (1.0 + u);
                    mat[i][j - b] += w * (-u);
                } else {
                    mat[i][j] += w;
                }
            }
        }
        mat
    }
}

/// Gaussian elimination with partial pivoting; `None` on a near-singular
/// pivot.
fn solve_dense(a: &mut [Vec<f64>], rhs: &mut [f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut v = rhs[row];
        for c in row + 1..n {
            v -= a[row][c] * x[c];
        }
        x[row] = v / a[row][row];
    }
    Some(x)
}

/// Grid search for the command whose one-step expected power best matches
/// the reference; ties resolve toward the smallest |u| (least actuation).
pub fn choose_command(
    model: &BinModel,
    p_ref_kw: f64,
    bounds: &ConstraintSet,
    grid_step: f64,
) -> f64 {
    assert!(grid_step > 0.0, "grid step must be positive");
    let mut best_u = bounds.lower();
    let mut best_err = f64::INFINITY;
    let mut consider = |u: f64| {
        let err = (model.expected_aggregate_power_kw(u) - p_ref_kw).abs();
        if err < best_err || (err == best_err && u.abs() < best_u.abs()) {
            best_err = err;
            best_u = u;
        }
    };
    let mut k = 0u64;
    loop {
        let u = bounds.lower() + k as f64 * grid_step;
        if u >= bounds.upper() {
            break;
        }
        consider(u);
        k += 1;
    }
    consider(bounds.upper());
    best_u
}
