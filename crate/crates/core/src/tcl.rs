//! Device-level population of cooling TCLs: affine thermal dynamics,
//! dead-band thermostat switching, probabilistic response to a broadcast
//! command, and per-node power aggregation.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::NodalInjection;
use crate::stream::StreamKey;

#[derive(Debug, Error)]
pub enum TclError {
    #[error("population count must be at least 1")]
    EmptyPopulation,
    #[error("node weights must be nonnegative with a positive sum and length {expected}")]
    InvalidWeights { expected: usize },
    #[error("parameter range invalid: {0}")]
    InvalidRange(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Thermal and electrical parameters of one device.
///
/// `transfer_rate` is negative (cooling); the electrical consumption when ON
/// is stored positive as `|transfer_rate| / cop` so that switching devices ON
/// always depresses network voltages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TclParams {
    pub ambient_temp: f64,
    pub thermal_resistance: f64,
    pub thermal_capacitance: f64,
    pub transfer_rate: f64,
    pub cop: f64,
    pub setpoint: f64,
    pub deadband_width: f64,
    pub reactive_ratio: f64,
    pub node: usize,
}

impl TclParams {
    /// Discrete-time thermal factor `exp(-dt / (r_th c_th))`; dt in hours
    /// because `r_th c_th` carries hours.
    pub fn thermal_factor(&self, dt_s: f64) -> f64 {
        (-(dt_s / 3600.0) / (self.thermal_resistance * self.thermal_capacitance)).exp()
    }
    pub fn rated_real_kw(&self) -> f64 {
        self.transfer_rate.abs() / self.cop
    }
    pub fn rated_reactive_kvar(&self) -> f64 {
        self.reactive_ratio * self.rated_real_kw()
    }
    pub fn temp_lo(&self) -> f64 {
        self.setpoint - 0.5 * self.deadband_width
    }
    pub fn temp_hi(&self) -> f64 {
        self.setpoint + 0.5 * self.deadband_width
    }
    /// Long-run ON fraction implied by the thermal balance.
    pub fn duty_cycle_estimate(&self) -> f64 {
        let denom = self.thermal_resistance * self.transfer_rate.abs();
        ((self.ambient_temp - self.setpoint) / denom).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TclState {
    pub temperature: f64,
    pub mode: bool,
}

/// Uniform sampling intervals for each parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRanges {
    pub ambient_temp: (f64, f64),
    pub thermal_capacitance: (f64, f64),
    pub thermal_resistance: (f64, f64),
    pub transfer_rate: (f64, f64),
    pub cop: (f64, f64),
    pub setpoint: (f64, f64),
    pub deadband_width: (f64, f64),
    pub power_factor: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            ambient_temp: (29.0, 31.0),
            thermal_capacitance: (1.5, 2.5),
            thermal_resistance: (1.2, 2.5),
            transfer_rate: (-18.0, -14.0),
            cop: (2.3, 2.7),
            setpoint: (20.0, 25.0),
            deadband_width: (1.5, 2.0),
            power_factor: (0.95, 0.99),
        }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<(), TclError> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(TclError::InvalidRange(format!("{name}: [{lo}, {hi}]")))
            }
        };
        ordered("ambient_temp", self.ambient_temp)?;
        ordered("thermal_capacitance", self.thermal_capacitance)?;
        ordered("thermal_resistance", self.thermal_resistance)?;
        ordered("transfer_rate", self.transfer_rate)?;
        ordered("cop", self.cop)?;
        ordered("setpoint", self.setpoint)?;
        ordered("deadband_width", self.deadband_width)?;
        ordered("power_factor", self.power_factor)?;
        if self.transfer_rate.1 >= 0.0 {
            return Err(TclError::InvalidRange(
                "transfer_rate must be negative (cooling)".into(),
            ));
        }
        if self.cop.0 <= 0.0
            || self.thermal_resistance.0 <= 0.0
            || self.thermal_capacitance.0 <= 0.0
        {
            return Err(TclError::InvalidRange(
                "cop, r_th, c_th must be positive".into(),
            ));
        }
        if self.deadband_width.0 <= 0.0 {
            return Err(TclError::InvalidRange(
                "deadband_width must be positive".into(),
            ));
        }
        if self.power_factor.0 <= 0.0 || self.power_factor.1 >= 1.0 {
            return Err(TclError::InvalidRange(
                "power_factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Mean of each parameter, used where only population statistics are
    /// known (the aggregate fleet model).
    pub fn means(&self) -> TclParams {
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let phi = mid(self.power_factor);
        TclParams {
            ambient_temp: mid(self.ambient_temp),
            thermal_resistance: mid(self.thermal_resistance),
            thermal_capacitance: mid(self.thermal_capacitance),
            transfer_rate: mid(self.transfer_rate),
            cop: mid(self.cop),
            setpoint: mid(self.setpoint),
            deadband_width: mid(self.deadband_width),
            reactive_ratio: (phi.acos()).tan(),
            node: 0,
        }
    }
}

/// Per-node counters produced by one population step. `n_on`/`n_off` are the
/// counts after the step; the identity
/// `n_on(t+1) = n_on(t) + s_on - s_off + c_on - c_off` holds exactly.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub n_on: Vec<u64>,
    pub n_off: Vec<u64>,
    pub s_on: Vec<u64>,
    pub s_off: Vec<u64>,
    pub c_on: Vec<u64>,
    pub c_off: Vec<u64>,
    /// OFF devices that stayed in-band and therefore saw the command.
    pub eligible_on: Vec<u64>,
    /// ON devices that stayed in-band and therefore saw the command.
    pub eligible_off: Vec<u64>,
    pub aggregate_real_kw: f64,
}

/// The controllable fleet. Parameters are immutable after construction;
/// stepping mutates only temperatures and modes.
#[derive(Debug, Clone)]
pub struct TclPopulation {
    params: Vec<TclParams>,
    states: Vec<TclState>,
    dt_s: f64,
    node_count: usize,
    node_counts: Vec<u64>,
    avg_real_kw: Vec<f64>,
    avg_reactive_kvar: Vec<f64>,
    thermal_factors: Vec<f64>,
    rated_kw: Vec<f64>,
}

impl TclPopulation {
    pub fn new(
        params: Vec<TclParams>,
        states: Vec<TclState>,
        dt_s: f64,
        node_count: usize,
    ) -> Result<Self, TclError> {
        if params.is_empty() || params.len() != states.len() {
            return Err(TclError::EmptyPopulation);
        }
        let mut node_counts = vec![0u64; node_count];
        let mut sum_p = vec![0.0; node_count];
        let mut sum_q = vec![0.0; node_count];
        for p in &params {
            assert!(
                p.node >= 1 && p.node <= node_count,
                "device node out of range"
            );
            node_counts[p.node - 1] += 1;
            sum_p[p.node - 1] += p.rated_real_kw();
            sum_q[p.node - 1] += p.rated_reactive_kvar();
        }
        let avg_real_kw = sum_p
            .iter()
            .zip(&node_counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let avg_reactive_kvar = sum_q
            .iter()
            .zip(&node_counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let thermal_factors = params.iter().map(|p| p.thermal_factor(dt_s)).collect();
        let rated_kw = params.iter().map(|p| p.rated_real_kw()).collect();
        Ok(TclPopulation {
            params,
            states,
            dt_s,
            node_count,
            node_counts,
            avg_real_kw,
            avg_reactive_kvar,
            thermal_factors,
            rated_kw,
        })
    }

    /// Sample a fleet: parameters uniform in their ranges, initial
    /// temperatures uniform inside each dead-band, initial modes Bernoulli
    /// at each device's duty-cycle estimate. Devices are apportioned to
    /// nodes proportionally to `node_weights` (largest remainder, so counts
    /// are exact and reproducible).
    pub fn sample(
        count: usize,
        node_weights: &[f64],
        ranges: &ParamRanges,
        dt_s: f64,
        key: StreamKey,
    ) -> Result<Self, TclError> {
        if count == 0 {
            return Err(TclError::EmptyPopulation);
        }
        ranges.validate()?;
        let wsum: f64 = node_weights.iter().sum();
        if node_weights.is_empty() || node_weights.iter().any(|&w| !(w >= 0.0)) || wsum <= 0.0 {
            return Err(TclError::InvalidWeights {
                expected: node_weights.len(),
            });
        }
        let node_count = node_weights.len();

        // largest-remainder apportionment
        let quotas: Vec<f64> = node_weights
            .iter()
            .map(|w| w / wsum * count as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..node_count).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for k in 0..count - assigned {
            counts[order[k % node_count]] += 1;
        }

        let mut rng = key.rng();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        let mut params = Vec::with_capacity(count);
        let mut states = Vec::with_capacity(count);
        for (node_idx, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                let phi = draw(&mut rng, ranges.power_factor);
                let p = TclParams {
                    ambient_temp: draw(&mut rng, ranges.ambient_temp),
                    thermal_capacitance: draw(&mut rng, ranges.thermal_capacitance),
                    thermal_resistance: draw(&mut rng, ranges.thermal_resistance),
                    transfer_rate: draw(&mut rng, ranges.transfer_rate),
                    cop: draw(&mut rng, ranges.cop),
                    setpoint: draw(&mut rng, ranges.setpoint),
                    deadband_width: draw(&mut rng, ranges.deadband_width),
                    reactive_ratio: (phi.acos()).tan(),
                    node: node_idx + 1,
                };
                let temperature = if p.deadband_width > 0.0 {
                    rng.gen_range(p.temp_lo()..p.temp_hi())
                } else {
                    p.setpoint
                };
                let mode = rng.gen::<f64>() < p.duty_cycle_estimate();
                params.push(p);
                states.push(TclState { temperature, mode });
            }
        }
        TclPopulation::new(params, states, dt_s, node_count)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }
    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn params(&self) -> &[TclParams] {
        &self.params
    }
    pub fn states(&self) -> &[TclState] {
        &self.states
    }
    pub fn tcl_counts(&self) -> &[u64] {
        &self.node_counts
    }
    /// Mean ON-mode real power per node (zero where no devices live).
    pub fn avg_real_kw(&self) -> &[f64] {
        &self.avg_real_kw
    }
    pub fn avg_reactive_kvar(&self) -> &[f64] {
        &self.avg_reactive_kvar
    }
    pub fn rated_total_kw(&self) -> f64 {
        self.rated_kw.iter().sum()
    }
    pub fn aggregate_real_kw(&self) -> f64 {
        self.states
            .iter()
            .zip(&self.rated_kw)
            .map(|(s, p)| if s.mode { *p } else { 0.0 })
            .sum()
    }
    pub fn node_on_counts(&self) -> Vec<u64> {
        let mut on = vec![0u64; self.node_count];
        for (p, s) in self.params.iter().zip(&self.states) {
            if s.mode {
                on[p.node - 1] += 1;
            }
        }
        on
    }

    /// Temperatures after one thermal update under the current modes,
    /// without mutating anything.
    pub fn next_temperatures(&self) -> Vec<f64> {
        self.params
            .iter()
            .zip(&self.states)
            .zip(&self.thermal_factors)
            .map(|((p, s), &a)| next_temp(p, a, s.temperature, s.mode))
            .collect()
    }

    /// Advance one step under a broadcast command in [-1, 1]: thermal update
    /// with the previous mode, thermostat overrides at the dead-band edges,
    /// then probabilistic switching of in-band devices.
    pub fn step<R: Rng + ?Sized>(&mut self, command: f64, rng: &mut R) -> StepOutcome {
        assert!((-1.0..=1.0).contains(&command), "command outside [-1, 1]");
        let n = self.node_count;
        let mut out = StepOutcome {
            n_on: vec![0; n],
            n_off: vec![0; n],
            s_on: vec![0; n],
            s_off: vec![0; n],
            c_on: vec![0; n],
            c_off: vec![0; n],
            eligible_on: vec![0; n],
            eligible_off: vec![0; n],
            aggregate_real_kw: 0.0,
        };
        for i in 0..self.params.len() {
            let p = &self.params[i];
            let j = p.node - 1;
            let prev_mode = self.states[i].mode;
            let theta = next_temp(
                p,
                self.thermal_factors[i],
                self.states[i].temperature,
                prev_mode,
            );
            let mode = if theta >= p.temp_hi() {
                if !prev_mode {
                    out.s_on[j] += 1;
                }
                true
            } else if theta <= p.temp_lo() {
                if prev_mode {
                    out.s_off[j] += 1;
                }
                false
            } else if !prev_mode {
                out.eligible_on[j] += 1;
                if command > 0.0 && rng.gen::<f64>() <= command {
                    out.c_on[j] += 1;
                    true
                } else {
                    false
                }
            } else {
                out.eligible_off[j] += 1;
                if command < 0.0 && rng.gen::<f64>() <= -command {
                    out.c_off[j] += 1;
                    false
                } else {
                    true
                }
            };
            self.states[i] = TclState {
                temperature: theta,
                mode,
            };
            if mode {
                out.n_on[j] += 1;
                out.aggregate_real_kw += self.rated_kw[i];
            } else {
                out.n_off[j] += 1;
            }
        }
        out
    }

    /// Advance one step with directly assigned modes (the mode-control
    /// benchmark path). Thermostat overrides still apply; assignment counts
    /// land in the command counters.
    pub fn step_with_assignment(&mut self, assignment: &[bool]) -> StepOutcome {
        assert_eq!(assignment.len(), self.params.len());
        let n = self.node_count;
        let mut out = StepOutcome {
            n_on: vec![0; n],
            n_off: vec![0; n],
            s_on: vec![0; n],
            s_off: vec![0; n],
            c_on: vec![0; n],
            c_off: vec![0; n],
            eligible_on: vec![0; n],
            eligible_off: vec![0; n],
            aggregate_real_kw: 0.0,
        };
        for i in 0..self.params.len() {
            let p = &self.params[i];
            let j = p.node - 1;
            let prev_mode = self.states[i].mode;
            let theta = next_temp(
                p,
                self.thermal_factors[i],
                self.states[i].temperature,
                prev_mode,
            );
            let mode = if theta >= p.temp_hi() {
                if !prev_mode {
                    out.s_on[j] += 1;
                }
                true
            } else if theta <= p.temp_lo() {
                if prev_mode {
                    out.s_off[j] += 1;
                }
                false
            } else {
                let m = assignment[i];
                if m && !prev_mode {
                    out.c_on[j] += 1;
                } else if !m && prev_mode {
                    out.c_off[j] += 1;
                }
                m
            };
            self.states[i] = TclState {
                temperature: theta,
                mode,
            };
            if mode {
                out.n_on[j] += 1;
                out.aggregate_real_kw += self.rated_kw[i];
            } else {
                out.n_off[j] += 1;
            }
        }
        out
    }

    /// Exact per-node TCL consumption from device modes (kW / kvar). This is
    /// the ground truth the utility's mean-power approximation is audited
    /// against.
    pub fn nodal_power_kw(&self) -> NodalInjection {
        let mut real = vec![0.0; self.node_count];
        let mut reactive = vec![0.0; self.node_count];
        for (p, s) in self.params.iter().zip(&self.states) {
            if s.mode {
                real[p.node - 1] += p.rated_real_kw();
                reactive[p.node - 1] += p.rated_reactive_kvar();
            }
        }
        NodalInjection::new(real, reactive)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), TclError> {
        let snap = Snapshot {
            dt_s: self.dt_s,
            node_count: self.node_count,
            params: self.params.clone(),
            states: self.states.clone(),
        };
        std::fs::write(path, serde_json::to_string(&snap)?)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, TclError> {
        let snap: Snapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        TclPopulation::new(snap.params, snap.states, snap.dt_s, snap.node_count)
    }
}

fn next_temp(p: &TclParams, a: f64, theta: f64, mode: bool) -> f64 {
    let gain = p.ambient_temp + p.thermal_resistance * p.transfer_rate * (mode as u8 as f64);
    a * theta + (1.0 - a) * gain
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    dt_s: f64,
    node_count: usize,
    params: Vec<TclParams>,
    states: Vec<TclState>,
}
