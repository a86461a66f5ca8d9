//! Mode-assignment benchmark controller: chooses every device's next mode
//! directly, minimizing the tracking error subject to one-step dead-band
//! containment and a linearized voltage check at worst-case loads.
//!
//! Exact branch-and-bound for small device counts, greedy by temperature
//! margin otherwise.

use crate::grid::{solve_lindistflow, FeederModel, NodalInjection};
use crate::tcl::TclPopulation;

pub struct OpfInputs<'a> {
    pub feeder: &'a FeederModel,
    pub v_floor: f64,
    /// Worst-case uncontrollable loads (truncation upper bounds), per unit.
    pub worst_loads_pu: NodalInjection,
}

pub struct OpfAssignment {
    pub modes: Vec<bool>,
    /// Raised when even the forced/all-OFF configuration fails the check.
    pub voltage_infeasible: bool,
    pub p_agg_planned_kw: f64,
}

/// Devices the optimizer may still choose, after dead-band forcing.
struct FreeDevice {
    idx: usize,
    rated_kw: f64,
    rated_kvar: f64,
    node: usize,
    /// Normalized distance of the post-update temperature from the hot edge;
    /// warm devices (small margin) switch ON first.
    margin: f64,
}

const EXACT_LIMIT: usize = 20;

pub fn assign_modes(pop: &TclPopulation, p_ref_kw: f64, inputs: &OpfInputs) -> OpfAssignment {
    let n_dev = pop.len();
    let next_temps = pop.next_temperatures();
    let mut modes = vec![false; n_dev];
    let mut free: Vec<FreeDevice> = Vec::new();
    let mut forced_kw = 0.0;
    let mut tcl_inj = NodalInjection::zeros(inputs.feeder.node_count());
    let kw_to_pu = inputs.feeder.bases().kw_to_pu(1.0);

    for (i, p) in pop.params().iter().enumerate() {
        let theta1 = next_temps[i];
        let a = p.thermal_factor(pop.dt_s());
        let follow = |mode: bool| {
            a * theta1
                + (1.0 - a)
                    * (p.ambient_temp + p.thermal_resistance * p.transfer_rate * mode as u8 as f64)
        };
        let (lo, hi) = (p.temp_lo(), p.temp_hi());
        let on_ok = follow(true) >= lo;
        let off_ok = follow(false) <= hi;
        let forced_on = theta1 >= hi || (!off_ok && on_ok);
        let forced_off = theta1 <= lo || (!on_ok && off_ok && theta1 < hi);
        if forced_on {
            modes[i] = true;
            forced_kw += p.rated_real_kw();
            tcl_inj.real[p.node - 1] += p.rated_real_kw() * kw_to_pu;
            tcl_inj.reactive[p.node - 1] += p.rated_reactive_kvar() * kw_to_pu;
        } else if forced_off || (!on_ok && !off_ok) {
            // neither mode stays in band: hold OFF, the thermostat recovers
            modes[i] = false;
        } else {
            free.push(FreeDevice {
                idx: i,
                rated_kw: p.rated_real_kw(),
                rated_kvar: p.rated_reactive_kvar(),
                node: p.node,
                margin: (hi - theta1) / p.deadband_width,
            });
        }
    }

    let feasible = |inj: &NodalInjection| -> bool {
        let mut total = inputs.worst_loads_pu.clone();
        total.add_assign(inj);
        match solve_lindistflow(inputs.feeder, &total) {
            Ok(sol) => sol.min_voltage() >= inputs.v_floor,
            Err(_) => false,
        }
    };

    // even the all-OFF network fails: give up and flag
    if !feasible(&NodalInjection::zeros(inputs.feeder.node_count())) {
        return OpfAssignment {
            modes: vec![false; n_dev],
            voltage_infeasible: true,
            p_agg_planned_kw: 0.0,
        };
    }
    if !feasible(&tcl_inj) {
        // forced devices alone violate; nothing to optimize
        return OpfAssignment {
            modes,
            voltage_infeasible: true,
            p_agg_planned_kw: forced_kw,
        };
    }

    free.sort_by(|a, b| {
        a.margin
            .partial_cmp(&b.margin)
            .unwrap()
            .then(a.idx.cmp(&b.idx))
    });

    let chosen: Vec<usize> = if free.len() <= EXACT_LIMIT {
        exact_selection(&free, p_ref_kw - forced_kw, &tcl_inj, kw_to_pu, &feasible)
    } else {
        greedy_selection(
            &free,
            p_ref_kw - forced_kw,
            &mut tcl_inj,
            kw_to_pu,
            &feasible,
        )
    };
    let mut planned = forced_kw;
    for &fi in &chosen {
        modes[free[fi].idx] = true;
        planned += free[fi].rated_kw;
    }
    OpfAssignment {
        modes,
        voltage_infeasible: false,
        p_agg_planned_kw: planned,
    }
}

/// Greedy: warmest devices first, adding while the tracking error improves
/// and the voltage check stays feasible. Voltage-infeasible candidates are
/// skipped (a device at another node may still fit).
fn greedy_selection(
    free: &[FreeDevice],
    target_kw: f64,
    tcl_inj: &mut NodalInjection,
    kw_to_pu: f64,
    feasible: &dyn Fn(&NodalInjection) -> bool,
) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut p_agg = 0.0;
    for (fi, dev) in free.iter().enumerate() {
        if p_agg >= target_kw {
            break;
        }
        let err_now = (p_agg - target_kw).abs();
        let err_add = (p_agg + dev.rated_kw - target_kw).abs();
        if err_add >= err_now {
            continue;
        }
        tcl_inj.real[dev.node - 1] += dev.rated_kw * kw_to_pu;
        tcl_inj.reactive[dev.node - 1] += dev.rated_kvar * kw_to_pu;
        if feasible(tcl_inj) {
            chosen.push(fi);
            p_agg += dev.rated_kw;
        } else {
            tcl_inj.real[dev.node - 1] -= dev.rated_kw * kw_to_pu;
            tcl_inj.reactive[dev.node - 1] -= dev.rated_kvar * kw_to_pu;
        }
    }
    chosen
}

/// Depth-first enumeration with pruning: returns the feasible subset whose
/// power sum is closest to the target. Subset voltage feasibility is
/// monotone (adding load only lowers voltages), so infeasible partial
/// selections stop including.
fn exact_selection(
    free: &[FreeDevice],
    target_kw: f64,
    base_inj: &NodalInjection,
    kw_to_pu: f64,
    feasible: &dyn Fn(&NodalInjection) -> bool,
) -> Vec<usize> {
    struct Search<'s> {
        free: &'s [FreeDevice],
        target: f64,
        kw_to_pu: f64,
        feasible: &'s dyn Fn(&NodalInjection) -> bool,
        suffix_sum: Vec<f64>,
        best_err: f64,
        best: Vec<usize>,
        current: Vec<usize>,
    }
    impl Search<'_> {
        fn dfs(&mut self, pos: usize, sum: f64, inj: &mut NodalInjection) {
            let err_stop = (sum - self.target).abs();
            if err_stop < self.best_err {
                self.best_err = err_stop;
                self.best = self.current.clone();
            }
            if pos == self.free.len() {
                return;
            }
            // bound: the reachable sums from here span [sum, sum + suffix]
            let reach_hi = sum + self.suffix_sum[pos];
            let lower_gap = if self.target < sum {
                self.target - sum // negative: already overshooting
            } else if self.target > reach_hi {
                self.target - reach_hi
            } else {
                0.0
            };
            if lower_gap.abs() >= self.best_err {
                return;
            }
            // include pos if it stays feasible
            let dev = &self.free[pos];
            inj.real[dev.node - 1] += dev.rated_kw * self.kw_to_pu;
            inj.reactive[dev.node - 1] += dev.rated_kvar * self.kw_to_pu;
            if sum + dev.rated_kw - self.target < self.best_err && (self.feasible)(inj) {
                self.current.push(pos);
                self.dfs(pos + 1, sum + dev.rated_kw, inj);
                self.current.pop();
            }
            inj.real[dev.node - 1] -= dev.rated_kw * self.kw_to_pu;
            inj.reactive[dev.node - 1] -= dev.rated_kvar * self.kw_to_pu;
            // exclude pos
            self.dfs(pos + 1, sum, inj);
        }
    }
    let mut suffix_sum = vec![0.0; free.len() + 1];
    for i in (0..free.len()).rev() {
        suffix_sum[i] = suffix_sum[i + 1] + free[i].rated_kw;
    }
    let mut search = Search {
        free,
        target: target_kw,
        kw_to_pu,
        feasible,
        suffix_sum,
        best_err: f64::INFINITY,
        best: Vec::new(),
        current: Vec::new(),
    };
    let mut inj = base_inj.clone();
    search.dfs(0, 0.0, &mut inj);
    search.best
}
