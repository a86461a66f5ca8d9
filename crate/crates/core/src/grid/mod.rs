//! Radial distribution network model with an exact branch-flow solver
//! (backward-forward sweep) and its linearized counterpart, plus the
//! under-voltage safety indicator.
//!
//! Nodes are numbered `1..=n` with the substation as node `0`. Branches are
//! indexed by their receiving node: branch `j` connects `parent(j) -> j` and
//! carries resistance `r_j`, reactance `x_j` (per unit). Positive injections
//! are consumption, so loading a node depresses voltages below it.

mod file;
mod synth;

pub use file::{load_feeder, save_feeder, FeederFile};
pub use synth::{calibrate_impedance_scale, generate_feeder, FeederShape, SynthFeederSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("feeder structure: {0}")]
    Structure(String),
    #[error("branch into node {node} must have r > 0 and x > 0")]
    InvalidImpedance { node: usize },
    #[error("injection length {got} does not match node count {expected}")]
    InjectionLength { got: usize, expected: usize },
    #[error("injection contains a non-finite entry at node {node}")]
    InjectionNotFinite { node: usize },
    #[error("voltage collapse at node {node} in sweep iteration {iteration}")]
    VoltageCollapse { node: usize, iteration: u32 },
    #[error("linearized squared voltage non-positive at node {node}")]
    InfeasibleLinearization { node: usize },
    #[error("power-flow solution did not converge; refusing safety evaluation")]
    NotConverged,
    #[error("feeder file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("feeder file parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Power and voltage bases. These are metadata: every solver quantity is
/// already per-unit, the bases only matter when converting from kW at the
/// scenario boundary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Bases {
    pub mva: f64,
    pub kv: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            mva: 1.0,
            kv: 12.35,
        }
    }
}

impl Bases {
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.mva * 1000.0)
    }
    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.mva * 1000.0
    }
}

/// One branch of a feeder description, identified by its endpoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// Immutable radial network. Construction validates the tree rooted at the
/// substation and caches the topological order plus ancestor/descendant
/// sets, so both solvers run allocation-light passes over fixed indices.
#[derive(Debug, Clone)]
pub struct FeederModel {
    node_count: usize,
    parent: Vec<usize>,        // parent[j-1], substation = 0
    children: Vec<Vec<usize>>, // children[i] for i in 0..=n
    resistance: Vec<f64>,      // r of branch into node j, index j-1
    reactance: Vec<f64>,
    substation_voltage: f64,
    bases: Bases,
    topo: Vec<usize>,             // node ids, parents before children
    ancestors: Vec<Vec<usize>>,   // a(j) including j, index j-1
    descendants: Vec<Vec<usize>>, // d(j) including j, index j-1
}

impl FeederModel {
    pub fn new(
        node_count: usize,
        branches: &[BranchSpec],
        substation_voltage: f64,
        bases: Bases,
    ) -> Result<Self, GridError> {
        let n = node_count;
        if n == 0 {
            return Err(GridError::Structure(
                "feeder needs at least one node".into(),
            ));
        }
        if branches.len() != n {
            return Err(GridError::Structure(format!(
                "tree with {n} nodes needs exactly {n} branches, got {}",
                branches.len()
            )));
        }
        if !(substation_voltage > 0.0) {
            return Err(GridError::Structure(
                "substation voltage must be positive".into(),
            ));
        }
        let mut parent = vec![usize::MAX; n];
        let mut resistance = vec![0.0; n];
        let mut reactance = vec![0.0; n];
        for b in branches {
            if b.to == 0 || b.to > n {
                return Err(GridError::Structure(format!(
                    "branch receiving node {} outside 1..={n}",
                    b.to
                )));
            }
            if b.from > n || b.from == b.to {
                return Err(GridError::Structure(format!(
                    "branch {} -> {} has an invalid sending node",
                    b.from, b.to
                )));
            }
            if parent[b.to - 1] != usize::MAX {
                return Err(GridError::Structure(format!(
                    "node {} has two parents",
                    b.to
                )));
            }
            if !(b.r > 0.0 && b.x > 0.0) || !b.r.is_finite() || !b.x.is_finite() {
                return Err(GridError::InvalidImpedance { node: b.to });
            }
            parent[b.to - 1] = b.from;
            resistance[b.to - 1] = b.r;
            reactance[b.to - 1] = b.x;
        }
        let mut children = vec![Vec::new(); n + 1];
        for j in 1..=n {
            children[parent[j - 1]].push(j);
        }
        for c in &mut children {
            c.sort_unstable();
        }
        // BFS from the substation; reaching every node certifies a tree
        // (n branches, unique parents, all reachable => no cycles).
        let mut topo = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from_iter(children[0].iter().copied());
        while let Some(j) = queue.pop_front() {
            topo.push(j);
            queue.extend(children[j].iter().copied());
        }
        if topo.len() != n {
            return Err(GridError::Structure(
                "graph has nodes unreachable from the substation (cycle or disconnection)".into(),
            ));
        }
        let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &j in &topo {
            let mut a = if parent[j - 1] == 0 {
                Vec::new()
            } else {
                ancestors[parent[j - 1] - 1].clone()
            };
            a.push(j);
            ancestors[j - 1] = a;
        }
        let mut descendants: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &j in topo.iter().rev() {
            let mut d = vec![j];
            for &k in &children[j] {
                d.extend(descendants[k - 1].iter().copied());
            }
            d.sort_unstable();
            descendants[j - 1] = d;
        }
        Ok(FeederModel {
            node_count: n,
            parent,
            children,
            resistance,
            reactance,
            substation_voltage,
            bases,
            topo,
            ancestors,
            descendants,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn substation_voltage(&self) -> f64 {
        self.substation_voltage
    }
    pub fn bases(&self) -> Bases {
        self.bases
    }
    pub fn parent(&self, node: usize) -> usize {
        self.parent[node - 1]
    }
    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }
    pub fn resistance(&self, node: usize) -> f64 {
        self.resistance[node - 1]
    }
    pub fn reactance(&self, node: usize) -> f64 {
        self.reactance[node - 1]
    }
    /// Ancestor set a(j), including j, ordered root-first.
    pub fn ancestors(&self, node: usize) -> &[usize] {
        &self.ancestors[node - 1]
    }
    /// Descendant set d(j), including j.
    pub fn descendants(&self, node: usize) -> &[usize] {
        &self.descendants[node - 1]
    }
    pub fn branches(&self) -> Vec<BranchSpec> {
        (1..=self.node_count)
            .map(|j| BranchSpec {
                from: self.parent[j - 1],
                to: j,
                r: self.resistance[j - 1],
                x: self.reactance[j - 1],
            })
            .collect()
    }

    /// Copy with every branch impedance multiplied by `scale`.
    pub fn with_impedance_scale(&self, scale: f64) -> FeederModel {
        let mut f = self.clone();
        for v in &mut f.resistance {
            *v *= scale;
        }
        for v in &mut f.reactance {
            *v *= scale;
        }
        f
    }

    fn check_injection(&self, inj: &NodalInjection) -> Result<(), GridError> {
        let n = self.node_count;
        if inj.real.len() != n || inj.reactive.len() != n {
            return Err(GridError::InjectionLength {
                got: inj.real.len().max(inj.reactive.len()),
                expected: n,
            });
        }
        for j in 0..n {
            if !inj.real[j].is_finite() || !inj.reactive[j].is_finite() {
                return Err(GridError::InjectionNotFinite { node: j + 1 });
            }
        }
        Ok(())
    }
}

/// Real and reactive consumption per node (per unit at the solver boundary).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodalInjection {
    pub real: Vec<f64>,
    pub reactive: Vec<f64>,
}

impl NodalInjection {
    pub fn zeros(n: usize) -> Self {
        NodalInjection {
            real: vec![0.0; n],
            reactive: vec![0.0; n],
        }
    }
    pub fn new(real: Vec<f64>, reactive: Vec<f64>) -> Self {
        NodalInjection { real, reactive }
    }
    pub fn scaled(&self, factor: f64) -> Self {
        NodalInjection {
            real: self.real.iter().map(|v| v * factor).collect(),
            reactive: self.reactive.iter().map(|v| v * factor).collect(),
        }
    }
    pub fn add_assign(&mut self, other: &NodalInjection) {
        for (a, b) in self.real.iter_mut().zip(&other.real) {
            *a += b;
        }
        for (a, b) in self.reactive.iter_mut().zip(&other.reactive) {
            *a += b;
        }
    }
}

/// Solved voltages and branch flows; `voltage[j-1]` is the magnitude at
/// node j, `branch_real[j-1]` the flow entering branch j at its sending end.
#[derive(Debug, Clone)]
pub struct VoltageSolution {
    pub voltage: Vec<f64>,
    pub branch_real: Vec<f64>,
    pub branch_reactive: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
}

impl VoltageSolution {
    pub fn min_voltage(&self) -> f64 {
        self.voltage.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn max_voltage(&self) -> f64 {
        self.voltage
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Reusable scratch for the sweep solver, for callers on hot sampling paths.
#[derive(Debug, Default, Clone)]
pub struct SweepScratch {
    v2: Vec<f64>,
    ell: Vec<f64>,
    pb: Vec<f64>,
    qb: Vec<f64>,
}

impl SweepScratch {
    pub(crate) fn min_sq_voltage(&self) -> f64 {
        self.v2.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub(crate) fn max_sq_voltage(&self) -> f64 {
        self.v2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const DEFAULT_SWEEP_TOL: f64 = 1e-10;
pub const DEFAULT_SWEEP_MAX_ITER: u32 = 50;

/// Backward-forward sweep on the exact branch-flow equations.
///
/// The loss term uses the squared current magnitude
/// `ell_j = (pb_j^2 + qb_j^2) / v_j^2` evaluated with the receiving-end
/// voltage of the previous iterate. Iterates until the largest voltage
/// change falls below `tol`; `converged` is false if `max_iter` passes
/// first.
pub fn solve_distflow(
    feeder: &FeederModel,
    inj: &NodalInjection,
    tol: f64,
    max_iter: u32,
) -> Result<VoltageSolution, GridError> {
    let mut scratch = SweepScratch::default();
    solve_distflow_with(feeder, inj, tol, max_iter, &mut scratch)
}

pub fn solve_distflow_with(
    feeder: &FeederModel,
    inj: &NodalInjection,
    tol: f64,
    max_iter: u32,
    scratch: &mut SweepScratch,
) -> Result<VoltageSolution, GridError> {
    let (converged, iterations) = sweep_core(feeder, inj, tol, max_iter, scratch)?;
    Ok(VoltageSolution {
        voltage: scratch.v2.iter().map(|v| v.sqrt()).collect(),
        branch_real: scratch.pb.clone(),
        branch_reactive: scratch.qb.clone(),
        converged,
        iterations,
    })
}

/// Sweep iterations with all state left in `scratch` (squared voltages in
/// `v2`, flows in `pb`/`qb`). Allocation-free after the first call with a
/// given network size; this is the Monte-Carlo hot path.
pub(crate) fn sweep_core(
    feeder: &FeederModel,
    inj: &NodalInjection,
    tol: f64,
    max_iter: u32,
    scratch: &mut SweepScratch,
) -> Result<(bool, u32), GridError> {
    assert!(tol > 0.0 && max_iter >= 1, "solver parameters out of range");
    feeder.check_injection(inj)?;
    let n = feeder.node_count;
    let v0sq = feeder.substation_voltage * feeder.substation_voltage;

    scratch.v2.clear();
    scratch.v2.resize(n, v0sq);
    scratch.ell.clear();
    scratch.ell.resize(n, 0.0);
    scratch.pb.clear();
    scratch.pb.resize(n, 0.0);
    scratch.qb.clear();
    scratch.qb.resize(n, 0.0);
    let SweepScratch { v2, ell, pb, qb } = scratch;

    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        // backward pass: accumulate branch flows leaf-to-root
        for &j in feeder.topo.iter().rev() {
            let i = j - 1;
            let mut p = inj.real[i] + feeder.resistance[i] * ell[i];
            let mut q = inj.reactive[i] + feeder.reactance[i] * ell[i];
            for &k in &feeder.children[j] {
                p += pb[k - 1];
                q += qb[k - 1];
            }
            pb[i] = p;
            qb[i] = q;
        }
        // forward pass: update squared voltages root-to-leaf
        let mut max_dv = 0.0f64;
        for &j in &feeder.topo {
            let i = j - 1;
            let parent_v2 = if feeder.parent[i] == 0 {
                v0sq
            } else {
                v2[feeder.parent[i] - 1]
            };
            let r = feeder.resistance[i];
            let x = feeder.reactance[i];
            let next = parent_v2 - 2.0 * (r * pb[i] + x * qb[i]) + (r * r + x * x) * ell[i];
            if next <= 0.0 {
                return Err(GridError::VoltageCollapse {
                    node: j,
                    iteration: iter,
                });
            }
            max_dv = max_dv.max((next.sqrt() - v2[i].sqrt()).abs());
            v2[i] = next;
        }
        for i in 0..n {
            ell[i] = (pb[i] * pb[i] + qb[i] * qb[i]) / v2[i];
        }
        if max_dv < tol {
            converged = true;
            break;
        }
    }
    Ok((converged, iterations))
}

/// Linearized solve with state left in `scratch` (squared voltages in `v2`,
/// flows in `pb`/`qb`); allocation-free counterpart of
/// [`solve_lindistflow`].
pub(crate) fn lin_core(
    feeder: &FeederModel,
    inj: &NodalInjection,
    scratch: &mut SweepScratch,
) -> Result<(), GridError> {
    feeder.check_injection(inj)?;
    let n = feeder.node_count;
    let v0sq = feeder.substation_voltage * feeder.substation_voltage;
    scratch.v2.clear();
    scratch.v2.resize(n, 0.0);
    scratch.pb.clear();
    scratch.pb.resize(n, 0.0);
    scratch.qb.clear();
    scratch.qb.resize(n, 0.0);
    let SweepScratch { v2, pb, qb, .. } = scratch;
    for &j in feeder.topo.iter().rev() {
        let i = j - 1;
        let mut p = inj.real[i];
        let mut q = inj.reactive[i];
        for &k in &feeder.children[j] {
            p += pb[k - 1];
            q += qb[k - 1];
        }
        pb[i] = p;
        qb[i] = q;
    }
    for &j in &feeder.topo {
        let i = j - 1;
        let parent_v2 = if feeder.parent[i] == 0 {
            v0sq
        } else {
            v2[feeder.parent[i] - 1]
        };
        let next = parent_v2 - 2.0 * (feeder.resistance[i] * pb[i] + feeder.reactance[i] * qb[i]);
        if next <= 0.0 {
            return Err(GridError::InfeasibleLinearization { node: j });
        }
        v2[i] = next;
    }
    Ok(())
}

/// Closed-form linearized branch flow: branch flows are descendant sums and
/// squared voltages drop by twice the ancestor-accumulated impedance-flow
/// products. Non-iterative and loss-free.
pub fn solve_lindistflow(
    feeder: &FeederModel,
    inj: &NodalInjection,
) -> Result<VoltageSolution, GridError> {
    let mut scratch = SweepScratch::default();
    lin_core(feeder, inj, &mut scratch)?;
    Ok(VoltageSolution {
        voltage: scratch.v2.iter().map(|v| v.sqrt()).collect(),
        branch_real: scratch.pb,
        branch_reactive: scratch.qb,
        converged: true,
        iterations: 0,
    })
}

/// Under-voltage safety indicator: true iff every nodal voltage is at or
/// above the floor. Refuses unconverged solutions so divergence can never
/// masquerade as a safety verdict.
pub fn min_voltage_safe(sol: &VoltageSolution, v_floor: f64) -> Result<bool, GridError> {
    if !sol.converged {
        return Err(GridError::NotConverged);
    }
    Ok(sol.min_voltage() >= v_floor)
}

/// Largest absolute residual of the sweep equations at a returned solution,
/// with the squared-current term recomputed from the solution itself.
pub fn distflow_residual(feeder: &FeederModel, inj: &NodalInjection, sol: &VoltageSolution) -> f64 {
    let n = feeder.node_count;
    let v0sq = feeder.substation_voltage * feeder.substation_voltage;
    let mut worst = 0.0f64;
    for j in 1..=n {
        let i = j - 1;
        let vi2 = sol.voltage[i] * sol.voltage[i];
        let ell = (sol.branch_real[i] * sol.branch_real[i]
            + sol.branch_reactive[i] * sol.branch_reactive[i])
            / vi2;
        let mut p = inj.real[i] + feeder.resistance[i] * ell;
        let mut q = inj.reactive[i] + feeder.reactance[i] * ell;
        for &k in &feeder.children[j] {
            p += sol.branch_real[k - 1];
            q += sol.branch_reactive[k - 1];
        }
        worst = worst.max((p - sol.branch_real[i]).abs());
        worst = worst.max((q - sol.branch_reactive[i]).abs());
        let parent_v2 = if feeder.parent[i] == 0 {
            v0sq
        } else {
            sol.voltage[feeder.parent[i] - 1].powi(2)
        };
        let r = feeder.resistance[i];
        let x = feeder.reactance[i];
        let rhs = parent_v2 - 2.0 * (r * sol.branch_real[i] + x * sol.branch_reactive[i])
            + (r * r + x * x) * ell;
        worst = worst.max((vi2 - rhs).abs());
    }
    worst
}
