//! Synthetic radial feeder generation and impedance calibration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stream::StreamKey;

use super::{
    solve_distflow, Bases, BranchSpec, FeederModel, GridError, NodalInjection,
    DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeederShape {
    /// Single line 0 - 1 - 2 - ... - n.
    Chain,
    /// Every node hangs directly off the substation.
    Star,
    /// Node j's parent is j/2.
    BinaryTree,
    /// Main chain over the first half of the nodes, remaining nodes attached
    /// round-robin as laterals.
    ChainWithBranches,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthFeederSpec {
    pub shape: FeederShape,
    pub nodes: usize,
    pub r_range: (f64, f64),
    pub x_range: (f64, f64),
    pub v0: f64,
    #[serde(default)]
    pub bases: Bases,
}

/// Generate a radial feeder with impedances drawn uniformly from the
/// configured ranges.
pub fn generate_feeder(spec: &SynthFeederSpec, key: StreamKey) -> FeederModel {
    let n = spec.nodes;
    assert!(n >= 1, "feeder needs at least one node");
    let mut rng = key.rng();
    let parent_of = |j: usize| -> usize {
        match spec.shape {
            FeederShape::Chain => j - 1,
            FeederShape::Star => 0,
            FeederShape::BinaryTree => j / 2,
            FeederShape::ChainWithBranches => {
                let trunk = (n + 1) / 2;
                if j <= trunk {
                    j - 1
                } else {
                    // laterals spread across the trunk, leaf-end first
                    let k = j - trunk;
                    trunk - 1 - ((k - 1) % trunk.max(1))
                }
            }
        }
    };
    let branches: Vec<BranchSpec> = (1..=n)
        .map(|j| BranchSpec {
            from: parent_of(j),
            to: j,
            r: rng.gen_range(spec.r_range.0..=spec.r_range.1),
            x: rng.gen_range(spec.x_range.0..=spec.x_range.1),
        })
        .collect();
    FeederModel::new(n, &branches, spec.v0, spec.bases)
        .expect("generated feeder is a tree by construction")
}

/// Scale all branch impedances so the sweep-solved minimum voltage under
/// `inj` lands on `target_min_voltage`. Monotone bisection on the scale.
pub fn calibrate_impedance_scale(
    feeder: &FeederModel,
    inj: &NodalInjection,
    target_min_voltage: f64,
) -> Result<FeederModel, GridError> {
    assert!(
        target_min_voltage > 0.0 && target_min_voltage < feeder.substation_voltage(),
        "target must sit below the substation voltage"
    );
    let min_v = |scale: f64| -> Result<f64, GridError> {
        let f = feeder.with_impedance_scale(scale);
        let sol = solve_distflow(&f, inj, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER)?;
        if !sol.converged {
            return Err(GridError::NotConverged);
        }
        Ok(sol.min_voltage())
    };
    let mut lo = 1e-9; // voltage ~ v0, above any valid target
    let mut hi = 1.0;
    // grow hi until the voltage falls below target (or the flow collapses,
    // which is also "below target" for bracketing purposes)
    let mut hi_ok = false;
    for _ in 0..60 {
        match min_v(hi) {
            Ok(v) if v < target_min_voltage => {
                hi_ok = true;
                break;
            }
            Ok(_) => hi *= 2.0,
            Err(GridError::VoltageCollapse { .. }) | Err(GridError::NotConverged) => {
                hi_ok = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !hi_ok {
        return Err(GridError::Structure(
            "calibration failed: injection too small to reach the target voltage".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let below = match min_v(mid) {
            Ok(v) => v < target_min_voltage,
            Err(GridError::VoltageCollapse { .. }) | Err(GridError::NotConverged) => true,
            Err(e) => return Err(e),
        };
        if below {
            hi = mid;
        } else {
            lo = mid;
        }
        if (hi - lo) / hi < 1e-12 {
            break;
        }
    }
    Ok(feeder.with_impedance_scale(lo))
}
