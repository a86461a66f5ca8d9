//! Utility-side constraint construction: posterior inference over ON-counts
//! from nodal smart-meter totals, Monte-Carlo realization of the one-step
//! ahead safety indicator, the confidence-interval acceptance test, and
//! bisection to the widest probabilistically safe command set.

mod certify;
mod load;
mod sampler;

pub use certify::{
    certify_bernoulli, construct_constraint_set, estimate_safety_curve, run_certification,
    test_command, theorem1_acceptance_study, AcceptanceStudy, CertifyOutcome, ConstraintOutcome,
    CurvePoint, ProbeRecord,
};
pub use load::{LoadModel, MultiplierProfile, NodeLoadDist, TimeBase};
pub use sampler::{
    posterior_on_counts, sample_x_realization, Indicator, NodePosterior, XContext, XScratch,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, NodalInjection};
use crate::stats::certify_min_samples;

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("utility config: {0}")]
    Config(String),
    #[error("posterior inference failed at node {node}: no admissible count")]
    Inference { node: usize },
    #[error("observation invalid: {0}")]
    Observation(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The chance-constraint contract: violation budget, confidence budget,
/// voltage floor, and the sampling/bisection budgets used to enforce them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub v_floor: f64,
    pub max_samples: u64,
    pub batch_size: u64,
    pub bisection_tol: f64,
    pub use_lindistflow_in_mc: bool,
    /// Enables the over-voltage lower bound when set.
    pub v_ceiling: Option<f64>,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            epsilon: 0.05,
            beta: 0.001,
            v_floor: 0.95,
            max_samples: 100_000,
            batch_size: 2_000,
            bisection_tol: 1.0 / 64.0,
            use_lindistflow_in_mc: false,
            v_ceiling: None,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<(), UtilityError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(UtilityError::Config("epsilon must lie in (0, 1)".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(UtilityError::Config("beta must lie in (0, 1)".into()));
        }
        if !(self.v_floor > 0.0) {
            return Err(UtilityError::Config(
                "voltage floor must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(UtilityError::Config("batch size must be at least 1".into()));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(UtilityError::Config(
                "bisection tolerance must be positive".into(),
            ));
        }
        let floor = certify_min_samples(1.0, self.epsilon, self.beta);
        if (self.max_samples as f64) <= floor {
            return Err(UtilityError::Config(format!(
                "max_samples {} cannot certify anything: even a perfect estimate needs more \
                 than {floor:.0} samples at epsilon={}, beta={}",
                self.max_samples, self.epsilon, self.beta
            )));
        }
        if let Some(vc) = self.v_ceiling {
            if vc <= self.v_floor {
                return Err(UtilityError::Config("v_ceiling must exceed v_floor".into()));
            }
        }
        Ok(())
    }
}

/// What the utility knows at the end of a step: smart-meter totals per node,
/// the aggregator's one-step-ahead thermostat switch forecasts, and the TCL
/// fleet statistics it was given up front.
#[derive(Debug, Clone)]
pub struct UtilityObservation {
    /// Step index of the measurement (drives the load-model clock).
    pub step: usize,
    /// Total real/reactive consumption per node, kW / kvar.
    pub measured: NodalInjection,
    pub w_on_hat: Vec<f64>,
    pub w_off_hat: Vec<f64>,
    pub tcl_counts: Vec<u64>,
    pub avg_real_kw: Vec<f64>,
    pub avg_reactive_kvar: Vec<f64>,
}

impl UtilityObservation {
    pub fn validate(&self, node_count: usize) -> Result<(), UtilityError> {
        let n = node_count;
        if self.measured.real.len() != n
            || self.measured.reactive.len() != n
            || self.w_on_hat.len() != n
            || self.w_off_hat.len() != n
            || self.tcl_counts.len() != n
            || self.avg_real_kw.len() != n
            || self.avg_reactive_kvar.len() != n
        {
            return Err(UtilityError::Observation(format!(
                "vector lengths must all be {n}"
            )));
        }
        for w in self.w_on_hat.iter().chain(&self.w_off_hat) {
            if !(0.0..=1.0).contains(w) {
                return Err(UtilityError::Observation(format!(
                    "switch fraction {w} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_feasible_sample_budget() {
        let mut cfg = SafetyConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.epsilon = 0.02;
        cfg.beta = 0.001;
        cfg.max_samples = 34_768; // bound is 34768.27..., so this can never accept
        assert!(cfg.validate().is_err());
        cfg.max_samples = 34_770;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn observation_validation() {
        let obs = UtilityObservation {
            step: 0,
            measured: NodalInjection::zeros(2),
            w_on_hat: vec![0.1, 0.2],
            w_off_hat: vec![0.0, 1.5],
            tcl_counts: vec![3, 4],
            avg_real_kw: vec![5.0, 5.0],
            avg_reactive_kvar: vec![1.0, 1.0],
        };
        assert!(obs.validate(2).is_err());
        let mut ok = obs.clone();
        ok.w_off_hat = vec![0.0, 0.5];
        assert!(ok.validate(2).is_ok());
        assert!(ok.validate(3).is_err());
    }
}
