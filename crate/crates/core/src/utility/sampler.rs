//! Posterior ON-count inference and realization of the one-step-ahead
//! safety indicator.
//!
//! A realization runs four steps per node: (1) draw the current ON count
//! from its measurement posterior and the next-step loads from their
//! forecast distributions, (2) form thermostat switch counts from the
//! aggregator's fractions, (3) draw command switch counts binomially,
//! (4) assemble next-step nodal powers, solve the power flow, and test the
//! voltage band.

use rand::Rng;

use crate::grid::{
    lin_core, sweep_core, FeederModel, GridError, NodalInjection, SweepScratch,
    DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL,
};
use crate::stats::{BinomialInvTable, TruncatedNormal, TruncatedNormalTable};
use crate::stream::StreamKey;

use super::load::{LoadModel, NodeLoadDist};
use super::{SafetyConfig, UtilityError, UtilityObservation};

/// Per-node posterior over the current ON count, conditioned on the nodal
/// smart-meter total. `fallback` marks the degenerate-measurement case where
/// every candidate had zero density and the point mass sits on the smallest
/// Mahalanobis distance.
#[derive(Debug, Clone)]
pub struct NodePosterior {
    pub pmf: Vec<f64>,
    pub fallback: bool,
    cdf: Vec<f64>,
}

impl NodePosterior {
    fn from_pmf(pmf: Vec<f64>, fallback: bool) -> Self {
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        NodePosterior { pmf, fallback, cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        (self.cdf.partition_point(|&c| c <= u) as u64).min((self.pmf.len() - 1) as u64)
    }
}

/// Normalized density-ratio posterior over `N_j^ON` for every node,
/// factorized across nodes (loads are independent across nodes, so the
/// normalization over the full count-vector set splits exactly).
pub fn posterior_on_counts(
    obs: &UtilityObservation,
    load: &LoadModel,
) -> Result<Vec<NodePosterior>, UtilityError> {
    obs.validate(load.node_count())?;
    let hour = load.hour(obs.step);
    let mut out = Vec::with_capacity(load.node_count());
    for j in 0..load.node_count() {
        let dist = load.node_dist(j, hour);
        let n_tcl = obs.tcl_counts[j];
        let candidates = n_tcl + 1;
        let mut logw = Vec::with_capacity(candidates as usize);
        for n in 0..candidates {
            let rp = obs.measured.real[j] - obs.avg_real_kw[j] * n as f64;
            let rq = obs.measured.reactive[j] - obs.avg_reactive_kvar[j] * n as f64;
            logw.push(dist.log_density(rp, rq));
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            let mut pmf: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = pmf.iter().sum();
            for p in &mut pmf {
                *p /= total;
            }
            out.push(NodePosterior::from_pmf(pmf, false));
        } else {
            // every candidate fell outside the truncated support
            let mut best: Option<(u64, f64)> = None;
            for n in 0..candidates {
                let rp = obs.measured.real[j] - obs.avg_real_kw[j] * n as f64;
                let rq = obs.measured.reactive[j] - obs.avg_reactive_kvar[j] * n as f64;
                let d = dist.mahalanobis_sq(rp, rq);
                if d.is_finite() && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((n, d));
                }
            }
            let (argmin, _) = best.ok_or(UtilityError::Inference { node: j + 1 })?;
            log::warn!(
                "node {}: measurement outside load support for every ON count; \
                 falling back to nearest-count point mass at {argmin}",
                j + 1
            );
            let mut pmf = vec![0.0; candidates as usize];
            pmf[argmin as usize] = 1.0;
            out.push(NodePosterior::from_pmf(pmf, true));
        }
    }
    Ok(out)
}

/// Which voltage band edge a certification run guards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Indicator {
    /// Safe iff `min_j v_j >= floor`.
    UnderVoltage { floor: f64 },
    /// Safe iff `max_j v_j <= ceiling`.
    OverVoltage { ceiling: f64 },
}

/// Reusable per-thread buffers for realization sampling.
#[derive(Debug, Default, Clone)]
pub struct XScratch {
    sweep: SweepScratch,
    inj: NodalInjection,
}

impl XScratch {
    pub fn new(n: usize) -> Self {
        XScratch {
            sweep: SweepScratch::default(),
            inj: NodalInjection::zeros(n),
        }
    }
}

/// Load draw strategy per node: independent coordinates use a tabulated
/// inverse cdf, correlated ones keep the exact rejection sampler.
enum LoadSampler {
    Tabulated {
        p: TruncatedNormalTable,
        q: TruncatedNormalTable,
    },
    Exact(NodeLoadDist),
}

impl LoadSampler {
    fn new(dist: NodeLoadDist) -> Self {
        if dist.rho == 0.0 {
            LoadSampler::Tabulated {
                p: TruncatedNormalTable::new(
                    &TruncatedNormal::new(dist.mu_p, dist.sigma_p, dist.lo_p, dist.hi_p),
                    256,
                ),
                q: TruncatedNormalTable::new(
                    &TruncatedNormal::new(dist.mu_q, dist.sigma_q, dist.lo_q, dist.hi_q),
                    256,
                ),
            }
        } else {
            LoadSampler::Exact(dist)
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            LoadSampler::Tabulated { p, q } => (p.sample(rng), q.sample(rng)),
            LoadSampler::Exact(dist) => dist.sample(rng),
        }
    }
}

/// Everything fixed across the realizations of one certification probe:
/// posterior tables, next-step load distributions, rounded thermostat switch
/// tables, and binomial inversion tables at the probe's command.
pub struct XContext<'a> {
    feeder: &'a FeederModel,
    indicator: Indicator,
    use_lin: bool,
    posteriors: Vec<NodePosterior>,
    loads_next: Vec<LoadSampler>,
    s_on_of_noff: Vec<Vec<u64>>,
    s_off_of_non: Vec<Vec<u64>>,
    binom_on: BinomialInvTable,
    binom_off: BinomialInvTable,
    tcl_counts: Vec<u64>,
    avg_real_kw: Vec<f64>,
    avg_reactive_kvar: Vec<f64>,
    kw_to_pu: f64,
}

impl<'a> XContext<'a> {
    pub fn new(
        obs: &UtilityObservation,
        load: &LoadModel,
        config: &SafetyConfig,
        command: f64,
        feeder: &'a FeederModel,
        indicator: Indicator,
    ) -> Result<Self, UtilityError> {
        assert!((-1.0..=1.0).contains(&command), "command outside [-1, 1]");
        config.validate()?;
        obs.validate(feeder.node_count())?;
        if load.node_count() != feeder.node_count() {
            return Err(UtilityError::Config(
                "load model node count mismatch".into(),
            ));
        }
        let posteriors = posterior_on_counts(obs, load)?;
        let hour_next = load.hour(obs.step + 1);
        let loads_next = (0..load.node_count())
            .map(|j| LoadSampler::new(load.node_dist(j, hour_next)))
            .collect();
        let n = feeder.node_count();
        let mut s_on_of_noff = Vec::with_capacity(n);
        let mut s_off_of_non = Vec::with_capacity(n);
        for j in 0..n {
            let cap = obs.tcl_counts[j];
            s_on_of_noff.push(
                (0..=cap)
                    .map(|n_off| switch_count(obs.w_on_hat[j], n_off))
                    .collect(),
            );
            s_off_of_non.push(
                (0..=cap)
                    .map(|n_on| switch_count(obs.w_off_hat[j], n_on))
                    .collect(),
            );
        }
        let max_tcl = obs.tcl_counts.iter().copied().max().unwrap_or(0);
        let u_plus = command.max(0.0);
        let u_minus = (-command).max(0.0);
        Ok(XContext {
            feeder,
            indicator,
            use_lin: config.use_lindistflow_in_mc,
            posteriors,
            loads_next,
            s_on_of_noff,
            s_off_of_non,
            binom_on: BinomialInvTable::new(max_tcl, u_plus),
            binom_off: BinomialInvTable::new(max_tcl, u_minus),
            tcl_counts: obs.tcl_counts.clone(),
            avg_real_kw: obs.avg_real_kw.clone(),
            avg_reactive_kvar: obs.avg_reactive_kvar.clone(),
            kw_to_pu: feeder.bases().kw_to_pu(1.0),
        })
    }

    pub fn node_count(&self) -> usize {
        self.feeder.node_count()
    }

    pub fn posteriors(&self) -> &[NodePosterior] {
        &self.posteriors
    }

    /// Draw one safety-indicator realization. Power-flow divergence or
    /// non-convergence counts as unsafe (conservative) and is logged.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut XScratch) -> bool {
        let n = self.node_count();
        scratch.inj.real.clear();
        scratch.inj.real.resize(n, 0.0);
        scratch.inj.reactive.clear();
        scratch.inj.reactive.resize(n, 0.0);
        for j in 0..n {
            let n_tcl = self.tcl_counts[j];
            // step 1a: current ON count from the posterior
            let n_on = self.posteriors[j].sample(rng);
            let n_off = n_tcl - n_on;
            // step 1b: next-step loads from the forecast distribution
            let (p_l, q_l) = self.loads_next[j].sample(rng);
            // step 2: thermostat switch counts from the forecast fractions
            let s_on = self.s_on_of_noff[j][n_off as usize];
            let s_off = self.s_off_of_non[j][n_on as usize];
            // step 3: command switch counts, binomial over the remainder
            let c_on = self.binom_on.sample(n_off - s_on, rng);
            let c_off = self.binom_off.sample(n_on - s_off, rng);
            // step 4: next-step ON count and nodal powers
            let next = n_on as i64 + s_on as i64 - s_off as i64 + c_on as i64 - c_off as i64;
            let n_next = if next < 0 || next > n_tcl as i64 {
                log::warn!(
                    "node {}: ON count {next} left [0, {n_tcl}]; clamping \
                     (inconsistent switch-fraction forecast)",
                    j + 1
                );
                next.clamp(0, n_tcl as i64) as u64
            } else {
                next as u64
            };
            scratch.inj.real[j] = (p_l + self.avg_real_kw[j] * n_next as f64) * self.kw_to_pu;
            scratch.inj.reactive[j] =
                (q_l + self.avg_reactive_kvar[j] * n_next as f64) * self.kw_to_pu;
        }
        let solved = if self.use_lin {
            lin_core(self.feeder, &scratch.inj, &mut scratch.sweep).map(|_| true)
        } else {
            sweep_core(
                self.feeder,
                &scratch.inj,
                DEFAULT_SWEEP_TOL,
                DEFAULT_SWEEP_MAX_ITER,
                &mut scratch.sweep,
            )
            .map(|(converged, _)| converged)
        };
        match solved {
            Ok(true) => match self.indicator {
                Indicator::UnderVoltage { floor } => {
                    scratch.sweep.min_sq_voltage() >= floor * floor
                }
                Indicator::OverVoltage { ceiling } => {
                    scratch.sweep.max_sq_voltage() <= ceiling * ceiling
                }
            },
            Ok(false) => {
                log::warn!("power flow unconverged inside Monte Carlo; counting unsafe");
                false
            }
            Err(GridError::VoltageCollapse { node, .. })
            | Err(GridError::InfeasibleLinearization { node }) => {
                log::debug!("power flow diverged at node {node}; counting unsafe");
                false
            }
            Err(e) => {
                log::warn!("power flow error inside Monte Carlo ({e}); counting unsafe");
                false
            }
        }
    }
}

fn switch_count(fraction: f64, pool: u64) -> u64 {
    let raw = (fraction * pool as f64).round();
    if raw < 0.0 {
        0
    } else {
        (raw as u64).min(pool)
    }
}

/// One-shot realization per the published four-step procedure. Builds the
/// full context each call; certification loops use [`XContext`] directly so
/// the tables amortize across samples.
pub fn sample_x_realization(
    obs: &UtilityObservation,
    load: &LoadModel,
    config: &SafetyConfig,
    command: f64,
    feeder: &FeederModel,
    key: StreamKey,
) -> Result<bool, UtilityError> {
    let ctx = XContext::new(
        obs,
        load,
        config,
        command,
        feeder,
        Indicator::UnderVoltage {
            floor: config.v_floor,
        },
    )?;
    let mut scratch = XScratch::new(feeder.node_count());
    Ok(ctx.sample(&mut key.rng(), &mut scratch))
}
