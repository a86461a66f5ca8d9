//! Sequential Monte-Carlo certification of commands and constraint-set
//! construction by bisection.
//!
//! A command is accepted when the running success-rate estimate and the
//! sample count jointly satisfy the Chernoff-derived confidence inequalities
//! (see [`crate::stats::certify_accepts`]); the widest accepted upper bound
//! is then located by bisection, exploiting monotonicity of the safety
//! probability in the command.

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregator::ConstraintSet;
use crate::grid::FeederModel;
use crate::stats::certify_accepts;
use crate::stream::StreamKey;

use super::sampler::{Indicator, XContext, XScratch};
use super::{LoadModel, SafetyConfig, UtilityError, UtilityObservation};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifyOutcome {
    pub accepted: bool,
    pub samples_used: u64,
    pub m_estimate: f64,
}

/// Run the sequential acceptance test against an arbitrary indicator
/// sampler. Samples are drawn in batches; after every batch both acceptance
/// inequalities are checked, and the test stops at the first batch where
/// they hold or once `max_samples` have been spent.
///
/// Sample `i` sees only the stream `key.child(i)`, so the outcome is
/// bit-identical for any worker count.
pub fn run_certification<F>(config: &SafetyConfig, key: StreamKey, sample: F) -> CertifyOutcome
where
    F: Fn(StreamKey) -> bool + Sync,
{
    let mut drawn = 0u64;
    let mut successes = 0u64;
    while drawn < config.max_samples {
        let batch = config.batch_size.min(config.max_samples - drawn);
        successes += (drawn..drawn + batch)
            .into_par_iter()
            .map(|i| sample(key.child(i)) as u64)
            .sum::<u64>();
        drawn += batch;
        let m = successes as f64 / drawn as f64;
        if certify_accepts(m, drawn, config.epsilon, config.beta) {
            return CertifyOutcome {
                accepted: true,
                samples_used: drawn,
                m_estimate: m,
            };
        }
    }
    CertifyOutcome {
        accepted: false,
        samples_used: drawn,
        m_estimate: successes_ratio(successes, drawn),
    }
}

fn successes_ratio(successes: u64, drawn: u64) -> f64 {
    if drawn == 0 {
        0.0
    } else {
        successes as f64 / drawn as f64
    }
}

/// Certification against a synthetic Bernoulli stream with known success
/// probability; the statistical soundness harness for the acceptance test.
pub fn certify_bernoulli(nu: f64, config: &SafetyConfig, key: StreamKey) -> CertifyOutcome {
    let threshold = if nu >= 1.0 {
        u64::MAX
    } else if nu <= 0.0 {
        0
    } else {
        (nu * 2.0f64.powi(64)) as u64
    };
    let mut drawn = 0u64;
    let mut successes = 0u64;
    while drawn < config.max_samples {
        let batch = config.batch_size.min(config.max_samples - drawn);
        for i in drawn..drawn + batch {
            // the mixed child key is itself uniform on u64
            successes += (nu >= 1.0 || key.child(i).raw() < threshold) as u64;
        }
        drawn += batch;
        let m = successes as f64 / drawn as f64;
        if certify_accepts(m, drawn, config.epsilon, config.beta) {
            return CertifyOutcome {
                accepted: true,
                samples_used: drawn,
                m_estimate: m,
            };
        }
    }
    CertifyOutcome {
        accepted: false,
        samples_used: drawn,
        m_estimate: successes_ratio(successes, drawn),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceStudy {
    pub nu_true: f64,
    pub trials: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub mean_samples: f64,
    pub min_accept_samples: Option<u64>,
}

/// Repeat [`certify_bernoulli`] over independent trials and report the
/// acceptance rate; trials run in parallel with per-trial streams.
pub fn theorem1_acceptance_study(
    nu: f64,
    config: &SafetyConfig,
    trials: u64,
    key: StreamKey,
) -> AcceptanceStudy {
    let outcomes: Vec<CertifyOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| certify_bernoulli(nu, config, key.child(t)))
        .collect();
    let accepted = outcomes.iter().filter(|o| o.accepted).count() as u64;
    let mean_samples =
        outcomes.iter().map(|o| o.samples_used as f64).sum::<f64>() / trials.max(1) as f64;
    let min_accept_samples = outcomes
        .iter()
        .filter(|o| o.accepted)
        .map(|o| o.samples_used)
        .min();
    AcceptanceStudy {
        nu_true: nu,
        trials,
        accepted,
        acceptance_rate: accepted as f64 / trials.max(1) as f64,
        mean_samples,
        min_accept_samples,
    }
}

fn certify_context(ctx: &XContext, config: &SafetyConfig, key: StreamKey) -> CertifyOutcome {
    let n = ctx.node_count();
    let mut drawn = 0u64;
    let mut successes = 0u64;
    while drawn < config.max_samples {
        let batch = config.batch_size.min(config.max_samples - drawn);
        successes += (drawn..drawn + batch)
            .into_par_iter()
            .map_init(
                || XScratch::new(n),
                |scratch, i| {
                    let mut rng = key.child(i).rng();
                    ctx.sample(&mut rng, scratch) as u64
                },
            )
            .sum::<u64>();
        drawn += batch;
        let m = successes as f64 / drawn as f64;
        if certify_accepts(m, drawn, config.epsilon, config.beta) {
            return CertifyOutcome {
                accepted: true,
                samples_used: drawn,
                m_estimate: m,
            };
        }
    }
    CertifyOutcome {
        accepted: false,
        samples_used: drawn,
        m_estimate: successes_ratio(successes, drawn),
    }
}

/// Test one command against the under-voltage chance constraint.
pub fn test_command(
    obs: &UtilityObservation,
    load: &LoadModel,
    config: &SafetyConfig,
    command: f64,
    feeder: &FeederModel,
    key: StreamKey,
) -> Result<CertifyOutcome, UtilityError> {
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
    Ok(certify_context(&ctx, config, key))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeRecord {
    pub u: f64,
    pub accepted: bool,
    pub samples_used: u64,
    pub m_estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintOutcome {
    pub lower: f64,
    pub upper: f64,
    pub infeasible: bool,
    pub samples_used: u64,
    /// Estimate from the probe that fixed the upper bound.
    pub accepted_m: f64,
    pub probes: Vec<ProbeRecord>,
}

impl ConstraintOutcome {
    pub fn set(&self) -> ConstraintSet {
        ConstraintSet::new(self.lower, self.upper)
            .unwrap_or_else(|_| ConstraintSet::degenerate(-1.0))
    }
}

/// Construct the widest command interval that passes certification.
///
/// Upper bound: certify `u = 1` outright, otherwise bisect between an
/// accepted low point and a rejected high point until the bracket closes to
/// `bisection_tol`, returning the last accepted point. If even `u = -1`
/// fails, the result is the degenerate set `[-1, -1]` with the infeasible
/// flag raised. A lower bound above -1 is searched symmetrically against the
/// over-voltage indicator when a ceiling is configured. Every probe draws
/// fresh streams keyed by its probe index; no samples are recycled between
/// probes.
pub fn construct_constraint_set(
    obs: &UtilityObservation,
    load: &LoadModel,
    config: &SafetyConfig,
    feeder: &FeederModel,
    key: StreamKey,
) -> Result<ConstraintOutcome, UtilityError> {
    let mut probes: Vec<ProbeRecord> = Vec::new();
    let mut probe_idx = 0u64;
    let mut total = 0u64;
    let mut run_probe = |u: f64,
                         indicator: Indicator,
                         probes: &mut Vec<ProbeRecord>,
                         total: &mut u64|
     -> Result<CertifyOutcome, UtilityError> {
        let ctx = XContext::new(obs, load, config, u, feeder, indicator)?;
        let out = certify_context(&ctx, config, key.child(probe_idx));
        probe_idx += 1;
        *total += out.samples_used;
        probes.push(ProbeRecord {
            u,
            accepted: out.accepted,
            samples_used: out.samples_used,
            m_estimate: out.m_estimate,
        });
        Ok(out)
    };

    let under = Indicator::UnderVoltage {
        floor: config.v_floor,
    };
    let top = run_probe(1.0, under, &mut probes, &mut total)?;
    let (upper, accepted_m, infeasible) = if top.accepted {
        (1.0, top.m_estimate, false)
    } else {
        let bottom = run_probe(-1.0, under, &mut probes, &mut total)?;
        if !bottom.accepted {
            return Ok(ConstraintOutcome {
                lower: -1.0,
                upper: -1.0,
                infeasible: true,
                samples_used: total,
                accepted_m: bottom.m_estimate,
                probes,
            });
        }
        let mut lo = -1.0;
        let mut lo_m = bottom.m_estimate;
        let mut hi = 1.0;
        while hi - lo > config.bisection_tol {
            let mid = 0.5 * (lo + hi);
            let r = run_probe(mid, under, &mut probes, &mut total)?;
            if r.accepted {
                lo = mid;
                lo_m = r.m_estimate;
            } else {
                hi = mid;
            }
        }
        (lo, lo_m, false)
    };

    let mut lower = -1.0;
    if let Some(ceiling) = config.v_ceiling {
        let over = Indicator::OverVoltage { ceiling };
        let bottom = run_probe(-1.0, over, &mut probes, &mut total)?;
        if !bottom.accepted {
            // over-voltage risk grows as u decreases; search upward
            let at_upper = run_probe(upper, over, &mut probes, &mut total)?;
            if !at_upper.accepted {
                return Ok(ConstraintOutcome {
                    lower: upper,
                    upper,
                    infeasible: true,
                    samples_used: total,
                    accepted_m: accepted_m,
                    probes,
                });
            }
            let mut rej = -1.0;
            let mut acc = upper;
            while acc - rej > config.bisection_tol {
                let mid = 0.5 * (rej + acc);
                let r = run_probe(mid, over, &mut probes, &mut total)?;
                if r.accepted {
                    acc = mid;
                } else {
                    rej = mid;
                }
            }
            lower = acc;
        }
    }

    Ok(ConstraintOutcome {
        lower,
        upper,
        infeasible,
        samples_used: total,
        accepted_m,
        probes,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub u: f64,
    pub nu_hat: f64,
    pub std_err: f64,
    pub n_samples: u64,
}

/// Plain Monte-Carlo estimate of the safety probability on a command grid;
/// the diagnostic used for monotonicity validation.
pub fn estimate_safety_curve(
    obs: &UtilityObservation,
    load: &LoadModel,
    config: &SafetyConfig,
    feeder: &FeederModel,
    u_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<Vec<CurvePoint>, UtilityError> {
    if n_samples == 0 {
        return Err(UtilityError::Config(
            "safety curve needs at least one sample".into(),
        ));
    }
    let mut prev = f64::NEG_INFINITY;
    for &u in u_grid {
        if !(-1.0..=1.0).contains(&u) || u < prev {
            return Err(UtilityError::Config(
                "u grid must be sorted within [-1, 1]".into(),
            ));
        }
        prev = u;
    }
    let n = feeder.node_count();
    let mut out = Vec::with_capacity(u_grid.len());
    for (gi, &u) in u_grid.iter().enumerate() {
        let ctx = XContext::new(
            obs,
            load,
            config,
            u,
            feeder,
            Indicator::UnderVoltage {
                floor: config.v_floor,
            },
        )?;
        let point_key = key.child(gi as u64);
        let successes: u64 = (0..n_samples)
            .into_par_iter()
            .map_init(
                || XScratch::new(n),
                |scratch, i| {
                    let mut rng = point_key.child(i).rng();
                    ctx.sample(&mut rng, scratch) as u64
                },
            )
            .sum();
        let nu_hat = successes as f64 / n_samples as f64;
        let std_err = (nu_hat * (1.0 - nu_hat) / n_samples as f64).sqrt();
        out.push(CurvePoint {
            u,
            nu_hat,
            std_err,
            n_samples,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epsilon: f64, beta: f64, max: u64, batch: u64) -> SafetyConfig {
        SafetyConfig {
            epsilon,
            beta,
            max_samples: max,
            batch_size: batch,
            ..SafetyConfig::default()
        }
    }

    #[test]
    fn perfect_stream_accepts_at_minimal_sample_count() {
        // batch of 1 so acceptance lands exactly at the first n exceeding
        // the bound: floor(34768.27) + 1
        let config = cfg(0.02, 0.001, 100_000, 1);
        let out = certify_bernoulli(1.0, &config, StreamKey::new(5));
        assert!(out.accepted);
        assert_eq!(out.samples_used, 34_769);
        assert_eq!(out.m_estimate, 1.0);
    }

    #[test]
    fn estimate_below_threshold_never_accepts() {
        // m stuck at ~0.94 < 1 - 0.05: condition 1 can never hold
        let config = cfg(0.05, 0.001, 50_000, 2_000);
        let out = certify_bernoulli(0.94, &config, StreamKey::new(6));
        assert!(!out.accepted);
        assert_eq!(out.samples_used, 50_000);
        assert!((out.m_estimate - 0.94).abs() < 0.01);
    }

    #[test]
    fn unsafe_stream_rarely_accepted() {
        // nu = 0.90 < 1 - eps = 0.95: acceptance probability <= beta
        let config = cfg(0.05, 0.001, 20_000, 2_000);
        let study = theorem1_acceptance_study(0.90, &config, 400, StreamKey::new(7));
        assert!(
            study.acceptance_rate <= 0.01,
            "acceptance rate {}",
            study.acceptance_rate
        );
    }

    #[test]
    fn safe_stream_reliably_accepted() {
        let config = cfg(0.05, 0.001, 100_000, 2_000);
        let study = theorem1_acceptance_study(0.99, &config, 200, StreamKey::new(8));
        assert!(
            study.acceptance_rate >= 0.99,
            "acceptance rate {}",
            study.acceptance_rate
        );
        // accepted runs need at least the m=1 bound worth of samples
        assert!(study.min_accept_samples.unwrap() as f64 > 5_617.0);
    }

    use crate::grid::NodalInjection;
    use crate::grid::{Bases, BranchSpec, FeederModel};
    use crate::utility::load::{MultiplierProfile, TimeBase};
    use crate::utility::{LoadModel, UtilityObservation};

    fn line_feeder() -> FeederModel {
        FeederModel::new(
            1,
            &[BranchSpec {
                from: 0,
                to: 1,
                r: 0.01,
                x: 0.01,
            }],
            1.0,
            Bases::default(),
        )
        .unwrap()
    }

    fn flat_load(nominal_kw: f64, mu: f64) -> LoadModel {
        LoadModel::new(
            vec![nominal_kw],
            vec![0.3 * nominal_kw],
            0.1,
            -0.25,
            0.675,
            0.0,
            MultiplierProfile::constant(mu),
            TimeBase {
                start_hour: 13.0,
                dt_s: 60.0,
            },
        )
        .unwrap()
    }

    fn observation(tcl: u64, pbar_kw: f64, measured_kw: f64) -> UtilityObservation {
        UtilityObservation {
            step: 0,
            measured: NodalInjection::new(vec![measured_kw], vec![0.3 * measured_kw]),
            w_on_hat: vec![0.1],
            w_off_hat: vec![0.1],
            tcl_counts: vec![tcl],
            avg_real_kw: vec![pbar_kw],
            avg_reactive_kvar: vec![0.3 * pbar_kw],
        }
    }

    #[test]
    fn lightly_loaded_network_gets_the_full_interval() {
        let f = line_feeder();
        let load = flat_load(20.0, 0.3);
        let obs = observation(5, 4.0, 10.0);
        let config = cfg(0.05, 0.01, 30_000, 2_000);
        let out = construct_constraint_set(&obs, &load, &config, &f, StreamKey::new(40)).unwrap();
        assert!(!out.infeasible);
        assert_eq!((out.lower, out.upper), (-1.0, 1.0));
        // safe everywhere: the diagnostic curve is identically one
        let curve = estimate_safety_curve(
            &obs,
            &load,
            &config,
            &f,
            &[-1.0, -0.5, 0.0, 0.5, 1.0],
            2_000,
            StreamKey::new(41),
        )
        .unwrap();
        assert!(curve.iter().all(|p| p.nu_hat == 1.0));
    }

    #[test]
    fn hopeless_loading_degenerates_with_infeasible_flag() {
        let f = line_feeder();
        // loads alone guarantee an under-voltage violation at every draw
        let load = flat_load(60_000.0, 0.5);
        let obs = observation(3, 5.0, 30_000.0);
        let config = cfg(0.05, 0.01, 10_000, 2_000);
        let out = construct_constraint_set(&obs, &load, &config, &f, StreamKey::new(42)).unwrap();
        assert!(out.infeasible);
        assert_eq!((out.lower, out.upper), (-1.0, -1.0));
        assert_eq!(out.set().lower(), -1.0);
        assert_eq!(out.set().upper(), -1.0);
    }

    #[test]
    fn linearized_mc_estimate_dominates_sweep_estimate() {
        // identical streams, per-sample voltage dominance: the linearized
        // solver can only flip unsafe realizations to safe, never the
        // reverse, so its estimate is pointwise >= the sweep's
        let f = line_feeder();
        let load = flat_load(25_000.0, 0.5);
        let obs = observation(100, 80.0, 18_000.0);
        let sweep_cfg = cfg(0.05, 0.01, 30_000, 2_000);
        let mut lin_cfg = sweep_cfg.clone();
        lin_cfg.use_lindistflow_in_mc = true;
        let grid = [-0.5, 0.0, 0.5, 1.0];
        let key = StreamKey::new(44);
        let sweep = estimate_safety_curve(&obs, &load, &sweep_cfg, &f, &grid, 5_000, key).unwrap();
        let lin = estimate_safety_curve(&obs, &load, &lin_cfg, &f, &grid, 5_000, key).unwrap();
        let mut some_mass_interior = false;
        for (s, l) in sweep.iter().zip(&lin) {
            assert!(
                l.nu_hat >= s.nu_hat,
                "u={}: lin {} < sweep {}",
                s.u,
                l.nu_hat,
                s.nu_hat
            );
            if s.nu_hat > 0.0 && s.nu_hat < 1.0 {
                some_mass_interior = true;
            }
        }
        assert!(
            some_mass_interior,
            "configuration never stressed the boundary"
        );
    }

    #[test]
    fn over_voltage_ceiling_raises_the_lower_bound() {
        let f = line_feeder();
        // strong net generation: voltage sits above v0 unless TCLs consume
        let load = flat_load(-4_000.0, 0.5);
        let obs = observation(200, 10.0, -1_000.0);
        let mut config = cfg(0.05, 0.01, 20_000, 2_000);
        config.v_ceiling = Some(1.012);
        let out = construct_constraint_set(&obs, &load, &config, &f, StreamKey::new(43)).unwrap();
        assert!(!out.infeasible, "probes: {:?}", out.probes);
        assert!(
            out.lower > -1.0,
            "expected a binding over-voltage lower bound, got {}",
            out.lower
        );
        assert!(out.lower <= out.upper);
    }

    #[test]
    fn run_certification_generic_bernoulli_agreement() {
        // the generic runner and the specialized Bernoulli path implement
        // the same acceptance logic
        let config = cfg(0.05, 0.01, 30_000, 1_000);
        let key = StreamKey::new(9);
        let nu = 0.97;
        let threshold = (nu * 2.0f64.powi(64)) as u64;
        let generic = run_certification(&config, key, |k| k.raw() < threshold);
        let special = certify_bernoulli(nu, &config, key);
        assert_eq!(generic.accepted, special.accepted);
        assert_eq!(generic.samples_used, special.samples_used);
        assert_eq!(generic.m_estimate, special.m_estimate);
    }
}
