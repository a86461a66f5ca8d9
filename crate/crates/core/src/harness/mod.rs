//! Closed-loop scenario engine: per step the utility constructs the command
//! constraint set, the aggregator picks the command, the fleet steps, and
//! ground-truth safety is evaluated with the exact solver on exact
//! device-level powers.

mod opf;
mod persist;

pub use opf::{assign_modes, OpfAssignment, OpfInputs};
pub use persist::{
    write_curve_csv, write_plot_csv, write_results_jsonl, write_summary_csv, SummaryRow,
};

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{
    build_bin_model, choose_command, signal, AggError, BinModel, ConstraintSet,
};
use crate::grid::{
    calibrate_impedance_scale, generate_feeder, load_feeder, solve_distflow, Bases, FeederModel,
    FeederShape, GridError, NodalInjection, SynthFeederSpec, DEFAULT_SWEEP_MAX_ITER,
    DEFAULT_SWEEP_TOL,
};
use crate::stream::StreamKey;
use crate::tcl::{ParamRanges, TclError, TclPopulation};
use crate::utility::{
    construct_constraint_set, LoadModel, MultiplierProfile, SafetyConfig, TimeBase, UtilityError,
    UtilityObservation,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tcl(#[from] TclError),
    #[error(transparent)]
    Aggregator(#[from] AggError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Certified constraint set from the utility, tracking inside it.
    Proposed,
    /// Pure tracking with the constraint set forced to [-1, 1].
    Tracking,
    /// Direct mode assignment against worst-case loads.
    OpfBenchmark,
}

impl ControllerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::Tracking => "tracking",
            ControllerKind::OpfBenchmark => "opf",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeederSource {
    File(PathBuf),
    Synthetic(SyntheticFeederCfg),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFeederCfg {
    pub shape: FeederShape,
    pub nodes: usize,
    pub r_range: (f64, f64),
    pub x_range: (f64, f64),
    pub v0: f64,
    pub bases: Bases,
    /// When set, scale impedances so the no-TCL sweep minimum voltage at the
    /// peak mean load equals this target.
    pub calibrate_min_voltage: Option<f64>,
}

impl Default for SyntheticFeederCfg {
    fn default() -> Self {
        SyntheticFeederCfg {
            shape: FeederShape::ChainWithBranches,
            nodes: 8,
            r_range: (0.004, 0.012),
            x_range: (0.003, 0.009),
            v0: 1.0,
            bases: Bases::default(),
            calibrate_min_voltage: Some(0.96),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Uniform(f64),
    Explicit(Vec<f64>),
}

impl PerNode {
    fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>, HarnessError> {
        match self {
            PerNode::Uniform(v) => Ok(vec![*v; n]),
            PerNode::Explicit(v) if v.len() == n => Ok(v.clone()),
            PerNode::Explicit(v) => Err(HarnessError::Config(format!(
                "{what}: expected {n} entries, got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub count: usize,
    pub ranges: ParamRanges,
    /// Node weights for device placement; `None` follows the nominal loads,
    /// which makes per-node TCL power a fixed fraction of the load there.
    pub node_weights: Option<Vec<f64>>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            count: 320,
            ranges: ParamRanges::default(),
            node_weights: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadSpec {
    pub nominal_real_kw: PerNode,
    /// Reactive nominals follow the power factor unless given explicitly.
    pub nominal_reactive_kvar: Option<PerNode>,
    pub power_factor: f64,
    pub sigma_frac: f64,
    pub trunc_lo_frac: f64,
    pub trunc_hi_frac: f64,
    pub rho: f64,
    pub multiplier_knots: Vec<(f64, f64)>,
}

impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec {
            nominal_real_kw: PerNode::Uniform(1000.0),
            nominal_reactive_kvar: None,
            power_factor: 0.95,
            sigma_frac: 0.15,
            trunc_lo_frac: -0.25,
            trunc_hi_frac: 0.675,
            rho: 0.0,
            multiplier_knots: vec![(13.0, 0.5), (13.9, 0.65), (14.1, 0.65), (15.0, 0.5)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    File(PathBuf),
    Synthetic { seed_tag: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSpec {
    pub source: ReferenceSource,
    /// kW per unit of raw signal; `None` scales to a fixed fraction of the
    /// fleet's rated power.
    pub scale_kw: Option<f64>,
    /// kW added to the scaled signal; `None` centers on the fleet's
    /// stationary baseline power.
    pub offset_kw: Option<f64>,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            source: ReferenceSource::Synthetic { seed_tag: 0 },
            scale_kw: None,
            offset_kw: None,
        }
    }
}

/// Fraction of the fleet's rated power used as the reference amplitude when
/// `scale_kw` is not given. High enough that an unconstrained tracker is
/// pushed past the voltage boundary near the load peak.
const AUTO_REF_SCALE_FRAC: f64 = 0.65;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub feeder: FeederSource,
    pub population: PopulationSpec,
    pub loads: LoadSpec,
    pub reference: ReferenceSpec,
    pub dt_s: f64,
    pub start_hour: f64,
    pub horizon_steps: usize,
    pub safety: SafetyConfig,
    pub controller: ControllerKind,
    pub bin_count: usize,
    pub command_grid_step: f64,
    pub seed: u64,
    /// Worker threads for the Monte-Carlo inner loop; `None` uses all cores.
    /// Outputs are identical for any value.
    pub parallelism: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            feeder: FeederSource::Synthetic(SyntheticFeederCfg::default()),
            population: PopulationSpec::default(),
            loads: LoadSpec::default(),
            reference: ReferenceSpec::default(),
            dt_s: 60.0,
            start_hour: 13.0,
            horizon_steps: 120,
            // a per-step closed loop re-certifies every minute; a lighter
            // sample budget than the stand-alone default keeps runs quick
            // at the cost of slightly more conservative bounds
            safety: SafetyConfig {
                max_samples: 40_000,
                ..SafetyConfig::default()
            },
            controller: ControllerKind::Proposed,
            bin_count: 20,
            command_grid_step: 0.01,
            seed: 1,
            parallelism: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn with_controller(&self, controller: ControllerKind) -> Self {
        let mut c = self.clone();
        c.controller = controller;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub time_h: f64,
    pub p_ref_kw: f64,
    pub p_agg_kw: f64,
    pub u: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub min_voltage: Option<f64>,
    pub safe: bool,
    pub samples_used: u64,
    pub infeasible: bool,
    pub accepted_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub rmse_kw: f64,
    pub safety_probability: f64,
    pub violation_count: u64,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub controller: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub summary: ScenarioSummary,
}

/// RMSE, empirical safety probability, and violation count over the records.
pub fn compute_metrics(records: &[StepRecord]) -> Result<ScenarioSummary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no step records to summarize".into()));
    }
    let n = records.len() as f64;
    let mse: f64 = records
        .iter()
        .map(|r| (r.p_agg_kw - r.p_ref_kw).powi(2))
        .sum::<f64>()
        / n;
    let safe = records.iter().filter(|r| r.safe).count();
    Ok(ScenarioSummary {
        rmse_kw: mse.sqrt(),
        safety_probability: safe as f64 / n,
        violation_count: (records.len() - safe) as u64,
        steps: records.len(),
        wall_time_s: 0.0,
    })
}

/// Everything a scenario needs, resolved and validated; build once, run one
/// controller, or reuse across controllers on the same seed.
pub struct ScenarioEnv {
    pub feeder: FeederModel,
    pub load: LoadModel,
    pub population: Option<TclPopulation>,
    pub bin_model: BinModel,
    pub reference_kw: Vec<f64>,
    pub config: ScenarioConfig,
}

impl ScenarioEnv {
    pub fn build(config: &ScenarioConfig) -> Result<Self, HarnessError> {
        if config.horizon_steps == 0 {
            return Err(HarnessError::Config(
                "horizon must be at least one step".into(),
            ));
        }
        if !(config.dt_s > 0.0) {
            return Err(HarnessError::Config("dt must be positive".into()));
        }
        if config.bin_count < 4 || config.bin_count % 2 != 0 {
            return Err(HarnessError::Config(
                "bin count must be even and at least 4".into(),
            ));
        }
        if !(config.command_grid_step > 0.0) {
            return Err(HarnessError::Config(
                "command grid step must be positive".into(),
            ));
        }
        config.safety.validate()?;
        if config.loads.multiplier_knots.is_empty() {
            return Err(HarnessError::Config(
                "load multiplier profile needs a knot".into(),
            ));
        }
        let key = StreamKey::new(config.seed);

        // loads profile is needed before feeder calibration
        let profile = MultiplierProfile {
            knots: config.loads.multiplier_knots.clone(),
        };
        let peak_mu = config
            .loads
            .multiplier_knots
            .iter()
            .map(|k| k.1)
            .fold(f64::NEG_INFINITY, f64::max);

        let feeder = match &config.feeder {
            FeederSource::File(path) => load_feeder(path)?,
            FeederSource::Synthetic(synth) => {
                let spec = SynthFeederSpec {
                    shape: synth.shape,
                    nodes: synth.nodes,
                    r_range: synth.r_range,
                    x_range: synth.x_range,
                    v0: synth.v0,
                    bases: synth.bases,
                };
                let raw = generate_feeder(&spec, key.child(7));
                match synth.calibrate_min_voltage {
                    None => raw,
                    Some(target) => {
                        // "peak load" is what the feeder actually sees: the
                        // mean of the truncated load distribution at the
                        // peak multiplier, per node
                        let n = raw.node_count();
                        let nominal = config.loads.nominal_real_kw.resolve(n, "nominal loads")?;
                        let reactive = resolve_reactive(&config.loads, &nominal, n)?;
                        let kw_to_pu = raw.bases().kw_to_pu(1.0);
                        let tmean = |nom: f64| {
                            crate::stats::truncated_normal_mean(
                                peak_mu * nom,
                                config.loads.sigma_frac * nom.abs(),
                                config.loads.trunc_lo_frac * nom,
                                config.loads.trunc_hi_frac * nom,
                            )
                        };
                        let peak = NodalInjection::new(
                            nominal.iter().map(|p| tmean(*p) * kw_to_pu).collect(),
                            reactive.iter().map(|q| tmean(*q) * kw_to_pu).collect(),
                        );
                        calibrate_impedance_scale(&raw, &peak, target)?
                    }
                }
            }
        };
        let n = feeder.node_count();
        let nominal_real = config.loads.nominal_real_kw.resolve(n, "nominal loads")?;
        let nominal_reactive = resolve_reactive(&config.loads, &nominal_real, n)?;
        let time = TimeBase {
            start_hour: config.start_hour,
            dt_s: config.dt_s,
        };
        let load = LoadModel::new(
            nominal_real.clone(),
            nominal_reactive,
            config.loads.sigma_frac,
            config.loads.trunc_lo_frac,
            config.loads.trunc_hi_frac,
            config.loads.rho,
            profile,
            time,
        )?;

        let population = if config.population.count == 0 {
            None
        } else {
            let weights = match &config.population.node_weights {
                Some(w) if w.len() == n => w.clone(),
                Some(w) => {
                    return Err(HarnessError::Config(format!(
                        "node_weights: expected {n} entries, got {}",
                        w.len()
                    )))
                }
                None => nominal_real.clone(),
            };
            Some(TclPopulation::sample(
                config.population.count,
                &weights,
                &config.population.ranges,
                config.dt_s,
                key.child(1),
            )?)
        };

        let rated_total = population.as_ref().map_or(0.0, |p| p.rated_total_kw());
        let bin_model = build_bin_model(
            &config.population.ranges.means(),
            rated_total,
            config.dt_s,
            config.bin_count,
        )?;

        let raw_signal = match &config.reference.source {
            ReferenceSource::File(path) => {
                let rows = signal::load_reference_csv(path)?;
                signal::resample_zoh(&rows, config.dt_s, config.horizon_steps)?
            }
            ReferenceSource::Synthetic { seed_tag } => signal::synthesize_reference(
                key.child(6).child(*seed_tag),
                config.horizon_steps,
                config.dt_s,
            ),
        };
        let scale = config
            .reference
            .scale_kw
            .unwrap_or(AUTO_REF_SCALE_FRAC * rated_total);
        let offset = config.offset_or_baseline(&bin_model);
        let reference_kw = raw_signal.iter().map(|v| offset + scale * v).collect();

        Ok(ScenarioEnv {
            feeder,
            load,
            population,
            bin_model,
            reference_kw,
            config: config.clone(),
        })
    }
}

impl ScenarioConfig {
    fn offset_or_baseline(&self, bin_model: &BinModel) -> f64 {
        self.reference
            .offset_kw
            .unwrap_or(bin_model.rated_power_total_kw() * bin_model.on_mass())
    }
}

fn resolve_reactive(
    loads: &LoadSpec,
    nominal_real: &[f64],
    n: usize,
) -> Result<Vec<f64>, HarnessError> {
    match &loads.nominal_reactive_kvar {
        Some(q) => q.resolve(n, "nominal reactive loads"),
        None => {
            if !(loads.power_factor > 0.0 && loads.power_factor < 1.0) {
                return Err(HarnessError::Config(
                    "power factor must lie in (0, 1)".into(),
                ));
            }
            let ratio = loads.power_factor.acos().tan();
            Ok(nominal_real.iter().map(|p| p * ratio).collect())
        }
    }
}

/// Synthetic utility observation at a given hour: expected (truncated-mean)
/// loads plus the fleet's duty-cycle consumption, with switch-fraction
/// forecasts from the aggregate model's current state. The stand-in for a
/// mid-scenario smart-meter snapshot in diagnostics.
pub fn representative_observation(env: &ScenarioEnv, hour: f64) -> UtilityObservation {
    let n = env.feeder.node_count();
    let duty = env
        .population
        .as_ref()
        .map(|p| {
            p.params()
                .iter()
                .map(|q| q.duty_cycle_estimate())
                .sum::<f64>()
                / p.len() as f64
        })
        .unwrap_or(0.0);
    let tcl_counts = env
        .population
        .as_ref()
        .map_or(vec![0u64; n], |p| p.tcl_counts().to_vec());
    let avg_real = env
        .population
        .as_ref()
        .map_or(vec![0.0; n], |p| p.avg_real_kw().to_vec());
    let avg_reactive = env
        .population
        .as_ref()
        .map_or(vec![0.0; n], |p| p.avg_reactive_kvar().to_vec());
    let mu = env.load.multiplier(hour);
    let tmean = |nom: f64| {
        crate::stats::truncated_normal_mean(
            mu * nom,
            env.config.loads.sigma_frac * nom.abs(),
            env.config.loads.trunc_lo_frac * nom,
            env.config.loads.trunc_hi_frac * nom,
        )
    };
    let measured_real: Vec<f64> = (0..n)
        .map(|j| tmean(env.load.nominal_real_kw()[j]) + duty * avg_real[j] * tcl_counts[j] as f64)
        .collect();
    let measured_reactive: Vec<f64> = (0..n)
        .map(|j| {
            tmean(env.load.nominal_reactive_kvar()[j])
                + duty * avg_reactive[j] * tcl_counts[j] as f64
        })
        .collect();
    let (w_on, w_off) = env.bin_model.estimate_w_fractions();
    let step = ((hour - env.load.time().start_hour) * 3600.0 / env.load.time().dt_s)
        .max(0.0)
        .round() as usize;
    UtilityObservation {
        step,
        measured: NodalInjection::new(measured_real, measured_reactive),
        w_on_hat: vec![w_on; n],
        w_off_hat: vec![w_off; n],
        tcl_counts,
        avg_real_kw: avg_real,
        avg_reactive_kvar: avg_reactive,
    }
}

/// Run the configured controller over the horizon. Deterministic for a
/// fixed config and seed, for any parallelism degree.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let env = ScenarioEnv::build(config)?;
    run_in_env(env)
}

/// Tracking benchmark: identical loop with the constraint set pinned to
/// [-1, 1].
pub fn run_tracking_benchmark(config: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    run_scenario(&config.with_controller(ControllerKind::Tracking))
}

/// Mode-assignment benchmark against worst-case loads.
pub fn run_opf_benchmark(config: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    run_scenario(&config.with_controller(ControllerKind::OpfBenchmark))
}

pub fn run_in_env(mut env: ScenarioEnv) -> Result<ScenarioResult, HarnessError> {
    let started = Instant::now();
    let config = env.config.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    let key = StreamKey::new(config.seed);
    let feeder = &env.feeder;
    let n = feeder.node_count();
    let kw_to_pu = feeder.bases().kw_to_pu(1.0);
    let zeros = NodalInjection::zeros(n);

    // initial observation: the fleet's starting consumption plus one load
    // draw; switch-fraction forecast from the aggregate model's start state
    let tcl_counts = env
        .population
        .as_ref()
        .map_or(vec![0u64; n], |p| p.tcl_counts().to_vec());
    let avg_real = env
        .population
        .as_ref()
        .map_or(vec![0.0; n], |p| p.avg_real_kw().to_vec());
    let avg_reactive = env
        .population
        .as_ref()
        .map_or(vec![0.0; n], |p| p.avg_reactive_kvar().to_vec());
    let mut obs = {
        let mut measured = env
            .population
            .as_ref()
            .map_or(zeros.clone(), |p| p.nodal_power_kw());
        let init_loads = env
            .load
            .sample_all(env.load.hour(0), &mut key.child(5).rng());
        measured.add_assign(&init_loads);
        let (w_on, w_off) = env.bin_model.estimate_w_fractions();
        UtilityObservation {
            step: 0,
            measured,
            w_on_hat: vec![w_on; n],
            w_off_hat: vec![w_off; n],
            tcl_counts: tcl_counts.clone(),
            avg_real_kw: avg_real.clone(),
            avg_reactive_kvar: avg_reactive.clone(),
        }
    };

    let worst_loads_pu = NodalInjection::new(
        env.load
            .max_real_kw()
            .iter()
            .map(|p| p * kw_to_pu)
            .collect(),
        env.load
            .max_reactive_kvar()
            .iter()
            .map(|q| q * kw_to_pu)
            .collect(),
    );

    let mut records = Vec::with_capacity(config.horizon_steps);
    for t in 0..config.horizon_steps {
        let p_ref = env.reference_kw[t];
        let mut samples_used = 0;
        let mut infeasible = false;
        let mut accepted_m = None;
        let (u, lower, upper, step_out) = match config.controller {
            ControllerKind::Tracking | ControllerKind::Proposed => {
                let set = if config.controller == ControllerKind::Tracking {
                    ConstraintSet::full()
                } else {
                    let outcome = pool.install(|| {
                        construct_constraint_set(
                            &obs,
                            &env.load,
                            &config.safety,
                            feeder,
                            key.child(4).child(t as u64),
                        )
                    })?;
                    samples_used = outcome.samples_used;
                    infeasible = outcome.infeasible;
                    accepted_m = Some(outcome.accepted_m);
                    outcome.set()
                };
                let u = choose_command(&env.bin_model, p_ref, &set, config.command_grid_step);
                let out = env.population.as_mut().map(|p| {
                    let mut rng = key.child(3).child(t as u64).rng();
                    p.step(u, &mut rng)
                });
                env.bin_model.step(u);
                (Some(u), Some(set.lower()), Some(set.upper()), out)
            }
            ControllerKind::OpfBenchmark => {
                let out = match env.population.as_mut() {
                    None => None,
                    Some(p) => {
                        let inputs = OpfInputs {
                            feeder,
                            v_floor: config.safety.v_floor,
                            worst_loads_pu: worst_loads_pu.clone(),
                        };
                        let assignment = assign_modes(p, p_ref, &inputs);
                        infeasible = assignment.voltage_infeasible;
                        Some(p.step_with_assignment(&assignment.modes))
                    }
                };
                (None, None, None, out)
            }
        };

        let p_agg = step_out.as_ref().map_or(0.0, |o| o.aggregate_real_kw);
        // realized uncontrollable loads for this step
        let loads_t = env
            .load
            .sample_all(env.load.hour(t), &mut key.child(2).child(t as u64).rng());
        // ground truth: exact device powers + realized loads, full sweep
        let mut truth_kw = env
            .population
            .as_ref()
            .map_or(zeros.clone(), |p| p.nodal_power_kw());
        truth_kw.add_assign(&loads_t);
        let truth_pu = truth_kw.scaled(kw_to_pu);
        let (min_voltage, safe) =
            match solve_distflow(feeder, &truth_pu, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER) {
                Ok(sol) if sol.converged => {
                    let mv = sol.min_voltage();
                    (Some(mv), mv >= config.safety.v_floor)
                }
                Ok(_) => {
                    log::warn!("step {t}: ground-truth sweep unconverged; recording unsafe");
                    (None, false)
                }
                Err(GridError::VoltageCollapse { node, .. }) => {
                    log::warn!("step {t}: ground-truth voltage collapse at node {node}");
                    (None, false)
                }
                Err(e) => return Err(e.into()),
            };

        // next observation: smart-meter totals at t plus fresh forecasts
        let (w_on, w_off) = env.bin_model.estimate_w_fractions();
        obs = UtilityObservation {
            step: t,
            measured: truth_kw,
            w_on_hat: vec![w_on; n],
            w_off_hat: vec![w_off; n],
            tcl_counts: tcl_counts.clone(),
            avg_real_kw: avg_real.clone(),
            avg_reactive_kvar: avg_reactive.clone(),
        };

        records.push(StepRecord {
            t,
            time_h: env.load.hour(t),
            p_ref_kw: p_ref,
            p_agg_kw: p_agg,
            u,
            lower,
            upper,
            min_voltage,
            safe,
            samples_used,
            infeasible,
            accepted_m,
        });
    }

    let mut summary = compute_metrics(&records)?;
    summary.wall_time_s = started.elapsed().as_secs_f64();
    Ok(ScenarioResult {
        controller: config.controller.label().to_string(),
        seed: config.seed,
        records,
        summary,
    })
}
