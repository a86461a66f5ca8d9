//! C ABI for the voltflex simulation library.
//!
//! Conventions: every fallible call returns a [`VfStatus`] code and writes
//! results through out-pointers; handles are opaque and freed with their
//! `_free` function; string arguments are NUL-terminated UTF-8. On any
//! failure a thread-local message is set, readable via
//! [`vf_last_error_message`] until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use voltflex::grid::{
    load_feeder, solve_distflow, solve_lindistflow, FeederModel, NodalInjection,
    DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL,
};
use voltflex::harness::{run_in_env, ScenarioConfig, ScenarioEnv};
use voltflex::stats::certify_min_samples;
use voltflex::stream::StreamKey;
use voltflex::utility::{certify_bernoulli, SafetyConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    /// Invalid configuration, file contents, or argument values.
    ConfigError = 1,
    /// Runtime failure (io, solver divergence).
    RuntimeError = 2,
    /// A required pointer argument was null.
    NullArgument = 3,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 4,
    /// A panic was caught at the boundary; state may be stale.
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: VfStatus, msg: &str) -> VfStatus {
    set_error(msg);
    status
}

/// Message for the most recent failure on this thread. Borrowed; valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn guard<F: FnOnce() -> VfStatus>(f: F) -> VfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(VfStatus::Panic, "panic caught at the C boundary"),
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, VfStatus> {
    if ptr.is_null() {
        return Err(VfStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(VfStatus::InvalidUtf8),
    }
}

/// Opaque radial feeder handle.
pub struct VfFeeder {
    inner: FeederModel,
}

/// Load a feeder from a JSON file. On success writes a new handle that must
/// be released with [`vf_feeder_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid for a
/// single pointer write.
#[no_mangle]
pub unsafe extern "C" fn vf_feeder_load(path: *const c_char, out: *mut *mut VfFeeder) -> VfStatus {
    guard(|| {
        if out.is_null() {
            return fail(VfStatus::NullArgument, "out handle pointer is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return fail(s, "invalid path argument"),
        };
        match load_feeder(Path::new(&path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(VfFeeder { inner: model }));
                VfStatus::Ok
            }
            Err(e) => fail(VfStatus::ConfigError, &e.to_string()),
        }
    })
}

/// Release a feeder handle. Null is a no-op.
///
/// # Safety
/// `feeder` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn vf_feeder_free(feeder: *mut VfFeeder) {
    if !feeder.is_null() {
        drop(Box::from_raw(feeder));
    }
}

/// Number of nodes excluding the substation.
///
/// # Safety
/// `feeder` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vf_feeder_node_count(
    feeder: *const VfFeeder,
    out: *mut usize,
) -> VfStatus {
    guard(|| {
        if feeder.is_null() || out.is_null() {
            return fail(VfStatus::NullArgument, "null handle or out pointer");
        }
        *out = (*feeder).inner.node_count();
        VfStatus::Ok
    })
}

unsafe fn solve_common(
    feeder: *const VfFeeder,
    real_pu: *const f64,
    reactive_pu: *const f64,
    len: usize,
    voltages_out: *mut f64,
    linearized: bool,
) -> VfStatus {
    if feeder.is_null() || real_pu.is_null() || reactive_pu.is_null() || voltages_out.is_null() {
        return fail(VfStatus::NullArgument, "null argument");
    }
    let model = &(*feeder).inner;
    if len != model.node_count() {
        return fail(
            VfStatus::ConfigError,
            &format!(
                "injection length {len} != node count {}",
                model.node_count()
            ),
        );
    }
    let inj = NodalInjection::new(
        std::slice::from_raw_parts(real_pu, len).to_vec(),
        std::slice::from_raw_parts(reactive_pu, len).to_vec(),
    );
    let solved = if linearized {
        solve_lindistflow(model, &inj)
    } else {
        solve_distflow(model, &inj, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER)
    };
    match solved {
        Ok(sol) if sol.converged => {
            std::ptr::copy_nonoverlapping(sol.voltage.as_ptr(), voltages_out, len);
            VfStatus::Ok
        }
        Ok(_) => fail(VfStatus::RuntimeError, "sweep did not converge"),
        Err(e) => fail(VfStatus::RuntimeError, &e.to_string()),
    }
}

/// Exact branch-flow solve; writes `len` per-unit voltage magnitudes.
///
/// # Safety
/// Pointers must reference arrays of length `len`; `feeder` must be live.
#[no_mangle]
pub unsafe extern "C" fn vf_feeder_solve_distflow(
    feeder: *const VfFeeder,
    real_pu: *const f64,
    reactive_pu: *const f64,
    len: usize,
    voltages_out: *mut f64,
) -> VfStatus {
    guard(|| solve_common(feeder, real_pu, reactive_pu, len, voltages_out, false))
}

/// Linearized solve; same contract as [`vf_feeder_solve_distflow`].
///
/// # Safety
/// Pointers must reference arrays of length `len`; `feeder` must be live.
#[no_mangle]
pub unsafe extern "C" fn vf_feeder_solve_lindistflow(
    feeder: *const VfFeeder,
    real_pu: *const f64,
    reactive_pu: *const f64,
    len: usize,
    voltages_out: *mut f64,
) -> VfStatus {
    guard(|| solve_common(feeder, real_pu, reactive_pu, len, voltages_out, true))
}

/// Scenario summary returned by [`vf_run_scenario`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VfSummary {
    pub rmse_kw: f64,
    pub safety_probability: f64,
    pub violation_count: u64,
    pub steps: u64,
}

/// Sentinel for "no seed override" in [`vf_run_scenario`].
pub const VF_NO_SEED_OVERRIDE: u64 = u64::MAX;

/// Run one scenario from a JSON config file. Pass [`VF_NO_SEED_OVERRIDE`]
/// to keep the config's seed. When `out_dir` is non-null, results.jsonl,
/// summary.csv and plot.csv are written there.
///
/// # Safety
/// `config_path` must be valid; `out_dir` may be null; `summary_out` must be
/// valid for one struct write.
#[no_mangle]
pub unsafe extern "C" fn vf_run_scenario(
    config_path: *const c_char,
    seed_override: u64,
    out_dir: *const c_char,
    summary_out: *mut VfSummary,
) -> VfStatus {
    guard(|| {
        if summary_out.is_null() {
            return fail(VfStatus::NullArgument, "summary out pointer is null");
        }
        let config_path = match path_arg(config_path) {
            Ok(p) => p,
            Err(s) => return fail(s, "invalid config path"),
        };
        let out_dir = if out_dir.is_null() {
            None
        } else {
            match path_arg(out_dir) {
                Ok(p) => Some(p),
                Err(s) => return fail(s, "invalid output dir"),
            }
        };
        let mut config = match ScenarioConfig::from_file(&config_path) {
            Ok(c) => c,
            Err(e) => return fail(VfStatus::ConfigError, &e.to_string()),
        };
        if seed_override != VF_NO_SEED_OVERRIDE {
            config.seed = seed_override;
        }
        let env = match ScenarioEnv::build(&config) {
            Ok(env) => env,
            Err(e) => return fail(VfStatus::ConfigError, &e.to_string()),
        };
        let result = match run_in_env(env) {
            Ok(r) => r,
            Err(e) => return fail(VfStatus::RuntimeError, &e.to_string()),
        };
        if let Some(dir) = out_dir {
            if let Err(e) = std::fs::create_dir_all(&dir) {
                return fail(VfStatus::RuntimeError, &e.to_string());
            }
            let wrote =
                voltflex::harness::write_results_jsonl(&dir.join("results.jsonl"), &result.records)
                    .and_then(|_| {
                        voltflex::harness::write_plot_csv(&dir.join("plot.csv"), &result.records)
                    })
                    .and_then(|_| {
                        voltflex::harness::write_summary_csv(
                            &dir.join("summary.csv"),
                            &[voltflex::harness::SummaryRow {
                                controller: result.controller.clone(),
                                seeds: 1,
                                steps: result.summary.steps,
                                rmse_kw: result.summary.rmse_kw,
                                safety_probability: result.summary.safety_probability,
                                violation_count: result.summary.violation_count,
                            }],
                        )
                    });
            if let Err(e) = wrote {
                return fail(VfStatus::RuntimeError, &e.to_string());
            }
        }
        *summary_out = VfSummary {
            rmse_kw: result.summary.rmse_kw,
            safety_probability: result.summary.safety_probability,
            violation_count: result.summary.violation_count,
            steps: result.summary.steps as u64,
        };
        VfStatus::Ok
    })
}

/// Sample-count threshold of the sequential acceptance test:
/// `ln(1/beta) / ((m + eps) ln(m + eps) - (m + eps - 1))`. Returns +inf when
/// the estimate cannot satisfy the test.
#[no_mangle]
pub extern "C" fn vf_certify_min_samples(m_estimate: f64, epsilon: f64, beta: f64) -> f64 {
    certify_min_samples(m_estimate, epsilon, beta)
}

/// Run the sequential acceptance test against a synthetic Bernoulli stream
/// with success probability `nu`. Writes whether it accepted and how many
/// samples it spent.
///
/// # Safety
/// `accepted_out` and `samples_out` must each be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vf_certify_bernoulli(
    nu: f64,
    epsilon: f64,
    beta: f64,
    max_samples: u64,
    batch_size: u64,
    seed: u64,
    accepted_out: *mut i32,
    samples_out: *mut u64,
) -> VfStatus {
    guard(|| {
        if accepted_out.is_null() || samples_out.is_null() {
            return fail(VfStatus::NullArgument, "null out pointer");
        }
        let config = SafetyConfig {
            epsilon,
            beta,
            max_samples,
            batch_size,
            ..SafetyConfig::default()
        };
        if let Err(e) = config.validate() {
            return fail(VfStatus::ConfigError, &e.to_string());
        }
        let outcome = certify_bernoulli(nu, &config, StreamKey::new(seed));
        *accepted_out = outcome.accepted as i32;
        *samples_out = outcome.samples_used;
        VfStatus::Ok
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
