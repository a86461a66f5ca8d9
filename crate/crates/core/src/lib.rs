//! Network-safe coordination of thermostatically controlled load fleets.
//!
//! A fleet of cooling TCLs tracks a regulation reference under a broadcast
//! probabilistic command while a utility-side engine certifies, by
//! sequential Monte Carlo, the widest command interval that keeps the
//! distribution feeder clear of under-voltage violations with a configured
//! probability and confidence.
//!
//! Modules map onto the moving parts:
//!
//! - [`grid`]: radial feeder model, exact and linearized branch-flow solvers,
//!   voltage-safety indicator, feeder files and synthetic generation.
//! - [`tcl`]: device-level population dynamics and power aggregation.
//! - [`aggregator`]: aggregate bin model, switch-fraction forecasts, command
//!   selection, reference signals.
//! - [`utility`]: ON-count posterior, safety-indicator sampling,
//!   confidence-test certification, constraint-set bisection, safety curves.
//! - [`harness`]: closed-loop scenario engine, benchmark controllers,
//!   metrics, and result persistence.

pub mod aggregator;
pub mod grid;
pub mod harness;
pub mod stats;
pub mod stream;
pub mod tcl;
pub mod utility;
