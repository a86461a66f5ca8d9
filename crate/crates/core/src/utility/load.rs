//! Uncontrollable-load model: per-node truncated bivariate normals with a
//! time-varying mean multiplier shared across nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::NodalInjection;
use crate::stats::{gauss_legendre, normal_cdf, TruncatedNormal};

use super::UtilityError;

/// Piecewise-linear multiplier over the scenario clock (hours). Held flat
/// outside the knot range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplierProfile {
    pub knots: Vec<(f64, f64)>,
}

impl MultiplierProfile {
    pub fn constant(mu: f64) -> Self {
        MultiplierProfile {
            knots: vec![(0.0, mu)],
        }
    }

    pub fn at(&self, hour: f64) -> f64 {
        let k = &self.knots;
        if k.is_empty() {
            return 1.0;
        }
        if hour <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if hour <= t1 {
                let f = if t1 > t0 {
                    (hour - t0) / (t1 - t0)
                } else {
                    1.0
                };
                return v0 + f * (v1 - v0);
            }
        }
        k[k.len() - 1].1
    }

    fn validate(&self) -> Result<(), UtilityError> {
        if self.knots.is_empty() {
            return Err(UtilityError::Config(
                "multiplier profile needs at least one knot".into(),
            ));
        }
        for w in self.knots.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(UtilityError::Config(
                    "multiplier knots must be time-ordered".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Scenario clock: maps step indices to hours.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeBase {
    pub start_hour: f64,
    pub dt_s: f64,
}

impl TimeBase {
    pub fn hour(&self, step: usize) -> f64 {
        self.start_hour + step as f64 * self.dt_s / 3600.0
    }
}

/// Per-node load distributions. Real and reactive consumption at a node are
/// jointly normal with correlation `rho`, each truncated to a fixed interval
/// around its nominal value; nodes are independent of each other, which is
/// what lets the ON-count posterior factorize exactly.
#[derive(Debug, Clone)]
pub struct LoadModel {
    nominal_real_kw: Vec<f64>,
    nominal_reactive_kvar: Vec<f64>,
    sigma_frac: f64,
    trunc_lo_frac: f64,
    trunc_hi_frac: f64,
    rho: f64,
    profile: MultiplierProfile,
    time: TimeBase,
}

impl LoadModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nominal_real_kw: Vec<f64>,
        nominal_reactive_kvar: Vec<f64>,
        sigma_frac: f64,
        trunc_lo_frac: f64,
        trunc_hi_frac: f64,
        rho: f64,
        profile: MultiplierProfile,
        time: TimeBase,
    ) -> Result<Self, UtilityError> {
        if nominal_real_kw.len() != nominal_reactive_kvar.len() {
            return Err(UtilityError::Config(
                "nominal load vectors differ in length".into(),
            ));
        }
        if !(sigma_frac >= 0.0) {
            return Err(UtilityError::Config(
                "sigma fraction must be nonnegative".into(),
            ));
        }
        if !(rho.abs() <= 1.0 - 1e-9) {
            return Err(UtilityError::Config("|rho| must be below 1".into()));
        }
        if trunc_lo_frac >= trunc_hi_frac {
            return Err(UtilityError::Config("truncation interval is empty".into()));
        }
        profile.validate()?;
        for &(_, mu) in &profile.knots {
            if mu < trunc_lo_frac || mu > trunc_hi_frac {
                return Err(UtilityError::Config(format!(
                    "mean multiplier {mu} leaves the truncation interval \
                     [{trunc_lo_frac}, {trunc_hi_frac}]"
                )));
            }
        }
        let model = LoadModel {
            nominal_real_kw,
            nominal_reactive_kvar,
            sigma_frac,
            trunc_lo_frac,
            trunc_hi_frac,
            rho,
            profile,
            time,
        };
        // normalized density must integrate to 1 over the truncated support
        for hour in model.profile.knots.iter().map(|k| k.0).collect::<Vec<_>>() {
            for j in 0..model.node_count() {
                let dist = model.node_dist(j, hour);
                let integral = dist.integral_of_normalized_density();
                if (integral - 1.0).abs() > 1e-6 {
                    return Err(UtilityError::Config(format!(
                        "node {} density normalization off by {:.2e}",
                        j + 1,
                        (integral - 1.0).abs()
                    )));
                }
            }
        }
        Ok(model)
    }

    pub fn node_count(&self) -> usize {
        self.nominal_real_kw.len()
    }
    pub fn time(&self) -> TimeBase {
        self.time
    }
    pub fn hour(&self, step: usize) -> f64 {
        self.time.hour(step)
    }
    pub fn multiplier(&self, hour: f64) -> f64 {
        self.profile.at(hour)
    }
    pub fn nominal_real_kw(&self) -> &[f64] {
        &self.nominal_real_kw
    }
    pub fn nominal_reactive_kvar(&self) -> &[f64] {
        &self.nominal_reactive_kvar
    }
    /// Worst-case consumption: the upper truncation bound (time-invariant).
    pub fn max_real_kw(&self) -> Vec<f64> {
        self.nominal_real_kw
            .iter()
            .map(|p| p * self.trunc_hi_frac)
            .collect()
    }
    pub fn max_reactive_kvar(&self) -> Vec<f64> {
        self.nominal_reactive_kvar
            .iter()
            .map(|q| q * self.trunc_hi_frac)
            .collect()
    }

    /// Distribution of (P^L, Q^L) at one node for the given hour.
    pub fn node_dist(&self, node_idx: usize, hour: f64) -> NodeLoadDist {
        let mu = self.profile.at(hour);
        let pn = self.nominal_real_kw[node_idx];
        let qn = self.nominal_reactive_kvar[node_idx];
        NodeLoadDist::new(
            mu * pn,
            self.sigma_frac * pn.abs(),
            self.trunc_lo_frac * pn,
            self.trunc_hi_frac * pn,
            mu * qn,
            self.sigma_frac * qn.abs(),
            self.trunc_lo_frac * qn,
            self.trunc_hi_frac * qn,
            self.rho,
        )
    }

    /// Draw one joint realization across all nodes (kW / kvar).
    pub fn sample_all<R: Rng + ?Sized>(&self, hour: f64, rng: &mut R) -> NodalInjection {
        let n = self.node_count();
        let mut real = Vec::with_capacity(n);
        let mut reactive = Vec::with_capacity(n);
        for j in 0..n {
            let (p, q) = self.node_dist(j, hour).sample(rng);
            real.push(p);
            reactive.push(q);
        }
        NodalInjection::new(real, reactive)
    }
}

/// Truncated bivariate normal for one node.
#[derive(Debug, Clone)]
pub struct NodeLoadDist {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub lo_p: f64,
    pub hi_p: f64,
    pub mu_q: f64,
    pub sigma_q: f64,
    pub lo_q: f64,
    pub hi_q: f64,
    pub rho: f64,
    tn_p: TruncatedNormal,
    tn_q: TruncatedNormal,
    log_box_mass: f64,
}

const SIGMA_FLOOR_KW: f64 = 1e-9;

impl NodeLoadDist {
    #[allow(clippy::too_many_arguments)]
    fn new(
        mu_p: f64,
        sigma_p: f64,
        lo_p: f64,
        hi_p: f64,
        mu_q: f64,
        sigma_q: f64,
        lo_q: f64,
        hi_q: f64,
        rho: f64,
    ) -> Self {
        let (lo_p, hi_p) = (lo_p.min(hi_p), lo_p.max(hi_p));
        let (lo_q, hi_q) = (lo_q.min(hi_q), lo_q.max(hi_q));
        let tn_p = TruncatedNormal::new(mu_p, sigma_p, lo_p, hi_p);
        let tn_q = TruncatedNormal::new(mu_q, sigma_q, lo_q, hi_q);
        let mut dist = NodeLoadDist {
            mu_p,
            sigma_p,
            lo_p,
            hi_p,
            mu_q,
            sigma_q,
            lo_q,
            hi_q,
            rho,
            tn_p,
            tn_q,
            log_box_mass: 0.0,
        };
        dist.log_box_mass = dist.box_mass().max(1e-300).ln();
        dist
    }

    fn sp(&self) -> f64 {
        self.sigma_p.max(SIGMA_FLOOR_KW)
    }
    fn sq(&self) -> f64 {
        self.sigma_q.max(SIGMA_FLOOR_KW)
    }

    /// Mass of the untruncated bivariate normal inside the box. Exact via
    /// erf for independent coordinates, Gauss-Legendre in the conditional
    /// decomposition otherwise.
    pub fn box_mass(&self) -> f64 {
        if self.rho == 0.0 {
            return self.tn_p.mass() * self.tn_q.mass();
        }
        self.box_mass_quadrature(96)
    }

    fn box_mass_quadrature(&self, order: usize) -> f64 {
        let (sp, sq) = (self.sp(), self.sq());
        let lo = self.lo_p.max(self.mu_p - 10.0 * sp);
        let hi = self.hi_p.min(self.mu_p + 10.0 * sp);
        if lo >= hi {
            return 0.0;
        }
        let (nodes, weights) = gauss_legendre(order);
        let sc = sq * (1.0 - self.rho * self.rho).sqrt();
        let mut total = 0.0;
        for (t, w) in nodes.iter().zip(&weights) {
            let p = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
            let zp = (p - self.mu_p) / sp;
            let pdf_p = (-0.5 * zp * zp).exp() / (sp * (2.0 * std::f64::consts::PI).sqrt());
            let mu_c = self.mu_q + self.rho * sq * zp;
            let mass_q = normal_cdf((self.hi_q - mu_c) / sc) - normal_cdf((self.lo_q - mu_c) / sc);
            total += w * pdf_p * mass_q;
        }
        total * 0.5 * (hi - lo)
    }

    /// Normalized log-density; `-inf` outside the truncation box.
    pub fn log_density(&self, p: f64, q: f64) -> f64 {
        if p < self.lo_p || p > self.hi_p || q < self.lo_q || q > self.hi_q {
            return f64::NEG_INFINITY;
        }
        let (sp, sq) = (self.sp(), self.sq());
        let r2 = 1.0 - self.rho * self.rho;
        let zp = (p - self.mu_p) / sp;
        let zq = (q - self.mu_q) / sq;
        let quad = (zp * zp - 2.0 * self.rho * zp * zq + zq * zq) / (2.0 * r2);
        -quad - (2.0 * std::f64::consts::PI * sp * sq * r2.sqrt()).ln() - self.log_box_mass
    }

    /// Squared Mahalanobis distance of `(p, q)` to the mean, for the
    /// degenerate-measurement fallback.
    pub fn mahalanobis_sq(&self, p: f64, q: f64) -> f64 {
        let (sp, sq) = (self.sp(), self.sq());
        let r2 = 1.0 - self.rho * self.rho;
        let zp = (p - self.mu_p) / sp;
        let zq = (q - self.mu_q) / sq;
        (zp * zp - 2.0 * self.rho * zp * zq + zq * zq) / r2
    }

    /// Draw from the truncated joint: exact inverse-cdf when coordinates are
    /// independent, bounded rejection from the untruncated joint otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        if self.rho == 0.0 {
            return (self.tn_p.sample(rng), self.tn_q.sample(rng));
        }
        let (sp, sq) = (self.sp(), self.sq());
        let c = (1.0 - self.rho * self.rho).sqrt();
        for _ in 0..100_000 {
            let zp: f64 = rng.sample(rand_distr::StandardNormal);
            let zq: f64 = rng.sample(rand_distr::StandardNormal);
            let p = self.mu_p + sp * zp;
            let q = self.mu_q + sq * (self.rho * zp + c * zq);
            if p >= self.lo_p && p <= self.hi_p && q >= self.lo_q && q <= self.hi_q {
                return (p, q);
            }
        }
        log::warn!("load rejection sampler exhausted attempts; clamping to the box");
        (
            self.mu_p.clamp(self.lo_p, self.hi_p),
            self.mu_q.clamp(self.lo_q, self.hi_q),
        )
    }

    /// Self-check: integrate the normalized density over the box with a
    /// quadrature order different from the one that computed the
    /// normalization constant.
    pub fn integral_of_normalized_density(&self) -> f64 {
        if self.sigma_p <= SIGMA_FLOOR_KW && self.sigma_q <= SIGMA_FLOOR_KW {
            return 1.0; // point mass
        }
        // order 64 here; the constructor's constant came from erf (rho = 0)
        // or order-96 quadrature, so this is an independent route
        self.box_mass_quadrature(64) / self.log_box_mass.exp()
    }
}
