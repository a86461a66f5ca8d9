//! Statistical primitives: Chernoff-style sample-complexity bound, binomial
//! pmf/cdf tables for fast inversion sampling, and truncated normal models.

use rand::Rng;
use statrs::function::erf::{erf, erf_inv};
use statrs::function::gamma::ln_gamma;

/// Right-hand side of the sample-count inequality in the confidence test:
/// `ln(1/beta) / ((m + eps) ln(m + eps) - (m + eps - 1))`.
///
/// Only meaningful when `m + eps > 1`; returns `f64::INFINITY` otherwise
/// (the test can never pass at that estimate).
pub fn certify_min_samples(m_estimate: f64, epsilon: f64, beta: f64) -> f64 {
    let x = m_estimate + epsilon;
    if x <= 1.0 {
        return f64::INFINITY;
    }
    let denom = x * x.ln() - (x - 1.0);
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 / beta).ln() / denom
}

/// Both acceptance inequalities of the confidence test: the estimate must
/// exceed `1 - epsilon` and the sample count must exceed
/// [`certify_min_samples`] at that estimate.
pub fn certify_accepts(m_estimate: f64, n_samples: u64, epsilon: f64, beta: f64) -> bool {
    m_estimate > 1.0 - epsilon
        && (n_samples as f64) > certify_min_samples(m_estimate, epsilon, beta)
}

/// Standard normal cdf.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Standard normal inverse cdf.
pub fn normal_inv_cdf(u: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0)
}

fn ln_binomial_coeff(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial pmf over k = 0..=n, computed in log space so rows stay finite
/// for any p in [0, 1].
pub fn binomial_pmf_row(n: u64, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[0] = 1.0;
        return row;
    }
    if p >= 1.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[n as usize] = 1.0;
        return row;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=n)
        .map(|k| (ln_binomial_coeff(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

/// P(X <= k) for X ~ Binomial(n, p).
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let row = binomial_pmf_row(n, p);
    let s: f64 = row[..=k as usize].iter().sum();
    s.min(1.0)
}

/// Inversion-sampling tables for Binomial(m, p) for every m up to a cap,
/// all at the same success probability. Built once per certification probe,
/// sampled millions of times.
#[derive(Debug, Clone)]
pub struct BinomialInvTable {
    p: f64,
    // cdf_rows[m][k] = P(X <= k) for X ~ Binomial(m, p)
    cdf_rows: Vec<Vec<f64>>,
}

impl BinomialInvTable {
    pub fn new(max_trials: u64, p: f64) -> Self {
        let cdf_rows = (0..=max_trials)
            .map(|m| {
                let mut acc = 0.0;
                binomial_pmf_row(m, p)
                    .into_iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        BinomialInvTable { p, cdf_rows }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Draw from Binomial(trials, p). `trials` must not exceed the cap.
    pub fn sample<R: Rng + ?Sized>(&self, trials: u64, rng: &mut R) -> u64 {
        if trials == 0 || self.p <= 0.0 {
            return 0;
        }
        if self.p >= 1.0 {
            return trials;
        }
        let row = &self.cdf_rows[trials as usize];
        let u: f64 = rng.gen();
        (row.partition_point(|&c| c <= u) as u64).min(trials)
    }
}

/// One-dimensional normal truncated to `[lo, hi]`, sampled by inverse cdf.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
    cdf_lo: f64,
    cdf_hi: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> Self {
        assert!(sigma >= 0.0 && lo <= hi, "invalid truncated normal");
        let (cdf_lo, cdf_hi) = if sigma > 0.0 {
            (normal_cdf((lo - mu) / sigma), normal_cdf((hi - mu) / sigma))
        } else {
            (0.0, 1.0)
        };
        TruncatedNormal {
            mu,
            sigma,
            lo,
            hi,
            cdf_lo,
            cdf_hi,
        }
    }

    /// Normalizing mass of the untruncated density over `[lo, hi]`.
    pub fn mass(&self) -> f64 {
        self.cdf_hi - self.cdf_lo
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu.clamp(self.lo, self.hi);
        }
        let u: f64 = rng.gen();
        let target = self.cdf_lo + u * (self.cdf_hi - self.cdf_lo);
        let z = normal_inv_cdf(target.clamp(1e-300, 1.0 - 1e-16));
        (self.mu + self.sigma * z).clamp(self.lo, self.hi)
    }
}

/// Tabulated inverse cdf of a [`TruncatedNormal`] for tight sampling loops:
/// one uniform draw and a linear interpolation per sample. Knot resolution
/// keeps the interpolation error orders of magnitude below the load noise.
#[derive(Debug, Clone)]
pub struct TruncatedNormalTable {
    knots: Vec<f64>,
}

impl TruncatedNormalTable {
    pub fn new(tn: &TruncatedNormal, resolution: usize) -> Self {
        assert!(resolution >= 2);
        let knots = (0..=resolution)
            .map(|k| {
                if tn.sigma == 0.0 {
                    return tn.mu.clamp(tn.lo, tn.hi);
                }
                let mass = (tn.mass()).max(1e-300);
                let target = (normal_cdf((tn.lo - tn.mu) / tn.sigma)
                    + mass * k as f64 / resolution as f64)
                    .clamp(1e-300, 1.0 - 1e-16);
                (tn.mu + tn.sigma * normal_inv_cdf(target)).clamp(tn.lo, tn.hi)
            })
            .collect();
        TruncatedNormalTable { knots }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.knots.len() - 1;
        let t = rng.gen::<f64>() * n as f64;
        let i = (t as usize).min(n - 1);
        let frac = t - i as f64;
        self.knots[i] + frac * (self.knots[i + 1] - self.knots[i])
    }
}

/// Mean of a normal truncated to `[lo, hi]` (closed form).
pub fn truncated_normal_mean(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        return mu.clamp(lo, hi);
    }
    let (zl, zh) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = normal_cdf(zh) - normal_cdf(zl);
    if mass <= 0.0 {
        return mu.clamp(lo, hi);
    }
    mu + sigma * (pdf(zl) - pdf(zh)) / mass
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
                break;
            }
        }
    }
    (nodes, weights)
}
