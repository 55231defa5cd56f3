//! Density kernels for compound-symmetry multivariate normals.
//!
//! Additive site, subject and residual effects give every subject's series a
//! covariance of the form `σ̃² [(1-ρ) I + ρ 11ᵀ]`. Its eigenvectors do not
//! depend on ρ, so an orthonormal basis `P` is built once per dimension and
//! the density factorizes into `n` univariate normals after rotating by `Pᵀ`.

use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Total variance and intra-subject correlation of a compound-symmetry block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsParams {
    pub sigma2_tilde: f64,
    pub rho: f64,
    pub n: usize,
}

impl CsParams {
    /// Variance along the all-ones direction.
    pub fn lead_variance(&self) -> f64 {
        self.sigma2_tilde * (1.0 + (self.n as f64 - 1.0) * self.rho)
    }

    /// Variance along every direction orthogonal to the all-ones vector.
    pub fn tail_variance(&self) -> f64 {
        self.sigma2_tilde * (1.0 - self.rho)
    }

    /// Shared covariance between two distinct time points.
    pub fn covariance(&self) -> f64 {
        self.sigma2_tilde * self.rho
    }

    pub fn with_dim(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

/// Builds the compound-symmetry parameters from site, subject and residual precisions.
pub fn cs_params(tau_s: f64, tau_w: f64, tau_e: f64, n: usize) -> Result<CsParams> {
    for (name, v) in [("tau_s", tau_s), ("tau_w", tau_w), ("tau_e", tau_e)] {
        if !(v > 0.0) {
            return Err(Error::arg(format!("{name} must be positive, got {v}")));
        }
    }
    if n < 1 {
        return Err(Error::arg("dimension must be at least 1"));
    }
    let shared = 1.0 / tau_s + 1.0 / tau_w;
    let sigma2_tilde = shared + 1.0 / tau_e;
    Ok(CsParams { sigma2_tilde, rho: shared / sigma2_tilde, n })
}

/// Orthonormal basis whose first column is `1/√n · 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    pub n: usize,
    /// Row-major `n × n`; column `k` is the `k`-th basis vector.
    pub matrix: Vec<f64>,
}

impl OrthoBasis {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.n + col]
    }

    /// Computes `Pᵀ v` into `out`.
    pub fn rotate(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (r, x) in v.iter().enumerate().take(n) {
                acc += self.matrix[r * n + k] * x;
            }
            *o = acc;
        }
    }
}

fn build_helmert(n: usize) -> OrthoBasis {
    let mut m = vec![0.0; n * n];
    let lead = 1.0 / (n as f64).sqrt();
    for r in 0..n {
        m[r * n] = lead;
    }
    // Column k (1-based k ≥ 2): k-1 ones, then -(k-1), scaled to unit norm.
    for k in 2..=n {
        let scale = 1.0 / ((k * (k - 1)) as f64).sqrt();
        for r in 0..k - 1 {
            m[r * n + (k - 1)] = scale;
        }
        m[(k - 1) * n + (k - 1)] = -((k - 1) as f64) * scale;
    }
    OrthoBasis { n, matrix: m }
}

fn basis_cache() -> &'static RwLock<HashMap<usize, Arc<OrthoBasis>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<OrthoBasis>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Helmert basis of dimension `n`, built lazily and shared across threads.
pub fn helmert_basis(n: usize) -> Result<Arc<OrthoBasis>> {
    if n < 1 {
        return Err(Error::arg("basis dimension must be at least 1"));
    }
    if let Some(b) = basis_cache().read().expect("basis cache poisoned").get(&n) {
        return Ok(Arc::clone(b));
    }
    let mut w = basis_cache().write().expect("basis cache poisoned");
    Ok(Arc::clone(w.entry(n).or_insert_with(|| Arc::new(build_helmert(n)))))
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// Log density of `MVN(mean, σ̃²[(1-ρ)I + ρ11ᵀ])` at `obs`.
pub fn cs_mvn_logdensity(obs: &[f64], mean: &[f64], cs: &CsParams) -> Result<f64> {
    let n = cs.n;
    if obs.len() != n || mean.len() != n {
        return Err(Error::arg(format!("dimension mismatch: obs {}, mean {}, covariance {n}", obs.len(), mean.len())));
    }
    Ok(cs_logdensity_unchecked(obs, mean, cs))
}

pub(crate) fn cs_logdensity_unchecked(obs: &[f64], mean: &[f64], cs: &CsParams) -> f64 {
    let n = obs.len();
    if n == 0 {
        return 0.0;
    }
    let basis = helmert_basis(n).expect("n >= 1");
    let diff: Vec<f64> = obs.iter().zip(mean).map(|(o, m)| o - m).collect();
    let mut rot = vec![0.0; n];
    basis.rotate(&diff, &mut rot);
    let cs = cs.with_dim(n);
    let tail = cs.tail_variance();
    rot[1..].iter().fold(normal_logpdf(rot[0], 0.0, cs.lead_variance()), |lp, &u| lp + normal_logpdf(u, 0.0, tail))
}

/// Quadratic class mean curve evaluated at each time point.
pub fn class_mean(times: &[f64], baseline: f64, beta0: f64, beta1: f64, beta2: f64, beta0_base: f64) -> Vec<f64> {
    let offset = beta0 + beta0_base * baseline;
    times.iter().map(|&t| offset + beta1 * t + beta2 * t * t).collect()
}

/// Mean and variance of one future coordinate of a CS-MVN given `history`
/// residuals (observed minus mean) on the other coordinates.
pub fn cs_conditional(history_resid_sum: f64, n_history: usize, cs: &CsParams) -> (f64, f64) {
    if n_history == 0 {
        return (0.0, cs.sigma2_tilde);
    }
    let h = n_history as f64;
    let denom = 1.0 + (h - 1.0) * cs.rho;
    let shift = cs.rho / denom * history_resid_sum;
    let var = cs.sigma2_tilde * (1.0 - cs.rho * cs.rho * h / denom);
    (shift, var)
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// `P(lo < Z ≤ hi)` for a standard normal, accurate in both tails.
pub fn norm_interval(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    if lo >= 0.0 {
        (norm_sf(lo) - norm_sf(hi)).max(0.0)
    } else if hi <= 0.0 {
        (norm_cdf(hi) - norm_cdf(lo)).max(0.0)
    } else {
        (1.0 - norm_cdf(lo) - norm_sf(hi)).max(0.0)
    }
}

/// `log Σ exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights in place into probabilities.
pub fn normalize_log_weights(logw: &mut [f64]) -> f64 {
    let lse = log_sum_exp(logw);
    for v in logw.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}
