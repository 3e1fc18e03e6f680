//! Closed-form light-traffic quantities for SQ(2) over heterogeneous FCFS
//! servers.
//!
//! With X uniform over the reciprocal capacities {1/C_1, …, 1/C_K}:
//!
//! ```text
//! R(0+)   = E[X]·E[σ]
//! R'(0+)  = −Var[X]·E[σ]² / (K−1)
//! R''(0+) = 2·(E[X³] − E[X]³ − 2·E[X]·Var[X])·E[σ]³ / (K−1)²
//! ```
//!
//! The canonical evaluators use central moments of X, which keeps
//! R'(0+) ≤ 0 exact in floating point and makes both derivatives vanish
//! identically for equal capacities. The printed Γ-sum forms are kept as
//! `*_direct` for cross-checking.

use serde::Serialize;
use thiserror::Error;

use crate::model::{accurate_sum, CapacityVector, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("derivatives need at least two servers (K = 1)")]
    SingleServer,
    #[error("mean job size must be positive and finite, got {0}")]
    InvalidMean(f64),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Raw moments of X plus its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XMoments {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub var: f64,
}

/// Central moments (μ, E[(X−μ)²], E[(X−μ)³]) computed in two passes.
fn central_moments(caps: &CapacityVector) -> (f64, f64, f64) {
    let x = caps.reciprocals();
    let k = x.len() as f64;
    let mean = accurate_sum(x.iter().copied()) / k;
    if caps.is_homogeneous() {
        return (mean, 0.0, 0.0);
    }
    let c2 = accurate_sum(x.iter().map(|xi| (xi - mean).powi(2)));
    let c3 = accurate_sum(x.iter().map(|xi| (xi - mean).powi(3)));
    (mean, c2 / k, c3 / k)
}

fn check_mean(mean_sigma: f64) -> Result<(), AnalyticsError> {
    if mean_sigma.is_finite() && mean_sigma > 0.0 {
        Ok(())
    } else {
        Err(AnalyticsError::InvalidMean(mean_sigma))
    }
}

fn check_multi(caps: &CapacityVector) -> Result<(), AnalyticsError> {
    if caps.len() < 2 {
        Err(AnalyticsError::SingleServer)
    } else {
        Ok(())
    }
}

pub fn gamma(caps: &CapacityVector) -> f64 {
    caps.gamma()
}

pub fn x_moments(caps: &CapacityVector) -> XMoments {
    let x = caps.reciprocals();
    let k = x.len() as f64;
    let m1 = accurate_sum(x.iter().copied()) / k;
    let m2 = accurate_sum(x.iter().map(|v| v * v)) / k;
    let m3 = accurate_sum(x.iter().map(|v| v * v * v)) / k;
    let (_, var, _) = central_moments(caps);
    XMoments { m1, m2, m3, var }
}

/// R(0+) = (Γ/K)·E[σ].
pub fn r_zero(caps: &CapacityVector, mean_sigma: f64) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    Ok(caps.gamma() / caps.len() as f64 * mean_sigma)
}

/// R'(0+) = −Var[X]·E[σ]²/(K−1).
pub fn r_prime(caps: &CapacityVector, mean_sigma: f64) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let (_, var, _) = central_moments(caps);
    if var == 0.0 {
        return Ok(0.0);
    }
    Ok(-var / (caps.len() - 1) as f64 * mean_sigma * mean_sigma)
}

/// R'(0+) as ((Γ/K)² − (1/K)Σ 1/C_k²)·E[σ]²/(K−1).
pub fn r_prime_direct(caps: &CapacityVector, mean_sigma: f64) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let k = caps.len() as f64;
    let g = caps.gamma();
    let sq = accurate_sum(caps.as_slice().iter().map(|c| 1.0 / (c * c)));
    Ok(((g / k).powi(2) - sq / k) / (k - 1.0) * mean_sigma * mean_sigma)
}

/// R'(0+) as −(E[X²] − E[X]²)·E[σ]²/(K−1) from raw moments.
pub fn r_prime_alternate(caps: &CapacityVector, mean_sigma: f64) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let m = x_moments(caps);
    Ok(-(m.m2 - m.m1 * m.m1) / (caps.len() - 1) as f64 * mean_sigma * mean_sigma)
}

/// R''(0+) = 2(μ₃ + μ·μ₂)·E[σ]³/(K−1)², where μ₂, μ₃ are central moments
/// of X; algebraically equal to the raw-moment and Γ-sum forms.
pub fn r_double_prime(caps: &CapacityVector, mean_sigma: f64) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let (mean, c2, c3) = central_moments(caps);
    if c2 == 0.0 {
        return Ok(0.0);
    }
    let km1 = (caps.len() - 1) as f64;
    Ok(2.0 * (c3 + mean * c2) / (km1 * km1) * mean_sigma.powi(3))
}

/// R''(0+) as 2/(K²(K−1)²)·(Γ³/K − 2ΓΣ1/C_k² + KΣ1/C_k³)·E[σ]³.
pub fn r_double_prime_direct(
    caps: &CapacityVector,
    mean_sigma: f64,
) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let k = caps.len() as f64;
    let g = caps.gamma();
    let s2 = accurate_sum(caps.as_slice().iter().map(|c| c.powi(-2)));
    let s3 = accurate_sum(caps.as_slice().iter().map(|c| c.powi(-3)));
    let bracket = g.powi(3) / k - 2.0 * g * s2 + k * s3;
    Ok(2.0 / (k * k * (k - 1.0) * (k - 1.0)) * bracket * mean_sigma.powi(3))
}

/// R''(0+) as 2(E[X³] − E[X]³ − 2E[X]Var[X])·E[σ]³/(K−1)² from raw moments.
pub fn r_double_prime_alternate(
    caps: &CapacityVector,
    mean_sigma: f64,
) -> Result<f64, AnalyticsError> {
    check_mean(mean_sigma)?;
    check_multi(caps)?;
    let m = x_moments(caps);
    let var = m.m2 - m.m1 * m.m1;
    let km1 = (caps.len() - 1) as f64;
    Ok(2.0 * (m.m3 - m.m1.powi(3) - 2.0 * m.m1 * var) / (km1 * km1) * mean_sigma.powi(3))
}

/// The light-traffic triple (R(0+), R'(0+), R''(0+)).
#[derive(Debug, Clone, PartialEq)]
pub struct LtDerivatives {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub capacities: CapacityVector,
    pub mean_sigma: f64,
}

#[derive(Serialize)]
struct LtDerivativesJson<'a> {
    r0: f64,
    r1: f64,
    r2: f64,
    gamma: f64,
    x_moments: XMoments,
    k: usize,
    mean_sigma: f64,
    capacities: &'a [f64],
}

impl Serialize for LtDerivatives {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LtDerivativesJson {
            r0: self.r0,
            r1: self.r1,
            r2: self.r2,
            gamma: self.capacities.gamma(),
            x_moments: x_moments(&self.capacities),
            k: self.capacities.len(),
            mean_sigma: self.mean_sigma,
            capacities: self.capacities.as_slice(),
        }
        .serialize(serializer)
    }
}

impl LtDerivatives {
    pub fn new(caps: &CapacityVector, mean_sigma: f64) -> Result<Self, AnalyticsError> {
        Ok(LtDerivatives {
            r0: r_zero(caps, mean_sigma)?,
            r1: r_prime(caps, mean_sigma)?,
            r2: r_double_prime(caps, mean_sigma)?,
            capacities: caps.clone(),
            mean_sigma,
        })
    }

    /// R_App(λ) = R(0+) + λR'(0+) + λ²R''(0+)/2.
    pub fn approx(&self, lambda: f64) -> f64 {
        lt_approx(self, lambda)
    }
}

pub fn lt_approx(derivs: &LtDerivatives, lambda: f64) -> f64 {
    derivs.r0 + lambda * derivs.r1 + 0.5 * lambda * lambda * derivs.r2
}

/// Range of Var[X] over capacity vectors with Σ 1/C_k = Γ: the lower end
/// is attained by the balanced vector, the upper end is a supremum only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarBounds {
    pub lower: f64,
    pub upper_supremum: f64,
}

pub fn var_x_bounds(gamma_val: f64, k: usize) -> Result<VarBounds, AnalyticsError> {
    if !(gamma_val.is_finite() && gamma_val > 0.0) {
        return Err(AnalyticsError::ParameterOutOfRange(format!(
            "gamma = {gamma_val}"
        )));
    }
    if k < 2 {
        return Err(AnalyticsError::SingleServer);
    }
    let mean = gamma_val / k as f64;
    Ok(VarBounds {
        lower: 0.0,
        upper_supremum: (k - 1) as f64 * mean * mean,
    })
}

/// K equal capacities K/Γ.
pub fn balanced_capacities(gamma_val: f64, k: usize) -> Result<CapacityVector, AnalyticsError> {
    Ok(CapacityVector::homogeneous(k, k as f64 / gamma_val)?)
}

/// Server `index` (0-based) gets capacity 1/(aΓ), every other server
/// (K−1)/((1−a)Γ). Var[X] tends to the supremum as a → 1.
pub fn extremal_capacities(
    index: usize,
    a: f64,
    gamma_val: f64,
    k: usize,
) -> Result<CapacityVector, AnalyticsError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(AnalyticsError::ParameterOutOfRange(format!(
            "a = {a} not in (0, 1)"
        )));
    }
    if index >= k {
        return Err(AnalyticsError::ParameterOutOfRange(format!(
            "index {index} >= K = {k}"
        )));
    }
    if !(gamma_val.is_finite() && gamma_val > 0.0) {
        return Err(AnalyticsError::ParameterOutOfRange(format!(
            "gamma = {gamma_val}"
        )));
    }
    let slow = 1.0 / (a * gamma_val);
    let fast = (k - 1) as f64 / ((1.0 - a) * gamma_val);
    let caps = (0..k)
        .map(|i| if i == index { slow } else { fast })
        .collect();
    Ok(CapacityVector::new(caps)?)
}

/// A closed form next to its brute-force evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub closed: f64,
    pub brute: f64,
}

impl IdentityCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.closed.abs().max(self.brute.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.closed - self.brute).abs() / scale
        }
    }

    pub fn holds(&self, rel_tol: f64) -> bool {
        self.relative_error() <= rel_tol
    }
}

/// Σ_{a≠k} Σ_{b<a, b≠k} (1/C_a + 1/C_b) against (K−2)(Γ − 1/C_k).
pub fn identity_sigma_k(caps: &CapacityVector, k: usize) -> Result<IdentityCheck, AnalyticsError> {
    check_multi(caps)?;
    if k >= caps.len() {
        return Err(AnalyticsError::ParameterOutOfRange(format!("k = {k}")));
    }
    let x = caps.reciprocals();
    let n = x.len();
    let mut brute = 0.0;
    for a in (0..n).filter(|&a| a != k) {
        for b in (0..a).filter(|&b| b != k) {
            brute += x[a] + x[b];
        }
    }
    let rest: f64 = (0..n).filter(|&a| a != k).map(|a| x[a]).sum();
    let closed = (n as f64 - 2.0) * rest;
    Ok(IdentityCheck { closed, brute })
}

/// The pair-exclusion sum H_kℓ and the derived constant Σ_kℓ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairIdentityCheck {
    /// (K−3)(Γ − 1/C_k − 1/C_ℓ) against the double sum over a, b ∉ {k, ℓ}.
    pub h: IdentityCheck,
    /// (K+1)Γ − K(1/C_k + 1/C_ℓ) against H_kℓ(brute) + 4Γ − 3(1/C_k + 1/C_ℓ).
    pub sigma: IdentityCheck,
}

pub fn identity_h_kl(
    caps: &CapacityVector,
    k: usize,
    l: usize,
) -> Result<PairIdentityCheck, AnalyticsError> {
    check_multi(caps)?;
    let n = caps.len();
    if k >= n || l >= n || k == l {
        return Err(AnalyticsError::ParameterOutOfRange(format!(
            "need distinct k, l < K, got ({k}, {l})"
        )));
    }
    let x = caps.reciprocals();
    let g = caps.gamma();
    let mut brute = 0.0;
    for a in (0..n).filter(|&a| a != k && a != l) {
        for b in (0..a).filter(|&b| b != k && b != l) {
            brute += x[a] + x[b];
        }
    }
    // Γ − 1/C_k − 1/C_ℓ summed directly: subtracting from Γ leaves rounding
    // residue where the exact value is zero (K = 2)
    let rest: f64 = (0..n).filter(|&a| a != k && a != l).map(|a| x[a]).sum();
    let closed = (n as f64 - 3.0) * rest;
    let sigma_closed = sigma_kl(caps, k, l);
    let sigma_brute = brute + 4.0 * g - 3.0 * (x[k] + x[l]);
    Ok(PairIdentityCheck {
        h: IdentityCheck { closed, brute },
        sigma: IdentityCheck {
            closed: sigma_closed,
            brute: sigma_brute,
        },
    })
}

/// Σ_kℓ = (K+1)Γ − K(1/C_k + 1/C_ℓ).
pub fn sigma_kl(caps: &CapacityVector, k: usize, l: usize) -> f64 {
    let n = caps.len() as f64;
    (n + 1.0) * caps.gamma() - n * (1.0 / caps.get(k) + 1.0 / caps.get(l))
}
