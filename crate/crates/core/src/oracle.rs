//! Tagged-job light-traffic oracles.
//!
//! A tagged job arrives at time 0 into an otherwise empty system that sees
//! exactly `n ∈ {0, 1, 2}` other arrivals. The expected tagged response in
//! those scenarios (R̂₀, R̂₁(t), R̂₂(s, t)) has closed forms; integrating
//! them reproduces the light-traffic derivatives, and simulating the
//! scenarios directly checks the closed forms.
//!
//! All probabilities reduce to the job-size survival function:
//!
//! ```text
//! P(C_k t + σ > 0)         = S(−C_k t)
//! P(s + σ/C_k ≤ t)         = 1 − S(C_k (t − s))
//! P(t < s + σ/C_k ≤ 0)     = S(C_k (t − s)) − S(−C_k s)
//! ```

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{CapacityVector, RngStream, ServiceDistribution};
use crate::quadrature::{integrate, QuadOptions, QuadratureError};
use rand::Rng;

/// Survival level below which the job-size tail is treated as exhausted
/// when truncating the integration domain.
pub const TAIL_EPS: f64 = 1e-12;

/// Normal 97.5% quantile used for Monte-Carlo half-widths.
pub const Z_95: f64 = 1.96;

/// Fixed shard count for Monte-Carlo runs; results depend on it but not on
/// how many threads execute the shards.
pub const MC_SHARDS: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("time must be negative, got {0}")]
    NonNegativeTime(f64),
    #[error("arrival times must be finite and non-zero, got {0}")]
    ZeroTime(f64),
    #[error("expected s < t, got s = {s}, t = {t}")]
    UnorderedTimes { s: f64, t: f64 },
    #[error("tagged scenarios support at most two extra jobs, got {0}")]
    TooManyJobs(usize),
    #[error("power-of-two selection needs at least two servers")]
    SingleServer,
    #[error("server index {0} out of range")]
    BadIndex(usize),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("quadrature failed: {0}")]
    QuadratureNonConvergence(#[from] QuadratureError),
}

fn nonzero(t: f64) -> Result<f64, OracleError> {
    if t.is_finite() && t != 0.0 {
        Ok(t)
    } else {
        Err(OracleError::ZeroTime(t))
    }
}

/// Closed-form tagged-job expectations for one (capacities, job size) pair.
#[derive(Debug, Clone)]
pub struct TaggedModel {
    caps: CapacityVector,
    dist: ServiceDistribution,
    recip: Vec<f64>,
    gamma: f64,
    k: f64,
    mean: f64,
    r0: f64,
}

impl TaggedModel {
    pub fn new(caps: &CapacityVector, dist: &ServiceDistribution) -> Result<Self, OracleError> {
        if caps.len() < 2 {
            return Err(OracleError::SingleServer);
        }
        let recip = caps.reciprocals();
        let gamma = caps.gamma();
        let k = caps.len() as f64;
        let mean = dist.mean();
        Ok(TaggedModel {
            caps: caps.clone(),
            dist: dist.clone(),
            recip,
            gamma,
            k,
            mean,
            r0: gamma / k * mean,
        })
    }

    pub fn capacities(&self) -> &CapacityVector {
        &self.caps
    }

    pub fn distribution(&self) -> &ServiceDistribution {
        &self.dist
    }

    /// R̂₀ = (Γ/K)·E[σ].
    pub fn rhat0(&self) -> f64 {
        self.r0
    }

    /// P(C_k t + σ > 0): a job that arrived at `t` on server k is still present at 0.
    fn busy_at_zero(&self, k: usize, t: f64) -> f64 {
        self.dist.survival(-self.caps.get(k) * t)
    }

    fn check_k(&self, k: usize) -> Result<(), OracleError> {
        if k < self.caps.len() {
            Ok(())
        } else {
            Err(OracleError::BadIndex(k))
        }
    }

    /// H_k(t) = P(C_k t + σ ≤ 0)·R̂₀ + (Γ − 1/C_k)·P(C_k t + σ > 0)·E[σ]/(K−1).
    pub fn h_k(&self, t: f64, k: usize) -> Result<f64, OracleError> {
        if !(t < 0.0) {
            return Err(OracleError::NonNegativeTime(t));
        }
        self.check_k(k)?;
        Ok(self.h_k_unchecked(t, k))
    }

    fn h_k_unchecked(&self, t: f64, k: usize) -> f64 {
        let busy = self.busy_at_zero(k, t);
        (1.0 - busy) * self.r0 + (self.gamma - self.recip[k]) / (self.k - 1.0) * busy * self.mean
    }

    /// H_k(t) = R̂₀ + (Γ/K − 1/C_k)·P(C_k t + σ > 0)·E[σ]/(K−1).
    pub fn h_k_alternate(&self, t: f64, k: usize) -> Result<f64, OracleError> {
        if !(t < 0.0) {
            return Err(OracleError::NonNegativeTime(t));
        }
        self.check_k(k)?;
        let busy = self.busy_at_zero(k, t);
        Ok(self.r0 + (self.gamma / self.k - self.recip[k]) / (self.k - 1.0) * busy * self.mean)
    }

    /// R̂₁(t): R̂₀ for t > 0, the average of H_k(t) for t < 0.
    pub fn rhat1(&self, t: f64) -> Result<f64, OracleError> {
        nonzero(t)?;
        Ok(self.rhat1_unchecked(t))
    }

    fn rhat1_unchecked(&self, t: f64) -> f64 {
        if t > 0.0 {
            return self.r0;
        }
        let n = self.caps.len();
        (0..n).map(|k| self.h_k_unchecked(t, k)).sum::<f64>() / self.k
    }

    fn check_pair(s: f64, t: f64) -> Result<(), OracleError> {
        nonzero(s)?;
        nonzero(t)?;
        if s < t {
            Ok(())
        } else {
            Err(OracleError::UnorderedTimes { s, t })
        }
    }

    /// R̂₂(s, t) for s < t, evaluated through the compact form.
    pub fn rhat2(&self, s: f64, t: f64) -> Result<f64, OracleError> {
        Self::check_pair(s, t)?;
        Ok(self.rhat2_compact_unchecked(s, t))
    }

    /// R̂₂ with the two arrival epochs in either order.
    pub fn rhat2_symmetric(&self, a: f64, b: f64) -> Result<f64, OracleError> {
        if a < b {
            self.rhat2(a, b)
        } else {
            self.rhat2(b, a)
        }
    }

    fn rhat2_compact_unchecked(&self, s: f64, t: f64) -> f64 {
        if s > 0.0 {
            return self.r0;
        }
        if t > 0.0 {
            return self.rhat1_unchecked(s);
        }
        let n = self.caps.len();
        let kf = self.k;
        let mut done_by_t = 0.0; // Σ_ℓ P(s + σ/C_ℓ ≤ t)
        let mut done_in_between = 0.0; // Σ_ℓ P(t < s + σ/C_ℓ ≤ 0)
        let mut s_busy_weighted = 0.0; // Σ_k (Γ − 1/C_k) P(C_k s + σ > 0)
        let mut u_total = 0.0; // Σ_k P(C_k t < C_k s + σ)
        let mut u = vec![0.0; n];
        let mut q = vec![0.0; n];
        for k in 0..n {
            let c = self.caps.get(k);
            let alive_at_t = self.dist.survival(c * (t - s));
            let alive_at_0 = self.dist.survival(-c * s);
            done_by_t += 1.0 - alive_at_t;
            done_in_between += alive_at_t - alive_at_0;
            s_busy_weighted += (self.gamma - self.recip[k]) * alive_at_0;
            u[k] = alive_at_t;
            u_total += alive_at_t;
            q[k] = self.busy_at_zero(k, t);
        }
        // H(s,t) = Σ_ℓ Σ_{k≠ℓ} (Γ/K − 1/C_ℓ) u_k q_ℓ E[σ]
        let h: f64 = (0..n)
            .map(|l| (self.gamma / kf - self.recip[l]) * q[l] * (u_total - u[l]))
            .sum::<f64>()
            * self.mean;
        done_by_t / kf * self.rhat1_unchecked(t)
            + done_in_between / kf * self.r0
            + s_busy_weighted / (kf * (kf - 1.0)) * self.mean
            + h / (kf * (kf - 1.0) * (kf - 1.0))
    }

    /// R̂₂(s, t) for s < t through the four-term decomposition (completed
    /// before t / completed in (t, 0] / s busy and t done at 0 / both busy
    /// at 0). Quadratic in K; used to cross-check [`TaggedModel::rhat2`].
    pub fn rhat2_expanded(&self, s: f64, t: f64) -> Result<f64, OracleError> {
        Self::check_pair(s, t)?;
        if s > 0.0 {
            return Ok(self.r0);
        }
        if t > 0.0 {
            return Ok(self.rhat1_unchecked(s));
        }
        let n = self.caps.len();
        let kf = self.k;
        let km1 = kf - 1.0;
        let done_by_t: Vec<f64> = (0..n)
            .map(|l| 1.0 - self.dist.survival(self.caps.get(l) * (t - s)))
            .collect();
        let done_between: Vec<f64> = (0..n)
            .map(|l| {
                let c = self.caps.get(l);
                self.dist.survival(c * (t - s)) - self.dist.survival(-c * s)
            })
            .collect();
        let p: Vec<f64> = (0..n).map(|l| self.busy_at_zero(l, s)).collect();
        let q: Vec<f64> = (0..n).map(|l| self.busy_at_zero(l, t)).collect();

        let term1 = done_by_t.iter().sum::<f64>() / kf * self.rhat1_unchecked(t);
        let mut term2 = 0.0;
        let mut term3 = 0.0;
        let mut term4 = 0.0;
        for k in 0..n {
            let mut inner = 0.0;
            for l in (0..n).filter(|&l| l != k) {
                inner += done_between[l];
                term3 += (self.gamma - self.recip[l]) * p[l] * (1.0 - q[k]);
                term4 += crate::analytics::sigma_kl(&self.caps, k, l) * p[k] * q[l];
            }
            term2 += inner * self.h_k_unchecked(t, k);
        }
        Ok(term1
            + term2 / (kf * km1)
            + term3 / (kf * km1 * km1) * self.mean
            + term4 / (kf * kf * km1 * km1) * self.mean)
    }

    /// R★(s, t) = R̂₂(s, t) − R̂₁(s) − R̂₁(t) + R̂₀ for s < t.
    pub fn r_star(&self, s: f64, t: f64) -> Result<f64, OracleError> {
        Self::check_pair(s, t)?;
        Ok(
            self.rhat2_compact_unchecked(s, t) - self.rhat1_unchecked(s) - self.rhat1_unchecked(t)
                + self.r0,
        )
    }

    /// Left end of the integration window: every t below it has
    /// P(C_k t + σ > 0) < [`TAIL_EPS`] for all k.
    pub fn truncation_point(&self) -> f64 {
        -self.dist.tail_bound(TAIL_EPS) / self.caps.min()
    }

    /// Epochs −x/C_k at which P(C_k t + σ > 0) jumps, for every atom x.
    fn jump_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for x in self.dist.atoms() {
            for &c in self.caps.as_slice() {
                out.push(-x / c);
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Job durations x/C_k for every atom x.
    fn atom_durations(&self) -> Vec<f64> {
        self.jump_times().into_iter().map(|t| -t).collect()
    }

    /// ∫_{−∞}^0 (R̂₁(t) − R̂₀) dt by adaptive quadrature.
    pub fn first_derivative_quadrature(&self, tol: f64) -> Result<f64, OracleError> {
        if !(tol > 0.0) {
            return Err(OracleError::BadTolerance(tol));
        }
        let lower = self.truncation_point();
        let opts = QuadOptions {
            rel_tol: tol,
            abs_tol: 1e-15 * self.r0 * lower.abs(),
            max_intervals: 5000,
        };
        let r = integrate(
            |t| self.rhat1_unchecked(t) - self.r0,
            lower,
            0.0,
            &self.jump_times(),
            opts,
        )?;
        Ok(r.value)
    }

    /// 2·∫_{−∞}^0 ∫_s^0 R★(s, t) dt ds by nested adaptive quadrature.
    pub fn second_derivative_quadrature(&self, tol: f64) -> Result<f64, OracleError> {
        if !(tol > 0.0) {
            return Err(OracleError::BadTolerance(tol));
        }
        let lower = self.truncation_point();
        let s_lower = 2.0 * lower;
        let durations = self.atom_durations();
        let jumps = self.jump_times();
        let mut outer_breaks = jumps.clone();
        for &a in &jumps {
            for &b in &durations {
                outer_breaks.push(a - b);
            }
        }
        let scale = self.r0 * lower * lower;
        let inner_opts = QuadOptions {
            rel_tol: tol * 1e-2,
            abs_tol: 1e-15 * scale,
            max_intervals: 5000,
        };
        let outer_opts = QuadOptions {
            rel_tol: tol,
            abs_tol: 1e-14 * scale,
            max_intervals: 5000,
        };
        let mut failure: Option<QuadratureError> = None;
        let inner = |s: f64| -> f64 {
            if s >= 0.0 {
                return 0.0;
            }
            let rhat1_s = self.rhat1_unchecked(s);
            let mut breaks = jumps.clone();
            breaks.extend(durations.iter().map(|d| s + d));
            match integrate(
                |t| {
                    if t <= s || t >= 0.0 {
                        return 0.0;
                    }
                    self.rhat2_compact_unchecked(s, t) - rhat1_s - self.rhat1_unchecked(t) + self.r0
                },
                s,
                0.0,
                &breaks,
                inner_opts,
            ) {
                Ok(r) => r.value,
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    0.0
                }
            }
        };
        // integrate needs FnMut; wrap the capturing closure
        let mut inner = inner;
        let r = integrate(&mut inner, s_lower, 0.0, &outer_breaks, outer_opts);
        if let Some(e) = failure {
            return Err(e.into());
        }
        Ok(2.0 * r?.value)
    }

    /// ∫_{−∞}^0 P(C_k t + σ > 0) dt, which should equal E[σ]/C_k.
    pub fn busy_probability_integral(&self, k: usize, tol: f64) -> Result<f64, OracleError> {
        self.check_k(k)?;
        let c = self.caps.get(k);
        let lower = -self.dist.tail_bound(TAIL_EPS) / c;
        let breaks: Vec<f64> = self.dist.atoms().iter().map(|x| -x / c).collect();
        let r = integrate(
            |t| self.busy_at_zero(k, t),
            lower,
            0.0,
            &breaks,
            QuadOptions {
                rel_tol: tol,
                abs_tol: 0.0,
                max_intervals: 5000,
            },
        )?;
        Ok(r.value)
    }
}

pub fn h_k(
    t: f64,
    k: usize,
    caps: &CapacityVector,
    dist: &ServiceDistribution,
) -> Result<f64, OracleError> {
    TaggedModel::new(caps, dist)?.h_k(t, k)
}

pub fn rhat1(
    t: f64,
    caps: &CapacityVector,
    dist: &ServiceDistribution,
) -> Result<f64, OracleError> {
    TaggedModel::new(caps, dist)?.rhat1(t)
}

pub fn rhat2(
    s: f64,
    t: f64,
    caps: &CapacityVector,
    dist: &ServiceDistribution,
) -> Result<f64, OracleError> {
    TaggedModel::new(caps, dist)?.rhat2(s, t)
}

pub fn first_derivative_quadrature(
    caps: &CapacityVector,
    dist: &ServiceDistribution,
    tol: f64,
) -> Result<f64, OracleError> {
    TaggedModel::new(caps, dist)?.first_derivative_quadrature(tol)
}

pub fn second_derivative_quadrature(
    caps: &CapacityVector,
    dist: &ServiceDistribution,
    tol: f64,
) -> Result<f64, OracleError> {
    TaggedModel::new(caps, dist)?.second_derivative_quadrature(tol)
}

/// The tagged job at time 0 plus `n ≤ 2` other arrivals at non-zero epochs.
#[derive(Debug, Clone)]
pub struct TaggedScenario {
    arrivals: Vec<f64>,
    caps: CapacityVector,
    dist: ServiceDistribution,
}

impl TaggedScenario {
    /// Arrival epochs are sorted on construction, so `(t, s)` and `(s, t)`
    /// describe the same scenario.
    pub fn new(
        mut arrivals: Vec<f64>,
        caps: &CapacityVector,
        dist: &ServiceDistribution,
    ) -> Result<Self, OracleError> {
        if arrivals.len() > 2 {
            return Err(OracleError::TooManyJobs(arrivals.len()));
        }
        if caps.len() < 2 {
            return Err(OracleError::SingleServer);
        }
        for &t in &arrivals {
            nonzero(t)?;
        }
        arrivals.sort_by(f64::total_cmp);
        if arrivals.len() == 2 && arrivals[0] == arrivals[1] {
            return Err(OracleError::UnorderedTimes {
                s: arrivals[0],
                t: arrivals[1],
            });
        }
        Ok(TaggedScenario {
            arrivals,
            caps: caps.clone(),
            dist: dist.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.arrivals.len()
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    /// Closed-form R̂_n at this scenario's epochs.
    pub fn closed_form(&self) -> Result<f64, OracleError> {
        let model = TaggedModel::new(&self.caps, &self.dist)?;
        match self.arrivals.as_slice() {
            [] => Ok(model.rhat0()),
            [t] => model.rhat1(*t),
            [s, t] => model.rhat2(*s, *t),
            _ => unreachable!("validated on construction"),
        }
    }

    /// One realisation: returns (σ₀/C_ν₀, full FCFS response of the tagged job).
    fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        events: &mut Vec<(f64, usize, f64)>,
    ) -> (f64, f64) {
        let k = self.caps.len();
        events.clear();
        let mut tagged = (0.0, 0.0);
        let mut tagged_done = false;
        let mut prior = self.arrivals.iter().copied().peekable();
        loop {
            let arrival = match prior.peek() {
                Some(&t) if t < 0.0 || tagged_done => {
                    prior.next();
                    t
                }
                _ if !tagged_done => 0.0,
                _ => break,
            };
            let is_tagged = arrival == 0.0 && !tagged_done;
            // uniform unordered pair of distinct servers
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            // jobs present at arrival: departures at or before `arrival` are gone
            let present = |srv: usize| {
                events
                    .iter()
                    .filter(|(_, s, done)| *s == srv && *done > arrival)
                    .count()
            };
            let (na, nb) = (present(a), present(b));
            let chosen = if na < nb {
                a
            } else if nb < na {
                b
            } else if rng.random_bool(0.5) {
                a
            } else {
                b
            };
            let size = self.dist.sample(rng);
            let free_at = events
                .iter()
                .filter(|(_, s, _)| *s == chosen)
                .map(|(_, _, done)| *done)
                .fold(f64::NEG_INFINITY, f64::max);
            let service = size / self.caps.get(chosen);
            let done = arrival.max(free_at) + service;
            events.push((arrival, chosen, done));
            if is_tagged {
                tagged = (service, done - arrival);
                tagged_done = true;
            }
        }
        tagged
    }
}

/// Welford accumulator; merging in a fixed order keeps results bitwise
/// reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (n − 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let se = (self.variance() / self.n.max(1) as f64).sqrt();
        McEstimate {
            mean: self.mean,
            half_width_95: Z_95 * se,
            samples: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub half_width_95: f64,
    pub samples: u64,
}

impl McEstimate {
    pub fn std_error(&self) -> f64 {
        self.half_width_95 / Z_95
    }

    /// |mean − reference| within `z` standard errors; exact agreement (to
    /// 1e-12 relative) is required when the estimate has zero spread.
    pub fn agrees_with(&self, reference: f64, z: f64) -> bool {
        let diff = (self.mean - reference).abs();
        let se = self.std_error();
        if se == 0.0 {
            diff <= 1e-12 * reference.abs().max(1e-300)
        } else {
            diff <= z * se
        }
    }
}

/// Monte-Carlo estimates for one tagged scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaggedMcEstimate {
    /// σ₀/C_ν₀: service time at the server the SQ(2) rule assigns.
    pub assignment: McEstimate,
    /// Waiting plus service under FCFS.
    pub response: McEstimate,
}

/// Simulate `samples` independent realisations of the scenario.
///
/// Work is split into [`MC_SHARDS`] shards, shard `i` drawing from
/// `RngStream::new(seed, i)`, so the result does not depend on the thread
/// count.
pub fn mc_tagged_response(scn: &TaggedScenario, samples: u64, seed: u64) -> TaggedMcEstimate {
    let shards = MC_SHARDS.min(samples.max(1));
    let base = samples / shards;
    let extra = samples % shards;
    let parts: Vec<(RunningMoments, RunningMoments)> = (0..shards)
        .into_par_iter()
        .map(|i| {
            let count = base + u64::from(i < extra);
            let mut rng = RngStream::new(seed, i);
            let mut scratch = Vec::with_capacity(3);
            let mut assign = RunningMoments::default();
            let mut full = RunningMoments::default();
            for _ in 0..count {
                let (a, r) = scn.sample(&mut rng, &mut scratch);
                assign.push(a);
                full.push(r);
            }
            (assign, full)
        })
        .collect();
    let mut assign = RunningMoments::default();
    let mut full = RunningMoments::default();
    for (a, f) in &parts {
        assign.merge(a);
        full.merge(f);
    }
    TaggedMcEstimate {
        assignment: assign.estimate(),
        response: full.estimate(),
    }
}
