//! Domain types shared by the analytic, oracle and simulation layers:
//! server capacities, service-requirement distributions, scenario
//! configuration and reproducible random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;
use thiserror::Error;

/// Tolerance on the total mass of hyperexponential mixing weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

pub const DEFAULT_CHOICES: usize = 2;
pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_BUSY_PERIODS: usize = 100_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-positive or non-finite parameter `{name}` = {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("mixing weights must be nonnegative and sum to 1 (sum = {sum})")]
    WeightsNotNormalized { sum: f64 },
    #[error("weights and rates differ in length ({weights} vs {rates})")]
    MixtureShape { weights: usize, rates: usize },
    #[error("weibull shape {shape} < 1 has no finite exponential moment")]
    NoExponentialMoment { shape: f64 },
    #[error("only raw moments of order 1..=3 are available in closed form (requested {0})")]
    UnsupportedMoment(u32),
    #[error("invalid capacity at index {index}: {value}")]
    InvalidCapacity { index: usize, value: f64 },
    #[error("capacity vector is empty")]
    NoServers,
    #[error("choice count d = {d} must satisfy 1 <= d <= K = {k}")]
    InvalidChoiceCount { d: usize, k: usize },
    #[error("lambda grid is empty")]
    EmptyLambdaGrid,
    #[error("arrival rate at grid position {index} is not a positive finite number: {value}")]
    InvalidLambda { index: usize, value: f64 },
    #[error("`{field}` must be at least 1")]
    ZeroCount { field: &'static str },
}

impl ModelError {
    /// Name of the configuration field an error refers to.
    pub fn field(&self) -> &'static str {
        match self {
            ModelError::NonPositiveParameter { .. }
            | ModelError::WeightsNotNormalized { .. }
            | ModelError::MixtureShape { .. }
            | ModelError::NoExponentialMoment { .. }
            | ModelError::UnsupportedMoment(_) => "distribution",
            ModelError::InvalidCapacity { .. } | ModelError::NoServers => "capacities",
            ModelError::InvalidChoiceCount { .. } => "d",
            ModelError::EmptyLambdaGrid | ModelError::InvalidLambda { .. } => "lambda_grid",
            ModelError::ZeroCount { field } => field,
        }
    }
}

/// Neumaier-compensated sum. Repeated reciprocals such as 5 × (1/10)
/// come out as the correctly rounded total instead of drifting by an ulp.
pub fn accurate_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Server capacities in bytes/sec. Always non-empty, each entry positive and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CapacityVector(Vec<f64>);

impl CapacityVector {
    pub fn new(capacities: Vec<f64>) -> Result<Self, ModelError> {
        if capacities.is_empty() {
            return Err(ModelError::NoServers);
        }
        for (index, &value) in capacities.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidCapacity { index, value });
            }
        }
        let caps = CapacityVector(capacities);
        let gamma = caps.gamma();
        if !(gamma.is_finite() && gamma > 0.0) {
            // subnormal capacities overflow 1/C
            return Err(ModelError::InvalidCapacity {
                index: caps.argmin(),
                value: caps.min(),
            });
        }
        Ok(caps)
    }

    /// `count` servers of capacity `c` followed by nothing else.
    pub fn homogeneous(count: usize, c: f64) -> Result<Self, ModelError> {
        Self::new(vec![c; count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    /// Reciprocal capacities 1/C_k, the atoms of the uniform variable X.
    pub fn reciprocals(&self) -> Vec<f64> {
        self.0.iter().map(|c| 1.0 / c).collect()
    }

    /// Γ = Σ_k 1/C_k.
    pub fn gamma(&self) -> f64 {
        accurate_sum(self.0.iter().map(|c| 1.0 / c))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn argmin(&self) -> usize {
        let m = self.min();
        self.0.iter().position(|&c| c == m).unwrap_or(0)
    }

    /// True when every server has bitwise the same capacity.
    pub fn is_homogeneous(&self) -> bool {
        self.0.iter().all(|&c| c == self.0[0])
    }

    /// Copy with every capacity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Self::new(self.0.iter().map(|c| c * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for CapacityVector {
    type Error = ModelError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CapacityVector> for Vec<f64> {
    fn from(value: CapacityVector) -> Self {
        value.0
    }
}

/// Unchecked distribution parameters as they appear in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSpec {
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Deterministic { value: f64 },
}

/// Law of the job size σ (bytes). Construct through [`make_distribution`]
/// or the family constructors, which validate parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub enum ServiceDistribution {
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Deterministic { value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NonPositiveParameter { name, value })
    }
}

/// Validate a parameter set and build the distribution.
pub fn make_distribution(spec: DistributionSpec) -> Result<ServiceDistribution, ModelError> {
    match spec {
        DistributionSpec::Hyperexponential { weights, rates } => {
            ServiceDistribution::hyperexponential(weights, rates)
        }
        DistributionSpec::Exponential { rate } => ServiceDistribution::exponential(rate),
        DistributionSpec::Weibull { shape, scale } => ServiceDistribution::weibull(shape, scale),
        DistributionSpec::Deterministic { value } => ServiceDistribution::deterministic(value),
    }
}

impl TryFrom<DistributionSpec> for ServiceDistribution {
    type Error = ModelError;

    fn try_from(value: DistributionSpec) -> Result<Self, Self::Error> {
        make_distribution(value)
    }
}

impl From<ServiceDistribution> for DistributionSpec {
    fn from(value: ServiceDistribution) -> Self {
        match value {
            ServiceDistribution::Hyperexponential { weights, rates } => {
                DistributionSpec::Hyperexponential { weights, rates }
            }
            ServiceDistribution::Exponential { rate } => DistributionSpec::Exponential { rate },
            ServiceDistribution::Weibull { shape, scale } => {
                DistributionSpec::Weibull { shape, scale }
            }
            ServiceDistribution::Deterministic { value } => {
                DistributionSpec::Deterministic { value }
            }
        }
    }
}

/// The four unit-mean job-size laws used in the reference study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Hyperexponential,
    Exponential,
    Weibull,
    Deterministic,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Hyperexponential,
        Family::Exponential,
        Family::Weibull,
        Family::Deterministic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Hyperexponential => "hyperexponential",
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Deterministic => "deterministic",
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    /// Unit-mean member of the family: H2 mixing Exp(1/2) and Exp(2) with
    /// probabilities 1/3 and 2/3, Exp(1), Weibull(shape 2, scale 2/√π), and
    /// the point mass at 1.
    pub fn unit_mean(self) -> ServiceDistribution {
        match self {
            Family::Hyperexponential => ServiceDistribution::Hyperexponential {
                weights: vec![1.0 / 3.0, 2.0 / 3.0],
                rates: vec![0.5, 2.0],
            },
            Family::Exponential => ServiceDistribution::Exponential { rate: 1.0 },
            Family::Weibull => ServiceDistribution::Weibull {
                shape: 2.0,
                scale: 1.0 / gamma_fn(1.5),
            },
            Family::Deterministic => ServiceDistribution::Deterministic { value: 1.0 },
        }
    }
}

impl ServiceDistribution {
    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != rates.len() || weights.is_empty() {
            return Err(ModelError::MixtureShape {
                weights: weights.len(),
                rates: rates.len(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || !((sum - 1.0).abs() <= WEIGHT_SUM_TOL)
        {
            return Err(ModelError::WeightsNotNormalized { sum });
        }
        for &r in &rates {
            positive("rate", r)?;
        }
        Ok(ServiceDistribution::Hyperexponential { weights, rates })
    }

    pub fn exponential(rate: f64) -> Result<Self, ModelError> {
        Ok(ServiceDistribution::Exponential {
            rate: positive("rate", rate)?,
        })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self, ModelError> {
        positive("shape", shape)?;
        positive("scale", scale)?;
        if shape < 1.0 {
            return Err(ModelError::NoExponentialMoment { shape });
        }
        Ok(ServiceDistribution::Weibull { shape, scale })
    }

    pub fn deterministic(value: f64) -> Result<Self, ModelError> {
        Ok(ServiceDistribution::Deterministic {
            value: positive("value", value)?,
        })
    }

    pub fn family(&self) -> Family {
        match self {
            ServiceDistribution::Hyperexponential { .. } => Family::Hyperexponential,
            ServiceDistribution::Exponential { .. } => Family::Exponential,
            ServiceDistribution::Weibull { .. } => Family::Weibull,
            ServiceDistribution::Deterministic { .. } => Family::Deterministic,
        }
    }

    /// P(σ > x). Right-continuous CDF convention: a point mass at c has
    /// survival 1 strictly below c and 0 from c on.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self {
            ServiceDistribution::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * (-r * x).exp())
                .sum::<f64>()
                .min(1.0),
            ServiceDistribution::Exponential { rate } => (-rate * x).exp(),
            ServiceDistribution::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            ServiceDistribution::Deterministic { value } => {
                if x < *value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// P(σ ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    /// Closed-form raw moment E[σ^p] for p in 1..=3.
    pub fn moment(&self, p: u32) -> Result<f64, ModelError> {
        if !(1..=3).contains(&p) {
            return Err(ModelError::UnsupportedMoment(p));
        }
        let fact = (1..=p).product::<u32>() as f64;
        Ok(match self {
            ServiceDistribution::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * fact / r.powi(p as i32))
                .sum(),
            ServiceDistribution::Exponential { rate } => fact / rate.powi(p as i32),
            ServiceDistribution::Weibull { shape, scale } => {
                scale.powi(p as i32) * gamma_fn(1.0 + p as f64 / shape)
            }
            ServiceDistribution::Deterministic { value } => value.powi(p as i32),
        })
    }

    pub fn mean(&self) -> f64 {
        self.moment(1).expect("first moment always available")
    }

    /// Coefficient of variation sqrt(Var σ)/E σ.
    pub fn cv(&self) -> f64 {
        let m1 = self.mean();
        let m2 = self.moment(2).expect("second moment always available");
        (m2 - m1 * m1).max(0.0).sqrt() / m1
    }

    /// Every supported family has E[e^{θσ}] < ∞ for some θ > 0; this returns
    /// the supremum of such θ (infinite for Weibull with shape > 1 and for a
    /// point mass).
    pub fn exponential_moment_abscissa(&self) -> f64 {
        match self {
            ServiceDistribution::Hyperexponential { rates, .. } => {
                rates.iter().copied().fold(f64::INFINITY, f64::min)
            }
            ServiceDistribution::Exponential { rate } => *rate,
            ServiceDistribution::Weibull { shape, scale } => {
                if *shape > 1.0 {
                    f64::INFINITY
                } else {
                    1.0 / scale
                }
            }
            ServiceDistribution::Deterministic { .. } => f64::INFINITY,
        }
    }

    pub fn has_exponential_moment(&self) -> bool {
        self.exponential_moment_abscissa() > 0.0
    }

    /// Smallest x with survival(x) < eps (an upper end for the support when
    /// it is bounded).
    pub fn tail_bound(&self, eps: f64) -> f64 {
        let log_inv = (1.0 / eps).ln();
        match self {
            ServiceDistribution::Hyperexponential { rates, .. } => {
                let slowest = rates.iter().copied().fold(f64::INFINITY, f64::min);
                log_inv / slowest
            }
            ServiceDistribution::Exponential { rate } => log_inv / rate,
            ServiceDistribution::Weibull { shape, scale } => scale * log_inv.powf(1.0 / shape),
            ServiceDistribution::Deterministic { value } => *value,
        }
    }

    /// Locations of point masses, where the survival function jumps.
    pub fn atoms(&self) -> Vec<f64> {
        match self {
            ServiceDistribution::Deterministic { value } => vec![*value],
            _ => Vec::new(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceDistribution::Hyperexponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                let e: f64 = Exp1.sample(rng);
                e / rates[chosen]
            }
            ServiceDistribution::Exponential { rate } => {
                Exp::new(*rate).expect("validated rate").sample(rng)
            }
            ServiceDistribution::Weibull { shape, scale } => Weibull::new(*scale, *shape)
                .expect("validated parameters")
                .sample(rng),
            ServiceDistribution::Deterministic { value } => *value,
        }
    }
}

/// Scenario parameters as read from a file; optional fields take the
/// reference-protocol defaults during [`validate_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub capacities: Vec<f64>,
    pub distribution: DistributionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub lambda_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub busy_periods_per_run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub capacities: CapacityVector,
    pub distribution: ServiceDistribution,
    pub d: usize,
    pub lambda_grid: Vec<f64>,
    pub runs: usize,
    pub busy_periods_per_run: usize,
    pub seed: u64,
}

pub fn validate_scenario(raw: RawScenario) -> Result<ScenarioConfig, ModelError> {
    let capacities = CapacityVector::new(raw.capacities)?;
    let distribution = make_distribution(raw.distribution)?;
    let d = raw.d.unwrap_or(DEFAULT_CHOICES);
    if d == 0 || d > capacities.len() {
        return Err(ModelError::InvalidChoiceCount {
            d,
            k: capacities.len(),
        });
    }
    if raw.lambda_grid.is_empty() {
        return Err(ModelError::EmptyLambdaGrid);
    }
    for (index, &value) in raw.lambda_grid.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::InvalidLambda { index, value });
        }
    }
    let runs = raw.runs.unwrap_or(DEFAULT_RUNS);
    if runs == 0 {
        return Err(ModelError::ZeroCount { field: "runs" });
    }
    let busy_periods_per_run = raw.busy_periods_per_run.unwrap_or(DEFAULT_BUSY_PERIODS);
    if busy_periods_per_run == 0 {
        return Err(ModelError::ZeroCount {
            field: "busy_periods_per_run",
        });
    }
    Ok(ScenarioConfig {
        capacities,
        distribution,
        d,
        lambda_grid: raw.lambda_grid,
        runs,
        busy_periods_per_run,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
    })
}

impl ScenarioConfig {
    /// Fully explicit raw form; validating it yields `self` again.
    pub fn to_raw(&self) -> RawScenario {
        RawScenario {
            capacities: self.capacities.clone().into(),
            distribution: self.distribution.clone().into(),
            d: Some(self.d),
            lambda_grid: self.lambda_grid.clone(),
            runs: Some(self.runs),
            busy_periods_per_run: Some(self.busy_periods_per_run),
            seed: Some(self.seed),
        }
    }
}

/// Deterministic random stream addressed by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream index selecting one of its 2^64
/// independent keystreams, so replication `i` can build its own stream
/// without coordinating with any other worker.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { inner }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
