//! Cross-checks of the closed forms against independent evaluations.

use serde::Serialize;
use sq2lt::analytics::{
    identity_h_kl, identity_sigma_k, r_double_prime, r_double_prime_alternate,
    r_double_prime_direct, r_prime, r_prime_alternate, r_prime_direct, r_zero,
};
use sq2lt::model::{CapacityVector, ScenarioConfig};
use sq2lt::oracle::{mc_tagged_response, TaggedModel, TaggedScenario};

use crate::error::CliError;

pub const DEFAULT_SAMPLES: u64 = 1_000_000;
pub const MIN_SAMPLES: u64 = 10_000;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const FORMS_TOL: f64 = 1e-9;
pub const FIRST_QUADRATURE_TOL: f64 = 1e-6;
pub const SECOND_QUADRATURE_TOL: f64 = 1e-3;
/// Allowed distance between an MC mean and its closed form, in standard errors.
pub const MC_Z: f64 = 3.0;
/// Fraction of MC cells that must fall inside the window.
pub const MC_PASS_FRACTION: f64 = 0.9;

/// Arrival epochs of the other jobs, in units of the mean service time R̂₀,
/// covering the empty scenario, past and future single jobs, and the three
/// orderings of two jobs around the tagged arrival.
pub const MC_CELLS: [&[f64]; 20] = [
    &[],
    &[-0.05],
    &[-0.1],
    &[-0.5],
    &[-1.0],
    &[-2.0],
    &[-4.0],
    &[0.5],
    &[2.0],
    &[-0.05, -0.02],
    &[-0.5, -0.2],
    &[-1.0, -0.5],
    &[-1.5, -1.2],
    &[-2.0, -0.3],
    &[-3.0, -1.0],
    &[-0.3, 0.4],
    &[-1.0, 0.5],
    &[-2.0, 1.0],
    &[0.2, 0.8],
    &[1.0, 3.0],
];

/// One comparison. For Monte-Carlo checks `mc_mean` is the sample mean of
/// the assigned service time and `mc_half_width` its 95% half-width; for
/// deterministic checks it holds the independent value and `samples` is 0.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub group: &'static str,
    pub quantity: String,
    pub method: &'static str,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_half_width: f64,
    pub samples: u64,
    /// mc_mean − closed_form
    pub discrepancy: f64,
    /// relative tolerance, or z-score bound for MC rows
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_response_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_response_half_width: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub total: usize,
    pub failed: usize,
    pub mc_cells: usize,
    pub mc_cells_within: usize,
    pub mc_required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub k: usize,
    pub family: &'static str,
    pub samples: u64,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub summary: VerifySummary,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub samples: u64,
    pub seed: u64,
    /// Overrides both quadrature tolerances when set.
    pub tol: Option<f64>,
    /// Negative control: scale this capacity by 1.5 in the closed forms only.
    pub corrupt_capacity: Option<usize>,
}

fn deterministic(
    group: &'static str,
    quantity: impl Into<String>,
    method: &'static str,
    closed: f64,
    other: f64,
    scale: f64,
    tol: f64,
) -> CheckRecord {
    let discrepancy = other - closed;
    let pass = discrepancy.abs() <= tol * scale;
    CheckRecord {
        group,
        quantity: quantity.into(),
        method,
        closed_form: closed,
        mc_mean: other,
        mc_half_width: 0.0,
        samples: 0,
        discrepancy,
        tolerance: tol,
        pass,
        full_response_mean: None,
        full_response_half_width: None,
    }
}

/// Denominator for relative comparisons of an order-n derivative: the
/// value itself, or R̂₀^(n+1) when the value is exactly zero.
fn scale(value: f64, r0: f64, order: i32) -> f64 {
    if value == 0.0 {
        r0.powi(order + 1)
    } else {
        value.abs()
    }
}

pub fn run_verify(config: &ScenarioConfig, opts: VerifyOptions) -> Result<VerifyReport, CliError> {
    if opts.samples < MIN_SAMPLES {
        return Err(CliError::Validation {
            field: "samples".into(),
            message: format!("need at least {MIN_SAMPLES} samples, got {}", opts.samples),
        });
    }
    if let Some(t) = opts.tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(CliError::Validation {
                field: "tol".into(),
                message: format!("tolerance must be positive, got {t}"),
            });
        }
    }
    let caps = &config.capacities;
    let dist = &config.distribution;
    let mean = dist.mean();
    let k = caps.len();
    let closed_caps = match opts.corrupt_capacity {
        Some(i) if i < k => {
            let mut v = caps.as_slice().to_vec();
            v[i] *= 1.5;
            CapacityVector::new(v)?
        }
        Some(i) => {
            return Err(CliError::Usage(format!(
                "corrupted index {i} out of range (K = {k})"
            )))
        }
        None => caps.clone(),
    };
    let mut checks = Vec::new();

    // identities
    for a in 0..k {
        let c = identity_sigma_k(caps, a)?;
        checks.push(deterministic(
            "identity",
            format!("sigma_k[{a}]"),
            "double_sum",
            c.closed,
            c.brute,
            c.closed.abs().max(c.brute.abs()),
            IDENTITY_TOL,
        ));
    }
    for a in 0..k {
        for b in (a + 1)..k {
            let c = identity_h_kl(caps, a, b)?;
            checks.push(deterministic(
                "identity",
                format!("h_kl[{a},{b}]"),
                "double_sum",
                c.h.closed,
                c.h.brute,
                c.h.closed.abs().max(c.h.brute.abs()),
                IDENTITY_TOL,
            ));
            checks.push(deterministic(
                "identity",
                format!("sigma_kl[{a},{b}]"),
                "double_sum",
                c.sigma.closed,
                c.sigma.brute,
                c.sigma.closed.abs().max(c.sigma.brute.abs()),
                IDENTITY_TOL,
            ));
        }
    }

    // both forms of each derivative
    let r0 = r_zero(&closed_caps, mean)?;
    let r1 = r_prime(&closed_caps, mean)?;
    let r2 = r_double_prime(&closed_caps, mean)?;
    let s1 = scale(r1, r0, 1);
    let s2 = scale(r2, r0, 2);
    checks.push(deterministic(
        "forms",
        "r1",
        "direct_sum",
        r1,
        r_prime_direct(&closed_caps, mean)?,
        s1,
        FORMS_TOL,
    ));
    checks.push(deterministic(
        "forms",
        "r1",
        "alternate",
        r1,
        r_prime_alternate(&closed_caps, mean)?,
        s1,
        FORMS_TOL,
    ));
    checks.push(deterministic(
        "forms",
        "r2",
        "direct_sum",
        r2,
        r_double_prime_direct(&closed_caps, mean)?,
        s2,
        FORMS_TOL,
    ));
    checks.push(deterministic(
        "forms",
        "r2",
        "alternate",
        r2,
        r_double_prime_alternate(&closed_caps, mean)?,
        s2,
        FORMS_TOL,
    ));

    let model = TaggedModel::new(caps, dist)?;
    let unit = model.rhat0();
    for &t in &[-0.1, -1.0, -4.0] {
        for srv in [0, k - 1] {
            let h = model.h_k(t * unit, srv)?;
            let alt = model.h_k_alternate(t * unit, srv)?;
            checks.push(deterministic(
                "forms",
                format!("h_k[{srv}]({t})"),
                "alternate",
                h,
                alt,
                h.abs(),
                FORMS_TOL,
            ));
        }
    }
    for &(s, t) in &[(-1.0, -0.5), (-2.0, 0.5), (0.2, 0.8)] {
        let compact = model.rhat2(s * unit, t * unit)?;
        let expanded = model.rhat2_expanded(s * unit, t * unit)?;
        checks.push(deterministic(
            "forms",
            format!("rhat2({s},{t})"),
            "four_term",
            compact,
            expanded,
            compact.abs(),
            FORMS_TOL,
        ));
    }

    // quadrature of the tagged-job integrals
    let tol1 = opts.tol.unwrap_or(FIRST_QUADRATURE_TOL);
    let tol2 = opts.tol.unwrap_or(SECOND_QUADRATURE_TOL);
    let q1 = model.first_derivative_quadrature(tol1 * 1e-3)?;
    checks.push(deterministic(
        "quadrature",
        "r1",
        "integral",
        r1,
        q1,
        s1,
        tol1,
    ));
    let q2 = model.second_derivative_quadrature(tol2 * 1e-3)?;
    checks.push(deterministic(
        "quadrature",
        "r2",
        "double_integral",
        r2,
        q2,
        s2,
        tol2,
    ));

    // Monte Carlo over tagged scenarios
    let mut within = 0;
    for (i, cell) in MC_CELLS.iter().enumerate() {
        let epochs: Vec<f64> = cell.iter().map(|x| x * unit).collect();
        let scn = TaggedScenario::new(epochs, caps, dist)?;
        let closed =
            TaggedScenario::new(scn.arrivals().to_vec(), &closed_caps, dist)?.closed_form()?;
        let est = mc_tagged_response(&scn, opts.samples, opts.seed.wrapping_add(i as u64));
        let ok = est.assignment.agrees_with(closed, MC_Z);
        within += usize::from(ok);
        checks.push(CheckRecord {
            group: "monte_carlo",
            quantity: format!("rhat{}{:?}", cell.len(), cell),
            method: "tagged_simulation",
            closed_form: closed,
            mc_mean: est.assignment.mean,
            mc_half_width: est.assignment.half_width_95,
            samples: est.assignment.samples,
            discrepancy: est.assignment.mean - closed,
            tolerance: MC_Z,
            pass: ok,
            full_response_mean: Some(est.response.mean),
            full_response_half_width: Some(est.response.half_width_95),
        });
    }

    let required = (MC_PASS_FRACTION * MC_CELLS.len() as f64).ceil() as usize;
    let failed = checks
        .iter()
        .filter(|c| c.group != "monte_carlo" && !c.pass)
        .count()
        + usize::from(within < required);
    let summary = VerifySummary {
        total: checks.len(),
        failed,
        mc_cells: MC_CELLS.len(),
        mc_cells_within: within,
        mc_required: required,
        pass: failed == 0,
    };
    Ok(VerifyReport {
        k,
        family: dist.family().name(),
        samples: opts.samples,
        seed: opts.seed,
        checks,
        summary,
    })
}
