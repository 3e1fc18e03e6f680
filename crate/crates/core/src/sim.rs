//! Event-driven simulation of SQ(d) over heterogeneous FCFS servers with
//! regenerative estimation of the mean response time.
//!
//! Each replication starts empty and is cut into regeneration cycles at the
//! epochs where the whole system empties. Per cycle it records the summed
//! response times and the number of jobs; the replication estimate is the
//! ratio of the totals.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{RngStream, ScenarioConfig, ServiceDistribution};

/// Default guard on the number of events inside one regeneration cycle.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("arrival rate must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("cycle did not close within {events} events at lambda = {lambda}")]
    DegenerateRun { lambda: f64, events: u64 },
    #[error("unstable load: rho = {rho} >= 1")]
    UnstableLoad { rho: f64 },
    #[error("invalid capacity {0}")]
    InvalidCapacity(f64),
}

/// Join the least-loaded of the sampled servers, breaking ties uniformly.
pub fn assign_server<R: Rng + ?Sized>(
    counts: &[usize],
    candidates: &[usize],
    rng: &mut R,
) -> usize {
    debug_assert!(!candidates.is_empty());
    let best = candidates
        .iter()
        .map(|&i| counts[i])
        .min()
        .expect("at least one candidate");
    let ties = candidates.iter().filter(|&&i| counts[i] == best).count();
    let pick = if ties == 1 {
        0
    } else {
        rng.random_range(0..ties)
    };
    candidates
        .iter()
        .copied()
        .filter(|&i| counts[i] == best)
        .nth(pick)
        .expect("pick < ties")
}

#[derive(Debug, Clone, Copy)]
struct Job {
    arrival: f64,
    work: f64,
}

/// One FCFS server: the in-service job plus its waiting line.
#[derive(Debug, Clone)]
pub struct ServerState {
    capacity: f64,
    in_service: Option<Job>,
    queue: VecDeque<Job>,
    next_departure: Option<f64>,
}

impl ServerState {
    fn new(capacity: f64) -> Self {
        ServerState {
            capacity,
            in_service: None,
            queue: VecDeque::new(),
            next_departure: None,
        }
    }

    /// Jobs in system, counting the one in service.
    pub fn jobs(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }

    pub fn next_departure(&self) -> Option<f64> {
        self.next_departure
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    fn check(&self) -> bool {
        (self.jobs() > 0) == self.next_departure.is_some()
            && (self.is_idle() <= self.queue.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Departure(usize),
    Arrival,
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::Departure(_) => 0,
            EventKind::Arrival => 1,
        }
    }
}

/// Event keyed by (time, kind, insertion order); departures precede an
/// arrival with the identical timestamp.
#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Totals for one regeneration cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cycle {
    pub response_sum: f64,
    pub jobs: u64,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub response_sum: f64,
    pub jobs: u64,
    pub cycles: u64,
    /// Standard error of the ratio estimator from the cycle-level
    /// regenerative central limit theorem.
    pub ratio_std_error: f64,
    pub events: u64,
}

impl Replication {
    pub fn mean_response(&self) -> f64 {
        self.response_sum / self.jobs as f64
    }
}

/// Simulation knobs beyond the scenario itself.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub event_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

struct System<'a> {
    servers: Vec<ServerState>,
    dist: &'a ServiceDistribution,
    d: usize,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    in_system: usize,
    counts: Vec<usize>,
    candidates: Vec<usize>,
    last_time: f64,
}

impl<'a> System<'a> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            kind,
            seq: self.seq,
        }));
    }

    fn start_service(&mut self, server: usize, now: f64, job: Job) {
        let s = &mut self.servers[server];
        let done = now + job.work / s.capacity;
        s.in_service = Some(job);
        s.next_departure = Some(done);
        self.push(done, EventKind::Departure(server));
    }

    fn arrive<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) {
        let k = self.servers.len();
        self.candidates.clear();
        if self.d == 2 {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            self.candidates.extend([a, b]);
        } else {
            self.candidates.extend(index::sample(rng, k, self.d));
        }
        let chosen = assign_server(&self.counts, &self.candidates, rng);
        let job = Job {
            arrival: now,
            work: self.dist.sample(rng),
        };
        self.counts[chosen] += 1;
        self.in_system += 1;
        if self.servers[chosen].is_idle() {
            self.start_service(chosen, now, job);
        } else {
            self.servers[chosen].queue.push_back(job);
        }
    }

    /// Returns the departing job's response time.
    fn depart(&mut self, now: f64, server: usize) -> f64 {
        let s = &mut self.servers[server];
        let job = s.in_service.take().expect("departure from a busy server");
        s.next_departure = None;
        self.counts[server] -= 1;
        self.in_system -= 1;
        if let Some(next) = self.servers[server].queue.pop_front() {
            self.start_service(server, now, next);
        }
        now - job.arrival
    }
}

/// Run one replication until `cycles` regeneration cycles have closed.
pub fn simulate_replication(
    scn: &ScenarioConfig,
    lambda: f64,
    cycles: usize,
    rng: &mut RngStream,
    opts: SimOptions,
) -> Result<Replication, SimError> {
    Ok(summarize(&run_cycles(
        scn,
        lambda,
        cycles,
        rng,
        opts,
        |_| {},
    )?))
}

struct RawRun {
    response_sum: f64,
    jobs: u64,
    cycles: u64,
    events: u64,
    // Σ Y², Σ N², Σ Y N over cycles, for the ratio standard error
    yy: f64,
    nn: f64,
    yn: f64,
}

fn summarize(raw: &RawRun) -> Replication {
    let n = raw.cycles as f64;
    let ratio = raw.response_sum / raw.jobs as f64;
    // Var(Y − rN) per cycle, divided by (mean N)² n
    let var_z = if raw.cycles > 1 {
        ((raw.yy - 2.0 * ratio * raw.yn + ratio * ratio * raw.nn) / n
            - (raw.response_sum / n - ratio * raw.jobs as f64 / n).powi(2))
        .max(0.0)
            * n
            / (n - 1.0)
    } else {
        0.0
    };
    let mean_n = raw.jobs as f64 / n;
    Replication {
        response_sum: raw.response_sum,
        jobs: raw.jobs,
        cycles: raw.cycles,
        ratio_std_error: (var_z / n).sqrt() / mean_n,
        events: raw.events,
    }
}

fn run_cycles<F: FnMut(&Cycle)>(
    scn: &ScenarioConfig,
    lambda: f64,
    cycles: usize,
    rng: &mut RngStream,
    opts: SimOptions,
    mut on_cycle: F,
) -> Result<RawRun, SimError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(SimError::InvalidLambda(lambda));
    }
    let k = scn.capacities.len();
    let interarrival = Exp::new(lambda).map_err(|_| SimError::InvalidLambda(lambda))?;
    let mut sys = System {
        servers: scn
            .capacities
            .as_slice()
            .iter()
            .map(|&c| ServerState::new(c))
            .collect(),
        dist: &scn.distribution,
        d: scn.d,
        events: BinaryHeap::with_capacity(k + 1),
        seq: 0,
        in_system: 0,
        counts: vec![0; k],
        candidates: Vec::with_capacity(scn.d),
        last_time: 0.0,
    };
    let mut raw = RawRun {
        response_sum: 0.0,
        jobs: 0,
        cycles: 0,
        events: 0,
        yy: 0.0,
        nn: 0.0,
        yn: 0.0,
    };
    let first = interarrival.sample(rng);
    sys.push(first, EventKind::Arrival);
    let mut cycle = Cycle {
        response_sum: 0.0,
        jobs: 0,
    };
    let mut cycle_events = 0u64;
    while raw.cycles < cycles as u64 {
        let Reverse(ev) = sys.events.pop().expect("an arrival is always pending");
        debug_assert!(ev.time >= sys.last_time, "event time went backwards");
        sys.last_time = ev.time;
        raw.events += 1;
        cycle_events += 1;
        if cycle_events > opts.event_cap {
            return Err(SimError::DegenerateRun {
                lambda,
                events: cycle_events,
            });
        }
        match ev.kind {
            EventKind::Arrival => {
                sys.arrive(ev.time, rng);
                let next = ev.time + interarrival.sample(rng);
                sys.push(next, EventKind::Arrival);
            }
            EventKind::Departure(server) => {
                let response = sys.depart(ev.time, server);
                cycle.response_sum += response;
                cycle.jobs += 1;
                if sys.in_system == 0 {
                    debug_assert!(sys.servers.iter().all(|s| s.check() && s.jobs() == 0));
                    on_cycle(&cycle);
                    raw.response_sum += cycle.response_sum;
                    raw.jobs += cycle.jobs;
                    raw.yy += cycle.response_sum * cycle.response_sum;
                    raw.nn += (cycle.jobs * cycle.jobs) as f64;
                    raw.yn += cycle.response_sum * cycle.jobs as f64;
                    raw.cycles += 1;
                    cycle = Cycle {
                        response_sum: 0.0,
                        jobs: 0,
                    };
                    cycle_events = 0;
                }
            }
        }
    }
    Ok(raw)
}

/// Visit every closed cycle of one replication (test and diagnostics hook).
pub fn for_each_cycle<F: FnMut(&Cycle)>(
    scn: &ScenarioConfig,
    lambda: f64,
    cycles: usize,
    rng: &mut RngStream,
    on_cycle: F,
) -> Result<Replication, SimError> {
    Ok(summarize(&run_cycles(
        scn,
        lambda,
        cycles,
        rng,
        SimOptions::default(),
        on_cycle,
    )?))
}

/// Mean response time at one arrival rate, aggregated over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub lambda: f64,
    pub mean_response: f64,
    pub half_width_95: f64,
    pub runs: usize,
    pub busy_periods_per_run: usize,
    pub total_jobs: u64,
}

impl SimEstimate {
    pub fn lower(&self) -> f64 {
        self.mean_response - self.half_width_95
    }

    pub fn upper(&self) -> f64 {
        self.mean_response + self.half_width_95
    }
}

/// Student-t 97.5% quantile.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Stream index for replication `run` of grid point `point`.
pub fn stream_index(point: usize, run: usize) -> u64 {
    ((point as u64) << 32) | run as u64
}

fn aggregate(lambda: f64, scn: &ScenarioConfig, reps: &[Replication]) -> SimEstimate {
    let means: Vec<f64> = reps.iter().map(Replication::mean_response).collect();
    let n = means.len();
    let mean = means.iter().sum::<f64>() / n as f64;
    let half_width_95 = if n > 1 {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        t_quantile_975(n - 1) * (var / n as f64).sqrt()
    } else {
        crate::oracle::Z_95 * reps[0].ratio_std_error
    };
    SimEstimate {
        lambda,
        mean_response: mean,
        half_width_95,
        runs: n,
        busy_periods_per_run: scn.busy_periods_per_run,
        total_jobs: reps.iter().map(|r| r.jobs).sum(),
    }
}

/// Simulate `scn.runs` independent replications at `lambda`. Replication
/// `r` uses `RngStream::new(scn.seed, stream_index(point, r))`.
pub fn simulate_point(
    scn: &ScenarioConfig,
    lambda: f64,
    point: usize,
    opts: SimOptions,
) -> Result<SimEstimate, SimError> {
    let reps: Vec<Replication> = (0..scn.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = RngStream::new(scn.seed, stream_index(point, run));
            simulate_replication(scn, lambda, scn.busy_periods_per_run, &mut rng, opts)
        })
        .collect::<Result<_, _>>()?;
    Ok(aggregate(lambda, scn, &reps))
}

/// Estimate at a single arrival rate (grid position 0 streams).
pub fn simulate(scn: &ScenarioConfig, lambda: f64) -> Result<SimEstimate, SimError> {
    simulate_point(scn, lambda, 0, SimOptions::default())
}

/// One estimate per grid point, in grid order, each from its own streams.
pub fn sweep(scn: &ScenarioConfig) -> Result<Vec<SimEstimate>, SimError> {
    sweep_with(scn, SimOptions::default())
}

pub fn sweep_with(scn: &ScenarioConfig, opts: SimOptions) -> Result<Vec<SimEstimate>, SimError> {
    scn.lambda_grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| simulate_point(scn, lambda, i, opts))
        .collect()
}

/// Pollaczek–Khinchine mean response of an M/G/1 queue with service σ/C.
pub fn mg1_reference(
    lambda: f64,
    dist: &ServiceDistribution,
    capacity: f64,
) -> Result<f64, SimError> {
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(SimError::InvalidCapacity(capacity));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SimError::InvalidLambda(lambda));
    }
    let es = dist.mean() / capacity;
    let es2 = dist.moment(2).expect("second moment") / (capacity * capacity);
    let rho = lambda * es;
    if rho >= 1.0 {
        return Err(SimError::UnstableLoad { rho });
    }
    Ok(es + lambda * es2 / (2.0 * (1.0 - rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CapacityVector, Family};

    fn single(dist: ServiceDistribution) -> ScenarioConfig {
        ScenarioConfig {
            capacities: CapacityVector::new(vec![1.0]).unwrap(),
            distribution: dist,
            d: 1,
            lambda_grid: vec![0.5],
            runs: 4,
            busy_periods_per_run: 2000,
            seed: 9,
        }
    }

    #[test]
    fn strict_minimum_wins() {
        let mut rng = RngStream::new(0, 0);
        for _ in 0..100 {
            assert_eq!(assign_server(&[0, 3], &[0, 1], &mut rng), 0);
            assert_eq!(assign_server(&[4, 3], &[0, 1], &mut rng), 1);
        }
    }

    #[test]
    fn single_candidate_ignores_counts() {
        let mut rng = RngStream::new(0, 0);
        assert_eq!(assign_server(&[9, 0, 0], &[0], &mut rng), 0);
    }

    #[test]
    fn tie_break_is_fair() {
        let mut rng = RngStream::new(42, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| assign_server(&[2, 2], &[0, 1], &mut rng) == 0)
            .count() as f64;
        let p = hits / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn mg1_values() {
        let e = Family::Exponential.unit_mean();
        assert!((mg1_reference(0.5, &e, 1.0).unwrap() - 2.0).abs() < 1e-15);
        let d = Family::Deterministic.unit_mean();
        assert!((mg1_reference(0.5, &d, 1.0).unwrap() - 1.5).abs() < 1e-15);
        let h = Family::Hyperexponential.unit_mean();
        assert!((mg1_reference(0.5, &h, 1.0).unwrap() - 2.5).abs() < 1e-14);
        assert!((mg1_reference(1e-12, &h, 4.0).unwrap() - 0.25).abs() < 1e-11);
        assert!(matches!(
            mg1_reference(1.0, &e, 1.0),
            Err(SimError::UnstableLoad { .. })
        ));
    }

    #[test]
    fn cycles_conserve_jobs() {
        let scn = single(Family::Exponential.unit_mean());
        let mut rng = RngStream::new(1, 0);
        let mut total = 0;
        let rep = for_each_cycle(&scn, 0.5, 500, &mut rng, |c| {
            assert!(c.jobs >= 1);
            assert!(c.response_sum > 0.0);
            total += c.jobs;
        })
        .unwrap();
        assert_eq!(rep.jobs, total);
        assert_eq!(rep.cycles, 500);
    }

    #[test]
    fn deterministic_light_load_has_no_waiting() {
        // one server, σ ≡ 1 at C = 4; almost every job finds the system empty
        let mut scn = single(Family::Deterministic.unit_mean());
        scn.capacities = CapacityVector::new(vec![4.0]).unwrap();
        let mut rng = RngStream::new(3, 0);
        let rep = simulate_replication(&scn, 1e-3, 200, &mut rng, SimOptions::default()).unwrap();
        assert!((rep.mean_response() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn event_cap_surfaces_degenerate_run() {
        let scn = single(Family::Exponential.unit_mean());
        let mut rng = RngStream::new(1, 0);
        let r = simulate_replication(&scn, 50.0, 10, &mut rng, SimOptions { event_cap: 1000 });
        assert!(matches!(r, Err(SimError::DegenerateRun { .. })));
    }

    #[test]
    fn rejects_bad_lambda() {
        let scn = single(Family::Exponential.unit_mean());
        assert!(matches!(
            simulate(&scn, 0.0),
            Err(SimError::InvalidLambda(_))
        ));
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(9) - 2.262157).abs() < 1e-5);
        assert!((t_quantile_975(1000) - 1.962339).abs() < 1e-4);
    }
}
