//! Single-server laboratory: M/M/1, M/G/1 processor sharing and the
//! one-dimensional reflected Brownian motion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::stats::{batch_mean_se, integrated_autocorrelation_time, BatchMeans};

/// Service requirement distribution `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkDistribution {
    Exponential { mu: f64 },
    Deterministic { size: f64 },
    /// Piecewise-linear cdf through `(x_k, cdf_k)`; `cdf` is nondecreasing and
    /// ends at 1. A positive `cdf_0` is an atom at `x_0`.
    Table { x: Vec<f64>, cdf: Vec<f64> },
}

impl WorkDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Exponential { mu } if !(mu.is_finite() && *mu > 0.0) => {
                Err(Error::InvalidParameter("exponential work needs mu > 0".into()))
            }
            Self::Deterministic { size } if !(size.is_finite() && *size > 0.0) => {
                Err(Error::InvalidParameter("deterministic work needs size > 0".into()))
            }
            Self::Table { x, cdf } => {
                let ok = x.len() == cdf.len()
                    && x.len() >= 2
                    && x[0] >= 0.0
                    && x.windows(2).all(|p| p[1] > p[0])
                    && cdf.windows(2).all(|p| p[1] >= p[0])
                    && cdf[0] >= 0.0
                    && (cdf[cdf.len() - 1] - 1.0).abs() < 1e-12
                    && x.iter().all(|v| v.is_finite());
                if ok && self.mean() > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(
                        "work table needs increasing x ≥ 0 and a nondecreasing cdf ending at 1".into(),
                    ))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { mu } => 1.0 / mu,
            Self::Deterministic { size } => *size,
            Self::Table { x, cdf } => {
                let mut m = cdf[0] * x[0];
                for k in 0..x.len() - 1 {
                    m += (cdf[k + 1] - cdf[k]) * 0.5 * (x[k] + x[k + 1]);
                }
                m
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { mu } => 2.0 / (mu * mu),
            Self::Deterministic { size } => size * size,
            Self::Table { x, cdf } => {
                let mut m = cdf[0] * x[0] * x[0];
                for k in 0..x.len() - 1 {
                    let (a, b) = (x[k], x[k + 1]);
                    m += (cdf[k + 1] - cdf[k]) * (a * a + a * b + b * b) / 3.0;
                }
                m
            }
        }
    }

    /// `σ² = E(S²)/E(S)`.
    pub fn sigma2(&self) -> f64 {
        self.second_moment() / self.mean()
    }

    /// The rate `μ = 1/E(S)`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { mu } => 1.0 - (-mu * x).exp(),
            Self::Deterministic { size } => {
                if x >= *size {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Table { x: xs, cdf } => {
                if x < xs[0] {
                    return 0.0;
                }
                let k = xs.partition_point(|&v| v <= x);
                if k >= xs.len() {
                    return 1.0;
                }
                let (a, b) = (xs[k - 1], xs[k]);
                cdf[k - 1] + (cdf[k] - cdf[k - 1]) * (x - a) / (b - a)
            }
        }
    }

    /// Inverse-cdf sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { mu } => Exp::new(*mu).expect("validated rate").sample(rng),
            Self::Deterministic { size } => *size,
            Self::Table { x, cdf } => {
                let u: f64 = rng.random();
                if u <= cdf[0] {
                    return x[0];
                }
                let k = cdf.partition_point(|&c| c < u).clamp(1, x.len() - 1);
                let span = cdf[k] - cdf[k - 1];
                if span <= 0.0 {
                    return x[k];
                }
                x[k - 1] + (x[k] - x[k - 1]) * (u - cdf[k - 1]) / span
            }
        }
    }
}

/// Stationary cdf of the residual work `G*(x) = μ ∫₀ˣ (1 − G(z)) dz`.
pub fn forward_recurrence_cdf(g: &WorkDistribution, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mu = g.rate();
    let integral = match g {
        WorkDistribution::Exponential { mu } => return 1.0 - (-mu * x).exp(),
        WorkDistribution::Deterministic { size } => x.min(*size),
        WorkDistribution::Table { x: xs, cdf } => {
            // 1 − G is 1 below x_0 and linear on each segment
            let mut acc = x.min(xs[0]);
            for k in 0..xs.len() - 1 {
                let (a, b) = (xs[k], xs[k + 1]);
                if x <= a {
                    break;
                }
                let hi = x.min(b);
                let g_at = |z: f64| cdf[k] + (cdf[k + 1] - cdf[k]) * (z - a) / (b - a);
                acc += (hi - a) * (1.0 - 0.5 * (g_at(a) + g_at(hi)));
            }
            acc
        }
    };
    (mu * integral).min(1.0)
}

/// The geometric law `P{N = n} = (1 − ρ)ρⁿ` of the M/M/1 queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometric {
    pub rho: f64,
}

impl Geometric {
    pub fn pmf(&self, n: usize) -> f64 {
        (1.0 - self.rho) * self.rho.powi(n as i32)
    }

    pub fn pmf_vec(&self, max_n: usize) -> Vec<f64> {
        (0..=max_n).map(|n| self.pmf(n)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.rho / (1.0 - self.rho)
    }
}

pub fn mm1_stationary(rho: f64) -> Result<Geometric> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidParameter(format!("load {rho} must be nonnegative")));
    }
    if rho >= 1.0 {
        return Err(Error::UnstableLoad(format!("load {rho} ≥ 1")));
    }
    Ok(Geometric { rho })
}

/// Recorded path of a single queue: workload `W`, count `N`, cumulative idleness `U`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueuePath {
    pub time: Vec<f64>,
    pub w: Vec<f64>,
    pub n: Vec<f64>,
    pub u: Vec<f64>,
}

impl QueuePath {
    fn push(&mut self, t: f64, w: f64, n: f64, u: f64) {
        self.time.push(t);
        self.w.push(w);
        self.n.push(n);
        self.u.push(u);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }
}

/// Run-length controls for the event-driven queue simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRun {
    /// Arrival plus departure events to simulate.
    pub events: usize,
    /// Fraction of events discarded before statistics are collected.
    pub burn_in: f64,
    /// Customers present at time zero.
    pub initial: usize,
    /// Record the path at every `record_every`-th event (0 disables recording).
    pub record_every: usize,
    pub seed: u64,
    pub replication: u64,
}

impl QueueRun {
    pub fn new(events: usize, seed: u64) -> Self {
        Self { events, burn_in: 0.2, initial: 0, record_every: 0, seed, replication: 0 }
    }
}

/// Time-weighted occupancy statistics of a queue simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueStats {
    /// Fraction of post-burn-in time spent with `n` customers.
    pub occupancy: Vec<f64>,
    pub mean_n: f64,
    /// Batch-means standard error of `mean_n`.
    pub mean_n_se: f64,
    pub mean_w: f64,
    pub duration: f64,
    pub events: usize,
    /// Largest violation of `W(t) = W(0) + arrived work − t + U(t)`.
    pub balance_error: f64,
}

const QUEUE_BATCHES: usize = 30;

struct Occupancy {
    time_in: Vec<f64>,
    batches: BatchMeans,
    w_integral: f64,
    weight: f64,
}

impl Occupancy {
    fn new() -> Self {
        Self { time_in: Vec::new(), batches: BatchMeans::new(1, QUEUE_BATCHES), w_integral: 0.0, weight: 0.0 }
    }

    /// Holds `n` customers for `dt` while work drains from `w0` by `drained`.
    fn add(&mut self, batch: usize, n: usize, dt: f64, w0: f64, drained: f64) {
        if self.time_in.len() <= n {
            self.time_in.resize(n + 1, 0.0);
        }
        self.time_in[n] += dt;
        self.batches.add(batch, &[n as f64], dt);
        self.w_integral += (w0 - 0.5 * drained) * dt;
        self.weight += dt;
    }

    fn finish(self, events: usize, balance_error: f64) -> QueueStats {
        let total = self.weight;
        let occupancy: Vec<f64> = self.time_in.iter().map(|t| t / total).collect();
        let mean_n = occupancy.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        QueueStats {
            occupancy,
            mean_n,
            mean_n_se: self.batches.standard_errors()[0],
            mean_w: self.w_integral / total,
            duration: total,
            events,
            balance_error,
        }
    }
}

fn check_rates(nu: f64, mu: f64) -> Result<()> {
    if !(nu.is_finite() && nu >= 0.0) || !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!("need nu ≥ 0 and mu > 0, got nu={nu}, mu={mu}")));
    }
    Ok(())
}

/// Event-driven M/M/1 queue (FIFO, exponential works of rate `μ`, unit
/// service speed). Works are tracked, so `W`, `N` and `U` are exact.
pub fn simulate_mm1(nu: f64, mu: f64, run: &QueueRun) -> Result<(QueuePath, QueueStats)> {
    check_rates(nu, mu)?;
    let mut rng = stream(run.seed, run.replication);
    let work = Exp::new(mu).expect("checked rate");
    let mut queue: VecDeque<f64> = (0..run.initial).map(|_| work.sample(&mut rng)).collect();
    let w0: f64 = queue.iter().sum();
    let mut w = w0;
    let (mut t, mut u, mut arrived) = (0.0, 0.0, 0.0);
    let mut next_arrival = if nu > 0.0 { Exp::new(nu).unwrap().sample(&mut rng) } else { f64::INFINITY };
    let burn = (run.burn_in * run.events as f64) as usize;
    let span = (run.events - burn.min(run.events)).max(1);
    let mut occ = Occupancy::new();
    let mut path = QueuePath::default();
    let mut balance_error: f64 = 0.0;
    path.push(0.0, w, queue.len() as f64, 0.0);

    let mut done = 0;
    while done < run.events {
        let departure = queue.front().map_or(f64::INFINITY, |s| t + s);
        if departure.is_infinite() && next_arrival.is_infinite() {
            break;
        }
        let next = departure.min(next_arrival);
        let dt = next - t;
        let n = queue.len();
        let drained = if n > 0 { dt } else { 0.0 };
        if done >= burn {
            occ.add((done - burn) * QUEUE_BATCHES / span, n, dt, w, drained);
        }
        if n > 0 {
            w -= dt;
            *queue.front_mut().unwrap() -= dt;
        } else {
            u += dt;
        }
        t = next;
        if departure <= next_arrival {
            queue.pop_front();
            if queue.is_empty() {
                w = 0.0;
            }
        } else {
            let s = work.sample(&mut rng);
            queue.push_back(s);
            w += s;
            arrived += s;
            next_arrival = t + Exp::new(nu).unwrap().sample(&mut rng);
        }
        balance_error = balance_error.max((w - (w0 + arrived - t + u)).abs());
        done += 1;
        if run.record_every > 0 && done % run.record_every == 0 {
            path.push(t, w, queue.len() as f64, u);
        }
    }
    Ok((path, occ.finish(done, balance_error)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Target(f64);

impl Eq for Target {}

impl PartialOrd for Target {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Target {
    // reversed: BinaryHeap becomes a min-heap on the target
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Residual works of the customers present at regularly spaced instants.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResidualSnapshots {
    pub times: Vec<f64>,
    /// Residual works at each snapshot, in no particular order.
    pub residuals: Vec<Vec<f64>>,
}

impl ResidualSnapshots {
    pub fn pooled(&self) -> Vec<f64> {
        self.residuals.iter().flatten().copied().collect()
    }
}

/// Event-driven M/G/1 processor-sharing queue. Every customer present is
/// served at rate `1/n`; the simulation tracks the attained service per
/// customer ("virtual time") so departures are found exactly. After burn-in
/// the residual works are recorded every `snapshot_every` time units.
pub fn simulate_mg1_ps(
    nu: f64,
    g: &WorkDistribution,
    run: &QueueRun,
    snapshot_every: f64,
) -> Result<(QueuePath, QueueStats, ResidualSnapshots)> {
    g.validate()?;
    check_rates(nu, g.rate())?;
    let rho = nu * g.mean();
    if rho >= 1.0 {
        return Err(Error::UnstableLoad(format!("load {rho} ≥ 1")));
    }
    let mut rng = stream(run.seed, run.replication);
    // virtual time: service attained by every customer present since time 0
    let mut v = 0.0;
    let mut heap: BinaryHeap<Target> = (0..run.initial).map(|_| Target(g.sample(&mut rng))).collect();
    let mut w: f64 = heap.iter().map(|s| s.0).sum();
    let w0 = w;
    let (mut t, mut u, mut arrived) = (0.0, 0.0, 0.0);
    let inter = if nu > 0.0 { Some(Exp::new(nu).unwrap()) } else { None };
    let mut next_arrival = inter.map_or(f64::INFINITY, |e| e.sample(&mut rng));
    let burn = (run.burn_in * run.events as f64) as usize;
    let span = (run.events - burn.min(run.events)).max(1);
    let mut occ = Occupancy::new();
    let mut path = QueuePath::default();
    let mut snaps = ResidualSnapshots::default();
    let mut next_snapshot = f64::INFINITY;
    let mut balance_error: f64 = 0.0;
    path.push(0.0, w, heap.len() as f64, 0.0);

    let mut done = 0;
    while done < run.events {
        let n = heap.len();
        let departure = heap.peek().map_or(f64::INFINITY, |s| t + (s.0 - v) * n as f64);
        if departure.is_infinite() && next_arrival.is_infinite() {
            break;
        }
        let next = departure.min(next_arrival);
        // snapshots falling inside the coming interval
        while next_snapshot <= next {
            let dv = if n > 0 { (next_snapshot - t) / n as f64 } else { 0.0 };
            snaps.times.push(next_snapshot);
            snaps.residuals.push(heap.iter().map(|s| (s.0 - v - dv).max(0.0)).collect());
            next_snapshot += snapshot_every;
        }
        let dt = next - t;
        let drained = if n > 0 { dt } else { 0.0 };
        if done >= burn {
            occ.add((done - burn) * QUEUE_BATCHES / span, n, dt, w, drained);
        }
        if n > 0 {
            v += dt / n as f64;
            w -= dt;
        } else {
            u += dt;
        }
        t = next;
        if departure <= next_arrival {
            let gone = heap.pop().unwrap();
            // pin virtual time to the departing target to stop drift
            v = gone.0;
            if heap.is_empty() {
                w = 0.0;
            }
        } else {
            let s = g.sample(&mut rng);
            heap.push(Target(v + s));
            w += s;
            arrived += s;
            next_arrival = t + inter.unwrap().sample(&mut rng);
        }
        balance_error = balance_error.max((w - (w0 + arrived - t + u)).abs());
        done += 1;
        if done == burn {
            next_snapshot = t + snapshot_every;
        }
        if run.record_every > 0 && done % run.record_every == 0 {
            path.push(t, w, heap.len() as f64, u);
        }
    }
    Ok((path, occ.finish(done, balance_error), snaps))
}

/// Mean `ρσ²/(2(1−ρ))` of the stationary reflected Brownian motion.
pub fn rbm1_stationary_mean(rho: f64, sigma2: f64) -> Result<f64> {
    if rho >= 1.0 {
        return Err(Error::UnstableLoad(format!("load {rho} ≥ 1")));
    }
    Ok(rho * sigma2 / (2.0 * (1.0 - rho)))
}

/// Result of a reflected Brownian motion run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbmRun {
    pub path: QueuePath,
    /// Time average of `W` after burn-in.
    pub mean_w: f64,
    /// Batch-means standard error of `mean_w`.
    pub mean_w_se: f64,
    /// Total reflection `U(T)`.
    pub idleness: f64,
    /// Number of steps where `U` increased although `W > 0` afterwards
    /// (always zero for the exact discrete Skorokhod map).
    pub complementarity_violations: usize,
}

/// Euler scheme for `W̆ = W̆(0) + X̆ + Ŭ`, `X̆` a Brownian motion with drift
/// `−(1−ρ)` and variance `ρσ²`, reflected by the discrete Skorokhod map
/// `W_{k+1} = max(0, W_k + ΔX_k)` (equivalently `Ŭ = −min_{s≤t} X̆`).
///
/// The path is recorded every `record_every` steps (0: only the endpoints).
pub fn rbm1_path(
    rho: f64,
    sigma2: f64,
    horizon: f64,
    h: f64,
    w0: f64,
    seed: u64,
    record_every: usize,
) -> Result<RbmRun> {
    if !(h > 0.0) || !(horizon > 0.0) || !(sigma2 >= 0.0) || !(w0 >= 0.0) {
        return Err(Error::InvalidParameter("need h > 0, T > 0, σ² ≥ 0, W(0) ≥ 0".into()));
    }
    if rho >= 1.0 {
        return Err(Error::UnstableLoad(format!("load {rho} ≥ 1")));
    }
    let mut rng: SimRng = stream(seed, 0);
    let steps = (horizon / h).round() as usize;
    let burn = steps / 5;
    let drift = -(1.0 - rho) * h;
    let sd = (rho * sigma2 * h).sqrt();
    let mut w = w0;
    let mut u = 0.0;
    let mut sum = 0.0;
    let mut batches = BatchMeans::new(1, 40);
    let span = (steps - burn).max(1);
    let mut path = QueuePath::default();
    let mut violations = 0;
    path.push(0.0, w, f64::NAN, 0.0);
    for k in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let next = w + drift + sd * z;
        let prev = w;
        let push = (-next).max(0.0);
        w = next.max(0.0);
        u += push;
        if push > 0.0 && w > 0.0 {
            violations += 1;
        }
        if k >= burn {
            // trapezoidal weight over the step
            let avg = 0.5 * (prev + w);
            sum += avg * h;
            batches.add((k - burn) * 40 / span, &[avg], h);
        }
        if record_every > 0 && (k + 1) % record_every == 0 {
            path.push((k + 1) as f64 * h, w, f64::NAN, u);
        }
    }
    if record_every == 0 || steps % record_every != 0 {
        path.push(steps as f64 * h, w, f64::NAN, u);
    }
    Ok(RbmRun {
        path,
        mean_w: sum / ((steps - burn) as f64 * h),
        mean_w_se: batches.standard_errors()[0],
        idleness: u,
        complementarity_violations: violations,
    })
}

/// Diffusion scaling `Ŵ(t) = (1−ρ) W(t/(1−ρ)²)`: times shrink by `(1−ρ)²`,
/// workloads by `(1−ρ)`.
pub fn scale_workload(path: &QueuePath, rho: f64) -> QueuePath {
    let a = 1.0 - rho;
    QueuePath {
        time: path.time.iter().map(|t| t * a * a).collect(),
        w: path.w.iter().map(|w| w * a).collect(),
        n: path.n.clone(),
        u: path.u.iter().map(|u| u * a).collect(),
    }
}

/// Snapshot diagnostic: mean time to drain the stationary workload divided by
/// the integrated autocorrelation time of the workload, from an evenly
/// sampled workload series with spacing `dt`. Small values mean the queue
/// empties much faster than its content changes.
pub fn snapshot_ratio(w: &[f64], dt: f64) -> f64 {
    let drain = crate::stats::mean(w);
    let tau = integrated_autocorrelation_time(w, dt, 20);
    drain / tau
}

/// Evenly sampled workload of an event path (piecewise-linear depletion at
/// unit rate between recorded events, which must be every event).
pub fn sample_workload(path: &QueuePath, dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if path.is_empty() {
        return out;
    }
    let end = *path.time.last().unwrap();
    let mut k = 0;
    let mut s = path.time[0];
    while s <= end {
        while k + 1 < path.len() && path.time[k + 1] <= s {
            k += 1;
        }
        out.push((path.w[k] - (s - path.time[k])).max(0.0));
        s += dt;
    }
    out
}

/// Sample mean and batch-means standard error of a sampled series.
pub fn series_mean_se(x: &[f64]) -> (f64, f64) {
    batch_mean_se(x, 30)
}
