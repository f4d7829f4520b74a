//! Metered motorways: inflow models, metering policies, the simulation engine
//! and the exponential stationary law of the Brownian model.
//!
//! Lines are indexed by route; on the linear network route `i` enters at
//! point `i` and uses sections `1..=i`, section 1 being the most downstream.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{stability_margin, Network, TrafficParams};
use crate::pf::PfSolver;
use crate::rng::{stream, SimRng};
use crate::stats::{quantile_sorted, BatchMeans};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[serde(alias = "pf")]
    ProportionalFair,
    #[serde(alias = "upstream")]
    UpstreamPriority,
    #[serde(alias = "downstream")]
    DownstreamPriority,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Self::ProportionalFair => "pf",
            Self::UpstreamPriority => "upstream",
            Self::DownstreamPriority => "downstream",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pf" | "proportional_fair" => Ok(Self::ProportionalFair),
            "upstream" | "upstream_priority" => Ok(Self::UpstreamPriority),
            "downstream" | "downstream_priority" => Ok(Self::DownstreamPriority),
            other => Err(Error::InvalidParameter(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Brownian inflows, Euler steps of length `h`.
    Brownian,
    /// Unit-work jobs arriving as Poisson processes of rates `ρ_i`, exact
    /// piecewise-linear depletion between events.
    #[serde(alias = "jobs")]
    PoissonJobs,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brownian" => Ok(Self::Brownian),
            "jobs" | "poisson_jobs" => Ok(Self::PoissonJobs),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// One step of the Brownian inflow `Ĕ_i(t) = ρ_i t + ρ_i^{1/2} σ Z̆_i(t)`:
/// `ρ_i h + (ρ_i σ² h)^{1/2} ξ_i` with independent standard normals.
/// Increments can be negative.
pub fn brownian_inflows<R: Rng + ?Sized>(params: &TrafficParams, h: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; params.routes()];
    brownian_inflows_into(params.rho(), params.sigma2(), h, rng, &mut out);
    out
}

fn brownian_inflows_into<R: Rng + ?Sized>(rho: &[f64], sigma2: f64, h: f64, rng: &mut R, out: &mut [f64]) {
    for (o, &r) in out.iter_mut().zip(rho) {
        let z: f64 = rng.sample(StandardNormal);
        *o = r * h + (r * sigma2 * h).sqrt() * z;
    }
}

/// Proportionally fair metering rates with prices and delay estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfRates {
    pub lambda: Vec<f64>,
    pub q: Vec<f64>,
    /// `d = A′q`; on busy lines `d_i = m_i / Λ_i`.
    pub d: Vec<f64>,
}

pub fn pf_rates(net: &Network, m: &[f64]) -> Result<PfRates> {
    let a = crate::pf::allocate(net, m)?;
    let d = net.route_sum(&a.q);
    Ok(PfRates { lambda: a.lambda, q: a.q, d })
}

fn require_linear(net: &Network) -> Result<()> {
    if net.is_linear() {
        Ok(())
    } else {
        Err(Error::NotLinearNetwork)
    }
}

/// Upstream priority: serve lines from the most upstream one down, each
/// taking whatever capacity its sections have left. An empty line takes at
/// most its current inflow `allowance`.
pub fn upstream_priority_rates(net: &Network, m: &[f64], allowance: &[f64]) -> Result<Vec<f64>> {
    require_linear(net)?;
    let mut out = vec![0.0; m.len()];
    upstream_into(net.capacity(), m, allowance, &mut out);
    Ok(out)
}

fn upstream_into(capacity: &[f64], m: &[f64], allowance: &[f64], out: &mut [f64]) {
    let mut upstream_total = 0.0;
    for j in (0..m.len()).rev() {
        let bound = (capacity[j] - upstream_total).max(0.0);
        out[j] = if m[j] > 0.0 { bound } else { bound.min(allowance[j].max(0.0)) };
        upstream_total += out[j];
    }
}

/// Downstream priority: the most downstream nonempty line takes its whole
/// section capacity, every other line waits.
pub fn downstream_priority_rates(net: &Network, m: &[f64]) -> Result<Vec<f64>> {
    require_linear(net)?;
    let mut out = vec![0.0; m.len()];
    downstream_into(net.capacity(), m, &mut out);
    Ok(out)
}

fn downstream_into(capacity: &[f64], m: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    if let Some(j) = m.iter().position(|&v| v > 0.0) {
        out[j] = capacity[j];
    }
}

/// Nominal delays `D̆ = A′q`.
pub fn nominal_delays(net: &Network, q: &[f64]) -> Vec<f64> {
    net.route_sum(q)
}

/// Drops a section that is no longer a constraint (infinite capacity).
pub fn collapsed_network(net: &Network, resource: usize) -> Result<Network> {
    require_linear(net)?;
    if resource >= net.resources() {
        return Err(Error::InvalidParameter(format!("no section {resource}")));
    }
    net.without_resource(resource)
}

/// Workload cone of the strategy that gives every line the same delay:
/// `0 ≤ w_J ≤ … ≤ w_1`.
pub fn first_strategy_cone_check(w: &[f64]) -> bool {
    w.last().is_none_or(|&v| v >= 0.0) && w.windows(2).all(|p| p[1] <= p[0])
}

/// Exponential stationary law of the Brownian model's prices and the
/// line sizes and nominal delays they determine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryLaw {
    /// `ζ_j = (2/σ²)(C_j − (Aρ)_j)`.
    pub zeta: Vec<f64>,
    /// `E D̆_i = Σ_j A_ji / ζ_j`.
    pub mean_delay: Vec<f64>,
    pub var_delay: Vec<f64>,
    /// `E M̆_i = ρ_i E D̆_i`.
    pub mean_line: Vec<f64>,
    pub var_line: Vec<f64>,
    #[serde(skip)]
    incidence: Vec<Vec<u8>>,
    #[serde(skip)]
    rho: Vec<f64>,
}

impl StationaryLaw {
    /// Builds the law from rates `ζ` and the incidence/loads mapping prices to
    /// delays and line sizes.
    pub fn from_rates(zeta: Vec<f64>, incidence: Vec<Vec<u8>>, rho: Vec<f64>) -> Self {
        let ni = rho.len();
        let sum = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..ni)
                .map(|i| (0..zeta.len()).filter(|&j| incidence[j][i] == 1).map(|j| f(zeta[j])).sum())
                .collect()
        };
        let mean_delay = sum(&|z| 1.0 / z);
        let var_delay = sum(&|z| 1.0 / (z * z));
        let mean_line = (0..ni).map(|i| rho[i] * mean_delay[i]).collect();
        let var_line = (0..ni).map(|i| rho[i] * rho[i] * var_delay[i]).collect();
        Self { zeta, mean_delay, var_delay, mean_line, var_line, incidence, rho }
    }

    /// Draws `count` independent price vectors and returns the implied delays.
    pub fn sample_delays(&self, count: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let exps: Vec<Exp<f64>> = self.zeta.iter().map(|&z| Exp::new(z).expect("positive rate")).collect();
        (0..count)
            .map(|_| {
                let q: Vec<f64> = exps.iter().map(|e| e.sample(rng)).collect();
                (0..self.rho.len())
                    .map(|i| (0..q.len()).filter(|&j| self.incidence[j][i] == 1).map(|j| q[j]).sum())
                    .collect()
            })
            .collect()
    }

    /// Monte-Carlo quantiles of each nominal delay; `out[i][k]` is quantile `probs[k]` of `D̆_i`.
    pub fn delay_quantiles(&self, probs: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        let samples = self.sample_delays(count, &mut rng);
        (0..self.rho.len())
            .map(|i| {
                let mut col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
                col.sort_by(f64::total_cmp);
                probs.iter().map(|&p| quantile_sorted(&col, p)).collect()
            })
            .collect()
    }
}

pub fn stationary_law(net: &Network, params: &TrafficParams) -> Result<StationaryLaw> {
    let report = stability_margin(net, params)?;
    if !report.stable {
        return Err(Error::UnstableLoad(format!("margins C − Aρ = {:?}", report.margins)));
    }
    let zeta = report.margins.iter().map(|m| 2.0 / params.sigma2() * m).collect();
    Ok(StationaryLaw::from_rates(zeta, net.incidence().to_vec(), params.rho().to_vec()))
}

/// Run controls shared by the motorway and route-choice simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorwayRun {
    pub mode: Mode,
    pub horizon: f64,
    /// Euler step (Brownian mode) or allocation refresh interval (jobs mode,
    /// proportionally fair policy only).
    pub h: f64,
    /// Fraction of the horizon discarded before statistics are collected.
    pub burn_in: f64,
    pub seed: u64,
    pub replication: u64,
    /// Spacing of trajectory rows (0: no trajectory).
    pub record_dt: f64,
    /// Spacing of the line-size samples and of the total-work series.
    pub sample_dt: f64,
    /// Initial line sizes (empty when absent).
    pub initial: Option<Vec<f64>>,
}

impl MotorwayRun {
    pub fn new(mode: Mode, horizon: f64, h: f64, seed: u64) -> Self {
        Self {
            mode,
            horizon,
            h,
            burn_in: 0.2,
            seed,
            replication: 0,
            record_dt: 0.0,
            sample_dt: 1.0,
            initial: None,
        }
    }
}

/// How arriving traffic is mapped onto lines.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Routing {
    /// Source `i` feeds line `i`.
    Fixed,
    /// Source `s` joins the line of `choice_sets[s]` with the smallest
    /// current delay estimate (ties to the lowest index).
    Choice(Vec<Vec<usize>>),
}

/// Everything measured during one motorway run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotorwayOutput {
    pub policy: Policy,
    pub mode: Mode,
    /// Columns `time, m_i…, lambda_i…, q_j…, d_i…, u_j…` (`q`, `d` from the
    /// proportionally fair allocation at the current line sizes; `u` the
    /// cumulative unused capacity).
    pub trajectory: Trajectory,
    /// Time-average line sizes after burn-in.
    pub mean_m: Vec<f64>,
    pub mean_m_se: Vec<f64>,
    /// Time-average metering rates.
    pub mean_lambda: Vec<f64>,
    /// Time-average allocation prices `q` and delay estimates `d = A′q`
    /// (computed for every policy).
    pub mean_q: Vec<f64>,
    pub mean_d: Vec<f64>,
    /// Served work per unit time over capacity, per resource.
    pub utilization: Vec<f64>,
    /// `Ŭ_j(T) = C_j T − ∫ (AΛ)_j ds` over the whole run.
    pub unused_capacity: Vec<f64>,
    /// Line sizes sampled every `sample_dt` after burn-in.
    pub samples: Vec<Vec<f64>>,
    /// `(t, Σ_i m_i(t))` every `sample_dt` over the whole run.
    pub total_series: Vec<(f64, f64)>,
    /// Jobs mode: `Σ_i m_i` just before each arrival.
    pub arrival_totals: Vec<f64>,
    /// Jobs mode, route choice: `(time, source, line)` per arrival when recording.
    pub arrival_log: Vec<(f64, usize, usize)>,
    /// Jobs mode: mean realized sojourn per line (jobs arriving after burn-in).
    pub mean_sojourn: Vec<f64>,
    pub sojourn_count: Vec<usize>,
    /// Work sent to each line by each source (`routed[s][i]`).
    pub routed: Vec<Vec<f64>>,
    /// Largest `(AΛ − C)_j` seen.
    pub max_infeasibility: f64,
    /// Steps/intervals where a resource with a positive price was not fully
    /// used, and the number of resource-interval checks.
    pub face_violations: usize,
    pub face_checks: usize,
    pub duration: f64,
}

const MOTORWAY_BATCHES: usize = 40;
const PRICE_TOL: f64 = 1e-9;

struct Accumulator {
    batches: BatchMeans,
    sum_m: Vec<f64>,
    sum_lambda: Vec<f64>,
    sum_q: Vec<f64>,
    sum_d: Vec<f64>,
    served: Vec<f64>,
    weight: f64,
    start: f64,
    span: f64,
}

impl Accumulator {
    fn new(ni: usize, nj: usize, start: f64, span: f64) -> Self {
        Self {
            batches: BatchMeans::new(ni, MOTORWAY_BATCHES),
            sum_m: vec![0.0; ni],
            sum_lambda: vec![0.0; ni],
            sum_q: vec![0.0; nj],
            sum_d: vec![0.0; ni],
            served: vec![0.0; nj],
            weight: 0.0,
            start,
            span,
        }
    }

    fn batch(&self, t: f64) -> usize {
        (((t - self.start) / self.span) * MOTORWAY_BATCHES as f64) as usize
    }
}

struct Engine<'a> {
    net: &'a Network,
    policy: Policy,
    solver: PfSolver,
    lambda: Vec<f64>,
    q: Vec<f64>,
    d: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(net: &'a Network, policy: Policy) -> Result<Self> {
        if policy != Policy::ProportionalFair {
            require_linear(net)?;
        }
        let (ni, nj) = (net.routes(), net.resources());
        Ok(Self {
            net,
            policy,
            solver: PfSolver::new(net),
            lambda: vec![0.0; ni],
            q: vec![0.0; nj],
            d: vec![0.0; ni],
            scratch: vec![0.0; ni],
        })
    }

    /// Prices and delay estimates of the proportionally fair allocation at `m`;
    /// for the proportionally fair policy also its rates.
    fn prices(&mut self, m: &[f64]) -> Result<()> {
        self.solver.solve_into(m, &mut self.scratch, &mut self.q)?;
        for i in 0..self.d.len() {
            self.d[i] = self.net.path(i).iter().map(|&j| self.q[j]).sum();
        }
        if self.policy == Policy::ProportionalFair {
            self.lambda.copy_from_slice(&self.scratch);
        }
        Ok(())
    }

    fn rates(&mut self, m: &[f64], allowance: &[f64]) {
        match self.policy {
            Policy::ProportionalFair => {}
            Policy::UpstreamPriority => upstream_into(self.net.capacity(), m, allowance, &mut self.lambda),
            Policy::DownstreamPriority => downstream_into(self.net.capacity(), m, &mut self.lambda),
        }
    }
}

fn choose(set: &[usize], d: &[f64]) -> usize {
    let mut best = set[0];
    for &i in &set[1..] {
        if d[i] < d[best] {
            best = i;
        }
    }
    best
}

fn trajectory_columns(ni: usize, nj: usize) -> Trajectory {
    let mut columns: Vec<String> = vec!["time".into()];
    columns.extend(Trajectory::indexed("m", ni));
    columns.extend(Trajectory::indexed("lambda", ni));
    columns.extend(Trajectory::indexed("q", nj));
    columns.extend(Trajectory::indexed("d", ni));
    columns.extend(Trajectory::indexed("u", nj));
    Trajectory::new(columns)
}

fn push_row(traj: &mut Trajectory, t: f64, m: &[f64], e: &Engine, unused: &[f64]) {
    let mut row = Vec::with_capacity(traj.columns.len());
    row.push(t);
    row.extend_from_slice(m);
    row.extend_from_slice(&e.lambda);
    row.extend_from_slice(&e.q);
    row.extend_from_slice(&e.d);
    row.extend_from_slice(unused);
    traj.push(row);
}

fn check_run(net: &Network, loads: &[f64], run: &MotorwayRun) -> Result<Vec<f64>> {
    if !(run.horizon > 0.0) || !(run.h > 0.0) || !(run.sample_dt > 0.0) {
        return Err(Error::InvalidParameter("horizon, h and sample_dt must be positive".into()));
    }
    if !(0.0..1.0).contains(&run.burn_in) {
        return Err(Error::InvalidParameter("burn_in must lie in [0, 1)".into()));
    }
    if loads.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::InvalidParameter("loads must be finite and nonnegative".into()));
    }
    match &run.initial {
        Some(m0) if m0.len() != net.routes() || m0.iter().any(|v| !(*v >= 0.0)) => {
            Err(Error::InvalidParameter("initial line sizes must be nonnegative, one per line".into()))
        }
        Some(m0) => Ok(m0.clone()),
        None => Ok(vec![0.0; net.routes()]),
    }
}

/// Shared simulation loop: `loads[s]` is the work arrival rate of source `s`.
pub(crate) fn run_engine(
    net: &Network,
    policy: Policy,
    loads: &[f64],
    sigma2: f64,
    routing: &Routing,
    run: &MotorwayRun,
    record_arrivals: bool,
) -> Result<MotorwayOutput> {
    let mut m = check_run(net, loads, run)?;
    let mut engine = Engine::new(net, policy)?;
    match run.mode {
        Mode::Brownian => brownian_loop(&mut engine, &mut m, loads, sigma2, routing, run),
        Mode::PoissonJobs => jobs_loop(&mut engine, &mut m, loads, routing, run, record_arrivals),
    }
}

fn finish(
    engine: &Engine,
    run: &MotorwayRun,
    acc: Accumulator,
    trajectory: Trajectory,
    unused: Vec<f64>,
    routed: Vec<Vec<f64>>,
) -> MotorwayOutput {
    let w = acc.weight.max(f64::MIN_POSITIVE);
    let cap = engine.net.capacity();
    MotorwayOutput {
        policy: engine.policy,
        mode: run.mode,
        trajectory,
        mean_m: acc.sum_m.iter().map(|s| s / w).collect(),
        mean_m_se: acc.batches.standard_errors(),
        mean_lambda: acc.sum_lambda.iter().map(|s| s / w).collect(),
        mean_q: acc.sum_q.iter().map(|s| s / w).collect(),
        mean_d: acc.sum_d.iter().map(|s| s / w).collect(),
        utilization: acc.served.iter().zip(cap).map(|(s, c)| s / (c * w)).collect(),
        unused_capacity: unused,
        samples: Vec::new(),
        total_series: Vec::new(),
        arrival_totals: Vec::new(),
        arrival_log: Vec::new(),
        mean_sojourn: Vec::new(),
        sojourn_count: Vec::new(),
        routed,
        max_infeasibility: 0.0,
        face_violations: 0,
        face_checks: 0,
        duration: acc.weight,
    }
}

fn brownian_loop(
    e: &mut Engine,
    m: &mut [f64],
    loads: &[f64],
    sigma2: f64,
    routing: &Routing,
    run: &MotorwayRun,
) -> Result<MotorwayOutput> {
    let net = e.net;
    let (ni, nj) = (net.routes(), net.resources());
    let ns = loads.len();
    let h = run.h;
    let steps = (run.horizon / h).round() as usize;
    let burn_steps = (run.burn_in * steps as f64).round() as usize;
    let t0 = burn_steps as f64 * h;
    let mut rng = stream(run.seed, run.replication);
    let mut acc = Accumulator::new(ni, nj, t0, (steps - burn_steps).max(1) as f64 * h);
    let mut traj = trajectory_columns(ni, nj);
    let record_every = if run.record_dt > 0.0 { ((run.record_dt / h).round() as usize).max(1) } else { 0 };
    let sample_every = ((run.sample_dt / h).round() as usize).max(1);
    let mut unused = vec![0.0; nj];
    let mut routed = vec![vec![0.0; ni]; ns];
    let mut inflow_src = vec![0.0; ns];
    let mut inflow = vec![0.0; ni];
    let mut allowance = vec![0.0; ni];
    let mut served = vec![0.0; ni];
    let mut samples = Vec::new();
    let mut totals = Vec::new();
    let mut max_infeasible: f64 = 0.0;
    let (mut face_violations, mut face_checks) = (0, 0);
    let cap = net.capacity();

    for k in 0..steps {
        let t = k as f64 * h;
        e.prices(m)?;
        brownian_inflows_into(loads, sigma2, h, &mut rng, &mut inflow_src);
        inflow.fill(0.0);
        for s in 0..ns {
            let line = match routing {
                Routing::Fixed => s,
                Routing::Choice(sets) => choose(&sets[s], &e.d),
            };
            inflow[line] += inflow_src[s];
            if k >= burn_steps {
                routed[s][line] += inflow_src[s];
            }
        }
        for i in 0..ni {
            allowance[i] = inflow[i].max(0.0) / h;
        }
        e.rates(m, &allowance);
        if record_every > 0 && k % record_every == 0 {
            push_row(&mut traj, t, m, e, &unused);
        }
        if k % sample_every == 0 {
            totals.push((t, m.iter().sum::<f64>()));
            if k >= burn_steps {
                samples.push(m.to_vec());
            }
        }
        // the step
        let stats = k >= burn_steps;
        for i in 0..ni {
            let avail = m[i] + inflow[i];
            let next = (avail - e.lambda[i] * h).max(0.0);
            served[i] = (avail - next).clamp(0.0, e.lambda[i] * h);
            if stats {
                acc.sum_m[i] += m[i] * h;
                acc.sum_lambda[i] += e.lambda[i] * h;
                acc.sum_d[i] += e.d[i] * h;
            }
            m[i] = next;
        }
        for j in 0..nj {
            let mut rate = 0.0;
            let mut used = 0.0;
            for &i in net.users(j) {
                rate += e.lambda[i];
                used += served[i];
            }
            max_infeasible = max_infeasible.max(rate - cap[j]);
            unused[j] += cap[j] * h - used;
            if stats {
                acc.served[j] += used;
                acc.sum_q[j] += e.q[j] * h;
                if e.policy == Policy::ProportionalFair {
                    face_checks += 1;
                    // a resource left idle at the start of the step must carry no price
                    if rate < cap[j] * (1.0 - 1e-9) && e.q[j] > PRICE_TOL {
                        face_violations += 1;
                    }
                }
            }
        }
        if stats {
            acc.weight += h;
            let b = acc.batch(t);
            acc.batches.add(b, &m[..], h);
        }
    }
    if record_every > 0 {
        e.prices(m)?;
        e.rates(m, &vec![0.0; ni]);
        push_row(&mut traj, steps as f64 * h, m, e, &unused);
    }
    let mut out = finish(e, run, acc, traj, unused, routed);
    out.samples = samples;
    out.total_series = totals;
    out.max_infeasibility = max_infeasible;
    out.face_violations = face_violations;
    out.face_checks = face_checks;
    Ok(out)
}

fn jobs_loop(
    e: &mut Engine,
    m: &mut [f64],
    loads: &[f64],
    routing: &Routing,
    run: &MotorwayRun,
    record_arrivals: bool,
) -> Result<MotorwayOutput> {
    let net = e.net;
    let (ni, nj) = (net.routes(), net.resources());
    let ns = loads.len();
    let cap = net.capacity();
    let horizon = run.horizon;
    let t_burn = run.burn_in * horizon;
    let mut rng = stream(run.seed, run.replication);
    let total_rate: f64 = loads.iter().sum();
    let inter = (total_rate > 0.0).then(|| Exp::new(total_rate).unwrap());
    let mut next_arrival = inter.map_or(f64::INFINITY, |d| d.sample(&mut rng));
    let mut acc = Accumulator::new(ni, nj, t_burn, (horizon - t_burn).max(f64::MIN_POSITIVE));
    let mut traj = trajectory_columns(ni, nj);
    let mut next_record = if run.record_dt > 0.0 { 0.0 } else { f64::INFINITY };
    let mut next_sample = 0.0;
    let mut next_refresh = 0.0;
    let mut unused = vec![0.0; nj];
    let mut routed = vec![vec![0.0; ni]; ns];
    let zero = vec![0.0; ni];
    let mut samples = Vec::new();
    let mut totals = Vec::new();
    let mut arrival_totals = Vec::new();
    let mut arrival_log = Vec::new();
    // FIFO bookkeeping per line: (cumulative work position, arrival time)
    let mut queues: Vec<VecDeque<(f64, f64)>> = vec![VecDeque::new(); ni];
    let mut arrived_work: Vec<f64> = m.to_vec();
    let mut served_work = vec![0.0; ni];
    let mut sojourn_sum = vec![0.0; ni];
    let mut sojourn_count = vec![0usize; ni];
    let mut max_infeasible: f64 = 0.0;
    let (mut face_violations, mut face_checks) = (0, 0);
    let mut t = 0.0;
    let refreshes = e.policy == Policy::ProportionalFair;

    e.prices(m)?;
    e.rates(m, &zero);
    while t < horizon {
        if refreshes && t >= next_refresh {
            next_refresh = t + run.h;
        }
        // next line to empty at current rates
        let mut next_empty = f64::INFINITY;
        let mut emptying = usize::MAX;
        for i in 0..ni {
            if m[i] > 0.0 && e.lambda[i] > 0.0 {
                let te = t + m[i] / e.lambda[i];
                if te < next_empty {
                    next_empty = te;
                    emptying = i;
                }
            }
        }
        let refresh_at = if refreshes { next_refresh } else { f64::INFINITY };
        let t_next = next_arrival
            .min(next_empty)
            .min(refresh_at)
            .min(horizon)
            .min(next_sample)
            .min(next_record);
        let dt = t_next - t;

        // integrate over [t, t_next)
        {
            // also at dt = 0: a line due to empty now must be marked empty
            let lo = t.max(t_burn);
            let stats_dt = (t_next - lo).max(0.0);
            for j in 0..nj {
                let mut rate = 0.0;
                for &i in net.users(j) {
                    rate += e.lambda[i];
                }
                max_infeasible = max_infeasible.max(rate - cap[j]);
                unused[j] += (cap[j] - rate) * dt;
                if stats_dt > 0.0 {
                    acc.served[j] += rate * stats_dt;
                    acc.sum_q[j] += e.q[j] * stats_dt;
                    if refreshes {
                        face_checks += 1;
                        if rate < cap[j] * (1.0 - 1e-9) && e.q[j] > PRICE_TOL {
                            face_violations += 1;
                        }
                    }
                }
            }
            let mut avg = vec![0.0; ni];
            for i in 0..ni {
                let start = m[i];
                let end = if i == emptying && t_next >= next_empty { 0.0 } else { (start - e.lambda[i] * dt).max(0.0) };
                if stats_dt > 0.0 {
                    // line size is linear over the interval; average over the counted part
                    let m_lo = start - e.lambda[i] * (lo - t);
                    let mean = 0.5 * (m_lo.max(0.0) + end);
                    acc.sum_m[i] += mean * stats_dt;
                    acc.sum_lambda[i] += e.lambda[i] * stats_dt;
                    acc.sum_d[i] += e.d[i] * stats_dt;
                    avg[i] = mean;
                }
                // departures of jobs completed in the interval
                let before = served_work[i];
                served_work[i] += start - end;
                if end == 0.0 {
                    served_work[i] = arrived_work[i];
                }
                while let Some(&(pos, arr)) = queues[i].front() {
                    if pos > served_work[i] + 1e-9 {
                        break;
                    }
                    let leave = if e.lambda[i] > 0.0 { t + ((pos - before) / e.lambda[i]).clamp(0.0, dt) } else { t_next };
                    if arr >= t_burn {
                        sojourn_sum[i] += leave - arr;
                        sojourn_count[i] += 1;
                    }
                    queues[i].pop_front();
                }
                m[i] = end;
            }
            if stats_dt > 0.0 {
                acc.weight += stats_dt;
                let b = acc.batch(lo);
                acc.batches.add(b, &avg, stats_dt);
            }
        }
        t = t_next;
        if t >= horizon {
            break;
        }
        if t >= next_sample {
            totals.push((t, m.iter().sum::<f64>()));
            if t >= t_burn {
                samples.push(m.to_vec());
            }
            next_sample += run.sample_dt;
        }
        if t >= next_record {
            push_row(&mut traj, t, m, e, &unused);
            next_record += run.record_dt;
        }
        if t >= next_arrival {
            arrival_totals.push(m.iter().sum::<f64>());
            // pick the source in proportion to its rate
            let mut u = rng.random::<f64>() * total_rate;
            let mut s = ns - 1;
            for (k, &r) in loads.iter().enumerate() {
                if u < r {
                    s = k;
                    break;
                }
                u -= r;
            }
            let line = match routing {
                Routing::Fixed => s,
                Routing::Choice(sets) => {
                    // delay estimates at the arrival instant
                    e.prices(m)?;
                    choose(&sets[s], &e.d)
                }
            };
            m[line] += 1.0;
            arrived_work[line] += 1.0;
            queues[line].push_back((arrived_work[line], t));
            if t >= t_burn {
                routed[s][line] += 1.0;
            }
            if record_arrivals {
                arrival_log.push((t, s, line));
            }
            next_arrival = t + inter.unwrap().sample(&mut rng);
        }
        e.prices(m)?;
        e.rates(m, &zero);
    }

    let mut out = finish(e, run, acc, traj, unused, routed);
    out.samples = samples;
    out.total_series = totals;
    out.arrival_totals = arrival_totals;
    out.arrival_log = arrival_log;
    out.mean_sojourn = (0..ni)
        .map(|i| if sojourn_count[i] > 0 { sojourn_sum[i] / sojourn_count[i] as f64 } else { f64::NAN })
        .collect();
    out.sojourn_count = sojourn_count;
    out.max_infeasibility = max_infeasible;
    out.face_violations = face_violations;
    out.face_checks = face_checks;
    Ok(out)
}

/// Simulates the motorway `net` with traffic `params` under `policy`.
pub fn simulate_motorway(
    net: &Network,
    params: &TrafficParams,
    policy: Policy,
    run: &MotorwayRun,
) -> Result<MotorwayOutput> {
    params.check_against(net)?;
    run_engine(net, policy, params.rho(), params.sigma2(), &Routing::Fixed, run, false)
}

/// Nominal-delay estimates from line sizes in the Brownian model:
/// `Q̆ = (A[ρ]A′)⁻¹ A m` and `D̆ = A′Q̆`.
#[derive(Debug, Clone)]
pub struct NominalMap {
    dual: DMatrix<f64>,
    incidence: DMatrix<f64>,
}

impl NominalMap {
    pub fn new(net: &Network, rho: &[f64]) -> Result<Self> {
        let a = net.matrix();
        let ar = DMatrix::from_fn(a.nrows(), a.ncols(), |j, i| a[(j, i)] * rho[i]);
        let g = &ar * a.transpose();
        let inv = g.try_inverse().ok_or(Error::SingularGamma)?;
        Ok(Self { dual: inv * &a, incidence: a })
    }

    /// `Q̆ = (A[ρ]A′)⁻¹ A m`.
    pub fn duals(&self, m: &[f64]) -> Vec<f64> {
        (&self.dual * DVector::from_column_slice(m)).iter().copied().collect()
    }

    /// `D̆ = A′Q̆`.
    pub fn delays(&self, m: &[f64]) -> Vec<f64> {
        let q = &self.dual * DVector::from_column_slice(m);
        (self.incidence.transpose() * q).iter().copied().collect()
    }
}
