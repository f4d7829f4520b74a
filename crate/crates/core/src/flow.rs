//! Connection-level model under proportionally fair sharing: the Markov
//! chain, its fluid model and the exponential stationary approximation.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{stability_margin, Network, TrafficParams};
use crate::pf::{flow_workload, lift_delta_qp, lyapunov_f, PfSolver};
use crate::rng::stream;
use crate::stats::BatchMeans;
use crate::trajectory::Trajectory;

/// Workload `w = A[μ]⁻¹n`.
pub fn workload_of(net: &Network, params: &TrafficParams, n: &[f64]) -> Result<Vec<f64>> {
    params.check_against(net)?;
    if n.len() != net.routes() || n.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("state must be a nonnegative vector with one entry per route".into()));
    }
    Ok(flow_workload(net, params, n))
}

/// Exponential heavy-traffic approximation of the stationary number of connections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxLaw {
    /// Rates `C − Aρ` of the independent exponential duals.
    pub exp_rates: Vec<f64>,
    /// `E N_i = ρ_i Σ_j A_ji / rate_j`.
    pub mean_n: Vec<f64>,
    /// `Var N_i = ρ_i² Σ_j A_ji / rate_j²`.
    pub var_n: Vec<f64>,
}

pub fn approx_stationary(net: &Network, params: &TrafficParams) -> Result<ApproxLaw> {
    let report = stability_margin(net, params)?;
    if !report.stable {
        return Err(Error::UnstableLoad(format!("margins C − Aρ = {:?}", report.margins)));
    }
    let rates = report.margins;
    let inv: Vec<f64> = rates.iter().map(|r| 1.0 / r).collect();
    let inv2: Vec<f64> = rates.iter().map(|r| 1.0 / (r * r)).collect();
    let s1 = net.route_sum(&inv);
    let s2 = net.route_sum(&inv2);
    let rho = params.rho();
    Ok(ApproxLaw {
        mean_n: (0..rho.len()).map(|i| rho[i] * s1[i]).collect(),
        var_n: (0..rho.len()).map(|i| rho[i] * rho[i] * s2[i]).collect(),
        exp_rates: rates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcRun {
    pub events: usize,
    /// Fraction of events discarded before statistics are collected.
    pub burn_in: f64,
    pub seed: u64,
    pub replication: u64,
    /// Record a trajectory row every `record_every` events (0: never).
    pub record_every: usize,
    /// Initial counts (empty network when absent).
    pub initial: Option<Vec<u64>>,
}

impl CtmcRun {
    pub fn new(events: usize, seed: u64) -> Self {
        Self { events, burn_in: 0.2, seed, replication: 0, record_every: 0, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtmcStats {
    /// Time-average number of connections per route (after burn-in).
    pub mean_n: Vec<f64>,
    /// Batch-means standard errors of `mean_n`.
    pub mean_n_se: Vec<f64>,
    pub mean_w: Vec<f64>,
    /// Time-average of `‖n − [ρ]A′q‖₁ / ‖n‖₁` with `q` the allocation prices
    /// (a state-space-collapse diagnostic; 0 on the invariant manifold).
    pub collapse_residual: f64,
    pub duration: f64,
    pub events: usize,
    pub distinct_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtmcOutput {
    /// Columns `time, n_i…, w_j…, lambda_i…`.
    pub trajectory: Trajectory,
    pub stats: CtmcStats,
}

struct CachedRates {
    departures: Vec<f64>,
    lambda: Vec<f64>,
    total: f64,
    collapse: f64,
}

const CTMC_BATCHES: usize = 30;
const CACHE_LIMIT: usize = 1 << 21;

/// Gillespie simulation of the connection-level chain: arrivals on route `i`
/// at rate `ν_i`, departures at rate `μ_i Λ_i(n)` with `Λ` the proportionally
/// fair allocation. Allocations are cached per visited state.
pub fn simulate_ctmc(net: &Network, params: &TrafficParams, run: &CtmcRun) -> Result<CtmcOutput> {
    params.check_against(net)?;
    let (ni, nj) = (net.routes(), net.resources());
    let mut rng = stream(run.seed, run.replication);
    let mut n: Vec<u64> = match &run.initial {
        Some(v) if v.len() == ni => v.clone(),
        Some(_) => return Err(Error::DimensionMismatch("initial state length".into())),
        None => vec![0; ni],
    };
    let nu = params.nu();
    let mu = params.mu();
    let rho = params.rho();
    let total_arrival: f64 = nu.iter().sum();
    let mut solver = PfSolver::new(net);
    let mut cache: HashMap<Vec<u64>, CachedRates> = HashMap::new();
    let mut nf = vec![0.0; ni];
    let mut lambda = vec![0.0; ni];
    let mut q = vec![0.0; nj];

    let mut columns: Vec<String> = vec!["time".into()];
    columns.extend(Trajectory::indexed("n", ni));
    columns.extend(Trajectory::indexed("w", nj));
    columns.extend(Trajectory::indexed("lambda", ni));
    let mut trajectory = Trajectory::new(columns);

    let burn = (run.burn_in * run.events as f64) as usize;
    let span = (run.events - burn.min(run.events)).max(1);
    let mut batches = BatchMeans::new(ni, CTMC_BATCHES);
    let mut sum_n = vec![0.0; ni];
    let mut collapse_sum = 0.0;
    let mut weight = 0.0;
    let mut t = 0.0;
    let mut done = 0;

    let record = |t: f64, n: &[u64], lambda: &[f64], trajectory: &mut Trajectory| {
        let nf: Vec<f64> = n.iter().map(|&v| v as f64).collect();
        let mut row = vec![t];
        row.extend_from_slice(&nf);
        row.extend(flow_workload(net, params, &nf));
        row.extend_from_slice(lambda);
        trajectory.push(row);
    };

    while done < run.events {
        if !cache.contains_key(&n) {
            if cache.len() >= CACHE_LIMIT {
                cache.clear();
            }
            for i in 0..ni {
                nf[i] = n[i] as f64;
            }
            solver.solve_into(&nf, &mut lambda, &mut q)?;
            let departures: Vec<f64> = (0..ni).map(|i| mu[i] * lambda[i]).collect();
            let total = total_arrival + departures.iter().sum::<f64>();
            let delays = net.route_sum(&q);
            let norm: f64 = nf.iter().sum();
            let collapse = if norm > 0.0 {
                (0..ni).map(|i| (nf[i] - rho[i] * delays[i]).abs()).sum::<f64>() / norm
            } else {
                0.0
            };
            cache.insert(n.clone(), CachedRates { departures, lambda: lambda.clone(), total, collapse });
        }
        let rates = &cache[&n];
        if done == 0 && run.record_every > 0 {
            record(t, &n, &rates.lambda, &mut trajectory);
        }
        if rates.total <= 0.0 {
            break;
        }
        let dt = Exp::new(rates.total).unwrap().sample(&mut rng);
        if done >= burn {
            let nf: Vec<f64> = n.iter().map(|&v| v as f64).collect();
            for i in 0..ni {
                sum_n[i] += nf[i] * dt;
            }
            batches.add((done - burn) * CTMC_BATCHES / span, &nf, dt);
            collapse_sum += rates.collapse * dt;
            weight += dt;
        }
        t += dt;
        // pick the event
        let mut u = rng.random::<f64>() * rates.total;
        let mut fired = None;
        for i in 0..ni {
            if u < nu[i] {
                n[i] += 1;
                fired = Some(i);
                break;
            }
            u -= nu[i];
        }
        if fired.is_none() {
            let mut last = None;
            for i in 0..ni {
                if rates.departures[i] > 0.0 {
                    last = Some(i);
                    if u < rates.departures[i] {
                        break;
                    }
                    u -= rates.departures[i];
                }
            }
            // rounding may leave u marginally above the last positive rate
            let i = last.expect("positive total departure rate");
            debug_assert!(n[i] > 0);
            n[i] -= 1;
        }
        done += 1;
        if run.record_every > 0 && done % run.record_every == 0 {
            let lam = cache.get(&n).map(|c| c.lambda.clone());
            let lam = match lam {
                Some(l) => l,
                None => {
                    let nf: Vec<f64> = n.iter().map(|&v| v as f64).collect();
                    solver.solve(&nf)?.lambda
                }
            };
            record(t, &n, &lam, &mut trajectory);
        }
    }

    let mean_n: Vec<f64> = sum_n.iter().map(|s| s / weight).collect();
    let mean_w = flow_workload(net, params, &mean_n);
    Ok(CtmcOutput {
        trajectory,
        stats: CtmcStats {
            mean_n,
            mean_n_se: batches.standard_errors(),
            mean_w,
            collapse_residual: collapse_sum / weight,
            duration: weight,
            events: done,
            distinct_states: cache.len(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidRun {
    /// Columns `time, n_i…, lyapunov_gap, manifold_distance`.
    pub trajectory: Trajectory,
    /// `F(n(t)) − F(Δ(w(n(t))))` at every step, starting at `t = 0`.
    pub lyapunov_gap: Vec<f64>,
    /// `‖n(t) − Δ(w(n(t)))‖₂` at every step.
    pub manifold_distance: Vec<f64>,
    /// Largest one-step increase of the Lyapunov gap.
    pub max_gap_increase: f64,
    pub final_state: Vec<f64>,
}

/// Explicit Euler integration of `dn_i/dt = ν_i − μ_i Λ_i(n)` with `n`
/// clipped at zero after every step. The lift `Δ` is evaluated through its
/// quadratic program so that states off the cone are handled.
pub fn integrate_fluid(
    net: &Network,
    params: &TrafficParams,
    n0: &[f64],
    horizon: f64,
    h: f64,
    record_every: usize,
) -> Result<FluidRun> {
    params.check_against(net)?;
    if n0.len() != net.routes() || n0.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("initial state must be nonnegative, one entry per route".into()));
    }
    if !(h > 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidParameter("need h > 0 and T ≥ 0".into()));
    }
    let (ni, nj) = (net.routes(), net.resources());
    let steps = (horizon / h).round() as usize;
    let mut solver = PfSolver::new(net);
    let mut n = n0.to_vec();
    let mut lambda = vec![0.0; ni];
    let mut q = vec![0.0; nj];
    let mut columns: Vec<String> = vec!["time".into()];
    columns.extend(Trajectory::indexed("n", ni));
    columns.push("lyapunov_gap".into());
    columns.push("manifold_distance".into());
    let mut trajectory = Trajectory::new(columns);
    let mut gaps = Vec::with_capacity(steps + 1);
    let mut dists = Vec::with_capacity(steps + 1);

    let measure = |n: &[f64]| -> Result<(f64, f64)> {
        let w = flow_workload(net, params, n);
        let lifted = lift_delta_qp(net, params, &w)?;
        let gap = lyapunov_f(params, n) - lyapunov_f(params, &lifted);
        let dist = n.iter().zip(&lifted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        Ok((gap, dist))
    };

    for k in 0..=steps {
        let (gap, dist) = measure(&n)?;
        gaps.push(gap);
        dists.push(dist);
        if record_every > 0 && (k % record_every == 0 || k == steps) {
            let mut row = vec![k as f64 * h];
            row.extend_from_slice(&n);
            row.push(gap);
            row.push(dist);
            trajectory.push(row);
        }
        if k == steps {
            break;
        }
        solver.solve_into(&n, &mut lambda, &mut q)?;
        for i in 0..ni {
            n[i] = (n[i] + h * (params.nu()[i] - params.mu()[i] * lambda[i])).max(0.0);
        }
    }
    let max_gap_increase = gaps.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(FluidRun { trajectory, lyapunov_gap: gaps, manifold_distance: dists, max_gap_increase, final_state: n })
}
