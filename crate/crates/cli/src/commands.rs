//! Subcommand implementations. Each returns a JSON summary that is printed to
//! stdout and, with an output directory, written next to the CSV series.

use anyhow::Result;
use fairway_core::flow::{approx_stationary, integrate_fluid, simulate_ctmc, CtmcRun};
use fairway_core::motorway::{
    simulate_motorway, stationary_law, Mode, MotorwayOutput, MotorwayRun, NominalMap, Policy,
};
use fairway_core::network::stability_margin;
use fairway_core::pf::{allocate, flow_workload, PfSolver};
use fairway_core::queue::{
    forward_recurrence_cdf, mm1_stationary, rbm1_path, rbm1_stationary_mean, simulate_mg1_ps, simulate_mm1,
    QueuePath, QueueRun, WorkDistribution,
};
use fairway_core::rng::replicate;
use fairway_core::route_choice::{enlarged_stability, simulate_route_choice, zeta_params};
use fairway_core::stats::{batched_trend, ks_statistic, mean, tv_distance};
use fairway_core::Trajectory;
use serde_json::{json, Value};

use crate::output::{csv_string, Format, Sink};
use crate::scenario::{invalid, Preset, QueueKind, Scenario, StationaryModel};

/// Quantile levels reported by `stationary`.
const QUANTILES: [f64; 3] = [0.5, 0.9, 0.99];
const QUANTILE_SAMPLES: usize = 200_000;
/// Batches for the trend statistic reported by `compare`.
const TREND_BATCHES: usize = 50;

/// What a command produced for stdout.
pub enum Report {
    Json(Value),
    Text(String),
}

pub fn allocate_cmd(sc: &Scenario, n: Option<Vec<f64>>, sink: &Sink) -> Result<Report> {
    let net = sc.network()?;
    let n = n
        .or_else(|| sc.n.clone())
        .ok_or_else(|| invalid("allocate needs connection counts: pass --n 1,2,… or set \"n\" in the scenario"))?;
    let a = allocate(&net, &n)?;
    let d = net.route_sum(&a.q);
    let summary = json!({
        "lambda": a.lambda,
        "q": a.q,
        "d": d,
        "objective": a.objective,
        "active": a.active,
        "iterations": a.iterations,
        "feasibility_violation": a.feasibility_violation(&net),
        "slackness_residual": a.slackness_residual(&net),
        "n": n,
    });
    sink.summary("allocate_summary", &summary)?;
    Ok(Report::Json(summary))
}

fn stationary_model(sc: &Scenario) -> StationaryModel {
    sc.model.unwrap_or(match sc.network.preset {
        Some(Preset::Parallel4) => StationaryModel::RouteChoice,
        _ => StationaryModel::Motorway,
    })
}

/// Column-aligned table with blanks where an index has no entry.
fn ragged_table(columns: &[(&str, Vec<f64>)]) -> (Vec<String>, Vec<Vec<String>>) {
    let len = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    let mut header = vec!["index".to_string()];
    header.extend(columns.iter().map(|c| c.0.to_string()));
    let rows = (0..len)
        .map(|k| {
            let mut row = vec![(k + 1).to_string()];
            row.extend(columns.iter().map(|c| c.1.get(k).map_or(String::new(), |v| v.to_string())));
            row
        })
        .collect();
    (header, rows)
}

fn quantile_columns(q: &[Vec<f64>]) -> Vec<(&'static str, Vec<f64>)> {
    const NAMES: [&str; 3] = ["delay_p50", "delay_p90", "delay_p99"];
    (0..QUANTILES.len()).map(|k| (NAMES[k], q.iter().map(|row| row[k]).collect())).collect()
}

pub fn stationary_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let model = stationary_model(sc);
    let params = sc.traffic()?;
    let seed = sc.sim.as_ref().and_then(|s| s.seed).unwrap_or(0);
    let (summary, columns) = match model {
        StationaryModel::Motorway => {
            let net = sc.network()?;
            let law = stationary_law(&net, &params)?;
            let q = law.delay_quantiles(&QUANTILES, QUANTILE_SAMPLES, seed);
            let mut cols = vec![
                ("zeta", law.zeta.clone()),
                ("mean_delay", law.mean_delay.clone()),
                ("var_delay", law.var_delay.clone()),
                ("mean_line", law.mean_line.clone()),
                ("var_line", law.var_line.clone()),
            ];
            cols.extend(quantile_columns(&q));
            let summary = json!({
                "model": model,
                "zeta": law.zeta,
                "mean_delay": law.mean_delay,
                "var_delay": law.var_delay,
                "mean_line": law.mean_line,
                "var_line": law.var_line,
                "delay_quantiles": {"levels": QUANTILES, "values": q, "samples": QUANTILE_SAMPLES, "seed": seed},
            });
            (summary, cols)
        }
        StationaryModel::Flow => {
            let net = sc.network()?;
            let law = approx_stationary(&net, &params)?;
            let cols = vec![
                ("rate", law.exp_rates.clone()),
                ("mean_n", law.mean_n.clone()),
                ("var_n", law.var_n.clone()),
            ];
            let summary = json!({
                "model": model,
                "rates": law.exp_rates,
                "mean_n": law.mean_n,
                "var_n": law.var_n,
            });
            (summary, cols)
        }
        StationaryModel::RouteChoice => {
            let law = zeta_params(params.rho(), &sc.network.c, params.sigma2())?;
            let cols = vec![
                ("zeta", law.zeta.clone()),
                ("mean_delay", law.mean_delay.clone()),
                ("var_delay", law.var_delay.clone()),
                ("mean_line", law.mean_line.clone()),
            ];
            let summary = json!({
                "model": model,
                "zeta": law.zeta,
                "mean_delay": law.mean_delay,
                "var_delay": law.var_delay,
                "mean_line": law.mean_line,
            });
            (summary, cols)
        }
    };
    let (header, rows) = ragged_table(&columns);
    let text = csv_string(&header, &rows);
    if let Some(dir) = &sink.dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("stationary.csv"), &text)?;
    }
    sink.summary("stationary_summary", &summary)?;
    Ok(match sink.format {
        Format::Csv => Report::Text(text),
        Format::Json => Report::Json(summary),
    })
}

fn motorway_run(sc: &Scenario, mode: Mode) -> Result<MotorwayRun> {
    let sim = sc.sim();
    let mut run = MotorwayRun::new(mode, sc.horizon()?, sc.step(), sc.seed()?);
    run.burn_in = sc.burn_in();
    run.record_dt = sim.record_dt.unwrap_or(1.0);
    run.sample_dt = sim.sample_dt.unwrap_or(1.0);
    Ok(run)
}

fn motorway_summary(out: &MotorwayOutput, map: Option<&NominalMap>, replication: u64) -> Value {
    json!({
        "replication": replication,
        "policy": out.policy,
        "mode": out.mode,
        "mean_m": out.mean_m,
        "mean_m_se": out.mean_m_se,
        "nominal_delays": map.map(|m| m.delays(&out.mean_m)),
        "mean_lambda": out.mean_lambda,
        "mean_q": out.mean_q,
        "mean_d": out.mean_d,
        "utilization": out.utilization,
        "unused_capacity": out.unused_capacity,
        "mean_sojourn": out.mean_sojourn,
        "sojourn_count": out.sojourn_count,
        "max_infeasibility": out.max_infeasibility,
        "face_violations": out.face_violations,
        "face_checks": out.face_checks,
        "duration": out.duration,
    })
}

/// Average of per-replication vectors.
fn pooled(vectors: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let all: Vec<Vec<f64>> = vectors.collect();
    let k = all.len().max(1) as f64;
    let len = all.first().map_or(0, Vec::len);
    (0..len).map(|i| all.iter().map(|v| v[i]).sum::<f64>() / k).collect()
}

fn stem(name: &str, replication: u64, replications: u64) -> String {
    if replications > 1 {
        format!("{name}_rep{replication}")
    } else {
        name.to_string()
    }
}

pub fn simulate_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let (net, params) = sc.resolve()?;
    let policy = sc.policy.unwrap_or(Policy::ProportionalFair);
    let run = motorway_run(sc, sc.mode.unwrap_or(Mode::Brownian))?;
    let reps = sc.replications();
    let outs = replicate(reps, |k| {
        let mut r = run.clone();
        r.replication = k;
        simulate_motorway(&net, &params, policy, &r)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let map = NominalMap::new(&net, params.rho()).ok();
    for (k, out) in outs.iter().enumerate() {
        sink.trajectory(&stem("simulate", k as u64, reps), &out.trajectory)?;
    }
    let law = (policy == Policy::ProportionalFair)
        .then(|| stationary_law(&net, &params).ok())
        .flatten()
        .map(|l| json!({"zeta": l.zeta, "mean_delay": l.mean_delay, "mean_line": l.mean_line}));
    let mean_m = pooled(outs.iter().map(|o| o.mean_m.clone()));
    let summary = json!({
        "command": "simulate",
        "config": sc,
        "stability": stability_margin(&net, &params)?,
        "replications": outs.iter().enumerate().map(|(k, o)| motorway_summary(o, map.as_ref(), k as u64)).collect::<Vec<_>>(),
        "pooled": {
            "nominal_delays": map.as_ref().map(|m| m.delays(&mean_m)),
            "mean_m": mean_m,
            "mean_d": pooled(outs.iter().map(|o| o.mean_d.clone())),
        },
        "stationary_law": law,
    });
    sink.summary("simulate_summary", &summary)?;
    Ok(Report::Json(summary))
}

pub fn ctmc_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let (net, params) = sc.resolve()?;
    let mut run = CtmcRun::new(sc.events()?, sc.seed()?);
    run.burn_in = sc.burn_in();
    run.record_every = sc.sim().record_every.unwrap_or(1);
    let reps = sc.replications();
    let outs = replicate(reps, |k| {
        let mut r = run.clone();
        r.replication = k;
        simulate_ctmc(&net, &params, &r)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    for (k, out) in outs.iter().enumerate() {
        sink.trajectory(&stem("ctmc", k as u64, reps), &out.trajectory)?;
    }
    let approx = approx_stationary(&net, &params).ok();
    let summary = json!({
        "command": "ctmc",
        "config": sc,
        "replications": outs.iter().map(|o| &o.stats).collect::<Vec<_>>(),
        "pooled_mean_n": pooled(outs.iter().map(|o| o.stats.mean_n.clone())),
        "approx_stationary": approx,
    });
    sink.summary("ctmc_summary", &summary)?;
    Ok(Report::Json(summary))
}

pub fn fluid_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let (net, params) = sc.resolve()?;
    let n0 = sc.n.clone().ok_or_else(|| invalid("fluid needs an initial state \"n\""))?;
    let record_every = sc.sim().record_every.unwrap_or(1).max(1);
    let run = integrate_fluid(&net, &params, &n0, sc.horizon()?, sc.step(), record_every)?;
    // widen the recorded rows with workloads and rates
    let (ni, nj) = (net.routes(), net.resources());
    let mut columns: Vec<String> = vec!["time".into()];
    columns.extend(Trajectory::indexed("n", ni));
    columns.extend(Trajectory::indexed("w", nj));
    columns.extend(Trajectory::indexed("lambda", ni));
    columns.push("lyapunov_gap".into());
    columns.push("manifold_distance".into());
    let mut solver = PfSolver::new(&net);
    let mut rows = Vec::with_capacity(run.trajectory.len());
    for r in &run.trajectory.rows {
        let n = &r[1..=ni];
        let a = solver.solve(n)?;
        let mut row = vec![r[0]];
        row.extend_from_slice(n);
        row.extend(flow_workload(&net, &params, n));
        row.extend(a.lambda);
        row.extend_from_slice(&r[ni + 1..]);
        rows.push(row);
    }
    sink.table("fluid", &columns, &rows)?;
    let summary = json!({
        "command": "fluid",
        "config": sc,
        "final_state": run.final_state,
        "initial_gap": run.lyapunov_gap.first(),
        "final_gap": run.lyapunov_gap.last(),
        "max_gap_increase": run.max_gap_increase,
        "final_manifold_distance": run.manifold_distance.last(),
        "steps": run.lyapunov_gap.len().saturating_sub(1),
    });
    sink.summary("fluid_summary", &summary)?;
    Ok(Report::Json(summary))
}

fn queue_table(path: &QueuePath) -> (Vec<String>, Vec<Vec<f64>>) {
    let columns = ["time", "W", "N", "U"].map(String::from).to_vec();
    let rows = (0..path.len()).map(|k| vec![path.time[k], path.w[k], path.n[k], path.u[k]]).collect();
    (columns, rows)
}

pub fn queue_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let q = sc.queue.as_ref().ok_or_else(|| invalid("queue needs a \"queue\" block"))?;
    let seed = sc.seed()?;
    let sim = sc.sim();
    let reps = sc.replications();
    let event_run = |k: u64| -> Result<QueueRun> {
        let mut run = QueueRun::new(sc.events()?, seed);
        run.burn_in = sc.burn_in();
        run.record_every = sim.record_every.unwrap_or(1);
        run.replication = k;
        Ok(run)
    };
    let mut results = Vec::new();
    match q.kind {
        QueueKind::Mm1 => {
            let mu = q.mu.unwrap_or(1.0);
            let geom = mm1_stationary(q.rho)?;
            for k in 0..reps {
                let (path, stats) = simulate_mm1(q.rho * mu, mu, &event_run(k)?)?;
                let (cols, rows) = queue_table(&path);
                sink.table(&stem("queue", k, reps), &cols, &rows)?;
                let emp: Vec<f64> = (0..=50).map(|n| stats.occupancy.get(n).copied().unwrap_or(0.0)).collect();
                results.push(json!({
                    "replication": k,
                    "stats": stats,
                    "tv_distance_0_50": tv_distance(&emp, &geom.pmf_vec(50)),
                    "z_score": (stats.mean_n - geom.mean()) / stats.mean_n_se,
                }));
            }
            Ok(queue_summary(sc, results, json!({"mean_n": geom.mean()}), sink)?)
        }
        QueueKind::Ps => {
            let g = q.work.clone().unwrap_or(WorkDistribution::Exponential { mu: 1.0 });
            let nu = q.rho / g.mean();
            for k in 0..reps {
                let (path, stats, snaps) = simulate_mg1_ps(nu, &g, &event_run(k)?, q.snapshot_every.unwrap_or(10.0))?;
                let (cols, rows) = queue_table(&path);
                sink.table(&stem("queue", k, reps), &cols, &rows)?;
                let residuals = snaps.pooled();
                let ks = (!residuals.is_empty()).then(|| ks_statistic(&residuals, |x| forward_recurrence_cdf(&g, x)));
                results.push(json!({
                    "replication": k,
                    "stats": stats,
                    "residual_samples": residuals.len(),
                    "residual_ks": ks,
                }));
            }
            let rho = q.rho;
            Ok(queue_summary(sc, results, json!({"mean_n": rho / (1.0 - rho)}), sink)?)
        }
        QueueKind::Rbm => {
            let sigma2 = sc.traffic.as_ref().and_then(|t| t.sigma2).unwrap_or(1.0);
            let theory = rbm1_stationary_mean(q.rho, sigma2)?;
            let record_every = sim.record_every.unwrap_or(1000);
            for k in 0..reps {
                // replications use consecutive seeds
                let r = rbm1_path(q.rho, sigma2, sc.horizon()?, sc.step(), q.w0.unwrap_or(0.0), seed + k, record_every)?;
                let (cols, rows) = queue_table(&r.path);
                sink.table(&stem("queue", k, reps), &cols, &rows)?;
                results.push(json!({
                    "replication": k,
                    "seed": seed + k,
                    "mean_w": r.mean_w,
                    "mean_w_se": r.mean_w_se,
                    "idleness": r.idleness,
                    "complementarity_violations": r.complementarity_violations,
                }));
            }
            Ok(queue_summary(sc, results, json!({"mean_w": theory}), sink)?)
        }
    }
}

fn queue_summary(sc: &Scenario, results: Vec<Value>, theory: Value, sink: &Sink) -> Result<Report> {
    let summary = json!({"command": "queue", "config": sc, "theory": theory, "replications": results});
    sink.summary("queue_summary", &summary)?;
    Ok(Report::Json(summary))
}

pub fn route_choice_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    if sc.network.preset != Some(Preset::Parallel4) {
        return Err(invalid("route-choice needs the parallel4 preset"));
    }
    let params = sc.traffic()?;
    let choices = sc.choices.clone().unwrap_or_default();
    let run = motorway_run(sc, sc.mode.unwrap_or(Mode::Brownian))?;
    let reps = sc.replications();
    let cap = sc.network.c.clone();
    let jobs = run.mode == Mode::PoissonJobs;
    let outs = replicate(reps, |k| {
        let mut r = run.clone();
        r.replication = k;
        simulate_route_choice(&cap, params.rho(), params.sigma2(), &choices, &r, jobs)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    for (k, out) in outs.iter().enumerate() {
        let name = stem("route_choice", k as u64, reps);
        sink.trajectory(&name, &out.run.trajectory)?;
        if jobs {
            let cols = ["time", "source", "line"].map(String::from).to_vec();
            let rows: Vec<Vec<f64>> = out
                .run
                .arrival_log
                .iter()
                .map(|&(t, s, l)| vec![t, (s + 1) as f64, (l + 1) as f64])
                .collect();
            sink.table(&format!("{name}_arrivals"), &cols, &rows)?;
        }
    }
    let law = zeta_params(params.rho(), &cap, params.sigma2()).ok();
    let summary = json!({
        "command": "route-choice",
        "config": sc,
        "enlarged_stability": enlarged_stability(params.rho(), &cap)?,
        "replications": outs.iter().enumerate().map(|(k, o)| json!({
            "replication": k,
            "virtual_duals": o.virtual_duals,
            "virtual_delays": o.virtual_delays,
            "pf_delays": o.pf_delays,
            "mean_m": o.run.mean_m,
            "routed": o.run.routed,
            "mean_sojourn": o.run.mean_sojourn,
        })).collect::<Vec<_>>(),
        "pooled_virtual_delays": pooled(outs.iter().map(|o| o.virtual_delays.clone())),
        "virtual_law": law,
        "note": "virtual duals are a diagnostic: a linear solve on time-averaged virtual workloads",
    });
    sink.summary("route_choice_summary", &summary)?;
    Ok(Report::Json(summary))
}

fn trend_of(series: &[(f64, f64)]) -> Value {
    let half = &series[series.len() / 2..];
    if half.len() < 2 * TREND_BATCHES {
        return Value::Null;
    }
    let t: Vec<f64> = half.iter().map(|p| p.0).collect();
    let v: Vec<f64> = half.iter().map(|p| p.1).collect();
    let fit = batched_trend(&t, &v, TREND_BATCHES);
    json!({"slope": fit.slope, "slope_se": fit.slope_se, "t_stat": fit.t_stat()})
}

pub fn compare_cmd(sc: &Scenario, sink: &Sink) -> Result<Report> {
    let (net, params) = sc.resolve()?;
    let policies = match (&sc.policies, sc.policy) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => vec![p],
        (None, None) if net.is_linear() => {
            vec![Policy::ProportionalFair, Policy::UpstreamPriority, Policy::DownstreamPriority]
        }
        (None, None) => vec![Policy::ProportionalFair],
    };
    let run = motorway_run(sc, sc.mode.unwrap_or(Mode::PoissonJobs))?;
    let reps = sc.replications();
    let mut per_rep = Vec::new();
    for k in 0..reps {
        let mut r = run.clone();
        r.replication = k;
        // every policy sees the same arrival stream
        let outs = policies
            .iter()
            .map(|&p| simulate_motorway(&net, &params, p, &r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cols = vec!["time".to_string()];
        cols.extend(policies.iter().map(|p| format!("sum_m_{}", p.name())));
        let len = outs.iter().map(|o| o.total_series.len()).min().unwrap_or(0);
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|i| {
                let mut row = vec![outs[0].total_series[i].0];
                row.extend(outs.iter().map(|o| o.total_series[i].1));
                row
            })
            .collect();
        sink.table(&stem("compare", k, reps), &cols, &rows)?;
        if run.mode == Mode::PoissonJobs {
            let mut cols = vec!["arrival".to_string()];
            cols.extend(policies.iter().map(|p| format!("sum_m_{}", p.name())));
            let len = outs.iter().map(|o| o.arrival_totals.len()).min().unwrap_or(0);
            let rows: Vec<Vec<f64>> = (0..len)
                .map(|i| {
                    let mut row = vec![(i + 1) as f64];
                    row.extend(outs.iter().map(|o| o.arrival_totals[i]));
                    row
                })
                .collect();
            sink.table(&format!("{}_arrivals", stem("compare", k, reps)), &cols, &rows)?;
        }
        let summary: Vec<Value> = policies
            .iter()
            .zip(&outs)
            .map(|(p, o)| {
                let burn = (sc.burn_in() * o.total_series.len() as f64) as usize;
                let totals: Vec<f64> = o.total_series[burn..].iter().map(|x| x.1).collect();
                json!({
                    "policy": p,
                    "mean_sum_m": mean(&totals),
                    "final_sum_m": o.total_series.last().map(|x| x.1),
                    "trend_last_half": trend_of(&o.total_series),
                    "mean_m": o.mean_m,
                    "utilization": o.utilization,
                })
            })
            .collect();
        per_rep.push(json!({"replication": k, "policies": summary}));
    }
    let summary = json!({"command": "compare", "config": sc, "replications": per_rep});
    sink.summary("compare_summary", &summary)?;
    Ok(Report::Json(summary))
}
