//! Random instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use fairway_core::network::Network;
use fairway_core::rng::SimRng;
use fairway_core::TrafficParams;
use rand::Rng;

/// Random full-row-rank network with `J ≤ max_j`, `I ≤ max_i`. With `local`,
/// the first `J` routes are the identity columns (single-resource traffic).
pub fn random_network(rng: &mut SimRng, max_j: usize, max_i: usize, local: bool) -> Network {
    loop {
        let j = rng.random_range(1..=max_j);
        let lo = if local { j } else { 1 };
        let i = rng.random_range(lo.max(j)..=max_i.max(j));
        let mut rows = vec![vec![0u8; i]; j];
        for col in 0..i {
            if local && col < j {
                rows[col][col] = 1;
                continue;
            }
            let mut any = false;
            while !any {
                for row in rows.iter_mut() {
                    row[col] = u8::from(rng.random_bool(0.5));
                    any |= row[col] == 1;
                }
            }
        }
        let cap = (0..j).map(|_| rng.random_range(0.5..3.0)).collect();
        if let Ok(net) = Network::new(rows, cap) {
            return net;
        }
    }
}

/// Positive counts spanning several orders of magnitude.
pub fn random_counts(rng: &mut SimRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect()
}

/// Random strictly stable traffic with the busiest resource at `max_load` of capacity.
pub fn random_traffic(rng: &mut SimRng, net: &Network, max_load: f64) -> TrafficParams {
    let ni = net.routes();
    let raw: Vec<f64> = (0..ni).map(|_| rng.random_range(0.2..1.0)).collect();
    let mu: Vec<f64> = (0..ni).map(|_| rng.random_range(0.5..2.0)).collect();
    let rho: Vec<f64> = raw.iter().zip(&mu).map(|(r, m)| r / m).collect();
    let scale = net
        .load(&rho)
        .iter()
        .zip(net.capacity())
        .map(|(l, c)| l / c)
        .fold(0.0, f64::max);
    let nu = raw.iter().map(|r| r * max_load / scale).collect();
    TrafficParams::from_rates(nu, mu, 1.0).unwrap()
}

/// Dual value `Σ_j q_j C_j − Σ_i w_i log (A′q)_i` (infinite off the domain).
fn dual_value(net: &Network, w: &[f64], q: &[f64]) -> f64 {
    let d = net.route_sum(q);
    let mut v: f64 = q.iter().zip(net.capacity()).map(|(a, c)| a * c).sum();
    for (wi, di) in w.iter().zip(&d) {
        if *di <= 0.0 {
            return f64::INFINITY;
        }
        v -= wi * di.ln();
    }
    v
}

fn dual_gradient(net: &Network, w: &[f64], q: &[f64]) -> Vec<f64> {
    let d = net.route_sum(q);
    let lambda: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a / b).collect();
    net.load(&lambda).iter().zip(net.capacity()).map(|(l, c)| c - l).collect()
}

/// Proportionally fair objective by projected gradient on the dual with
/// Barzilai–Borwein steps and Armijo backtracking, best of `starts` random
/// starts. The primal point `λ = n/(A′q)` is scaled into the feasible set.
pub fn pg_oracle(net: &Network, n: &[f64], starts: usize, rng: &mut SimRng) -> f64 {
    let total: f64 = n.iter().sum();
    let w: Vec<f64> = n.iter().map(|v| v / total).collect();
    let nj = net.resources();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..starts {
        let mut q: Vec<f64> = (0..nj).map(|_| rng.random_range(0.1..10.0)).collect();
        let mut f = dual_value(net, &w, &q);
        let mut g = dual_gradient(net, &w, &q);
        let mut step = 1.0;
        for _ in 0..100_000 {
            let proj_res = (0..nj).map(|j| ((q[j] - g[j]).max(0.0) - q[j]).abs()).fold(0.0, f64::max);
            if proj_res <= 1e-14 {
                break;
            }
            let mut t = step;
            let (qn, fnew) = loop {
                let cand: Vec<f64> = (0..nj).map(|j| (q[j] - t * g[j]).max(0.0)).collect();
                let fc = dual_value(net, &w, &cand);
                let decrease: f64 = (0..nj).map(|j| g[j] * (q[j] - cand[j])).sum();
                if fc <= f - 1e-4 * decrease || t < 1e-20 {
                    break (cand, fc);
                }
                t *= 0.5;
            };
            let gn = dual_gradient(net, &w, &qn);
            let s: Vec<f64> = (0..nj).map(|j| qn[j] - q[j]).collect();
            let y: Vec<f64> = (0..nj).map(|j| gn[j] - g[j]).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1.0 };
            if ss == 0.0 {
                break;
            }
            q = qn;
            f = fnew;
            g = gn;
        }
        let d = net.route_sum(&q);
        let mut lambda: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a / b).collect();
        let over = net
            .load(&lambda)
            .iter()
            .zip(net.capacity())
            .map(|(l, c)| l / c)
            .fold(0.0, f64::max);
        lambda.iter_mut().for_each(|l| *l /= over);
        let obj: f64 = n.iter().zip(&lambda).map(|(a, l)| a * l.ln()).sum();
        best = best.max(obj);
    }
    best
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for c in 0..k {
        let p = (c..k).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..k {
            let f = m[r][c] / m[c][c];
            for cc in c..k {
                m[r][cc] -= f * m[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// Minimiser of `Σ n_i²/ν_i` over `{n ≥ 0 : A[μ]⁻¹n ≥ w}` by enumerating the
/// supports of the multiplier `y` in the KKT system `n = ½[ν][μ]⁻¹A′y`,
/// `½Gy ≥ w`, `y ≥ 0`, `y′(½Gy − w) = 0`.
pub fn lift_oracle(net: &Network, params: &TrafficParams, w: &[f64]) -> Vec<f64> {
    let (nj, ni) = (net.resources(), net.routes());
    let coef: Vec<f64> = (0..ni).map(|i| 0.5 * params.nu()[i] / (params.mu()[i] * params.mu()[i])).collect();
    let half_g: Vec<Vec<f64>> = (0..nj)
        .map(|j| {
            (0..nj)
                .map(|k| (0..ni).filter(|&i| net.uses(j, i) && net.uses(k, i)).map(|i| coef[i]).sum())
                .collect()
        })
        .collect();
    let scale = w.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << nj) {
        let s: Vec<usize> = (0..nj).filter(|j| mask >> j & 1 == 1).collect();
        let sub: Vec<Vec<f64>> = s.iter().map(|&a| s.iter().map(|&b| half_g[a][b]).collect()).collect();
        let rhs: Vec<f64> = s.iter().map(|&a| w[a]).collect();
        let Some(ys) = solve_dense(sub, rhs) else { continue };
        if ys.iter().any(|&v| v < -1e-12 * scale) {
            continue;
        }
        let mut y = vec![0.0; nj];
        for (k, &j) in s.iter().enumerate() {
            y[j] = ys[k].max(0.0);
        }
        let gy: Vec<f64> = (0..nj).map(|j| (0..nj).map(|k| half_g[j][k] * y[k]).sum()).collect();
        let slack = (0..nj).map(|j| w[j] - gy[j]).fold(0.0, f64::max);
        if slack > 1e-10 * scale {
            continue;
        }
        let sums = net.route_sum(&y);
        let n: Vec<f64> = (0..ni).map(|i| 0.5 * params.nu()[i] / params.mu()[i] * sums[i]).collect();
        let f: f64 = n.iter().zip(params.nu()).map(|(x, v)| x * x / v).sum();
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, n));
        }
    }
    best.expect("a KKT point exists for a feasible workload").1
}
