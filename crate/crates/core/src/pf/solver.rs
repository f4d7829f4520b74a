use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve_in_place, lstsq_min_norm, rank_exact};
use crate::network::Network;

/// Stopping target for the normalised KKT residual.
const KKT_TARGET: f64 = 1e-13;
/// Residual above which the solve is reported as failed.
const KKT_ACCEPT: f64 = 1e-10;
const MAX_ITER: usize = 200;
/// A resource counts as tight when its slack is below this (capacity units).
const TIGHT_TOL: f64 = 1e-9;
/// Prices below this fraction of the largest price are reported as zero.
const PRICE_FLOOR: f64 = 1e-11;

/// Proportionally fair rates and resource prices for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub lambda: Vec<f64>,
    pub q: Vec<f64>,
    /// Resources with a strictly positive price.
    pub active: Vec<usize>,
    /// `Σ_{n_i > 0} n_i log λ_i`.
    pub objective: f64,
    pub iterations: usize,
}

impl Allocation {
    /// Largest violation of `Aλ ≤ C`.
    pub fn feasibility_violation(&self, net: &Network) -> f64 {
        net.load(&self.lambda)
            .iter()
            .zip(net.capacity())
            .map(|(l, c)| (l - c).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest `|q_j (C_j − (Aλ)_j)|`.
    pub fn slackness_residual(&self, net: &Network) -> f64 {
        net.load(&self.lambda)
            .iter()
            .zip(net.capacity())
            .zip(&self.q)
            .map(|((l, c), q)| (q * (c - l)).abs())
            .fold(0.0, f64::max)
    }
}

/// Reusable solver for the proportionally fair program.
///
/// Works on the dual `min_{q ≥ 0} Σ_j q_j C_j − Σ_{n_i>0} n_i log (Aᵀq)_i`,
/// whose gradient `C − AΛ(q)` is the capacity slack, with a projected Newton
/// method and Armijo backtracking. Counts are normalised to sum to one
/// internally, which makes the output exactly invariant to rescaling `n`.
/// The last solution is kept as a warm start for the next call.
#[derive(Debug, Clone)]
pub struct PfSolver {
    capacity: Vec<f64>,
    paths: Vec<Vec<usize>>,
    users: Vec<Vec<usize>>,
    incidence: Vec<Vec<u8>>,
    warm: Vec<f64>,
    has_warm: bool,
    // scratch
    weights: Vec<f64>,
    positive: Vec<bool>,
    relevant: Vec<bool>,
    /// `w_i / y_i²`, the Hessian contribution of route i.
    curv: Vec<f64>,
    pos: Vec<usize>,
    rates: Vec<f64>,
    grad: Vec<f64>,
    cur: Vec<f64>,
    trial: Vec<f64>,
    dir: Vec<f64>,
    free: Vec<usize>,
    hess: Vec<f64>,
    hess_saved: Vec<f64>,
    rhs: Vec<f64>,
    rhs_saved: Vec<f64>,
}

impl PfSolver {
    pub fn new(net: &Network) -> Self {
        let (j, i) = (net.resources(), net.routes());
        Self {
            capacity: net.capacity().to_vec(),
            paths: (0..i).map(|r| net.path(r).to_vec()).collect(),
            users: (0..j).map(|r| net.users(r).to_vec()).collect(),
            incidence: net.incidence().to_vec(),
            warm: vec![0.0; j],
            has_warm: false,
            weights: vec![0.0; i],
            positive: vec![false; i],
            relevant: vec![false; j],
            curv: vec![0.0; i],
            pos: vec![usize::MAX; j],
            rates: vec![0.0; i],
            grad: vec![0.0; j],
            cur: vec![0.0; j],
            trial: vec![0.0; j],
            dir: vec![0.0; j],
            free: Vec::with_capacity(j),
            hess: vec![0.0; j * j],
            hess_saved: vec![0.0; j * j],
            rhs: vec![0.0; j],
            rhs_saved: vec![0.0; j],
        }
    }

    pub fn resources(&self) -> usize {
        self.capacity.len()
    }

    pub fn routes(&self) -> usize {
        self.paths.len()
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.has_warm = false;
    }

    pub fn solve(&mut self, n: &[f64]) -> Result<Allocation> {
        let mut lambda = vec![0.0; self.routes()];
        let mut q = vec![0.0; self.resources()];
        let iterations = self.solve_into(n, &mut lambda, &mut q)?;
        let objective = n
            .iter()
            .zip(&lambda)
            .filter(|(ni, _)| **ni > 0.0)
            .map(|(ni, l)| ni * l.ln())
            .sum();
        let active = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
        Ok(Allocation { lambda, q, active, objective, iterations })
    }

    /// Allocation-free solve writing rates and prices into the given slices.
    /// Returns the number of Newton iterations.
    pub fn solve_into(&mut self, n: &[f64], lambda: &mut [f64], q: &mut [f64]) -> Result<usize> {
        let (jn, inn) = (self.resources(), self.routes());
        if n.len() != inn || lambda.len() != inn || q.len() != jn {
            return Err(Error::DimensionMismatch(format!(
                "solver for {inn} routes / {jn} resources called with {} counts",
                n.len()
            )));
        }
        if n.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("counts must be finite and nonnegative".into()));
        }
        let total: f64 = n.iter().sum();
        lambda.fill(0.0);
        q.fill(0.0);
        if total <= 0.0 {
            return Ok(0);
        }
        for i in 0..inn {
            self.weights[i] = n[i] / total;
            self.positive[i] = n[i] > 0.0;
        }
        for j in 0..jn {
            self.relevant[j] = self.users[j].iter().any(|&i| self.positive[i]);
        }

        // start point: warm start if it keeps every log finite
        let mut start_ok = false;
        if self.has_warm {
            for j in 0..jn {
                self.trial[j] = if self.relevant[j] { self.warm[j] } else { 0.0 };
            }
            start_ok = self.trial_in_domain();
        }
        if !start_ok {
            for j in 0..jn {
                self.trial[j] = if self.relevant[j] {
                    let demand: f64 = self.users[j].iter().map(|&i| self.weights[i]).sum();
                    demand / self.capacity[j] + 1.0
                } else {
                    0.0
                };
            }
        }
        std::mem::swap(&mut self.cur, &mut self.trial);
        let mut value = self.value_of(&self.cur);
        let mut residual = self.kkt_at_current();
        let mut iterations = 0;

        while residual > KKT_TARGET && iterations < MAX_ITER {
            iterations += 1;
            self.newton_direction();
            let mut accepted = self.line_search(&mut value, residual);
            if !accepted {
                // singular reduced Hessians can give poor Newton steps
                self.scaled_gradient_direction();
                accepted = self.line_search(&mut value, residual);
            }
            residual = self.kkt_at_current();
            if !accepted {
                break;
            }
        }
        if residual > KKT_ACCEPT || !residual.is_finite() {
            self.has_warm = false;
            return Err(Error::SolverDiverged { iterations, residual });
        }

        self.warm.copy_from_slice(&self.cur);
        self.has_warm = true;
        // kkt_at_current left the rates of the final prices in `rates`
        lambda.copy_from_slice(&self.rates);
        for j in 0..jn {
            // complementary slackness: slack resources carry no price
            q[j] = if self.grad[j] > TIGHT_TOL { 0.0 } else { self.cur[j] * total };
        }
        // prices at rounding level are zero prices
        let top = q.iter().copied().fold(0.0, f64::max);
        for v in q.iter_mut() {
            if *v <= PRICE_FLOOR * top {
                *v = 0.0;
            }
        }
        if self.positive.iter().any(|p| !p) {
            self.resolve_dual_face(n, lambda, q);
        }
        Ok(iterations)
    }

    /// Armijo backtracking along the projection arc from `cur` in direction
    /// `dir`. Close to the optimum objective differences drown in rounding;
    /// there a step is taken when it does not raise the objective beyond
    /// rounding and reduces the KKT residual. On success the step is applied and `value` updated.
    fn line_search(&mut self, value: &mut f64, residual: f64) -> bool {
        let jn = self.cur.len();
        let noise = 1e-14 * (1.0 + value.abs());
        let mut step = 1.0;
        for _ in 0..60 {
            let mut decrease = 0.0;
            for j in 0..jn {
                self.trial[j] = if self.relevant[j] { (self.cur[j] + step * self.dir[j]).max(0.0) } else { 0.0 };
                decrease += self.grad[j] * (self.trial[j] - self.cur[j]);
            }
            if !self.trial_in_domain() {
                step *= 0.5;
                continue;
            }
            let trial_value = self.value_of(&self.trial);
            let mut accept = trial_value <= *value + 1e-4 * decrease && *value - trial_value > noise;
            if !accept && trial_value <= *value + noise {
                std::mem::swap(&mut self.cur, &mut self.trial);
                accept = self.kkt_at_current() <= residual * (1.0 - 1e-3);
                std::mem::swap(&mut self.cur, &mut self.trial);
                if !accept {
                    self.kkt_at_current();
                }
            }
            if accept {
                std::mem::swap(&mut self.cur, &mut self.trial);
                *value = trial_value;
                return true;
            }
            step *= 0.5;
        }
        false
    }

    /// `dir_j = −grad_j / H_jj`.
    fn scaled_gradient_direction(&mut self) {
        for j in 0..self.cur.len() {
            self.dir[j] = if self.relevant[j] {
                -self.grad[j] / self.hessian_diag(j).max(1e-300)
            } else {
                0.0
            };
        }
    }

    /// Whether every route with a positive count sees a positive price at `trial`.
    fn trial_in_domain(&self) -> bool {
        (0..self.paths.len()).all(|i| {
            if !self.positive[i] {
                return true;
            }
            let s: f64 = self.paths[i].iter().map(|&j| self.trial[j]).sum();
            s > 0.0 && s.is_finite()
        })
    }

    fn value_of(&self, prices: &[f64]) -> f64 {
        let mut v = 0.0;
        for j in 0..prices.len() {
            v += prices[j] * self.capacity[j];
        }
        for i in 0..self.paths.len() {
            if self.positive[i] {
                let s: f64 = self.paths[i].iter().map(|&j| prices[j]).sum();
                v -= self.weights[i] * s.ln();
            }
        }
        v
    }

    /// Updates `y`, `rates`, `grad` at the current prices and returns the KKT residual.
    fn kkt_at_current(&mut self) -> f64 {
        for i in 0..self.paths.len() {
            if self.positive[i] {
                let s: f64 = self.paths[i].iter().map(|&j| self.cur[j]).sum();
                self.curv[i] = self.weights[i] / (s * s);
                self.rates[i] = self.weights[i] / s;
            } else {
                self.rates[i] = 0.0;
                self.curv[i] = 0.0;
            }
        }
        let mut residual: f64 = 0.0;
        for j in 0..self.cur.len() {
            let used: f64 = self.users[j].iter().map(|&i| self.rates[i]).sum();
            self.grad[j] = self.capacity[j] - used;
            if self.relevant[j] {
                residual = residual
                    .max((self.cur[j] * self.grad[j]).abs())
                    .max((-self.grad[j]).max(0.0));
            }
        }
        residual
    }

    /// Projected Newton direction (Bertsekas): variables at the bound with a
    /// positive gradient are held by a diagonally scaled step, the rest take a
    /// Newton step on the reduced Hessian.
    fn newton_direction(&mut self) {
        let jn = self.cur.len();
        self.free.clear();
        for j in 0..jn {
            self.dir[j] = 0.0;
            if !self.relevant[j] {
                continue;
            }
            let h = self.hessian_diag(j).max(1e-300);
            // held at the bound when a diagonal Newton step would cross it
            if self.grad[j] > 0.0 && (self.cur[j] <= 0.0 || self.cur[j] * h <= self.grad[j]) {
                self.dir[j] = -self.grad[j] / h;
            } else {
                self.free.push(j);
            }
        }
        let k = self.free.len();
        if k == 0 {
            return;
        }
        for j in 0..jn {
            self.pos[j] = usize::MAX;
        }
        for (a, &j) in self.free.iter().enumerate() {
            self.pos[j] = a;
            self.rhs[a] = -self.grad[j];
        }
        self.hess[..k * k].fill(0.0);
        for i in 0..self.paths.len() {
            let c = self.curv[i];
            if c == 0.0 {
                continue;
            }
            for &ja in &self.paths[i] {
                let a = self.pos[ja];
                if a == usize::MAX {
                    continue;
                }
                for &jb in &self.paths[i] {
                    let b = self.pos[jb];
                    if b != usize::MAX {
                        self.hess[a * k + b] += c;
                    }
                }
            }
        }
        let trace: f64 = (0..k).map(|a| self.hess[a * k + a]).sum();
        self.hess_saved[..k * k].copy_from_slice(&self.hess[..k * k]);
        self.rhs_saved[..k].copy_from_slice(&self.rhs[..k]);
        let mut ridge = 0.0;
        while !cholesky_solve_in_place(&mut self.hess[..k * k], k, &mut self.rhs[..k]) {
            ridge = if ridge == 0.0 { 1e-12 * trace.max(1e-300) } else { ridge * 100.0 };
            self.hess[..k * k].copy_from_slice(&self.hess_saved[..k * k]);
            for a in 0..k {
                self.hess[a * k + a] += ridge;
            }
            self.rhs[..k].copy_from_slice(&self.rhs_saved[..k]);
        }
        for a in 0..k {
            self.dir[self.free[a]] = self.rhs[a];
        }
    }

    fn hessian_diag(&self, j: usize) -> f64 {
        self.users[j].iter().map(|&i| self.curv[i]).sum()
    }

    /// With some empty routes the optimal prices need not be unique. Among the
    /// optimal prices (supported on tight resources, reproducing the route
    /// delays `n_i/λ_i`) pick the one of minimum Euclidean norm.
    fn resolve_dual_face(&self, n: &[f64], lambda: &[f64], q: &mut [f64]) {
        let inn = n.len();
        let load: Vec<f64> = self
            .users
            .iter()
            .map(|users| users.iter().map(|&i| lambda[i]).sum())
            .collect();
        let tight: Vec<usize> = (0..q.len())
            .filter(|&j| self.relevant[j] && (q[j] > 0.0 || self.capacity[j] - load[j] <= TIGHT_TOL))
            .collect();
        let routes: Vec<usize> = (0..inn).filter(|&i| self.positive[i]).collect();
        if tight.is_empty() || tight.len() > 16 {
            return;
        }
        let sub: Vec<Vec<i64>> = tight
            .iter()
            .map(|&j| routes.iter().map(|&i| self.incidence[j][i] as i64).collect())
            .collect();
        if rank_exact(&sub) == tight.len() {
            return;
        }
        let delays = DVector::from_iterator(routes.len(), routes.iter().map(|&i| n[i] / lambda[i]));
        let scale = delays.amax().max(1e-300);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1u32 << tight.len()) {
            let support: Vec<usize> = (0..tight.len()).filter(|b| mask & (1 << b) != 0).map(|b| tight[b]).collect();
            let m = DMatrix::from_fn(routes.len(), support.len(), |r, c| {
                self.incidence[support[c]][routes[r]] as f64
            });
            let x = lstsq_min_norm(&m, &delays);
            if x.iter().any(|&v| v < -1e-12 * scale) {
                continue;
            }
            if (&m * &x - &delays).amax() > 1e-9 * scale {
                continue;
            }
            let norm = x.norm_squared();
            if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                let mut full = vec![0.0; q.len()];
                for (k, &j) in support.iter().enumerate() {
                    full[j] = x[k].max(0.0);
                }
                best = Some((norm, full));
            }
        }
        if let Some((_, full)) = best {
            q.copy_from_slice(&full);
        }
    }
}
