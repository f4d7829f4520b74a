//! Proportionally fair allocation and the workload-cone geometry built on it.
//!
//! The allocation maximises `Σ n_i log λ_i` subject to `Aλ ≤ C`, `λ_i = 0`
//! for empty routes. Its prices `q` define delays `A′q`; states of the form
//! `n = [ρ]A′q` (`q ≥ 0`) form the invariant manifold of the fluid model and
//! their workloads form the cone `𝒲 = G ℝ₊^J`.

mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use solver::{Allocation, PfSolver};

use crate::error::{Error, Result};
use crate::linalg::{nnls, nnqp};
use crate::network::{Network, TrafficParams};

/// Relative tolerance for cone membership.
pub const CONE_TOL: f64 = 1e-9;
/// Residual bound for nonnegative-least-squares cone membership.
pub const NNLS_TOL: f64 = 1e-8;

/// One-off allocation with a fresh solver.
pub fn allocate(net: &Network, n: &[f64]) -> Result<Allocation> {
    PfSolver::new(net).solve(n)
}

/// Route delays `d = A′q`.
pub fn delays_from_duals(net: &Network, q: &[f64]) -> Vec<f64> {
    net.route_sum(q)
}

/// `F(n) = Σ n_i² / ν_i`.
pub fn lyapunov_f(params: &TrafficParams, n: &[f64]) -> f64 {
    n.iter().zip(params.nu()).map(|(x, nu)| x * x / nu).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrownianModel {
    /// Connection-level model: `G = A[μ]⁻¹[ν][μ]⁻¹A′`, `Γ = 2G`.
    Flow,
    /// Direct Brownian motorway model: `G = A[ρ]A′`, `Γ = σ²G`.
    Motorway,
}

/// Drift, covariance and cone map of a Brownian network model.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianSpec {
    /// `C − Aρ`.
    pub theta: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub cone_map: DMatrix<f64>,
}

/// `A[d]A′` for a diagonal `d`.
fn weighted_gram(net: &Network, d: &[f64]) -> DMatrix<f64> {
    let a = net.matrix();
    let ad = DMatrix::from_fn(a.nrows(), a.ncols(), |j, i| a[(j, i)] * d[i]);
    ad * a.transpose()
}

/// The flow-model cone map `A[μ]⁻¹[ν][μ]⁻¹A′`.
pub fn flow_cone_map(net: &Network, params: &TrafficParams) -> DMatrix<f64> {
    let d: Vec<f64> = params.nu().iter().zip(params.mu()).map(|(nu, mu)| nu / (mu * mu)).collect();
    weighted_gram(net, &d)
}

pub fn covariance_gamma(net: &Network, params: &TrafficParams, model: BrownianModel) -> Result<BrownianSpec> {
    params.check_against(net)?;
    let (cone_map, factor) = match model {
        BrownianModel::Flow => (flow_cone_map(net, params), 2.0),
        BrownianModel::Motorway => (weighted_gram(net, params.rho()), params.sigma2()),
    };
    let gamma = &cone_map * factor;
    if gamma.clone().cholesky().is_none() {
        return Err(Error::SingularGamma);
    }
    let load = net.load(params.rho());
    let theta = DVector::from_iterator(load.len(), net.capacity().iter().zip(&load).map(|(c, l)| c - l));
    Ok(BrownianSpec { theta, gamma, cone_map })
}

/// Outcome of a cone membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeMembership {
    pub contained: bool,
    /// `G⁻¹w` for a square cone map (may have negative entries), otherwise
    /// the nonnegative least-squares coefficients.
    pub q: Vec<f64>,
    /// `‖G q − w‖∞` for the reported `q`.
    pub residual: f64,
}

/// Membership of `w` in the cone spanned by the columns of `generators`.
///
/// A square, invertible generator matrix is inverted directly; otherwise
/// membership is decided by a nonnegative least-squares fit.
pub fn cone_contains_generators(generators: &DMatrix<f64>, w: &[f64]) -> ConeMembership {
    let wv = DVector::from_column_slice(w);
    let scale = wv.amax().max(generators.amax()).max(1.0);
    if generators.is_square() {
        if let Some(q) = generators.clone().lu().solve(&wv) {
            let residual = (generators * &q - &wv).amax();
            let contained = q.iter().all(|&v| v >= -CONE_TOL * scale);
            return ConeMembership { contained, q: q.iter().copied().collect(), residual };
        }
    }
    let q = nnls(generators, &wv);
    let residual = (generators * &q - &wv).amax();
    ConeMembership { contained: residual <= NNLS_TOL * scale, q: q.iter().copied().collect(), residual }
}

pub fn cone_contains(spec: &BrownianSpec, w: &[f64]) -> ConeMembership {
    cone_contains_generators(&spec.cone_map, w)
}

/// Closed-form cone test for the linear network with cone map `A[ρ]A′`:
/// the delays `D_j = (w_j − w_{j+1})/ρ_j` must be nondecreasing from `D_0 = 0`.
pub fn linear_cone_check(rho: &[f64], w: &[f64]) -> bool {
    let k = w.len();
    let scale = w.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut prev = 0.0;
    for j in 0..k {
        let next = if j + 1 < k { w[j + 1] } else { 0.0 };
        let d = (w[j] - next) / rho[j];
        if d < prev - CONE_TOL * scale / rho[j] {
            return false;
        }
        prev = d;
    }
    true
}

fn check_lift_inputs(net: &Network, params: &TrafficParams, w: &[f64]) -> Result<()> {
    params.check_against(net)?;
    if w.len() != net.resources() {
        return Err(Error::DimensionMismatch(format!(
            "workload has {} entries, network has {} resources",
            w.len(),
            net.resources()
        )));
    }
    if params.nu().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter("the lift needs positive arrival rates".into()));
    }
    Ok(())
}

/// Closed-form lift `Δ(w) = [ρ]A′G⁻¹w` of a workload inside the cone.
pub fn lift_delta(net: &Network, params: &TrafficParams, w: &[f64]) -> Result<Vec<f64>> {
    check_lift_inputs(net, params, w)?;
    let g = flow_cone_map(net, params);
    let membership = cone_contains_generators(&g, w);
    if !membership.contained {
        let min_dual = membership.q.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::OutsideCone { min_dual });
    }
    let delays = net.route_sum(&membership.q);
    Ok(delays.iter().zip(params.rho()).map(|(d, r)| r * d).collect())
}

/// The lift as the minimiser of `F(n)` over `{n ≥ 0 : A[μ]⁻¹n ≥ w}`, valid for
/// any `w`. Solved through its dual `min_{y ≥ 0} ¼ yᵀGy − wᵀy`, after which
/// `n = ½[ν][μ]⁻¹A′y`.
pub fn lift_delta_qp(net: &Network, params: &TrafficParams, w: &[f64]) -> Result<Vec<f64>> {
    check_lift_inputs(net, params, w)?;
    let g = flow_cone_map(net, params) * 0.5;
    let y = nnqp(&g, &DVector::from_column_slice(w));
    let sums = net.route_sum(y.as_slice());
    Ok(sums
        .iter()
        .zip(params.nu().iter().zip(params.mu()))
        .map(|(s, (nu, mu))| 0.5 * nu / mu * s)
        .collect())
}

/// Workload `A[μ]⁻¹n` of a connection-count vector.
pub fn flow_workload(net: &Network, params: &TrafficParams, n: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = n.iter().zip(params.mu()).map(|(x, mu)| x / mu).collect();
    net.load(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{linear_network, tree6};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn allocate_examples() {
        let net = Network::new(vec![vec![1, 1]], vec![1.0]).unwrap();
        let a = allocate(&net, &[1.0, 1.0]).unwrap();
        assert!(close(&a.lambda, &[0.5, 0.5], 1e-10) && close(&a.q, &[2.0], 1e-9));
        let a = allocate(&net, &[0.0, 1.0]).unwrap();
        assert!(close(&a.lambda, &[0.0, 1.0], 1e-10) && close(&a.q, &[1.0], 1e-9));

        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let a = allocate(&lin, &[1.0, 1.0]).unwrap();
        assert!(close(&a.lambda, &[1.0, 1.0], 1e-10), "{:?}", a.lambda);
        assert!(close(&a.q, &[1.0, 0.0], 1e-9), "{:?}", a.q);
        assert_eq!(a.active, vec![0]);
    }

    #[test]
    fn zero_counts_give_zero_allocation() {
        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let a = allocate(&lin, &[0.0, 0.0]).unwrap();
        assert_eq!(a.lambda, vec![0.0, 0.0]);
        assert_eq!(a.q, vec![0.0, 0.0]);
    }

    #[test]
    fn min_norm_dual_on_degenerate_face() {
        // route 1 empty: the price of resource 2 is not pinned by the KKT system
        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let a = allocate(&lin, &[0.0, 1.0]).unwrap();
        assert!(close(&a.lambda, &[0.0, 1.0], 1e-10), "{:?}", a.lambda);
        // resource 2 is tight and resource 1 slack, so only q₂ may be positive
        assert!(close(&a.q, &[0.0, 1.0], 1e-9), "{:?}", a.q);
    }

    #[test]
    fn delay_examples() {
        let lin = linear_network(&[2.0, 1.0]).unwrap();
        assert_eq!(delays_from_duals(&lin, &[1.0, 0.0]), vec![1.0, 1.0]);
        let lin3 = linear_network(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(delays_from_duals(&lin3, &[1.0, 2.0, 3.0]), vec![1.0, 3.0, 6.0]);
        let tree = tree6(&[10.0, 3.0, 1.0, 5.0, 2.0, 2.0]).unwrap();
        assert_eq!(delays_from_duals(&tree, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), vec![1.0; 6]);
    }

    #[test]
    fn lyapunov_examples() {
        let p = TrafficParams::from_rates(vec![1.0, 2.0], vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(lyapunov_f(&p, &[1.0, 2.0]), 3.0);
        assert_eq!(lyapunov_f(&p, &[0.0, 0.0]), 0.0);
        let p = TrafficParams::from_rates(vec![0.5], vec![1.0], 1.0).unwrap();
        assert_eq!(lyapunov_f(&p, &[1.0]), 2.0);
    }

    #[test]
    fn gamma_examples() {
        let single = Network::new(vec![vec![1]], vec![1.0]).unwrap();
        let p = TrafficParams::from_rates(vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(covariance_gamma(&single, &p, BrownianModel::Flow).unwrap().gamma[(0, 0)], 2.0);
        let p = TrafficParams::from_loads(vec![1.0], 2.0).unwrap();
        assert_eq!(covariance_gamma(&single, &p, BrownianModel::Motorway).unwrap().gamma[(0, 0)], 2.0);

        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let p = TrafficParams::from_loads(vec![0.5, 0.5], 1.0).unwrap();
        let s = covariance_gamma(&lin, &p, BrownianModel::Motorway).unwrap();
        assert_eq!(s.gamma, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]));
        assert_eq!(s.theta.as_slice(), &[1.0, 0.5]);
    }

    #[test]
    fn singular_gamma_is_reported() {
        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let p = TrafficParams::from_loads(vec![0.5, 0.0], 1.0).unwrap();
        assert_eq!(covariance_gamma(&lin, &p, BrownianModel::Motorway), Err(Error::SingularGamma));
    }

    #[test]
    fn cone_examples() {
        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let p = TrafficParams::from_loads(vec![0.5, 0.5], 1.0).unwrap();
        let s = covariance_gamma(&lin, &p, BrownianModel::Motorway).unwrap();
        let m = cone_contains(&s, &[1.5, 1.0]);
        assert!(m.contained && close(&m.q, &[1.0, 1.0], 1e-12));
        let m = cone_contains(&s, &[0.0, 1.0]);
        assert!(!m.contained && close(&m.q, &[-2.0, 4.0], 1e-12));
        let m = cone_contains(&s, &[0.0, 0.0]);
        assert!(m.contained && close(&m.q, &[0.0, 0.0], 0.0));

        assert!(linear_cone_check(&[0.5, 0.5], &[1.5, 1.0]));
        assert!(linear_cone_check(&[0.5, 0.5], &[1.0, 1.0]));
        assert!(!linear_cone_check(&[0.5, 0.5], &[0.0, 1.0]));
    }

    #[test]
    fn nonsquare_cone_uses_nnls() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(cone_contains_generators(&g, &[1.0, 2.0, 3.0]).contained);
        assert!(!cone_contains_generators(&g, &[1.0, 2.0, 4.0]).contained);
        assert!(!cone_contains_generators(&g, &[-1.0, 2.0, 1.0]).contained);
    }

    #[test]
    fn lift_examples() {
        let single = Network::new(vec![vec![1]], vec![1.0]).unwrap();
        let p = TrafficParams::from_rates(vec![1.0], vec![1.0], 1.0).unwrap();
        assert!(close(&lift_delta(&single, &p, &[0.7]).unwrap(), &[0.7], 1e-15));

        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let p = TrafficParams::from_rates(vec![0.5, 0.5], vec![1.0, 1.0], 1.0).unwrap();
        let w = flow_workload(&lin, &p, &[0.5, 1.0]);
        assert!(close(&lift_delta(&lin, &p, &w).unwrap(), &[0.5, 1.0], 1e-12));
        assert!(close(&lift_delta_qp(&lin, &p, &w).unwrap(), &[0.5, 1.0], 1e-12));
        assert!(matches!(lift_delta(&lin, &p, &[0.0, 1.0]), Err(Error::OutsideCone { .. })));
        // outside the cone the QP still answers, and covers the workload
        let n = lift_delta_qp(&lin, &p, &[0.0, 1.0]).unwrap();
        let w = flow_workload(&lin, &p, &n);
        assert!(w[0] >= -1e-12 && w[1] >= 1.0 - 1e-12);
    }

    fn linear_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=5).prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..2.0, k),
                prop::collection::vec(0.05f64..1.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn scale_invariance(n in prop::collection::vec(0.0f64..10.0, 3), c in 1e-3f64..1e3) {
            let net = Network::new(vec![vec![1, 0, 1], vec![0, 1, 1]], vec![1.0, 2.0]).unwrap();
            prop_assume!(n.iter().sum::<f64>() > 0.0);
            let a = allocate(&net, &n).unwrap();
            let scaled: Vec<f64> = n.iter().map(|v| v * c).collect();
            let b = allocate(&net, &scaled).unwrap();
            prop_assert!(close(&a.lambda, &b.lambda, 1e-9));
        }

        #[test]
        fn positivity_and_feasibility(n in prop::collection::vec(0.0f64..10.0, 3)) {
            let net = Network::new(vec![vec![1, 0, 1], vec![0, 1, 1]], vec![1.0, 2.0]).unwrap();
            prop_assume!(n.iter().sum::<f64>() > 0.0);
            let a = allocate(&net, &n).unwrap();
            for i in 0..3 {
                prop_assert_eq!(a.lambda[i] > 0.0, n[i] > 0.0);
            }
            prop_assert!(a.feasibility_violation(&net) <= 1e-9);
            prop_assert!(a.slackness_residual(&net) <= 1e-8);
        }

        #[test]
        fn lift_inverts_manifold((gaps, rho) in linear_instance(), q in prop::collection::vec(0.0f64..3.0, 5)) {
            let caps: Vec<f64> = (0..gaps.len()).map(|j| gaps[j..].iter().sum::<f64>()).collect();
            let net = linear_network(&caps).unwrap();
            let p = TrafficParams::from_loads(rho.clone(), 1.0).unwrap();
            let q = &q[..caps.len()];
            let delays = net.route_sum(q);
            let n: Vec<f64> = delays.iter().zip(&rho).map(|(d, r)| d * r).collect();
            let w = flow_workload(&net, &p, &n);
            let back = lift_delta(&net, &p, &w).unwrap();
            let scale = n.iter().fold(1.0f64, |a, v| a.max(*v));
            prop_assert!(close(&back, &n, 1e-8 * scale));
            let qp = lift_delta_qp(&net, &p, &w).unwrap();
            prop_assert!(close(&qp, &n, 1e-8 * scale));
        }

        #[test]
        fn linear_cone_check_agrees((_gaps, rho) in linear_instance(), w in prop::collection::vec(-1.0f64..3.0, 5)) {
            let k = rho.len();
            let caps: Vec<f64> = (0..k).map(|j| (k - j) as f64).collect();
            let net = linear_network(&caps).unwrap();
            let p = TrafficParams::from_loads(rho.clone(), 1.0).unwrap();
            let s = covariance_gamma(&net, &p, BrownianModel::Motorway).unwrap();
            let w = &w[..k];
            let m = cone_contains(&s, w);
            let margin = m.q.iter().copied().fold(f64::INFINITY, f64::min).abs();
            prop_assume!(margin > 1e-6);
            prop_assert_eq!(m.contained, linear_cone_check(&rho, w));
        }
    }
}
