//! Resource/route topology, traffic parameters and load checks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::rank_exact;

/// A validated resource/route network: `J` resources with capacities `C`
/// and `I` routes, `A[j][i] = 1` when route `i` uses resource `j`.
///
/// The incidence matrix always has full row rank, every route uses at least
/// one resource and every capacity is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    incidence: Vec<Vec<u8>>,
    capacity: Vec<f64>,
    route_resources: Vec<Vec<usize>>,
    resource_routes: Vec<Vec<usize>>,
}

impl Network {
    /// Validates an incidence matrix given as rows of 0/1 entries.
    pub fn new(incidence: Vec<Vec<u8>>, capacity: Vec<f64>) -> Result<Self> {
        let j_count = incidence.len();
        if j_count == 0 {
            return Err(Error::DimensionMismatch("network needs at least one resource".into()));
        }
        let i_count = incidence[0].len();
        if i_count == 0 {
            return Err(Error::DimensionMismatch("network needs at least one route".into()));
        }
        if let Some(r) = incidence.iter().position(|row| row.len() != i_count) {
            return Err(Error::DimensionMismatch(format!(
                "row {r} has {} entries, expected {i_count}",
                incidence[r].len()
            )));
        }
        if capacity.len() != j_count {
            return Err(Error::DimensionMismatch(format!(
                "{} capacities for {j_count} resources",
                capacity.len()
            )));
        }
        for (row, entries) in incidence.iter().enumerate() {
            if let Some(col) = entries.iter().position(|&v| v > 1) {
                return Err(Error::InvalidEntry { row, col, value: entries[col] as f64 });
            }
        }
        if let Some(i) = (0..i_count).find(|&i| incidence.iter().all(|row| row[i] == 0)) {
            return Err(Error::EmptyRoute(i));
        }
        if let Some(index) = capacity.iter().position(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::NonpositiveCapacity { index, value: capacity[index] });
        }
        let as_int: Vec<Vec<i64>> = incidence
            .iter()
            .map(|row| row.iter().map(|&v| v as i64).collect())
            .collect();
        let rank = rank_exact(&as_int);
        if rank < j_count {
            return Err(Error::RankDeficient { rank, rows: j_count });
        }
        let route_resources = (0..i_count)
            .map(|i| (0..j_count).filter(|&j| incidence[j][i] == 1).collect())
            .collect();
        let resource_routes = incidence
            .iter()
            .map(|row| (0..i_count).filter(|&i| row[i] == 1).collect())
            .collect();
        Ok(Self { incidence, capacity, route_resources, resource_routes })
    }

    /// Accepts floating-point entries (as found in JSON) that must be exactly 0 or 1.
    pub fn from_f64_rows(rows: &[Vec<f64>], capacity: Vec<f64>) -> Result<Self> {
        let mut incidence = Vec::with_capacity(rows.len());
        for (row, entries) in rows.iter().enumerate() {
            let mut out = Vec::with_capacity(entries.len());
            for (col, &v) in entries.iter().enumerate() {
                if v == 0.0 {
                    out.push(0);
                } else if v == 1.0 {
                    out.push(1);
                } else {
                    return Err(Error::InvalidEntry { row, col, value: v });
                }
            }
            incidence.push(out);
        }
        Self::new(incidence, capacity)
    }

    /// Number of resources `J`.
    pub fn resources(&self) -> usize {
        self.incidence.len()
    }

    /// Number of routes `I`.
    pub fn routes(&self) -> usize {
        self.incidence[0].len()
    }

    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }

    pub fn incidence(&self) -> &[Vec<u8>] {
        &self.incidence
    }

    pub fn uses(&self, resource: usize, route: usize) -> bool {
        self.incidence[resource][route] == 1
    }

    /// Resources used by `route`.
    pub fn path(&self, route: usize) -> &[usize] {
        &self.route_resources[route]
    }

    /// Routes through `resource`.
    pub fn users(&self, resource: usize) -> &[usize] {
        &self.resource_routes[resource]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.resources(), self.routes(), |j, i| self.incidence[j][i] as f64)
    }

    /// `A x` for a route vector `x`.
    pub fn load(&self, x: &[f64]) -> Vec<f64> {
        self.resource_routes
            .iter()
            .map(|users| users.iter().map(|&i| x[i]).sum())
            .collect()
    }

    /// `Aᵀ y` for a resource vector `y`.
    pub fn route_sum(&self, y: &[f64]) -> Vec<f64> {
        self.route_resources
            .iter()
            .map(|path| path.iter().map(|&j| y[j]).sum())
            .collect()
    }

    /// Whether every resource serves a route that uses only that resource.
    ///
    /// Recorded for reference; no computation in this crate depends on it.
    pub fn local_traffic_condition(&self) -> bool {
        (0..self.resources()).all(|j| self.users(j).iter().any(|&i| self.path(i) == [j]))
    }

    /// Whether `A` has the upper-triangular all-ones pattern of a linear road.
    pub fn is_linear(&self) -> bool {
        let j = self.resources();
        self.routes() == j
            && (0..j).all(|r| (0..j).all(|c| self.uses(r, c) == (c >= r)))
    }

    /// Copy of the network with resource `resource` removed (treated as
    /// having unlimited capacity).
    pub fn without_resource(&self, resource: usize) -> Result<Self> {
        if resource >= self.resources() || self.resources() == 1 {
            return Err(Error::InvalidParameter(format!(
                "cannot remove resource {resource} from a network with {} resources",
                self.resources()
            )));
        }
        let incidence = self
            .incidence
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != resource)
            .map(|(_, r)| r.clone())
            .collect();
        let capacity = self
            .capacity
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != resource)
            .map(|(_, &c)| c)
            .collect();
        Self::new(incidence, capacity)
    }
}

/// Linear road: resource `j` is used by every route entering at or upstream
/// of entry point `j`, i.e. `A[j][i] = 1` iff `i ≥ j` (0-based).
pub fn linear_network(capacity: &[f64]) -> Result<Network> {
    if capacity.is_empty() {
        return Err(Error::DimensionMismatch("linear network needs J ≥ 1".into()));
    }
    if let Some(index) = capacity.iter().position(|&c| !(c > 0.0)) {
        return Err(Error::NonpositiveCapacity { index, value: capacity[index] });
    }
    if let Some(k) = (1..capacity.len()).find(|&k| capacity[k] >= capacity[k - 1]) {
        return Err(Error::CapacityNotDecreasing { index: k, value: capacity[k] });
    }
    let j = capacity.len();
    let incidence = (0..j)
        .map(|r| (0..j).map(|c| u8::from(c >= r)).collect())
        .collect();
    Network::new(incidence, capacity.to_vec())
}

/// In-tree network from a parent map. Node `k` is both a road section
/// (resource) and an entry line (route); traffic entering at `k` uses every
/// section on the path from `k` to the root.
pub fn tree_network(parents: &[Option<usize>], capacity: &[f64]) -> Result<Network> {
    let k = parents.len();
    if capacity.len() != k {
        return Err(Error::DimensionMismatch(format!("{} capacities for {k} nodes", capacity.len())));
    }
    if parents.iter().filter(|p| p.is_none()).count() != 1 {
        return Err(Error::InvalidParameter("a tree needs exactly one root".into()));
    }
    if let Some(bad) = parents.iter().flatten().find(|&&p| p >= k) {
        return Err(Error::InvalidParameter(format!("parent index {bad} out of range")));
    }
    let mut incidence = vec![vec![0u8; k]; k];
    for entry in 0..k {
        let mut node = entry;
        let mut steps = 0;
        loop {
            incidence[node][entry] = 1;
            match parents[node] {
                None => break,
                Some(p) => node = p,
            }
            steps += 1;
            if steps > k {
                return Err(Error::CycleDetected(entry));
            }
        }
    }
    Network::new(incidence, capacity.to_vec())
}

/// Parent map of the six-section tree: sections 2 and 4 feed section 1,
/// section 3 feeds 2, sections 5 and 6 feed 4 (0-based in the array).
pub const TREE6_PARENTS: [Option<usize>; 6] = [None, Some(0), Some(1), Some(0), Some(3), Some(3)];

/// The six-section tree preset. Capacities must satisfy
/// `C3 < C2`, `C5 + C6 < C4` and `C2 + C4 < C1` (1-based).
pub fn tree6(capacity: &[f64]) -> Result<Network> {
    if capacity.len() != 6 {
        return Err(Error::DimensionMismatch("tree6 needs 6 capacities".into()));
    }
    let c = capacity;
    if !(c[2] < c[1] && c[4] + c[5] < c[3] && c[1] + c[3] < c[0]) {
        return Err(Error::CapacityOrdering("tree6 needs C3 < C2, C5 + C6 < C4, C2 + C4 < C1".into()));
    }
    tree_network(&TREE6_PARENTS, capacity)
}

/// Three parallel roads feeding a fourth. Returns the physical network and
/// the virtual network whose resources are the cumulative constraints
/// `C1`, `C1 + C2`, `C1 + C2 + C3`, `C4`.
pub fn parallel_roads_virtual(capacity: &[f64]) -> Result<(Network, Network)> {
    if capacity.len() != 4 {
        return Err(Error::DimensionMismatch("parallel roads need 4 capacities".into()));
    }
    let c = capacity;
    if c[0] + c[1] + c[2] >= c[3] {
        return Err(Error::CapacityOrdering(format!(
            "C1 + C2 + C3 = {} must be below C4 = {}",
            c[0] + c[1] + c[2],
            c[3]
        )));
    }
    let physical = Network::new(
        vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![1, 1, 1, 1]],
        c.to_vec(),
    )?;
    let virtual_net = Network::new(
        vec![vec![1, 0, 0, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 0], vec![1, 1, 1, 1]],
        vec![c[0], c[0] + c[1], c[0] + c[1] + c[2], c[3]],
    )?;
    Ok((physical, virtual_net))
}

/// Arrival rates `ν`, inverse mean work `μ`, loads `ρ = ν/μ` and the inflow
/// variance factor `σ²` of the Brownian motorway model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    nu: Vec<f64>,
    mu: Vec<f64>,
    rho: Vec<f64>,
    sigma2: f64,
}

impl TrafficParams {
    pub fn from_rates(nu: Vec<f64>, mu: Vec<f64>, sigma2: f64) -> Result<Self> {
        if nu.len() != mu.len() {
            return Err(Error::DimensionMismatch(format!("{} arrival rates, {} work rates", nu.len(), mu.len())));
        }
        if nu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("arrival rates must be finite and nonnegative".into()));
        }
        if mu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("work rates must be finite and positive".into()));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidParameter("sigma2 must be finite and positive".into()));
        }
        let rho = nu.iter().zip(&mu).map(|(n, m)| n / m).collect();
        Ok(Self { nu, mu, rho, sigma2 })
    }

    /// Loads given directly; work is measured in units of mean job size (`μ = 1`).
    pub fn from_loads(rho: Vec<f64>, sigma2: f64) -> Result<Self> {
        let mu = vec![1.0; rho.len()];
        Self::from_rates(rho, mu, sigma2)
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn routes(&self) -> usize {
        self.rho.len()
    }

    pub(crate) fn check_against(&self, net: &Network) -> Result<()> {
        if self.routes() != net.routes() {
            return Err(Error::DimensionMismatch(format!(
                "traffic has {} routes, network has {}",
                self.routes(),
                net.routes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `C − Aρ`.
    pub margins: Vec<f64>,
    pub stable: bool,
    /// `Σ_j ρ_j / C_j`, reported for linear networks.
    pub harmonic_load: Option<f64>,
}

pub fn stability_margin(net: &Network, params: &TrafficParams) -> Result<StabilityReport> {
    params.check_against(net)?;
    let load = net.load(params.rho());
    let margins: Vec<f64> = net.capacity().iter().zip(&load).map(|(c, l)| c - l).collect();
    let stable = margins.iter().all(|&m| m > 0.0);
    let harmonic_load = net.is_linear().then(|| {
        params
            .rho()
            .iter()
            .zip(net.capacity())
            .map(|(r, c)| r / c)
            .sum()
    });
    Ok(StabilityReport { margins, stable, harmonic_load })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_examples() {
        let n = Network::new(vec![vec![1]], vec![1.0]).unwrap();
        assert_eq!((n.resources(), n.routes()), (1, 1));
        assert_eq!(
            Network::new(vec![vec![1, 1], vec![1, 1]], vec![1.0, 1.0]),
            Err(Error::RankDeficient { rank: 1, rows: 2 })
        );
        let lin = Network::new(vec![vec![1, 1], vec![0, 1]], vec![2.0, 1.0]).unwrap();
        assert!(lin.is_linear());
    }

    #[test]
    fn validate_errors() {
        assert_eq!(Network::new(vec![vec![1, 0]], vec![1.0]), Err(Error::EmptyRoute(1)));
        assert!(matches!(
            Network::new(vec![vec![1]], vec![0.0]),
            Err(Error::NonpositiveCapacity { index: 0, .. })
        ));
        assert!(matches!(
            Network::from_f64_rows(&[vec![0.5]], vec![1.0]),
            Err(Error::InvalidEntry { .. })
        ));
        assert!(matches!(
            Network::new(vec![vec![1], vec![1, 0]], vec![1.0, 1.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stability_examples() {
        let single = Network::new(vec![vec![1]], vec![1.0]).unwrap();
        let r = stability_margin(&single, &TrafficParams::from_loads(vec![0.8], 1.0).unwrap()).unwrap();
        assert!((r.margins[0] - 0.2).abs() < 1e-15 && r.stable);

        let lin = linear_network(&[2.0, 1.0]).unwrap();
        let r = stability_margin(&lin, &TrafficParams::from_loads(vec![0.5, 0.5], 1.0).unwrap()).unwrap();
        assert_eq!(r.margins, vec![1.0, 0.5]);

        let lin = linear_network(&[1.0, 0.6]).unwrap();
        let r = stability_margin(&lin, &TrafficParams::from_loads(vec![0.55, 0.3], 1.0).unwrap()).unwrap();
        assert!((r.margins[0] - 0.15).abs() < 1e-12 && (r.margins[1] - 0.3).abs() < 1e-12);
        assert!(r.stable);
        assert!((r.harmonic_load.unwrap() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn linear_network_examples() {
        assert_eq!(linear_network(&[1.0]).unwrap().incidence(), &[vec![1]]);
        assert_eq!(linear_network(&[2.0, 1.0]).unwrap().incidence(), &[vec![1, 1], vec![0, 1]]);
        let four = linear_network(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(four.uses(r, c), c >= r);
            }
        }
        assert!(matches!(linear_network(&[1.0, 2.0]), Err(Error::CapacityNotDecreasing { index: 1, .. })));
    }

    #[test]
    fn tree_examples() {
        let c = [10.0, 4.0, 3.0, 5.0, 2.0, 2.0];
        let t = tree6(&c).unwrap();
        let expected: Vec<Vec<u8>> = vec![
            vec![1, 1, 1, 1, 1, 1],
            vec![0, 1, 1, 0, 0, 0],
            vec![0, 0, 1, 0, 0, 0],
            vec![0, 0, 0, 1, 1, 1],
            vec![0, 0, 0, 0, 1, 0],
            vec![0, 0, 0, 0, 0, 1],
        ];
        assert_eq!(t.incidence(), expected.as_slice());
        assert!(!t.local_traffic_condition());

        assert_eq!(tree_network(&[None], &[1.0]).unwrap().incidence(), &[vec![1]]);
        let two_leaf = tree_network(&[None, Some(0), Some(0)], &[3.0, 1.0, 1.0]).unwrap();
        assert_eq!(two_leaf.incidence(), &[vec![1, 1, 1], vec![0, 1, 0], vec![0, 0, 1]]);

        assert_eq!(
            tree_network(&[None, Some(2), Some(1)], &[1.0, 1.0, 1.0]),
            Err(Error::CycleDetected(1))
        );
        assert!(matches!(tree6(&[1.0; 6]), Err(Error::CapacityOrdering(_))));
    }

    #[test]
    fn parallel_roads_examples() {
        let (phys, virt) = parallel_roads_virtual(&[2.0, 1.0, 1.0, 6.0]).unwrap();
        assert_eq!(virt.capacity(), &[2.0, 3.0, 4.0, 6.0]);
        assert_eq!(virt.incidence()[3], vec![1, 1, 1, 1]);
        assert_eq!(phys.incidence()[3], vec![1, 1, 1, 1]);
        assert!(matches!(
            parallel_roads_virtual(&[1.0, 1.0, 1.0, 2.0]),
            Err(Error::CapacityOrdering(_))
        ));
    }

    #[test]
    fn virtual_matrix_inverse_is_signed_bidiagonal() {
        let (_, virt) = parallel_roads_virtual(&[2.0, 1.0, 1.0, 6.0]).unwrap();
        let a = virt.matrix();
        for j in 0..4 {
            assert_eq!(a[(j, j)], 1.0);
        }
        let inv = a.try_inverse().unwrap();
        for v in inv.iter() {
            assert!([-1.0, 0.0, 1.0].contains(&v.round()) && (v - v.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_linear_matches_printed_matrix() {
        let lin = linear_network(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        let col = lin.without_resource(2).unwrap();
        assert_eq!(col.incidence(), &[vec![1, 1, 1, 1], vec![0, 1, 1, 1], vec![0, 0, 0, 1]]);
    }

    proptest! {
        #[test]
        fn decreasing_capacities_always_validate(mut caps in proptest::collection::vec(0.01f64..100.0, 1..8)) {
            caps.sort_by(|a, b| b.total_cmp(a));
            caps.dedup();
            prop_assert!(linear_network(&caps).is_ok());
        }

        #[test]
        fn margins_plus_load_recover_capacity(rho in proptest::collection::vec(0.0f64..3.0, 3)) {
            let net = linear_network(&[6.0, 4.0, 2.0]).unwrap();
            let params = TrafficParams::from_loads(rho.clone(), 1.0).unwrap();
            let report = stability_margin(&net, &params).unwrap();
            let load = net.load(&rho);
            for j in 0..3 {
                prop_assert!((report.margins[j] + load[j] - net.capacity()[j]).abs() < 1e-12);
            }
            prop_assert_eq!(report.stable, report.margins.iter().cloned().fold(f64::INFINITY, f64::min) > 0.0);
        }
    }
}
