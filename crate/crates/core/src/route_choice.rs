//! Parallel roads with route choice: three lines feeding separate roads
//! (capacities `C₁, C₂, C₃`) that merge into a section of capacity `C₄`
//! shared with a fourth line. Source 1 must use line 1, sources 2 and 3 may
//! also use any lower-numbered line, source 4 uses line 4. Arrivals join the
//! admissible line with the smallest delay estimate `q_i + q₄`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motorway::{run_engine, MotorwayOutput, MotorwayRun, Policy, Routing};
use crate::network::{parallel_roads_virtual, Network};

/// Admissible lines per source; ties go to the lowest line index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceModel {
    pub choice_sets: Vec<Vec<usize>>,
}

impl Default for ChoiceModel {
    fn default() -> Self {
        Self { choice_sets: vec![vec![0], vec![0, 1], vec![0, 1, 2], vec![3]] }
    }
}

impl ChoiceModel {
    pub fn validate(&self, lines: usize) -> Result<()> {
        for (s, set) in self.choice_sets.iter().enumerate() {
            if set.is_empty() || set.iter().any(|&i| i >= lines) {
                return Err(Error::InvalidParameter(format!("choice set of source {s} is empty or out of range")));
            }
        }
        Ok(())
    }
}

/// Line in `choice_set` with the smallest delay estimate, lowest index on ties.
pub fn choose_line(choice_set: &[usize], d: &[f64]) -> usize {
    let mut best = choice_set[0];
    for &i in &choice_set[1..] {
        if d[i] < d[best] || (d[i] == d[best] && i < best) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnlargedStability {
    /// `C̄ − Āρ` for the four virtual resources.
    pub virtual_margins: Vec<f64>,
    /// `C − Aρ` for the physical resources, loads taken at their own lines.
    pub physical_margins: Vec<f64>,
    pub stable: bool,
    /// Whether each source could be carried on its own line.
    pub physically_stable: bool,
}

fn check_four(rho: &[f64], capacity: &[f64]) -> Result<()> {
    if rho.len() != 4 || capacity.len() != 4 {
        return Err(Error::DimensionMismatch("the parallel-roads model has four lines".into()));
    }
    Ok(())
}

/// The enlarged stability region `Σ_{i≤j} ρ_i < Σ_{i≤j} C_i` (j = 1, 2, 3),
/// `Σ_i ρ_i < C₄`.
pub fn enlarged_stability(rho: &[f64], capacity: &[f64]) -> Result<EnlargedStability> {
    check_four(rho, capacity)?;
    let (physical, virt) = parallel_roads_virtual(capacity)?;
    let margins = |net: &Network| -> Vec<f64> {
        net.load(rho).iter().zip(net.capacity()).map(|(l, c)| c - l).collect()
    };
    let virtual_margins = margins(&virt);
    let physical_margins = margins(&physical);
    Ok(EnlargedStability {
        stable: virtual_margins.iter().all(|&m| m > 0.0),
        physically_stable: physical_margins.iter().all(|&m| m > 0.0),
        virtual_margins,
        physical_margins,
    })
}

/// Stationary law over the virtual resources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirtualLaw {
    /// `ζ = (2/σ²)(C̄ − Āρ)`.
    pub zeta: Vec<f64>,
    /// `E D̆_i = Σ_{j≥i} 1/ζ_j`.
    pub mean_delay: Vec<f64>,
    pub var_delay: Vec<f64>,
    /// `E M̆_i = ρ_i E D̆_i`.
    pub mean_line: Vec<f64>,
}

pub fn zeta_params(rho: &[f64], capacity: &[f64], sigma2: f64) -> Result<VirtualLaw> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter("sigma2 must be positive".into()));
    }
    let report = enlarged_stability(rho, capacity)?;
    if !report.stable {
        return Err(Error::UnstableLoad(format!("virtual margins {:?}", report.virtual_margins)));
    }
    let zeta: Vec<f64> = report.virtual_margins.iter().map(|m| 2.0 / sigma2 * m).collect();
    let mean_delay: Vec<f64> = (0..4).map(|i| zeta[i..].iter().map(|z| 1.0 / z).sum()).collect();
    let var_delay = (0..4).map(|i| zeta[i..].iter().map(|z| 1.0 / (z * z)).sum()).collect();
    let mean_line = (0..4).map(|i| rho[i] * mean_delay[i]).collect();
    Ok(VirtualLaw { zeta, mean_delay, var_delay, mean_line })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteChoiceOutput {
    /// The underlying run on the physical network (lines indexed as roads).
    pub run: MotorwayOutput,
    /// Diagnostic virtual prices `q̄ = (Ā[ρ]Ā′)⁻¹ Ā E m` from time-average line sizes.
    pub virtual_duals: Vec<f64>,
    /// Empirical nominal delays `Ā′q̄` (equal to `E m_i / ρ_i`).
    pub virtual_delays: Vec<f64>,
    /// Time-average allocation delay estimates `q_i + q₄`.
    pub pf_delays: Vec<f64>,
}

/// Simulates the parallel-roads model with proportionally fair metering on
/// the physical network and delay-greedy line choice. `rho` are the source loads.
pub fn simulate_route_choice(
    capacity: &[f64],
    rho: &[f64],
    sigma2: f64,
    choices: &ChoiceModel,
    run: &MotorwayRun,
    record_arrivals: bool,
) -> Result<RouteChoiceOutput> {
    check_four(rho, capacity)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter("sigma2 must be positive".into()));
    }
    choices.validate(4)?;
    if choices.choice_sets.len() != rho.len() {
        return Err(Error::DimensionMismatch("one choice set per source".into()));
    }
    let (physical, virt) = parallel_roads_virtual(capacity)?;
    let routing = Routing::Choice(choices.choice_sets.clone());
    let out = run_engine(&physical, Policy::ProportionalFair, rho, sigma2, &routing, run, record_arrivals)?;
    let map = crate::motorway::NominalMap::new(&virt, rho)?;
    Ok(RouteChoiceOutput {
        virtual_duals: map.duals(&out.mean_m),
        virtual_delays: map.delays(&out.mean_m),
        pf_delays: out.mean_d.clone(),
        run: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enlarged_examples() {
        let r = enlarged_stability(&[1.0, 1.5, 0.5, 1.0], &[2.0, 1.0, 1.0, 6.0]).unwrap();
        assert_eq!(r.virtual_margins, vec![1.0, 0.5, 1.0, 2.0]);
        assert!(r.stable && !r.physically_stable);
        assert!(enlarged_stability(&[0.0; 4], &[2.0, 1.0, 1.0, 6.0]).unwrap().stable);
        assert!(!enlarged_stability(&[3.0, 0.0, 0.0, 0.0], &[2.0, 1.0, 1.0, 6.0]).unwrap().stable);
    }

    #[test]
    fn zeta_examples() {
        let law = zeta_params(&[1.0, 1.5, 0.5, 1.0], &[2.0, 1.0, 1.0, 6.0], 1.0).unwrap();
        assert_eq!(law.zeta, vec![2.0, 1.0, 2.0, 4.0]);
        assert!((law.mean_delay[2] - 0.75).abs() < 1e-15);
        assert!(law.mean_delay[0] >= law.mean_delay[1] && law.mean_delay[1] >= law.mean_delay[2]);
        assert!(matches!(
            zeta_params(&[3.0, 0.0, 0.0, 0.0], &[2.0, 1.0, 1.0, 6.0], 1.0),
            Err(Error::UnstableLoad(_))
        ));
    }

    #[test]
    fn choice_examples() {
        assert_eq!(choose_line(&[0, 1], &[3.0, 2.0, 1.0, 0.0]), 1);
        assert_eq!(choose_line(&[0, 1], &[2.0, 2.0, 1.0, 0.0]), 0);
        assert_eq!(choose_line(&[0, 1, 2], &[1.0, 2.0, 3.0, 0.0]), 0);
        // invariant under positive scaling
        assert_eq!(choose_line(&[0, 1, 2], &[30.0, 20.0, 10.0, 0.0]), 2);
    }
}
