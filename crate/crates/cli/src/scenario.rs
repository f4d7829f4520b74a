//! Scenario files: a single JSON document describing the network, traffic,
//! policy and simulation settings. Parsing and serialising round-trip exactly.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fairway_core::motorway::{Mode, Policy};
use fairway_core::network::{linear_network, parallel_roads_virtual, tree6, tree_network};
use fairway_core::queue::WorkDistribution;
use fairway_core::route_choice::ChoiceModel;
use fairway_core::{Error, Network, TrafficParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: NetworkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    /// Policies run side by side by `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<Policy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Stationary model used by `stationary`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<StationaryModel>,
    /// Connection counts (`allocate`) or the initial fluid state (`fluid`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<QueueSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<ChoiceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Linear,
    Tree6,
    Parallel4,
    /// General in-tree from `parents`.
    Tree,
}

/// Either an inline incidence matrix `A` or a named preset; `C` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<Option<usize>>>,
}

/// Loads `rho` (unit mean work) or rates `nu`, `mu`; `sigma2` defaults to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryModel {
    /// Direct Brownian motorway model.
    Motorway,
    /// Exponential approximation for the connection-level model.
    Flow,
    /// Virtual-resource law of the parallel-roads model.
    RouteChoice,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Horizon in time units.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Horizon in events (CTMC and event-driven queues).
    #[serde(rename = "T_events", default, skip_serializing_if = "Option::is_none")]
    pub t_events: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u64>,
    /// Trajectory spacing in time units (motorway); 0 disables the trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_dt: Option<f64>,
    /// Spacing of line-size samples and the total-work series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Trajectory spacing in events or steps (CTMC, queues, fluid).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueKind {
    Mm1,
    Ps,
    Rbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    pub kind: QueueKind,
    pub rho: f64,
    /// Service rate (M/M/1); defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Work distribution (processor sharing); defaults to Exp(1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work: Option<WorkDistribution>,
    /// Residual-work snapshot spacing (processor sharing); defaults to 10.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
    /// Initial workload (RBM); defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// A scenario problem detected before any computation (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

impl Scenario {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("scenario {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("malformed scenario: {e}")))
    }

    pub fn sim(&self) -> SimSpec {
        self.sim.clone().unwrap_or_default()
    }

    pub fn sim_mut(&mut self) -> &mut SimSpec {
        self.sim.get_or_insert_with(SimSpec::default)
    }

    pub fn network(&self) -> Result<Network, Error> {
        let spec = &self.network;
        match (spec.preset, &spec.a) {
            (Some(_), Some(_)) => Err(Error::InvalidParameter("give either a preset or an inline A, not both".into())),
            (None, Some(a)) => Network::from_f64_rows(a, spec.c.clone()),
            (None, None) => Err(Error::InvalidParameter("network needs a preset or an inline A".into())),
            (Some(Preset::Linear), None) => linear_network(&spec.c),
            (Some(Preset::Tree6), None) => tree6(&spec.c),
            (Some(Preset::Parallel4), None) => Ok(parallel_roads_virtual(&spec.c)?.0),
            (Some(Preset::Tree), None) => match &spec.parents {
                Some(p) => tree_network(p, &spec.c),
                None => Err(Error::InvalidParameter("the tree preset needs a parents array".into())),
            },
        }
    }

    pub fn traffic(&self) -> Result<TrafficParams, Error> {
        let t = self
            .traffic
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("scenario needs a traffic block".into()))?;
        let sigma2 = t.sigma2.unwrap_or(1.0);
        match (&t.rho, &t.nu, &t.mu) {
            (Some(rho), None, None) => TrafficParams::from_loads(rho.clone(), sigma2),
            (None, Some(nu), Some(mu)) => TrafficParams::from_rates(nu.clone(), mu.clone(), sigma2),
            (None, Some(nu), None) => TrafficParams::from_rates(nu.clone(), vec![1.0; nu.len()], sigma2),
            _ => Err(Error::InvalidParameter("traffic needs either rho or nu (with optional mu)".into())),
        }
    }

    /// Network and traffic, checked against each other.
    pub fn resolve(&self) -> Result<(Network, TrafficParams), Error> {
        let net = self.network()?;
        let params = self.traffic()?;
        if params.routes() != net.routes() {
            return Err(Error::DimensionMismatch(format!(
                "traffic has {} routes, network has {}",
                params.routes(),
                net.routes()
            )));
        }
        Ok((net, params))
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.sim
            .as_ref()
            .and_then(|s| s.seed)
            .ok_or_else(|| invalid("simulation commands need a seed (sim.seed or --seed)"))
    }

    pub fn horizon(&self) -> anyhow::Result<f64> {
        self.sim.as_ref().and_then(|s| s.t).ok_or_else(|| invalid("scenario needs sim.T"))
    }

    pub fn events(&self) -> anyhow::Result<usize> {
        self.sim.as_ref().and_then(|s| s.t_events).ok_or_else(|| invalid("scenario needs sim.T_events"))
    }

    /// Default step `10⁻³ / max_j C_j`.
    pub fn step(&self) -> f64 {
        let cmax = self.network.c.iter().copied().fold(0.0, f64::max);
        self.sim.as_ref().and_then(|s| s.h).unwrap_or(1e-3 / cmax.max(f64::MIN_POSITIVE))
    }

    pub fn replications(&self) -> u64 {
        self.sim.as_ref().and_then(|s| s.replications).unwrap_or(1).max(1)
    }

    pub fn burn_in(&self) -> f64 {
        self.sim.as_ref().and_then(|s| s.burn_in).unwrap_or(0.2)
    }
}
