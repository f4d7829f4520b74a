//! Proportionally fair ramp metering and flow-level bandwidth sharing.
//!
//! The crate is organised around a resource/route incidence [`Network`]:
//!
//! * [`pf`] solves the proportionally fair allocation and exposes the
//!   workload-cone geometry (lift, Lyapunov function, covariance).
//! * [`queue`] is a single-server laboratory (M/M/1, M/G/1 processor sharing,
//!   one-dimensional reflected Brownian motion).
//! * [`flow`] simulates the connection-level Markov chain, its fluid model and
//!   the exponential stationary approximation.
//! * [`motorway`] simulates metered motorways under proportionally fair,
//!   upstream-priority and downstream-priority policies.
//! * [`route_choice`] covers parallel roads where some traffic may pick its
//!   entry line.
//!
//! All simulations are seeded; see [`rng`] for the stream-splitting rule.

pub mod error;
pub mod flow;
pub mod linalg;
pub mod motorway;
pub mod network;
pub mod pf;
pub mod queue;
pub mod rng;
pub mod route_choice;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use network::{Network, StabilityReport, TrafficParams};
pub use pf::{Allocation, BrownianModel, BrownianSpec, PfSolver};
pub use trajectory::Trajectory;
