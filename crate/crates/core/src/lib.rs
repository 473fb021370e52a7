//! Dynamical flow networks with phase-constrained service allocation.
//!
//! The crate covers the network model and its file formats, reachability and
//! aggregate demand, the LP-based stability region, the GPA and MaxPressure
//! controllers, a projected Euler integrator for the closed loop, and the
//! Lyapunov diagnostics used to check convergence.

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod format;
pub mod graph;
pub mod linalg;
pub mod lp;
pub mod lyapunov;
pub mod network;
pub mod random;
pub mod stability;

pub use controllers::{ControllerConfig, ControllerKind};
pub use dynamics::{simulate, SimulationOptions, Trajectory};
pub use error::{Error, Result};
pub use network::{
    ControlAllocation, DemandPiece, DemandProfile, NetworkBuilder, NetworkSpec, RoutingMatrix,
};
pub use stability::{StabilityCertificate, Verdict};
