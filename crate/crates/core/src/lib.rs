//! Joint 3D position and 1D orientation estimation of a reconfigurable
//! intelligent surface (RIS) from OFDM transmissions observed by several
//! synchronized single-antenna receivers.
//!
//! The crate is split the same way the processing chain is:
//!
//! * [`geometry`] maps an RIS state to directions, spatial frequencies and delays.
//! * [`signal`] synthesizes the per-receiver observations.
//! * [`fisher`] evaluates Fisher information and the TEB/WEB/PEB/OEB bounds.
//! * [`estimator`] is the multi-stage estimator with its final ML refinement.
//! * [`harness`] runs Monte Carlo sweeps and hosts the `risloc` CLI.

pub mod error;
pub mod estimator;
pub mod fisher;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod units;

pub use error::{Error, Result};
pub use geometry::{RisState, Scenario, SpatialFreqs, Vec3};
