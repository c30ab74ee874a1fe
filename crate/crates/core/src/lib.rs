//! Monte Carlo laboratory for finitary random interlacements on Z^d, d ≥ 4.

pub mod coarse_grain;
pub mod error;
pub mod exploration_lower;
pub mod fri;
pub mod harness;
pub mod length_law;
pub mod lattice_core;
pub mod percolation;
pub mod potential;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice_core::{Dim, LatticeBox, Point, PointMap, PointSet, Trajectory};
pub use length_law::LengthDistribution;
pub use rng::RngStream;
