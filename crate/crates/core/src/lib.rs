//! Weighted Wasserstein transport for Fokker-Planck equations with variable
//! mobility, together with the minimizing-movement scheme built on it and a
//! finite-volume reference solver.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below are what the CLI and the tests use.

pub mod embedding;
pub mod error;
pub mod fpref;
pub mod grid;
pub mod io;
pub mod jko;
pub mod linalg;
pub mod maps;
pub mod metric;
pub mod relaxation;
pub mod scalar;

pub use embedding::{Anchor, EmbeddingMap, MobilityFamily, MobilityField};
pub use error::{Error, Result};
pub use fpref::{FvOperator, FvTrajectory};
pub use grid::{Axis, Density, Grid};
pub use jko::{EnergySpec, JkoConfig, JkoTrajectory, StepReport};
pub use maps::TransportMap;
pub use metric::{Coupling, CostMatrix, DistanceReport, Method};
pub use relaxation::{DampedState, QuadraticSystem};
pub use scalar::Real;

pub type Grid64 = Grid<f64>;
pub type Density64 = Density<f64>;
pub type MobilityField64 = MobilityField<f64>;
pub type EmbeddingMap64 = EmbeddingMap<f64>;
pub type Coupling64 = Coupling<f64>;
pub type CostMatrix64 = CostMatrix<f64>;
pub type TransportMap64 = TransportMap<f64>;
pub type EnergySpec64 = EnergySpec<f64>;
pub type JkoConfig64 = JkoConfig<f64>;
pub type JkoTrajectory64 = JkoTrajectory<f64>;
pub type FvOperator64 = FvOperator<f64>;
pub type FvTrajectory64 = FvTrajectory<f64>;
pub type QuadraticSystem64 = QuadraticSystem<f64>;
