//! Discrete minimum Riesz energy problems for generalized condensers.
//!
//! A condenser is a finite family of signed plates, each discretized by
//! nodes. Vector measures on it are minimized for the Gauss functional
//! `G(μ) = κ(μ, μ) + 2⟨f, μ⟩` subject to mass and optional upper
//! constraints.

pub mod error;
pub mod geometry;
pub mod kelvin;
pub mod kernel;
pub mod measures;
pub mod operator;
pub mod points;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Condenser, Plate, PlateSpec, Sign};
pub use kernel::{DiagonalPolicy, DiscreteMeasure, RieszKernel, SignedDiscreteMeasure};
pub use measures::{Caps, DiscreteVectorMeasure, ExternalField, PlateConstraint, ProblemSpec};
pub use operator::EnergyOperator;
pub use points::Points;
pub use solver::{SolveOptions, SolveReport, StepRule};
