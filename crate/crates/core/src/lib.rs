//! Averaging of a reflected slow-fast diffusion onto a graph with a sticky
//! vertex.
//!
//! The crate covers the whole pipeline:
//!
//! * [`model`]: the domain, coefficient fields, first integral and forcing;
//! * [`graph`]: the graph Γ, the projection `Y(x)` and averaged coefficients;
//! * [`sde`]: Monte Carlo simulation of the two-scale process;
//! * [`generator`]: the limiting graph diffusion as a finite-volume chain;
//! * [`bvp`]: the limiting boundary-value problem on Γ;
//! * [`harness`]: config-driven experiments and their artifacts.

pub mod bvp;
pub mod error;
pub mod generator;
pub mod graph;
pub mod harness;
pub mod model;
pub mod sde;
pub mod stats;

pub use bvp::{evaluate, solve_bvp, GraphSolution};
pub use error::{Error, Result};
pub use generator::{build_generator, GeneratorMatrix};
pub use graph::{compute_coefficients, identify, CoefficientOptions, EdgeCoefficients, Graph, GraphPoint};
pub use model::{AnnulusModel, Forcing, Model, Point};
pub use sde::{SimConfig, Scheme};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/graph.md")]
    struct Graph;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/graph-process.md")]
    struct GraphProcess;
    #[doc = include_str!("../../../book/src/bvp.md")]
    struct Bvp;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
