//! Optimal dynamic treatment regimes as finite-horizon Markov decision
//! processes whose transitions come from proportional-odds models of
//! patient covariates.
//!
//! The MDP layer is generic over [`Scalar`] (`f64`, `f32`, exact rationals);
//! the ordinal models over any `nalgebra::RealField`. The aliases below fix
//! the double-precision types used by the simulation pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod mdp;
pub mod ordinal;
pub mod pipeline;
pub mod policy;
pub mod scalar;
pub mod svg;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::FiniteHorizonMdp<f64>;
pub type ExactMdp = mdp::FiniteHorizonMdp<num_rational::Rational64>;
pub type Solution = mdp::PolicySolution<f64>;
pub type OrdinalModel = ordinal::FittedOrdinalModel<f64>;
pub type OrdinalData = ordinal::OrdinalDataset<f64>;
