//! Optimal investment for non-concave utilities on finite scenario trees.
//!
//! The pipeline: load a [`tree::ScenarioTree`] and a
//! [`utility::UtilityFunction`], certify no-arbitrage ([`noarb`]) and the
//! utility's growth exponents, then run [`dp::backward_induction`], whose
//! one-step problems ([`onestep`]) are solved by bounded multi-start search.
//! [`oracle`] brute-forces tiny instances as an independent reference.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

// `!(a <= b)` is deliberate throughout: a NaN must fail every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dp;
pub mod error;
pub mod noarb;
pub mod onestep;
pub mod oracle;
pub mod scalar;
pub mod tree;
pub mod utility;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tree = tree::ScenarioTree<f64>;
pub type Utility = utility::UtilityFunction<f64>;
pub type Slice = onestep::ValueSlice<f64>;
pub type Solution = dp::DpSolution<f64>;
pub type Basis = noarb::SubspaceBasis<f64>;
