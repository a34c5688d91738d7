//! Observational scaling laws over public benchmark results.
//!
//! The pipeline: load model metadata and benchmark scores ([`dataset`]),
//! fill missing cells ([`impute`]), extract a low-rank capability space
//! ([`capability`]), fit scaled-sigmoid laws on it ([`scalinglaw`]), check
//! them on held-out stronger models ([`validation`]), pick informative model
//! subsets ([`subset`]) and score fixed published forms ([`prereg`]).

pub mod capability;
pub mod dataset;
pub mod error;
pub mod impute;
pub mod linalg;
pub mod par;
pub mod prereg;
pub mod scalinglaw;
pub mod subset;
pub mod synthetic;
pub mod validation;

pub use error::{Error, Result};
