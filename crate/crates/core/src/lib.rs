//! Semiclassical coherent-state propagator for one canonical degree of
//! freedom coupled to one spin.
//!
//! The pipeline: build an [`symbols::OperatorSpec`], turn it into an analytic
//! [`symbols::Symbol`], solve the complex boundary-value problem with
//! [`shooting::solve`], and assemble the propagator with
//! [`semiclassical::assemble`]. Exact references live in [`reference`]; the
//! finite-N fluctuation determinant in [`oracle`].

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod ode;
pub mod oracle;
pub mod reference;
pub mod semiclassical;
pub mod shooting;
pub mod states;
pub mod symbols;

pub use error::{Error, Result};
