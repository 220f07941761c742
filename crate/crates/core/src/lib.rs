//! Poincaré-sphere compactification of linear control systems ẋ = Ax + Bu
//! with bounded controls: spectral data, exact flows, the projected flow on
//! the sphere, linearized exponents and grid approximations of control sets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod error;
pub mod numfmt;
pub mod portrait;
pub mod properties;
mod ode;
pub mod reach;
pub mod run;
pub mod scenario;
pub mod spectral;
pub mod sphere;
pub mod system;
pub mod tangent;

pub use ode::Tolerances;

pub use error::{Error, Result};
