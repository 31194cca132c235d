//! Numerical laboratory for weakly interacting diffusions with a localized
//! attractive interaction on the one-dimensional torus.
//!
//! The crate covers the whole hierarchy of descriptions:
//!
//! * [`potentials`]: interaction-potential families and the rescaled periodic kernel,
//! * [`spectral`]: linear stability of the uniform state,
//! * [`particle`]: the N-particle SDE (Euler–Maruyama with a cell list),
//! * [`pde`]: the mean-field PDE with a Scharfetter–Gummel finite-volume scheme,
//! * [`stationary`]: Kirkwood–Monroe fixed points, branches and the two-cluster landscape,
//! * [`reduced`]: the coarse-grained cluster model (mass exchange, heavy Brownian
//!   motions, jump chain and Kramers-type escape times).

// `!(x > 0.0)` is used on purpose so that NaN is rejected; quadrature nodes keep full digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod cluster;
pub mod error;
pub mod particle;
pub mod pde;
pub mod potentials;
pub mod quad;
pub mod reduced;
pub mod spectral;
pub mod stationary;
pub mod torus;

pub use cluster::ClusterConfiguration;
pub use error::{Error, Result};
pub use pde::DensityField;
pub use potentials::{PotentialFamily, PotentialSpec};
