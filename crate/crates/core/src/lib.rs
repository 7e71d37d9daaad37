//! Computational toolkit for torsionally rigid spherical couplings and the
//! cable-driven arm built from them.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`] builds cell linkages and expands them along their single
//!   auxetic degree of freedom.
//! - [`mechanism`] runs constraint-Jacobian mobility analysis and composes
//!   constant-velocity joints in series and concentrically.
//! - [`characterization`] holds the measurement math: stiffness regression,
//!   twist-bend ratios, nesting and bend efficiency.
//! - [`arm`] is a piecewise-constant-curvature surrogate of the physical arm.
//! - [`sampling`] reproduces the configuration-space sampler and drives
//!   dataset generation.
//! - [`workspace`] reconstructs reachable volumes with alpha shapes.
//! - [`iklearn`] trains the inverse-kinematics network.
//! - [`trajectory`] generates reference paths and scores closed-loop runs.
//! - [`io`] holds the file codecs and provenance manifests.

pub mod arm;
pub mod characterization;
pub mod geometry;
pub mod iklearn;
pub mod io;
pub mod mechanism;
pub mod quat;
pub mod rng;
pub mod sampling;
pub mod trajectory;
pub mod workspace;

/// Toolkit version reported by manifests and the CLI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
