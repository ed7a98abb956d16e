//! Numerical laboratory for Kähler metrics on complex tori.
//!
//! The crate evolves torus metrics by the Kähler–Ricci flow written as a
//! parabolic complex Monge–Ampère equation for a potential, and measures the
//! a-priori quantities that control the flow: the flat representative of the
//! class, potential and volume-form bounds, the scalar-curvature floor, the
//! weak convergence of test-form pairings, volume densities and distances.
//!
//! Module map:
//! - [`field`]: periodic grids, FFT calculus, quadrature, random band-limited fields.
//! - [`geometry`]: metric assembly, curvature, traces, flat projection, pairings.
//! - [`flow`]: time integration of the potential equation.
//! - [`harness`]: measured constants, signed slacks and rate fits.
//! - [`distance`]: stencil-graph Riemannian distances and the distance comparison.
//! - [`scenario`]: calibrated families with prescribed scalar-curvature floor.
//! - [`io`]: binary snapshots and persisted flow traces.

pub mod distance;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod herm;
pub mod io;
pub mod scenario;

pub use error::{Error, Result};
pub use field::{ComplexField, ScalarField, SpectralCoeffs, TorusGeometry};
pub use flow::{FlowConfig, FlowState, FlowTrace, Scheme};
pub use geometry::{FlatMetric, HermitianField, KahlerMetric, TestForm};
pub use herm::HermMatrix;
