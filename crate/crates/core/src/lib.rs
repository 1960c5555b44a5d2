//! Numerical core for the σ₂ curvature of conformal metrics.
//!
//! Modules:
//! - [`symfun`]: elementary symmetric functions, Garding cones, Newton transform.
//! - [`discretize`]: radial and latitudinal grids, stencils, quadrature.
//! - [`geometry`]: backgrounds, the conformal Schouten tensor, integral functionals.
//! - [`flow`]: the normalized σ₂ flow, eigenvalue solve and subcritical continuation.
//! - [`testmetric`]: bubble gluing construction and comparison with the round sphere.

// `!(x > 0.0)` also rejects NaN; that is the intent wherever it appears.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretize;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod symfun;
pub mod testmetric;

pub use discretize::{GridKind, RadialGrid};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowState, MonitorRecord, RunOutcome, RunStatus};
pub use geometry::{BackgroundGeometry, BackgroundKind, ConformalField, RadialSchouten, SchoutenField};
pub use symfun::{ConeReport, SymmetricMatrix};
pub use testmetric::{AssembledMetric, BubbleParams, GluingProfile};
