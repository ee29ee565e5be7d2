//! Numerical laboratory for training-free exemplar-guided editing on
//! flow-matching models.
//!
//! The crate implements forward Euler sampling of conditioned velocity
//! fields, three inversion routes (the practical backward approximation, the
//! exact affine backward solve, and reconstruction-based inversion), the
//! two-stage reinversion editing pipeline with an optional model-free first
//! stage, and mask-guided selective denoising. Fields are analytic or
//! fixed-seed stand-ins for a pretrained model, so every identity, drift
//! magnitude, and function-evaluation count is checkable to floating-point
//! tolerance.
//!
//! Modules:
//!
//! - [`state`], [`grid`], [`prior`]: shared value types, time grids, and
//!   the seeded prior.
//! - [`fields`]: the conditioned velocity interface and its
//!   implementations, with exact evaluation counting.
//! - [`solver`]: Euler integration with cached velocities, plus
//!   high-accuracy and closed-form reference solvers.
//! - [`inversion`]: the three backward procedures and the error identity.
//! - [`reinversion`]: the two-stage editing pipeline and NFE accounting.
//! - [`msd`]: mask-guided selective denoising.
//! - [`metrics`], [`data`], [`io`], [`verify`]: distances, synthetic
//!   fixtures, file formats, and the built-in check suites.

pub mod data;
pub mod error;
pub mod fields;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod metrics;
pub mod msd;
pub mod prior;
pub mod reinversion;
pub mod solver;
pub mod state;
pub mod verify;

pub use error::{FlowError, Result};
pub use fields::{FieldSpec, VelocityField};
pub use grid::TimeGrid;
pub use prior::{PriorSampler, GENERATOR_ID};
pub use reinversion::{EditConfig, EditMethod, EditOutcome};
pub use solver::Trajectory;
pub use state::{Condition, GridShape, LatentState, Mask};
