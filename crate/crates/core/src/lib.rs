//! Numerical library for neutral differential equations with small delays:
//! smallness-hypothesis checking with full constant schedules, construction
//! of the inertial manifold as a contraction fixed point on weighted
//! trajectory grids, exponential tracking of forward solutions, and the
//! slow-fast van der Pol study.

pub mod admissibility;
pub mod catalog;
pub mod cutoff;
pub mod derivcheck;
pub mod error;
pub mod grid;
pub mod manifold;
pub mod multiindex;
pub mod problem;
pub mod tracking;
pub mod vdp;

pub use error::{Error, Result};
