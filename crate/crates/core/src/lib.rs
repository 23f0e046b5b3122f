//! Grid-world benchmark for imagination-driven exploration and object-goal
//! navigation.
//!
//! The pipeline: a [`scene::Scene`] is sensed by raycasting into a
//! [`sensor::PredictedMap`], lifted into a [`geosem::GeoSemMap`], completed by
//! an [`imagination::ImaginationBackend`], turned into goals by
//! [`goal_select`], and driven by the policies in [`strategies`]. [`eval`]
//! runs closed-loop episodes and aggregates metrics.

pub mod error;
pub mod eval;
pub mod geosem;
pub mod goal_select;
pub mod grid;
pub mod imagination;
pub mod planner;
pub mod scene;
pub mod sensor;
pub mod strategies;

pub use error::{Error, Result};
pub use grid::{Cell, Grid};
