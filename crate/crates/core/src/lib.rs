//! Directed random walks on the backbone of supercritical oriented site
//! percolation.
//!
//! The crate is `no_std` (it needs `alloc`) and purely computational:
//!
//! * [`env`] generates reproducible Bernoulli space-time windows and their
//!   horizon-truncated backbone fields,
//! * [`walk`] holds the quenched kernel, exact forward dynamic programs for
//!   quenched laws and Monte Carlo means of them (annealed laws),
//! * [`density`] estimates the invariant density of the environment seen
//!   from the particle,
//! * [`llt`] builds the hybrid measures, the quenched local limit statistic
//!   and box-level quenched/annealed comparison events,
//! * [`pairwalk`] runs two walks in one environment and counts encounters,
//! * [`annealed_stats`] checks derivative, smoothness and tail estimates of
//!   annealed laws.
//!
//! File formats, parallel replica drivers and the command line live in the
//! `opwalk-harness` companion crate.

#![no_std]

extern crate alloc;

pub mod annealed_stats;
pub mod density;
pub mod env;
mod error;
pub mod geometry;
pub mod llt;
pub mod pairwalk;
pub mod pmf;
pub mod seed;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use geometry::{BoxRegion, LatticeGeometry, Point, Site, MAX_DIM};

/// Default number of time steps kept between the last time at which
/// statistics are read and the backbone horizon.
pub const DEFAULT_SAFETY_MARGIN: i64 = 50;
