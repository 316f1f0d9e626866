//! Scalable interpolation-based data exchange between two overlapping,
//! independently partitioned meshes: a forest-of-octrees producer and a
//! consumer mesh of arbitrary structure, with the coordinate-transform chain
//! and the two-solver synchronization loop of an atmosphere/ionosphere
//! coupling.

// Index-heavy numerical loops over parallel arrays read better as-is.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod config;
pub mod coords;
pub mod error;
pub mod exchange;
pub mod forest;
pub mod harness;
pub mod interp;
pub mod morton;
pub mod report;
pub mod search;
pub mod snapshot;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
