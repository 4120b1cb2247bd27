//! Spatial statistics for crash hotspot detection and crash / near-miss concordance.
//!
//! The crate covers the whole analysis chain on a uniform square grid:
//!
//! - [`grid`]: grid construction and point-to-cell aggregation
//! - [`weights`]: sparse Queen/Rook contiguity weights and their transforms
//! - [`globalstats`]: global Moran's I and global bivariate Moran's I
//! - [`localstats`]: Getis-Ord Gi*, local Moran's I and bivariate local Moran's I
//!   with conditional-permutation pseudo p-values, plus hotspot tiers and LISA quadrants
//! - [`characterize`]: POI count features and ranked Mann-Whitney U comparisons
//! - [`synth`]: synthetic scenarios and brute-force reference implementations
//! - [`pipeline`]: file formats and the staged end-to-end run
//!
//! All permutation procedures draw from random substreams keyed by `(seed, index)`,
//! so results do not depend on the number of rayon worker threads.

pub mod characterize;
pub mod error;
pub mod globalstats;
pub mod grid;
pub mod io;
pub mod localstats;
mod perm;
pub mod pipeline;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
