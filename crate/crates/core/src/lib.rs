//! Binary function similarity over dominance-enhanced semantic graphs.
//!
//! The pipeline: lifted P-Code functions ([`pcode`]) are turned into
//! control-flow-free graphs whose block structure comes from dominator and
//! post-dominator trees ([`dominance`], [`desg`]). A gated graph neural
//! network ([`gnn`]) embeds each graph; [`training`] fits it with a margin
//! loss and distance-weighted negatives, and [`eval`] scores matching and
//! search. [`ged`] measures how much obfuscation perturbs CFGs versus
//! dominator trees.

pub mod desg;
pub mod dominance;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod ged;
pub mod gnn;
pub mod pcode;
pub mod training;

pub use error::{Error, Result};
