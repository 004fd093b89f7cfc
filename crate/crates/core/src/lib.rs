//! Multiplicative cascade measures on the boundary of the binary tree and the
//! measure-valued diffusion they generate under time-dependent vertex weights.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cascade;
pub mod cli;
pub mod error;
pub mod kpz;
pub mod noise;
pub mod regularity;
pub mod sde;
pub mod stats;
pub mod transport;
pub mod tree_flow;
pub mod verify;
pub mod weight;

pub use cascade::{simulate_path, CascadePath};
pub use error::{CascadeError, Result};
pub use tree_flow::{Flow, Ray, TreeArray, VertexId};
pub use weight::{IncrementLaw, WeightSpec};
