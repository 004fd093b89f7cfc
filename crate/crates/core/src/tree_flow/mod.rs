//! Vertices, flows and rays on the rooted binary tree truncated at a finite depth.

mod array;
mod flow;
mod io;
mod vertex;

pub use array::TreeArray;
pub(crate) use flow::sum_up;
pub use flow::{
    uniform_flow, validate_flow, Flow, ValidationReport, Violation, ViolationKind,
    DEFAULT_MAX_DEPTH, FLOW_TOL,
};
pub use vertex::{common_ancestor_depth, ray_distance, Ray, VertexId, MAX_ADDRESSABLE_DEPTH};
