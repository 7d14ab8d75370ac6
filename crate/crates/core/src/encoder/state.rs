//! Per-frame graph features for a single skeleton.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::play::topology::SkeletonTopology;

/// Joint and bone features of one skeleton at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    /// `J x d_v`.
    pub vertex: Array2<f64>,
    /// `(J-1) x d_e`, rows in topology edge order.
    pub edge: Array2<f64>,
    pub layer: usize,
}

/// Joints as vertex features, bones `v(source) - v(target)` as edge features.
pub fn init_graph_state(frame: ArrayView2<f64>, topology: &SkeletonTopology) -> Result<GraphState> {
    if frame.dim() != (topology.n_joints(), 3) {
        return Err(Error::Shape(format!(
            "frame is {:?}, rig needs ({}, 3)",
            frame.dim(),
            topology.n_joints()
        )));
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("joint coordinates".into()));
    }
    let mut edge = Array2::zeros((topology.n_edges(), 3));
    for (k, &(m, j)) in topology.edges().iter().enumerate() {
        let b = &frame.row(m) - &frame.row(j);
        edge.row_mut(k).assign(&b);
    }
    Ok(GraphState {
        vertex: frame.to_owned(),
        edge,
        layer: 0,
    })
}

/// Sum of the features of edges ending at `j` (zero if none).
pub fn aggregate_incoming(state: &GraphState, topology: &SkeletonTopology, j: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(state.edge.ncols());
    for k in topology.incoming(j) {
        acc += &state.edge.row(k);
    }
    acc
}

/// Sum of the features of edges leaving `j` (zero if none).
pub fn aggregate_outgoing(state: &GraphState, topology: &SkeletonTopology, j: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(state.edge.ncols());
    for k in topology.outgoing(j) {
        acc += &state.edge.row(k);
    }
    acc
}
