//! Structure-enhanced graph matching for graph edit distance regression.
//!
//! The pipeline predicts a similarity score in (0, 1) for a pair of small
//! labeled graphs, trained against exact GED targets:
//!
//! 1. [`graph`] — node graphs, line graphs, assignment graphs, and the
//!    normalized adjacency / incidence transforms they provide.
//! 2. [`encoder`] — dual node+edge embeddings: a residual GCN on the node
//!    graph plus an edge-enhanced GCN on the line graph, fused through a
//!    degree-weighted incidence matrix.
//! 3. [`matcher`] — cross-graph attention similarity matrices, structure
//!    perception matching (a GCN over the assignment graph whose node
//!    features are similarity scores), and a cross-shaped convolutional
//!    readout.
//! 4. [`ged`] — an exact A* GED oracle (with a brute-force cross-check)
//!    that produces the training targets.
//! 5. [`train`] / [`metrics`] — MSE training, rank-correlation evaluation,
//!    and the ablation / portability harnesses.
//!
//! Everything learnable runs on the reverse-mode tape in [`tensor`], so
//! gradients are checkable against finite differences end to end.

pub mod baseline;
pub mod config;
pub mod data;
pub mod encoder;
pub mod ged;
pub mod graph;
pub mod matcher;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use graph::{AssignmentGraph, GraphError, LineGraph, NodeGraph};
pub use matrix::Matrix;
pub use params::ModelParams;
pub use tensor::{Mask, Tape, Tensor, TensorError};
