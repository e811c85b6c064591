//! Dual embedding learning.
//!
//! Node embeddings come from a residual GCN on the node graph. Edge
//! embeddings come from an edge-enhanced GCN on the line graph, where each
//! line-graph node also receives an incidence-routed, tanh-transformed
//! message from its adjacent line-graph edges, gated per channel. The dual
//! embedding concatenates a node's embedding with the degree-weighted
//! aggregation of its incident edge embeddings.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::graph::NodeGraph;
use crate::matrix::Matrix;
use crate::params::{xavier_uniform, ModelParams};
use crate::tensor::{Tape, Tensor};

/// Which embedding feeds the matcher.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    NodeOnly,
    EdgeOnly,
    Dual,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::NodeOnly => "node",
            Variant::EdgeOnly => "edge",
            Variant::Dual => "dual",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "node" => Some(Variant::NodeOnly),
            "edge" => Some(Variant::EdgeOnly),
            "dual" => Some(Variant::Dual),
            _ => None,
        }
    }

    /// Column width of the embedding handed to the matcher.
    pub fn embed_dim(&self, hidden: usize) -> usize {
        match self {
            Variant::Dual => 2 * hidden,
            _ => hidden,
        }
    }

    pub fn uses_node_stack(&self) -> bool {
        matches!(self, Variant::NodeOnly | Variant::Dual)
    }

    pub fn uses_line_stack(&self) -> bool {
        matches!(self, Variant::EdgeOnly | Variant::Dual)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderDims {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// Constant matrices derived from one graph, shared into every tape that
/// scores a pair involving it.
#[derive(Clone, Debug)]
pub struct GraphFeatures {
    pub n: usize,
    pub m: usize,
    /// Node features, N x d1.
    pub x: Arc<Matrix>,
    /// Symmetric-normalized adjacency with self-loops, N x N.
    pub adj_norm: Arc<Matrix>,
    /// Degree-weighted incidence, N x M.
    pub k_prime: Arc<Matrix>,
    /// Line-graph node features (endpoint feature sums), M x d1.
    pub lg_x: Arc<Matrix>,
    /// Line-graph normalized adjacency, M x M.
    pub lg_adj_norm: Arc<Matrix>,
    /// Line-graph incidence, M x M_E.
    pub lg_incidence: Arc<Matrix>,
    /// Line-graph edge features (shared base node feature), M_E x d1.
    pub lg_edge_feats: Arc<Matrix>,
}

impl GraphFeatures {
    pub fn from_graph(g: &NodeGraph) -> GraphFeatures {
        let lg = g.line_graph();
        GraphFeatures {
            n: g.num_nodes(),
            m: g.num_edges(),
            x: Arc::new(g.node_features().clone()),
            adj_norm: Arc::new(g.normalized_adjacency()),
            k_prime: Arc::new(g.modified_incidence()),
            lg_x: Arc::new(lg.node_features().clone()),
            lg_adj_norm: Arc::new(lg.normalized_adjacency()),
            lg_incidence: Arc::new(lg.incidence()),
            lg_edge_feats: Arc::new(lg.edge_features().clone()),
        }
    }
}

/// Registers encoder weights (only the stacks the variant uses).
pub fn init_encoder_params(
    params: &mut ModelParams,
    dims: &EncoderDims,
    variant: Variant,
    rng: &mut ChaCha8Rng,
) {
    let d = dims.hidden;
    if variant.uses_node_stack() {
        params.insert("enc.P_node", xavier_uniform(rng, dims.input_dim, d));
        for l in 0..dims.layers {
            params.insert(format!("enc.ng.W.{l}"), xavier_uniform(rng, d, d));
        }
    }
    if variant.uses_line_stack() {
        params.insert("enc.P_line", xavier_uniform(rng, dims.input_dim, d));
        for l in 0..dims.layers {
            params.insert(format!("enc.lg.W_E.{l}"), xavier_uniform(rng, d, d));
        }
        params.insert("enc.W2", xavier_uniform(rng, dims.input_dim, d));
        params.insert("enc.b", Matrix::zeros(1, d));
        // Neutral pass-through gate at initialization.
        params.insert("enc.gate", Matrix::ones(1, d));
    }
}

/// Encoder weights bound onto one tape.
pub struct EncoderBind {
    pub p_node: Option<Tensor>,
    pub w_node: Vec<Tensor>,
    pub p_line: Option<Tensor>,
    pub w_line: Vec<Tensor>,
    pub w2: Option<Tensor>,
    pub b: Option<Tensor>,
    pub gate: Option<Tensor>,
}

pub fn bind_encoder(
    tape: &Tape,
    params: &ModelParams,
    dims: &EncoderDims,
    variant: Variant,
) -> EncoderBind {
    let bind = |name: &str| tape.param_named(name, Arc::clone(params.get(name)));
    let (mut p_node, mut w_node) = (None, Vec::new());
    let (mut p_line, mut w_line, mut w2, mut b, mut gate) = (None, Vec::new(), None, None, None);
    if variant.uses_node_stack() {
        p_node = Some(bind("enc.P_node"));
        w_node = (0..dims.layers).map(|l| bind(&format!("enc.ng.W.{l}"))).collect();
    }
    if variant.uses_line_stack() {
        p_line = Some(bind("enc.P_line"));
        w_line = (0..dims.layers).map(|l| bind(&format!("enc.lg.W_E.{l}"))).collect();
        w2 = Some(bind("enc.W2"));
        b = Some(bind("enc.b"));
        gate = Some(bind("enc.gate"));
    }
    EncoderBind { p_node, w_node, p_line, w_line, w2, b, gate }
}

/// Residual GCN over the node graph: H <- ReLU(A_norm H W) + H, repeated.
pub fn node_embed(tape: &Tape, bind: &EncoderBind, gf: &GraphFeatures) -> Tensor {
    let adj = tape.constant_arc(Arc::clone(&gf.adj_norm));
    let x = tape.constant_arc(Arc::clone(&gf.x));
    let mut h = tape.matmul(x, bind.p_node.expect("node stack not bound"));
    for &w in &bind.w_node {
        h = tape.add(tape.relu(tape.matmul(tape.matmul(adj, h), w)), h);
    }
    h
}

/// Edge-enhanced GCN over the line graph. Each layer adds the residual GCN
/// message and the (layer-independent) incidence-routed edge message:
/// H <- [ReLU(A_norm H W) + H] + (K_E tanh(Y_E W2 + b)) * gate.
/// The result rows are edge embeddings of the base graph.
pub fn edge_embed(tape: &Tape, bind: &EncoderBind, gf: &GraphFeatures) -> Tensor {
    let adj = tape.constant_arc(Arc::clone(&gf.lg_adj_norm));
    let x = tape.constant_arc(Arc::clone(&gf.lg_x));
    let incidence = tape.constant_arc(Arc::clone(&gf.lg_incidence));
    let y = tape.constant_arc(Arc::clone(&gf.lg_edge_feats));

    let w2 = bind.w2.expect("line stack not bound");
    let b = bind.b.expect("line stack not bound");
    let gate = bind.gate.expect("line stack not bound");

    let edge_msg = tape.mul_row(
        tape.matmul(incidence, tape.tanh(tape.add_row(tape.matmul(y, w2), b))),
        gate,
    );

    let mut h = tape.matmul(x, bind.p_line.expect("line stack not bound"));
    for &w in &bind.w_line {
        let from_nodes = tape.add(tape.relu(tape.matmul(tape.matmul(adj, h), w)), h);
        h = tape.add(from_nodes, edge_msg);
    }
    h
}

/// Concatenates node embeddings with the K'-aggregated edge embeddings:
/// H_dual = H_v (+) K' H_e.
pub fn dual_embed(tape: &Tape, k_prime: Tensor, hv: Tensor, he: Tensor) -> Tensor {
    tape.concat_cols(hv, tape.matmul(k_prime, he))
}

/// Variant dispatch producing the matcher input for one graph.
pub fn embed_graph(
    tape: &Tape,
    bind: &EncoderBind,
    gf: &GraphFeatures,
    variant: Variant,
) -> Tensor {
    match variant {
        Variant::NodeOnly => node_embed(tape, bind, gf),
        Variant::EdgeOnly => {
            let he = edge_embed(tape, bind, gf);
            let kp = tape.constant_arc(Arc::clone(&gf.k_prime));
            tape.matmul(kp, he)
        }
        Variant::Dual => {
            let hv = node_embed(tape, bind, gf);
            let he = edge_embed(tape, bind, gf);
            let kp = tape.constant_arc(Arc::clone(&gf.k_prime));
            dual_embed(tape, kp, hv, he)
        }
    }
}
