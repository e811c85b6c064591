//! Graph representations and structural transforms.
//!
//! Three views of a graph drive the pipeline: the node graph itself, its
//! line graph (edges become nodes, adjacency is a shared endpoint), and the
//! assignment graph of a graph pair (cross-graph node pairs become nodes,
//! adjacent exactly when both component pairs are edges in their own graph).
//!
//! All types are immutable after construction and every transform is a pure
//! function of its input, so they can be shared and called across threads.

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph {id}: self-loop at node {node}")]
    SelfLoop { id: String, node: usize },
    #[error("graph {id}: duplicate edge ({i}, {j})")]
    DuplicateEdge { id: String, i: usize, j: usize },
    #[error("graph {id}: edge ({i}, {j}) references a node >= {num_nodes}")]
    EdgeOutOfRange { id: String, i: usize, j: usize, num_nodes: usize },
    #[error("graph {id}: {what} has {got} rows, expected {expected}")]
    FeatureRows { id: String, what: &'static str, got: usize, expected: usize },
    #[error("graph {id}: {got} node labels for {expected} nodes")]
    LabelCount { id: String, got: usize, expected: usize },
}

/// An undirected labeled graph with node and edge features.
///
/// Edges are stored canonically as `(i, j)` with `i < j`, in the order they
/// were supplied; that order defines edge indices everywhere downstream
/// (incidence columns, line-graph nodes).
#[derive(Clone, Debug)]
pub struct NodeGraph {
    id: String,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Option<Vec<u32>>,
    node_features: Matrix,
    edge_features: Matrix,
}

impl NodeGraph {
    /// Builds and validates a graph. Node features default to a constant 1.0
    /// scalar per node and edge features to an all-ones M x 1 matrix; both
    /// can be replaced with the `with_*` builders.
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_labels: Option<Vec<u32>>,
    ) -> Result<Self, GraphError> {
        let id = id.into();
        let mut canonical = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop { id, node: a });
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { id, i, j, num_nodes });
            }
            if !seen.insert((i, j)) {
                return Err(GraphError::DuplicateEdge { id, i, j });
            }
            canonical.push((i, j));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != num_nodes {
                return Err(GraphError::LabelCount {
                    id,
                    got: labels.len(),
                    expected: num_nodes,
                });
            }
        }
        let num_edges = canonical.len();
        Ok(NodeGraph {
            id,
            num_nodes,
            edges: canonical,
            node_labels,
            node_features: Matrix::ones(num_nodes, 1),
            edge_features: Matrix::ones(num_edges, 1),
        })
    }

    /// Replaces node features; the row count must equal the node count.
    pub fn with_node_features(mut self, features: Matrix) -> Result<Self, GraphError> {
        if features.rows() != self.num_nodes {
            return Err(GraphError::FeatureRows {
                id: self.id,
                what: "node features",
                got: features.rows(),
                expected: self.num_nodes,
            });
        }
        self.node_features = features;
        Ok(self)
    }

    /// Replaces edge features; the row count must equal the edge count.
    pub fn with_edge_features(mut self, features: Matrix) -> Result<Self, GraphError> {
        if features.rows() != self.edges.len() {
            return Err(GraphError::FeatureRows {
                id: self.id,
                what: "edge features",
                got: features.rows(),
                expected: self.edges.len(),
            });
        }
        self.edge_features = features;
        Ok(self)
    }

    /// Rebuilds node features as one-hot label encodings over a vocabulary
    /// of `vocab_size` labels. Unlabeled graphs keep the constant feature.
    pub fn with_onehot_features(self, vocab_size: usize) -> Result<Self, GraphError> {
        let Some(labels) = self.node_labels.clone() else {
            return Ok(self);
        };
        let mut x = Matrix::zeros(labels.len(), vocab_size.max(1));
        for (i, &l) in labels.iter().enumerate() {
            x[(i, l as usize)] = 1.0;
        }
        self.with_node_features(x)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_labels(&self) -> Option<&[u32]> {
        self.node_labels.as_deref()
    }

    pub fn label(&self, node: usize) -> Option<u32> {
        self.node_labels.as_ref().map(|l| l[node])
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Matrix {
        &self.edge_features
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.contains(&key)
    }

    /// Relabels nodes by `perm`, where node `v` becomes `perm[v]`. Features
    /// and labels move with their nodes; edge order follows the original
    /// edge order with canonicalized endpoints.
    pub fn permuted(&self, perm: &[usize]) -> NodeGraph {
        assert_eq!(perm.len(), self.num_nodes, "permutation length mismatch");
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (perm[i], perm[j]);
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();
        let labels = self.node_labels.as_ref().map(|ls| {
            let mut out = vec![0u32; ls.len()];
            for (v, &l) in ls.iter().enumerate() {
                out[perm[v]] = l;
            }
            out
        });
        let d = self.node_features.cols();
        let mut x = Matrix::zeros(self.num_nodes, d);
        for v in 0..self.num_nodes {
            for c in 0..d {
                x[(perm[v], c)] = self.node_features[(v, c)];
            }
        }
        let g = NodeGraph::new(format!("{}-perm", self.id), self.num_nodes, &edges, labels)
            .expect("permutation of a valid graph is valid");
        let g = g.with_node_features(x).expect("same node count");
        // Edge feature rows follow the (reordered) edge list positions.
        g.with_edge_features(self.edge_features.clone()).expect("same edge count")
    }

    /// Symmetric-normalized adjacency with self-loops:
    /// entry (i, j) = (d̃_i d̃_j)^{-1/2} when j is a neighbor of i or j = i,
    /// where d̃ counts the self-loop.
    pub fn normalized_adjacency(&self) -> Matrix {
        normalized_adjacency_from_edges(self.num_nodes, &self.edges)
    }

    /// Degree-weighted incidence: entry (v, k) = (d_i d_j)^{-1/2} when edge
    /// k = {i, j} touches v, else 0. Both nonzero entries of a column are
    /// equal by construction.
    pub fn modified_incidence(&self) -> Matrix {
        let deg = self.degrees();
        let mut k = Matrix::zeros(self.num_nodes, self.edges.len());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let w = 1.0 / ((deg[i] * deg[j]) as f64).sqrt();
            k[(i, e)] = w;
            k[(j, e)] = w;
        }
        k
    }

    /// The line graph: one node per edge of `self`, adjacency by shared
    /// endpoint. Node features are the sum of the two endpoint feature rows;
    /// each line-graph edge carries the feature of the shared base node.
    pub fn line_graph(&self) -> LineGraph {
        let m = self.edges.len();
        let d = self.node_features.cols();

        let mut x_e = Matrix::zeros(m, d);
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            for c in 0..d {
                x_e[(e, c)] = self.node_features[(i, c)] + self.node_features[(j, c)];
            }
        }

        // Incident edge lists per node, in edge-index order, so that the
        // line-graph edge enumeration is deterministic.
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.num_nodes];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            incident[i].push(e);
            incident[j].push(e);
        }

        let mut edges = Vec::new();
        let mut shared_nodes = Vec::new();
        for (v, inc) in incident.iter().enumerate() {
            for a in 0..inc.len() {
                for b in a + 1..inc.len() {
                    let (e1, e2) = (inc[a].min(inc[b]), inc[a].max(inc[b]));
                    edges.push((e1, e2));
                    shared_nodes.push(v);
                }
            }
        }

        let mut y_e = Matrix::zeros(edges.len(), d);
        for (le, &v) in shared_nodes.iter().enumerate() {
            for c in 0..d {
                y_e[(le, c)] = self.node_features[(v, c)];
            }
        }

        LineGraph {
            base_id: self.id.clone(),
            num_nodes: m,
            edges,
            shared_nodes,
            node_features: x_e,
            edge_features: y_e,
        }
    }
}

/// Line graph of a [`NodeGraph`]: nodes are the base graph's edges.
#[derive(Clone, Debug)]
pub struct LineGraph {
    base_id: String,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    shared_nodes: Vec<usize>,
    node_features: Matrix,
    edge_features: Matrix,
}

impl LineGraph {
    pub fn base_id(&self) -> &str {
        &self.base_id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Base node shared by the two base edges of each line-graph edge.
    pub fn shared_nodes(&self) -> &[usize] {
        &self.shared_nodes
    }

    /// X_E: per line-graph node (= base edge), sum of endpoint features.
    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    /// Y_E: per line-graph edge, the feature row of the shared base node.
    pub fn edge_features(&self) -> &Matrix {
        &self.edge_features
    }

    /// Binary incidence K_E of the line graph itself (nodes x edges).
    pub fn incidence(&self) -> Matrix {
        let mut k = Matrix::zeros(self.num_nodes, self.edges.len());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            k[(i, e)] = 1.0;
            k[(j, e)] = 1.0;
        }
        k
    }

    pub fn normalized_adjacency(&self) -> Matrix {
        normalized_adjacency_from_edges(self.num_nodes, &self.edges)
    }
}

/// Assignment graph of a graph pair: node (i, a) pairs a node of the first
/// graph with a node of the second, indexed `i * n2 + a`. Nodes (i, a) and
/// (j, b) are adjacent exactly when {i, j} and {a, b} are both edges.
#[derive(Clone, Debug)]
pub struct AssignmentGraph {
    n1: usize,
    n2: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
}

impl AssignmentGraph {
    pub fn build(g1: &NodeGraph, g2: &NodeGraph) -> AssignmentGraph {
        let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
        let mut edges = Vec::with_capacity(2 * g1.num_edges() * g2.num_edges());
        let mut degrees = vec![0usize; n1 * n2];
        for &(i, j) in g1.edges() {
            for &(a, b) in g2.edges() {
                // Both pairings of the two source edges.
                for (u, v) in [(i * n2 + a, j * n2 + b), (i * n2 + b, j * n2 + a)] {
                    let (u, v) = (u.min(v), u.max(v));
                    edges.push((u, v));
                    degrees[u] += 1;
                    degrees[v] += 1;
                }
            }
        }
        AssignmentGraph { n1, n2, edges, degrees }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn num_nodes(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn node_index(&self, i: usize, a: usize) -> usize {
        i * self.n2 + a
    }

    pub fn normalized_adjacency(&self) -> Matrix {
        normalized_adjacency_from_edges(self.num_nodes(), &self.edges)
    }
}

fn normalized_adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Matrix {
    let mut deg = vec![1.0f64; n]; // self-loop included
    for &(i, j) in edges {
        deg[i] += 1.0;
        deg[j] += 1.0;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a = Matrix::zeros(n, n);
    for v in 0..n {
        a[(v, v)] = inv_sqrt[v] * inv_sqrt[v];
    }
    for &(i, j) in edges {
        let w = inv_sqrt[i] * inv_sqrt[j];
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    a
}
