//! Cross-graph matching: similarity matrices, structure perception
//! matching, and the similarity-matrix readout.
//!
//! Similarity matrices are zero-padded to N_max x N_max with a validity
//! mask; padded entries are exactly zero through every stage. Structure
//! perception matching (SPM) treats the valid entries as node features of
//! the pair's assignment graph and runs one GCN layer over it, so each
//! cross-graph node pair's score is rectified by its structurally relevant
//! pairs. The readout is deliberately built from permutation-invariant
//! pieces (sorted row/column aggregate profiles, entry-set attention), so
//! the final score is exactly invariant to node relabeling and to the
//! padding size.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{AssignmentGraph, NodeGraph};
use crate::matrix::Matrix;
use crate::params::{xavier_uniform, ModelParams};
use crate::tensor::{Mask, Tape, Tensor};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatcherError {
    #[error("graph pair ({n1}, {n2} nodes) exceeds the configured N_max = {n_max}")]
    ExceedsNMax { n1: usize, n2: usize, n_max: usize },
}

/// Counts [`spm_apply`] executions process-wide; the portability harness
/// uses it to prove the SPM path is not reached when disabled.
static SPM_EXECUTIONS: AtomicU64 = AtomicU64::new(0);

pub fn spm_execution_count() -> u64 {
    SPM_EXECUTIONS.load(Ordering::Relaxed)
}

pub fn reset_spm_execution_count() {
    SPM_EXECUTIONS.store(0, Ordering::Relaxed);
}

/// An N_max x N_max cross-graph score matrix on the tape. The top-left
/// n1 x n2 block is valid; everything else is exactly zero.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityMatrix {
    pub scores: Tensor,
    pub n1: usize,
    pub n2: usize,
    pub n_max: usize,
}

impl SimilarityMatrix {
    pub fn mask(&self) -> Mask {
        Mask::block(self.n_max, self.n_max, self.n1, self.n2)
    }
}

/// Flat (row-major) indices of the valid block inside N_max x N_max,
/// ordered row by row: entry (i, a) sits at i * n_max + a, matching the
/// assignment-graph node index i * n2 + a.
pub(crate) fn valid_flat_indices(n1: usize, n2: usize, n_max: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for a in 0..n2 {
            idx.push(i * n_max + a);
        }
    }
    idx
}

/// Normalized-adjacency context for running SPM over one assignment graph.
#[derive(Clone, Debug)]
pub struct SpmContext {
    pub n1: usize,
    pub n2: usize,
    pub adj_norm: Arc<Matrix>,
}

impl SpmContext {
    pub fn new(ag: &AssignmentGraph) -> SpmContext {
        SpmContext {
            n1: ag.n1(),
            n2: ag.n2(),
            adj_norm: Arc::new(ag.normalized_adjacency()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MatcherDims {
    /// Column width of the embeddings entering the matcher.
    pub embed_dim: usize,
    pub dk: usize,
    pub spm_layers: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    /// 0 selects a direct features -> 1 readout without a hidden layer.
    pub mlp_hidden: usize,
}

pub fn init_matcher_params(params: &mut ModelParams, dims: &MatcherDims, rng: &mut ChaCha8Rng) {
    for name in ["match.Wq1", "match.Wk1", "match.Wq2", "match.Wk2"] {
        params.insert(name, xavier_uniform(rng, dims.embed_dim, dims.dk));
    }
    for l in 0..dims.spm_layers {
        // Neutral aggregation weight; training moves it.
        params.insert(format!("spm.WA.{l}"), Matrix::scalar(1.0));
    }
    for name in ["att.Wq", "att.Wk", "att.Wv"] {
        params.insert(name, xavier_uniform(rng, 1, dims.dk));
    }
    params.insert("att.bq", Matrix::zeros(1, dims.dk));
    params.insert("att.bk", Matrix::zeros(1, dims.dk));
    params.insert("att.bv", Matrix::zeros(1, dims.dk));
    params.insert("att.Wo", xavier_uniform(rng, dims.dk, 1));
    params.insert("att.bo", Matrix::zeros(1, 1));
    for l in 0..dims.conv_layers {
        let c_in = if l == 0 { 1 } else { dims.conv_channels };
        params.insert(format!("conv.{l}.row"), xavier_uniform(rng, dims.conv_channels, c_in));
        params.insert(format!("conv.{l}.col"), xavier_uniform(rng, dims.conv_channels, c_in));
    }
    let feat = 2 * if dims.conv_layers == 0 { 1 } else { dims.conv_channels };
    if dims.mlp_hidden > 0 {
        params.insert("mlp.W1", xavier_uniform(rng, feat, dims.mlp_hidden));
        params.insert("mlp.b1", Matrix::zeros(1, dims.mlp_hidden));
        params.insert("mlp.W2", xavier_uniform(rng, dims.mlp_hidden, 1));
        params.insert("mlp.b2", Matrix::zeros(1, 1));
    } else {
        params.insert("mlp.W1", xavier_uniform(rng, feat, 1));
        params.insert("mlp.b1", Matrix::zeros(1, 1));
    }
}

/// Matcher weights bound onto one tape.
pub struct MatcherBind {
    pub wq1: Tensor,
    pub wk1: Tensor,
    pub wq2: Tensor,
    pub wk2: Tensor,
    pub spm_wa: Vec<Tensor>,
    pub att_wq: Tensor,
    pub att_bq: Tensor,
    pub att_wk: Tensor,
    pub att_bk: Tensor,
    pub att_wv: Tensor,
    pub att_bv: Tensor,
    pub att_wo: Tensor,
    pub att_bo: Tensor,
    pub conv: Vec<(Tensor, Tensor)>,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Option<Tensor>,
    pub mlp_b2: Option<Tensor>,
    dk: usize,
}

pub fn bind_matcher(tape: &Tape, params: &ModelParams, dims: &MatcherDims) -> MatcherBind {
    let bind = |name: &str| tape.param_named(name, Arc::clone(params.get(name)));
    MatcherBind {
        wq1: bind("match.Wq1"),
        wk1: bind("match.Wk1"),
        wq2: bind("match.Wq2"),
        wk2: bind("match.Wk2"),
        spm_wa: (0..dims.spm_layers).map(|l| bind(&format!("spm.WA.{l}"))).collect(),
        att_wq: bind("att.Wq"),
        att_bq: bind("att.bq"),
        att_wk: bind("att.Wk"),
        att_bk: bind("att.bk"),
        att_wv: bind("att.Wv"),
        att_bv: bind("att.bv"),
        att_wo: bind("att.Wo"),
        att_bo: bind("att.bo"),
        conv: (0..dims.conv_layers)
            .map(|l| (bind(&format!("conv.{l}.row")), bind(&format!("conv.{l}.col"))))
            .collect(),
        mlp_w1: bind("mlp.W1"),
        mlp_b1: bind("mlp.b1"),
        mlp_w2: params.try_get("mlp.W2").map(|_| bind("mlp.W2")),
        mlp_b2: params.try_get("mlp.b2").map(|_| bind("mlp.b2")),
        dk: dims.dk,
    }
}

/// Scaled-dot-product cross-graph attention, one similarity matrix per
/// direction: S1 = softmax(Q1 K2^T / sqrt(dk)) over the n1 x n2 block
/// (masked, zero-padded to N_max), S2 likewise from (Q2, K1).
pub fn cross_graph_similarity(
    tape: &Tape,
    bind: &MatcherBind,
    h1: Tensor,
    h2: Tensor,
    n_max: usize,
) -> Result<(SimilarityMatrix, SimilarityMatrix), MatcherError> {
    let (n1, n2) = (h1.rows(), h2.rows());
    if n1 > n_max || n2 > n_max {
        return Err(MatcherError::ExceedsNMax { n1, n2, n_max });
    }
    let inv_sqrt_dk = 1.0 / (bind.dk as f64).sqrt();

    let q1 = tape.matmul(h1, bind.wq1);
    let k2 = tape.matmul(h2, bind.wk2);
    let logits1 = tape.scale(tape.matmul(q1, tape.transpose(k2)), inv_sqrt_dk);
    let s1 = tape.row_softmax_masked(
        tape.pad_to(logits1, n_max, n_max),
        Some(&Mask::block(n_max, n_max, n1, n2)),
    );

    let q2 = tape.matmul(h2, bind.wq2);
    let k1 = tape.matmul(h1, bind.wk1);
    let logits2 = tape.scale(tape.matmul(q2, tape.transpose(k1)), inv_sqrt_dk);
    let s2 = tape.row_softmax_masked(
        tape.pad_to(logits2, n_max, n_max),
        Some(&Mask::block(n_max, n_max, n2, n1)),
    );

    Ok((
        SimilarityMatrix { scores: s1, n1, n2, n_max },
        SimilarityMatrix { scores: s2, n1: n2, n2: n1, n_max },
    ))
}

/// One structure-perception-matching layer: the valid scores become node
/// features of the assignment graph, one GCN layer runs over it
/// (X~ = ReLU(D~^-1/2 A~ D~^-1/2 X W_A) with a scalar W_A), and the result
/// is written back into the matrix. Padding stays zero.
pub fn spm_apply(
    tape: &Tape,
    s: &SimilarityMatrix,
    ctx: &SpmContext,
    w_a: Tensor,
) -> SimilarityMatrix {
    assert_eq!(
        (ctx.n1, ctx.n2),
        (s.n1, s.n2),
        "spm_apply: assignment graph is {}x{} but similarity matrix is {}x{}",
        ctx.n1,
        ctx.n2,
        s.n1,
        s.n2
    );
    SPM_EXECUTIONS.fetch_add(1, Ordering::Relaxed);

    let total = s.n_max * s.n_max;
    let idx = valid_flat_indices(s.n1, s.n2, s.n_max);
    let x = tape.gather_rows(tape.reshape(s.scores, total, 1), idx.clone());
    let adj = tape.constant_arc(Arc::clone(&ctx.adj_norm));
    let rectified = tape.relu(tape.mul_scalar(tape.matmul(adj, x), w_a));
    let scores = tape.reshape(tape.scatter_rows(rectified, idx, total), s.n_max, s.n_max);
    SimilarityMatrix { scores, ..*s }
}

/// Reference implementation of the structure-enhanced update, straight from
/// the per-pair description: for every cross-graph pair (i, a), enumerate
/// the structurally relevant set {(j, b) : {i,j} in E1 and {a,b} in E2}
/// plus (i, a) itself, and aggregate with the same degree normalization,
/// scalar weight, and ReLU. Shares no code with [`spm_apply`].
pub fn brute_force_spm(
    scores: &Matrix,
    g1: &NodeGraph,
    g2: &NodeGraph,
    w_a: f64,
) -> Matrix {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    let deg = |g: &NodeGraph, v: usize| -> usize {
        g.edges().iter().filter(|&&(a, b)| a == v || b == v).count()
    };
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for i in 0..n1 {
        for a in 0..n2 {
            let d_self = (deg(g1, i) * deg(g2, a)) as f64 + 1.0;
            let mut acc = scores[(i, a)] / d_self;
            for j in 0..n1 {
                if !g1.has_edge(i, j) {
                    continue;
                }
                for b in 0..n2 {
                    if !g2.has_edge(a, b) {
                        continue;
                    }
                    let d_nb = (deg(g1, j) * deg(g2, b)) as f64 + 1.0;
                    acc += scores[(j, b)] / (d_self * d_nb).sqrt();
                }
            }
            out[(i, a)] = (w_a * acc).max(0.0);
        }
    }
    out
}

/// Self-attention over the valid entries as scalar tokens: each token is
/// lifted to dk via learned 1 -> dk maps, attends over all valid tokens,
/// is projected back to a scalar, and added residually to its input.
/// Padded positions take no part and stay exactly zero.
pub fn matrix_self_attention(
    tape: &Tape,
    bind: &MatcherBind,
    s: &SimilarityMatrix,
) -> SimilarityMatrix {
    let total = s.n_max * s.n_max;
    let idx = valid_flat_indices(s.n1, s.n2, s.n_max);
    let x = tape.gather_rows(tape.reshape(s.scores, total, 1), idx.clone());

    let q = tape.add_row(tape.matmul(x, bind.att_wq), bind.att_bq);
    let k = tape.add_row(tape.matmul(x, bind.att_wk), bind.att_bk);
    let v = tape.add_row(tape.matmul(x, bind.att_wv), bind.att_bv);
    let logits = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / (bind.dk as f64).sqrt());
    let att = tape.row_softmax(logits);
    let proj = tape.add_row(tape.matmul(tape.matmul(att, v), bind.att_wo), bind.att_bo);
    let res = tape.add(x, proj);

    let scores = tape.reshape(tape.scatter_rows(res, idx, total), s.n_max, s.n_max);
    SimilarityMatrix { scores, ..*s }
}

/// Sorted row-sum profile of a block (descending column vector). Sorting
/// makes the profile a function of the row multiset only, which is what
/// keeps the readout exactly invariant to node relabeling.
fn row_profile(tape: &Tape, block: Tensor) -> Tensor {
    let ones = tape.constant(Matrix::ones(block.cols(), 1));
    tape.sort_desc(tape.matmul(block, ones))
}

fn col_profile(tape: &Tape, block: Tensor) -> Tensor {
    let ones = tape.constant(Matrix::ones(1, block.rows()));
    tape.sort_desc(tape.transpose(tape.matmul(ones, block)))
}

/// Pooled feature vector (1 x channels) for one similarity matrix: per conv
/// layer, cross-shaped filters combine each entry's (sorted) row aggregate
/// and column aggregate, followed by ReLU and 2x2 max pooling; after the
/// last layer each channel is mean-pooled to a scalar. `conv` holds the
/// per-layer (row, col) scalar filter banks, each C_out x C_in.
pub fn pooled_features(tape: &Tape, conv: &[(Tensor, Tensor)], s: &SimilarityMatrix) -> Tensor {
    let block = tape.slice(s.scores, 0, 0, s.n1, s.n2);
    let mut channels = vec![block];

    for &(w_row, w_col) in conv {
        let rows = channels[0].rows();
        let cols = channels[0].cols();
        // Stack per-channel profiles: rows x C_in and cols x C_in.
        let mut r_stack = row_profile(tape, channels[0]);
        let mut c_stack = col_profile(tape, channels[0]);
        for &ch in &channels[1..] {
            r_stack = tape.concat_cols(r_stack, row_profile(tape, ch));
            c_stack = tape.concat_cols(c_stack, col_profile(tape, ch));
        }
        // rows x C_out and cols x C_out: each output channel's row/column
        // contributions summed over input channels.
        let rw = tape.matmul(r_stack, tape.transpose(w_row));
        let cw = tape.matmul(c_stack, tape.transpose(w_col));

        let ones_row = tape.constant(Matrix::ones(1, cols));
        let ones_col = tape.constant(Matrix::ones(rows, 1));
        let c_out = w_row.rows();
        let mut next = Vec::with_capacity(c_out);
        for o in 0..c_out {
            let r_part = tape.matmul(tape.slice(rw, 0, o, rows, 1), ones_row);
            let c_part = tape.matmul(ones_col, tape.transpose(tape.slice(cw, 0, o, cols, 1)));
            next.push(tape.max_pool2(tape.relu(tape.add(r_part, c_part))));
        }
        channels = next;
    }

    let mut feats = None;
    for &ch in &channels {
        let cells = (ch.rows() * ch.cols()) as f64;
        let mean = tape.scale(tape.sum(ch), 1.0 / cells);
        feats = Some(match feats {
            None => mean,
            Some(f) => tape.concat_cols(f, mean),
        });
    }
    feats.expect("at least one channel")
}

/// Final prediction: pooled features of both matrices (tied filter
/// weights), concatenated, through the readout MLP and a sigmoid.
pub fn cross_conv_readout(
    tape: &Tape,
    bind: &MatcherBind,
    s1: &SimilarityMatrix,
    s2: &SimilarityMatrix,
) -> Tensor {
    let f1 = pooled_features(tape, &bind.conv, s1);
    let f2 = pooled_features(tape, &bind.conv, s2);
    let feats = tape.concat_cols(f1, f2);
    let mut out = tape.add_row(tape.matmul(feats, bind.mlp_w1), bind.mlp_b1);
    if let (Some(w2), Some(b2)) = (bind.mlp_w2, bind.mlp_b2) {
        out = tape.add_row(tape.matmul(tape.relu(out), w2), b2);
    }
    tape.sigmoid(out)
}
