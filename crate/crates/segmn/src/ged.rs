//! Exact graph edit distance.
//!
//! [`exact_ged_astar`] runs A* over partial node mappings with an admissible
//! lower bound (label-multiset mismatch plus edge-count difference), so the
//! returned cost is the exact minimum. [`brute_force_ged`] independently
//! enumerates every injective mapping of the smaller node set into the
//! larger one and is used to cross-check the search on small graphs.
//!
//! With unit costs an optimal edit script never deletes a node of the
//! smaller graph and separately inserts one in the larger (mapping the two
//! is never worse), so the brute-force enumeration over full injections is
//! exact.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

use crate::graph::NodeGraph;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GedError {
    #[error("graph pair ({n1}, {n2} nodes) too large for exact GED (budget {budget})")]
    TooLarge { n1: usize, n2: usize, budget: usize },
}

/// Edit operation costs. The defaults are the unit-cost model used by the
/// GED regression benchmarks; relabeling is free when labels are equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EditCostModel {
    pub node_insert: u32,
    pub node_delete: u32,
    pub node_relabel: u32,
    pub edge_insert: u32,
    pub edge_delete: u32,
}

impl Default for EditCostModel {
    fn default() -> Self {
        EditCostModel {
            node_insert: 1,
            node_delete: 1,
            node_relabel: 1,
            edge_insert: 1,
            edge_delete: 1,
        }
    }
}

impl EditCostModel {
    fn substitute(&self, l1: Option<u32>, l2: Option<u32>) -> u32 {
        if l1 == l2 {
            0
        } else {
            self.node_relabel
        }
    }

    fn swapped(&self) -> EditCostModel {
        EditCostModel {
            node_insert: self.node_delete,
            node_delete: self.node_insert,
            node_relabel: self.node_relabel,
            edge_insert: self.edge_delete,
            edge_delete: self.edge_insert,
        }
    }
}

pub const DEFAULT_NODE_BUDGET: usize = 10;

/// Mapping target for a processed node of the first graph.
const DELETED: usize = usize::MAX;

#[derive(Clone)]
struct SearchState {
    /// phi[k] for the first `depth` nodes of g1; DELETED marks a deletion.
    mapping: Vec<usize>,
    used: u64,
    cost: u32,
}

/// Exact GED by A* over partial node mappings. Deterministic: the frontier
/// is ordered by (f, insertion sequence).
pub fn exact_ged_astar(
    g1: &NodeGraph,
    g2: &NodeGraph,
    cost: &EditCostModel,
    node_budget: usize,
) -> Result<u32, GedError> {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    if n1.max(n2) > node_budget {
        return Err(GedError::TooLarge { n1, n2, budget: node_budget });
    }

    let e2: HashSet<(usize, usize)> = g2.edges().iter().copied().collect();

    let mut heap: BinaryHeap<Reverse<(u32, u64, usize)>> = BinaryHeap::new();
    let mut arena: Vec<SearchState> = Vec::new();
    let mut seq: u64 = 0;

    let root = SearchState { mapping: Vec::new(), used: 0, cost: 0 };
    let h0 = lower_bound(g1, g2, &root, cost);
    arena.push(root);
    heap.push(Reverse((h0, seq, 0)));

    while let Some(Reverse((f, _, idx))) = heap.pop() {
        let state = arena[idx].clone();
        let depth = state.mapping.len();
        if depth == n1 {
            // All g1 nodes processed; the heuristic is exact here (pure
            // insertion of whatever remains of g2), so f is the answer.
            return Ok(f);
        }

        // Map node `depth` of g1 to each unused g2 node, or delete it.
        for target in (0..n2).map(Some).chain([None]) {
            if let Some(v) = target {
                if state.used & (1 << v) != 0 {
                    continue;
                }
            }
            let mut child = state.clone();
            let step = match target {
                Some(v) => {
                    child.used |= 1 << v;
                    child.mapping.push(v);
                    transition_cost(g1, g2, &e2, &child.mapping, depth, v, cost)
                }
                None => {
                    child.mapping.push(DELETED);
                    transition_cost(g1, g2, &e2, &child.mapping, depth, DELETED, cost)
                }
            };
            child.cost = state.cost + step;
            let h = lower_bound(g1, g2, &child, cost);
            let f_child = child.cost + h;
            seq += 1;
            arena.push(child);
            heap.push(Reverse((f_child, seq, arena.len() - 1)));
        }
    }
    unreachable!("A* frontier exhausted without reaching a complete mapping");
}

/// Cost of processing g1 node `k` (mapped to `target` or deleted): the node
/// operation itself plus every edit on edges between `k` and the already
/// processed nodes.
fn transition_cost(
    g1: &NodeGraph,
    g2: &NodeGraph,
    e2: &HashSet<(usize, usize)>,
    mapping: &[usize],
    k: usize,
    target: usize,
    cost: &EditCostModel,
) -> u32 {
    let mut c = if target == DELETED {
        cost.node_delete
    } else {
        cost.substitute(g1.label(k), g2.label(target))
    };
    for (i, &phi_i) in mapping.iter().enumerate().take(k) {
        let has_e1 = g1.has_edge(i, k);
        if target == DELETED || phi_i == DELETED {
            if has_e1 {
                c += cost.edge_delete;
            }
            continue;
        }
        let key = (phi_i.min(target), phi_i.max(target));
        let has_e2 = e2.contains(&key);
        match (has_e1, has_e2) {
            (true, false) => c += cost.edge_delete,
            (false, true) => c += cost.edge_insert,
            _ => {}
        }
    }
    c
}

/// Admissible remaining-cost bound: unmatched node count plus label-multiset
/// mismatch, plus the difference of unaccounted edge counts.
fn lower_bound(g1: &NodeGraph, g2: &NodeGraph, state: &SearchState, cost: &EditCostModel) -> u32 {
    let depth = state.mapping.len();
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    let r1 = n1 - depth;
    let r2 = n2 - state.used.count_ones() as usize;

    // Node part: k = min(r1, r2) pairs may be substituted; the rest must be
    // deleted/inserted. Pairs beyond the label-multiset intersection cost at
    // least min(relabel, delete + insert).
    let k = r1.min(r2);
    let mut remaining1: Vec<Option<u32>> = (depth..n1).map(|v| g1.label(v)).collect();
    let mut inter = 0usize;
    for v in 0..n2 {
        if state.used & (1 << v) != 0 {
            continue;
        }
        let l2 = g2.label(v);
        if let Some(pos) = remaining1.iter().position(|&l| l == l2) {
            remaining1.swap_remove(pos);
            inter += 1;
        }
    }
    let mismatch_unit = cost.node_relabel.min(cost.node_delete + cost.node_insert);
    let node_lb = (r1 - k) as u32 * cost.node_delete
        + (r2 - k) as u32 * cost.node_insert
        + (k.saturating_sub(inter)) as u32 * mismatch_unit;

    // Edge part: edges not yet accounted for are those with at least one
    // unprocessed endpoint (g1) or at least one endpoint that is not the
    // image of a processed node (g2).
    let m1r = g1.edges().iter().filter(|&&(i, j)| i >= depth || j >= depth).count();
    let m2r = g2
        .edges()
        .iter()
        .filter(|&&(a, b)| state.used & (1 << a) == 0 || state.used & (1 << b) == 0)
        .count();
    let edge_lb = if m1r >= m2r {
        (m1r - m2r) as u32 * cost.edge_delete
    } else {
        (m2r - m1r) as u32 * cost.edge_insert
    };

    node_lb + edge_lb
}

pub const BRUTE_FORCE_NODE_LIMIT: usize = 6;

/// Exact GED by exhaustive enumeration of injective node mappings from the
/// smaller graph into the larger. Only feasible for tiny graphs.
pub fn brute_force_ged(
    g1: &NodeGraph,
    g2: &NodeGraph,
    cost: &EditCostModel,
) -> Result<u32, GedError> {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    if n1.max(n2) > BRUTE_FORCE_NODE_LIMIT {
        return Err(GedError::TooLarge { n1, n2, budget: BRUTE_FORCE_NODE_LIMIT });
    }
    if n1 > n2 {
        return brute_force_ged(g2, g1, &cost.swapped());
    }

    let e2: HashSet<(usize, usize)> = g2.edges().iter().copied().collect();
    let m1 = g1.num_edges() as u32;
    let m2 = g2.num_edges() as u32;

    let mut best = u32::MAX;
    let mut phi = vec![usize::MAX; n1];
    let mut used = vec![false; n2];
    enumerate_injections(0, n1, n2, &mut phi, &mut used, &mut |phi| {
        let mut c = (n2 - n1) as u32 * cost.node_insert;
        for (v, &pv) in phi.iter().enumerate() {
            c += cost.substitute(g1.label(v), g2.label(pv));
        }
        let mut matched = 0u32;
        for &(i, j) in g1.edges() {
            let key = (phi[i].min(phi[j]), phi[i].max(phi[j]));
            if e2.contains(&key) {
                matched += 1;
            }
        }
        c += (m1 - matched) * cost.edge_delete + (m2 - matched) * cost.edge_insert;
        best = best.min(c);
    });
    Ok(best)
}

fn enumerate_injections(
    pos: usize,
    n1: usize,
    n2: usize,
    phi: &mut Vec<usize>,
    used: &mut Vec<bool>,
    visit: &mut impl FnMut(&[usize]),
) {
    if pos == n1 {
        visit(phi);
        return;
    }
    for v in 0..n2 {
        if used[v] {
            continue;
        }
        used[v] = true;
        phi[pos] = v;
        enumerate_injections(pos + 1, n1, n2, phi, used, visit);
        used[v] = false;
    }
}

/// Maps a GED value to the (0, 1] regression target:
/// y = exp(-ged / ((n1 + n2) / 2)). y = 1 exactly when ged = 0.
pub fn normalized_target(ged: u32, n1: usize, n2: usize) -> f64 {
    (-(ged as f64) / ((n1 + n2) as f64 / 2.0)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> NodeGraph {
        NodeGraph::new("t", n, edges, None).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, labels: Option<u32>) -> NodeGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let labs = labels.map(|k| (0..n).map(|_| rng.gen_range(0..k)).collect());
        NodeGraph::new("r", n, &edges, labs).unwrap()
    }

    #[test]
    fn ged_of_identical_graph_is_zero() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let cost = EditCostModel::default();
        assert_eq!(exact_ged_astar(&g, &g, &cost, 10).unwrap(), 0);
        assert_eq!(brute_force_ged(&g, &g, &cost).unwrap(), 0);
    }

    #[test]
    fn k2_to_p3_is_two() {
        // Insert one node and one edge.
        let k2 = graph(2, &[(0, 1)]);
        let p3 = graph(3, &[(0, 1), (1, 2)]);
        let cost = EditCostModel::default();
        assert_eq!(brute_force_ged(&k2, &p3, &cost).unwrap(), 2);
        assert_eq!(exact_ged_astar(&k2, &p3, &cost, 10).unwrap(), 2);
    }

    #[test]
    fn k3_to_p3_is_one() {
        // Delete one edge.
        let k3 = graph(3, &[(0, 1), (0, 2), (1, 2)]);
        let p3 = graph(3, &[(0, 1), (1, 2)]);
        let cost = EditCostModel::default();
        assert_eq!(brute_force_ged(&k3, &p3, &cost).unwrap(), 1);
        assert_eq!(exact_ged_astar(&k3, &p3, &cost, 10).unwrap(), 1);
    }

    #[test]
    fn single_label_difference_costs_one() {
        let a = NodeGraph::new("a", 2, &[(0, 1)], Some(vec![0, 1])).unwrap();
        let b = NodeGraph::new("b", 2, &[(0, 1)], Some(vec![0, 2])).unwrap();
        let cost = EditCostModel::default();
        assert_eq!(brute_force_ged(&a, &b, &cost).unwrap(), 1);
        assert_eq!(exact_ged_astar(&a, &b, &cost, 10).unwrap(), 1);
    }

    #[test]
    fn astar_matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cost = EditCostModel::default();
        for trial in 0..60 {
            let labels = if trial % 2 == 0 { Some(3) } else { None };
            let (n1, n2) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let g1 = random_graph(&mut rng, n1, 0.4, labels);
            let g2 = random_graph(&mut rng, n2, 0.4, labels);
            let a = exact_ged_astar(&g1, &g2, &cost, 10).unwrap();
            let b = brute_force_ged(&g1, &g2, &cost).unwrap();
            assert_eq!(a, b, "trial {trial}: astar {a} vs brute {b}");
        }
    }

    #[test]
    fn ged_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cost = EditCostModel::default();
        for _ in 0..40 {
            let (n1, n2) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
            let g1 = random_graph(&mut rng, n1, 0.4, None);
            let g2 = random_graph(&mut rng, n2, 0.4, None);
            assert_eq!(
                exact_ged_astar(&g1, &g2, &cost, 10).unwrap(),
                exact_ged_astar(&g2, &g1, &cost, 10).unwrap()
            );
        }
    }

    #[test]
    fn triangle_inequality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cost = EditCostModel::default();
        for _ in 0..25 {
            let (na, nb, nc) =
                (rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(2..=5));
            let a = random_graph(&mut rng, na, 0.4, Some(2));
            let b = random_graph(&mut rng, nb, 0.4, Some(2));
            let c = random_graph(&mut rng, nc, 0.4, Some(2));
            let ab = exact_ged_astar(&a, &b, &cost, 10).unwrap();
            let bc = exact_ged_astar(&b, &c, &cost, 10).unwrap();
            let ac = exact_ged_astar(&a, &c, &cost, 10).unwrap();
            assert!(ac <= ab + bc, "triangle violated: {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn budget_exceeded_is_an_error() {
        let g = graph(11, &[]);
        let small = graph(2, &[]);
        let err = exact_ged_astar(&g, &small, &EditCostModel::default(), 10).unwrap_err();
        assert_eq!(err, GedError::TooLarge { n1: 11, n2: 2, budget: 10 });
        let err = brute_force_ged(&g, &small, &EditCostModel::default()).unwrap_err();
        assert_eq!(err, GedError::TooLarge { n1: 11, n2: 2, budget: 6 });
    }

    #[test]
    fn normalized_target_values() {
        assert_eq!(normalized_target(0, 5, 7), 1.0);
        // ged = 2 with mean node count 2.5.
        assert!((normalized_target(2, 2, 3) - (-0.8f64).exp()).abs() < 1e-12);
        assert!((normalized_target(2, 2, 3) - 0.449_329).abs() < 1e-6);
        // Strictly decreasing in ged.
        let mut prev = normalized_target(0, 4, 4);
        for ged in 1..10 {
            let y = normalized_target(ged, 4, 4);
            assert!(y < prev);
            prev = y;
        }
    }
}
