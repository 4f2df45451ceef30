//! Graph edit distance under unit costs.
//!
//! [`ged_exact`] enumerates every node mapping and is limited to tiny
//! graphs. [`ged_approx`] solves a node assignment on local costs (label,
//! in/out degree, and agreement of Weisfeiler-Lehman colours as a tie
//! breaker), improves it by local search, and then counts the edits that
//! assignment actually implies, so its result is always an upper bound on
//! the exact distance.

mod assignment;
mod stability;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dominance::{dominator_tree, DomTree};
use crate::error::{Error, Result};
use crate::pcode::PCodeFunction;

pub use assignment::min_cost_assignment;
pub use stability::{stability_report, BucketRow, PairGed, StabilityReport, DEFAULT_BOUNDARIES};

pub const MAX_EXACT_NODES: usize = 6;

/// Assignment results on graphs up to this many combined nodes are improved
/// by pairwise swaps.
const SWAP_REFINE_LIMIT: usize = 48;

/// Nodes per side up to which the local search also tries 3-cycles.
const ROTATE_REFINE_LIMIT: usize = 12;

/// Colour refinement rounds and the cost of disagreeing in one of them. Kept
/// below the half-unit granularity of the degree term so colours only break
/// ties between otherwise equal candidates.
const WL_ROUNDS: usize = 3;
const WL_WEIGHT: f64 = 0.04;

/// Simple directed graph with string node labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledGraph {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl LabeledGraph {
    /// Builds a graph, dropping duplicate edges.
    pub fn new(labels: Vec<String>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();
        debug_assert!(edges.iter().all(|&(s, d)| s < labels.len() && d < labels.len()));
        Self { labels, edges }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }
}

/// How CFG nodes are labelled for edit-distance purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// `ceil(log2(op count))` of the block.
    #[default]
    OpCountLog2,
    /// Every node has the same label.
    NoLabels,
}

fn block_label(op_count: usize, mode: LabelMode) -> String {
    match mode {
        LabelMode::NoLabels => "_".to_string(),
        LabelMode::OpCountLog2 => {
            let bits = usize::BITS - op_count.max(1).saturating_sub(1).leading_zeros();
            bits.to_string()
        }
    }
}

fn block_labels(f: &PCodeFunction, mode: LabelMode) -> Vec<String> {
    f.blocks().iter().map(|b| block_label(b.ops.len(), mode)).collect()
}

pub fn cfg_graph(f: &PCodeFunction, mode: LabelMode) -> LabeledGraph {
    let edges = f
        .blocks()
        .iter()
        .flat_map(|b| b.successors.iter().map(move |&s| (b.id, s)));
    LabeledGraph::new(block_labels(f, mode), edges)
}

pub fn dom_tree_graph(f: &PCodeFunction, dt: &DomTree, mode: LabelMode) -> LabeledGraph {
    LabeledGraph::new(block_labels(f, mode), dt.edges())
}

pub fn dtree_graph(f: &PCodeFunction, mode: LabelMode) -> LabeledGraph {
    dom_tree_graph(f, &dominator_tree(f), mode)
}

/// Cost of the edit path induced by `map[i]` (target node in `b`, or `None`
/// for deletion).
pub fn induced_cost(a: &LabeledGraph, b: &LabeledGraph, map: &[Option<usize>]) -> usize {
    let mut cost = 0usize;
    let mut image = vec![false; b.node_count()];
    for (i, m) in map.iter().enumerate() {
        match m {
            Some(j) => {
                image[*j] = true;
                if a.labels[i] != b.labels[*j] {
                    cost += 1;
                }
            }
            None => cost += 1,
        }
    }
    cost += image.iter().filter(|&&x| !x).count();

    let b_edges: HashSet<(usize, usize)> = b.edges.iter().copied().collect();
    let mut kept = 0usize;
    for &(s, d) in &a.edges {
        match (map[s], map[d]) {
            (Some(x), Some(y)) if b_edges.contains(&(x, y)) => kept += 1,
            _ => cost += 1,
        }
    }
    cost + (b.edges.len() - kept)
}

/// Exact edit distance by exhaustive mapping search.
pub fn ged_exact(a: &LabeledGraph, b: &LabeledGraph) -> Result<usize> {
    let n = a.node_count().max(b.node_count());
    if n > MAX_EXACT_NODES {
        return Err(Error::SizeLimit {
            what: "exact GED graph",
            actual: n,
            limit: MAX_EXACT_NODES,
        });
    }
    fn go(
        a: &LabeledGraph,
        b: &LabeledGraph,
        i: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut usize,
    ) {
        if i == a.node_count() {
            *best = (*best).min(induced_cost(a, b, map));
            return;
        }
        for j in 0..b.node_count() {
            if !used[j] {
                used[j] = true;
                map[i] = Some(j);
                go(a, b, i + 1, map, used, best);
                used[j] = false;
            }
        }
        map[i] = None;
        go(a, b, i + 1, map, used, best);
    }
    let mut best = usize::MAX;
    go(
        a,
        b,
        0,
        &mut vec![None; a.node_count()],
        &mut vec![false; b.node_count()],
        &mut best,
    );
    Ok(best)
}

fn degrees(g: &LabeledGraph) -> (Vec<usize>, Vec<usize>) {
    let mut out = vec![0; g.node_count()];
    let mut inc = vec![0; g.node_count()];
    for &(s, d) in &g.edges {
        out[s] += 1;
        inc[d] += 1;
    }
    (out, inc)
}

/// Weisfeiler-Lehman colours of both graphs over a shared palette:
/// `colors[r][v]` after `r + 1` rounds.
fn wl_colors(a: &LabeledGraph, b: &LabeledGraph) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    type Sig = (usize, Vec<usize>, Vec<usize>);
    fn adjacency(g: &LabeledGraph) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut out = vec![Vec::new(); g.node_count()];
        let mut inc = vec![Vec::new(); g.node_count()];
        for &(s, d) in &g.edges {
            out[s].push(d);
            inc[d].push(s);
        }
        (out, inc)
    }
    fn step(
        prev: &[usize],
        adj: &(Vec<Vec<usize>>, Vec<Vec<usize>>),
        palette: &mut HashMap<Sig, usize>,
    ) -> Vec<usize> {
        (0..prev.len())
            .map(|v| {
                let mut o: Vec<usize> = adj.0[v].iter().map(|&u| prev[u]).collect();
                let mut i: Vec<usize> = adj.1[v].iter().map(|&u| prev[u]).collect();
                o.sort_unstable();
                i.sort_unstable();
                let next = palette.len();
                *palette.entry((prev[v], o, i)).or_insert(next)
            })
            .collect()
    }
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut base = |g: &LabeledGraph| -> Vec<usize> {
        g.labels
            .iter()
            .map(|l| {
                let next = labels.len();
                *labels.entry(l.clone()).or_insert(next)
            })
            .collect()
    };
    let (mut ca, mut cb) = (base(a), base(b));
    let (adj_a, adj_b) = (adjacency(a), adjacency(b));
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for _ in 0..WL_ROUNDS {
        let mut palette = HashMap::new();
        ca = step(&ca, &adj_a, &mut palette);
        cb = step(&cb, &adj_b, &mut palette);
        ra.push(ca.clone());
        rb.push(cb.clone());
    }
    (ra, rb)
}

fn approx_directed(a: &LabeledGraph, b: &LabeledGraph) -> usize {
    let (n, m) = (a.node_count(), b.node_count());
    let size = n + m;
    if size == 0 {
        return 0;
    }
    const FORBIDDEN: f64 = 1e9;
    let (a_out, a_in) = degrees(a);
    let (b_out, b_in) = degrees(b);
    let (wl_a, wl_b) = wl_colors(a, b);
    let mut cost = vec![vec![0.0f64; size]; size];
    for i in 0..n {
        for j in 0..m {
            let relabel = if a.labels[i] == b.labels[j] { 0.0 } else { 1.0 };
            let edges = (a_out[i].abs_diff(b_out[j]) + a_in[i].abs_diff(b_in[j])) as f64;
            let wl = (0..WL_ROUNDS).filter(|&r| wl_a[r][i] != wl_b[r][j]).count() as f64;
            cost[i][j] = relabel + 0.5 * edges + WL_WEIGHT * wl;
        }
        for k in 0..n {
            cost[i][m + k] = if k == i {
                1.0 + 0.5 * (a_out[i] + a_in[i]) as f64
            } else {
                FORBIDDEN
            };
        }
    }
    for j in 0..m {
        for k in 0..m {
            cost[n + j][k] = if k == j {
                1.0 + 0.5 * (b_out[j] + b_in[j]) as f64
            } else {
                FORBIDDEN
            };
        }
    }
    let col = min_cost_assignment(&cost);
    let mut map: Vec<Option<usize>> = (0..n).map(|i| (col[i] < m).then_some(col[i])).collect();
    let mut best = induced_cost(a, b, &map);
    if size <= SWAP_REFINE_LIMIT {
        best = refine_by_swaps(a, b, &mut map, best);
    }
    best
}

/// First-improvement local search over pairwise target swaps and moves to
/// unused target nodes; on small graphs, 3-cycles of targets once swaps are
/// exhausted.
fn refine_by_swaps(
    a: &LabeledGraph,
    b: &LabeledGraph,
    map: &mut [Option<usize>],
    mut best: usize,
) -> usize {
    let n = map.len();
    let mut improved = true;
    while improved && best > 0 {
        improved = false;
        for i in 0..n {
            for k in i + 1..n {
                if map[i] == map[k] {
                    continue;
                }
                map.swap(i, k);
                let c = induced_cost(a, b, map);
                if c < best {
                    best = c;
                    improved = true;
                } else {
                    map.swap(i, k);
                }
            }
            let mut used = vec![false; b.node_count()];
            for t in map.iter().flatten() {
                used[*t] = true;
            }
            for j in 0..b.node_count() {
                if used[j] {
                    continue;
                }
                let old = map[i];
                map[i] = Some(j);
                let c = induced_cost(a, b, map);
                if c < best {
                    best = c;
                    improved = true;
                    used[j] = true;
                    if let Some(o) = old {
                        used[o] = false;
                    }
                } else {
                    map[i] = old;
                }
            }
        }
        if !improved && best > 0 && n <= ROTATE_REFINE_LIMIT {
            improved = rotate_once(a, b, map, &mut best);
        }
    }
    best
}

/// Applies the first improving 3-cycle `i -> j -> k -> i` of targets.
fn rotate_once(a: &LabeledGraph, b: &LabeledGraph, map: &mut [Option<usize>], best: &mut usize) -> bool {
    let n = map.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for (x, y, z) in [(i, j, k), (i, k, j)] {
                    let (mx, my, mz) = (map[x], map[y], map[z]);
                    if mx == my || my == mz || mx == mz {
                        continue;
                    }
                    map[x] = my;
                    map[y] = mz;
                    map[z] = mx;
                    let c = induced_cost(a, b, map);
                    if c < *best {
                        *best = c;
                        return true;
                    }
                    map[x] = mx;
                    map[y] = my;
                    map[z] = mz;
                }
            }
        }
    }
    false
}

/// Assignment-based upper bound on the edit distance. Symmetric: the smaller
/// of the two directed estimates is returned.
pub fn ged_approx(a: &LabeledGraph, b: &LabeledGraph) -> usize {
    approx_directed(a, b).min(approx_directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(labels: &[&str], edges: &[(usize, usize)]) -> LabeledGraph {
        LabeledGraph::new(
            labels.iter().map(|s| s.to_string()).collect(),
            edges.iter().copied(),
        )
    }

    #[test]
    fn identity_is_zero() {
        let a = g(&["a", "b", "c"], &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(ged_exact(&a, &a).unwrap(), 0);
        assert_eq!(ged_approx(&a, &a), 0);
    }

    #[test]
    fn isolated_node_insertion() {
        let a = g(&["a", "b"], &[(0, 1)]);
        let b = g(&["a", "b", "z"], &[(0, 1)]);
        assert_eq!(ged_exact(&a, &b).unwrap(), 1);
        assert_eq!(ged_approx(&a, &b), 1);
    }

    #[test]
    fn single_relabel() {
        let a = g(&["a", "b", "c"], &[(0, 1), (0, 2)]);
        let b = g(&["a", "x", "c"], &[(0, 1), (0, 2)]);
        assert_eq!(ged_exact(&a, &b).unwrap(), 1);
        assert_eq!(ged_approx(&a, &b), 1);
    }

    #[test]
    fn empty_graphs() {
        let e = g(&[], &[]);
        let a = g(&["a"], &[(0, 0)]);
        assert_eq!(ged_exact(&e, &e).unwrap(), 0);
        assert_eq!(ged_exact(&e, &a).unwrap(), 2);
        assert_eq!(ged_approx(&a, &e), 2);
    }

    #[test]
    fn exact_size_cap() {
        let big = g(&["a"; 7], &[]);
        assert!(matches!(ged_exact(&big, &big), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn log2_labels() {
        assert_eq!(block_label(1, LabelMode::OpCountLog2), "0");
        assert_eq!(block_label(2, LabelMode::OpCountLog2), "1");
        assert_eq!(block_label(3, LabelMode::OpCountLog2), "2");
        assert_eq!(block_label(4, LabelMode::OpCountLog2), "2");
        assert_eq!(block_label(5, LabelMode::OpCountLog2), "3");
        assert_eq!(block_label(9, LabelMode::NoLabels), "_");
    }

    #[test]
    fn approx_bounds_exact_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let labels = ["p", "q"];
        let rand_graph = |rng: &mut rand_chacha::ChaCha8Rng| {
            let n = rng.gen_range(0..=5);
            let ls: Vec<String> = (0..n).map(|_| labels[rng.gen_range(0..2)].to_string()).collect();
            let mut es = Vec::new();
            for s in 0..n {
                for d in 0..n {
                    if rng.gen_bool(0.25) {
                        es.push((s, d));
                    }
                }
            }
            LabeledGraph::new(ls, es)
        };
        for _ in 0..60 {
            let a = rand_graph(&mut rng);
            let b = rand_graph(&mut rng);
            let exact = ged_exact(&a, &b).unwrap();
            let approx = ged_approx(&a, &b);
            assert!(approx >= exact, "{approx} < {exact}");
            assert_eq!(approx, ged_approx(&b, &a));
            assert_eq!(exact, ged_exact(&b, &a).unwrap());
        }
    }
}
