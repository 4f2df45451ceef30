//! Dominator and post-dominator trees over a control-flow graph.
//!
//! Both trees use the iterative reverse-postorder intersection scheme of
//! Cooper, Harvey and Kennedy. Post-dominance runs the same routine on the
//! reversed graph rooted at a synthesized virtual exit (see [`exit_sources`]).

pub mod oracle;

use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::pcode::PCodeFunction;

/// Immediate-dominator tree. `idom[root]` is `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomTree {
    idom: Vec<Option<usize>>,
    root: usize,
}

/// Immediate post-dominator tree over blocks `0..n` plus the virtual exit `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostDomTree {
    ipdom: Vec<usize>,
    exit: usize,
}

impl DomTree {
    pub(crate) fn from_parents(idom: Vec<Option<usize>>, root: usize) -> Self {
        Self { idom, root }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.idom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idom.is_empty()
    }

    pub fn idom(&self, b: usize) -> Option<usize> {
        self.idom[b]
    }

    /// `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.idom[c];
        }
        false
    }

    /// Tree edges as (parent, child), ordered by child.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.idom
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p, c)))
            .collect()
    }

    /// One `child <- parent` line per non-root block.
    pub fn to_debug_text(&self) -> String {
        let mut s = String::new();
        for (p, c) in self.edges() {
            let _ = writeln!(s, "{c} <- {p}");
        }
        s
    }
}

impl PostDomTree {
    pub(crate) fn from_parents(ipdom: Vec<usize>) -> Self {
        let exit = ipdom.len();
        Self { ipdom, exit }
    }

    /// Id of the virtual exit, equal to the number of real blocks.
    pub fn exit(&self) -> usize {
        self.exit
    }

    pub fn len(&self) -> usize {
        self.ipdom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipdom.is_empty()
    }

    /// Immediate post-dominator of `b`; may be [`Self::exit`].
    pub fn ipdom(&self, b: usize) -> usize {
        self.ipdom[b]
    }

    /// Immediate post-dominator if it is a real block.
    pub fn real_ipdom(&self, b: usize) -> Option<usize> {
        let p = self.ipdom[b];
        (p != self.exit).then_some(p)
    }

    /// `a` post-dominates `b` (reflexive). `a` may be the virtual exit.
    pub fn post_dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            if cur == self.exit {
                return false;
            }
            cur = self.ipdom[cur];
        }
    }

    /// Tree edges (parent, child) including those hanging off the virtual exit.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.ipdom.iter().enumerate().map(|(c, &p)| (p, c)).collect()
    }

    pub fn to_debug_text(&self) -> String {
        let mut s = String::new();
        for (c, &p) in self.ipdom.iter().enumerate() {
            if p == self.exit {
                let _ = writeln!(s, "{c} <- exit");
            } else {
                let _ = writeln!(s, "{c} <- {p}");
            }
        }
        s
    }
}

fn reverse_postorder(succ: &[Vec<usize>], root: usize) -> Vec<usize> {
    let n = succ.len();
    let mut seen = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    seen[root] = true;
    while let Some((node, next)) = stack.last_mut() {
        if let Some(&s) = succ[*node].get(*next) {
            *next += 1;
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(*node);
            stack.pop();
        }
    }
    post.reverse();
    post
}

/// Immediate dominators of every node reachable from `root`; unreachable nodes
/// and the root get `None`.
pub fn immediate_dominators(succ: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let n = succ.len();
    let rpo = reverse_postorder(succ, root);
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut preds = vec![Vec::new(); n];
    for (u, ss) in succ.iter().enumerate() {
        for &v in ss {
            preds[v].push(u);
        }
    }

    const UNDEF: usize = usize::MAX;
    let mut idom = vec![UNDEF; n];
    idom[root] = root;
    let intersect = |idom: &[usize], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a];
            }
            while order[b] > order[a] {
                b = idom[b];
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom = UNDEF;
            for &p in &preds[b] {
                if idom[p] == UNDEF {
                    continue;
                }
                new_idom = if new_idom == UNDEF {
                    p
                } else {
                    intersect(&idom, p, new_idom)
                };
            }
            if idom[b] != new_idom {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }

    idom.into_iter()
        .enumerate()
        .map(|(b, d)| (b != root && d != UNDEF).then_some(d))
        .collect()
}

/// Blocks that receive an edge to the virtual exit: every block without
/// successors, plus the lowest-id block of each terminal strongly connected
/// region from which no such block is reachable.
pub fn exit_sources(succ: &[Vec<usize>]) -> Vec<usize> {
    let n = succ.len();
    let mut sources: Vec<usize> = (0..n).filter(|&b| succ[b].is_empty()).collect();

    let mut preds = vec![Vec::new(); n];
    for (u, ss) in succ.iter().enumerate() {
        for &v in ss {
            preds[v].push(u);
        }
    }
    let mut reaches = vec![false; n];
    let mut work = sources.clone();
    for &s in &sources {
        reaches[s] = true;
    }
    while let Some(v) = work.pop() {
        for &p in &preds[v] {
            if !reaches[p] {
                reaches[p] = true;
                work.push(p);
            }
        }
    }
    if reaches.iter().all(|&r| r) {
        return sources;
    }

    // Everything left over drains into at least one terminal SCC; tying each
    // terminal SCC to the exit makes the whole graph exit-reachable.
    let stranded: Vec<usize> = (0..n).filter(|&b| !reaches[b]).collect();
    let mut local = vec![usize::MAX; n];
    let mut g: DiGraph<usize, ()> = DiGraph::with_capacity(stranded.len(), 0);
    for &b in &stranded {
        local[b] = g.add_node(b).index();
    }
    for &b in &stranded {
        for &s in &succ[b] {
            if local[s] != usize::MAX {
                g.add_edge(NodeIndex::new(local[b]), NodeIndex::new(local[s]), ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![usize::MAX; g.node_count()];
    for (ci, c) in sccs.iter().enumerate() {
        for ix in c {
            comp[ix.index()] = ci;
        }
    }
    for (ci, c) in sccs.iter().enumerate() {
        let terminal = c.iter().all(|ix| {
            g.neighbors(*ix).all(|nb| comp[nb.index()] == ci)
        });
        if terminal {
            let rep = c.iter().map(|ix| g[*ix]).min().expect("SCCs are non-empty");
            sources.push(rep);
        }
    }
    sources.sort_unstable();
    sources
}

/// The CFG reversed and augmented with the virtual exit `n`, which becomes
/// the root.
pub fn reversed_with_exit(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = succ.len();
    let mut rev = vec![Vec::new(); n + 1];
    for (u, ss) in succ.iter().enumerate() {
        for &v in ss {
            rev[v].push(u);
        }
    }
    rev[n] = exit_sources(succ);
    rev
}

pub fn dominator_tree_of(succ: &[Vec<usize>], entry: usize) -> DomTree {
    DomTree::from_parents(immediate_dominators(succ, entry), entry)
}

pub fn post_dominator_tree_of(succ: &[Vec<usize>]) -> PostDomTree {
    let n = succ.len();
    let rev = reversed_with_exit(succ);
    let ipdom = immediate_dominators(&rev, n);
    PostDomTree::from_parents(
        ipdom[..n]
            .iter()
            .map(|p| p.expect("every block reaches the virtual exit"))
            .collect(),
    )
}

pub fn dominator_tree(f: &PCodeFunction) -> DomTree {
    dominator_tree_of(&f.successors(), f.entry())
}

pub fn post_dominator_tree(f: &PCodeFunction) -> PostDomTree {
    post_dominator_tree_of(&f.successors())
}

#[cfg(test)]
pub(crate) use crate::fixtures;
