//! Brute-force dominance by simple-path enumeration.
//!
//! `a` dominates `b` when `a` lies on every simple path from the entry to
//! `b`; post-dominance is the same over paths to the virtual exit. The exit
//! augmentation is recomputed here from a transitive closure so the oracle
//! shares no code with the fast path.

use super::{DomTree, PostDomTree};
use crate::error::{Error, Result};

pub const MAX_ORACLE_BLOCKS: usize = 14;

fn closure(succ: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = succ.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
        for &s in &succ[i] {
            row[s] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

fn exit_edges(succ: &[Vec<usize>]) -> Vec<usize> {
    let n = succ.len();
    let reach = closure(succ);
    let returns: Vec<usize> = (0..n).filter(|&b| succ[b].is_empty()).collect();
    let mut out = returns.clone();
    let stranded: Vec<usize> = (0..n)
        .filter(|&b| !returns.iter().any(|&r| reach[b][r]))
        .collect();
    for &b in &stranded {
        let region: Vec<usize> = stranded
            .iter()
            .copied()
            .filter(|&c| reach[b][c] && reach[c][b])
            .collect();
        let closed = stranded
            .iter()
            .all(|&c| !reach[b][c] || region.contains(&c));
        if closed && region.iter().min() == Some(&b) {
            out.push(b);
        }
    }
    out.sort_unstable();
    out
}

/// Calls `visit(end, path_mask)` for every simple path starting at `start`.
fn for_each_simple_path(succ: &[Vec<usize>], start: usize, visit: &mut impl FnMut(usize, u32)) {
    fn go(succ: &[Vec<usize>], v: usize, mask: u32, visit: &mut impl FnMut(usize, u32)) {
        visit(v, mask);
        for &s in &succ[v] {
            if mask & (1 << s) == 0 {
                go(succ, s, mask | (1 << s), visit);
            }
        }
    }
    go(succ, start, 1 << start, visit);
}

/// Picks the immediate dominator out of full dominator sets: the strict
/// dominator that every other strict dominator also dominates.
fn immediate(sets: &[u32], node: usize) -> Option<usize> {
    let strict = sets[node] & !(1 << node);
    (0..sets.len())
        .filter(|&d| strict & (1 << d) != 0)
        .max_by_key(|&d| sets[d].count_ones())
}

pub fn dominance_oracle(succ: &[Vec<usize>], entry: usize) -> Result<(DomTree, PostDomTree)> {
    let n = succ.len();
    if n > MAX_ORACLE_BLOCKS {
        return Err(Error::SizeLimit {
            what: "dominance oracle CFG",
            actual: n,
            limit: MAX_ORACLE_BLOCKS,
        });
    }
    if n == 0 {
        return Err(Error::Empty("CFG has no blocks".into()));
    }

    let mut dom = vec![u32::MAX; n];
    for_each_simple_path(succ, entry, &mut |end, mask| dom[end] &= mask);
    let idom: Vec<Option<usize>> = (0..n)
        .map(|b| if b == entry { None } else { immediate(&dom, b) })
        .collect();

    let exit = n;
    let mut aug: Vec<Vec<usize>> = succ.to_vec();
    aug.push(Vec::new());
    for b in exit_edges(succ) {
        aug[b].push(exit);
    }
    let mut pdom = vec![u32::MAX; n + 1];
    pdom[exit] = 1 << exit;
    for (start, slot) in pdom.iter_mut().enumerate().take(n) {
        let mut acc = u32::MAX;
        for_each_simple_path(&aug, start, &mut |end, mask| {
            if end == exit {
                acc &= mask;
            }
        });
        *slot = acc;
    }
    let ipdom: Vec<usize> = (0..n)
        .map(|b| immediate(&pdom, b).expect("exit post-dominates every block"))
        .collect();

    Ok((DomTree::from_parents(idom, entry), PostDomTree::from_parents(ipdom)))
}
