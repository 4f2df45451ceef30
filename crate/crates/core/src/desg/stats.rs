use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Desg, EdgeKind, NodeKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DesgStats {
    pub graphs: usize,
    pub nodes: usize,
    pub edges: usize,
    pub node_kinds: BTreeMap<NodeKind, usize>,
    pub edge_kinds: BTreeMap<EdgeKind, usize>,
    /// Distinct node attribute tokens.
    pub vocab: usize,
}

fn tally<'a>(graphs: impl IntoIterator<Item = &'a Desg>) -> DesgStats {
    let mut s = DesgStats {
        node_kinds: NodeKind::ALL.iter().map(|&k| (k, 0)).collect(),
        edge_kinds: EdgeKind::ALL.iter().map(|&k| (k, 0)).collect(),
        ..Default::default()
    };
    let mut vocab = BTreeSet::new();
    for g in graphs {
        s.graphs += 1;
        s.nodes += g.nodes.len();
        s.edges += g.edges.len();
        for n in &g.nodes {
            *s.node_kinds.entry(n.kind).or_default() += 1;
            vocab.insert(n.attr.as_str());
        }
        for e in &g.edges {
            *s.edge_kinds.entry(e.kind).or_default() += 1;
        }
    }
    s.vocab = vocab.len();
    s
}

pub fn desg_stats(g: &Desg) -> DesgStats {
    tally(std::iter::once(g))
}

/// Aggregate statistics; an empty collection is an error.
pub fn corpus_stats(graphs: &[Desg]) -> Result<DesgStats> {
    if graphs.is_empty() {
        return Err(Error::Empty("no graphs to summarize".into()));
    }
    Ok(tally(graphs))
}

#[cfg(test)]
mod tests {
    use super::super::{build_desg, fixtures};
    use super::*;

    #[test]
    fn histogram_sums() {
        let g = build_desg(&fixtures::motivating());
        let s = desg_stats(&g);
        assert_eq!(s.node_kinds.values().sum::<usize>(), g.nodes.len());
        assert_eq!(s.edge_kinds.values().sum::<usize>(), g.edges.len());
        assert_eq!(s.edge_kinds[&EdgeKind::Dominate], 7 - 1);
    }

    #[test]
    fn empty_corpus() {
        assert!(corpus_stats(&[]).is_err());
        let g = build_desg(&fixtures::two_block());
        assert_eq!(corpus_stats(&[g.clone(), g]).unwrap().graphs, 2);
    }
}
