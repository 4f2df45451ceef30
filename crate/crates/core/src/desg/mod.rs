//! Dominance-enhanced semantic graph (DESG) construction.
//!
//! Construction runs in stages, each exposed for testing:
//!
//! 1. [`build_isg`]: one node per P-Code op with data (def-use) and effect
//!    (memory ordering) edges between ops.
//! 2. [`build_tsg`]: every op split into an opcode token and operand tokens;
//!    data edges now run between tokens, effect edges between opcode tokens.
//! 3. [`build_bbsg`]: one virtual node per basic block with dominate and
//!    post-dominate edges taken from the two trees.
//! 4. [`build_desg`]: the two graphs merged with contain edges from each block
//!    node to the opcode tokens of its ops.
//!
//! The control-flow edges themselves never appear in the result.

mod serialize;
mod stats;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dominance::{dominator_tree, post_dominator_tree, DomTree, PostDomTree};
use crate::pcode::{normalize_varnode, FunctionMeta, Opcode, PCodeFunction, Space, Varnode};

pub use serialize::{from_json, to_json, DesgDoc, DESG_FORMAT_VERSION};
pub use stats::{corpus_stats, desg_stats, DesgStats};

/// Block indices at or above this share the `BB_OVF` attribute.
pub const BBLOCK_ATTR_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Bblock,
    Opcode,
    Operand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Data,
    Effect,
    Contain,
    Dominate,
    Postdominate,
}

/// Operand position carried by data edges; `None` for every other kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgePos {
    None,
    Out,
    In1,
    In2plus,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::Bblock, NodeKind::Opcode, NodeKind::Operand];
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::Data,
        EdgeKind::Effect,
        EdgeKind::Contain,
        EdgeKind::Dominate,
        EdgeKind::Postdominate,
    ];
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Bblock => "bblock",
            NodeKind::Opcode => "opcode",
            NodeKind::Operand => "operand",
        })
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Data => "data",
            EdgeKind::Effect => "effect",
            EdgeKind::Contain => "contain",
            EdgeKind::Dominate => "dominate",
            EdgeKind::Postdominate => "postdominate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesgNode {
    pub id: usize,
    pub kind: NodeKind,
    pub attr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DesgEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub pos: EdgePos,
}

impl DesgEdge {
    pub fn new(src: usize, dst: usize, kind: EdgeKind, pos: EdgePos) -> Self {
        Self { src, dst, kind, pos }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Desg {
    pub name: String,
    pub meta: FunctionMeta,
    pub nodes: Vec<DesgNode>,
    /// Sorted lexicographically by (src, dst, kind, pos), no duplicates.
    pub edges: Vec<DesgEdge>,
}

impl Desg {
    pub fn group_id(&self) -> String {
        format!("{}::{}", self.meta.project, self.name)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Relabels node `i` as `perm[i]`. Used to check that downstream
    /// consumers do not depend on node order.
    pub fn permuted(&self, perm: &[usize]) -> Desg {
        assert_eq!(perm.len(), self.nodes.len(), "permutation length");
        let mut nodes = self.nodes.clone();
        for (old, n) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = DesgNode {
                id: perm[old],
                ..n.clone()
            };
        }
        let mut edges: Vec<DesgEdge> = self
            .edges
            .iter()
            .map(|e| DesgEdge::new(perm[e.src], perm[e.dst], e.kind, e.pos))
            .collect();
        edges.sort_unstable();
        Desg {
            name: self.name.clone(),
            meta: self.meta.clone(),
            nodes,
            edges,
        }
    }
}

/// Position of an op inside a function: (block id, index within block).
pub type OpRef = (usize, usize);

/// Instruction-level semantic graph.
#[derive(Debug, Clone)]
pub struct Isg {
    /// Ops in program order (block order, then op order).
    pub ops: Vec<OpRef>,
    /// Resolved defining op for each input of each op (indices into `ops`).
    pub defs: Vec<Vec<Option<usize>>>,
    /// (consumer, producer), deduplicated.
    pub data_edges: Vec<(usize, usize)>,
    /// (later, earlier) memory-ordering edges.
    pub effect_edges: Vec<(usize, usize)>,
}

/// Token-level semantic graph (no block nodes yet).
#[derive(Debug, Clone)]
pub struct Tsg {
    pub nodes: Vec<(NodeKind, String)>,
    /// Opcode node of each op, parallel to [`Isg::ops`].
    pub opcode_node: Vec<usize>,
    pub edges: Vec<DesgEdge>,
}

/// Basic-block-level semantic graph: node `i` is block `i`.
#[derive(Debug, Clone)]
pub struct Bbsg {
    pub attrs: Vec<String>,
    pub edges: Vec<DesgEdge>,
}

fn defines(v: &Varnode) -> bool {
    v.space != Space::Const
}

pub fn build_isg(f: &PCodeFunction) -> Isg {
    let mut ops = Vec::with_capacity(f.op_count());
    for b in f.blocks() {
        for i in 0..b.ops.len() {
            ops.push((b.id, i));
        }
    }
    let op_at = |r: OpRef| &f.blocks()[r.0].ops[r.1];

    let mut global_defs: HashMap<(Space, u64, u32), Vec<usize>> = HashMap::new();
    for (idx, &r) in ops.iter().enumerate() {
        if let Some(out) = &op_at(r).output {
            global_defs.entry(out.location()).or_default().push(idx);
        }
    }

    let mut defs = Vec::with_capacity(ops.len());
    let mut data_edges = Vec::new();
    let mut block_start = 0usize;
    for b in f.blocks() {
        let mut local: HashMap<(Space, u64, u32), usize> = HashMap::new();
        for (i, op) in b.ops.iter().enumerate() {
            let me = block_start + i;
            let mut row = Vec::with_capacity(op.inputs.len());
            for v in &op.inputs {
                let def = if !defines(v) {
                    None
                } else if let Some(&d) = local.get(&v.location()) {
                    Some(d)
                } else {
                    match global_defs.get(&v.location()).map(Vec::as_slice) {
                        Some([only]) if *only != me => Some(*only),
                        _ => None,
                    }
                };
                if let Some(d) = def {
                    data_edges.push((me, d));
                }
                row.push(def);
            }
            defs.push(row);
            if let Some(out) = &op.output {
                local.insert(out.location(), me);
            }
        }
        block_start += b.ops.len();
    }
    data_edges.sort_unstable();
    data_edges.dedup();

    // Memory chain: consecutive chain members are ordered unless both are loads.
    let mut effect_edges = Vec::new();
    let mut block_start = 0usize;
    for b in f.blocks() {
        let chain: Vec<usize> = b
            .ops
            .iter()
            .enumerate()
            .filter(|(_, op)| op.opcode.is_memory_chain())
            .map(|(i, _)| block_start + i)
            .collect();
        for w in chain.windows(2) {
            let (earlier, later) = (w[0], w[1]);
            let a = op_at(ops[earlier]).opcode;
            let c = op_at(ops[later]).opcode;
            if a.is_memory_barrier() || c.is_memory_barrier() {
                effect_edges.push((later, earlier));
            }
        }
        block_start += b.ops.len();
    }

    Isg {
        ops,
        defs,
        data_edges,
        effect_edges,
    }
}

pub fn build_tsg(f: &PCodeFunction, isg: &Isg) -> Tsg {
    let op_at = |r: OpRef| &f.blocks()[r.0].ops[r.1];
    let mut nodes: Vec<(NodeKind, String)> = Vec::new();
    let mut edges = Vec::new();
    let mut opcode_node = Vec::with_capacity(isg.ops.len());
    let mut output_node: Vec<Option<usize>> = Vec::with_capacity(isg.ops.len());

    for &r in &isg.ops {
        let op = op_at(r);
        let opc = nodes.len();
        nodes.push((NodeKind::Opcode, op.opcode.as_str().to_string()));
        opcode_node.push(opc);
        output_node.push(op.output.as_ref().map(|out| {
            let id = nodes.len();
            nodes.push((NodeKind::Operand, normalize_varnode(out, f.arch).0));
            edges.push(DesgEdge::new(id, opc, EdgeKind::Data, EdgePos::Out));
            id
        }));
    }

    for (idx, &r) in isg.ops.iter().enumerate() {
        let op = op_at(r);
        let opc = opcode_node[idx];
        for (k, v) in op.inputs.iter().enumerate() {
            let target = match isg.defs[idx][k].and_then(|d| output_node[d]) {
                Some(shared) => shared,
                None => {
                    let id = nodes.len();
                    nodes.push((NodeKind::Operand, normalize_varnode(v, f.arch).0));
                    id
                }
            };
            let pos = if k == 0 { EdgePos::In1 } else { EdgePos::In2plus };
            edges.push(DesgEdge::new(opc, target, EdgeKind::Data, pos));
        }
    }

    for &(later, earlier) in &isg.effect_edges {
        edges.push(DesgEdge::new(
            opcode_node[later],
            opcode_node[earlier],
            EdgeKind::Effect,
            EdgePos::None,
        ));
    }

    Tsg {
        nodes,
        opcode_node,
        edges,
    }
}

pub fn bblock_attr(index: usize) -> String {
    if index >= BBLOCK_ATTR_CAP {
        "BB_OVF".to_string()
    } else {
        format!("BB_{index}")
    }
}

pub fn build_bbsg(f: &PCodeFunction, dt: &DomTree, pdt: &PostDomTree) -> Bbsg {
    let n = f.block_count();
    let attrs = (0..n).map(bblock_attr).collect();
    let mut edges = Vec::new();
    for b in 0..n {
        if let Some(d) = dt.idom(b) {
            edges.push(DesgEdge::new(d, b, EdgeKind::Dominate, EdgePos::None));
        }
        if let Some(p) = pdt.real_ipdom(b) {
            edges.push(DesgEdge::new(p, b, EdgeKind::Postdominate, EdgePos::None));
        }
    }
    Bbsg { attrs, edges }
}

/// Builds the full graph. Block nodes come first (node `i` is block `i`),
/// followed by the token nodes in construction order.
pub fn build_desg(f: &PCodeFunction) -> Desg {
    let isg = build_isg(f);
    let tsg = build_tsg(f, &isg);
    let dt = dominator_tree(f);
    let pdt = post_dominator_tree(f);
    let bbsg = build_bbsg(f, &dt, &pdt);
    merge(f, &isg, tsg, bbsg)
}

fn merge(f: &PCodeFunction, isg: &Isg, tsg: Tsg, bbsg: Bbsg) -> Desg {
    let offset = bbsg.attrs.len();
    let mut nodes = Vec::with_capacity(offset + tsg.nodes.len());
    for (i, attr) in bbsg.attrs.into_iter().enumerate() {
        nodes.push(DesgNode {
            id: i,
            kind: NodeKind::Bblock,
            attr,
        });
    }
    for (i, (kind, attr)) in tsg.nodes.into_iter().enumerate() {
        nodes.push(DesgNode {
            id: offset + i,
            kind,
            attr,
        });
    }
    let mut edges = bbsg.edges;
    edges.extend(
        tsg.edges
            .into_iter()
            .map(|e| DesgEdge::new(e.src + offset, e.dst + offset, e.kind, e.pos)),
    );
    for (idx, &(block, _)) in isg.ops.iter().enumerate() {
        edges.push(DesgEdge::new(
            block,
            tsg.opcode_node[idx] + offset,
            EdgeKind::Contain,
            EdgePos::None,
        ));
    }
    edges.sort_unstable();
    edges.dedup();
    Desg {
        name: f.name.clone(),
        meta: f.meta.clone(),
        nodes,
        edges,
    }
}

/// Checks the structural invariants of a graph; returns a description of the
/// first violation.
pub fn check_invariants(g: &Desg) -> Result<(), String> {
    for (i, n) in g.nodes.iter().enumerate() {
        if n.id != i {
            return Err(format!("node {i} carries id {}", n.id));
        }
        match n.kind {
            NodeKind::Bblock if !n.attr.starts_with("BB_") => {
                return Err(format!("bblock node {i} has attr `{}`", n.attr))
            }
            NodeKind::Opcode if n.attr.parse::<Opcode>().is_err() => {
                return Err(format!("opcode node {i} has attr `{}`", n.attr))
            }
            _ => {}
        }
    }
    let kind = |id: usize| g.nodes[id].kind;
    let mut contain_in = vec![0usize; g.nodes.len()];
    for e in &g.edges {
        if e.src >= g.nodes.len() || e.dst >= g.nodes.len() {
            return Err(format!("edge {e:?} out of range"));
        }
        let ok = match e.kind {
            EdgeKind::Dominate | EdgeKind::Postdominate => {
                kind(e.src) == NodeKind::Bblock && kind(e.dst) == NodeKind::Bblock
            }
            EdgeKind::Contain => {
                contain_in[e.dst] += 1;
                kind(e.src) == NodeKind::Bblock && kind(e.dst) == NodeKind::Opcode
            }
            EdgeKind::Effect => {
                kind(e.src) == NodeKind::Opcode && kind(e.dst) == NodeKind::Opcode
            }
            EdgeKind::Data => {
                kind(e.src) != NodeKind::Bblock && kind(e.dst) != NodeKind::Bblock
            }
        };
        if !ok {
            return Err(format!("edge {e:?} connects the wrong node kinds"));
        }
        if (e.kind == EdgeKind::Data) == (e.pos == EdgePos::None) {
            return Err(format!("edge {e:?} has inconsistent position"));
        }
    }
    for n in &g.nodes {
        if n.kind == NodeKind::Opcode && contain_in[n.id] != 1 {
            return Err(format!(
                "opcode node {} has {} contain edges",
                n.id, contain_in[n.id]
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) use crate::fixtures;

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::pcode::{Arch, PCodeOp};

    fn single_block(ops: Vec<PCodeOp>) -> PCodeFunction {
        PCodeFunction::from_blocks("f", Arch::X86, meta(), vec![(ops, vec![])]).unwrap()
    }

    #[test]
    fn isg_single_def_use() {
        let f = single_block(vec![
            PCodeOp::new(0, Opcode::Copy, Some(Varnode::unique(0, 4)), vec![Varnode::constant(1, 4)]),
            PCodeOp::new(
                1,
                Opcode::IntAdd,
                Some(Varnode::register(0, 4)),
                vec![Varnode::unique(0, 4), Varnode::unique(0, 4)],
            ),
        ]);
        let isg = build_isg(&f);
        assert_eq!(isg.ops.len(), 2);
        assert_eq!(isg.data_edges, vec![(1, 0)]);
        assert!(isg.effect_edges.is_empty());
    }

    #[test]
    fn isg_no_shared_varnodes() {
        let f = single_block(vec![
            PCodeOp::new(0, Opcode::Copy, Some(Varnode::unique(0, 4)), vec![Varnode::constant(1, 4)]),
            PCodeOp::new(1, Opcode::Copy, Some(Varnode::unique(8, 4)), vec![Varnode::register(4, 4)]),
        ]);
        let isg = build_isg(&f);
        assert!(isg.data_edges.is_empty() && isg.effect_edges.is_empty());
    }

    #[test]
    fn isg_memory_chain() {
        let f = single_block(vec![
            PCodeOp::new(0, Opcode::Load, Some(Varnode::unique(0, 8)), vec![Varnode::register(8, 8)]),
            PCodeOp::new(1, Opcode::Call, None, vec![Varnode::ram(0x40, 8)]),
            PCodeOp::new(2, Opcode::Store, None, vec![Varnode::register(16, 8), Varnode::register(24, 8)]),
            PCodeOp::new(3, Opcode::Load, Some(Varnode::unique(8, 8)), vec![Varnode::register(8, 8)]),
            PCodeOp::new(4, Opcode::Load, Some(Varnode::unique(16, 8)), vec![Varnode::register(8, 8)]),
        ]);
        let isg = build_isg(&f);
        // CALL->LOAD, STORE->CALL, LOAD->STORE; the trailing LOAD/LOAD pair is unordered.
        assert_eq!(isg.effect_edges, vec![(1, 0), (2, 1), (3, 2)]);
    }

    #[test]
    fn tsg_direct_split() {
        let f = single_block(vec![PCodeOp::new(
            0,
            Opcode::IntSub,
            Some(Varnode::register(0, 4)),
            vec![Varnode::register(8, 4), Varnode::constant(3, 4)],
        )]);
        let isg = build_isg(&f);
        let tsg = build_tsg(&f, &isg);
        assert_eq!(tsg.nodes.len(), 4);
        let mut pos: Vec<EdgePos> = tsg.edges.iter().map(|e| e.pos).collect();
        pos.sort();
        assert_eq!(pos, vec![EdgePos::Out, EdgePos::In1, EdgePos::In2plus]);
        assert!(tsg.edges.iter().all(|e| e.kind == EdgeKind::Data));
    }

    #[test]
    fn tsg_value_unification() {
        let f = single_block(vec![
            PCodeOp::new(0, Opcode::Copy, Some(Varnode::unique(0x40, 8)), vec![Varnode::constant(1, 8)]),
            PCodeOp::new(1, Opcode::Load, Some(Varnode::register(0, 8)), vec![Varnode::unique(0x40, 8)]),
        ]);
        let isg = build_isg(&f);
        let tsg = build_tsg(&f, &isg);
        // COPY, its out node, LOAD, its out node, the const input: the LOAD input reuses COPY's out.
        assert_eq!(tsg.nodes.len(), 5);
        let producer_out = 1;
        let load_opc = tsg.opcode_node[1];
        assert!(tsg
            .edges
            .contains(&DesgEdge::new(load_opc, producer_out, EdgeKind::Data, EdgePos::In1)));
        assert_eq!(
            tsg.nodes.iter().filter(|(_, a)| a == "unique").count(),
            1,
            "no duplicate operand node for the shared temporary"
        );
    }

    #[test]
    fn tsg_zero_input_op() {
        let f = single_block(vec![PCodeOp::new(0, Opcode::Return, None, vec![])]);
        let isg = build_isg(&f);
        let tsg = build_tsg(&f, &isg);
        assert_eq!(tsg.nodes.len(), 1);
        assert!(tsg.edges.is_empty());
    }

    #[test]
    fn bbsg_on_motivating_example() {
        let f = motivating();
        let dt = dominator_tree(&f);
        let pdt = post_dominator_tree(&f);
        let bbsg = build_bbsg(&f, &dt, &pdt);
        let pick = |k: EdgeKind| {
            let mut v: Vec<(usize, usize)> = bbsg
                .edges
                .iter()
                .filter(|e| e.kind == k)
                .map(|e| (e.src, e.dst))
                .collect();
            v.sort();
            v
        };
        assert_eq!(
            pick(EdgeKind::Dominate),
            vec![(0, 1), (0, 2), (0, 6), (2, 3), (2, 4), (2, 5)]
        );
        assert_eq!(
            pick(EdgeKind::Postdominate),
            vec![(5, 2), (5, 3), (5, 4), (6, 0), (6, 1), (6, 5)]
        );
    }

    #[test]
    fn bbsg_single_block() {
        let f = single_block(vec![PCodeOp::new(0, Opcode::Return, None, vec![])]);
        let bbsg = build_bbsg(&f, &dominator_tree(&f), &post_dominator_tree(&f));
        assert_eq!(bbsg.attrs, vec!["BB_0".to_string()]);
        assert!(bbsg.edges.is_empty());
    }

    #[test]
    fn desg_single_block_three_ops() {
        let f = single_block(vec![
            PCodeOp::new(0, Opcode::Copy, Some(Varnode::unique(0, 4)), vec![Varnode::constant(1, 4)]),
            PCodeOp::new(1, Opcode::IntAdd, Some(Varnode::register(0, 4)), vec![Varnode::unique(0, 4), Varnode::register(0, 4)]),
            PCodeOp::new(2, Opcode::Return, None, vec![Varnode::constant(0, 4)]),
        ]);
        let g = build_desg(&f);
        let contains: Vec<_> = g.edges.iter().filter(|e| e.kind == EdgeKind::Contain).collect();
        assert_eq!(contains.len(), 3);
        assert!(contains.iter().all(|e| e.src == 0));
        check_invariants(&g).unwrap();
    }

    #[test]
    fn desg_single_return() {
        let f = single_block(vec![PCodeOp::new(0, Opcode::Return, None, vec![])]);
        let g = build_desg(&f);
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges, vec![DesgEdge::new(0, 1, EdgeKind::Contain, EdgePos::None)]);
    }

    #[test]
    fn desg_two_block_hand_count() {
        let g = build_desg(&two_block());
        check_invariants(&g).unwrap();
        let s = desg_stats(&g);
        assert_eq!(s.node_kinds[&NodeKind::Bblock], 2);
        assert_eq!(s.node_kinds[&NodeKind::Opcode], 6);
        assert_eq!(s.node_kinds[&NodeKind::Operand], 9);
        assert_eq!(s.edge_kinds[&EdgeKind::Data], 12);
        assert_eq!(s.edge_kinds[&EdgeKind::Effect], 1);
        assert_eq!(s.edge_kinds[&EdgeKind::Contain], 6);
        assert_eq!(s.edge_kinds[&EdgeKind::Dominate], 1);
        assert_eq!(s.edge_kinds[&EdgeKind::Postdominate], 1);
        assert_eq!(g.edges.len(), 21);
    }

    #[test]
    fn bblock_attr_cap() {
        assert_eq!(bblock_attr(255), "BB_255");
        assert_eq!(bblock_attr(256), "BB_OVF");
    }

    #[test]
    fn permutation_round_trip() {
        let g = build_desg(&two_block());
        let n = g.nodes.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let back = g.permuted(&perm).permuted(&perm);
        assert_eq!(back, g);
    }
}
