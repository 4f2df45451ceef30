//! Versioned JSON form of a [`Desg`] with stable ordering, so rebuilding a
//! graph produces byte-identical output.

use serde::{Deserialize, Serialize};

use super::{check_invariants, Desg, DesgEdge, DesgNode, EdgeKind, EdgePos, NodeKind};
use crate::error::{Error, Result};
use crate::pcode::FunctionMeta;

pub const DESG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesgDoc {
    pub version: u32,
    pub name: String,
    pub meta: FunctionMeta,
    /// `(id, kind, attr)` rows ordered by id.
    pub nodes: Vec<(usize, NodeKind, String)>,
    /// `(src, dst, kind, pos)` rows in lexicographic order.
    pub edges: Vec<(usize, usize, EdgeKind, EdgePos)>,
}

impl From<&Desg> for DesgDoc {
    fn from(g: &Desg) -> Self {
        let mut edges: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst, e.kind, e.pos)).collect();
        edges.sort_unstable();
        DesgDoc {
            version: DESG_FORMAT_VERSION,
            name: g.name.clone(),
            meta: g.meta.clone(),
            nodes: g.nodes.iter().map(|n| (n.id, n.kind, n.attr.clone())).collect(),
            edges,
        }
    }
}

pub fn to_json(g: &Desg) -> String {
    serde_json::to_string(&DesgDoc::from(g)).expect("graph documents always serialize")
}

pub fn from_json(text: &str) -> Result<Desg> {
    let doc: DesgDoc = serde_json::from_str(text)?;
    if doc.version != DESG_FORMAT_VERSION {
        return Err(Error::Structure(format!(
            "unsupported graph format version {}",
            doc.version
        )));
    }
    let mut edges: Vec<DesgEdge> = doc
        .edges
        .into_iter()
        .map(|(s, d, k, p)| DesgEdge::new(s, d, k, p))
        .collect();
    edges.sort_unstable();
    let g = Desg {
        name: doc.name,
        meta: doc.meta,
        nodes: doc
            .nodes
            .into_iter()
            .map(|(id, kind, attr)| DesgNode { id, kind, attr })
            .collect(),
        edges,
    };
    check_invariants(&g).map_err(Error::Structure)?;
    Ok(g)
}
