use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::desg::{Desg, EdgeKind, EdgePos};
use crate::error::{Error, Result};

pub const UNK: &str = "<UNK>";

/// Every (kind, pos) combination a DESG edge can carry, in embedding-row order.
pub const EDGE_KEYS: [(EdgeKind, EdgePos); 7] = [
    (EdgeKind::Data, EdgePos::Out),
    (EdgeKind::Data, EdgePos::In1),
    (EdgeKind::Data, EdgePos::In2plus),
    (EdgeKind::Effect, EdgePos::None),
    (EdgeKind::Contain, EdgePos::None),
    (EdgeKind::Dominate, EdgePos::None),
    (EdgeKind::Postdominate, EdgePos::None),
];

pub fn edge_key(kind: EdgeKind, pos: EdgePos) -> Result<usize> {
    EDGE_KEYS
        .iter()
        .position(|&k| k == (kind, pos))
        .ok_or_else(|| Error::Structure(format!("edge ({kind}, {pos:?}) has no embedding")))
}

/// Node attribute tokens. Index 0 is [`UNK`]; the rest are sorted, so the
/// same training graphs always yield the same indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a Desg>) -> Self {
        let mut set = BTreeSet::new();
        for g in graphs {
            for n in &g.nodes {
                set.insert(n.attr.as_str());
            }
        }
        set.remove(UNK);
        let tokens: Vec<String> = std::iter::once(UNK)
            .chain(set)
            .map(str::to_string)
            .collect();
        Self::try_from(tokens).expect("sorted distinct tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unseen tokens map to 0.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Checkpoint(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
