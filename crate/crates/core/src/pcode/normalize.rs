use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Arch, Space, Varnode};

/// Normalized varnode attribute, the vocabulary unit for operand nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormToken(pub String);

impl NormToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Drops the size and applies the per-space rule. Offsets render as lowercase
/// hex without a prefix.
pub fn normalize_varnode(v: &Varnode, arch: Arch) -> NormToken {
    let text = match v.space {
        Space::Ram => match &v.symbol {
            Some(sym) if !sym.is_empty() => sym.clone(),
            _ => "ram".to_string(),
        },
        Space::Register => format!("{}_r_{:x}", arch.tag(), v.offset),
        Space::Const => format!("c_{:x}", v.offset),
        Space::Unique => "unique".to_string(),
        Space::Stack => "stack".to_string(),
    };
    NormToken(text)
}
