//! P-Code data model: varnodes, operations, basic blocks and functions.
//!
//! A [`PCodeFunction`] is always validated: it has at least one block, every
//! block is reachable from the entry, and block ids are dense with the entry
//! at index 0. Construction goes through [`PCodeFunction::assemble`], which is
//! shared by the interchange parser and the synthetic generators.

mod interchange;
mod normalize;
mod opcode;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interchange::{
    from_document, parse_corpus, parse_function, to_document, to_document_line, FunctionDoc,
    Ingested,
};
pub use normalize::{normalize_varnode, NormToken};
pub use opcode::{Opcode, UnknownOpcode};

/// Address space of a varnode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Ram,
    Register,
    Const,
    Unique,
    Stack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "x86")]
    X86,
    #[serde(rename = "ARM")]
    Arm,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::X86 => "x86",
            Arch::Arm => "ARM",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// An (address space, offset, size) triple, optionally carrying the resolved
/// name of a library function for ram-space call targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Varnode {
    pub space: Space,
    pub offset: u64,
    pub size: u32,
    pub symbol: Option<String>,
}

impl Varnode {
    pub fn new(space: Space, offset: u64, size: u32) -> Self {
        Self {
            space,
            offset,
            size,
            symbol: None,
        }
    }

    pub fn register(offset: u64, size: u32) -> Self {
        Self::new(Space::Register, offset, size)
    }

    pub fn constant(value: u64, size: u32) -> Self {
        Self::new(Space::Const, value, size)
    }

    pub fn unique(offset: u64, size: u32) -> Self {
        Self::new(Space::Unique, offset, size)
    }

    pub fn stack(offset: u64, size: u32) -> Self {
        Self::new(Space::Stack, offset, size)
    }

    pub fn ram(offset: u64, size: u32) -> Self {
        Self::new(Space::Ram, offset, size)
    }

    pub fn library(symbol: impl Into<String>, offset: u64) -> Self {
        Self {
            space: Space::Ram,
            offset,
            size: 8,
            symbol: Some(symbol.into()),
        }
    }

    /// Identity used for def-use resolution: the storage location, ignoring
    /// the symbol annotation.
    pub fn location(&self) -> (Space, u64, u32) {
        (self.space, self.offset, self.size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PCodeOp {
    pub seq: u32,
    pub opcode: Opcode,
    pub output: Option<Varnode>,
    pub inputs: Vec<Varnode>,
}

impl PCodeOp {
    pub fn new(seq: u32, opcode: Opcode, output: Option<Varnode>, inputs: Vec<Varnode>) -> Self {
        Self {
            seq,
            opcode,
            output,
            inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: usize,
    pub ops: Vec<PCodeOp>,
    pub successors: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FunctionMeta {
    pub project: String,
    pub optimization: String,
    pub obfuscation: String,
}

/// A validated, lifted function. Block `i` has id `i`; block 0 is the entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PCodeFunction {
    pub name: String,
    pub arch: Arch,
    pub meta: FunctionMeta,
    blocks: Vec<BasicBlock>,
}

/// Unvalidated block as produced by a parser or generator; ids are arbitrary.
#[derive(Debug, Clone)]
pub struct RawBlock {
    pub id: i64,
    pub ops: Vec<PCodeOp>,
    pub successors: Vec<i64>,
}

/// Result of [`PCodeFunction::assemble`]: the function plus the number of
/// unreachable blocks that were pruned.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub function: PCodeFunction,
    pub pruned_blocks: usize,
}

impl PCodeFunction {
    /// Validates raw blocks, prunes blocks unreachable from `entry` and
    /// renumbers the rest in reverse postorder (successors visited in listed
    /// order), so the entry becomes block 0 and numbering does not depend on
    /// the ids or layout of the input.
    pub fn assemble(
        name: String,
        arch: Arch,
        meta: FunctionMeta,
        entry: i64,
        blocks: Vec<RawBlock>,
    ) -> Result<Assembled> {
        if blocks.is_empty() {
            return Err(Error::Structure(format!("function `{name}` has no blocks")));
        }
        let mut index_of: HashMap<i64, usize> = HashMap::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            if index_of.insert(b.id, i).is_some() {
                return Err(Error::Structure(format!("duplicate block id {}", b.id)));
            }
        }
        for b in &blocks {
            if b.ops.is_empty() {
                return Err(Error::Structure(format!("block {} has no ops", b.id)));
            }
            for w in b.ops.windows(2) {
                if w[1].seq <= w[0].seq {
                    return Err(Error::Structure(format!(
                        "block {}: op seq {} does not increase after {}",
                        b.id, w[1].seq, w[0].seq
                    )));
                }
            }
            for s in &b.successors {
                if !index_of.contains_key(s) {
                    return Err(Error::Structure(format!(
                        "block {} has dangling successor id {}",
                        b.id, s
                    )));
                }
            }
        }
        let entry_idx = *index_of
            .get(&entry)
            .ok_or_else(|| Error::Structure(format!("entry block {entry} not found")))?;

        // Reverse postorder of a DFS visiting successors in listed order.
        let mut seen = vec![false; blocks.len()];
        let mut order = Vec::with_capacity(blocks.len());
        let mut stack: Vec<(usize, usize)> = vec![(entry_idx, 0)];
        seen[entry_idx] = true;
        while let Some((b, next)) = stack.last_mut() {
            if let Some(s) = blocks[*b].successors.get(*next) {
                *next += 1;
                let si = index_of[s];
                if !seen[si] {
                    seen[si] = true;
                    stack.push((si, 0));
                }
            } else {
                order.push(*b);
                stack.pop();
            }
        }
        order.reverse();
        let mut new_id = vec![usize::MAX; blocks.len()];
        for (i, &b) in order.iter().enumerate() {
            new_id[b] = i;
        }
        let pruned_blocks = blocks.len() - order.len();
        if pruned_blocks > 0 {
            log::warn!("function `{name}`: pruned {pruned_blocks} unreachable block(s)");
        }

        let mut slots: Vec<Option<RawBlock>> = blocks.into_iter().map(Some).collect();
        let dense = order
            .iter()
            .map(|&old| {
                let raw = slots[old].take().expect("each block visited once");
                BasicBlock {
                    id: new_id[old],
                    ops: raw.ops,
                    successors: raw
                        .successors
                        .iter()
                        .map(|s| new_id[index_of[s]])
                        .collect(),
                }
            })
            .collect();

        Ok(Assembled {
            function: PCodeFunction {
                name,
                arch,
                meta,
                blocks: dense,
            },
            pruned_blocks,
        })
    }

    /// Convenience constructor for already-dense blocks (entry = block 0).
    pub fn from_blocks(
        name: impl Into<String>,
        arch: Arch,
        meta: FunctionMeta,
        blocks: Vec<(Vec<PCodeOp>, Vec<usize>)>,
    ) -> Result<Self> {
        let raw = blocks
            .into_iter()
            .enumerate()
            .map(|(i, (ops, succ))| RawBlock {
                id: i as i64,
                ops,
                successors: succ.into_iter().map(|s| s as i64).collect(),
            })
            .collect();
        Ok(Self::assemble(name.into(), arch, meta, 0, raw)?.function)
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }

    pub fn entry(&self) -> usize {
        0
    }

    /// Successor lists indexed by block id.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.successors.clone()).collect()
    }

    /// Identity shared by all compiled/obfuscated variants of one source function.
    pub fn group_id(&self) -> String {
        format!("{}::{}", self.meta.project, self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ret() -> Vec<PCodeOp> {
        vec![PCodeOp::new(0, Opcode::Return, None, vec![])]
    }

    fn raw(id: i64, succ: &[i64]) -> RawBlock {
        RawBlock {
            id,
            ops: ret(),
            successors: succ.to_vec(),
        }
    }

    #[test]
    fn renumbers_in_reverse_postorder() {
        let a = PCodeFunction::assemble(
            "f".into(),
            Arch::X86,
            FunctionMeta::default(),
            7,
            vec![raw(3, &[]), raw(7, &[9, 3]), raw(9, &[3])],
        )
        .unwrap();
        let f = a.function;
        assert_eq!(f.successors(), vec![vec![1, 2], vec![2], vec![]]);
        assert_eq!(a.pruned_blocks, 0);
    }

    #[test]
    fn prunes_unreachable() {
        let a = PCodeFunction::assemble(
            "f".into(),
            Arch::X86,
            FunctionMeta::default(),
            0,
            vec![raw(0, &[1]), raw(1, &[]), raw(2, &[1])],
        )
        .unwrap();
        assert_eq!(a.function.block_count(), 2);
        assert_eq!(a.pruned_blocks, 1);
    }

    #[test]
    fn structural_errors() {
        let dangling = PCodeFunction::assemble(
            "f".into(),
            Arch::X86,
            FunctionMeta::default(),
            0,
            vec![raw(0, &[5])],
        );
        assert!(matches!(dangling, Err(Error::Structure(_))));
        let empty =
            PCodeFunction::assemble("f".into(), Arch::X86, FunctionMeta::default(), 0, vec![]);
        assert!(matches!(empty, Err(Error::Structure(_))));
        let missing_entry = PCodeFunction::assemble(
            "f".into(),
            Arch::X86,
            FunctionMeta::default(),
            4,
            vec![raw(0, &[])],
        );
        assert!(matches!(missing_entry, Err(Error::Structure(_))));
    }

    #[test]
    fn rejects_non_increasing_seq() {
        let block = RawBlock {
            id: 0,
            ops: vec![
                PCodeOp::new(2, Opcode::Copy, None, vec![]),
                PCodeOp::new(2, Opcode::Return, None, vec![]),
            ],
            successors: vec![],
        };
        let r = PCodeFunction::assemble("f".into(), Arch::Arm, FunctionMeta::default(), 0, vec![block]);
        assert!(matches!(r, Err(Error::Structure(_))));
    }
}
