//! JSON interchange format produced by the decompiler exporter.
//!
//! One document per function; a corpus is one document per line. Offsets are
//! hex strings so 64-bit values survive JSON number handling.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Arch, FunctionMeta, Opcode, PCodeFunction, PCodeOp, RawBlock, Space, Varnode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionDoc {
    pub name: String,
    pub arch: Arch,
    pub entry: i64,
    pub meta: FunctionMeta,
    pub blocks: Vec<BlockDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDoc {
    pub id: i64,
    pub successors: Vec<i64>,
    pub ops: Vec<OpDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpDoc {
    pub seq: u32,
    pub opcode: Opcode,
    pub output: Option<VarnodeDoc>,
    pub inputs: Vec<VarnodeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarnodeDoc {
    pub space: Space,
    #[serde(serialize_with = "ser_hex", deserialize_with = "de_hex")]
    pub offset: u64,
    pub size: u32,
    #[serde(default)]
    pub symbol: Option<String>,
}

fn ser_hex<S: Serializer>(v: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:x}"))
}

fn de_hex<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(&s);
    u64::from_str_radix(digits, 16)
        .map_err(|e| serde::de::Error::custom(format!("bad hex offset `{s}`: {e}")))
}

impl From<&Varnode> for VarnodeDoc {
    fn from(v: &Varnode) -> Self {
        Self {
            space: v.space,
            offset: v.offset,
            size: v.size,
            symbol: v.symbol.clone(),
        }
    }
}

impl From<VarnodeDoc> for Varnode {
    fn from(v: VarnodeDoc) -> Self {
        Self {
            space: v.space,
            offset: v.offset,
            size: v.size,
            symbol: v.symbol,
        }
    }
}

/// A parsed function together with ingestion warnings.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub function: PCodeFunction,
    pub pruned_blocks: usize,
}

impl Ingested {
    pub fn warning_count(&self) -> usize {
        self.pruned_blocks
    }
}

fn check_sizes(doc: &FunctionDoc) -> Result<()> {
    let bad = |path: String| Error::Parse {
        path,
        message: "varnode size must be at least 1".into(),
    };
    for (bi, b) in doc.blocks.iter().enumerate() {
        for (oi, op) in b.ops.iter().enumerate() {
            if let Some(out) = &op.output {
                if out.size == 0 {
                    return Err(bad(format!("blocks[{bi}].ops[{oi}].output.size")));
                }
            }
            for (ii, v) in op.inputs.iter().enumerate() {
                if v.size == 0 {
                    return Err(bad(format!("blocks[{bi}].ops[{oi}].inputs[{ii}].size")));
                }
            }
        }
    }
    Ok(())
}

/// Parses and validates one interchange document.
pub fn parse_function(bytes: &[u8]) -> Result<Ingested> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let doc: FunctionDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        path: ".".into(),
        message: e.to_string(),
    })?;
    from_document(doc)
}

pub fn from_document(doc: FunctionDoc) -> Result<Ingested> {
    check_sizes(&doc)?;
    let blocks = doc
        .blocks
        .into_iter()
        .map(|b| RawBlock {
            id: b.id,
            successors: b.successors,
            ops: b
                .ops
                .into_iter()
                .map(|o| PCodeOp {
                    seq: o.seq,
                    opcode: o.opcode,
                    output: o.output.map(Varnode::from),
                    inputs: o.inputs.into_iter().map(Varnode::from).collect(),
                })
                .collect(),
        })
        .collect();
    let assembled = PCodeFunction::assemble(doc.name, doc.arch, doc.meta, doc.entry, blocks)?;
    Ok(Ingested {
        function: assembled.function,
        pruned_blocks: assembled.pruned_blocks,
    })
}

pub fn to_document(f: &PCodeFunction) -> FunctionDoc {
    FunctionDoc {
        name: f.name.clone(),
        arch: f.arch,
        entry: 0,
        meta: f.meta.clone(),
        blocks: f
            .blocks()
            .iter()
            .map(|b| BlockDoc {
                id: b.id as i64,
                successors: b.successors.iter().map(|&s| s as i64).collect(),
                ops: b
                    .ops
                    .iter()
                    .map(|o| OpDoc {
                        seq: o.seq,
                        opcode: o.opcode,
                        output: o.output.as_ref().map(VarnodeDoc::from),
                        inputs: o.inputs.iter().map(VarnodeDoc::from).collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Serializes a function as a single JSON line (no trailing newline).
pub fn to_document_line(f: &PCodeFunction) -> String {
    serde_json::to_string(&to_document(f)).expect("document types always serialize")
}

/// Parses a corpus of newline-separated documents. Blank lines are skipped;
/// each entry carries its 1-based line number.
pub fn parse_corpus(text: &str) -> Vec<(usize, Result<Ingested>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, parse_function(l.as_bytes())))
        .collect()
}
