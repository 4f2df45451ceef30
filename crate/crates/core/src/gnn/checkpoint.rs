//! Binary checkpoint container.
//!
//! ```text
//! magic "BSIMCKPT" | version u32 | header length u64 | header JSON
//! | f32 payloads in header order, row-major, little-endian | SHA-256 of all preceding bytes
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{GnnConfig, GnnModel, Param};
use super::tensor::Mat;
use super::vocab::Vocab;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BSIMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: GnnConfig,
    /// Caller-supplied provenance (training settings, run config).
    extra: serde_json::Value,
    vocab: Vocab,
    tensors: Vec<TensorHeader>,
}

pub fn encode_checkpoint(model: &GnnModel, extra: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config,
        extra: extra.clone(),
        vocab: model.vocab.clone(),
        tensors: model
            .params
            .iter()
            .map(|p| TensorHeader {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header.len() + 4 * model.param_count() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &model.params {
        for &x in p.value.data() {
            let f = x as f32;
            if f as f64 != x {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` holds {x}, which f32 cannot represent exactly",
                    p.name
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GnnModel, serde_json::Value)> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut rest = body;
    if take(&mut rest, MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(&mut rest, 8, "header length")?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(&mut rest, len as usize, "header")?)?;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let raw = take(&mut rest, 4 * t.rows * t.cols, &t.name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.push(Param {
            name: t.name,
            value: Mat::from_vec(t.rows, t.cols, data),
        });
    }
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let model = GnnModel::from_params(header.config, header.vocab, params)?;
    Ok((model, header.extra))
}

/// Writes through a temporary file and a rename, so an interrupted save
/// leaves any previous checkpoint intact.
pub fn save_checkpoint(path: &Path, model: &GnnModel, extra: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(model, extra)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GnnModel, serde_json::Value)> {
    decode_checkpoint(&fs::read(path)?)
}
