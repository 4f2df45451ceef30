//! On-disk artifacts: the interchange corpus, the DESG store with its
//! manifest, and embedding streams. Every artifact gets a `.run.json`
//! sidecar (or `run.json` inside a directory) holding the run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use binsim_core::desg::{self, Desg};
use binsim_core::eval::EvalItem;
use binsim_core::pcode::{parse_corpus, PCodeFunction};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.jsonl";

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Relative to the store directory.
    pub desg: PathBuf,
    pub group: String,
    pub tags: BTreeMap<String, String>,
}

pub fn sidecar(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("run.json")
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(".run.json");
        PathBuf::from(s)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

/// Writes `bytes` to `path` and the configuration next to it.
pub fn write_artifact(path: &Path, bytes: &[u8], cfg: &RunConfig) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    write_sidecar(path, cfg)
}

pub fn write_sidecar(path: &Path, cfg: &RunConfig) -> Result<()> {
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(&cfg.to_value())? + "\n";
    fs::write(&side, text).with_context(|| format!("writing {}", side.display()))
}

/// Parses a whole interchange corpus, failing with every offending line.
pub fn read_corpus(path: &Path) -> Result<Vec<PCodeFunction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (line, r) in parse_corpus(&text) {
        match r {
            Ok(ing) => out.push(ing.function),
            Err(e) => bad.push(format!("line {line}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(binsim_core::Error::Structure(format!(
            "{} bad record(s) in {}:\n  {}",
            bad.len(),
            path.display(),
            bad.join("\n  ")
        ))
        .into());
    }
    if out.is_empty() {
        return Err(binsim_core::Error::Empty(format!("{} has no records", path.display())).into());
    }
    Ok(out)
}

pub fn desg_file(index: usize) -> PathBuf {
    PathBuf::from("desg").join(format!("{index:06}.json"))
}

pub fn manifest_record(path: PathBuf, g: &Desg) -> ManifestRecord {
    let tags = BTreeMap::from([
        ("project".to_string(), g.meta.project.clone()),
        ("optimization".to_string(), g.meta.optimization.clone()),
        ("obfuscation".to_string(), g.meta.obfuscation.clone()),
    ]);
    ManifestRecord {
        desg: path,
        group: g.group_id(),
        tags,
    }
}

/// Loads every graph listed in the store's manifest, in manifest order.
pub fn read_store(dir: &Path) -> Result<Vec<Desg>> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut graphs = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ManifestRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", manifest.display(), i + 1))?;
        let path = dir.join(&rec.desg);
        let body = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let g = desg::from_json(&body).with_context(|| format!("loading {}", path.display()))?;
        if g.group_id() != rec.group {
            bail!(binsim_core::Error::Structure(format!(
                "{} holds `{}` but the manifest says `{}`",
                path.display(),
                g.group_id(),
                rec.group
            )));
        }
        graphs.push(g);
    }
    if graphs.is_empty() {
        return Err(binsim_core::Error::Empty(format!("{} lists no graphs", manifest.display())).into());
    }
    Ok(graphs)
}

pub fn write_items(path: &Path, items: &[EvalItem], cfg: &RunConfig) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    write_artifact(path, &buf, cfg)
}

pub fn read_items(path: &Path) -> Result<Vec<EvalItem>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let items = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect::<Result<Vec<EvalItem>>>()?;
    if items.is_empty() {
        return Err(binsim_core::Error::Empty(format!("{} has no embeddings", path.display())).into());
    }
    Ok(items)
}

/// Append-only JSON-lines writer, flushed per record.
pub struct RecordLog {
    file: fs::File,
}

impl RecordLog {
    pub fn create(path: &Path, cfg: &RunConfig) -> Result<Self> {
        ensure_parent(path)?;
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_sidecar(path, cfg)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, record: &impl Serialize) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}
