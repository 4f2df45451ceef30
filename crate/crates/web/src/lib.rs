//! Browser bindings for a single-function playground.
//!
//! Every operation takes and returns JSON text. The `*_json` functions hold
//! the logic and are what native tests call; the exported wrappers only
//! convert errors into JS exceptions.

use binsim_core::desg::{build_desg, desg_stats};
use binsim_core::dominance::{dominator_tree, post_dominator_tree};
use binsim_core::eval::{random_function, synth_obfuscate, ObfMode, SynthSpec};
use binsim_core::ged::{cfg_graph, dtree_graph, ged_approx, LabelMode};
use binsim_core::pcode::{parse_function, to_document, FunctionMeta, PCodeFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse(doc: &str) -> Result<PCodeFunction, String> {
    parse_function(doc.as_bytes())
        .map(|ing| ing.function)
        .map_err(|e| e.to_string())
}

fn to_text(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data")
}

#[derive(Serialize)]
struct Analysis {
    name: String,
    blocks: usize,
    ops: usize,
    successors: Vec<Vec<usize>>,
    /// `idom[b]`, `null` for the entry.
    idom: Vec<Option<usize>>,
    /// `ipdom[b]`, `null` when only the virtual exit post-dominates `b`.
    ipdom: Vec<Option<usize>>,
    /// Human-readable "v0 dominates v1, v2" lines, one per non-leaf block.
    statements: Vec<String>,
    desg: binsim_core::desg::DesgStats,
}

/// Dominator and post-dominator trees plus DESG statistics.
pub fn analyze_json(doc: &str) -> Result<String, String> {
    let f = parse(doc)?;
    let dt = dominator_tree(&f);
    let pdt = post_dominator_tree(&f);
    let n = f.block_count();
    let statements = (0..n)
        .filter_map(|a| {
            let dominated: Vec<String> = (0..n)
                .filter(|&b| b != a && dt.dominates(a, b))
                .map(|b| format!("v{b}"))
                .collect();
            (!dominated.is_empty()).then(|| format!("v{a} dominates {}", dominated.join(", ")))
        })
        .collect();
    let g = build_desg(&f);
    Ok(to_text(&Analysis {
        name: f.name.clone(),
        blocks: n,
        ops: f.op_count(),
        successors: f.successors(),
        idom: (0..n).map(|b| dt.idom(b)).collect(),
        ipdom: (0..n).map(|b| pdt.real_ipdom(b)).collect(),
        statements,
        desg: desg_stats(&g),
    }))
}

/// Applies one synthetic obfuscation and returns the new document.
pub fn obfuscate_json(doc: &str, mode: &str, seed: u64) -> Result<String, String> {
    let f = parse(doc)?;
    let mode: ObfMode = mode.parse().map_err(|e: binsim_core::Error| e.to_string())?;
    Ok(to_text(&to_document(&synth_obfuscate(&f, mode, seed))))
}

#[derive(Serialize)]
struct Comparison {
    blocks: [usize; 2],
    cfg_ged: usize,
    dtree_ged: usize,
}

/// Approximate edit distance between two functions' CFGs and between their
/// dominator trees.
pub fn compare_json(doc_a: &str, doc_b: &str) -> Result<String, String> {
    let a = parse(doc_a)?;
    let b = parse(doc_b)?;
    let mode = LabelMode::default();
    Ok(to_text(&Comparison {
        blocks: [a.block_count(), b.block_count()],
        cfg_ged: ged_approx(&cfg_graph(&a, mode), &cfg_graph(&b, mode)),
        dtree_ged: ged_approx(&dtree_graph(&a, mode), &dtree_graph(&b, mode)),
    }))
}

/// A random function to start from.
pub fn sample_json(seed: u64) -> Result<String, String> {
    let meta = FunctionMeta {
        project: "demo".into(),
        optimization: "O0".into(),
        obfuscation: "none".into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_function(format!("sample_{seed}"), meta, &SynthSpec::default(), &mut rng)
        .map_err(|e| e.to_string())?;
    Ok(to_text(&to_document(&f)))
}

#[wasm_bindgen]
pub fn analyze(doc: &str) -> Result<String, JsError> {
    analyze_json(doc).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn obfuscate(doc: &str, mode: &str, seed: u32) -> Result<String, JsError> {
    obfuscate_json(doc, mode, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(doc_a: &str, doc_b: &str) -> Result<String, JsError> {
    compare_json(doc_a, doc_b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample(seed: u32) -> Result<String, JsError> {
    sample_json(seed.into()).map_err(|e| JsError::new(&e))
}
