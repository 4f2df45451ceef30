//! Edit distance between original and obfuscated functions, for both the CFG
//! and the dominator tree, averaged per block-count bucket.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{cfg_graph, dtree_graph, ged_approx, LabelMode};
use crate::error::{Error, Result};
use crate::pcode::PCodeFunction;

/// Upper bounds of the first buckets; the last bucket is open-ended.
pub const DEFAULT_BOUNDARIES: [usize; 3] = [50, 100, 150];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairGed {
    pub name: String,
    pub blocks: usize,
    pub cfg: usize,
    pub dtree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub label: String,
    pub pairs: usize,
    pub cfg_mean: Option<f64>,
    pub dtree_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub label_mode: LabelMode,
    pub pairs: Vec<PairGed>,
    pub buckets: Vec<BucketRow>,
}

fn bucket_labels(boundaries: &[usize]) -> Vec<String> {
    let mut labels = Vec::with_capacity(boundaries.len() + 1);
    let mut lo = 0;
    for &hi in boundaries {
        labels.push(format!("({lo},{hi}]"));
        lo = hi;
    }
    labels.push(format!(">{lo}"));
    labels
}

fn bucket_of(blocks: usize, boundaries: &[usize]) -> usize {
    boundaries
        .iter()
        .position(|&hi| blocks <= hi)
        .unwrap_or(boundaries.len())
}

fn mean(xs: &[usize]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
}

/// Buckets by the block count of the original function.
pub fn stability_report(
    corpus: &[(PCodeFunction, PCodeFunction)],
    boundaries: &[usize],
    mode: LabelMode,
) -> Result<StabilityReport> {
    if corpus.is_empty() {
        return Err(Error::Empty("no function pairs".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.first() == Some(&0) {
        return Err(Error::InvalidArgument(format!(
            "bucket boundaries must be positive and increasing: {boundaries:?}"
        )));
    }
    for (orig, obf) in corpus {
        if orig.group_id() != obf.group_id() {
            return Err(Error::InvalidArgument(format!(
                "paired functions differ in identity: `{}` vs `{}`",
                orig.group_id(),
                obf.group_id()
            )));
        }
    }
    let pairs: Vec<PairGed> = corpus
        .par_iter()
        .map(|(orig, obf)| PairGed {
            name: orig.group_id(),
            blocks: orig.block_count(),
            cfg: ged_approx(&cfg_graph(orig, mode), &cfg_graph(obf, mode)),
            dtree: ged_approx(&dtree_graph(orig, mode), &dtree_graph(obf, mode)),
        })
        .collect();

    let labels = bucket_labels(boundaries);
    let mut cfg = vec![Vec::new(); labels.len()];
    let mut dtree = vec![Vec::new(); labels.len()];
    for p in &pairs {
        let b = bucket_of(p.blocks, boundaries);
        cfg[b].push(p.cfg);
        dtree[b].push(p.dtree);
    }
    let buckets = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| BucketRow {
            label,
            pairs: cfg[i].len(),
            cfg_mean: mean(&cfg[i]),
            dtree_mean: mean(&dtree[i]),
        })
        .collect();
    Ok(StabilityReport {
        label_mode: mode,
        pairs,
        buckets,
    })
}

impl StabilityReport {
    pub fn overall_means(&self) -> (f64, f64) {
        let n = self.pairs.len() as f64;
        let cfg = self.pairs.iter().map(|p| p.cfg).sum::<usize>() as f64 / n;
        let dtree = self.pairs.iter().map(|p| p.dtree).sum::<usize>() as f64 / n;
        (cfg, dtree)
    }

    /// Two rows (CFG, D-Tree) by one column per bucket.
    pub fn to_text_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let mut header = vec!["Basic Block Size Range".to_string()];
        let mut cfg_row = vec!["CFG".to_string()];
        let mut dt_row = vec!["D-Tree".to_string()];
        let mut n_row = vec!["pairs".to_string()];
        for b in &self.buckets {
            header.push(b.label.clone());
            cfg_row.push(cell(b.cfg_mean));
            dt_row.push(cell(b.dtree_mean));
            n_row.push(b.pairs.to_string());
        }
        let rows = [header, cfg_row, dt_row, n_row];
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}
