//! Record streams, aligned tables and plot series for search results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::protocol::SearchRow;

#[derive(Debug, Serialize)]
struct Record<'a> {
    task: &'a str,
    pool_size: usize,
    #[serde(rename = "recall@1")]
    recall1: f64,
    mrr: f64,
    run_config: &'a serde_json::Value,
}

/// One JSON object per row, each carrying the run configuration.
pub fn search_records(rows: &[SearchRow], run_config: &serde_json::Value) -> String {
    let mut out = String::new();
    for r in rows {
        let rec = Record {
            task: &r.task,
            pool_size: r.pool_size,
            recall1: r.recall1,
            mrr: r.mrr,
            run_config,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    out
}

pub fn search_table(rows: &[SearchRow]) -> String {
    let header = ["task", "pool", "pools", "Recall@1", "MRR"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.task.clone(),
                r.pool_size.to_string(),
                r.pools.to_string(),
                format!("{:.4}", r.recall1),
                format!("{:.4}", r.mrr),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: &[&str]| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{}", line(&header));
    for r in &body {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", line(&cells));
    }
    out
}

/// `(pool size, value)` series per task and metric, keyed `"<metric>_<task>"`
/// and rendered as whitespace-separated `x y` lines.
pub fn plot_series(rows: &[SearchRow]) -> BTreeMap<String, String> {
    let mut series: BTreeMap<String, String> = BTreeMap::new();
    for r in rows {
        for (metric, v) in [("recall1", r.recall1), ("mrr", r.mrr)] {
            let s = series.entry(format!("{metric}_{}", r.task)).or_default();
            let _ = writeln!(s, "{} {}", r.pool_size, v);
        }
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<SearchRow> {
        vec![
            SearchRow {
                task: "sub".into(),
                pool_size: 10,
                pools: 4,
                recall1: 0.75,
                mrr: 0.8,
            },
            SearchRow {
                task: "sub".into(),
                pool_size: 100,
                pools: 4,
                recall1: 0.5,
                mrr: 0.6,
            },
        ]
    }

    #[test]
    fn records_carry_config() {
        let cfg = serde_json::json!({"seed": 3});
        let text = search_records(&rows(), &cfg);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["recall@1"], 0.75);
        assert_eq!(first["run_config"]["seed"], 3);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn table_and_series() {
        let t = search_table(&rows());
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("Recall@1") && t.contains("0.7500"));
        let s = plot_series(&rows());
        assert_eq!(s["recall1_sub"], "10 0.75\n100 0.5\n");
        assert_eq!(s.len(), 2);
    }
}
