use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use binsim_core::desg::{self, build_desg, corpus_stats};
use binsim_core::eval::{
    match_protocol, plot_series, search_protocol, search_records, search_table, synth_corpus,
    ORIGINAL_TAG,
};
use binsim_core::ged::{stability_report, LabelMode};
use binsim_core::gnn::load_checkpoint;
use binsim_core::pcode::{parse_corpus, to_document_line, PCodeFunction};
use binsim_core::training::{embed_groups, group_graphs, split_of, train, CheckpointSink, Split};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{set, RunConfig};
use crate::store::{self, RecordLog};
use crate::{
    BuildArgs, Cli, Command, EmbedArgs, EvalArgs, FixturesArgs, GedArgs, IngestArgs, LabelArg,
    SearchArgs, SplitArg, TrainArgs,
};

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<binsim_core::Error>() {
            return if err.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

/// Prints the one-line JSON summary every subcommand ends with.
fn emit(cfg: &RunConfig, result: serde_json::Value) {
    println!("{}", json!({ "run_config": cfg, "result": result }));
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(|e| Usage(format!("{e:#}")))?;
    set(&mut cfg.seed, cli.seed);
    cfg.train.seed = cfg.seed;
    let data = cli.data_dir.clone();
    let name = match &cli.command {
        Command::Fixtures(_) => "fixtures",
        Command::Ingest(_) => "ingest",
        Command::Build(_) => "build",
        Command::Ged(_) => "ged",
        Command::Train(_) => "train",
        Command::Embed(_) => "embed",
        Command::Search(_) => "search",
        Command::Eval(_) => "eval",
    };
    cfg.subcommand = name.into();
    match cli.command {
        Command::Fixtures(a) => fixtures(a, cfg, data),
        Command::Ingest(a) => ingest(a, cfg, data),
        Command::Build(a) => build(a, cfg, data),
        Command::Ged(a) => ged(a, cfg, data),
        Command::Train(a) => train_cmd(a, cfg, data),
        Command::Embed(a) => embed(a, cfg, data),
        Command::Search(a) => search(a, cfg, data),
        Command::Eval(a) => eval(a, cfg, data),
    }
}

fn fixtures(a: FixturesArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    set(&mut cfg.corpus.groups, a.groups);
    set(&mut cfg.corpus.variants, a.variants);
    set(&mut cfg.corpus.project, a.project);
    set(&mut cfg.corpus.function.min_blocks, a.min_blocks);
    set(&mut cfg.corpus.function.max_blocks, a.max_blocks);
    let out = cfg.output("corpus", a.out.unwrap_or_else(|| data.join("corpus.jsonl")));
    let functions = synth_corpus(&cfg.corpus, cfg.seed)?;
    let mut text = String::new();
    for f in &functions {
        text.push_str(&to_document_line(f));
        text.push('\n');
    }
    store::write_artifact(&out, text.as_bytes(), &cfg)?;
    emit(&cfg, json!({ "functions": functions.len(), "groups": cfg.corpus.groups }));
    Ok(())
}

fn ingest(a: IngestArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("corpus", a.input.unwrap_or_else(|| data.join("corpus.jsonl")));
    let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
    let parsed = parse_corpus(&text);
    if parsed.is_empty() {
        return Err(binsim_core::Error::Empty(format!("{} has no records", input.display())).into());
    }
    let mut warnings = Vec::new();
    let mut bad = Vec::new();
    let mut ok = 0;
    for (line, r) in &parsed {
        match r {
            Ok(ing) => {
                ok += 1;
                if ing.warning_count() > 0 {
                    warnings.push(json!({
                        "line": line,
                        "function": ing.function.name,
                        "pruned_blocks": ing.pruned_blocks,
                    }));
                }
            }
            Err(e) => bad.push(json!({ "line": line, "error": e.to_string() })),
        }
    }
    emit(
        &cfg,
        json!({ "records": ok, "warnings": warnings.len(), "warning_details": warnings, "errors": bad }),
    );
    if bad.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = bad.iter().map(|b| format!("line {}: {}", b["line"], b["error"])).collect();
    Err(binsim_core::Error::Structure(format!(
        "{} bad record(s):\n  {}",
        bad.len(),
        lines.join("\n  ")
    ))
    .into())
}

fn build(a: BuildArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("corpus", a.input.unwrap_or_else(|| data.join("corpus.jsonl")));
    let out = cfg.output("store", a.out.unwrap_or_else(|| data.join("store")));
    let functions = store::read_corpus(&input)?;
    let graphs: Vec<desg::Desg> = functions.par_iter().map(build_desg).collect();
    fs::create_dir_all(out.join("desg")).with_context(|| format!("creating {}", out.display()))?;
    let manifest: Vec<String> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let rel = store::desg_file(i);
            let path = out.join(&rel);
            fs::write(&path, desg::to_json(g) + "\n").with_context(|| format!("writing {}", path.display()))?;
            Ok(serde_json::to_string(&store::manifest_record(rel, g))?)
        })
        .collect::<Result<_>>()?;
    fs::write(out.join(store::MANIFEST), manifest.join("\n") + "\n")?;
    let stats = corpus_stats(&graphs)?;
    let stats_json = serde_json::to_string_pretty(&json!({ "run_config": cfg, "stats": stats }))? + "\n";
    fs::write(out.join("stats.json"), stats_json)?;
    store::write_sidecar(&out, &cfg)?;
    emit(&cfg, json!({ "graphs": graphs.len(), "stats": stats }));
    Ok(())
}

/// Each variant paired with its group's original.
fn ged_pairs(functions: Vec<PCodeFunction>, keep: &dyn Fn(&str) -> bool) -> Vec<(PCodeFunction, PCodeFunction)> {
    let mut originals = BTreeMap::new();
    let mut variants = Vec::new();
    for f in functions {
        if f.meta.obfuscation == ORIGINAL_TAG {
            originals.insert(f.group_id(), f);
        } else if keep(&f.meta.obfuscation) {
            variants.push(f);
        }
    }
    variants
        .into_iter()
        .filter_map(|v| match originals.get(&v.group_id()) {
            Some(o) => Some((o.clone(), v)),
            None => {
                log::warn!("`{}` ({}) has no original; skipped", v.group_id(), v.meta.obfuscation);
                None
            }
        })
        .collect()
}

fn ged(a: GedArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("corpus", a.input.unwrap_or_else(|| data.join("corpus.jsonl")));
    let out = cfg.output("report", a.out.unwrap_or_else(|| data.join("ged.json")));
    set(&mut cfg.protocol.ged_boundaries, a.boundaries);
    set(
        &mut cfg.protocol.ged_labels,
        a.labels.map(|l| match l {
            LabelArg::OpCount => LabelMode::OpCountLog2,
            LabelArg::None => LabelMode::NoLabels,
        }),
    );
    let tags: Option<Vec<&str>> = a.variants.as_ref().map(|v| v.iter().map(|m| m.tag()).collect());
    let keep = |t: &str| tags.as_ref().is_none_or(|ts| ts.contains(&t));
    let pairs = ged_pairs(store::read_corpus(&input)?, &keep);
    let report = stability_report(&pairs, &cfg.protocol.ged_boundaries, cfg.protocol.ged_labels)?;
    let (cfg_mean, dtree_mean) = report.overall_means();
    eprint!("{}", report.to_text_table());
    let summary = json!({
        "pairs": report.pairs.len(),
        "cfg_mean": cfg_mean,
        "dtree_mean": dtree_mean,
        "buckets": report.buckets,
    });
    let doc = json!({ "run_config": cfg, "report": report, "overall": summary });
    store::write_artifact(&out, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(), &cfg)?;
    emit(&cfg, summary);
    Ok(())
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("store", a.store.unwrap_or_else(|| data.join("store")));
    let out = cfg.output("checkpoint", a.out.unwrap_or_else(|| data.join("model.ckpt")));
    let log_path = cfg.output("log", a.log.unwrap_or_else(|| data.join("train.log.jsonl")));
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.model.d, a.dim);
    set(&mut t.model.layers, a.layers);
    set(&mut t.model.heads, a.heads);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.margin, a.margin);
    set(&mut t.lambda, a.lambda);
    set(&mut t.val_pool_size, a.val_pool_size);
    cfg.train.validate().map_err(|e| Usage(e.to_string()))?;

    let groups = group_graphs(store::read_store(&input)?);
    let (train_groups, valid_groups): (Vec<_>, Vec<_>) = groups
        .into_iter()
        .filter(|g| split_of(&g.id) != Split::Test)
        .partition(|g| split_of(&g.id) == Split::Train);
    log::info!("{} training groups, {} validation groups", train_groups.len(), valid_groups.len());
    if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    let mut log = RecordLog::create(&log_path, &cfg)?;
    let mut log_err = None;
    let sink = CheckpointSink {
        path: &out,
        provenance: cfg.to_value(),
    };
    let outcome = train(&train_groups, &valid_groups, &cfg.train, Some(&sink), &mut |rec| {
        if let Err(e) = log.append(rec) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    store::write_sidecar(&out, &cfg)?;
    let last = outcome.log.last().expect("at least one epoch");
    emit(
        &cfg,
        json!({
            "best_epoch": outcome.best_epoch,
            "final_loss": last.loss,
            "best_val_recall1": outcome.log[outcome.best_epoch - 1].val_recall1,
            "parameters": outcome.model.param_count(),
        }),
    );
    Ok(())
}

fn embed(a: EmbedArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let model_path = cfg.input("checkpoint", a.model.unwrap_or_else(|| data.join("model.ckpt")));
    let input = cfg.input("store", a.store.unwrap_or_else(|| data.join("store")));
    let out = cfg.output("embeddings", a.out.unwrap_or_else(|| data.join("embeddings.jsonl")));
    let (model, extra) = load_checkpoint(&model_path)?;
    if let Some(t) = extra.get("train_config").cloned() {
        cfg.train = serde_json::from_value(t).context("checkpoint training config")?;
    }
    let want = match a.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Valid => Some(Split::Valid),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let groups: Vec<_> = group_graphs(store::read_store(&input)?)
        .into_iter()
        .filter(|g| want.is_none_or(|s| split_of(&g.id) == s))
        .collect();
    if groups.is_empty() {
        return Err(binsim_core::Error::Empty(format!("no groups in the {:?} split", a.split)).into());
    }
    let items = embed_groups(&model, &groups)?;
    store::write_items(&out, &items, &cfg)?;
    emit(&cfg, json!({ "groups": groups.len(), "embeddings": items.len() }));
    Ok(())
}

fn search(a: SearchArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("embeddings", a.embeddings.unwrap_or_else(|| data.join("embeddings.jsonl")));
    let out = cfg.output("results", a.out.unwrap_or_else(|| data.join("search.jsonl")));
    if let Some(dir) = &a.plot_dir {
        cfg.output("plots", dir.clone());
    }
    set(&mut cfg.protocol.pool_sizes, a.pool_sizes);
    let items = store::read_items(&input)?;
    let rows = search_protocol(&items, &cfg.protocol.pool_sizes, cfg.seed)?;
    store::write_artifact(&out, search_records(&rows, &cfg.to_value()).as_bytes(), &cfg)?;
    if let Some(dir) = &a.plot_dir {
        fs::create_dir_all(dir)?;
        for (key, series) in plot_series(&rows) {
            fs::write(dir.join(format!("{key}.dat")), series)?;
        }
        store::write_sidecar(dir, &cfg)?;
    }
    eprint!("{}", search_table(&rows));
    emit(&cfg, json!({ "rows": rows }));
    Ok(())
}

fn eval(a: EvalArgs, mut cfg: RunConfig, data: PathBuf) -> Result<()> {
    let input = cfg.input("embeddings", a.embeddings.unwrap_or_else(|| data.join("embeddings.jsonl")));
    let out = cfg.output("results", a.out.unwrap_or_else(|| data.join("match.json")));
    set(&mut cfg.protocol.ratio, a.ratio);
    let items = store::read_items(&input)?;
    let r = match_protocol(&items, cfg.protocol.ratio, cfg.seed)?;
    let summary = json!({ "positives": r.positives, "negatives": r.negatives, "pr_auc": r.pr_auc });
    let doc = json!({ "run_config": cfg, "result": summary, "pairs": r.pairs });
    store::write_artifact(&out, (serde_json::to_string(&doc)? + "\n").as_bytes(), &cfg)?;
    emit(&cfg, summary);
    Ok(())
}
