//! Acceptance criteria 1-9. Runs sequentially (timings are part of the
//! criteria) and prints one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 3 7` runs only criteria 3 and 7.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use binsim_core::desg::{self, build_desg, check_invariants, Desg, EdgeKind, NodeKind};
use binsim_core::dominance::oracle::dominance_oracle;
use binsim_core::dominance::{dominator_tree, post_dominator_tree};
use binsim_core::eval::{
    mrr, pr_auc, recall_at_k, search_protocol, synth_corpus, CorpusSpec, ObfMode, ScoredPair,
    ScoredPool, OVERALL_TASK,
};
use binsim_core::fixtures;
use binsim_core::ged::{ged_approx, ged_exact, stability_report, LabelMode, LabeledGraph};
use binsim_core::gnn::{
    decode_checkpoint, embed_graph, embed_graphs, encode_checkpoint, load_checkpoint,
    loss_and_grads, save_checkpoint, GnnConfig, GnnModel, Mat, Vocab,
};
use binsim_core::pcode::{
    parse_corpus, to_document_line, Arch, Opcode, PCodeFunction, PCodeOp, Varnode,
};
use binsim_core::training::{embed_groups, group_graphs, split_of, train, Split, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets.
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_BUDGET: Duration = Duration::from_secs(5);
const C3_BUDGET: Duration = Duration::from_secs(60);
const C4_BUDGET: Duration = Duration::from_secs(5 * 60);
const C5_BUDGET: Duration = Duration::from_secs(60);
const C5_REL_TOL: f64 = 1e-4;
const C5_STEP: f64 = 1e-6;
const C6_BUDGET: Duration = Duration::from_secs(30);
const C6_TOL: f64 = 1e-6;
const C7_TOL: f64 = 1e-9;
const C8_BUDGET: Duration = Duration::from_secs(15 * 60);
const C8_MIN_RECALL1: f64 = 0.9;
const C8_MIN_MRR: f64 = 0.93;

/// Criterion 8 reference numbers from the first passing seeded run.
const C8_REF_RECALL1: f64 = 86.0 / 88.0;
const C8_REF_MRR: f64 = 0.9867424242424242;
const C8_REF_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn within(t: Instant, budget: Duration) -> Result<String, String> {
    let e = t.elapsed();
    if e <= budget {
        Ok(format!("{:.2}s", e.as_secs_f64()))
    } else {
        Err(format!("took {:.1}s, budget {:.0}s", e.as_secs_f64(), budget.as_secs_f64()))
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

/// Random CFG with every block reachable from block 0, at most two
/// successors per block, and some exits.
fn random_cfg(rng: &mut impl Rng, max_blocks: usize) -> Vec<Vec<usize>> {
    let n = rng.gen_range(1..=max_blocks);
    let mut succ = vec![Vec::new(); n];
    for b in 1..n {
        let mut p = rng.gen_range(0..b);
        while succ[p].len() >= 2 {
            p = rng.gen_range(0..b);
        }
        succ[p].push(b);
    }
    for s in succ.iter_mut() {
        if s.len() < 2 && rng.gen_bool(0.45) {
            let t = rng.gen_range(0..n);
            if !s.contains(&t) {
                s.push(t);
            }
        }
    }
    succ
}

fn function_from_cfg(succ: &[Vec<usize>]) -> PCodeFunction {
    let blocks = succ
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let target = Varnode::ram(0x1000 + i as u64, 8);
            let term = match s.len() {
                0 => PCodeOp::new(1, Opcode::Return, None, vec![Varnode::constant(0, 8)]),
                1 => PCodeOp::new(1, Opcode::Branch, None, vec![target]),
                _ => PCodeOp::new(1, Opcode::CBranch, None, vec![target, Varnode::register(0x206, 1)]),
            };
            let body = PCodeOp::new(
                0,
                Opcode::IntAdd,
                Some(Varnode::register(0, 8)),
                vec![Varnode::register(0, 8), Varnode::constant(i as u64, 8)],
            );
            (vec![body, term], s.clone())
        })
        .collect();
    PCodeFunction::from_blocks("cfg", Arch::X86, fixtures::meta(), blocks).expect("valid CFG")
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut blocks = 0;
    for case in 0..200 {
        let f = function_from_cfg(&random_cfg(&mut rng, 12));
        blocks += f.block_count();
        let (dt, pdt) = dominance_oracle(&f.successors(), f.entry()).map_err(|e| e.to_string())?;
        check(dominator_tree(&f) == dt, || format!("CFG {case}: dominator tree differs from oracle"))?;
        check(post_dominator_tree(&f) == pdt, || {
            format!("CFG {case}: post-dominator tree differs from oracle")
        })?;
    }

    // Statements about the motivating example, as written there.
    let f = fixtures::motivating();
    let dt = dominator_tree(&f);
    let pdt = post_dominator_tree(&f);
    let dom_children = |a: usize| -> BTreeSet<usize> { (0..7).filter(|&b| dt.idom(b) == Some(a)).collect() };
    let pdom_children =
        |a: usize| -> BTreeSet<usize> { (0..7).filter(|&b| pdt.real_ipdom(b) == Some(a)).collect() };
    let claims: [(&str, usize, &[usize], bool); 4] = [
        ("node v0 dominates nodes v6,v2,v1", 0, &[6, 2, 1], true),
        ("node v2 dominates nodes v3,v4,v5", 2, &[3, 4, 5], true),
        ("post-dominance relations from node v6 to nodes v1,v5,v0", 6, &[1, 5, 0], false),
        ("from node v5 to nodes v2,v3,v4", 5, &[2, 3, 4], false),
    ];
    for (text, a, nodes, dom) in claims {
        let want: BTreeSet<usize> = nodes.iter().copied().collect();
        let got = if dom { dom_children(a) } else { pdom_children(a) };
        check(got == want, || format!("`{text}` does not hold: tree children {got:?}"))?;
    }
    let time = within(t, C1_BUDGET)?;
    Ok(format!("200 CFGs ({blocks} blocks) match the oracle; 4 motivating-example statements hold; {time}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let spec = CorpusSpec {
        groups: 20,
        ..CorpusSpec::default()
    };
    let mut functions = vec![fixtures::two_block(), fixtures::motivating()];
    functions.extend(synth_corpus(&spec, 2).map_err(|e| e.to_string())?);
    let node_names: BTreeSet<&str> = ["bblock", "opcode", "operand"].into();
    let edge_names: BTreeSet<&str> = ["data", "effect", "contain", "dominate", "postdominate"].into();
    let mut seen_nodes = BTreeSet::new();
    let mut seen_edges = BTreeSet::new();
    for f in &functions {
        let g = build_desg(f);
        check_invariants(&g).map_err(|e| format!("{}: {e}", f.name))?;
        let text = desg::to_json(&g);
        check(text == desg::to_json(&build_desg(f)), || format!("{}: rebuild differs", f.name))?;
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        for n in doc["nodes"].as_array().ok_or("no nodes array")? {
            seen_nodes.insert(n[1].as_str().ok_or("node kind")?.to_string());
        }
        for e in doc["edges"].as_array().ok_or("no edges array")? {
            seen_edges.insert(e[2].as_str().ok_or("edge kind")?.to_string());
        }

        let kind = |i: usize| g.nodes[i].kind;
        let count = |k: EdgeKind| g.edges.iter().filter(|e| e.kind == k).count();
        check(count(EdgeKind::Dominate) == f.block_count() - 1, || {
            format!("{}: {} dominate edges for {} blocks", f.name, count(EdgeKind::Dominate), f.block_count())
        })?;
        let mut contain_per_opcode = BTreeMap::new();
        for e in g.edges.iter().filter(|e| e.kind == EdgeKind::Contain) {
            check(kind(e.src) == NodeKind::Bblock && kind(e.dst) == NodeKind::Opcode, || {
                format!("{}: contain edge {}->{} is not block->opcode", f.name, e.src, e.dst)
            })?;
            *contain_per_opcode.entry(e.dst).or_insert(0) += 1;
        }
        let opcodes = g.nodes.iter().filter(|n| n.kind == NodeKind::Opcode).count();
        check(
            contain_per_opcode.len() == opcodes && contain_per_opcode.values().all(|&c| c == 1),
            || format!("{}: contain edges are not one per opcode node", f.name),
        )?;
        // Block-to-block edges may only come from the two trees.
        for e in &g.edges {
            if kind(e.src) == NodeKind::Bblock && kind(e.dst) == NodeKind::Bblock {
                check(matches!(e.kind, EdgeKind::Dominate | EdgeKind::Postdominate), || {
                    format!("{}: raw control-flow edge {}->{}", f.name, e.src, e.dst)
                })?;
            }
        }
    }
    let seen_nodes: BTreeSet<&str> = seen_nodes.iter().map(String::as_str).collect();
    let seen_edges: BTreeSet<&str> = seen_edges.iter().map(String::as_str).collect();
    check(seen_nodes == node_names, || format!("node kinds {seen_nodes:?}"))?;
    check(seen_edges == edge_names, || format!("edge kinds {seen_edges:?}"))?;
    let time = within(t, C2_BUDGET)?;
    Ok(format!("{} fixtures: 3 node kinds, 5 edge kinds, tree-only block edges, stable bytes; {time}", functions.len()))
}

// ---------------------------------------------------------------- 3

fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> LabeledGraph {
    let n = rng.gen_range(0..=max_nodes);
    let labels = (0..n).map(|_| ["a", "b", "c"][rng.gen_range(0..3)].to_string()).collect();
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.gen_bool(0.3) {
                edges.push((s, d));
            }
        }
    }
    LabeledGraph::new(labels, edges)
}

fn relabeled(g: &LabeledGraph, perm: &[usize]) -> LabeledGraph {
    let mut labels = vec![String::new(); g.labels.len()];
    for (i, l) in g.labels.iter().enumerate() {
        labels[perm[i]] = l.clone();
    }
    LabeledGraph::new(labels, g.edges.iter().map(|&(s, d)| (perm[s], perm[d])))
}

/// Brute force over all bijections.
fn isomorphic(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    fn go(a: &LabeledGraph, b: &LabeledGraph, perm: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        let n = a.labels.len();
        if perm.len() == n {
            let mapped: BTreeSet<(usize, usize)> = a.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
            return mapped == b.edges.iter().copied().collect();
        }
        let i = perm.len();
        for j in 0..n {
            if !used[j] && a.labels[i] == b.labels[j] {
                used[j] = true;
                perm.push(j);
                if go(a, b, perm, used) {
                    return true;
                }
                perm.pop();
                used[j] = false;
            }
        }
        false
    }
    a.labels.len() == b.labels.len()
        && a.edges.len() == b.edges.len()
        && go(a, b, &mut Vec::new(), &mut vec![false; b.labels.len()])
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut iso, mut tight) = (0, 0);
    for case in 0..100 {
        let a = random_graph(&mut rng, 6);
        // Every third pair is a relabeled copy, so both sides of the iff are exercised.
        let b = if case % 3 == 0 {
            let mut perm: Vec<usize> = (0..a.labels.len()).collect();
            perm.shuffle(&mut rng);
            relabeled(&a, &perm)
        } else {
            random_graph(&mut rng, 6)
        };
        let exact = ged_exact(&a, &b).map_err(|e| e.to_string())?;
        let approx = ged_approx(&a, &b);
        check(approx >= exact, || format!("pair {case}: approx {approx} < exact {exact}"))?;
        let is_iso = isomorphic(&a, &b);
        check((approx == 0) == is_iso, || {
            format!("pair {case}: approx {approx} but isomorphic = {is_iso}")
        })?;
        iso += usize::from(is_iso);
        tight += usize::from(approx == exact);
    }
    let time = within(t, C3_BUDGET)?;
    Ok(format!("100 pairs: approx >= exact always, {iso} isomorphic pairs all at 0, approx exact on {tight}; {time}"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let spec = CorpusSpec {
        groups: 60,
        variants: vec![ObfMode::Bcf, ObfMode::Fla],
        ..CorpusSpec::default()
    };
    let corpus = synth_corpus(&spec, 4).map_err(|e| e.to_string())?;
    let pairs: Vec<(PCodeFunction, PCodeFunction)> = corpus
        .chunks(3)
        .flat_map(|c| [(c[0].clone(), c[1].clone()), (c[0].clone(), c[2].clone())])
        .collect();
    let report = stability_report(&pairs, &[4, 8, 12], LabelMode::OpCountLog2).map_err(|e| e.to_string())?;
    let (cfg, dtree) = report.overall_means();
    check(report.pairs.len() >= 100, || format!("only {} pairs", report.pairs.len()))?;
    check(dtree < cfg, || format!("mean D-tree GED {dtree:.2} is not below mean CFG GED {cfg:.2}"))?;
    let time = within(t, C4_BUDGET)?;
    Ok(format!("{} bcf/fla pairs: mean CFG GED {cfg:.2} > mean D-tree GED {dtree:.2}; {time}", report.pairs.len()))
}

// ---------------------------------------------------------------- 5

fn tiny_model(graphs: &[Desg], seed: u64) -> GnnModel {
    let cfg = GnnConfig { d: 4, layers: 1, heads: 2 };
    GnnModel::new(cfg, Vocab::from_graphs(graphs), seed).expect("valid config")
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let spec = CorpusSpec {
        groups: 2,
        variants: vec![ObfMode::Bcf],
        ..CorpusSpec::default()
    };
    let graphs: Vec<Desg> = synth_corpus(&spec, 5).map_err(|e| e.to_string())?.iter().map(build_desg).collect();
    let mut model = tiny_model(&graphs, 5);
    // Untrained embeddings sit close together, so the "positive" pairs cross
    // groups and the margin is small to keep both hinges active.
    let pairs = [(&graphs[0], &graphs[3]), (&graphs[2], &graphs[1])];
    // Each anchor's negative is the other pair's second member.
    let chooser = |i: usize, _: &Mat| Some((i + 1) % 2 + 2);
    let margin = 0.01;
    let base = loss_and_grads(&model, &pairs, margin, chooser).map_err(|e| e.to_string())?;
    check(base.positive > 0.0 && base.negative > 0.0, || {
        format!("hinge terms inactive ({} / {}), check is vacuous", base.positive, base.negative)
    })?;

    let mut worst = (String::new(), 0.0f64);
    for k in 0..model.params.len() {
        let n = model.params[k].value.len();
        let mut fd = vec![0.0; n];
        for (i, slot) in fd.iter_mut().enumerate() {
            let x = model.params[k].value.data()[i];
            model.params[k].value.data_mut()[i] = x + C5_STEP;
            let up = loss_and_grads(&model, &pairs, margin, chooser).map_err(|e| e.to_string())?.loss;
            model.params[k].value.data_mut()[i] = x - C5_STEP;
            let down = loss_and_grads(&model, &pairs, margin, chooser).map_err(|e| e.to_string())?.loss;
            model.params[k].value.data_mut()[i] = x;
            *slot = (up - down) / (2.0 * C5_STEP);
        }
        let an = base.grads[k].data();
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut fd.iter().zip(an).map(|(a, b)| a - b));
        let scale = norm(&mut fd.iter().copied()).max(norm(&mut an.iter().copied()));
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        if rel > worst.1 {
            worst = (model.params[k].name.clone(), rel);
        }
        check(rel < C5_REL_TOL, || format!("`{}`: relative error {rel:.2e}", model.params[k].name))?;
    }
    let time = within(t, C5_BUDGET)?;
    Ok(format!(
        "{} tensors pass; worst `{}` at {:.2e} (< {C5_REL_TOL:.0e}); {time}",
        model.params.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let spec = CorpusSpec {
        groups: 10,
        ..CorpusSpec::default()
    };
    let graphs: Vec<Desg> = synth_corpus(&spec, 6).map_err(|e| e.to_string())?.iter().map(build_desg).collect();
    let model = GnnModel::new(GnnConfig { d: 32, layers: 3, heads: 4 }, Vocab::from_graphs(&graphs), 6)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for (case, g) in graphs.iter().take(50).enumerate() {
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let a = embed_graph(&model, g).map_err(|e| e.to_string())?;
        let b = embed_graph(&model, &g.permuted(&perm)).map_err(|e| e.to_string())?;
        let d = a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        check(d < C6_TOL, || format!("graph {case}: max entry difference {d:.2e}"))?;
    }
    let time = within(t, C6_BUDGET)?;
    Ok(format!("50 permuted graphs: max entry difference {worst:.1e} (< {C6_TOL:.0e}); {time}"))
}

// ---------------------------------------------------------------- 7

fn pool_with_truth_at(rank: usize, size: usize) -> ScoredPool {
    let scores = (0..size).map(|i| 1.0 - i as f64 / size as f64).collect();
    let truth = (0..size).map(|i| i + 1 == rank).collect();
    ScoredPool::new(scores, truth).expect("valid pool")
}

fn criterion_7() -> Outcome {
    let pairs = [(0.9, true), (0.8, false), (0.7, true)]
        .map(|(score, positive)| ScoredPair { score, positive });
    let auc = pr_auc(&pairs).map_err(|e| e.to_string())?;
    // Precision 1 at recall 1/2, then 2/3 at recall 1.
    let auc_want = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    check((auc - auc_want).abs() <= C7_TOL, || format!("PR-AUC {auc} vs {auc_want}"))?;

    let pools: Vec<ScoredPool> = [1, 2, 4].map(|r| pool_with_truth_at(r, 5)).into();
    let m = mrr(&pools).map_err(|e| e.to_string())?;
    let m_want = (1.0 + 1.0 / 2.0 + 1.0 / 4.0) / 3.0;
    check((m - m_want).abs() <= C7_TOL, || format!("MRR {m} vs {m_want}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_pools: Vec<ScoredPool> = (0..20)
        .map(|_| {
            let n = rng.gen_range(2..30);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 8.0).collect();
            let mut truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
            let t = rng.gen_range(0..n);
            truth[t] = true;
            ScoredPool::new(scores, truth).expect("valid pool")
        })
        .collect();
    let curve: Vec<f64> = (1..=30)
        .map(|k| recall_at_k(&random_pools, k))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    check(curve.windows(2).all(|w| w[0] <= w[1]), || format!("Recall@k not monotone: {curve:?}"))?;
    check((curve[29] - 1.0).abs() < 1e-12, || format!("Recall@30 = {}", curve[29]))?;
    Ok(format!(
        "PR-AUC {auc:.10}, MRR {m:.10}, Recall@k monotone over k=1..30 on 20 pools ({:.3} -> 1)",
        curve[0]
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let t = Instant::now();
    // Fixtures go through the interchange text format, as they would on disk.
    let spec = CorpusSpec {
        groups: 200,
        variants: vec![ObfMode::Sub, ObfMode::Bcf, ObfMode::Fla, ObfMode::All],
        ..CorpusSpec::default()
    };
    let text: String = synth_corpus(&spec, 0)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|f| to_document_line(f) + "\n")
        .collect();
    let functions = parse_corpus(&text)
        .into_iter()
        .map(|(line, r)| r.map(|i| i.function).map_err(|e| format!("line {line}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let graphs = functions
        .iter()
        .map(|f| desg::from_json(&desg::to_json(&build_desg(f))))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;

    let mut split: BTreeMap<Split, Vec<_>> = BTreeMap::new();
    for g in group_graphs(graphs) {
        split.entry(split_of(&g.id)).or_default().push(g);
    }
    let cfg = TrainConfig {
        model: GnnConfig { d: 16, layers: 3, heads: 4 },
        epochs: 10,
        learning_rate: 3e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&split[&Split::Train], &split[&Split::Valid], &cfg, None, &mut |r| {
        eprintln!("    epoch {:>2} loss {:.5} val Recall@1 {:?}", r.epoch, r.loss, r.val_recall1);
    })
    .map_err(|e| e.to_string())?;
    let held_out = &split[&Split::Test];
    let items = embed_groups(&out.model, held_out).map_err(|e| e.to_string())?;
    let rows = search_protocol(&items, &[50], 0).map_err(|e| e.to_string())?;
    let overall = rows.iter().find(|r| r.task == OVERALL_TASK).ok_or("no overall row")?;
    let per_task: Vec<String> = rows
        .iter()
        .filter(|r| r.task != OVERALL_TASK)
        .map(|r| format!("{} {:.3}", r.task, r.recall1))
        .collect();
    check(overall.recall1 >= C8_MIN_RECALL1, || format!("Recall@1 {:.4} < {C8_MIN_RECALL1}", overall.recall1))?;
    check(overall.mrr >= C8_MIN_MRR, || format!("MRR {:.4} < {C8_MIN_MRR}", overall.mrr))?;
    check(
        (overall.recall1 - C8_REF_RECALL1).abs() <= C8_REF_TOL && (overall.mrr - C8_REF_MRR).abs() <= C8_REF_TOL,
        || {
            format!(
                "run drifted from the pinned reference: Recall@1 {} MRR {} (pinned {C8_REF_RECALL1} / {C8_REF_MRR})",
                overall.recall1, overall.mrr
            )
        },
    )?;
    let time = within(t, C8_BUDGET)?;
    Ok(format!(
        "{} held-out groups, {} pools of 50: Recall@1 {:.4}, MRR {:.4} [{}], best epoch {}; {time}",
        held_out.len(),
        overall.pools,
        overall.recall1,
        overall.mrr,
        per_task.join(", "),
        out.best_epoch
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let spec = CorpusSpec {
        groups: 4,
        ..CorpusSpec::default()
    };
    let graphs: Vec<Desg> = synth_corpus(&spec, 9).map_err(|e| e.to_string())?.iter().map(build_desg).collect();
    check(graphs.len() == 20, || format!("{} graphs", graphs.len()))?;
    let model = GnnModel::new(GnnConfig { d: 16, layers: 2, heads: 2 }, Vocab::from_graphs(&graphs), 9)
        .map_err(|e| e.to_string())?;
    let refs: Vec<&Desg> = graphs.iter().collect();
    let before = embed_graphs(&model, &refs).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, &serde_json::json!({"criterion": 9})).map_err(|e| e.to_string())?;
    let (loaded, extra) = load_checkpoint(&path).map_err(|e| e.to_string())?;
    check(extra["criterion"] == 9, || "extra header lost".into())?;
    let after = embed_graphs(&loaded, &refs).map_err(|e| e.to_string())?;
    let bits = |v: &[binsim_core::gnn::Embedding]| -> Vec<u64> {
        v.iter().flat_map(|e| e.0.iter().map(|x| x.to_bits())).collect()
    };
    check(bits(&before) == bits(&after), || "embeddings differ after reload".into())?;
    let bytes = encode_checkpoint(&model, &extra).map_err(|e| e.to_string())?;
    let (again, _) = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    check(again == loaded, || "in-memory and on-disk decodes differ".into())?;
    Ok(format!("20 graphs, {} embedding values bit-identical after save/load", bits(&after).len()))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "dominance oracle equivalence", criterion_1),
        (2, "DESG structural suite", criterion_2),
        (3, "GED oracle bound", criterion_3),
        (4, "directional stability", criterion_4),
        (5, "gradient check", criterion_5),
        (6, "permutation invariance", criterion_6),
        (7, "metric fixtures", criterion_7),
        (8, "end-to-end desk run", criterion_8),
        (9, "checkpoint round-trip", criterion_9),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in criteria {
            println!("criterion_{n}_{}: test", name.replace([' ', '-'], "_"));
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
