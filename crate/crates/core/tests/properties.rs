use binsim_core::desg::{build_desg, check_invariants, from_json, to_json};
use binsim_core::dominance::oracle::dominance_oracle;
use binsim_core::dominance::{dominator_tree, post_dominator_tree};
use binsim_core::eval::{
    mrr, pr_auc, random_function, recall_at_k, synth_obfuscate, ObfMode, ScoredPair, ScoredPool,
    SynthSpec,
};
use binsim_core::fixtures;
use binsim_core::ged::{ged_approx, ged_exact, LabeledGraph};
use binsim_core::gnn::{
    decode_checkpoint, embed_graph, encode_checkpoint, loss_and_grads, Embedding, GnnConfig,
    GnnModel, Mat, Vocab,
};
use binsim_core::pcode::{parse_function, to_document_line, PCodeFunction};
use binsim_core::training::{sample_negative, sampling_weight};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn function(seed: u64) -> PCodeFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_function(format!("f{seed}"), fixtures::meta(), &SynthSpec::default(), &mut rng).unwrap()
}

fn graph(seed: u64, max_nodes: usize) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..=max_nodes);
    let labels = (0..n).map(|_| ["x", "y"][rng.gen_range(0..2)].to_string()).collect();
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.gen_bool(0.35) {
                edges.push((s, d));
            }
        }
    }
    LabeledGraph::new(labels, edges)
}

fn mode() -> impl Strategy<Value = ObfMode> {
    prop_oneof![Just(ObfMode::Sub), Just(ObfMode::Bcf), Just(ObfMode::Fla), Just(ObfMode::All)]
}

fn small_model(f: &[&PCodeFunction], seed: u64) -> (GnnModel, Vec<binsim_core::desg::Desg>) {
    let graphs: Vec<_> = f.iter().map(|f| build_desg(f)).collect();
    let cfg = GnnConfig { d: 8, layers: 2, heads: 2 };
    (GnnModel::new(cfg, Vocab::from_graphs(&graphs), seed).unwrap(), graphs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dominance_matches_oracle(seed in any::<u64>(), m in mode()) {
        let f = synth_obfuscate(&function(seed), m, seed);
        // The brute-force oracle is exponential.
        prop_assume!(f.block_count() <= 14);
        let (dt, pdt) = dominance_oracle(&f.successors(), f.entry()).unwrap();
        prop_assert_eq!(dominator_tree(&f), dt);
        prop_assert_eq!(post_dominator_tree(&f), pdt);
    }

    #[test]
    fn desg_invariants_and_stable_bytes(seed in any::<u64>(), m in mode()) {
        let f = synth_obfuscate(&function(seed), m, seed ^ 1);
        let g = build_desg(&f);
        prop_assert_eq!(check_invariants(&g), Ok(()));
        let text = to_json(&g);
        prop_assert_eq!(to_json(&from_json(&text).unwrap()), text);
    }

    #[test]
    fn interchange_round_trips(seed in any::<u64>(), m in mode()) {
        let f = synth_obfuscate(&function(seed), m, seed);
        let back = parse_function(to_document_line(&f).as_bytes()).unwrap();
        prop_assert_eq!(back.pruned_blocks, 0);
        prop_assert_eq!(back.function, f);
    }

    #[test]
    fn obfuscation_block_counts(seed in any::<u64>()) {
        let f = function(seed);
        let n = f.block_count();
        prop_assert_eq!(synth_obfuscate(&f, ObfMode::Sub, seed).block_count(), n);
        prop_assert!(synth_obfuscate(&f, ObfMode::Bcf, seed).block_count() > n);
        prop_assert_eq!(&synth_obfuscate(&f, ObfMode::Fla, seed).name, &f.name);
    }

    #[test]
    fn approx_ged_bounds_exact(a in any::<u64>(), b in any::<u64>()) {
        let (ga, gb) = (graph(a, 5), graph(b, 5));
        let exact = ged_exact(&ga, &gb).unwrap();
        let approx = ged_approx(&ga, &gb);
        prop_assert!(approx >= exact, "approx {} < exact {}", approx, exact);
        prop_assert_eq!(ged_approx(&ga, &ga), 0);
        prop_assert_eq!(ged_exact(&gb, &ga).unwrap(), exact);
    }

    #[test]
    fn sampling_weight_is_clipped(d in 0.0f64..2.0, n in 4usize..256, lambda in 0.01f64..1.0) {
        let w = sampling_weight(d, n, lambda);
        prop_assert!(w >= 1.0 - 1e-12 && w <= 1.0 / lambda + 1e-9, "weight {}", w);
    }

    #[test]
    fn sampler_stays_in_range(seed in any::<u64>(), k in 1usize..20, dim in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = || {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            Embedding(v.into_iter().map(|x| x / n).collect())
        };
        let p = unit();
        let candidates: Vec<Embedding> = (0..k).map(|_| unit()).collect();
        let mut draw = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let j = sample_negative(&p, &candidates, 0.05, &mut draw).unwrap();
        prop_assert!(j < k);
    }

    #[test]
    fn metrics_are_bounded_and_monotone(
        pools in prop::collection::vec(
            (prop::collection::vec(-1.0f64..1.0, 2..12), any::<prop::sample::Index>()),
            1..10,
        ),
        flags in prop::collection::vec((-1.0f64..1.0, any::<bool>()), 2..40),
    ) {
        let pools: Vec<ScoredPool> = pools
            .into_iter()
            .map(|(scores, t)| {
                let truth_at = t.index(scores.len());
                let truth = (0..scores.len()).map(|i| i == truth_at).collect();
                ScoredPool::new(scores, truth).unwrap()
            })
            .collect();
        let m = mrr(&pools).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        let mut last = 0.0;
        for k in 1..=12 {
            let r = recall_at_k(&pools, k).unwrap();
            prop_assert!(r >= last && r <= 1.0);
            last = r;
        }
        prop_assert_eq!(last, 1.0);

        let pairs: Vec<ScoredPair> = flags.iter().map(|&(score, positive)| ScoredPair { score, positive }).collect();
        let positives = pairs.iter().filter(|p| p.positive).count();
        if positives > 0 && positives < pairs.len() {
            let ap = pr_auc(&pairs).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn embedding_ignores_node_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let f = function(seed);
        let (model, graphs) = small_model(&[&f], seed);
        let g = &graphs[0];
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(shuffle));
        let a = embed_graph(&model, g).unwrap();
        let b = embed_graph(&model, &g.permuted(&perm)).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_twins_pay_no_positive_term(seed in any::<u64>(), margin in 0.0f64..0.8) {
        let (f, h) = (function(seed), function(seed.wrapping_add(1)));
        let (model, graphs) = small_model(&[&f, &h], seed);
        let pairs = [(&graphs[0], &graphs[0]), (&graphs[1], &graphs[1])];
        let out = loss_and_grads(&model, &pairs, margin, |i: usize, _: &Mat| Some(1 - i)).unwrap();
        prop_assert!(out.loss >= 0.0 && out.positive >= 0.0 && out.negative >= 0.0);
        prop_assert!(out.positive < 1e-12);
        prop_assert!((out.loss - out.positive - out.negative).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>()) {
        let f = function(seed);
        let (model, graphs) = small_model(&[&f], seed);
        let extra = serde_json::json!({ "seed": seed });
        let bytes = encode_checkpoint(&model, &extra).unwrap();
        let (again, back) = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back, extra);
        let (a, b) = (embed_graph(&model, &graphs[0]).unwrap(), embed_graph(&again, &graphs[0]).unwrap());
        prop_assert_eq!(a.0, b.0);
    }
}
