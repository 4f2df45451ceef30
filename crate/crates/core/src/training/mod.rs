//! Pairwise margin training of the graph network.
//!
//! Each batch holds pairs of distinct members from distinct groups. The loss
//! per pair is `max(1 - cos(p,q) - m, 0) + max(cos(p,n) - m, 0)`, where the
//! negative `n` is drawn from the other pairs of the batch with
//! distance-weighted sampling.

mod optim;
mod sampling;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::desg::Desg;
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, search_pools, EvalItem};
use crate::gnn::{
    embed_graphs, loss_and_grads, save_checkpoint, Embedding, GnnConfig, GnnModel, Mat, Vocab,
};

pub use optim::AdamW;
pub use sampling::{normalized_density, sample_negative, sampling_weight};

/// Members of one source function across compile and obfuscation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionGroup {
    pub id: String,
    pub members: Vec<Desg>,
}

/// Groups graphs by identity, ordered by group id with members in input order.
pub fn group_graphs(graphs: impl IntoIterator<Item = Desg>) -> Vec<FunctionGroup> {
    let mut map: BTreeMap<String, Vec<Desg>> = BTreeMap::new();
    for g in graphs {
        map.entry(g.group_id()).or_default().push(g);
    }
    map.into_iter()
        .map(|(id, members)| FunctionGroup { id, members })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// 80/10/10 by a hash of the group id, so all variants of a function land
/// in the same split regardless of corpus order.
pub fn split_of(group_id: &str) -> Split {
    let h = Sha256::digest(group_id.as_bytes());
    let v = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    match v % 10 {
        0..=7 => Split::Train,
        8 => Split::Valid,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: GnnConfig,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Clip on the normalized distance density; bounds the weight spread at `1/λ`.
    pub lambda: f64,
    pub seed: u64,
    pub val_pool_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: GnnConfig::default(),
            margin: 0.5,
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda: 0.05,
            seed: 0,
            val_pool_size: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what}")));
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return bad("margin must lie in (0, 1)");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda > 0.0) {
            return bad("learning rate and sampling clip must be positive");
        }
        Ok(())
    }
}

/// `(group, member a, member b)` indices into the group list.
pub type PairRef = (usize, usize, usize);

/// One epoch of batches: every unordered member pair of every group once,
/// in random orientation. Pairs are dealt in rounds (one pair per group per
/// round) so no group appears twice in a batch. Single-member groups never
/// form a positive pair.
pub fn make_batches(
    groups: &[FunctionGroup],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<PairRef>>> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut queues: Vec<Vec<PairRef>> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.members.len() >= 2)
        .map(|(gi, g)| {
            let m = g.members.len();
            let mut pairs: Vec<PairRef> = (0..m)
                .flat_map(|a| (a + 1..m).map(move |b| (gi, a, b)))
                .map(|(gi, a, b)| if rng.gen::<bool>() { (gi, b, a) } else { (gi, a, b) })
                .collect();
            pairs.shuffle(rng);
            pairs
        })
        .collect();
    if queues.is_empty() {
        return Err(Error::InvalidArgument("every group has a single member".into()));
    }
    let mut batches = Vec::new();
    loop {
        let mut round: Vec<PairRef> = queues.iter_mut().filter_map(Vec::pop).collect();
        if round.is_empty() {
            return Ok(batches);
        }
        round.shuffle(rng);
        batches.extend(round.chunks(cfg.batch_size).map(<[PairRef]>::to_vec));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per pair.
    pub loss: f64,
    pub val_recall1: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (highest validation Recall@1, or lowest
    /// loss without a validation split).
    pub model: GnnModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

fn items_of(groups: &[FunctionGroup], embeddings: Vec<Embedding>) -> Vec<EvalItem> {
    groups
        .iter()
        .flat_map(|g| g.members.iter().map(move |m| (g, m)))
        .zip(embeddings)
        .map(|((g, m), embedding)| EvalItem {
            id: format!("{}@{}#{}", g.id, m.meta.obfuscation, m.meta.optimization),
            group: g.id.clone(),
            tag: m.meta.obfuscation.clone(),
            embedding,
        })
        .collect()
}

/// Embeds every member of `groups` as search items.
pub fn embed_groups(model: &GnnModel, groups: &[FunctionGroup]) -> Result<Vec<EvalItem>> {
    let graphs: Vec<&Desg> = groups.iter().flat_map(|g| &g.members).collect();
    Ok(items_of(groups, embed_graphs(model, &graphs)?))
}

/// Recall@1 over search pools of the given size (capped by what the split
/// can supply). `None` when the split yields no pool.
pub fn validation_recall(model: &GnnModel, groups: &[FunctionGroup], pool_size: usize, seed: u64) -> Result<Option<f64>> {
    if groups.len() < 2 {
        return Ok(None);
    }
    let items = embed_groups(model, groups)?;
    let largest = groups.iter().map(|g| g.members.len()).max().unwrap_or(0);
    let size = pool_size.min(items.len() - largest + 1).max(1);
    let pools = search_pools(&items, size, seed)?;
    if pools.is_empty() {
        return Ok(None);
    }
    let scored = pools.iter().map(|(_, p)| p.score()).collect::<Result<Vec<_>>>()?;
    Ok(Some(recall_at_k(&scored, 1)?))
}

/// Chooses a within-batch negative for every pair by distance-weighted
/// sampling over the other pairs' embeddings.
fn negative_chooser(lambda: f64, rng: &mut ChaCha8Rng) -> impl FnMut(usize, &Mat) -> Option<usize> + '_ {
    move |i, emb: &Mat| {
        let b = emb.rows() / 2;
        let rows: Vec<usize> = (0..emb.rows()).filter(|&r| r != i && r != b + i).collect();
        if rows.is_empty() {
            return None;
        }
        let cands: Vec<Embedding> = rows.iter().map(|&r| Embedding(emb.row(r).to_vec())).collect();
        let p = Embedding(emb.row(i).to_vec());
        let k = sample_negative(&p, &cands, lambda, rng).ok()?;
        Some(rows[k])
    }
}

/// Where the best model goes, plus caller context stored in its header.
#[derive(Debug, Clone)]
pub struct CheckpointSink<'a> {
    pub path: &'a Path,
    pub provenance: serde_json::Value,
}

/// Trains from scratch. The vocabulary is frozen from the training graphs.
/// When `checkpoint` is given, the best model so far is written to it after
/// every improving epoch; a diverging run returns the numeric error and
/// leaves that file untouched.
pub fn train(
    train_groups: &[FunctionGroup],
    valid_groups: &[FunctionGroup],
    cfg: &TrainConfig,
    checkpoint: Option<&CheckpointSink<'_>>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = Vocab::from_graphs(train_groups.iter().flat_map(|g| &g.members));
    let mut model = GnnModel::new(cfg.model, vocab, cfg.seed)?;
    let mut opt = AdamW::new(cfg, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(GnnModel, usize, f64, f64)> = None;
    let extra = |epoch: usize, rec: Option<f64>| {
        serde_json::json!({
            "train_config": cfg,
            "epoch": epoch,
            "val_recall1": rec,
            "provenance": checkpoint.map(|c| &c.provenance),
        })
    };

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train_groups, cfg, &mut rng)?;
        let (mut total, mut pairs_seen) = (0.0, 0usize);
        for batch in &batches {
            let pairs: Vec<(&Desg, &Desg)> = batch
                .iter()
                .map(|&(g, a, b)| (&train_groups[g].members[a], &train_groups[g].members[b]))
                .collect();
            let r = loss_and_grads(&model, &pairs, cfg.margin, negative_chooser(cfg.lambda, &mut rng))?;
            debug_assert!(r.loss >= 0.0);
            opt.step(&mut model.params, &r.grads)?;
            total += r.loss;
            pairs_seen += pairs.len();
        }
        let loss = total / pairs_seen as f64;
        let val = validation_recall(&model, valid_groups, cfg.val_pool_size, cfg.seed)?;
        let rec = EpochRecord {
            epoch,
            loss,
            val_recall1: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {loss:.5} val_recall1 {val:?}");
        on_epoch(&rec);
        let score = val.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((_, _, s, l)) => score > *s || (score == *s && loss < *l),
        };
        if better {
            if let Some(sink) = checkpoint {
                save_checkpoint(sink.path, &model, &extra(epoch, val))?;
            }
            best = Some((model.clone(), epoch, score, loss));
        }
        log.push(rec);
    }
    let (model, best_epoch, _, _) = best.ok_or_else(|| Error::InvalidArgument("zero epochs".into()))?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}
