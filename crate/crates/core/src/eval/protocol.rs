//! One-to-one matching and one-to-many search over embedded functions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mrr, pr_auc, recall_at_k, ScoredPair, ScoredPool};
use super::synth::ORIGINAL_TAG;
use crate::error::{Error, Result};
use crate::gnn::Embedding;

/// An embedded function with its identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    /// Unique per function, e.g. `group@tag`.
    pub id: String,
    pub group: String,
    /// Obfuscation tag; originals carry [`ORIGINAL_TAG`].
    pub tag: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPool {
    pub query: (String, Embedding),
    pub candidates: Vec<(String, Embedding)>,
    pub truth: BTreeSet<String>,
}

impl EvalPool {
    pub fn score(&self) -> Result<ScoredPool> {
        let ids: HashSet<&str> = self.candidates.iter().map(|(id, _)| id.as_str()).collect();
        if let Some(t) = self.truth.iter().find(|t| !ids.contains(t.as_str())) {
            return Err(Error::InvalidArgument(format!("truth `{t}` is not a candidate")));
        }
        let scores = self
            .candidates
            .iter()
            .map(|(_, e)| self.query.1.cosine(e))
            .collect();
        let truth = self
            .candidates
            .iter()
            .map(|(id, _)| self.truth.contains(id))
            .collect();
        ScoredPool::new(scores, truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub positives: usize,
    pub negatives: usize,
    pub pr_auc: f64,
    pub pairs: Vec<ScoredPair>,
}

fn groups_of(items: &[EvalItem]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(it.group.as_str()).or_default().push(i);
    }
    groups
}

/// Positives are all same-group pairs; `ratio` negatives per positive are
/// drawn without replacement from the cross-group pairs.
pub fn match_protocol(items: &[EvalItem], ratio: usize, seed: u64) -> Result<MatchResult> {
    let groups = groups_of(items);
    let mut positives = Vec::new();
    for members in groups.values() {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                positives.push((a, b));
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::InvalidArgument("no group has two members".into()));
    }
    let n = items.len();
    let cross = n * (n - 1) / 2 - positives.len();
    let wanted = ratio * positives.len();
    if wanted > cross {
        return Err(Error::InvalidArgument(format!(
            "{wanted} negatives requested but only {cross} cross-group pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives: Vec<(usize, usize)> = if 2 * wanted > cross {
        let mut all = Vec::with_capacity(cross);
        for a in 0..n {
            for b in a + 1..n {
                if items[a].group != items[b].group {
                    all.push((a, b));
                }
            }
        }
        let mut picked: Vec<usize> = sample(&mut rng, all.len(), wanted).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| all[i]).collect()
    } else {
        let mut seen = HashSet::with_capacity(wanted);
        let mut out = Vec::with_capacity(wanted);
        while out.len() < wanted {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let key = (a.min(b), a.max(b));
            if a != b && items[a].group != items[b].group && seen.insert(key) {
                out.push(key);
            }
        }
        out
    };
    let score = |&(a, b): &(usize, usize)| items[a].embedding.cosine(&items[b].embedding);
    let mut pairs: Vec<ScoredPair> = positives
        .iter()
        .map(|p| ScoredPair {
            score: score(p),
            positive: true,
        })
        .collect();
    pairs.extend(negatives.iter().map(|p| ScoredPair {
        score: score(p),
        positive: false,
    }));
    Ok(MatchResult {
        positives: positives.len(),
        negatives: negatives.len(),
        pr_auc: pr_auc(&pairs)?,
        pairs,
    })
}

/// One pool per obfuscated variant whose group has an original: the variant
/// is the query, the original the single truth, and `pool_size - 1`
/// distractors are drawn from the members of other groups.
pub fn search_pools(items: &[EvalItem], pool_size: usize, seed: u64) -> Result<Vec<(String, EvalPool)>> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool size must be at least 1".into()));
    }
    let groups = groups_of(items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::new();
    for (group, members) in &groups {
        let Some(&orig) = members.iter().find(|&&i| items[i].tag == ORIGINAL_TAG) else {
            continue;
        };
        let others: Vec<usize> = (0..items.len()).filter(|&i| items[i].group != *group).collect();
        if others.len() + 1 < pool_size {
            return Err(Error::InvalidArgument(format!(
                "pool size {pool_size} exceeds the {} candidates available for `{group}`",
                others.len() + 1
            )));
        }
        for &q in members.iter().filter(|&&i| i != orig) {
            let mut candidates = vec![(items[orig].id.clone(), items[orig].embedding.clone())];
            for k in sample(&mut rng, others.len(), pool_size - 1) {
                let it = &items[others[k]];
                candidates.push((it.id.clone(), it.embedding.clone()));
            }
            pools.push((
                items[q].tag.clone(),
                EvalPool {
                    query: (items[q].id.clone(), items[q].embedding.clone()),
                    candidates,
                    truth: BTreeSet::from([items[orig].id.clone()]),
                },
            ));
        }
    }
    if pools.is_empty() {
        return Err(Error::Empty("no group has both an original and a variant".into()));
    }
    Ok(pools)
}

pub const OVERALL_TASK: &str = "overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub task: String,
    pub pool_size: usize,
    pub pools: usize,
    #[serde(rename = "recall@1")]
    pub recall1: f64,
    pub mrr: f64,
}

/// Recall@1 and MRR per task (obfuscation tag) and overall, for each pool size.
pub fn search_protocol(items: &[EvalItem], pool_sizes: &[usize], seed: u64) -> Result<Vec<SearchRow>> {
    let mut rows = Vec::new();
    for (s, &size) in pool_sizes.iter().enumerate() {
        let pools = search_pools(items, size, seed.wrapping_add(s as u64))?;
        let scored: Vec<(String, ScoredPool)> = pools
            .par_iter()
            .map(|(task, p)| Ok((task.clone(), p.score()?)))
            .collect::<Result<_>>()?;
        let mut by_task: BTreeMap<&str, Vec<ScoredPool>> = BTreeMap::new();
        for (task, p) in &scored {
            by_task.entry(task.as_str()).or_default().push(p.clone());
        }
        let all: Vec<ScoredPool> = scored.iter().map(|(_, p)| p.clone()).collect();
        for (task, ps) in by_task.iter().map(|(t, p)| (*t, p)).chain([(OVERALL_TASK, &all)]) {
            rows.push(SearchRow {
                task: task.to_string(),
                pool_size: size,
                pools: ps.len(),
                recall1: recall_at_k(ps, 1)?,
                mrr: mrr(ps)?,
            });
        }
    }
    Ok(rows)
}
