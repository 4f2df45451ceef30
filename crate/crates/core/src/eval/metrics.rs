//! Retrieval metrics. Ties are always broken against the ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub positive: bool,
}

/// Average precision: positives are visited in descending score order
/// (negatives first within a tie) and the precision at each is averaged.
pub fn pr_auc(pairs: &[ScoredPair]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.positive).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::InvalidArgument(
            "average precision needs at least one positive and one negative".into(),
        ));
    }
    if let Some(p) = pairs.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite(format!("pair score {}", p.score)));
    }
    let mut order: Vec<&ScoredPair> = pairs.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.positive.cmp(&b.positive)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, p) in order.iter().enumerate() {
        if p.positive {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Candidate scores of one query, with the ground-truth marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPool {
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

impl ScoredPool {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::InvalidArgument("scores and truth marks differ in length".into()));
        }
        if !truth.iter().any(|&t| t) {
            return Err(Error::InvalidArgument("pool has no ground truth".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("pool score".into()));
        }
        Ok(Self { scores, truth })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn truth_count(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    /// Candidate indices best first; a truth loses every tie.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.truth[a].cmp(&self.truth[b]))
                .then(a.cmp(&b))
        });
        idx
    }

    /// 1-based rank of the best-placed truth.
    pub fn first_truth_rank(&self) -> usize {
        self.ranking()
            .iter()
            .position(|&i| self.truth[i])
            .expect("pool has a truth")
            + 1
    }
}

/// Mean over pools of `|top-k ∩ truth| / |truth|`; with one truth per pool
/// this is the fraction of pools whose truth ranks within `k`.
pub fn recall_at_k(pools: &[ScoredPool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if pools.is_empty() {
        return Err(Error::Empty("no pools".into()));
    }
    let total: f64 = pools
        .iter()
        .map(|p| {
            let hit = p.ranking().iter().take(k).filter(|&&i| p.truth[i]).count();
            hit as f64 / p.truth_count() as f64
        })
        .sum();
    Ok(total / pools.len() as f64)
}

pub fn mrr(pools: &[ScoredPool]) -> Result<f64> {
    if pools.is_empty() {
        return Err(Error::Empty("no pools".into()));
    }
    if pools.iter().any(|p| p.truth_count() != 1) {
        return Err(Error::InvalidArgument(
            "reciprocal rank needs exactly one truth per pool; use recall_at_k".into(),
        ));
    }
    let total: f64 = pools.iter().map(|p| 1.0 / p.first_truth_rank() as f64).sum();
    Ok(total / pools.len() as f64)
}
