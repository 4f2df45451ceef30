//! Distance-weighted negative sampling.
//!
//! For unit vectors in `n` dimensions the pairwise distance has density
//! `q(d) ∝ d^(n-2) (1 - d²/4)^((n-3)/2)`. Sampling with weight `1/q(d)`
//! spreads negatives over all distances instead of concentrating them around
//! the mode; clipping `q` at `λ` (after scaling `q` to peak at 1) bounds
//! any candidate's weight at `1/λ` times the least likely one.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gnn::Embedding;

fn log_q(d: f64, n: usize) -> f64 {
    let n = n as f64;
    let d = d.clamp(1e-12, 2.0 - 1e-12);
    (n - 2.0) * d.ln() + (n - 3.0) / 2.0 * (1.0 - d * d / 4.0).ln()
}

/// `q(d)` scaled so its maximum over `[0, 2]` is 1. Below four dimensions the
/// density has no interior mode and every distance gets weight 1.
pub fn normalized_density(d: f64, n: usize) -> f64 {
    if n < 4 {
        return 1.0;
    }
    let nf = n as f64;
    let mode = (4.0 * (nf - 2.0) / (2.0 * nf - 5.0)).sqrt();
    (log_q(d, n) - log_q(mode, n)).exp()
}

pub fn sampling_weight(d: f64, n: usize, lambda: f64) -> f64 {
    1.0 / normalized_density(d, n).max(lambda)
}

fn unit_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index of the sampled candidate. The caller excludes `p`'s partner.
pub fn sample_negative(
    p: &Embedding,
    candidates: &[Embedding],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("no negative candidates".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling clip must be positive, got {lambda}")));
    }
    let pu = p.unit();
    let n = pu.len();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|c| sampling_weight(unit_distance(&pu, &c.unit()), n, lambda))
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::NonFinite(format!("negative sampling weights: {e}")))?;
    Ok(dist.sample(rng))
}
