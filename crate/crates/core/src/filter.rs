//! Batch filtering: Gaussian-weighted subsampling plus rank-based baselines.
//!
//! The Gaussian filter scores each sample by how typical its discrepancy is,
//!
//! ```text
//! p(M) = 1 / (sqrt(2 pi) sigma) * exp(-(M - M0)^2 / (2 sigma^2))
//! ```
//!
//! and keeps `round(rho * batch)` samples without replacement with inclusion
//! tendency proportional to that weight. Sampling uses exponential keys
//! (`key_i = ln(u_i) / w_i`, keep the top k), a seed-deterministic
//! realization of sequential weighted sampling without replacement that is
//! invariant to weight normalization.
//!
//! The rank baselines order samples by per-sample loss-gradient magnitude
//! and cut a fixed fraction from the head (largest gradients), the tail, or
//! both.

use rand::Rng as _;
use rand_distr::OpenClosed01;
use serde::{Deserialize, Serialize};

use crate::calibration::RunningStats;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which filter runs on each batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStrategy {
    /// Weighted subsampling around the running discrepancy mean.
    GaussianBeta,
    /// Drop the largest-gradient samples.
    FilterHead,
    /// Drop the smallest-gradient samples.
    FilterTail,
    /// Drop half the exclusion budget from each end.
    FilterTailHead,
    /// Keep everything.
    None,
}

/// Result of filtering one batch: the surviving indices (sorted, distinct),
/// the weights the decision was based on, and whether the Gaussian filter
/// had to fall back to uniform sampling because every weight underflowed.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub kept_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub strategy: FilterStrategy,
    pub uniform_fallback: bool,
}

impl FilterOutcome {
    /// Pass-through outcome keeping the whole batch.
    pub fn keep_all(n: usize) -> Self {
        FilterOutcome {
            kept_indices: (0..n).collect(),
            weights: vec![1.0; n],
            strategy: FilterStrategy::None,
            uniform_fallback: false,
        }
    }
}

/// Significance weight of a discrepancy under the running statistics;
/// strictly positive for in-range inputs, maximized at `M = M0`, and
/// symmetric around it. Three-sigma outliers weigh about 90x less than the
/// peak.
pub fn gaussian_weight(m: f64, m0: f64, sigma: f64) -> f64 {
    let z = (m - m0) / sigma;
    (2.0 * std::f64::consts::PI).sqrt().recip() / sigma * (-0.5 * z * z).exp()
}

/// Keep `max(1, round(rho * n))` indices, drawn without replacement with
/// tendency proportional to the Gaussian weight of each discrepancy.
/// Consumes exactly `n` draws from the generator, so stream positions stay
/// aligned across strategies and seeds.
pub fn select_gaussian(
    batch_m: &[f64],
    stats: &RunningStats,
    rho: f64,
    rng: &mut Rng,
) -> Result<FilterOutcome> {
    let n = batch_m.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot filter an empty batch".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    let k = ((rho * n as f64).round() as usize).clamp(1, n);
    let weights: Vec<f64> = batch_m
        .iter()
        .map(|&m| gaussian_weight(m, stats.m0, stats.sigma))
        .collect();
    let uniform_fallback = weights.iter().all(|&w| w == 0.0);
    if uniform_fallback {
        log::warn!("all filter weights underflowed to zero; sampling uniformly");
    }

    let keys: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let u: f64 = rng.sample(OpenClosed01);
            let w = if uniform_fallback { 1.0 } else { w };
            if w > 0.0 {
                u.ln() / w
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| keys[j].total_cmp(&keys[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_unstable();

    Ok(FilterOutcome {
        kept_indices: kept,
        weights,
        strategy: FilterStrategy::GaussianBeta,
        uniform_fallback,
    })
}

/// Rank-based baselines: order samples by gradient magnitude descending
/// (ties broken by lower index first) and drop a fixed fraction.
/// `FilterHead` drops the top `round(exclusion * n)`, `FilterTail` the
/// bottom, `FilterTailHead` `round(exclusion/2 * n)` from each end.
pub fn select_rank(
    grad_norms: &[f64],
    strategy: FilterStrategy,
    exclusion: f64,
) -> Result<FilterOutcome> {
    let n = grad_norms.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot filter an empty batch".into()));
    }
    if !(0.0..1.0).contains(&exclusion) {
        return Err(Error::InvalidInput(format!(
            "exclusion must lie in [0, 1), got {exclusion}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| grad_norms[j].total_cmp(&grad_norms[i]).then(i.cmp(&j)));

    let removed: Vec<usize> = match strategy {
        FilterStrategy::FilterHead => {
            let r = (exclusion * n as f64).round() as usize;
            order[..r.min(n)].to_vec()
        }
        FilterStrategy::FilterTail => {
            let r = (exclusion * n as f64).round() as usize;
            order[n - r.min(n)..].to_vec()
        }
        FilterStrategy::FilterTailHead => {
            let r = ((exclusion / 2.0) * n as f64).round() as usize;
            let r = r.min(n / 2);
            let mut v = order[..r].to_vec();
            v.extend_from_slice(&order[n - r..]);
            v
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "select_rank expects a rank strategy, got {other:?}"
            )))
        }
    };

    let mut is_removed = vec![false; n];
    for &i in &removed {
        is_removed[i] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| !is_removed[i]).collect();

    Ok(FilterOutcome {
        kept_indices: kept,
        weights: grad_norms.to_vec(),
        strategy,
        uniform_fallback: false,
    })
}
