//! Exact win-rate computation against the ground-truth reward, and
//! discrepancy-distribution extraction.
//!
//! A duel scores policy A against policy B: independent draws `y ~ A`,
//! `y' ~ B`, judged by the ground-truth reward. With the toy policy the
//! expectation is computed exactly by enumerating both distributions:
//!
//! ```text
//! win(A, B) = E_x sum_{y, y'} A(y|x) B(y'|x) 1[r*(y;x) > r*(y';x)]
//! ```
//!
//! Ties accumulate separately rather than splitting 0.5/0.5, keeping the
//! completeness identity `win(A,B) + win(B,A) + ties = 1` exact; a helper
//! folds them back in for conventional reporting. Prompts are uniformly
//! weighted. Shapes beyond the enumeration budget fall back to Monte Carlo
//! with the method flagged in the result.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::reward::{implicit_discrepancy, GroundTruthReward};
use crate::rng::from_seed;
use crate::types::{PreferenceDataset, ENUMERATION_BUDGET};

/// How a win rate was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WinRateMethod {
    Exact,
    MonteCarlo { n: usize },
}

/// Duel outcome. `per_prompt` holds each prompt's win rate; the headline
/// numbers are uniform averages over prompts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WinRateResult {
    pub win_rate: f64,
    pub tie_rate: f64,
    pub per_prompt: Vec<f64>,
    pub method: WinRateMethod,
}

impl WinRateResult {
    /// Conventional reporting: ties split evenly between the players.
    pub fn win_rate_ties_split(&self) -> f64 {
        self.win_rate + 0.5 * self.tie_rate
    }
}

const MONTE_CARLO_FALLBACK_N: usize = 100_000;
const MONTE_CARLO_SEED: u64 = 0x5eed_0001;

/// Win rate of `policy` against `baseline` under the ground-truth judge,
/// exact by enumeration when `V^T` fits the budget, Monte Carlo otherwise.
pub fn exact_win_rate(
    policy: &PolicyParams,
    baseline: &PolicyParams,
    gt: &GroundTruthReward,
) -> Result<WinRateResult> {
    if policy.shape() != baseline.shape() || policy.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(
            "policy, baseline, and reward table must share one shape".into(),
        ));
    }
    let shape = policy.shape();
    if !shape.enumerable_within(ENUMERATION_BUDGET) {
        log::warn!("sequence space exceeds enumeration budget; falling back to Monte Carlo");
        return monte_carlo_win_rate(policy, baseline, gt, MONTE_CARLO_FALLBACK_N);
    }

    let mut per_prompt = Vec::with_capacity(shape.prompts);
    let mut per_prompt_ties = Vec::with_capacity(shape.prompts);
    for x in 0..shape.prompts {
        let dist_a = policy.enumerate_distribution(x)?;
        let dist_b = baseline.enumerate_distribution(x)?;
        // Shared enumeration order: pair up rewards with both probabilities,
        // then sweep in reward order keeping a running baseline mass.
        let mut entries: Vec<(f64, f64, f64)> = Vec::with_capacity(dist_a.len());
        for ((seq, pa), (_, pb)) in dist_a.iter().zip(dist_b.iter()) {
            entries.push((gt.true_reward(x, seq)?, *pa, *pb));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut win = 0.0;
        let mut tie = 0.0;
        let mut base_below = 0.0;
        let mut i = 0;
        while i < entries.len() {
            let mut j = i;
            let mut group_a = 0.0;
            let mut group_b = 0.0;
            while j < entries.len() && entries[j].0 == entries[i].0 {
                group_a += entries[j].1;
                group_b += entries[j].2;
                j += 1;
            }
            win += group_a * base_below;
            tie += group_a * group_b;
            base_below += group_b;
            i = j;
        }
        per_prompt.push(win);
        per_prompt_ties.push(tie);
    }

    let p = shape.prompts as f64;
    Ok(WinRateResult {
        win_rate: per_prompt.iter().sum::<f64>() / p,
        tie_rate: per_prompt_ties.iter().sum::<f64>() / p,
        per_prompt,
        method: WinRateMethod::Exact,
    })
}

fn monte_carlo_win_rate(
    policy: &PolicyParams,
    baseline: &PolicyParams,
    gt: &GroundTruthReward,
    n: usize,
) -> Result<WinRateResult> {
    let shape = policy.shape();
    let mut rng = from_seed(MONTE_CARLO_SEED);
    let mut per_prompt = Vec::with_capacity(shape.prompts);
    let mut tie_total = 0.0;
    for x in 0..shape.prompts {
        let mut wins = 0usize;
        let mut ties = 0usize;
        for _ in 0..n {
            let ya = policy.sample(x, &mut rng);
            let yb = baseline.sample(x, &mut rng);
            let ra = gt.true_reward(x, &ya)?;
            let rb = gt.true_reward(x, &yb)?;
            if ra > rb {
                wins += 1;
            } else if ra == rb {
                ties += 1;
            }
        }
        per_prompt.push(wins as f64 / n as f64);
        tie_total += ties as f64 / n as f64;
    }
    let p = shape.prompts as f64;
    Ok(WinRateResult {
        win_rate: per_prompt.iter().sum::<f64>() / p,
        tie_rate: tie_total / p,
        per_prompt,
        method: WinRateMethod::MonteCarlo { n },
    })
}

/// Win rate of `policy` against the empirical distribution of chosen
/// responses in a dataset; the alternative duel baseline.
pub fn win_rate_vs_chosen_empirical(
    policy: &PolicyParams,
    gt: &GroundTruthReward,
    ds: &PreferenceDataset,
) -> Result<WinRateResult> {
    if policy.shape() != gt.shape() || policy.shape() != ds.shape {
        return Err(Error::ShapeMismatch(
            "policy, reward table, and dataset must share one shape".into(),
        ));
    }
    let shape = policy.shape();
    let mut per_prompt = Vec::new();
    let mut tie_total = 0.0;
    let mut prompts_with_data = 0;
    for x in 0..shape.prompts {
        let mut chosen_rewards: Vec<f64> = Vec::new();
        for t in ds.triplets.iter().filter(|t| t.prompt_id == x) {
            chosen_rewards.push(gt.true_reward(x, &t.chosen)?);
        }
        if chosen_rewards.is_empty() {
            continue;
        }
        prompts_with_data += 1;
        chosen_rewards.sort_by(f64::total_cmp);
        let m = chosen_rewards.len() as f64;
        let mut win = 0.0;
        let mut tie = 0.0;
        for (seq, p) in policy.enumerate_distribution(x)? {
            let r = gt.true_reward(x, &seq)?;
            let below = chosen_rewards.partition_point(|&c| c < r);
            let not_above = chosen_rewards.partition_point(|&c| c <= r);
            win += p * below as f64 / m;
            tie += p * (not_above - below) as f64 / m;
        }
        per_prompt.push(win);
        tie_total += tie;
    }
    if prompts_with_data == 0 {
        return Err(Error::InvalidInput("dataset has no triplets".into()));
    }
    let p = prompts_with_data as f64;
    Ok(WinRateResult {
        win_rate: per_prompt.iter().sum::<f64>() / p,
        tie_rate: tie_total / p,
        per_prompt,
        method: WinRateMethod::Exact,
    })
}

/// Histogram of implicit reward discrepancies over a dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscrepancyHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    pub p05: f64,
    pub p95: f64,
}

impl DiscrepancyHistogram {
    /// CSV rows of `bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (i, &c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c)?;
        }
        Ok(())
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Compute the implicit discrepancy of every triplet and bin the values in
/// equal-width bins spanning `[min, max]` (a degenerate span widens to a
/// unit interval around the value).
pub fn discrepancy_histogram(
    theta: &PolicyParams,
    reference: &PolicyParams,
    ds: &PreferenceDataset,
    beta0: f64,
    bins: usize,
) -> Result<DiscrepancyHistogram> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    let mut ms = Vec::with_capacity(ds.len());
    for t in &ds.triplets {
        ms.push(implicit_discrepancy(theta, reference, t, beta0)?);
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let var = ms.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / ms.len() as f64;

    let mut sorted = ms.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &m in &ms {
        let idx = (((m - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }

    Ok(DiscrepancyHistogram {
        bin_edges,
        counts,
        mean,
        std: var.sqrt(),
        p05: percentile(&sorted, 0.05),
        p95: percentile(&sorted, 0.95),
    })
}
