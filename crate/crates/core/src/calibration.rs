//! Running discrepancy statistics and the per-step effective beta.
//!
//! A momentum moving average tracks the mean `M0` and standard deviation
//! `sigma` of the reward discrepancy stream, one update per batch:
//!
//! ```text
//! M0    <- m * M0    + (1 - m) * mean(batch M)
//! sigma <- m * sigma + (1 - m) * std(batch M)
//! ```
//!
//! The effective beta then scales the base `beta0` by how the current batch
//! compares to `M0`:
//!
//! ```text
//! beta = max(factor_min, 1 + alpha * (M - M0)) * beta0
//! ```
//!
//! with `M` the batch mean (batch mode) or each sample's own discrepancy
//! (instance mode). Population mode keeps `beta = beta0`, and so does
//! `alpha = 0` in any mode. The factor floor guards the regime
//! `1 + alpha*(M - M0) <= 0`, where an unclamped beta would go non-positive
//! and flip the sign of the preference objective; clamps are counted so
//! runs can report them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterStrategy;

/// Floor for the running standard deviation.
pub const SIGMA_MIN: f64 = 1e-6;

/// Streaming estimates of the discrepancy mean and standard deviation.
///
/// Bootstraps from the first batch instead of an arbitrary prior, which
/// keeps the schedule scale-free. Single-writer: exactly one training loop
/// updates it; everything else reads snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningStats {
    #[serde(rename = "M0")]
    pub m0: f64,
    pub sigma: f64,
    pub m: f64,
    pub initialized: bool,
}

impl RunningStats {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(RunningStats {
            m0: 0.0,
            sigma: SIGMA_MIN,
            m: momentum,
            initialized: false,
        })
    }

    /// Seeded stats for callers that already know the center and spread.
    pub fn with_values(momentum: f64, m0: f64, sigma: f64) -> Result<Self> {
        let mut s = Self::new(momentum)?;
        s.m0 = m0;
        s.sigma = sigma.max(SIGMA_MIN);
        s.initialized = true;
        Ok(s)
    }

    /// One moving-average step over a batch of discrepancies. The first
    /// batch bootstraps both fields; later batches apply the momentum
    /// recursion. `std` is the population standard deviation (divide by n).
    pub fn update(&self, batch_m: &[f64]) -> Result<RunningStats> {
        if batch_m.is_empty() {
            return Err(Error::InvalidInput(
                "cannot update stats from an empty batch".into(),
            ));
        }
        if let Some(bad) = batch_m.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                index: bad,
                context: "non-finite discrepancy in stats update".into(),
            });
        }
        let mean = batch_mean(batch_m);
        let std = batch_std(batch_m, mean);
        let mut next = *self;
        if !self.initialized {
            next.m0 = mean;
            next.sigma = std.max(SIGMA_MIN);
            next.initialized = true;
        } else {
            next.m0 = self.m * self.m0 + (1.0 - self.m) * mean;
            next.sigma = (self.m * self.sigma + (1.0 - self.m) * std).max(SIGMA_MIN);
        }
        Ok(next)
    }
}

pub(crate) fn batch_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation around a given mean.
pub(crate) fn batch_std(xs: &[f64], mean: f64) -> f64 {
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    var.sqrt()
}

/// How the effective beta is derived from the discrepancy stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// One fixed beta0 for the whole population of pairs.
    Population,
    /// A personal beta per sample.
    Instance,
    /// One beta per batch, from the batch-mean discrepancy.
    Batch,
}

/// Which discrepancy set the effective beta is evaluated on: the full batch
/// or the post-filter subset. The step order runs the filter first, so the
/// filtered subset is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaOn {
    Full,
    Filtered,
}

/// Ranking statistic for the rank-based filter baselines: the scalar
/// margin-gradient factor `beta0 * sigmoid(-beta0 * h)`, or the full
/// parameter-space gradient norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOn {
    MarginGrad,
    ParamGradNorm,
}

/// Where the per-sample discrepancy comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyKind {
    /// Policy-induced reward gap scaled by beta0.
    Implicit,
    /// Externally supplied scores keyed by dataset index.
    Explicit,
}

/// Everything that shapes the dynamic-beta schedule and the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    /// Base trade-off coefficient; the schedule scales it.
    pub beta0: f64,
    /// Scale of the adjustment; 0 disables the schedule entirely.
    pub alpha: f64,
    pub mode: CalibrationMode,
    /// Momentum of the running statistics.
    pub m: f64,
    /// Keep ratio of the filter: round(rho * batch) samples survive.
    pub rho: f64,
    /// Floor on the beta scale factor, keeping beta positive.
    pub factor_min: f64,
    /// Hold the threshold at a constant instead of the moving average.
    /// The running sigma keeps updating either way.
    #[serde(rename = "fixed_M0", default)]
    pub fixed_m0: Option<f64>,
    pub strategy: FilterStrategy,
    #[serde(default = "default_beta_on")]
    pub beta_on: BetaOn,
    #[serde(default = "default_rank_on")]
    pub rank_on: RankOn,
    #[serde(default = "default_m_source")]
    pub m_source: DiscrepancyKind,
}

fn default_beta_on() -> BetaOn {
    BetaOn::Filtered
}

fn default_rank_on() -> RankOn {
    RankOn::MarginGrad
}

fn default_m_source() -> DiscrepancyKind {
    DiscrepancyKind::Implicit
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig {
            beta0: 0.1,
            alpha: 0.6,
            mode: CalibrationMode::Batch,
            m: 0.9,
            rho: 0.8,
            factor_min: 0.1,
            fixed_m0: None,
            strategy: FilterStrategy::GaussianBeta,
            beta_on: BetaOn::Filtered,
            rank_on: RankOn::MarginGrad,
            m_source: DiscrepancyKind::Implicit,
        }
    }
}

impl BetaConfig {
    /// Plain preference optimization: fixed beta, no filtering.
    pub fn plain(beta0: f64) -> Self {
        BetaConfig {
            beta0,
            alpha: 0.0,
            mode: CalibrationMode::Population,
            rho: 1.0,
            strategy: FilterStrategy::None,
            ..BetaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta0 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "beta0 must be positive, got {}",
                self.beta0
            )));
        }
        if !(0.0..=2.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in [0, 2], got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.m) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1), got {}",
                self.m
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if self.factor_min <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "factor_min must be positive, got {}",
                self.factor_min
            )));
        }
        if let Some(f) = self.fixed_m0 {
            if !f.is_finite() {
                return Err(Error::InvalidInput("fixed_M0 must be finite".into()));
            }
        }
        Ok(())
    }
}

/// The beta for one step: a batch-level value, optional per-sample values in
/// instance mode (aligned with the input slice), and how many hit the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveBeta {
    pub beta_batch: f64,
    pub per_instance: Option<Vec<f64>>,
    pub clamped: usize,
}

fn scaled_beta(cfg: &BetaConfig, m: f64, m0: f64) -> (f64, bool) {
    let factor = 1.0 + cfg.alpha * (m - m0);
    if factor < cfg.factor_min {
        (cfg.factor_min * cfg.beta0, true)
    } else {
        (factor * cfg.beta0, false)
    }
}

/// Compute the effective beta for a batch of discrepancies.
///
/// Population mode ignores the statistics. Batch and instance mode require
/// either initialized stats or a fixed threshold.
pub fn effective_beta(
    cfg: &BetaConfig,
    stats: &RunningStats,
    batch_m: &[f64],
) -> Result<EffectiveBeta> {
    cfg.validate()?;
    if batch_m.is_empty() {
        return Err(Error::InvalidInput(
            "cannot derive beta from an empty batch".into(),
        ));
    }
    if cfg.mode == CalibrationMode::Population {
        return Ok(EffectiveBeta {
            beta_batch: cfg.beta0,
            per_instance: None,
            clamped: 0,
        });
    }
    let m0 = match cfg.fixed_m0 {
        Some(f) => f,
        None if stats.initialized => stats.m0,
        None => {
            return Err(Error::State(
                "statistics not initialized and no fixed threshold set".into(),
            ))
        }
    };
    match cfg.mode {
        CalibrationMode::Population => unreachable!(),
        CalibrationMode::Batch => {
            let (beta, hit) = scaled_beta(cfg, batch_mean(batch_m), m0);
            Ok(EffectiveBeta {
                beta_batch: beta,
                per_instance: None,
                clamped: hit as usize,
            })
        }
        CalibrationMode::Instance => {
            let mut clamped = 0;
            let per: Vec<f64> = batch_m
                .iter()
                .map(|&m| {
                    let (beta, hit) = scaled_beta(cfg, m, m0);
                    clamped += hit as usize;
                    beta
                })
                .collect();
            Ok(EffectiveBeta {
                beta_batch: batch_mean(&per),
                per_instance: Some(per),
                clamped,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use rand::Rng as _;
    use rand_distr::Distribution as _;

    fn batch_cfg() -> BetaConfig {
        BetaConfig {
            mode: CalibrationMode::Batch,
            ..BetaConfig::default()
        }
    }

    #[test]
    fn moving_average_step_matches_closed_form() {
        let stats = RunningStats::with_values(0.9, 0.0, 1.0).unwrap();
        let next = stats.update(&[1.0]).unwrap();
        assert!((next.m0 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn first_batch_bootstraps_and_clamps_sigma() {
        let stats = RunningStats::new(0.9).unwrap();
        let next = stats.update(&[2.0, 2.0, 2.0]).unwrap();
        assert!(next.initialized);
        assert_eq!(next.m0, 2.0);
        assert_eq!(next.sigma, SIGMA_MIN);
    }

    #[test]
    fn stationary_stream_converges_to_the_mean() {
        let mut rng = from_seed(3);
        let normal = rand_distr::Normal::new(3.0, 1.0).unwrap();
        let mut stats = RunningStats::new(0.9).unwrap();
        for _ in 0..200 {
            let batch: Vec<f64> = (0..64).map(|_| normal.sample(&mut rng)).collect();
            stats = stats.update(&batch).unwrap();
        }
        assert!((stats.m0 - 3.0).abs() < 0.05, "m0 = {}", stats.m0);
        assert!((stats.sigma - 1.0).abs() < 0.1, "sigma = {}", stats.sigma);
    }

    #[test]
    fn update_follows_the_recursion_elementwise() {
        let mut rng = from_seed(8);
        let m = 0.9;
        let mut stats = RunningStats::new(m).unwrap();
        let mut expect_m0 = 0.0;
        let mut expect_sigma = 0.0;
        for step in 0..50 {
            let batch: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
            let mean = batch.iter().sum::<f64>() / 16.0;
            let var = batch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 16.0;
            let std = var.sqrt();
            if step == 0 {
                expect_m0 = mean;
                expect_sigma = std.max(SIGMA_MIN);
            } else {
                expect_m0 = m * expect_m0 + (1.0 - m) * mean;
                expect_sigma = (m * expect_sigma + (1.0 - m) * std).max(SIGMA_MIN);
            }
            stats = stats.update(&batch).unwrap();
            assert!((stats.m0 - expect_m0).abs() < 1e-12);
            assert!((stats.sigma - expect_sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_fixpoint() {
        // A batch whose mean and std equal the running values leaves the
        // stats unchanged up to rounding.
        let stats = RunningStats::with_values(0.9, 1.5, 0.25).unwrap();
        let batch = [1.25, 1.75]; // mean 1.5, population std 0.25
        let next = stats.update(&batch).unwrap();
        assert!((next.m0 - stats.m0).abs() < 1e-12);
        assert!((next.sigma - stats.sigma).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let stats = RunningStats::new(0.9).unwrap();
        assert!(matches!(stats.update(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn alpha_zero_keeps_beta_at_beta0() {
        let cfg = BetaConfig {
            alpha: 0.0,
            ..batch_cfg()
        };
        let stats = RunningStats::with_values(0.9, 0.3, 1.0).unwrap();
        let mut rng = from_seed(9);
        for _ in 0..100 {
            let batch: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let eb = effective_beta(&cfg, &stats, &batch).unwrap();
            assert_eq!(eb.beta_batch.to_bits(), cfg.beta0.to_bits());
        }
    }

    #[test]
    fn batch_beta_matches_direct_arithmetic() {
        let cfg = BetaConfig {
            beta0: 0.1,
            alpha: 0.6,
            ..batch_cfg()
        };
        let stats = RunningStats::with_values(0.9, 1.0, 1.0).unwrap();
        let eb = effective_beta(&cfg, &stats, &[2.0]).unwrap();
        let expect: f64 = (1.0 + 0.6 * (2.0 - 1.0)) * 0.1;
        assert_eq!(eb.beta_batch.to_bits(), expect.to_bits());
        assert_eq!(eb.clamped, 0);
    }

    #[test]
    fn clamp_floors_the_scale_factor() {
        let cfg = BetaConfig {
            beta0: 0.1,
            alpha: 1.0,
            factor_min: 0.1,
            ..batch_cfg()
        };
        let stats = RunningStats::with_values(0.9, 0.0, 1.0).unwrap();
        let eb = effective_beta(&cfg, &stats, &[-5.0]).unwrap();
        assert_eq!(eb.beta_batch.to_bits(), (0.1f64 * 0.1).to_bits());
        assert_eq!(eb.clamped, 1);
    }

    #[test]
    fn population_mode_ignores_stats() {
        let cfg = BetaConfig {
            mode: CalibrationMode::Population,
            ..BetaConfig::default()
        };
        let stats = RunningStats::new(0.9).unwrap(); // uninitialized
        let eb = effective_beta(&cfg, &stats, &[1.0, 2.0]).unwrap();
        assert_eq!(eb.beta_batch, cfg.beta0);
        assert!(eb.per_instance.is_none());
    }

    #[test]
    fn uninitialized_stats_without_threshold_is_a_state_error() {
        let cfg = batch_cfg();
        let stats = RunningStats::new(0.9).unwrap();
        assert!(matches!(
            effective_beta(&cfg, &stats, &[1.0]),
            Err(Error::State(_))
        ));
        let fixed = BetaConfig {
            fixed_m0: Some(0.5),
            ..batch_cfg()
        };
        assert!(effective_beta(&fixed, &stats, &[1.0]).is_ok());
    }

    #[test]
    fn instance_mode_is_monotone_in_m() {
        let cfg = BetaConfig {
            mode: CalibrationMode::Instance,
            ..BetaConfig::default()
        };
        let stats = RunningStats::with_values(0.9, 0.0, 1.0).unwrap();
        let batch = [-0.5, 0.0, 0.5, 1.5];
        let eb = effective_beta(&cfg, &stats, &batch).unwrap();
        let per = eb.per_instance.unwrap();
        for w in per.windows(2) {
            assert!(w[0] < w[1]);
        }
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert_eq!(eb.beta_batch.to_bits(), mean.to_bits());
    }

    #[test]
    fn batch_mode_is_strictly_increasing_without_clamp() {
        let cfg = batch_cfg();
        let stats = RunningStats::with_values(0.9, 0.0, 1.0).unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let m = -1.0 + i as f64 * 0.2;
            let eb = effective_beta(&cfg, &stats, &[m]).unwrap();
            assert!(eb.beta_batch > last);
            last = eb.beta_batch;
        }
    }

    #[test]
    fn beta_is_always_at_least_the_floor() {
        let cfg = batch_cfg();
        let stats = RunningStats::with_values(0.9, 0.0, 1.0).unwrap();
        let mut rng = from_seed(10);
        for _ in 0..200 {
            let batch: Vec<f64> = (0..4)
                .map(|_| rng.random::<f64>() * 100.0 - 50.0)
                .collect();
            let eb = effective_beta(&cfg, &stats, &batch).unwrap();
            assert!(eb.beta_batch >= cfg.factor_min * cfg.beta0);
        }
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        for cfg in [
            BetaConfig {
                beta0: 0.0,
                ..BetaConfig::default()
            },
            BetaConfig {
                alpha: 2.5,
                ..BetaConfig::default()
            },
            BetaConfig {
                rho: 0.0,
                ..BetaConfig::default()
            },
            BetaConfig {
                m: 1.0,
                ..BetaConfig::default()
            },
            BetaConfig {
                factor_min: 0.0,
                ..BetaConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(BetaConfig::default().validate().is_ok());
    }
}
