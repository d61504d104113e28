//! The training loop: maximum-likelihood initialization, batched calibrated
//! preference optimization with Adam, checkpointing, and per-step metrics.
//!
//! Both the trainable policy and the frozen reference start from the same
//! maximum-likelihood fit on the chosen responses. Each step computes one
//! calibrated batch objective, then applies one Adam update. Everything
//! random flows through a single seeded generator whose exact position is
//! checkpointed, so an interrupted run resumes bit-identically.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibration::{BetaConfig, DiscrepancyKind, RunningStats};
use crate::error::{Error, Result};
use crate::loss::{beta_dpo_batch, DiscrepancySource};
use crate::policy::{fit_sft, PolicyParams};
use crate::reward::ExplicitScores;
use crate::rng::{from_seed, Rng, RngState};
use crate::types::{ModelShape, PreferenceDataset, Triplet};

/// Training setup. Adam moment coefficients stay at their conventional
/// values; the learning rate is desk-scale by default and exposed here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub beta_cfg: BetaConfig,
    pub shuffle: bool,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Add-k smoothing of the initial maximum-likelihood fit.
    pub sft_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 1,
            lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            beta_cfg: BetaConfig::default(),
            shuffle: true,
            checkpoint_every: 0,
            sft_smoothing: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        self.beta_cfg.validate()
    }
}

/// Mutable state of one training run. The reference policy is fixed at
/// construction and never written again; `step` increases by exactly one
/// per optimizer update.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub theta: PolicyParams,
    pub reference: PolicyParams,
    pub step: u64,
    pub stats: RunningStats,
    m1: Array3<f64>,
    m2: Array3<f64>,
    rng: Rng,
    epoch: usize,
    cursor: usize,
    /// The current epoch's visit order over the dataset; empty between
    /// epochs. Stored in checkpoints so a resumed run replays the exact
    /// same batches.
    plan: Vec<usize>,
}

/// What one optimizer step produced, for the metrics stream.
#[derive(Clone, Debug, Serialize)]
pub struct BatchReport {
    pub step: u64,
    pub loss: f64,
    pub effective_beta: f64,
    pub mean_m: f64,
    pub std_m: f64,
    pub kept: Vec<usize>,
    pub per_sample_m: Vec<f64>,
    pub grad_norm: f64,
    pub clamped: usize,
    pub uniform_fallback: bool,
    /// How many batch slots were wrap-around padding of a trailing batch.
    pub padded: usize,
}

/// Execution options that are not part of the run configuration.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub scores: Option<&'a ExplicitScores>,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
    /// Stop after this many optimizer steps (for interrupt testing and
    /// partial runs); the final checkpoint still lands if due.
    pub max_steps: Option<u64>,
}

/// Initialize a run: fit the policy on chosen responses, freeze a copy as
/// the reference, zero the optimizer moments.
pub fn init_from_sft(ds: &PreferenceDataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    let theta = fit_sft(ds, cfg.sft_smoothing)?;
    let reference = theta.clone();
    let dims = theta.logits().dim();
    Ok(TrainState {
        theta,
        reference,
        step: 0,
        stats: RunningStats::new(cfg.beta_cfg.m)?,
        m1: Array3::zeros(dims),
        m2: Array3::zeros(dims),
        rng: from_seed(cfg.seed),
        epoch: 0,
        cursor: 0,
        plan: Vec::new(),
    })
}

/// One batch objective followed by one Adam update. `dataset_indices` maps
/// batch positions to dataset indices and is required for explicit scores.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Triplet],
    dataset_indices: &[usize],
    scores: Option<&ExplicitScores>,
    cfg: &TrainConfig,
) -> Result<BatchReport> {
    train_step_padded(state, batch, dataset_indices, scores, cfg, 0)
}

fn train_step_padded(
    state: &mut TrainState,
    batch: &[Triplet],
    dataset_indices: &[usize],
    scores: Option<&ExplicitScores>,
    cfg: &TrainConfig,
    padded: usize,
) -> Result<BatchReport> {
    let source = match cfg.beta_cfg.m_source {
        DiscrepancyKind::Implicit => DiscrepancySource::Implicit,
        DiscrepancyKind::Explicit => {
            let scores = scores.ok_or_else(|| {
                Error::State("explicit discrepancy source configured but no scores given".into())
            })?;
            DiscrepancySource::Explicit {
                scores,
                dataset_indices,
            }
        }
    };
    let (res, new_stats) = beta_dpo_batch(
        &state.theta,
        &state.reference,
        batch,
        source,
        &cfg.beta_cfg,
        &state.stats,
        &mut state.rng,
    )
    .map_err(|e| match e {
        Error::Numeric { index, context } => Error::Numeric {
            index,
            context: format!("aborting at step {}: {context}", state.step + 1),
        },
        other => other,
    })?;

    let t = (state.step + 1) as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    Zip::from(state.theta.logits_mut())
        .and(&mut state.m1)
        .and(&mut state.m2)
        .and(&res.grad)
        .for_each(|th, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *th -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        });

    state.stats = new_stats;
    state.step += 1;

    let mean_m = res.per_sample_m.iter().sum::<f64>() / res.per_sample_m.len() as f64;
    let var = res
        .per_sample_m
        .iter()
        .map(|m| (m - mean_m) * (m - mean_m))
        .sum::<f64>()
        / res.per_sample_m.len() as f64;
    let grad_norm = res.grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    Ok(BatchReport {
        step: state.step,
        loss: res.loss,
        effective_beta: res.effective_beta,
        mean_m,
        std_m: var.sqrt(),
        kept: res.filter.kept_indices,
        per_sample_m: res.per_sample_m,
        grad_norm,
        clamped: res.clamped,
        uniform_fallback: res.filter.uniform_fallback,
        padded,
    })
}

/// Run the full loop: shuffle each epoch, iterate full batches, drop a
/// trailing batch smaller than half the batch size, wrap-pad a larger one.
/// Returns the final state and one report per step.
pub fn train(
    ds: &PreferenceDataset,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<(TrainState, Vec<BatchReport>)> {
    cfg.validate()?;
    let mut state = match &opts.resume_from {
        Some(path) => load_checkpoint(path)?,
        None => init_from_sft(ds, cfg)?,
    };
    let n = ds.len();
    let bs = cfg.batch_size;
    let mut reports = Vec::new();

    'epochs: while state.epoch < cfg.epochs {
        if state.plan.is_empty() {
            state.plan = (0..n).collect();
            if cfg.shuffle {
                state.plan.shuffle(&mut state.rng);
            }
            state.cursor = 0;
        }
        while state.cursor < n {
            if opts.max_steps.is_some_and(|cap| state.step >= cap) {
                break 'epochs;
            }
            let remaining = n - state.cursor;
            let (indices, padded) = if remaining >= bs {
                (state.plan[state.cursor..state.cursor + bs].to_vec(), 0)
            } else if remaining * 2 < bs {
                log::info!(
                    "dropping trailing batch of {remaining} (< half of batch size {bs})"
                );
                state.cursor = n;
                continue;
            } else {
                let padded = bs - remaining;
                log::info!("wrap-padding trailing batch of {remaining} with {padded} repeats");
                let mut v = Vec::with_capacity(bs);
                for j in 0..bs {
                    v.push(state.plan[(state.cursor + j) % n]);
                }
                (v, padded)
            };
            let batch: Vec<Triplet> = indices.iter().map(|&i| ds.triplets[i].clone()).collect();
            let report =
                train_step_padded(&mut state, &batch, &indices, opts.scores, cfg, padded)?;
            reports.push(report);
            state.cursor = (state.cursor + bs).min(n);

            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every as u64 == 0 {
                if let Some(dir) = &opts.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    save_checkpoint(&state, dir.join(format!("step_{:06}.json", state.step)))?;
                }
            }
        }
        if state.cursor >= n {
            state.plan.clear();
            state.cursor = 0;
            state.epoch += 1;
        }
    }

    Ok((state, reports))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    step: u64,
    epoch: usize,
    cursor: usize,
    plan: Vec<usize>,
    stats: RunningStats,
    rng: RngState,
    shape: ModelShape,
    theta: Vec<f64>,
    reference: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

/// Write the complete run state: both policies, optimizer moments, running
/// statistics, step counters, and the generator position.
pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let file = CheckpointFile {
        step: state.step,
        epoch: state.epoch,
        cursor: state.cursor,
        plan: state.plan.clone(),
        stats: state.stats,
        rng: RngState::capture(&state.rng),
        shape: state.theta.shape(),
        theta: state.theta.logits().iter().copied().collect(),
        reference: state.reference.logits().iter().copied().collect(),
        m1: state.m1.iter().copied().collect(),
        m2: state.m2.iter().copied().collect(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let file: CheckpointFile = serde_json::from_reader(std::fs::File::open(path.as_ref())?)?;
    let dims = (file.shape.prompts, file.shape.seq_len, file.shape.vocab);
    let tensor = |data: Vec<f64>, what: &str| -> Result<Array3<f64>> {
        Array3::from_shape_vec(dims, data)
            .map_err(|e| Error::ShapeMismatch(format!("checkpoint {what}: {e}")))
    };
    Ok(TrainState {
        theta: PolicyParams::new(file.shape, tensor(file.theta, "theta")?)?,
        reference: PolicyParams::new(file.shape, tensor(file.reference, "reference")?)?,
        step: file.step,
        stats: file.stats,
        m1: tensor(file.m1, "m1")?,
        m2: tensor(file.m2, "m2")?,
        rng: file.rng.restore()?,
        epoch: file.epoch,
        cursor: file.cursor,
        plan: file.plan,
    })
}

/// Per-step metrics as CSV with a fixed column set.
pub fn write_metrics_csv<W: Write>(reports: &[BatchReport], mut w: W) -> Result<()> {
    writeln!(
        w,
        "step,loss,effective_beta,mean_M,std_M,kept_count,grad_norm,clamp_flag"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.loss,
            r.effective_beta,
            r.mean_m,
            r.std_m,
            r.kept.len(),
            r.grad_norm,
            r.clamped
        )?;
    }
    Ok(())
}
