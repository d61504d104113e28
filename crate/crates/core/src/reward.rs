//! Reward discrepancy sources and the ground-truth reward table.
//!
//! The per-pair statistic driving calibration and filtering is the
//! individual reward discrepancy `M`: the reward gap between the chosen and
//! rejected response. Three sources are supported:
//!
//! - implicit: the policy-induced reward, `M = beta0 * [(log pi(y_w) -
//!   log ref(y_w)) - (log pi(y_l) - log ref(y_l))]`;
//! - explicit: pre-computed scores loaded from a file (a pluggable adapter
//!   for external scorers);
//! - ground truth: the additive reward table that also drives data
//!   generation and win-rate judging.
//!
//! `M` is a pure statistic: no gradient ever flows through it. The base
//! `beta0` (not the calibrated beta) scales the implicit form, and the
//! dynamic beta multiplies only the loss.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::types::{ModelShape, ResponseSeq, Triplet};

/// Position-additive ground-truth reward: `r*(y; x) = sum_t
/// weights[x][t][y_t]`. Additivity mirrors the policy factorization, so
/// exponentially tilted sampling policies are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthReward {
    shape: ModelShape,
    weights: Array3<f64>,
}

impl GroundTruthReward {
    pub fn new(shape: ModelShape, weights: Array3<f64>) -> Result<Self> {
        shape.validate()?;
        let want = (shape.prompts, shape.seq_len, shape.vocab);
        if weights.dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "weights have dims {:?}, shape wants {:?}",
                weights.dim(),
                want
            )));
        }
        if !weights.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(
                "reward weights contain non-finite entries".into(),
            ));
        }
        Ok(GroundTruthReward { shape, weights })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    /// Total reward of a response: the sum of its per-position weights.
    pub fn true_reward(&self, prompt_id: usize, resp: &ResponseSeq) -> Result<f64> {
        if prompt_id >= self.shape.prompts || !resp.conforms(&self.shape) {
            return Err(Error::ShapeMismatch(format!(
                "response/prompt {prompt_id} does not conform to shape"
            )));
        }
        Ok(resp
            .tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| self.weights[[prompt_id, t, tok as usize]])
            .sum())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::tensor_io::write(path, self.shape, &self.weights)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let (shape, weights) = crate::tensor_io::read(path)?;
        GroundTruthReward::new(shape, weights)
    }
}

/// One batch item's discrepancy, tagged with its position in the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscrepancyRecord {
    pub index: usize,
    pub m: f64,
}

/// Pre-sigmoid margin of a triplet: the difference of policy-vs-reference
/// log-ratios between the chosen and rejected response,
/// `h = [log pi(y_w) - log ref(y_w)] - [log pi(y_l) - log ref(y_l)]`.
pub fn log_ratio_margin(
    theta: &PolicyParams,
    reference: &PolicyParams,
    triplet: &Triplet,
) -> Result<f64> {
    let a = theta.log_prob(triplet.prompt_id, &triplet.chosen)?;
    let b = reference.log_prob(triplet.prompt_id, &triplet.chosen)?;
    let c = theta.log_prob(triplet.prompt_id, &triplet.rejected)?;
    let d = reference.log_prob(triplet.prompt_id, &triplet.rejected)?;
    Ok((a - b) - (c - d))
}

/// Implicit reward discrepancy `M = beta0 * h`. Computed as a pure
/// statistic; nothing downstream differentiates through it.
pub fn implicit_discrepancy(
    theta: &PolicyParams,
    reference: &PolicyParams,
    triplet: &Triplet,
    beta0: f64,
) -> Result<f64> {
    if beta0 <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "beta0 must be positive, got {beta0}"
        )));
    }
    let m = beta0 * log_ratio_margin(theta, reference, triplet)?;
    if !m.is_finite() {
        return Err(Error::Numeric {
            index: triplet.prompt_id,
            context: "implicit discrepancy is non-finite".into(),
        });
    }
    Ok(m)
}

/// Optional affine transform applied to each explicit score before
/// differencing. Disabled (`None`) by default: scores are used raw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineRescale {
    pub scale: f64,
    pub offset: f64,
}

/// Externally computed per-triplet scores, keyed by dataset index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplicitScores {
    entries: BTreeMap<usize, (f64, f64)>,
    pub rescale: Option<AffineRescale>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    index: usize,
    score_chosen: f64,
    score_rejected: f64,
}

impl ExplicitScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: usize, score_chosen: f64, score_rejected: f64) {
        self.entries.insert(index, (score_chosen, score_rejected));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `score_chosen - score_rejected` for one dataset index, after the
    /// optional affine rescale.
    pub fn discrepancy(&self, index: usize) -> Result<f64> {
        let (c, r) = self
            .entries
            .get(&index)
            .copied()
            .ok_or(Error::MissingScore(index))?;
        let (c, r) = match self.rescale {
            Some(a) => (a.scale * c + a.offset, a.scale * r + a.offset),
            None => (c, r),
        };
        Ok(c - r)
    }

    /// JSONL with keys `index`, `score_chosen`, `score_rejected`, one record
    /// per line, ordered by index.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for (&index, &(score_chosen, score_rejected)) in &self.entries {
            serde_json::to_writer(
                &mut w,
                &ScoreRecord {
                    index,
                    score_chosen,
                    score_rejected,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut scores = ExplicitScores::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line)?;
            scores.insert(rec.index, rec.score_chosen, rec.score_rejected);
        }
        Ok(scores)
    }

    pub fn write_jsonl_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(std::fs::File::create(path)?)
    }

    pub fn read_jsonl_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }
}
