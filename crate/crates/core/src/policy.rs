//! Position-wise categorical policy with exact log-probabilities, analytic
//! gradients, seeded sampling, and full-support enumeration.
//!
//! A policy is a logit tensor indexed `[prompt][position][token]`. Given a
//! prompt, tokens are drawn independently per position from the softmax of
//! that position's logit row, so
//!
//! ```text
//! log pi(y | x) = sum_t log softmax(logits[x][t])[y_t]
//! ```
//!
//! and the log-likelihood gradient at `[x][t][v]` is
//! `1[y_t == v] - softmax(logits[x][t])[v]`, zero for other prompts. This
//! factorization keeps `V^T` enumeration and gradients exact while exposing
//! everything the training mechanics depend on: log-probability values.

use ndarray::{Array3, ArrayView1};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{ModelShape, PreferenceDataset, ResponseSeq, ENUMERATION_BUDGET};

/// Finite stand-in for `log 0` in fitted logits: far enough down that
/// `exp` underflows to exactly zero, so excluded tokens carry zero
/// probability while every entry stays finite.
pub const ZERO_COUNT_LOGIT: f64 = -1.0e4;

/// Trainable (or frozen) policy parameters: the logit tensor plus its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    shape: ModelShape,
    logits: Array3<f64>,
}

/// Log-probabilities of a chosen/rejected pair under one policy, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProbPair {
    pub logp_chosen: f64,
    pub logp_rejected: f64,
}

impl PolicyParams {
    /// Wrap a logit tensor, checking dimensions and finiteness.
    pub fn new(shape: ModelShape, logits: Array3<f64>) -> Result<Self> {
        shape.validate()?;
        let want = (shape.prompts, shape.seq_len, shape.vocab);
        if logits.dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "logits have dims {:?}, shape wants {:?}",
                logits.dim(),
                want
            )));
        }
        if !logits.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("logits contain non-finite entries".into()));
        }
        Ok(PolicyParams { shape, logits })
    }

    /// Uniform policy: all logits zero.
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let logits = Array3::zeros((shape.prompts, shape.seq_len, shape.vocab));
        Ok(PolicyParams { shape, logits })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn logits(&self) -> &Array3<f64> {
        &self.logits
    }

    /// Mutable access for optimizer updates. Callers keep entries finite;
    /// the training loop re-checks before each update.
    pub fn logits_mut(&mut self) -> &mut Array3<f64> {
        &mut self.logits
    }

    fn check_resp(&self, prompt_id: usize, resp: &ResponseSeq) -> Result<()> {
        if prompt_id >= self.shape.prompts {
            return Err(Error::ShapeMismatch(format!(
                "prompt_id {prompt_id} out of range (P={})",
                self.shape.prompts
            )));
        }
        if !resp.conforms(&self.shape) {
            return Err(Error::ShapeMismatch(format!(
                "response {:?} does not conform to P={} T={} V={}",
                resp.tokens, self.shape.prompts, self.shape.seq_len, self.shape.vocab
            )));
        }
        Ok(())
    }

    /// Exact log-probability of `resp` given `prompt_id`, in nats. Always
    /// <= 0.
    pub fn log_prob(&self, prompt_id: usize, resp: &ResponseSeq) -> Result<f64> {
        self.check_resp(prompt_id, resp)?;
        let mut total = 0.0;
        for (t, &tok) in resp.tokens.iter().enumerate() {
            let row = self.logits.slice(ndarray::s![prompt_id, t, ..]);
            total += row[tok as usize] - log_sum_exp(row);
        }
        Ok(total)
    }

    /// Log-probabilities of both sides of a triplet.
    pub fn log_prob_pair(&self, triplet: &crate::types::Triplet) -> Result<LogProbPair> {
        Ok(LogProbPair {
            logp_chosen: self.log_prob(triplet.prompt_id, &triplet.chosen)?,
            logp_rejected: self.log_prob(triplet.prompt_id, &triplet.rejected)?,
        })
    }

    /// Gradient of `log_prob` with respect to every logit. Entry
    /// `[x][t][v]` is `1[y_t == v] - softmax(logits[x][t])[v]` when
    /// `x == prompt_id` and zero otherwise; each touched row sums to zero.
    pub fn grad_log_prob(&self, prompt_id: usize, resp: &ResponseSeq) -> Result<Array3<f64>> {
        self.check_resp(prompt_id, resp)?;
        let mut grad = Array3::zeros(self.logits.dim());
        for (t, &tok) in resp.tokens.iter().enumerate() {
            let row = self.logits.slice(ndarray::s![prompt_id, t, ..]);
            let probs = softmax(row);
            for (v, p) in probs.iter().enumerate() {
                let indicator = if v == tok as usize { 1.0 } else { 0.0 };
                grad[[prompt_id, t, v]] = indicator - p;
            }
        }
        Ok(grad)
    }

    /// Softmax probabilities of one position row.
    pub(crate) fn position_probs(&self, prompt_id: usize, t: usize) -> Vec<f64> {
        softmax(self.logits.slice(ndarray::s![prompt_id, t, ..]))
    }

    /// Draw one response, independently per position. Deterministic given
    /// the generator state.
    pub fn sample(&self, prompt_id: usize, rng: &mut Rng) -> ResponseSeq {
        assert!(prompt_id < self.shape.prompts, "prompt_id out of range");
        let mut tokens = Vec::with_capacity(self.shape.seq_len);
        for t in 0..self.shape.seq_len {
            let probs = self.position_probs(prompt_id, t);
            let u: f64 = rng.random();
            tokens.push(pick_categorical(&probs, u) as u32);
        }
        ResponseSeq::new(tokens)
    }

    /// Enumerate all `V^T` responses for a prompt with their exact
    /// probabilities. Probabilities sum to one up to rounding.
    pub fn enumerate_distribution(&self, prompt_id: usize) -> Result<Vec<(ResponseSeq, f64)>> {
        self.enumerate_distribution_within(prompt_id, ENUMERATION_BUDGET)
    }

    /// Enumeration with an explicit budget on `V^T`.
    pub fn enumerate_distribution_within(
        &self,
        prompt_id: usize,
        budget: u64,
    ) -> Result<Vec<(ResponseSeq, f64)>> {
        if prompt_id >= self.shape.prompts {
            return Err(Error::ShapeMismatch(format!(
                "prompt_id {prompt_id} out of range (P={})",
                self.shape.prompts
            )));
        }
        let count = self
            .shape
            .sequence_count()
            .filter(|&n| n <= budget)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "V^T for V={} T={} exceeds budget {budget}",
                    self.shape.vocab, self.shape.seq_len
                ))
            })?;

        // Per-position log-softmax rows, computed once.
        let t_len = self.shape.seq_len;
        let vocab = self.shape.vocab;
        let mut logp = vec![vec![0.0; vocab]; t_len];
        for t in 0..t_len {
            let row = self.logits.slice(ndarray::s![prompt_id, t, ..]);
            let lse = log_sum_exp(row);
            for v in 0..vocab {
                logp[t][v] = row[v] - lse;
            }
        }

        let mut out = Vec::with_capacity(count as usize);
        let mut tokens = vec![0u32; t_len];
        loop {
            let total: f64 = tokens
                .iter()
                .enumerate()
                .map(|(t, &tok)| logp[t][tok as usize])
                .sum();
            out.push((ResponseSeq::new(tokens.clone()), total.exp()));
            // odometer increment, last position fastest
            let mut t = t_len;
            loop {
                if t == 0 {
                    return Ok(out);
                }
                t -= 1;
                tokens[t] += 1;
                if (tokens[t] as usize) < vocab {
                    break;
                }
                tokens[t] = 0;
            }
        }
    }

    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor_io::write(path, self.shape, &self.logits)
    }

    pub fn load_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (shape, logits) = crate::tensor_io::read(path)?;
        PolicyParams::new(shape, logits)
    }
}

/// Closed-form maximum-likelihood fit of the position-wise categorical model
/// on the chosen responses, with add-k smoothing:
///
/// ```text
/// logits[x][t][v] = log(count(x,t,v) + k) - log(total(x,t) + V*k)
/// ```
///
/// Positions with no data at all fall back to the uniform row. With `k = 0`,
/// unseen tokens in an observed row get [`ZERO_COUNT_LOGIT`] so the output
/// stays finite while those tokens keep probability zero.
pub fn fit_sft(ds: &PreferenceDataset, smoothing: f64) -> Result<PolicyParams> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot fit on an empty dataset".into()));
    }
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing must be >= 0, got {smoothing}"
        )));
    }
    let shape = ds.shape;
    let mut counts = Array3::<f64>::zeros((shape.prompts, shape.seq_len, shape.vocab));
    for t in &ds.triplets {
        for (pos, &tok) in t.chosen.tokens.iter().enumerate() {
            counts[[t.prompt_id, pos, tok as usize]] += 1.0;
        }
    }
    let mut logits = Array3::zeros((shape.prompts, shape.seq_len, shape.vocab));
    let uniform = -(shape.vocab as f64).ln();
    for x in 0..shape.prompts {
        for pos in 0..shape.seq_len {
            let total: f64 = (0..shape.vocab).map(|v| counts[[x, pos, v]]).sum();
            let denom = total + shape.vocab as f64 * smoothing;
            for v in 0..shape.vocab {
                let c = counts[[x, pos, v]] + smoothing;
                logits[[x, pos, v]] = if denom == 0.0 {
                    uniform
                } else if c == 0.0 {
                    ZERO_COUNT_LOGIT
                } else {
                    c.ln() - denom.ln()
                };
            }
        }
    }
    PolicyParams::new(shape, logits)
}

/// `log sum_i exp(x_i)` with max subtraction.
pub(crate) fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

pub(crate) fn softmax(row: ArrayView1<'_, f64>) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn pick_categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}
