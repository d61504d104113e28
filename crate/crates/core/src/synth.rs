//! Synthetic preference-data generation with controllable pair quality.
//!
//! A random position-additive reward table `r*` defines the ground truth.
//! Responses come from exponential tilts of the uniform policy,
//! `logits = r*/tau`: a sharp tilt (small tau) plays the expert, a flat one
//! (large tau) the weak generator. Each pair is labeled by a Bradley-Terry
//! draw, winning with probability `sigmoid(bt_scale * (r*(A) - r*(B)))`, and
//! an optional label flip injects outlier noise.
//!
//! Low-gap pairs draw both responses from the expert tilt; high-gap pairs
//! pit the expert against the weak tilt. The mixture ratio blends the two
//! regimes. Generation is one sequential pass over a single seeded
//! generator, so identical configs produce byte-identical datasets.

use ndarray::Array3;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::sigmoid;
use crate::policy::PolicyParams;
use crate::reward::GroundTruthReward;
use crate::rng::from_seed;
use crate::types::{GapClass, ModelShape, PreferenceDataset, Triplet, TripletMeta};

/// Generator configuration. The digest of this struct keys dataset caching
/// and is stamped into the output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub shape: ModelShape,
    pub n_triplets: usize,
    /// Fraction of high-gap pairs.
    pub mixture_ratio: f64,
    /// Probability of swapping the labels of a finished pair.
    pub flip_prob: f64,
    /// Tilt temperature of the expert response generator.
    pub tau_expert: f64,
    /// Tilt temperature of the weak response generator; flatter than the
    /// expert (`tau_weak >= tau_expert`).
    pub tau_weak: f64,
    /// Sharpness of the Bradley-Terry labeler.
    pub bt_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            shape: ModelShape::default(),
            n_triplets: 8192,
            mixture_ratio: 0.0,
            flip_prob: 0.0,
            tau_expert: 1.0,
            tau_weak: 8.0,
            bt_scale: 4.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.n_triplets == 0 {
            return Err(Error::InvalidInput("n_triplets must be positive".into()));
        }
        for (name, v) in [("mixture_ratio", self.mixture_ratio), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.tau_expert > 0.0 && self.tau_weak > 0.0) {
            return Err(Error::InvalidInput("tilt temperatures must be positive".into()));
        }
        if self.tau_weak < self.tau_expert {
            return Err(Error::InvalidInput(format!(
                "tau_weak ({}) must be >= tau_expert ({}): the weak policy is a flatter tilt",
                self.tau_weak, self.tau_expert
            )));
        }
        if self.bt_scale <= 0.0 {
            return Err(Error::InvalidInput("bt_scale must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Draw a reward table with i.i.d. standard-normal weights.
pub fn make_ground_truth(shape: ModelShape, seed: u64) -> Result<GroundTruthReward> {
    shape.validate()?;
    let mut rng = from_seed(seed);
    let weights = Array3::from_shape_fn((shape.prompts, shape.seq_len, shape.vocab), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    GroundTruthReward::new(shape, weights)
}

/// Exponential tilt of the uniform policy toward the reward table:
/// `logits = weights / tau`. Exact because the reward is position-additive.
pub fn tilt_policy(gt: &GroundTruthReward, tau: f64) -> Result<PolicyParams> {
    if tau <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let logits = gt.weights().mapv(|w| w / tau);
    PolicyParams::new(gt.shape(), logits)
}

/// Generate a preference dataset under the given config and reward table.
pub fn generate(cfg: &GenConfig, gt: &GroundTruthReward) -> Result<PreferenceDataset> {
    cfg.validate()?;
    if gt.shape() != cfg.shape {
        return Err(Error::ShapeMismatch(
            "reward table shape differs from generator shape".into(),
        ));
    }
    let expert = tilt_policy(gt, cfg.tau_expert)?;
    let weak = tilt_policy(gt, cfg.tau_weak)?;
    let mut rng = from_seed(cfg.seed);
    let mut triplets = Vec::with_capacity(cfg.n_triplets);

    for _ in 0..cfg.n_triplets {
        let prompt_id = rng.random_range(0..cfg.shape.prompts);
        let gap_draw: f64 = rng.random();
        let (gap_class, resp_a, resp_b) = if gap_draw < cfg.mixture_ratio {
            let a = expert.sample(prompt_id, &mut rng);
            let b = weak.sample(prompt_id, &mut rng);
            (GapClass::High, a, b)
        } else {
            let a = expert.sample(prompt_id, &mut rng);
            let b = expert.sample(prompt_id, &mut rng);
            (GapClass::Low, a, b)
        };
        let r_a = gt.true_reward(prompt_id, &resp_a)?;
        let r_b = gt.true_reward(prompt_id, &resp_b)?;

        let bt_draw: f64 = rng.random();
        let p_a_wins = sigmoid(cfg.bt_scale * (r_a - r_b));
        let (mut chosen, mut r_chosen, mut rejected, mut r_rejected) = if bt_draw < p_a_wins {
            (resp_a, r_a, resp_b, r_b)
        } else {
            (resp_b, r_b, resp_a, r_a)
        };

        let flip_draw: f64 = rng.random();
        let label_flipped = flip_draw < cfg.flip_prob;
        if label_flipped {
            std::mem::swap(&mut chosen, &mut rejected);
            std::mem::swap(&mut r_chosen, &mut r_rejected);
        }

        triplets.push(Triplet {
            prompt_id,
            chosen,
            rejected,
            meta: TripletMeta {
                gap_class,
                label_flipped,
                true_reward_chosen: r_chosen,
                true_reward_rejected: r_rejected,
            },
        });
    }

    Ok(PreferenceDataset::new(cfg.shape, triplets, cfg.digest()))
}
