//! Shared domain types and the preference-dataset container.
//!
//! All types here are immutable value objects after construction; they can be
//! shared across threads freely. Responses have a fixed length `T` and tokens
//! are opaque integer ids in `[0, V)` — no tokenizer, no text, no padding.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on `V^T` for operations that enumerate every sequence.
pub const ENUMERATION_BUDGET: u64 = 1 << 20;

/// Dimensions of the toy model family: `P` prompts, responses of length `T`
/// over a vocabulary of `V` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    #[serde(rename = "P")]
    pub prompts: usize,
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
}

impl ModelShape {
    pub fn new(prompts: usize, seq_len: usize, vocab: usize) -> Result<Self> {
        let shape = ModelShape {
            prompts,
            seq_len,
            vocab,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts < 1 || self.seq_len < 1 || self.vocab < 2 {
            return Err(Error::InvalidInput(format!(
                "shape requires P >= 1, T >= 1, V >= 2, got P={} T={} V={}",
                self.prompts, self.seq_len, self.vocab
            )));
        }
        Ok(())
    }

    /// `V^T`, or `None` on overflow.
    pub fn sequence_count(&self) -> Option<u64> {
        let mut n: u64 = 1;
        for _ in 0..self.seq_len {
            n = n.checked_mul(self.vocab as u64)?;
        }
        Some(n)
    }

    /// Whether exact enumeration of all sequences fits in `budget`.
    pub fn enumerable_within(&self, budget: u64) -> bool {
        matches!(self.sequence_count(), Some(n) if n <= budget)
    }
}

impl Default for ModelShape {
    /// 4 prompts, 4 positions, 8 tokens: 4096 sequences per prompt, large
    /// enough for nondegenerate distributions, small enough to enumerate in
    /// milliseconds.
    fn default() -> Self {
        ModelShape {
            prompts: 4,
            seq_len: 4,
            vocab: 8,
        }
    }
}

/// A fixed-length response: one token id per position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseSeq {
    pub tokens: Vec<u32>,
}

impl ResponseSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        ResponseSeq { tokens }
    }

    pub fn conforms(&self, shape: &ModelShape) -> bool {
        self.tokens.len() == shape.seq_len
            && self.tokens.iter().all(|&t| (t as usize) < shape.vocab)
    }
}

/// Which generation regime a pair came from: both responses drawn from the
/// expert policy (low gap) or expert vs. weak (high gap).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapClass {
    Low,
    High,
}

/// Provenance carried alongside each pair: generation regime, whether the
/// label was flipped at generation time, and the ground-truth rewards of the
/// stored chosen/rejected responses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletMeta {
    pub gap_class: GapClass,
    pub label_flipped: bool,
    #[serde(rename = "r_chosen")]
    pub true_reward_chosen: f64,
    #[serde(rename = "r_rejected")]
    pub true_reward_rejected: f64,
}

/// One preference record: a prompt id and a chosen/rejected response pair.
///
/// Degenerate pairs (`chosen == rejected`) are valid data; their reward
/// discrepancy is exactly zero under any policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub prompt_id: usize,
    pub chosen: ResponseSeq,
    pub rejected: ResponseSeq,
    pub meta: TripletMeta,
}

/// An ordered list of triplets plus the shape they conform to and a digest of
/// the generator configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceDataset {
    pub shape: ModelShape,
    pub triplets: Vec<Triplet>,
    pub generator_config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    #[serde(rename = "P")]
    prompts: usize,
    #[serde(rename = "T")]
    seq_len: usize,
    #[serde(rename = "V")]
    vocab: usize,
    generator_digest: String,
}

impl PreferenceDataset {
    pub fn new(shape: ModelShape, triplets: Vec<Triplet>, digest: impl Into<String>) -> Self {
        PreferenceDataset {
            shape,
            triplets,
            generator_config_digest: digest.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Check every type invariant for every triplet. Returns one description
    /// per violation; an empty list means the dataset is valid. Pure: never
    /// mutates, never fails.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if let Err(e) = self.shape.validate() {
            violations.push(format!("shape: {e}"));
        }
        for (i, t) in self.triplets.iter().enumerate() {
            if t.prompt_id >= self.shape.prompts {
                violations.push(format!(
                    "triplet {i}: prompt_id {} out of range (P={})",
                    t.prompt_id, self.shape.prompts
                ));
            }
            for (side, resp) in [("chosen", &t.chosen), ("rejected", &t.rejected)] {
                if resp.tokens.len() != self.shape.seq_len {
                    violations.push(format!(
                        "triplet {i}: {side} has length {} (T={})",
                        resp.tokens.len(),
                        self.shape.seq_len
                    ));
                }
                for (pos, &tok) in resp.tokens.iter().enumerate() {
                    if tok as usize >= self.shape.vocab {
                        violations.push(format!(
                            "triplet {i}: {side} token {tok} at position {pos} out of range (V={})",
                            self.shape.vocab
                        ));
                    }
                }
            }
            if !t.meta.true_reward_chosen.is_finite() || !t.meta.true_reward_rejected.is_finite() {
                violations.push(format!("triplet {i}: non-finite true reward in meta"));
            }
        }
        violations
    }

    /// Write as JSONL: one header line with the shape and generator digest,
    /// then one record per triplet. Round-trips bit-exactly.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let header = JsonlHeader {
            prompts: self.shape.prompts,
            seq_len: self.shape.seq_len,
            vocab: self.shape.vocab,
            generator_digest: self.generator_config_digest.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.triplets {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty dataset file".into()))??;
        let header: JsonlHeader = serde_json::from_str(&header_line)?;
        let shape = ModelShape {
            prompts: header.prompts,
            seq_len: header.seq_len,
            vocab: header.vocab,
        };
        let mut triplets = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            triplets.push(serde_json::from_str(&line)?);
        }
        Ok(PreferenceDataset::new(
            shape,
            triplets,
            header.generator_digest,
        ))
    }

    pub fn write_jsonl_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(std::fs::File::create(path)?)
    }

    pub fn read_jsonl_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TripletMeta {
        TripletMeta {
            gap_class: GapClass::Low,
            label_flipped: false,
            true_reward_chosen: 1.25,
            true_reward_rejected: -0.5,
        }
    }

    fn small_dataset() -> PreferenceDataset {
        let shape = ModelShape::new(2, 3, 4).unwrap();
        let triplets = vec![
            Triplet {
                prompt_id: 0,
                chosen: ResponseSeq::new(vec![0, 1, 2]),
                rejected: ResponseSeq::new(vec![3, 3, 3]),
                meta: meta(),
            },
            Triplet {
                prompt_id: 1,
                chosen: ResponseSeq::new(vec![1, 1, 1]),
                rejected: ResponseSeq::new(vec![1, 1, 1]),
                meta: meta(),
            },
        ];
        PreferenceDataset::new(shape, triplets, "digest")
    }

    #[test]
    fn valid_dataset_has_no_violations() {
        assert!(small_dataset().validate().is_empty());
    }

    #[test]
    fn out_of_range_token_names_triplet_index() {
        let mut ds = small_dataset();
        ds.triplets[1].chosen.tokens[2] = 4; // == V
        let violations = ds.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("triplet 1"), "{violations:?}");
    }

    #[test]
    fn empty_dataset_is_vacuously_valid() {
        let ds = PreferenceDataset::new(ModelShape::default(), vec![], "d");
        assert!(ds.validate().is_empty());
    }

    #[test]
    fn validate_is_pure() {
        let ds = small_dataset();
        assert_eq!(ds.validate(), ds.validate());
    }

    #[test]
    fn jsonl_round_trip_is_identity() {
        let ds = small_dataset();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = PreferenceDataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn shape_rejects_degenerate_dimensions() {
        assert!(ModelShape::new(0, 1, 2).is_err());
        assert!(ModelShape::new(1, 0, 2).is_err());
        assert!(ModelShape::new(1, 1, 1).is_err());
    }

    #[test]
    fn sequence_count_and_budget() {
        let shape = ModelShape::default();
        assert_eq!(shape.sequence_count(), Some(4096));
        assert!(shape.enumerable_within(ENUMERATION_BUDGET));
        let big = ModelShape::new(1, 64, 1000).unwrap();
        assert_eq!(big.sequence_count(), None);
        assert!(!big.enumerable_within(ENUMERATION_BUDGET));
    }
}
