//! Shared on-disk layout for `[prompt][position][token]` tensors.
//!
//! Policy checkpoints and ground-truth reward tables use the same JSON file:
//! a shape header followed by the row-major entries. JSON floats are written
//! in shortest round-trip decimal form, so reads restore the exact bits.

use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ModelShape;

#[derive(Serialize, Deserialize)]
struct TensorFile {
    #[serde(rename = "P")]
    prompts: usize,
    #[serde(rename = "T")]
    seq_len: usize,
    #[serde(rename = "V")]
    vocab: usize,
    data: Vec<f64>,
}

pub(crate) fn write(path: impl AsRef<Path>, shape: ModelShape, data: &Array3<f64>) -> Result<()> {
    let file = TensorFile {
        prompts: shape.prompts,
        seq_len: shape.seq_len,
        vocab: shape.vocab,
        data: data.iter().copied().collect(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read(path: impl AsRef<Path>) -> Result<(ModelShape, Array3<f64>)> {
    let file: TensorFile = serde_json::from_reader(std::fs::File::open(path)?)?;
    let shape = ModelShape::new(file.prompts, file.seq_len, file.vocab)?;
    let expected = shape.prompts * shape.seq_len * shape.vocab;
    if file.data.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "tensor file holds {} entries, shape wants {expected}",
            file.data.len()
        )));
    }
    let arr = Array3::from_shape_vec((shape.prompts, shape.seq_len, shape.vocab), file.data)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((shape, arr))
}
