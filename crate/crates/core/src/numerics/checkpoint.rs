//! JSON checkpoints of named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "gpll-params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor, NumericsError> {
        Tensor::from_vec(self.rows, self.cols, self.data.clone())
            .map_err(|e| NumericsError::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile<M> {
    format: String,
    version: u32,
    meta: M,
    tensors: Vec<NamedTensor>,
}

/// Writes tensors plus caller metadata (for example the model config).
pub fn save_checkpoint<M: Serialize>(
    path: &Path,
    meta: &M,
    tensors: &[NamedTensor],
) -> Result<(), NumericsError> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        meta,
        tensors: tensors.to_vec(),
    };
    let text =
        serde_json::to_string(&file).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint<M: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(M, Vec<NamedTensor>), NumericsError> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile<M> =
        serde_json::from_str(&text).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(NumericsError::Checkpoint(format!(
            "unknown format {:?}",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    for t in &file.tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(NumericsError::Checkpoint(format!(
                "tensor {} declares {}x{} but holds {} values",
                t.name,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
    }
    Ok((file.meta, file.tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let t = Tensor::from_rows(&[[0.1, -1.0 / 3.0], [1e-300, 7.25]]).unwrap();
        save_checkpoint(&path, &"meta", &[NamedTensor::new("w", &t)]).unwrap();
        let (meta, back): (String, _) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(back[0].to_tensor().unwrap(), t);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(
            &path,
            r#"{"format":"gpll-params","version":99,"meta":null,"tensors":[]}"#,
        )
        .unwrap();
        let err = load_checkpoint::<()>(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
