use std::path::Path as FsPath;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::numerics::{load_checkpoint, save_checkpoint, NamedTensor, Tensor};

/// Shapes that determine the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Instance feature width.
    pub feature_dim: usize,
    pub num_classes: usize,
    pub gcn_hidden: usize,
    pub dense_hidden: usize,
    pub attention_hidden: usize,
    pub num_heads: usize,
    pub levels: usize,
    pub per_path_weights: bool,
}

impl ModelDims {
    pub fn new(config: &ModelConfig, feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            num_classes,
            gcn_hidden: config.gcn_hidden,
            dense_hidden: config.dense_hidden,
            attention_hidden: config.attention_hidden,
            num_heads: config.num_heads,
            levels: config.rating_levels.len(),
            per_path_weights: config.per_path_weights,
        }
    }

    /// Width of the shared node input space: instance features followed by
    /// the one-hot label block.
    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.num_classes
    }

    fn head_stride(&self) -> usize {
        if self.per_path_weights {
            5
        } else {
            4
        }
    }

    fn tail(&self) -> usize {
        self.num_heads * self.head_stride()
    }

    pub(crate) fn propagate(&self, head: usize, cross: bool) -> usize {
        let base = head * self.head_stride();
        if cross && self.per_path_weights {
            base + 1
        } else {
            base
        }
    }

    pub(crate) fn attn_proj(&self, head: usize) -> usize {
        head * self.head_stride() + self.head_stride() - 3
    }

    pub(crate) fn attn_dst(&self, head: usize) -> usize {
        self.attn_proj(head) + 1
    }

    pub(crate) fn attn_src(&self, head: usize) -> usize {
        self.attn_proj(head) + 2
    }

    pub(crate) fn feature(&self) -> usize {
        self.tail()
    }

    pub(crate) fn feature_bias(&self) -> usize {
        self.tail() + 1
    }

    pub(crate) fn instance_out(&self) -> usize {
        self.tail() + 2
    }

    pub(crate) fn label_out(&self) -> usize {
        self.tail() + 3
    }

    pub(crate) fn decoder(&self) -> usize {
        self.tail() + 4
    }

    pub fn num_tensors(&self) -> usize {
        self.tail() + 5
    }

    /// Name and shape of every tensor, in layout order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let (f, h, e, a) = (
            self.input_dim(),
            self.gcn_hidden,
            self.dense_hidden,
            self.attention_hidden,
        );
        let mut out = Vec::with_capacity(self.num_tensors());
        for k in 0..self.num_heads {
            if self.per_path_weights {
                out.push((format!("head{k}.propagate_within"), f, h));
                out.push((format!("head{k}.propagate_cross"), f, h));
            } else {
                out.push((format!("head{k}.propagate"), f, h));
            }
            out.push((format!("head{k}.attention_proj"), f, a));
            out.push((format!("head{k}.attention_dst"), a, 1));
            out.push((format!("head{k}.attention_src"), a, 1));
        }
        out.push(("feature".into(), f, h));
        out.push(("feature_bias".into(), 1, h));
        out.push(("instance_out".into(), 3 * h, e));
        out.push(("label_out".into(), 3 * h, e));
        out.push(("decoder".into(), e, self.levels * e));
        out
    }
}

/// All trainable tensors in layout order.
///
/// The dense feature transform is a single matrix over the shared input
/// space: its first `feature_dim` rows act on instance features and the rest
/// on one-hot labels, with one bias shared by both. The decoder stores the
/// per-level bilinear forms side by side as `E x (levels * E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub tensors: Vec<Tensor>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

impl ModelParams {
    /// Seeded uniform Glorot initialisation; biases start at zero.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = dims.dense_hidden;
        let tensors = dims
            .layout()
            .into_iter()
            .map(|(name, r, c)| match name.as_str() {
                "feature_bias" => Tensor::zeros(r, c),
                "decoder" => glorot(&mut rng, r, c, e, e),
                n if n.ends_with("attention_dst") || n.ends_with("attention_src") => {
                    glorot(&mut rng, r, c, 2 * r, 1)
                }
                _ => glorot(&mut rng, r, c, r, c),
            })
            .collect();
        Self { dims, tensors }
    }

    pub fn named(&self) -> Vec<NamedTensor> {
        self.dims
            .layout()
            .iter()
            .zip(&self.tensors)
            .map(|((name, _, _), t)| NamedTensor::new(name.clone(), t))
            .collect()
    }

    pub fn from_named(dims: ModelDims, named: &[NamedTensor]) -> Result<Self, ModelError> {
        let layout = dims.layout();
        if layout.len() != named.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, r, c), nt) in layout.iter().zip(named) {
            if &nt.name != name || nt.rows != *r || nt.cols != *c {
                return Err(ModelError::Mismatch(format!(
                    "expected {name} {r}x{c}, found {} {}x{}",
                    nt.name, nt.rows, nt.cols
                )));
            }
            tensors.push(nt.to_tensor()?);
        }
        Ok(Self { dims, tensors })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Metadata stored next to the tensors in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsMeta {
    pub dims: ModelDims,
    pub config: ModelConfig,
}

pub fn save_params(
    path: &FsPath,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(), ModelError> {
    let meta = ParamsMeta {
        dims: params.dims,
        config: config.clone(),
    };
    save_checkpoint(path, &meta, &params.named()).map_err(|e| match e {
        crate::numerics::NumericsError::Io(source) => ModelError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other.into(),
    })
}

pub fn load_params(path: &FsPath) -> Result<(ModelParams, ModelConfig), ModelError> {
    let (meta, named): (ParamsMeta, _) = load_checkpoint(path).map_err(|e| match e {
        crate::numerics::NumericsError::Io(source) => ModelError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other.into(),
    })?;
    let params = ModelParams::from_named(meta.dims, &named)?;
    Ok((params, meta.config))
}
