//! Small differentiable classifiers with hand-derived backward passes: a
//! linear softmax classifier and a one-hidden-layer MLP, both applied
//! per-sample (or per-pixel, with pixels flattened into the batch).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{LogitsBatch, Matrix};
use crate::rng::Rng;

const CHECKPOINT_MAGIC: &[u8; 8] = b"IMBLCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation. relu'(0) is 0.
    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Input features paired with their labels.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::invalid_input(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid_input("features contain non-finite entries"));
        }
        Ok(FeatureBatch { features, labels })
    }
}

/// Classifier parameters. Linear holds W (D×C) and bias (C); the MLP holds
/// W1 (D×H), b1 (H), W2 (H×C), b2 (C) with the chosen activation in between.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Linear {
        weight: Matrix,
        bias: Vec<f64>,
    },
    Mlp {
        weight1: Matrix,
        bias1: Vec<f64>,
        weight2: Matrix,
        bias2: Vec<f64>,
        activation: Activation,
    },
}

/// Intermediate values a forward pass hands to its matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    features: Matrix,
    pre_hidden: Option<Matrix>,
    hidden: Option<Matrix>,
}

/// Gradients in the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum ModelGrads {
    Linear {
        d_weight: Matrix,
        d_bias: Vec<f64>,
    },
    Mlp {
        d_weight1: Matrix,
        d_bias1: Vec<f64>,
        d_weight2: Matrix,
        d_bias2: Vec<f64>,
    },
}

impl ModelGrads {
    /// Gradients flattened in the same declaration order as
    /// [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ModelGrads::Linear { d_weight, d_bias } => {
                let mut out = d_weight.as_slice().to_vec();
                out.extend_from_slice(d_bias);
                out
            }
            ModelGrads::Mlp {
                d_weight1,
                d_bias1,
                d_weight2,
                d_bias2,
            } => {
                let mut out = d_weight1.as_slice().to_vec();
                out.extend_from_slice(d_bias1);
                out.extend_from_slice(d_weight2.as_slice());
                out.extend_from_slice(d_bias2);
                out
            }
        }
    }
}

fn init_weight(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    // Uniform in ±sqrt(3/fan_in): unit-variance-preserving for fan_in inputs.
    let bound = (3.0 / rows as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rng.uniform(-bound, bound));
        }
    }
    m
}

impl ModelParams {
    /// Seeded initialization: weights uniform scaled by 1/√fan_in, biases
    /// zero. The same seed always produces bit-identical parameters.
    pub fn init(
        seed: u64,
        arch: Arch,
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if input_dim < 1 || classes < 1 {
            return Err(Error::invalid_input(format!(
                "dimensions must be positive, got D={input_dim}, C={classes}"
            )));
        }
        let mut rng = Rng::from_seed_and_stream(seed, 0x4D4F_4445_4C31);
        match arch {
            Arch::Linear => Ok(ModelParams::Linear {
                weight: init_weight(&mut rng, input_dim, classes),
                bias: vec![0.0; classes],
            }),
            Arch::Mlp => {
                if hidden_dim < 1 {
                    return Err(Error::invalid_input(format!(
                        "mlp needs hidden width >= 1, got {hidden_dim}"
                    )));
                }
                Ok(ModelParams::Mlp {
                    weight1: init_weight(&mut rng, input_dim, hidden_dim),
                    bias1: vec![0.0; hidden_dim],
                    weight2: init_weight(&mut rng, hidden_dim, classes),
                    bias2: vec![0.0; classes],
                    activation: Activation::Relu,
                })
            }
        }
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        if let ModelParams::Mlp { activation, .. } = &mut self {
            *activation = act;
        }
        self
    }

    pub fn arch(&self) -> Arch {
        match self {
            ModelParams::Linear { .. } => Arch::Linear,
            ModelParams::Mlp { .. } => Arch::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelParams::Linear { weight, .. } => weight.rows(),
            ModelParams::Mlp { weight1, .. } => weight1.rows(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            ModelParams::Linear { .. } => 0,
            ModelParams::Mlp { weight1, .. } => weight1.cols(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelParams::Linear { weight, .. } => weight.cols(),
            ModelParams::Mlp { weight2, .. } => weight2.cols(),
        }
    }

    /// Logits Z for a feature matrix, plus the cache the backward pass needs.
    pub fn forward(&self, features: &Matrix) -> Result<(LogitsBatch, ForwardCache)> {
        if features.cols() != self.input_dim() {
            return Err(Error::invalid_input(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        match self {
            ModelParams::Linear { weight, bias } => {
                let mut z = features.matmul(weight);
                z.add_row_vector(bias);
                Ok((
                    LogitsBatch::new(z)?,
                    ForwardCache {
                        features: features.clone(),
                        pre_hidden: None,
                        hidden: None,
                    },
                ))
            }
            ModelParams::Mlp {
                weight1,
                bias1,
                weight2,
                bias2,
                activation,
            } => {
                let mut pre = features.matmul(weight1);
                pre.add_row_vector(bias1);
                let mut hidden = pre.clone();
                for v in hidden.as_mut_slice() {
                    *v = activation.apply(*v);
                }
                let mut z = hidden.matmul(weight2);
                z.add_row_vector(bias2);
                Ok((
                    LogitsBatch::new(z)?,
                    ForwardCache {
                        features: features.clone(),
                        pre_hidden: Some(pre),
                        hidden: Some(hidden),
                    },
                ))
            }
        }
    }

    /// Chains a loss gradient dZ = ∂loss/∂logits into parameter gradients.
    /// The cache must come from the matching forward call.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Matrix) -> Result<ModelGrads> {
        if d_logits.rows() != cache.features.rows() || d_logits.cols() != self.classes() {
            return Err(Error::InvalidState(format!(
                "gradient shape {}x{} does not match cache batch {} and model classes {}",
                d_logits.rows(),
                d_logits.cols(),
                cache.features.rows(),
                self.classes()
            )));
        }
        match self {
            ModelParams::Linear { .. } => {
                if cache.pre_hidden.is_some() {
                    return Err(Error::InvalidState(
                        "cache carries hidden activations but the model is linear".into(),
                    ));
                }
                Ok(ModelGrads::Linear {
                    d_weight: cache.features.transpose_matmul(d_logits),
                    d_bias: d_logits.column_sums(),
                })
            }
            ModelParams::Mlp {
                weight2,
                activation,
                ..
            } => {
                let (pre, hidden) = match (&cache.pre_hidden, &cache.hidden) {
                    (Some(p), Some(h)) => (p, h),
                    _ => {
                        return Err(Error::InvalidState(
                            "cache lacks hidden activations for an mlp backward pass".into(),
                        ))
                    }
                };
                if hidden.cols() != self.hidden_dim() {
                    return Err(Error::InvalidState(format!(
                        "cache hidden width {} does not match model width {}",
                        hidden.cols(),
                        self.hidden_dim()
                    )));
                }
                let d_weight2 = hidden.transpose_matmul(d_logits);
                let d_bias2 = d_logits.column_sums();
                let mut d_hidden = d_logits.matmul_transpose(weight2);
                for (v, &x) in d_hidden.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *v *= activation.derivative(x);
                }
                let d_weight1 = cache.features.transpose_matmul(&d_hidden);
                let d_bias1 = d_hidden.column_sums();
                Ok(ModelGrads::Mlp {
                    d_weight1,
                    d_bias1,
                    d_weight2,
                    d_bias2,
                })
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelParams::Linear { weight, bias } => weight.as_slice().len() + bias.len(),
            ModelParams::Mlp {
                weight1,
                bias1,
                weight2,
                bias2,
                ..
            } => {
                weight1.as_slice().len() + bias1.len() + weight2.as_slice().len() + bias2.len()
            }
        }
    }

    /// Parameters flattened in declaration order; the inverse of
    /// [`ModelParams::load_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            ModelParams::Linear { weight, bias } => {
                out.extend_from_slice(weight.as_slice());
                out.extend_from_slice(bias);
            }
            ModelParams::Mlp {
                weight1,
                bias1,
                weight2,
                bias2,
                ..
            } => {
                out.extend_from_slice(weight1.as_slice());
                out.extend_from_slice(bias1);
                out.extend_from_slice(weight2.as_slice());
                out.extend_from_slice(bias2);
            }
        }
        out
    }

    /// Overwrites the parameters from a flat vector in declaration order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid_input(format!(
                "{} flat parameters for a model with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        let mut take = |len: usize| {
            let slice = &flat[offset..offset + len];
            offset += len;
            slice
        };
        match self {
            ModelParams::Linear { weight, bias } => {
                let w = take(weight.as_slice().len());
                weight.as_mut_slice().copy_from_slice(w);
                bias.copy_from_slice(take(bias.len()));
            }
            ModelParams::Mlp {
                weight1,
                bias1,
                weight2,
                bias2,
                ..
            } => {
                let w1 = take(weight1.as_slice().len());
                weight1.as_mut_slice().copy_from_slice(w1);
                bias1.copy_from_slice(take(bias1.len()));
                let w2 = take(weight2.as_slice().len());
                weight2.as_mut_slice().copy_from_slice(w2);
                bias2.copy_from_slice(take(bias2.len()));
            }
        }
        Ok(())
    }

    /// Serializes to the checkpoint format: magic, version, arch tag,
    /// activation tag, D/H/C, then the little-endian f64 parameters in
    /// declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.push(match self.arch() {
            Arch::Linear => 0,
            Arch::Mlp => 1,
        });
        let activation = match self {
            ModelParams::Linear { .. } => 0u8,
            ModelParams::Mlp { activation, .. } => match activation {
                Activation::Relu => 0,
                Activation::Tanh => 1,
            },
        };
        bytes.push(activation);
        bytes.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.hidden_dim() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.classes() as u32).to_le_bytes());
        for v in self.to_flat() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ModelParams::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let need = |offset: usize, len: usize| -> Result<&[u8]> {
            bytes.get(offset..offset + len).ok_or(Error::Format {
                offset: bytes.len() as u64,
                message: format!(
                    "checkpoint truncated: need {} bytes at offset {offset}",
                    len
                ),
            })
        };
        let magic = need(0, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let version = u32::from_le_bytes(need(8, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let arch_tag = need(12, 1)?[0];
        let act_tag = need(13, 1)?[0];
        let input_dim = u32::from_le_bytes(need(14, 4)?.try_into().unwrap()) as usize;
        let hidden_dim = u32::from_le_bytes(need(18, 4)?.try_into().unwrap()) as usize;
        let classes = u32::from_le_bytes(need(22, 4)?.try_into().unwrap()) as usize;
        let activation = match act_tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            other => {
                return Err(Error::Format {
                    offset: 13,
                    message: format!("unknown activation tag {other}"),
                })
            }
        };
        let mut params = match arch_tag {
            0 => ModelParams::Linear {
                weight: Matrix::zeros(input_dim, classes),
                bias: vec![0.0; classes],
            },
            1 => ModelParams::Mlp {
                weight1: Matrix::zeros(input_dim, hidden_dim),
                bias1: vec![0.0; hidden_dim],
                weight2: Matrix::zeros(hidden_dim, classes),
                bias2: vec![0.0; classes],
                activation,
            },
            other => {
                return Err(Error::Format {
                    offset: 12,
                    message: format!("unknown arch tag {other}"),
                })
            }
        };
        let mut flat = Vec::with_capacity(params.param_count());
        let mut offset = 26;
        for _ in 0..params.param_count() {
            let chunk = need(offset, 8)?;
            flat.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            offset += 8;
        }
        if offset != bytes.len() {
            return Err(Error::Format {
                offset: offset as u64,
                message: format!("{} trailing bytes after parameters", bytes.len() - offset),
            });
        }
        params.load_flat(&flat)?;
        Ok(params)
    }
}
