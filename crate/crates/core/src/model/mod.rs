//! The restoration network: a base network whose local and global residual
//! connections are scaled per channel by weights that a bias-free linear
//! condition network computes from the condition vector.

mod arch;
mod checkpoint;
mod forward;
mod weights;

pub use arch::ArchConfig;
pub use checkpoint::{
    decode as decode_checkpoint, digest, encode as encode_checkpoint, load_checkpoint, load_checkpoint_expecting,
    save_checkpoint, Checkpoint, CheckpointError, Manifest, ModelKind,
};
pub use forward::{forward, Alphas, ForwardOptions, MIN_SIZE};
pub use weights::{BaseNet, ConditionNet, Conv, ResBlock, Weights};

use thiserror::Error;

use crate::imaging::{DegradationSpace, Image, ImageError};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("condition vector has {found} entries, model expects {expected}")]
    ConditionDim { expected: usize, found: usize },
    #[error("conditioned model needs a condition vector")]
    MissingCondition,
    #[error("input shape {0:?} does not match the model's image channels")]
    InputShape(Vec<usize>),
    #[error("input {height}x{width} is smaller than {min}x{min}", min = MIN_SIZE)]
    TooSmall { height: usize, width: usize },
    #[error("input {height}x{width} must have even sides")]
    OddSize { height: usize, width: usize },
    #[error("space has {space} dimensions but the architecture expects {arch}")]
    SpaceMismatch { arch: usize, space: usize },
}

/// Parameter counts of the two branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub base: usize,
    pub condition: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.base + self.condition
    }
}

/// Exact parameter counts from the layer shapes of `arch`.
pub fn param_count(arch: &ArchConfig, conditioned: bool) -> ParamCount {
    let shapes = Weights::shapes(arch, conditioned);
    let size = |s: &Vec<usize>| s.iter().product::<usize>();
    let all: usize = shapes.leaves().into_iter().map(size).sum();
    let condition = shapes
        .condition
        .as_ref()
        .map(|c| c.local.iter().map(size).sum::<usize>() + size(&c.global))
        .unwrap_or(0);
    ParamCount {
        base: all - condition,
        condition,
    }
}

/// Weights plus the architecture and modulation space they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub arch: ArchConfig,
    pub space: DegradationSpace,
    pub weights: Weights<Tensor<T>>,
}

/// Shrinks the last conv of every residual branch at init so a deep stack
/// starts close to the identity instead of amplifying its input.
pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

impl<T: Scalar> Model<T> {
    /// Conditioned model. Convolutions use Kaiming-uniform fan-in init with zero
    /// bias; condition layers use Xavier-uniform.
    pub fn new(arch: ArchConfig, space: DegradationSpace, seed: u64) -> Result<Self, ModelError> {
        Self::init(arch, space, seed, true)
    }

    /// Base network only; every connection weight is fixed at 1.
    pub fn baseline(arch: ArchConfig, space: DegradationSpace, seed: u64) -> Result<Self, ModelError> {
        Self::init(arch, space, seed, false)
    }

    fn init(arch: ArchConfig, space: DegradationSpace, seed: u64, conditioned: bool) -> Result<Self, ModelError> {
        arch.validate()?;
        space.validate()?;
        if space.len() != arch.condition_dim {
            return Err(ModelError::SpaceMismatch {
                arch: arch.condition_dim,
                space: space.len(),
            });
        }
        let mut rng = Rng::new(seed);
        let weights = Weights::shapes(&arch, conditioned).map(|name, shape| {
            let bound = if name.starts_with("condition.") {
                (6.0 / (shape[0] + shape[1]) as f64).sqrt()
            } else if name.ends_with(".bias") {
                0.0
            } else {
                let kaiming = (6.0 / (shape[1] * shape[2] * shape[3]) as f64).sqrt();
                if name.ends_with("conv2.weight") || name.ends_with("conv_out.weight") {
                    kaiming * RESIDUAL_INIT_SCALE
                } else {
                    kaiming
                }
            };
            Tensor::from_fn(shape.clone(), |_| T::from_f64((2.0 * rng.uniform() - 1.0) * bound))
        });
        Ok(Self { arch, space, weights })
    }

    pub fn is_baseline(&self) -> bool {
        self.weights.condition.is_none()
    }

    pub fn param_count(&self) -> ParamCount {
        let size = |t: &Tensor<T>| t.numel();
        let all: usize = self.weights.leaves().into_iter().map(size).sum();
        let condition = self
            .weights
            .condition
            .as_ref()
            .map(|c| c.local.iter().map(size).sum::<usize>() + size(&c.global))
            .unwrap_or(0);
        ParamCount {
            base: all - condition,
            condition,
        }
    }

    /// Inserts every parameter as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Weights<Var> {
        self.weights.map(|_, t| tape.leaf(t, requires_grad))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            space: self.space.clone(),
            weights: self.weights.map(|_, t| t.cast()),
        }
    }

    fn check_condition(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() != self.arch.condition_dim {
            return Err(ModelError::ConditionDim {
                expected: self.arch.condition_dim,
                found: z.len(),
            });
        }
        if !condition_in_range(z) {
            log::warn!("condition {z:?} lies outside [0, 1]; extrapolating");
        }
        Ok(())
    }

    /// Connection weights for condition `z`. Baseline models report all ones.
    pub fn condition_forward(&self, z: &[f64]) -> Result<Alphas<T>, ModelError> {
        self.check_condition(z)?;
        let Some(cn) = &self.weights.condition else {
            return Ok(Alphas {
                global: vec![T::one(); self.arch.image_channels],
                local: vec![vec![T::one(); self.arch.channels]; self.arch.groups],
            });
        };
        let mut tape = Tape::inference();
        let zv = tape.leaf_owned(condition_tensor(z), false);
        let mut apply = |m: &Tensor<T>| -> Result<Vec<T>, ModelError> {
            let mv = tape.leaf(m, false);
            let out = tape.linear_nobias(zv, mv)?;
            Ok(tape.value(out)?.to_vec())
        };
        let local = cn.local.iter().map(&mut apply).collect::<Result<_, _>>()?;
        let global = apply(&cn.global)?;
        Ok(Alphas { global, local })
    }

    /// Inference on a `[C_img, H, W]` tensor with even sides.
    pub fn forward_tensor(&self, x: &Tensor<T>, z: &[f64], opts: ForwardOptions) -> Result<Tensor<T>, ModelError> {
        self.check_condition(z)?;
        let mut tape = Tape::inference();
        let w = self.bind(&mut tape, false);
        let xv = tape.leaf(x, false);
        let zv = tape.leaf_owned(condition_tensor(z), false);
        let y = forward(&mut tape, &self.arch, &w, xv, Some(zv), opts)?;
        Ok(tape.tensor(y)?)
    }

    /// Restores an image of any size >= 8x8. Odd sides are padded by edge
    /// replication and cropped back; the output is clamped to `[0, 1]`.
    pub fn restore(&self, img: &Image, z: &[f64], opts: ForwardOptions) -> Result<Image, ModelError> {
        let (c, h, w) = img.dims();
        if c != self.arch.image_channels {
            return Err(ModelError::InputShape(vec![c, h, w]));
        }
        let (ph, pw) = (h + h % 2, w + w % 2);
        let padded = if (ph, pw) == (h, w) {
            img.clone()
        } else {
            Image::from_fn(c, ph, pw, |ch, y, x| img.get(ch, y.min(h - 1), x.min(w - 1)))
        };
        let out = self.forward_tensor(&padded.to_tensor::<T>(), z, opts)?;
        let out = Image::from_tensor(&out)?;
        if (ph, pw) == (h, w) {
            Ok(out)
        } else {
            Ok(out.crop(0, 0, h, w)?)
        }
    }
}

pub fn condition_in_range(z: &[f64]) -> bool {
    z.iter().all(|v| (0.0..=1.0).contains(v))
}

fn condition_tensor<T: Scalar>(z: &[f64]) -> Tensor<T> {
    Tensor::from_fn([z.len()], |i| T::from_f64(z[i]))
}
