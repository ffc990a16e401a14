use crate::tensor::{Scalar, Tape, Var};

use super::weights::{Conv, Weights};
use super::{ArchConfig, ModelError};

/// Smallest accepted spatial size of the network input.
pub const MIN_SIZE: usize = 8;

/// Knobs of a forward pass that do not change the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Multiplier applied to the global connection weights.
    pub global_scale: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { global_scale: 1.0 }
    }
}

fn conv<T: Scalar>(tape: &mut Tape<T>, x: Var, c: &Conv<Var>, stride: usize) -> Result<Var, ModelError> {
    Ok(tape.conv2d(x, c.weight, Some(c.bias), stride, 1)?)
}

fn conv_relu<T: Scalar>(tape: &mut Tape<T>, x: Var, c: &Conv<Var>, stride: usize) -> Result<Var, ModelError> {
    let h = conv(tape, x, c, stride)?;
    let r = tape.relu(h)?;
    tape.release(h);
    Ok(r)
}

/// `x + alpha ⊙ residual`; `alpha = None` is the plain residual.
fn controllable_add<T: Scalar>(tape: &mut Tape<T>, x: Var, residual: Var, alpha: Option<Var>) -> Result<Var, ModelError> {
    let y = match alpha {
        Some(a) => {
            let scaled = tape.scale_channels(residual, a)?;
            let y = tape.add(x, scaled)?;
            tape.release(scaled);
            y
        }
        None => tape.add(x, residual)?,
    };
    tape.release(residual);
    Ok(y)
}

/// Runs the two-branch network on a `[C_img, H, W]` input.
///
/// The condition network maps `z` to one channel-weight vector per local
/// connection and one per-image-channel vector for the global connection. Blocks
/// within a group chain with plain residual links when a group holds more than one
/// block; the group's controllable connection skips the whole group. The output is
/// not clamped.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    arch: &ArchConfig,
    w: &Weights<Var>,
    x: Var,
    z: Option<Var>,
    opts: ForwardOptions,
) -> Result<Var, ModelError> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[0] != arch.image_channels {
        return Err(ModelError::InputShape(shape));
    }
    let (h, wd) = (shape[1], shape[2]);
    if h < MIN_SIZE || wd < MIN_SIZE {
        return Err(ModelError::TooSmall { height: h, width: wd });
    }
    if h % 2 != 0 || wd % 2 != 0 {
        return Err(ModelError::OddSize { height: h, width: wd });
    }
    let alphas = match (&w.condition, z) {
        (Some(cn), Some(z)) => {
            let n = tape.shape(z);
            if n != [arch.condition_dim] {
                return Err(ModelError::ConditionDim {
                    expected: arch.condition_dim,
                    found: n.iter().product(),
                });
            }
            let local = cn
                .local
                .iter()
                .map(|&m| tape.linear_nobias(z, m))
                .collect::<Result<Vec<_>, _>>()?;
            let mut global = tape.linear_nobias(z, cn.global)?;
            if opts.global_scale != 1.0 {
                global = tape.mul_scalar(global, T::from_f64(opts.global_scale))?;
            }
            Some((local, global))
        }
        (Some(_), None) => return Err(ModelError::MissingCondition),
        (None, _) => None,
    };

    let b = &w.base;
    let head = conv(tape, x, &b.conv_in, 1)?;
    let mut feat = conv_relu(tape, head, &b.conv_down, 2)?;
    tape.release(head);

    let per_group = arch.blocks_per_group();
    for (g, group) in b.blocks.chunks(per_group).enumerate() {
        let group_in = feat;
        let mut body = feat;
        for blk in group {
            let r = conv_relu(tape, body, &blk.conv1, 1)?;
            let out = conv(tape, r, &blk.conv2, 1)?;
            tape.release(r);
            body = if per_group == 1 {
                out
            } else {
                let next = tape.add(body, out)?;
                tape.release(out);
                if body != group_in {
                    tape.release(body);
                }
                next
            };
        }
        let alpha = alphas.as_ref().map(|(local, _)| local[g]);
        feat = controllable_add(tape, group_in, body, alpha)?;
        tape.release(group_in);
    }

    let up = conv_relu(tape, feat, &b.conv_up, 1)?;
    tape.release(feat);
    let shuffled = tape.pixel_shuffle(up, 2)?;
    tape.release(up);
    let post = conv_relu(tape, shuffled, &b.conv_post, 1)?;
    tape.release(shuffled);
    let residual = conv(tape, post, &b.conv_out, 1)?;
    tape.release(post);
    controllable_add(tape, x, residual, alphas.map(|(_, g)| g))
}

/// Per-connection weights produced by the condition network.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphas<T> {
    pub global: Vec<T>,
    pub local: Vec<Vec<T>>,
}
