use rayon::prelude::*;

use crate::imaging::{degrade, DegradationSpace, DegradationSpec, Image};
use crate::rng::{derive_seed, Rng};

use super::{sample_spec, SamplePlan, SamplerError};

/// Degraded/clean patch pairs with their condition vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub degraded: Vec<Image>,
    pub clean: Vec<Image>,
    pub conditions: Vec<Vec<f64>>,
    pub specs: Vec<DegradationSpec>,
    /// Per-element seed; re-running an element from its seed reproduces it exactly.
    pub seeds: Vec<u64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

/// Horizontal flip (optional) followed by `quarter_turns` counter-clockwise rotations.
pub fn augment(img: &Image, flip: bool, quarter_turns: usize) -> Image {
    let flipped = if flip { img.flip_horizontal() } else { img.clone() };
    flipped.rot90(quarter_turns)
}

struct Element {
    degraded: Image,
    clean: Image,
    condition: Vec<f64>,
    spec: DegradationSpec,
}

/// Synthesizes one element from its own seed: source image, crop position, flip,
/// rotation, degradation spec and noise all come from `Rng::new(seed)` in that order.
fn make_element(
    dataset: &[Image],
    plan: &SamplePlan,
    space: &DegradationSpace,
    crop: usize,
    seed: u64,
) -> Result<Element, SamplerError> {
    let mut rng = Rng::new(seed);
    let src = &dataset[rng.below(dataset.len())];
    let top = rng.below(src.height() - crop + 1);
    let left = rng.below(src.width() - crop + 1);
    let flip = rng.coin();
    let turns = rng.below(4);
    let clean = augment(&src.crop(top, left, crop, crop)?, flip, turns);
    let spec = sample_spec(plan, space, &mut rng);
    let degraded = degrade(&clean, &spec, &mut rng)?;
    let condition = space.encode(&spec)?;
    Ok(Element {
        degraded,
        clean,
        condition,
        spec,
    })
}

/// Builds `batch` training pairs; element `i` is seeded with `derive_seed(seed, i)`.
pub fn make_batch(
    dataset: &[Image],
    plan: &SamplePlan,
    space: &DegradationSpace,
    crop: usize,
    batch: usize,
    seed: u64,
) -> Result<TrainBatch, SamplerError> {
    if dataset.is_empty() {
        return Err(SamplerError::EmptyDataset);
    }
    if let Some((index, img)) = dataset
        .iter()
        .enumerate()
        .find(|(_, img)| img.height() < crop || img.width() < crop)
    {
        return Err(SamplerError::TooSmall {
            index,
            height: img.height(),
            width: img.width(),
            crop,
        });
    }
    plan.validate(space)?;
    let seeds: Vec<u64> = (0..batch as u64).map(|i| derive_seed(seed, i)).collect();
    let elements = seeds
        .par_iter()
        .map(|&s| make_element(dataset, plan, space, crop, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = TrainBatch {
        degraded: Vec::with_capacity(batch),
        clean: Vec::with_capacity(batch),
        conditions: Vec::with_capacity(batch),
        specs: Vec::with_capacity(batch),
        seeds,
    };
    for e in elements {
        out.degraded.push(e.degraded);
        out.clean.push(e.clean);
        out.conditions.push(e.condition);
        out.specs.push(e.spec);
    }
    Ok(out)
}

/// Re-synthesizes a single element from its logged seed.
pub fn replay_element(
    dataset: &[Image],
    plan: &SamplePlan,
    space: &DegradationSpace,
    crop: usize,
    seed: u64,
) -> Result<(Image, Image, DegradationSpec), SamplerError> {
    let e = make_element(dataset, plan, space, crop, seed)?;
    Ok((e.degraded, e.clean, e.spec))
}
