//! Degradation sampling and training-batch synthesis.

mod batch;
mod beta;

pub use batch::{augment, make_batch, replay_element, TrainBatch};
pub use beta::{beta_pdf, beta_sample, BetaParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{DegradationSpace, DegradationSpec, ImageError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("beta shape parameters must be positive and finite, got a={a} b={b}")]
    InvalidShape { a: f64, b: f64 },
    #[error("beta density is defined on (0, 1), got z={0}")]
    OutsideSupport(f64),
    #[error("sample plan has {found} beta parameter sets for a {expected}-dimensional space")]
    PlanDimension { expected: usize, found: usize },
    #[error("single-degradation ratio {0} outside [0, 1]")]
    MixRatio(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("image {index} is {height}x{width}, smaller than crop {crop}")]
    TooSmall {
        index: usize,
        height: usize,
        width: usize,
        crop: usize,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// How degradation levels are drawn for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// One Beta distribution per space dimension, drawn in condition space.
    pub beta: Vec<BetaParams>,
    /// Probability that a sample carries a single degradation type.
    #[serde(default = "default_single_ratio")]
    pub single_ratio: f64,
    /// When set, every sample uses exactly this spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<DegradationSpec>,
}

fn default_single_ratio() -> f64 {
    0.5
}

impl SamplePlan {
    pub fn new(dims: usize, params: BetaParams) -> Self {
        Self {
            beta: vec![params; dims],
            single_ratio: default_single_ratio(),
            fixed: None,
        }
    }

    pub fn fixed(dims: usize, spec: DegradationSpec) -> Self {
        Self {
            fixed: Some(spec),
            ..Self::new(dims, BetaParams::mild())
        }
    }

    pub fn validate(&self, space: &DegradationSpace) -> Result<(), SamplerError> {
        if self.beta.len() != space.len() {
            return Err(SamplerError::PlanDimension {
                expected: space.len(),
                found: self.beta.len(),
            });
        }
        for p in &self.beta {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.single_ratio) {
            return Err(SamplerError::MixRatio(self.single_ratio));
        }
        if let Some(spec) = &self.fixed {
            space.check(spec)?;
        }
        Ok(())
    }
}

/// Builds a spec from per-dimension condition draws; inactive axes stay at zero/none.
pub fn compose_spec(space: &DegradationSpace, active: &[bool], draws: &[f64]) -> DegradationSpec {
    let mut spec = DegradationSpec::default();
    for ((dim, &on), &z) in space.dims.iter().zip(active).zip(draws) {
        if on {
            dim.snap(z, &mut spec);
        }
    }
    spec
}

/// Draws one training degradation.
///
/// With probability `single_ratio` exactly one uniformly chosen axis is active,
/// otherwise all axes are. Each active axis draws its condition from its Beta
/// distribution and snaps to the nearest stride-grid level.
pub fn sample_spec(plan: &SamplePlan, space: &DegradationSpace, rng: &mut Rng) -> DegradationSpec {
    if let Some(spec) = plan.fixed {
        return spec;
    }
    let n = space.len();
    let active: Vec<bool> = if rng.uniform() < plan.single_ratio {
        let k = rng.below(n);
        (0..n).map(|i| i == k).collect()
    } else {
        vec![true; n]
    };
    let draws: Vec<f64> = active
        .iter()
        .zip(&plan.beta)
        .map(|(&on, &p)| if on { beta_sample(rng, p) } else { 0.0 })
        .collect();
    compose_spec(space, &active, &draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{DimKind, Dimension};

    #[test]
    fn single_mode_snapping() {
        let space = DegradationSpace::full_2d();
        let spec = compose_spec(&space, &[true, false], &[0.5125, 0.9]);
        assert_eq!(spec, DegradationSpec::new(2.1, 0.0, None));
    }

    #[test]
    fn tiny_draws_give_zero_spec() {
        let space = DegradationSpace::full_3d();
        // half a stride: blur 0.05/4, noise 0.5/50, jpeg 0.05
        let spec = compose_spec(&space, &[true; 3], &[0.012, 0.0099, 0.049]);
        assert!(spec.is_clean(), "{spec:?}");
    }

    #[test]
    fn single_mode_has_one_active_axis() {
        let space = DegradationSpace::full_3d();
        let plan = SamplePlan {
            single_ratio: 1.0,
            ..SamplePlan::new(3, BetaParams { a: 1.0, b: 1.0 })
        };
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let s = sample_spec(&plan, &space, &mut rng);
            let active = [s.blur != 0.0, s.noise != 0.0, s.jpeg.is_some()];
            assert!(active.iter().filter(|&&a| a).count() <= 1);
        }
    }

    #[test]
    fn levels_on_grid_and_in_range() {
        let space = DegradationSpace::full_3d();
        let plan = SamplePlan::new(3, BetaParams::mild());
        let mut rng = Rng::new(8);
        for _ in 0..2000 {
            let s = sample_spec(&plan, &space, &mut rng);
            space.check(&s).unwrap();
            for d in &space.dims {
                if let Dimension::Blur { stride, .. } | Dimension::Noise { stride, .. } = *d {
                    let level = if d.kind() == DimKind::Blur { s.blur } else { s.noise };
                    let k = (level / stride).round();
                    assert_eq!(level, k * stride);
                }
            }
            if let Some(q) = s.jpeg {
                assert_eq!(q % 2, 0);
            }
        }
    }

    #[test]
    fn plan_validation() {
        let space = DegradationSpace::full_2d();
        assert!(SamplePlan::new(2, BetaParams::mild()).validate(&space).is_ok());
        assert!(SamplePlan::new(3, BetaParams::mild()).validate(&space).is_err());
        let bad_ratio = SamplePlan {
            single_ratio: 1.5,
            ..SamplePlan::new(2, BetaParams::mild())
        };
        assert!(bad_ratio.validate(&space).is_err());
        assert!(SamplePlan::fixed(2, DegradationSpec::new(9.0, 0.0, None)).validate(&space).is_err());
    }

    #[test]
    fn fixed_plan_is_constant() {
        let space = DegradationSpace::full_2d();
        let spec = DegradationSpec::new(1.0, 10.0, None);
        let plan = SamplePlan::fixed(2, spec);
        let mut rng = Rng::new(0);
        assert!((0..10).all(|_| sample_spec(&plan, &space, &mut rng) == spec));
    }
}
