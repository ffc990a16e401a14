use serde::{Deserialize, Serialize};

use crate::rng::Rng;

use super::{add_noise, apply_blur, jpeg_roundtrip, Image, ImageError, MAX_QUALITY, MIN_QUALITY};

/// One concrete degradation: blur width (std-dev, pixels), noise std-dev on the
/// 0..255 scale, and JPEG quality (`None` = uncompressed).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(default)]
    pub blur: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub jpeg: Option<u8>,
}

impl DegradationSpec {
    pub fn new(blur: f64, noise: f64, jpeg: Option<u8>) -> Self {
        Self { blur, noise, jpeg }
    }

    pub fn is_clean(&self) -> bool {
        self.blur == 0.0 && self.noise == 0.0 && self.jpeg.is_none()
    }
}

impl std::fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "blur={} noise={} jpeg=", self.blur, self.noise)?;
        match self.jpeg {
            Some(q) => write!(f, "{q}"),
            None => write!(f, "none"),
        }
    }
}

/// Blur, then noise, then JPEG, in that fixed order.
pub fn degrade(img: &Image, spec: &DegradationSpec, rng: &mut Rng) -> Result<Image, ImageError> {
    let blurred = apply_blur(img, spec.blur)?;
    let noisy = add_noise(&blurred, spec.noise, rng)?;
    jpeg_roundtrip(&noisy, spec.jpeg)
}

/// Checks `spec` against the full level ranges (blur [0, 4], noise [0, 50],
/// JPEG [10, 100] or none) and degrades with a fresh generator seeded by `seed`.
pub fn degrade_seeded(img: &Image, spec: &DegradationSpec, seed: u64) -> Result<Image, ImageError> {
    DegradationSpace::full_3d().check(spec)?;
    degrade(img, spec, &mut Rng::new(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Blur,
    Noise,
    Jpeg,
}

impl DimKind {
    pub fn name(self) -> &'static str {
        match self {
            DimKind::Blur => "blur",
            DimKind::Noise => "noise",
            DimKind::Jpeg => "jpeg",
        }
    }
}

/// One axis of the modulation space.
///
/// Blur and noise map level `l` to condition `l / max`. JPEG reserves condition 0 for
/// "no compression" and maps quality `q` to `(110 - q) / 100`, so `q = 100 -> 0.1`
/// and `q = 10 -> 1.0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dimension {
    Blur { max: f64, stride: f64 },
    Noise { max: f64, stride: f64 },
    Jpeg { stride: u8 },
}

impl Dimension {
    pub fn kind(&self) -> DimKind {
        match self {
            Dimension::Blur { .. } => DimKind::Blur,
            Dimension::Noise { .. } => DimKind::Noise,
            Dimension::Jpeg { .. } => DimKind::Jpeg,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Level range; for JPEG this is the quality range, with "none" outside it.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Dimension::Blur { max, .. } | Dimension::Noise { max, .. } => (0.0, max),
            Dimension::Jpeg { .. } => (MIN_QUALITY as f64, MAX_QUALITY as f64),
        }
    }

    pub fn stride(&self) -> f64 {
        match *self {
            Dimension::Blur { stride, .. } | Dimension::Noise { stride, .. } => stride,
            Dimension::Jpeg { stride } => stride as f64,
        }
    }

    fn validate(&self) -> Result<(), ImageError> {
        match *self {
            Dimension::Blur { max, stride } | Dimension::Noise { max, stride } => {
                if !(max > 0.0 && max.is_finite() && stride > 0.0 && stride <= max) {
                    return Err(ImageError::InvalidSpace(format!(
                        "{}: need 0 < stride <= max, got max={max} stride={stride}",
                        self.name()
                    )));
                }
                let steps = max / stride;
                if (steps - steps.round()).abs() > 1e-9 {
                    return Err(ImageError::InvalidSpace(format!(
                        "{}: stride {stride} does not divide max {max}",
                        self.name()
                    )));
                }
            }
            Dimension::Jpeg { stride } => {
                let span = MAX_QUALITY - MIN_QUALITY;
                if stride == 0 || span % stride != 0 {
                    return Err(ImageError::InvalidSpace(format!("jpeg: stride {stride} does not divide {span}")));
                }
            }
        }
        Ok(())
    }

    fn check_level(&self, spec: &DegradationSpec) -> Result<(), ImageError> {
        let (what, value, max) = match *self {
            Dimension::Blur { max, .. } => ("blur", spec.blur, max),
            Dimension::Noise { max, .. } => ("noise", spec.noise, max),
            Dimension::Jpeg { .. } => match spec.jpeg {
                None => return Ok(()),
                Some(q) if (MIN_QUALITY..=MAX_QUALITY).contains(&q) => return Ok(()),
                Some(q) => {
                    return Err(ImageError::OutOfRange {
                        what: "jpeg quality",
                        value: q as f64,
                        range: format!("[{MIN_QUALITY}, {MAX_QUALITY}] or none"),
                    })
                }
            },
        };
        if !(0.0..=max).contains(&value) {
            return Err(ImageError::OutOfRange {
                what,
                value,
                range: format!("[0, {max}]"),
            });
        }
        Ok(())
    }

    /// Condition value of this axis for `spec`, assuming the level is in range.
    pub fn condition(&self, spec: &DegradationSpec) -> f64 {
        match *self {
            Dimension::Blur { max, .. } => spec.blur / max,
            Dimension::Noise { max, .. } => spec.noise / max,
            Dimension::Jpeg { .. } => match spec.jpeg {
                None => 0.0,
                Some(q) => (110.0 - q as f64) / 100.0,
            },
        }
    }

    /// Physical level for condition `c` without grid snapping. JPEG rounds to the
    /// nearest integer quality; `c <= 0` is "none".
    pub fn level_for(&self, c: f64, spec: &mut DegradationSpec) {
        match *self {
            Dimension::Blur { max, .. } => spec.blur = c * max,
            Dimension::Noise { max, .. } => spec.noise = c * max,
            Dimension::Jpeg { .. } => {
                spec.jpeg = if c <= 0.0 {
                    None
                } else {
                    Some((110.0 - 100.0 * c).round().clamp(MIN_QUALITY as f64, MAX_QUALITY as f64) as u8)
                }
            }
        }
    }

    /// Sets this axis of `spec` to the stride-grid level nearest to condition `c`.
    ///
    /// Blur/noise grids are `{0, stride, ..., max}`. The JPEG grid in condition space
    /// is `{0} ∪ {(110 - q)/100 : q = 10, 10 + stride, ..., 100}`; conditions closer to
    /// 0 than to 0.1 snap to "none".
    pub fn snap(&self, c: f64, spec: &mut DegradationSpec) {
        let c = c.clamp(0.0, 1.0);
        match *self {
            Dimension::Blur { max, stride } | Dimension::Noise { max, stride } => {
                let steps = (max / stride).round();
                let level = (c * steps).round() * stride;
                if self.kind() == DimKind::Blur {
                    spec.blur = level;
                } else {
                    spec.noise = level;
                }
            }
            Dimension::Jpeg { stride } => {
                let first = (110.0 - MAX_QUALITY as f64) / 100.0;
                if c < first / 2.0 {
                    spec.jpeg = None;
                    return;
                }
                let q = 110.0 - 100.0 * c;
                let k = ((q - MIN_QUALITY as f64) / stride as f64).round();
                let q = (MIN_QUALITY as f64 + k * stride as f64).clamp(MIN_QUALITY as f64, MAX_QUALITY as f64);
                spec.jpeg = Some(q as u8);
            }
        }
    }

    /// Levels of the sampling grid as specs with only this axis set, starting at zero/none.
    pub fn grid(&self) -> Vec<DegradationSpec> {
        match *self {
            Dimension::Blur { max, stride } | Dimension::Noise { max, stride } => {
                let steps = (max / stride).round() as usize;
                (0..=steps)
                    .map(|i| {
                        let mut s = DegradationSpec::default();
                        self.snap(i as f64 / steps as f64, &mut s);
                        s
                    })
                    .collect()
            }
            Dimension::Jpeg { stride } => std::iter::once(None)
                .chain((MIN_QUALITY..=MAX_QUALITY).rev().step_by(stride as usize).map(Some))
                .map(|jpeg| DegradationSpec {
                    jpeg,
                    ..Default::default()
                })
                .collect(),
        }
    }
}

/// Ordered list of modulation axes; its length is the condition dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpace {
    pub dims: Vec<Dimension>,
}

impl DegradationSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, ImageError> {
        let space = Self { dims };
        space.validate()?;
        Ok(space)
    }

    /// Blur `[0, 4]` stride 0.1, noise `[0, 50]` stride 1.
    pub fn full_2d() -> Self {
        Self {
            dims: vec![
                Dimension::Blur { max: 4.0, stride: 0.1 },
                Dimension::Noise { max: 50.0, stride: 1.0 },
            ],
        }
    }

    /// [`full_2d`](Self::full_2d) plus JPEG quality `[10, 100]` stride 2.
    pub fn full_3d() -> Self {
        let mut s = Self::full_2d();
        s.dims.push(Dimension::Jpeg { stride: 2 });
        s
    }

    /// Blur `[0, 2]`, noise `[0, 25]`.
    pub fn desk_2d() -> Self {
        Self {
            dims: vec![
                Dimension::Blur { max: 2.0, stride: 0.1 },
                Dimension::Noise { max: 25.0, stride: 1.0 },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if self.dims.is_empty() {
            return Err(ImageError::InvalidSpace("no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if self.dims[..i].iter().any(|o| o.kind() == d.kind()) {
                return Err(ImageError::InvalidSpace(format!("duplicate dimension {}", d.name())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn position(&self, kind: DimKind) -> Option<usize> {
        self.dims.iter().position(|d| d.kind() == kind)
    }

    /// Errors unless every level of `spec` lies inside the space. Axes the space does
    /// not model must be at zero/none.
    pub fn check(&self, spec: &DegradationSpec) -> Result<(), ImageError> {
        for d in &self.dims {
            d.check_level(spec)?;
        }
        let unmodelled = |kind: DimKind, active: bool, value: f64| {
            if active && self.position(kind).is_none() {
                Err(ImageError::OutOfRange {
                    what: kind.name(),
                    value,
                    range: "0 (dimension not in space)".into(),
                })
            } else {
                Ok(())
            }
        };
        unmodelled(DimKind::Blur, spec.blur != 0.0, spec.blur)?;
        unmodelled(DimKind::Noise, spec.noise != 0.0, spec.noise)?;
        unmodelled(DimKind::Jpeg, spec.jpeg.is_some(), spec.jpeg.map_or(0.0, |q| q as f64))
    }

    /// Condition vector `z` in `[0, 1]^N`.
    pub fn encode(&self, spec: &DegradationSpec) -> Result<Vec<f64>, ImageError> {
        self.check(spec)?;
        Ok(self.dims.iter().map(|d| d.condition(spec)).collect())
    }

    /// Continuous inverse of [`encode`](Self::encode).
    pub fn decode(&self, z: &[f64]) -> DegradationSpec {
        let mut spec = DegradationSpec::default();
        for (d, &c) in self.dims.iter().zip(z) {
            d.level_for(c, &mut spec);
        }
        spec
    }
}
