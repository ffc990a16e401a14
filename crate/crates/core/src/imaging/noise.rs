use crate::rng::Rng;

use super::{Image, ImageError};

/// Adds i.i.d. Gaussian noise with standard deviation `sigma / 255`, then clamps.
///
/// Samples are drawn in planar order (channel, row, column). `sigma == 0` returns
/// the input unchanged without touching `rng`.
pub fn add_noise(img: &Image, sigma: f64, rng: &mut Rng) -> Result<Image, ImageError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ImageError::OutOfRange {
            what: "noise sigma",
            value: sigma,
            range: "[0, inf)".into(),
        });
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let std = sigma / 255.0;
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = ((*v as f64 + std * rng.normal()) as f32).clamp(0.0, 1.0);
    }
    Ok(out)
}
