use super::{Image, ImageError};

pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(total / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for images on the `[0, 1]` scale.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}
