use super::{Image, ImageError};

/// Side length of the blur kernel support.
pub const KERNEL_SIZE: usize = 21;
const RADIUS: usize = KERNEL_SIZE / 2;

/// Widths below this are treated as the discrete delta.
const DELTA_WIDTH: f64 = 1e-6;

/// Normalized isotropic Gaussian on a fixed 21x21 integer grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    width: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// `width` is the standard deviation in pixels.
    pub fn new(width: f64) -> Result<Self, ImageError> {
        if !(width >= 0.0) || !width.is_finite() {
            return Err(ImageError::OutOfRange {
                what: "blur width",
                value: width,
                range: "[0, inf)".into(),
            });
        }
        let weights = if width < DELTA_WIDTH {
            let mut w = vec![0.0; KERNEL_SIZE * KERNEL_SIZE];
            w[RADIUS * KERNEL_SIZE + RADIUS] = 1.0;
            w
        } else {
            let mut w: Vec<f64> = (0..KERNEL_SIZE * KERNEL_SIZE)
                .map(|i| {
                    let dy = (i / KERNEL_SIZE) as f64 - RADIUS as f64;
                    let dx = (i % KERNEL_SIZE) as f64 - RADIUS as f64;
                    (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
                })
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            w
        };
        Ok(Self { width, weights })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn is_delta(&self) -> bool {
        self.width < DELTA_WIDTH
    }

    /// Row-major 21x21 weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = RADIUS as isize;
        self.weights[((dy + r) * KERNEL_SIZE as isize + dx + r) as usize]
    }

    /// The 1-D factor whose outer product with itself is this kernel.
    fn factor(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..KERNEL_SIZE)
            .map(|i| {
                let d = i as f64 - RADIUS as f64;
                (-(d * d) / (2.0 * self.width * self.width)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

pub fn gaussian_kernel(width: f64) -> Result<GaussianKernel, ImageError> {
    GaussianKernel::new(width)
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Per-channel Gaussian blur with reflect padding. Width 0 returns the input unchanged.
pub fn apply_blur(img: &Image, width: f64) -> Result<Image, ImageError> {
    let kernel = GaussianKernel::new(width)?;
    if kernel.is_delta() {
        return Ok(img.clone());
    }
    let taps = kernel.factor();
    let (c, h, w) = img.dims();
    let mut out = img.clone();
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let src = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let xi = reflect(x as isize + k as isize - RADIUS as isize, w);
                    acc += t * src[y * w + xi] as f64;
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let yi = reflect(y as isize + k as isize - RADIUS as isize, h);
                    acc += t * tmp[yi * w + x];
                }
                dst[y * w + x] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_width_is_delta() {
        let k = gaussian_kernel(0.0).unwrap();
        assert_eq!(k.at(0, 0), 1.0);
        assert_eq!(k.weights().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(gaussian_kernel(5e-7).unwrap().is_delta());
    }

    #[test]
    fn negative_width_rejected() {
        assert!(gaussian_kernel(-0.1).is_err());
        assert!(gaussian_kernel(f64::NAN).is_err());
    }

    #[test]
    fn normalized_and_symmetric() {
        for &r in &[0.1, 0.5, 1.0, 2.0, 3.3, 4.0] {
            let k = gaussian_kernel(r).unwrap();
            let total: f64 = k.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "r={r} sum={total}");
            let rr = RADIUS as isize;
            for dy in -rr..=rr {
                for dx in -rr..=rr {
                    let v = k.at(dy, dx);
                    assert_eq!(v, k.at(-dy, dx));
                    assert_eq!(v, k.at(dy, -dx));
                    assert_eq!(v, k.at(dx, dy));
                }
            }
            // radially non-increasing along rows and columns away from the center
            for d in 0..rr {
                assert!(k.at(0, d) >= k.at(0, d + 1));
                assert!(k.at(d, d) >= k.at(d + 1, d + 1));
            }
        }
    }

    #[test]
    fn center_to_neighbor_ratio() {
        let k = gaussian_kernel(1.0).unwrap();
        let ratio = k.at(0, 0) / k.at(0, 1);
        assert!((ratio - (0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-12, 3), 0);
        assert_eq!(reflect(4, 1), 0);
    }

    #[test]
    fn identity_and_constant() {
        let img = Image::from_fn(3, 9, 7, |c, y, x| ((c * 31 + y * 7 + x) % 13) as f32 / 12.0);
        assert_eq!(apply_blur(&img, 0.0).unwrap(), img);
        let flat = Image::filled(3, 12, 5, 0.3);
        let out = apply_blur(&flat, 2.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }
}
