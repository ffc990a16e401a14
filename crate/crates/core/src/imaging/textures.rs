//! Procedural test images: smooth multi-octave colour fields overlaid with
//! hard-edged shapes and striped patches, so blur, noise and blocking all have
//! something to destroy.

use std::f64::consts::PI;

use crate::rng::Rng;

use super::Image;

struct ValueNoise {
    cell: usize,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, width: usize, height: usize, cell: usize) -> Self {
        let cols = width / cell + 2;
        let rows = height / cell + 2;
        Self {
            cell,
            cols,
            lattice: (0..cols * rows).map(|_| rng.uniform()).collect(),
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (gy, gx) = (y / self.cell, x / self.cell);
        let ty = smooth((y % self.cell) as f64 / self.cell as f64);
        let tx = smooth((x % self.cell) as f64 / self.cell as f64);
        let v = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = v(gy, gx) * (1.0 - tx) + v(gy, gx + 1) * tx;
        let bottom = v(gy + 1, gx) * (1.0 - tx) + v(gy + 1, gx + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Stripes { cy: f64, cx: f64, r: f64, freq: f64, angle: f64 },
}

impl Shape {
    fn coverage(&self, y: f64, x: f64) -> Option<f64> {
        match *self {
            Shape::Disk { cy, cx, r } => ((y - cy).powi(2) + (x - cx).powi(2) <= r * r).then_some(1.0),
            Shape::Rect { y0, x0, y1, x1 } => (y >= y0 && y < y1 && x >= x0 && x < x1).then_some(1.0),
            Shape::Stripes {
                cy,
                cx,
                r,
                freq,
                angle,
            } => {
                if (y - cy).abs() > r || (x - cx).abs() > r {
                    return None;
                }
                let t = (x * angle.cos() + y * angle.sin()) * freq * 2.0 * PI;
                Some(if t.sin() >= 0.0 { 1.0 } else { 0.0 })
            }
        }
    }
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

/// Deterministic RGB texture of the given size.
pub fn texture(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = Rng::new(seed);
    let octaves: Vec<(ValueNoise, f64)> = [32usize, 16, 8, 4]
        .iter()
        .zip([0.5, 0.25, 0.15, 0.1])
        .map(|(&cell, amp)| (ValueNoise::new(&mut rng, width, height, cell), amp))
        .collect();
    let palette = [random_color(&mut rng), random_color(&mut rng)];

    let n_shapes = 8 + rng.below(10);
    let dim = height.min(width) as f64;
    let shapes: Vec<(Shape, [f64; 3], f64)> = (0..n_shapes)
        .map(|_| {
            let cy = rng.uniform() * height as f64;
            let cx = rng.uniform() * width as f64;
            let size = dim * (0.05 + 0.2 * rng.uniform());
            let shape = match rng.below(3) {
                0 => Shape::Disk { cy, cx, r: size },
                1 => Shape::Rect {
                    y0: cy,
                    x0: cx,
                    y1: cy + size * (0.5 + rng.uniform()),
                    x1: cx + size * (0.5 + rng.uniform()),
                },
                _ => Shape::Stripes {
                    cy,
                    cx,
                    r: size,
                    freq: 0.05 + 0.2 * rng.uniform(),
                    angle: rng.uniform() * PI,
                },
            };
            let opacity = 0.5 + 0.5 * rng.uniform();
            (shape, random_color(&mut rng), opacity)
        })
        .collect();

    let mut img = Image::filled(3, height, width, 0.0);
    let plane = height * width;
    let data = img.data_mut();
    for y in 0..height {
        for x in 0..width {
            let t: f64 = octaves.iter().map(|(n, a)| n.at(y, x) * a).sum::<f64>().clamp(0.0, 1.0);
            let mut px: [f64; 3] = std::array::from_fn(|c| palette[0][c] * (1.0 - t) + palette[1][c] * t);
            for (shape, color, opacity) in &shapes {
                if let Some(cov) = shape.coverage(y as f64, x as f64) {
                    let a = cov * opacity;
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
            for (c, v) in px.iter().enumerate() {
                data[c * plane + y * width + x] = *v as f32;
            }
        }
    }
    img.quantized()
}

/// `count` textures; image `i` uses seed `derive_seed(seed, i)`.
pub fn texture_set(seed: u64, count: usize, height: usize, width: usize) -> Vec<Image> {
    (0..count)
        .map(|i| texture(crate::rng::derive_seed(seed, i as u64), height, width))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = texture(1, 64, 80);
        assert_eq!(a, texture(1, 64, 80));
        assert_ne!(a, texture(2, 64, 80));
        assert_eq!(a.dims(), (3, 64, 80));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn has_structure() {
        let img = texture(5, 128, 128);
        let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64;
        let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / img.data().len() as f64;
        assert!(var > 1e-3, "variance {var}");
    }
}
