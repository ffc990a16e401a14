//! Baseline-JPEG lossiness without the bitstream.
//!
//! The only lossy stage of baseline JPEG is coefficient quantization; entropy coding
//! is lossless. The roundtrip therefore runs colour conversion (BT.601 full range,
//! 4:4:4), per-block level shift and 8x8 DCT-II, quantize/dequantize against the
//! quality-scaled Annex K tables, inverse DCT and clamp.

use std::sync::OnceLock;

use super::{Image, ImageError};

pub const MIN_QUALITY: u8 = 10;
pub const MAX_QUALITY: u8 = 100;

/// ITU T.81 Annex K.1 luminance table, row-major.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// ITU T.81 Annex K.1 chrominance table, row-major.
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTables {
    pub luma: [u16; 64],
    pub chroma: [u16; 64],
}

fn check_quality(q: u8) -> Result<(), ImageError> {
    if (MIN_QUALITY..=MAX_QUALITY).contains(&q) {
        Ok(())
    } else {
        Err(ImageError::OutOfRange {
            what: "jpeg quality",
            value: q as f64,
            range: format!("[{MIN_QUALITY}, {MAX_QUALITY}]"),
        })
    }
}

/// IJG quality scaling of the Annex K tables.
pub fn quant_tables(q: u8) -> Result<QuantTables, ImageError> {
    check_quality(q)?;
    let q = q as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let scaled = |base: &[u16; 64]| {
        let mut t = [0u16; 64];
        for (dst, &b) in t.iter_mut().zip(base) {
            *dst = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        t
    };
    Ok(QuantTables {
        luma: scaled(&LUMA_BASE),
        chroma: scaled(&CHROMA_BASE),
    })
}

/// Orthonormal 8-point DCT-II basis, `basis[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    // rows: tmp[y][u] = sum_x m[u][x] block[y][x]
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| m[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| m[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| m[v][y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| m[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Quantize/dequantize every 8x8 block of a 0..255 plane in place.
fn roundtrip_plane(plane: &mut [f64], h: usize, w: usize, table: &[u16; 64]) {
    let src = plane.to_vec();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let sy = (by + y).min(h - 1);
                    let sx = (bx + x).min(w - 1);
                    block[y * 8 + x] = src[sy * w + sx] - 128.0;
                }
            }
            let mut coef = dct2(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = q as f64;
                *c = (*c / q).round() * q;
            }
            let rec = idct2(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    plane[(by + y) * w + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// JPEG-style compression roundtrip at quality `q`; `None` means no compression.
pub fn jpeg_roundtrip(img: &Image, q: Option<u8>) -> Result<Image, ImageError> {
    let Some(q) = q else {
        return Ok(img.clone());
    };
    let tables = quant_tables(q)?;
    let (c, h, w) = img.dims();
    let n = h * w;
    let mut out = img.clone();
    if c == 1 {
        let mut y: Vec<f64> = img.plane(0).iter().map(|&v| v as f64 * 255.0).collect();
        roundtrip_plane(&mut y, h, w, &tables.luma);
        for (d, v) in out.plane_mut(0).iter_mut().zip(y) {
            *d = ((v / 255.0) as f32).clamp(0.0, 1.0);
        }
        return Ok(out);
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut yy = vec![0.0; n];
    let mut cb = vec![0.0; n];
    let mut cr = vec![0.0; n];
    for i in 0..n {
        let (r, g, b) = (r[i] as f64 * 255.0, g[i] as f64 * 255.0, b[i] as f64 * 255.0);
        yy[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    roundtrip_plane(&mut yy, h, w, &tables.luma);
    roundtrip_plane(&mut cb, h, w, &tables.chroma);
    roundtrip_plane(&mut cr, h, w, &tables.chroma);
    let data = out.data_mut();
    for i in 0..n {
        let (y, cb, cr) = (yy[i], cb[i] - 128.0, cr[i] - 128.0);
        let rgb = [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb];
        for (ch, v) in rgb.into_iter().enumerate() {
            data[ch * n + i] = ((v / 255.0) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
