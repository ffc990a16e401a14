//! Raw slice kernels behind the tape ops.

use super::gemm::{gemm, MatMut, MatRef};
use super::Scalar;

/// Upper bound on im2col scratch elements per chunk.
const COLS_BUDGET: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out,
            w_out,
        }
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.patch() * self.w_out)).clamp(1, self.h_out)
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies inside the image.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(s)
        };
        // ox*s + kx - pad <= w - 1
        let hi = if self.w + self.pad < kx + 1 {
            0
        } else {
            ((self.w + self.pad - kx - 1) / s + 1).min(self.w_out)
        };
        (lo.min(hi), hi)
    }
}

/// Fill `cols` ([patch, (oy1-oy0)*w_out]) with the receptive fields of output rows `oy0..oy1`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, oy0: usize, oy1: usize, cols: &mut [T]) {
    let p = (oy1 - oy0) * g.w_out;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_ox(kx);
                for (r, oy) in (oy0..oy1).enumerate() {
                    let seg = &mut dst[r * g.w_out..(r + 1) * g.w_out];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    let ix0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        seg[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                            *v = src[ix0 + j * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add `cols` back onto `dx`; adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, oy0: usize, oy1: usize, dx: &mut [T]) {
    let p = (oy1 - oy0) * g.w_out;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_ox(kx);
                row += 1;
                if lo >= hi {
                    continue;
                }
                for (r, oy) in (oy0..oy1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let seg = &src[r * g.w_out..(r + 1) * g.w_out];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let ix0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in seg[lo..hi].iter().enumerate() {
                            dst[ix0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Grows `scratch` to at least `n` elements and returns that prefix; contents are unspecified.
fn scratch_slice<T: Scalar>(scratch: &mut Vec<T>, n: usize) -> &mut [T] {
    if scratch.len() < n {
        scratch.resize(n, T::zero());
    }
    &mut scratch[..n]
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    g: &ConvGeom,
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let plane = g.h_out * g.w_out;
    let patch = g.patch();
    let chunk = g.rows_per_chunk();
    let cols = scratch_slice(scratch, patch * chunk * g.w_out);
    let wm = MatRef::row_major(w, g.c_out, patch);
    let mut oy0 = 0;
    while oy0 < g.h_out {
        let oy1 = (oy0 + chunk).min(g.h_out);
        let p = (oy1 - oy0) * g.w_out;
        im2col(x, g, oy0, oy1, &mut cols[..patch * p]);
        let off = oy0 * g.w_out;
        gemm(
            T::one(),
            wm,
            MatRef::row_major(&cols[..patch * p], patch, p),
            T::zero(),
            MatMut {
                data: &mut out[off..],
                rows: g.c_out,
                cols: p,
                rs: plane,
                cs: 1,
            },
        );
        oy0 = oy1;
    }
    if let Some(b) = b {
        for (co, &bias) in b.iter().enumerate() {
            for v in &mut out[co * plane..(co + 1) * plane] {
                *v += bias;
            }
        }
    }
}

/// Accumulates gradients of a convolution into whichever of `dx`, `dw`, `db` are given.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &ConvGeom,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let plane = g.h_out * g.w_out;
    if let Some(db) = db {
        for (co, d) in db.iter_mut().enumerate() {
            *d += dout[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let patch = g.patch();
    let chunk = g.rows_per_chunk();
    let cols = scratch_slice(scratch, patch * chunk * g.w_out);
    let wm = MatRef::row_major(w, g.c_out, patch);
    let mut oy0 = 0;
    while oy0 < g.h_out {
        let oy1 = (oy0 + chunk).min(g.h_out);
        let p = (oy1 - oy0) * g.w_out;
        let off = oy0 * g.w_out;
        let dchunk = MatRef {
            data: &dout[off..],
            rows: g.c_out,
            cols: p,
            rs: plane,
            cs: 1,
        };
        if let Some(dw) = dw.as_deref_mut() {
            im2col(x, g, oy0, oy1, &mut cols[..patch * p]);
            gemm(
                T::one(),
                dchunk,
                MatRef::row_major(&cols[..patch * p], patch, p).t(),
                T::one(),
                MatMut::row_major(dw, g.c_out, patch),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                T::one(),
                wm.t(),
                dchunk,
                T::zero(),
                MatMut::row_major(&mut cols[..patch * p], patch, p),
            );
            col2im(&cols[..patch * p], g, oy0, oy1, dx);
        }
        oy0 = oy1;
    }
}

/// `[C*s*s, H, W] -> [C, H*s, W*s]`, or the inverse when `inverse` is set.
pub(crate) fn pixel_shuffle<T: Copy>(src: &[T], c: usize, h: usize, w: usize, s: usize, inverse: bool, dst: &mut [T]) {
    // c, h, w describe the low-resolution side.
    let (hs, ws) = (h * s, w * s);
    for co in 0..c {
        for i in 0..s {
            for j in 0..s {
                let ci = co * s * s + i * s + j;
                for y in 0..h {
                    for x in 0..w {
                        let lo = (ci * h + y) * w + x;
                        let hi = (co * hs + y * s + i) * ws + x * s + j;
                        if inverse {
                            dst[lo] = src[hi];
                        } else {
                            dst[hi] = src[lo];
                        }
                    }
                }
            }
        }
    }
}
