//! Dense kernels behind the tape ops: GEMM and the im2col/col2im pair.

/// Strided matrix operand: `(slice, row_stride, col_stride)`.
pub(crate) type Mat<'a> = (&'a [f64], usize, usize);

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, with `c` row-major contiguous.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    gemm_strided(m, k, n, a, b, beta, c, n)
}

/// [`gemm`] writing rows of `c` that are `rsc` apart.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: Mat,
    b: Mat,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (a, rsa, csa) = a;
    let (b, rsb, csb) = b;
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!(rsc >= n && (m - 1) * rsc + n <= c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Geometry of a sliding window over one `c × h × w` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output rows per im2col block, sized so one block of columns stays
    /// cache resident.
    pub fn block_rows(&self) -> usize {
        const TARGET: usize = 96 * 1024; // f64 values, 768 KiB
        const MIN_COLS: usize = 512;
        let by_cache = TARGET / (self.rows() * self.out_w).max(1);
        let by_width = MIN_COLS.div_ceil(self.out_w);
        by_cache.max(by_width).clamp(1, self.out_h)
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input column range `[lo, hi)` of output positions `ox` that land
    /// inside the image for kernel column `kx`, as `(ox_lo, ox_hi)`.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        // ix = ox*s + kx - pad must satisfy 0 <= ix < w
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Unfold `x` (one image) into `cols[c·k·k, out_h·out_w]`.
pub(crate) fn im2col(x: &[f64], g: &Window, cols: &mut [f64]) {
    im2col_rows(x, g, 0, g.out_h, cols)
}

/// [`im2col`] restricted to output rows `oy0..oy1`; `cols` is
/// `[c·k·k, (oy1−oy0)·out_w]`.
pub(crate) fn im2col_rows(x: &[f64], g: &Window, oy0: usize, oy1: usize, cols: &mut [f64]) {
    let ncols = (oy1 - oy0) * g.out_w;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * ncols;
                let dst = &mut cols[row..row + ncols];
                let (ox_lo, ox_hi) = g.valid_ox(kx);
                for oy in oy0..oy1 {
                    let r = oy - oy0;
                    let out = &mut dst[r * g.out_w..(r + 1) * g.out_w];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || ox_lo >= ox_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..ox_lo].fill(0.0);
                    out[ox_hi..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        out[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `x` (one image).
pub(crate) fn col2im(cols: &[f64], g: &Window, x: &mut [f64]) {
    col2im_rows(cols, g, 0, g.out_h, x)
}

/// Adjoint of [`im2col_rows`].
pub(crate) fn col2im_rows(cols: &[f64], g: &Window, oy0: usize, oy1: usize, x: &mut [f64]) {
    let ncols = (oy1 - oy0) * g.out_w;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * ncols;
                let src = &cols[row..row + ncols];
                let (ox_lo, ox_hi) = g.valid_ox(kx);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let r = oy - oy0;
                    let s = &src[r * g.out_w..(r + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        let d = &mut dst[ix0..ix0 + (ox_hi - ox_lo)];
                        d.iter_mut().zip(&s[ox_lo..ox_hi]).for_each(|(a, b)| *a += b);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox * g.stride + kx - g.pad] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(x: &[f64], g: &Window) -> Vec<f64> {
        let mut out = vec![0.0; g.rows() * g.cols()];
        for ci in 0..g.c {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let r = (ci * g.k + ky) * g.k + kx;
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                out[r * g.cols() + oy * g.out_w + ox] =
                                    x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_matches_naive_and_col2im_is_adjoint() {
        for &(h, w, k, s, p) in &[
            (5, 4, 3, 1, 1),
            (6, 6, 2, 2, 0),
            (7, 5, 3, 2, 1),
            (4, 4, 1, 1, 0),
            (3, 3, 3, 1, 2),
            (8, 8, 4, 3, 2),
        ] {
            let out_h = (h + 2 * p - k) / s + 1;
            let out_w = (w + 2 * p - k) / s + 1;
            let g = Window { c: 2, h, w, k, stride: s, pad: p, out_h, out_w };
            let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut cols = vec![f64::NAN; g.rows() * g.cols()];
            im2col(&x, &g, &mut cols);
            assert_eq!(cols, naive_im2col(&x, &g), "geometry {h}x{w} k{k} s{s} p{p}");

            // <im2col(x), y> == <x, col2im(y)>
            let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn gemm_handles_transposed_operands() {
        // a = [[1,2],[3,4]], b^T given as column-major view of [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 7.0, 6.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, (&a, 2, 1), (&b, 1, 2), 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }
}
