//! Raw numeric kernels behind the differentiable ops: strided GEMM and the
//! im2col / col2im pair used for same-padded, stride-1 convolution.

/// Row/column strides of a matrix operand, in elements.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    pub fn row_major(cols: usize) -> Self {
        Strides {
            row: cols as isize,
            col: 1,
        }
    }

    /// Strides that read a row-major `rows x cols` buffer as its transpose.
    pub fn transposed(cols: usize) -> Self {
        Strides {
            row: 1,
            col: cols as isize,
        }
    }
}

fn max_index(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * s.row + (cols - 1) as isize * s.col) as usize
}

/// `c = a · b + beta · c` with `a: m x k`, `b: k x n` and row-major `c: m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || max_index(m, k, sa) < a.len());
    assert!(k == 0 || n == 0 || max_index(k, n, sb) < b.len());
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row,
            sa.col,
            b.as_ptr(),
            sb.row,
            sb.col,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a same-padded, stride-1 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds `input[C,H,W]` into `cols[C*kh*kw, H*W]` with zero padding.
pub(crate) fn im2col(input: &[f64], g: ConvGeometry) -> Vec<f64> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut cols = vec![0.0; g.patch_len() * g.pixels()];
    for c in 0..g.channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let dy = i as isize - ph;
                let dx = j as isize - pw;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src_row[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds `cols` back, summing overlapping taps.
pub(crate) fn col2im(cols: &[f64], g: ConvGeometry) -> Vec<f64> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut out = vec![0.0; g.channels * h * w];
    for c in 0..g.channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * h * w..(row + 1) * h * w];
                let dy = i as isize - ph;
                let dx = j as isize - pw;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + sx_lo..sy as usize * w + sx_lo + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}
