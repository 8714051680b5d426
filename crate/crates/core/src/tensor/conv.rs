//! im2col convolution kernels and a safe wrapper over `sgemm`.

/// Geometry of one 2D cross-correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub ksize: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.ksize * self.ksize
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_plane(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_plane(&self) -> usize {
        self.filters * self.out_h * self.out_w
    }
}

/// `c = alpha * a * b + beta * c` for row-major operands addressed by
/// explicit row/column strides. `a` is m×k, `b` is k×n, `c` is m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above bound every element matrixmultiply touches
    // inside the three slices, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
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
            csc as isize,
        );
    }
}

/// Output columns `ox` whose input column `ox*stride + kj - padding` lies
/// inside `[0, width)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> std::ops::Range<usize> {
    let (s, p) = (g.stride, g.padding);
    let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
    // largest ox with ox*s + kj - p <= width - 1
    let hi = if g.width + p > kj { ((g.width + p - kj - 1) / s + 1).min(g.out_w) } else { 0 };
    lo.min(hi)..hi
}

/// Unfolds one `[C, H, W]` image into a `[C*k*k, OH*OW]` column matrix.
pub(crate) fn im2col(g: &ConvGeom, image: &[f32], cols: &mut [f32]) {
    let ohw = g.col_cols();
    let k = g.ksize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let valid = valid_cols(g, kj);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize || valid.is_empty() {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..valid.start].fill(0.0);
                    line[valid.end..].fill(0.0);
                    let x0 = valid.start * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        line[valid.clone()].copy_from_slice(&src[x0..x0 + valid.len()]);
                    } else {
                        for (v, &x) in line[valid.clone()].iter_mut().zip(src[x0..].iter().step_by(g.stride)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub(crate) fn col2im_add(g: &ConvGeom, cols: &[f32], image: &mut [f32]) {
    let ohw = g.col_cols();
    let k = g.ksize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let valid = valid_cols(g, kj);
                if valid.is_empty() {
                    continue;
                }
                let x0 = valid.start * g.stride + kj - g.padding;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &src[oy * g.out_w + valid.start..oy * g.out_w + valid.end];
                    let dst = &mut plane[iy as usize * g.width + x0..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        for (d, &v) in dst[..line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst.iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(g: &ConvGeom, batch: usize, input: &[f32], kernel: &[f32]) -> Vec<f32> {
    let (rows, ohw) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ohw];
    let mut out = vec![0.0; batch * g.out_plane()];
    for n in 0..batch {
        im2col(g, &input[n * g.in_plane()..(n + 1) * g.in_plane()], &mut cols);
        gemm(
            g.filters,
            rows,
            ohw,
            kernel,
            (rows, 1),
            &cols,
            (ohw, 1),
            0.0,
            &mut out[n * g.out_plane()..(n + 1) * g.out_plane()],
            (ohw, 1),
        );
    }
    out
}

/// Accumulates input and kernel gradients for an upstream gradient `grad_out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    g: &ConvGeom,
    batch: usize,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    grad_input: Option<&mut [f32]>,
    grad_kernel: Option<&mut [f32]>,
) {
    let (rows, ohw) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ohw];
    if let Some(gk) = grad_kernel {
        for n in 0..batch {
            im2col(g, &input[n * g.in_plane()..(n + 1) * g.in_plane()], &mut cols);
            // dK[F, rows] += dY[F, ohw] * cols^T
            gemm(
                g.filters,
                ohw,
                rows,
                &grad_out[n * g.out_plane()..(n + 1) * g.out_plane()],
                (ohw, 1),
                &cols,
                (1, ohw),
                1.0,
                gk,
                (rows, 1),
            );
        }
    }
    if let Some(gx) = grad_input {
        for n in 0..batch {
            // dcols[rows, ohw] = K^T * dY
            gemm(
                rows,
                g.filters,
                ohw,
                kernel,
                (1, rows),
                &grad_out[n * g.out_plane()..(n + 1) * g.out_plane()],
                (ohw, 1),
                0.0,
                &mut cols,
                (ohw, 1),
            );
            col2im_add(g, &cols, &mut gx[n * g.in_plane()..(n + 1) * g.in_plane()]);
        }
    }
}
