//! Per-sample compute kernels for the fixed 4x4 / stride 2 / pad 1 convolution geometry.

pub(crate) const KERNEL: usize = 4;
pub(crate) const STRIDE: usize = 2;
pub(crate) const PAD: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// A transposed operand is stored in the transposed layout (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold a `channels x height x width` image into `(channels*16) x (oh*ow)` patch columns.
pub(crate) fn im2col(x: &[f32], channels: usize, height: usize, width: usize, cols: &mut [f32]) {
    let (oh, ow) = (height / STRIDE, width / STRIDE);
    let plane = oh * ow;
    for c in 0..channels {
        let src = &x[c * height * width..(c + 1) * height * width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(c * TAPS + ky * KERNEL + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let line = &src[iy as usize * width..(iy as usize + 1) * width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        *d = if ix < 0 || ix >= width as isize {
                            0.0
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate patch columns back onto the image.
pub(crate) fn col2im(cols: &[f32], channels: usize, height: usize, width: usize, x: &mut [f32]) {
    let (oh, ow) = (height / STRIDE, width / STRIDE);
    let plane = oh * ow;
    for c in 0..channels {
        let dst = &mut x[c * height * width..(c + 1) * height * width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(c * TAPS + ky * KERNEL + kx) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * width..(iy as usize + 1) * width];
                    for ox in 0..ow {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < width as isize {
                            line[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn taps() -> usize {
    TAPS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).sin()).collect();
        let naive = |i: usize, j: usize| (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f32>();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                assert!((c[i * n + j] - naive(i, j)).abs() < 1e-5);
            }
        }
        let at: Vec<f32> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f32> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &at, true, &bt, true, 0.0, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 6, 4);
        let x: Vec<f32> = (0..c * h * w).map(|i| (i as f32 * 0.37).cos()).collect();
        let ncols = c * TAPS * (h / 2) * (w / 2);
        let y: Vec<f32> = (0..ncols).map(|i| (i as f32 * 0.11).sin()).collect();
        let mut cols = vec![0.0; ncols];
        im2col(&x, c, h, w, &mut cols);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
