//! Batched layer kernels. Feature maps use a channel-major layout
//! `[C, N, H, W]` so that one GEMM covers the whole batch.

use crate::scalar::Scalar;

pub(crate) const KERNEL: usize = 3;
pub(crate) const STRIDE: usize = 2;
pub(crate) const PAD: usize = 1;

pub(crate) fn conv_out_len(len: usize) -> usize {
    (len + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Unfolds `[C, N, H, W]` into a `[C*9, N*Ho*Wo]` patch matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], c: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (conv_out_len(h), conv_out_len(w));
    let m = n * ho * wo;
    let mut cols = vec![T::zero(); c * KERNEL * KERNEL * m];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let dst_row = &mut cols[row * m..(row + 1) * m];
                for ni in 0..n {
                    let plane = &input[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut dst_row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (conv_out_len(h), conv_out_len(w));
    let m = n * ho * wo;
    let mut out = vec![T::zero(); c * n * h * w];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src_row = &cols[row * m..(row + 1) * m];
                for ni in 0..n {
                    let plane = &mut out[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &src_row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[O, M] = weight[O, K] * cols[K, M] + bias`.
pub(crate) fn conv_forward<T: Scalar>(weight: &[T], bias: &[T], cols: &[T], o: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); o * m];
    for (oi, row) in out.chunks_exact_mut(m.max(1)).enumerate() {
        row.fill(bias[oi]);
    }
    T::gemm(o, k, m, T::one(), weight, k as isize, 1, cols, m as isize, 1, T::one(), &mut out, m as isize, 1);
    out
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `d_out` where the ReLU output `out` is not positive.
pub(crate) fn relu_backward<T: Scalar>(out: &[T], d_out: &mut [T]) {
    for (g, &y) in d_out.iter_mut().zip(out) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Backward through the convolution GEMM. Returns the patch gradient when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    weight: &[T],
    cols: &[T],
    d_out: &[T],
    o: usize,
    k: usize,
    m: usize,
    grad_w: Option<(&mut [T], &mut [T])>,
    want_input: bool,
) -> Option<Vec<T>> {
    if let Some((gw, gb)) = grad_w {
        T::gemm(o, m, k, T::one(), d_out, m as isize, 1, cols, 1, m as isize, T::one(), gw, k as isize, 1);
        for (oi, row) in d_out.chunks_exact(m.max(1)).enumerate() {
            gb[oi] += row.iter().copied().sum::<T>();
        }
    }
    if want_input {
        let mut d_cols = vec![T::zero(); k * m];
        T::gemm(k, o, m, T::one(), weight, 1, k as isize, d_out, m as isize, 1, T::zero(), &mut d_cols, m as isize, 1);
        Some(d_cols)
    } else {
        None
    }
}

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Normalises each sample of `[C, N, HW]` over its `C * HW` values, then
/// applies `gamma[c] * xhat + beta[c]` in place.
pub(crate) fn layer_norm_forward<T: Scalar>(x: &mut [T], gamma: &[T], beta: &[T], n: usize) -> NormCache<T> {
    let c = gamma.len();
    let hw = x.len() / (c * n);
    let count = T::from_usize(c * hw).unwrap();
    let eps = T::from_f64_lossy(NORM_EPS);
    let mut inv_std = Vec::with_capacity(n);
    for ni in 0..n {
        let plane = |ci: usize| (ci * n + ni) * hw..(ci * n + ni + 1) * hw;
        let mean = (0..c).map(|ci| x[plane(ci)].iter().copied().sum::<T>()).sum::<T>() / count;
        let var = (0..c)
            .map(|ci| x[plane(ci)].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
            .sum::<T>()
            / count;
        let inv = T::one() / (var + eps).sqrt();
        for ci in 0..c {
            x[plane(ci)].iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        inv_std.push(inv);
    }
    let xhat = x.to_vec();
    for ci in 0..c {
        x[ci * n * hw..(ci + 1) * n * hw].iter_mut().for_each(|v| *v = gamma[ci] * *v + beta[ci]);
    }
    NormCache { xhat, inv_std }
}

/// Returns the gradient w.r.t. the pre-normalisation input; accumulates
/// into `(d_gamma, d_beta)` when given.
pub(crate) fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &[T],
    d_out: &[T],
    n: usize,
    grad: Option<(&mut [T], &mut [T])>,
) -> Vec<T> {
    let c = gamma.len();
    let hw = d_out.len() / (c * n);
    let xhat = &cache.xhat;
    if let Some((gg, gb)) = grad {
        for ci in 0..c {
            let r = ci * n * hw..(ci + 1) * n * hw;
            gg[ci] += d_out[r.clone()].iter().zip(&xhat[r.clone()]).map(|(&g, &x)| g * x).sum::<T>();
            gb[ci] += d_out[r].iter().copied().sum::<T>();
        }
    }
    let mut dx = vec![T::zero(); d_out.len()];
    let count = T::from_usize(c * hw).unwrap();
    for ni in 0..n {
        let plane = |ci: usize| (ci * n + ni) * hw..(ci * n + ni + 1) * hw;
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for ci in 0..c {
            for (&g, &x) in d_out[plane(ci)].iter().zip(&xhat[plane(ci)]) {
                let dxh = g * gamma[ci];
                m1 += dxh;
                m2 += dxh * x;
            }
        }
        m1 = m1 / count;
        m2 = m2 / count;
        let inv = cache.inv_std[ni];
        for ci in 0..c {
            let r = plane(ci);
            for ((d, &g), &x) in dx[r.clone()].iter_mut().zip(&d_out[r.clone()]).zip(&xhat[r]) {
                *d = inv * (g * gamma[ci] - m1 - x * m2);
            }
        }
    }
    dx
}

/// Global average pool `[C, N, HW] -> [N, C]`.
pub(crate) fn gap_forward<T: Scalar>(input: &[T], c: usize, n: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut out = vec![T::zero(); n * c];
    for ci in 0..c {
        for ni in 0..n {
            let s: T = input[(ci * n + ni) * hw..(ci * n + ni + 1) * hw].iter().copied().sum();
            out[ni * c + ci] = s * inv;
        }
    }
    out
}

pub(crate) fn gap_backward<T: Scalar>(d_out: &[T], c: usize, n: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut d_in = vec![T::zero(); c * n * hw];
    for ci in 0..c {
        for ni in 0..n {
            let g = d_out[ni * c + ci] * inv;
            d_in[(ci * n + ni) * hw..(ci * n + ni + 1) * hw].fill(g);
        }
    }
    d_in
}

/// `y[N, out] = x[N, in] * W^T + b` with `W` stored `[out, in]`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    T::gemm(n, d_in, d_out, T::one(), x, d_in as isize, 1, w, 1, d_in as isize, T::one(), &mut y, d_out as isize, 1);
    y
}

/// Returns `dx`; accumulates into `gw`, `gb` when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    d_in: usize,
    d_out: usize,
    grad_w: Option<(&mut [T], &mut [T])>,
    want_input: bool,
) -> Option<Vec<T>> {
    if let Some((gw, gb)) = grad_w {
        T::gemm(d_out, n, d_in, T::one(), dy, 1, d_out as isize, x, d_in as isize, 1, T::one(), gw, d_in as isize, 1);
        for row in dy.chunks_exact(d_out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
    if want_input {
        let mut dx = vec![T::zero(); n * d_in];
        T::gemm(n, d_out, d_in, T::one(), dy, d_out as isize, 1, w, d_in as isize, 1, T::zero(), &mut dx, d_in as isize, 1);
        Some(dx)
    } else {
        None
    }
}

/// Row-wise L2 normalisation. Returns the normalised rows and the row norms.
pub(crate) fn l2norm_forward<T: Scalar>(y: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64_lossy(1e-12);
    let mut z = y.to_vec();
    let mut norms = Vec::with_capacity(y.len() / d);
    for row in z.chunks_exact_mut(d) {
        let nrm = crate::scalar::norm(row).max(eps);
        for v in row.iter_mut() {
            *v /= nrm;
        }
        norms.push(nrm);
    }
    (z, norms)
}

/// `dy = (dz - z (z . dz)) / |y|`.
pub(crate) fn l2norm_backward<T: Scalar>(z: &[T], norms: &[T], dz: &[T], d: usize) -> Vec<T> {
    let mut dy = vec![T::zero(); z.len()];
    for (r, ((zr, dzr), dyr)) in z
        .chunks_exact(d)
        .zip(dz.chunks_exact(d))
        .zip(dy.chunks_exact_mut(d))
        .enumerate()
    {
        let proj = crate::scalar::dot(zr, dzr);
        for i in 0..d {
            dyr[i] = (dzr[i] - zr[i] * proj) / norms[r];
        }
    }
    dy
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], w: &[f64], c: usize, h: usize, wd: usize, o: usize) -> Vec<f64> {
        let (ho, wo) = (conv_out_len(h), conv_out_len(wd));
        let mut out = vec![0.0; o * ho * wo];
        for oi in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w[((oi * c + ci) * 3 + ky) * 3 + kx]
                                        * input[(ci * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out[(oi * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_equals_direct_convolution() {
        let (c, h, w, o) = (2, 7, 6, 3);
        let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let weight: Vec<f64> = (0..o * c * 9).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let cols = im2col(&input, c, 1, h, w);
        let m = conv_out_len(h) * conv_out_len(w);
        let mut out = vec![0.0; o * m];
        f64::gemm(o, c * 9, m, 1.0, &weight, (c * 9) as isize, 1, &cols, m as isize, 1, 0.0, &mut out, m as isize, 1);
        assert_eq!(out, naive_conv(&input, &weight, c, h, w, o));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, n, h, w) = (2, 2, 5, 6);
        let x: Vec<f64> = (0..c * n * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols = im2col(&x, c, n, h, w);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, c, n, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn output_lengths() {
        assert_eq!(conv_out_len(120), 60);
        assert_eq!(conv_out_len(15), 8);
        assert_eq!(conv_out_len(40), 20);
        assert_eq!(conv_out_len(5), 3);
    }
}
