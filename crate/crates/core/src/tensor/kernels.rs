//! Raw forward/backward kernels for the spatial ops. Shapes are validated by
//! the graph layer before these are called.

use super::Real;
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// 1×1 stride-1 convs read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, input: &[T], col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.cin {
        let chan = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    out.fill(T::ZERO);
    for c in 0..g.cin {
        let chan = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let plane = g.out_plane();
    let in_sample = g.cin * g.h * g.w;
    let rows = g.col_rows();
    let mut out = vec![T::ZERO; g.batch * g.cout * plane];
    exec::for_each_chunk_mut(&mut out, g.cout * plane, |b, dst| {
        let x = &input[b * in_sample..(b + 1) * in_sample];
        let mut scratch;
        let col: &[T] = if g.is_pointwise() {
            x
        } else {
            scratch = vec![T::ZERO; rows * plane];
            im2col(g, x, &mut scratch);
            &scratch
        };
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[co]);
        }
        T::gemm(
            g.cout, rows, plane, T::ONE, kernel, rows as isize, 1, col, plane as isize, 1,
            T::ONE, dst, plane as isize, 1,
        );
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let in_sample = g.cin * g.h * g.w;
    let out_sample = g.cout * plane;
    let rows = g.col_rows();
    let [need_input, need_kernel, need_bias] = need;

    // Per-sample partials are summed afterwards in sample order so the
    // result does not depend on scheduling.
    let per_sample = exec::map_indexed(g.batch, |b| {
        let x = &input[b * in_sample..(b + 1) * in_sample];
        let dy = &grad_out[b * out_sample..(b + 1) * out_sample];
        let mut dk = None;
        if need_kernel {
            let mut scratch;
            let col: &[T] = if g.is_pointwise() {
                x
            } else {
                scratch = vec![T::ZERO; rows * plane];
                im2col(g, x, &mut scratch);
                &scratch
            };
            let mut acc = vec![T::ZERO; g.cout * rows];
            // dK[cout, rows] = dY[cout, plane] · col[rows, plane]^T
            T::gemm(
                g.cout, plane, rows, T::ONE, dy, plane as isize, 1, col, 1, plane as isize,
                T::ZERO, &mut acc, rows as isize, 1,
            );
            dk = Some(acc);
        }
        let db = need_bias.then(|| {
            dy.chunks(plane)
                .map(|c| c.iter().fold(T::ZERO, |s, &v| s + v))
                .collect::<Vec<_>>()
        });
        let dx = need_input.then(|| {
            // dcol[rows, plane] = K^T[rows, cout] · dY[cout, plane]
            let mut dcol = vec![T::ZERO; rows * plane];
            T::gemm(
                rows, g.cout, plane, T::ONE, kernel, 1, rows as isize, dy, plane as isize, 1,
                T::ZERO, &mut dcol, plane as isize, 1,
            );
            if g.is_pointwise() {
                dcol
            } else {
                let mut dx = vec![T::ZERO; in_sample];
                col2im(g, &dcol, &mut dx);
                dx
            }
        });
        (dx, dk, db)
    });

    let mut grads = ConvGrads {
        input: need_input.then(|| Vec::with_capacity(g.batch * in_sample)),
        kernel: need_kernel.then(|| vec![T::ZERO; g.cout * rows]),
        bias: need_bias.then(|| vec![T::ZERO; g.cout]),
    };
    for (dx, dk, db) in per_sample {
        if let (Some(all), Some(dx)) = (grads.input.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dk)) = (grads.kernel.as_mut(), dk) {
            all.iter_mut().zip(dk).for_each(|(a, v)| *a += v);
        }
        if let (Some(all), Some(db)) = (grads.bias.as_mut(), db) {
            all.iter_mut().zip(db).for_each(|(a, v)| *a += v);
        }
    }
    grads
}

pub(crate) fn pool_avg2_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                dst[y * ow + x] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn pool_avg2_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    grad_out: &[T],
) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                dx[p * h * w + y * w + x] = grad_out[p * oh * ow + (y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    dx
}

pub(crate) fn upsample2_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                out[p * oh * ow + y * ow + x] = input[p * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    grad_out: &[T],
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                dx[p * h * w + (y / 2) * w + x / 2] += grad_out[p * oh * ow + y * ow + x];
            }
        }
    }
    dx
}

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Returns `(output, normalized, inv_std per plane)`.
pub(crate) fn instance_norm_forward<T: Real>(
    batch: usize,
    channels: usize,
    plane: usize,
    input: &[T],
    gain: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_f64(plane as f64);
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let mut out = vec![T::ZERO; input.len()];
    let mut xhat = vec![T::ZERO; input.len()];
    let mut inv_std = vec![T::ZERO; batch * channels];
    for b in 0..batch {
        for c in 0..channels {
            let p = b * channels + c;
            let x = &input[p * plane..(p + 1) * plane];
            let mean = x.iter().fold(T::ZERO, |s, &v| s + v) / n;
            let var = x.iter().fold(T::ZERO, |s, &v| {
                let d = v - mean;
                s + d * d
            }) / n;
            let is = T::ONE / (var + eps).sqrt();
            inv_std[p] = is;
            for i in 0..plane {
                let xh = (x[i] - mean) * is;
                xhat[p * plane + i] = xh;
                out[p * plane + i] = gain[c] * xh + bias[c];
            }
        }
    }
    (out, xhat, inv_std)
}

pub(crate) struct NormGrads<T> {
    pub input: Vec<T>,
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn instance_norm_backward<T: Real>(
    batch: usize,
    channels: usize,
    plane: usize,
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    grad_out: &[T],
) -> NormGrads<T> {
    let n = T::from_f64(plane as f64);
    let mut dx = vec![T::ZERO; xhat.len()];
    let mut dgain = vec![T::ZERO; channels];
    let mut dbias = vec![T::ZERO; channels];
    for b in 0..batch {
        for c in 0..channels {
            let p = b * channels + c;
            let range = p * plane..(p + 1) * plane;
            let dy = &grad_out[range.clone()];
            let xh = &xhat[range.clone()];
            let mut sum_dy = T::ZERO;
            let mut sum_dy_xh = T::ZERO;
            for i in 0..plane {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
            dgain[c] += sum_dy_xh;
            dbias[c] += sum_dy;
            // d xhat = dy * gain; the sums scale by the same gain.
            let scale = gain[c] * inv_std[p] / n;
            for i in 0..plane {
                dx[p * plane + i] = scale * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
    }
    NormGrads {
        input: dx,
        gain: dgain,
        bias: dbias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], k: &[f64], bias: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.batch * g.cout * oh * ow];
        for b in 0..g.batch {
            for co in 0..g.cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = bias[co];
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize
                                    {
                                        continue;
                                    }
                                    s += x[((b * g.cin + ci) * g.h + iy as usize) * g.w
                                        + ix as usize]
                                        * k[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                        out[((b * g.cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 1, 2), (3, 1, 0)] {
            let g = ConvGeom {
                batch: 2,
                cin: 3,
                h: 7,
                w: 6,
                cout: 4,
                k,
                stride,
                pad,
            };
            let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let kern: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 13 % 7) as f64) * 0.1).collect();
            let bias = [0.5, -0.25, 0.0, 1.0];
            let fast = conv2d_forward(&g, &x, &kern, &bias);
            let slow = naive_conv(&g, &x, &kern, &bias);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{k} {stride} {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            batch: 1,
            cin: 2,
            h: 5,
            w: 4,
            cout: 1,
            k: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let rows = g.col_rows() * g.out_plane();
        let c: Vec<f64> = (0..rows).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; rows];
        im2col(&g, &x, &mut col);
        let mut back = vec![0.0; 40];
        col2im(&g, &c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
