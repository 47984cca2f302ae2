//! Convolution kernels via im2col + gemm.

use crate::{Real, Shape, Tensor};

/// Square-kernel 2D convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

pub fn output_size(input: usize, kernel: usize, g: ConvGeometry) -> Option<usize> {
    let padded = input + 2 * g.pad;
    if padded < kernel || g.stride == 0 {
        return None;
    }
    Some((padded - kernel) / g.stride + 1)
}

pub fn output_shape(x: Shape, w: Shape, g: ConvGeometry) -> Shape {
    assert_eq!(x[1], w[1], "conv2d: input has {} channels, kernel expects {}", x[1], w[1]);
    assert_eq!(w[2], w[3], "conv2d: only square kernels are supported");
    let ho = output_size(x[2], w[2], g).expect("conv2d: kernel larger than padded input");
    let wo = output_size(x[3], w[3], g).expect("conv2d: kernel larger than padded input");
    [x[0], w[0], ho, wo]
}

fn is_pointwise(w: Shape, g: ConvGeometry) -> bool {
    w[2] == 1 && g.stride == 1 && g.pad == 0
}

/// Output positions `o` in `0..out_len` whose source `o * stride + offset - pad`
/// lies inside `0..in_len`.
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > offset { ((in_len + pad - offset - 1) / stride + 1).min(out_len) } else { 0 };
    lo.min(hi)..hi
}

/// Unfold one `[c, h, w]` sample into a `(c*k*k) x (ho*wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    src: &[T],
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    for c in 0..channels {
        let chan = &src[c * height * width..(c + 1) * height * width];
        for ki in 0..k {
            let ys = valid_range(ki, g.pad, g.stride, height, ho);
            for kj in 0..k {
                let xs = valid_range(kj, g.pad, g.stride, width, wo);
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                dst[..ys.start * wo].fill(T::zero());
                dst[ys.end * wo..].fill(T::zero());
                for oy in ys.clone() {
                    let iy = oy * g.stride + ki - g.pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    line[..xs.start].fill(T::zero());
                    line[xs.end..].fill(T::zero());
                    if xs.is_empty() {
                        continue;
                    }
                    let x0 = xs.start * g.stride + kj - g.pad;
                    let srow = &chan[iy * width..(iy + 1) * width];
                    if g.stride == 1 {
                        line[xs.clone()].copy_from_slice(&srow[x0..x0 + xs.len()]);
                    } else {
                        for (j, out) in line[xs.clone()].iter_mut().enumerate() {
                            *out = srow[x0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate a column matrix back into a sample.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Real>(
    cols: &[T],
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    dst: &mut [T],
) {
    let plane = ho * wo;
    for c in 0..channels {
        let chan = &mut dst[c * height * width..(c + 1) * height * width];
        for ki in 0..k {
            let ys = valid_range(ki, g.pad, g.stride, height, ho);
            for kj in 0..k {
                let xs = valid_range(kj, g.pad, g.stride, width, wo);
                if xs.is_empty() {
                    continue;
                }
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let x0 = xs.start * g.stride + kj - g.pad;
                for oy in ys.clone() {
                    let iy = oy * g.stride + ki - g.pad;
                    let drow = &mut chan[iy * width..(iy + 1) * width];
                    let line = &src[oy * wo + xs.start..oy * wo + xs.end];
                    if g.stride == 1 {
                        for (d, &v) in drow[x0..x0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in line.iter().enumerate() {
                            drow[x0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeometry) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape();
    let out_shape = output_shape(xs, ws, g);
    let [n, o, ho, wo] = out_shape;
    let k = ws[2];
    let ckk = ws[1] * k * k;
    let plane = ho * wo;
    let mut out = Tensor::zeros(out_shape);
    let pointwise = is_pointwise(ws, g);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ckk * plane] };
    for i in 0..n {
        let cols_ref: &[T] = if pointwise {
            x.sample(i)
        } else {
            im2col(x.sample(i), xs[1], xs[2], xs[3], k, g, ho, wo, &mut cols);
            &cols
        };
        T::gemm(
            o,
            ckk,
            plane,
            w.data(),
            (ckk as isize, 1),
            cols_ref,
            (plane as isize, 1),
            T::zero(),
            out.sample_mut(i),
            (plane as isize, 1),
        );
    }
    out
}

/// Gradients of a convolution w.r.t. its input and/or kernel.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: ConvGeometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let xs = x.shape();
    let ws = w.shape();
    let [n, o, ho, wo] = grad_out.shape();
    let k = ws[2];
    let ckk = ws[1] * k * k;
    let plane = ho * wo;
    let pointwise = is_pointwise(ws, g);
    let mut gx = need_x.then(|| Tensor::zeros(xs));
    let mut gw = need_w.then(|| Tensor::zeros(ws));
    let mut cols = vec![T::zero(); if pointwise { 0 } else { ckk * plane }];
    let mut dcols = vec![T::zero(); if pointwise || !need_x { 0 } else { ckk * plane }];
    for i in 0..n {
        let go = grad_out.sample(i);
        if let Some(gw) = gw.as_mut() {
            let cols_ref: &[T] = if pointwise {
                x.sample(i)
            } else {
                im2col(x.sample(i), xs[1], xs[2], xs[3], k, g, ho, wo, &mut cols);
                &cols
            };
            // dW (o x ckk) += dOut (o x plane) * cols^T (plane x ckk)
            T::gemm(
                o,
                plane,
                ckk,
                go,
                (plane as isize, 1),
                cols_ref,
                (1, plane as isize),
                T::one(),
                gw.data_mut(),
                (ckk as isize, 1),
            );
        }
        if let Some(gx) = gx.as_mut() {
            // dcols (ckk x plane) = W^T (ckk x o) * dOut (o x plane)
            if pointwise {
                T::gemm(
                    ckk,
                    o,
                    plane,
                    w.data(),
                    (1, ckk as isize),
                    go,
                    (plane as isize, 1),
                    T::zero(),
                    gx.sample_mut(i),
                    (plane as isize, 1),
                );
            } else {
                T::gemm(
                    ckk,
                    o,
                    plane,
                    w.data(),
                    (1, ckk as isize),
                    go,
                    (plane as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (plane as isize, 1),
                );
                col2im_add(&dcols, xs[1], xs[2], xs[3], k, g, ho, wo, gx.sample_mut(i));
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: ConvGeometry) -> Tensor<f64> {
        let shape = output_shape(x.shape(), w.shape(), g);
        let [_, c, h, wd] = x.shape();
        let k = w.shape()[2];
        Tensor::from_fn(shape, |[n, o, oy, ox]| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.at(n, ci, iy as usize, ix as usize) * w.at(o, ci, ki, kj);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn forward_matches_direct_summation() {
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0)] {
            let g = ConvGeometry { stride, pad };
            let x = pseudo([2, 3, 8, 6], 1);
            let w = pseudo([4, 3, k, k], 2);
            let got = conv2d_forward(&x, &w, g);
            let want = naive_conv(&x, &w, g);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x, w), r> is bilinear, so its gradients are exact adjoints.
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0)] {
            let g = ConvGeometry { stride, pad };
            let x = pseudo([2, 3, 8, 6], 3);
            let w = pseudo([4, 3, k, k], 4);
            let r = pseudo(output_shape(x.shape(), w.shape(), g), 5);
            let (gx, gw) = conv2d_backward(&x, &w, &r, g, true, true);
            let (gx, gw) = (gx.unwrap(), gw.unwrap());
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 { a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum() };
            let base = dot(&conv2d_forward(&x, &w, g), &r);
            // linear in x: <conv(x,w), r> = <x, gx>
            assert!((dot(&x, &gx) - base).abs() < 1e-10);
            assert!((dot(&w, &gw) - base).abs() < 1e-10);
        }
    }
}
