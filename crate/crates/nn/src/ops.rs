//! Forward and backward kernels for every layer kind.
//!
//! All image tensors are `[N, C, H, W]`. Per-sample work is spread over the
//! rayon pool; anything summed across the batch is reduced sequentially in
//! sample order so results never depend on the thread count.

use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    t.expect_rank(4, what)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Column range `[lo, hi)` of output positions `x` for which `x + dx` is in `0..w`.
#[inline]
fn valid_cols(w: usize, dx: isize) -> (usize, usize) {
    let lo = if dx < 0 { (-dx) as usize } else { 0 };
    let hi = if dx > 0 {
        w.saturating_sub(dx as usize)
    } else {
        w
    };
    (lo, hi.max(lo))
}

/// 3x3 cross-correlation with zero padding of one pixel ("same" output size).
pub fn conv3x3_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "conv3x3")?;
    let k = check_conv_params(c, weight, bias)?;
    let hw = h * w;
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f32; n * k * hw];
    out.par_chunks_mut(k * hw)
        .zip(input.data().par_chunks(c * hw))
        .for_each(|(out_s, in_s)| {
            for ko in 0..k {
                let out_k = &mut out_s[ko * hw..(ko + 1) * hw];
                out_k.iter_mut().for_each(|v| *v = bd[ko]);
                for ci in 0..c {
                    let in_c = &in_s[ci * hw..(ci + 1) * hw];
                    for ky in 0..3 {
                        let dy = ky as isize - 1;
                        for kx in 0..3 {
                            let dx = kx as isize - 1;
                            let wv = wd[((ko * c + ci) * 3 + ky) * 3 + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let (lo, hi) = valid_cols(w, dx);
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let src = &in_c[sy * w + (lo as isize + dx) as usize
                                    ..sy * w + (hi as isize + dx) as usize];
                                let dst = &mut out_k[y * w + lo..y * w + hi];
                                for (o, s) in dst.iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(vec![n, k, h, w], out)
}

fn check_conv_params(c: usize, weight: &Tensor, bias: &Tensor) -> Result<usize> {
    weight.expect_rank(4, "conv3x3 weight")?;
    let ws = weight.shape();
    if ws[1] != c || ws[2] != 3 || ws[3] != 3 {
        return Err(NnError::Shape(format!(
            "conv3x3 weight {:?} does not fit {} input channels",
            ws, c
        )));
    }
    bias.expect_shape(&[ws[0]])?;
    Ok(ws[0])
}

/// Gradients of [`conv3x3_forward`] for input, weight and bias.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = dims4(input, "conv3x3")?;
    let k = weight.shape()[0];
    grad_out.expect_shape(&[n, k, h, w])?;
    let hw = h * w;
    let wd = weight.data();

    let per_sample: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = input
        .data()
        .par_chunks(c * hw)
        .zip(grad_out.data().par_chunks(k * hw))
        .map(|(in_s, g_s)| {
            let mut gin = vec![0.0f32; c * hw];
            let mut gw = vec![0.0f32; k * c * 9];
            let mut gb = vec![0.0f32; k];
            for ko in 0..k {
                let g_k = &g_s[ko * hw..(ko + 1) * hw];
                gb[ko] = g_k.iter().sum();
                for ci in 0..c {
                    let in_c = &in_s[ci * hw..(ci + 1) * hw];
                    let gin_c = &mut gin[ci * hw..(ci + 1) * hw];
                    for ky in 0..3 {
                        let dy = ky as isize - 1;
                        for kx in 0..3 {
                            let dx = kx as isize - 1;
                            let widx = ((ko * c + ci) * 3 + ky) * 3 + kx;
                            let wv = wd[widx];
                            let (lo, hi) = valid_cols(w, dx);
                            let mut acc = 0.0f32;
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let s0 = sy * w + (lo as isize + dx) as usize;
                                let s1 = sy * w + (hi as isize + dx) as usize;
                                let g_row = &g_k[y * w + lo..y * w + hi];
                                let src = &in_c[s0..s1];
                                acc += g_row.iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                                if wv != 0.0 {
                                    for (d, g) in gin_c[s0..s1].iter_mut().zip(g_row) {
                                        *d += wv * g;
                                    }
                                }
                            }
                            gw[widx] = acc;
                        }
                    }
                }
            }
            (gin, gw, gb)
        })
        .collect();

    let mut grad_in = Vec::with_capacity(n * c * hw);
    let mut grad_w = vec![0.0f32; k * c * 9];
    let mut grad_b = vec![0.0f32; k];
    for (gin, gw, gb) in per_sample {
        grad_in.extend_from_slice(&gin);
        for (a, b) in grad_w.iter_mut().zip(&gw) {
            *a += b;
        }
        for (a, b) in grad_b.iter_mut().zip(&gb) {
            *a += b;
        }
    }
    Ok((
        Tensor::new(vec![n, c, h, w], grad_in)?,
        Tensor::new(weight.shape().to_vec(), grad_w)?,
        Tensor::new(vec![k], grad_b)?,
    ))
}

/// Affine map `[N, F] x [F, U] + [U]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "dense")?;
    weight.expect_rank(2, "dense weight")?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    if weight.shape()[0] != f {
        return Err(NnError::Shape(format!(
            "dense weight {:?} does not fit {} input features",
            weight.shape(),
            f
        )));
    }
    let u = weight.shape()[1];
    bias.expect_shape(&[u])?;
    let wd = weight.data();
    let mut out = vec![0.0f32; n * u];
    out.par_chunks_mut(u)
        .zip(input.data().par_chunks(f))
        .for_each(|(o, x)| {
            o.copy_from_slice(bias.data());
            for (fi, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &wd[fi * u..(fi + 1) * u];
                for (ov, wv) in o.iter_mut().zip(row) {
                    *ov += xv * wv;
                }
            }
        });
    Tensor::new(vec![n, u], out)
}

pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let u = weight.shape()[1];
    grad_out.expect_shape(&[n, u])?;
    let wd = weight.data();
    let gd = grad_out.data();
    let xd = input.data();

    let mut grad_in = vec![0.0f32; n * f];
    grad_in
        .par_chunks_mut(f)
        .zip(gd.par_chunks(u))
        .for_each(|(gi, g)| {
            for (fi, d) in gi.iter_mut().enumerate() {
                let row = &wd[fi * u..(fi + 1) * u];
                *d = row.iter().zip(g).map(|(a, b)| a * b).sum();
            }
        });

    // Rows of the weight gradient are independent; each sums samples in order.
    let mut grad_w = vec![0.0f32; f * u];
    grad_w.par_chunks_mut(u).enumerate().for_each(|(fi, gw)| {
        for s in 0..n {
            let xv = xd[s * f + fi];
            if xv == 0.0 {
                continue;
            }
            for (d, g) in gw.iter_mut().zip(&gd[s * u..(s + 1) * u]) {
                *d += xv * g;
            }
        }
    });
    let mut grad_b = vec![0.0f32; u];
    for g in gd.chunks(u) {
        for (d, v) in grad_b.iter_mut().zip(g) {
            *d += v;
        }
    }
    Ok((
        Tensor::new(vec![n, f], grad_in)?,
        Tensor::new(vec![f, u], grad_w)?,
        Tensor::new(vec![u], grad_b)?,
    ))
}

/// 2x2 stride-2 max pooling. Odd extents are padded with -inf, so the output
/// is `ceil(H/2) x ceil(W/2)`. Returns the pooled tensor and, per output
/// element, the flat input index of the first (row-major) maximum.
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = dims4(input, "maxpool2")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..2 {
                    let y = oy * 2 + dy;
                    if y >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let xx = ox * 2 + dx;
                        if xx >= w {
                            continue;
                        }
                        let i = base + y * w + xx;
                        if best_i == usize::MAX || x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i as usize] += v;
    }
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "upsample2")?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn upsample2_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = Tensor::zeros(input_shape);
    let planes = input_shape[0] * input_shape[1];
    let gd = g.data_mut();
    let go = grad_out.data();
    for plane in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                gd[plane * h * w + (y / 2) * w + xx / 2] += go[plane * oh * ow + y * ow + xx];
            }
        }
    }
    g
}

/// Concatenates two `[N, C*, H, W]` tensors along the channel axis.
pub fn concat_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = dims4(a, "concat")?;
    let (nb, cb, hb, wb) = dims4(b, "concat")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(NnError::Shape(format!(
            "concat of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (sa + sb));
    for (xa, xb) in a.data().chunks(sa).zip(b.data().chunks(sb)) {
        out.extend_from_slice(xa);
        out.extend_from_slice(xb);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

pub fn concat_backward(
    a_shape: &[usize],
    b_shape: &[usize],
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let sa: usize = a_shape[1..].iter().product();
    let sb: usize = b_shape[1..].iter().product();
    let mut ga = Vec::with_capacity(a_shape.iter().product());
    let mut gb = Vec::with_capacity(b_shape.iter().product());
    for g in grad_out.data().chunks(sa + sb) {
        ga.extend_from_slice(&g[..sa]);
        gb.extend_from_slice(&g[sa..]);
    }
    (
        Tensor::new(a_shape.to_vec(), ga).expect("concat grad shape"),
        Tensor::new(b_shape.to_vec(), gb).expect("concat grad shape"),
    )
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v < 0.0 { 0.0 } else { v })
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu grad shape")
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    input.map(sigmoid)
}

/// Uses the forward output `s`: ds/dx = s(1-s).
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("sigmoid grad shape")
}

/// Cached quantities of a batch-norm forward pass needed by its backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
    pub batch_stats: bool,
}

/// Per-channel batch-norm statistics over every axis except axis 1.
pub fn channel_stats(input: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
    if input.ndim() < 2 {
        return Err(NnError::Shape(format!(
            "batchnorm needs at least [N, C], got {:?}",
            input.shape()
        )));
    }
    let (n, c) = (input.shape()[0], input.shape()[1]);
    let inner: usize = input.shape()[2..].iter().product();
    let m = (n * inner) as f64;
    let x = input.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for s_i in 0..n {
            let off = (s_i * c + ch) * inner;
            s += x[off..off + inner].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0f64;
        for s_i in 0..n {
            let off = (s_i * c + ch) * inner;
            q += x[off..off + inner]
                .iter()
                .map(|&v| (v as f64 - mu).powi(2))
                .sum::<f64>();
        }
        mean[ch] = mu as f32;
        var[ch] = (q / m) as f32;
    }
    Ok((mean, var))
}

/// Normalises with the given per-channel `mean`/`var` and applies `gamma`/`beta`.
pub fn batchnorm_apply(
    input: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
    batch_stats: bool,
) -> Result<(Tensor, BatchNormCache)> {
    let (n, c) = (input.shape()[0], input.shape()[1]);
    gamma.expect_shape(&[c])?;
    beta.expect_shape(&[c])?;
    let inner: usize = input.shape()[2..].iter().product();
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let x = input.data();
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            let (g, b, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in off..off + inner {
                let xh = (x[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            batch_stats,
        },
    ))
}

/// Gradients for input, gamma and beta. With batch statistics the input
/// gradient carries the mean/variance terms; with frozen statistics it is a
/// plain per-channel scale.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = cache.xhat.shape();
    grad_out.expect_shape(shape)?;
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let m = (n * inner) as f32;
    let xh = cache.xhat.data();
    let g = grad_out.data();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            for i in off..off + inner {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![0.0f32; g.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * inner;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            if cache.batch_stats {
                let (sg, sgx) = (dbeta[ch], dgamma[ch]);
                for i in off..off + inner {
                    dx[i] = scale / m * (m * g[i] - sg - xh[i] * sgx);
                }
            } else {
                for i in off..off + inner {
                    dx[i] = scale * g[i];
                }
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = t(
            &[1, 1, 3, 4],
            &(0..12).map(|v| v as f32).collect::<Vec<_>>(),
        );
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv3x3_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_broadcast_bias() {
        let x = Tensor::zeros(&[2, 3, 4, 4]);
        let w = Tensor::full(&[2, 3, 3, 3], 0.7);
        let b = t(&[2], &[1.5, -2.0]);
        let y = conv3x3_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 4]);
        for (i, v) in y.data().iter().enumerate() {
            let k = (i / 16) % 2;
            assert_eq!(*v, b.data()[k]);
        }
    }

    #[test]
    fn conv_uses_zero_padding() {
        // All-ones 3x3 kernel on all-ones 3x3 image counts in-bounds neighbours.
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv3x3_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv3x3_forward(&x, &w, &Tensor::zeros(&[1])),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let x = Tensor::full(&[1, 1, 4, 4], 5.0);
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        let g = maxpool2_backward(x.shape(), &arg, &Tensor::full(&[1, 1, 2, 2], 1.0));
        let expected: Vec<f32> = (0..16)
            .map(|i| {
                let (y, x) = (i / 4, i % 4);
                if y % 2 == 0 && x % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn maxpool_pads_odd_extent() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let (y, _) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5., 6., 8., 9.]);
    }

    #[test]
    fn dense_identity_and_zero_input() {
        let x = t(&[2, 3], &[1., -2., 3., 0.5, 0., 4.]);
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);

        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let y = dense_forward(&Tensor::zeros(&[2, 3]), &w, &b).unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let y = relu_forward(&t(&[2], &[-1.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-100.0) >= 0.0 && sigmoid(100.0) <= 1.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let s = sigmoid_forward(&Tensor::scalar(0.0));
        let d = sigmoid_backward(&s, &Tensor::scalar(1.0)).data()[0];
        assert_eq!(d, 0.25);
        let h = 1e-3f32;
        let fd = (sigmoid(h) as f64 - sigmoid(-h) as f64) / (2.0 * h as f64);
        assert!((fd - 0.25).abs() <= 1e-4, "fd = {fd}");
    }

    #[test]
    fn upsample_then_backward_sums_blocks() {
        let x = t(&[1, 1, 1, 2], &[1.0, 2.0]);
        let y = upsample2_forward(&x).unwrap();
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
        let g = upsample2_backward(x.shape(), &Tensor::full(&[1, 1, 2, 4], 1.0));
        assert_eq!(g.data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_round_trips_through_backward() {
        let a = Tensor::full(&[2, 1, 2, 2], 1.0);
        let b = Tensor::full(&[2, 2, 2, 2], 2.0);
        let y = concat_forward(&a, &b).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
        let (ga, gb) = concat_backward(a.shape(), b.shape(), &y);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn batchnorm_constant_input_is_zero() {
        let x = Tensor::full(&[3, 2, 2, 2], 4.2);
        let (mean, var) = channel_stats(&x).unwrap();
        let (y, _) = batchnorm_apply(
            &x,
            &mean,
            &var,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            1e-5,
            true,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-6));
    }
}
