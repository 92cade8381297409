//! Dense 3D network kernels: strided convolution, nearest-neighbor
//! upsampling, per-channel batch normalization, and the isotropic total
//! variation functional.
//!
//! Tensors are channel-major: activations are `(C, D, H, W)`, kernels are
//! `(C_out, C_in, KD, KH, KW)`. Convolutions use zero padding; output extent
//! is `input / stride`, and the stride must divide the input extent so that
//! down- and up-sampling paths mirror exactly.
//!
//! The loops below are plain f64 with contiguous inner rows; parallelism is
//! over output (or input) channels, whose writes are disjoint, so results do
//! not depend on thread count.

use crate::parallel::for_each_indexed;
use ndarray::{Array3, Array4, Array5, ArrayView3, ArrayView4, ArrayView5, Axis, s};

/// Output extent of a convolution axis; panics on unusable combinations.
fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(stride >= 1, "stride must be >= 1");
    assert!(
        kernel % 2 == 1 && pad == (kernel - 1) / 2,
        "convolution requires odd kernel with matching pad (kernel {kernel}, pad {pad})"
    );
    assert!(
        input % stride == 0,
        "stride {stride} does not divide input extent {input}"
    );
    assert!(input + 2 * pad >= kernel, "kernel {kernel} larger than padded input {input}");
    input / stride
}

/// Valid output index range along one axis for a fixed kernel offset:
/// all `o` with `0 <= o*stride + koff - pad < input`.
fn out_range(input: usize, out: usize, stride: usize, koff: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > koff { (pad - koff).div_ceil(stride) } else { 0 };
    let hi_raw = (input - 1 + pad - koff) / stride; // numerator >= 0 whenever lo <= hi
    let hi = hi_raw.min(out.saturating_sub(1));
    (lo, hi)
}

/// Strided zero-padded 3D convolution.
pub fn conv3d_forward(
    x: ArrayView4<'_, f64>,
    k: ArrayView5<'_, f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (c_in, d, h, w) = x.dim();
    let (c_out, kc_in, kd, kh, kw) = k.dim();
    assert!(
        c_in == kc_in,
        "kernel expects {kc_in} input channels, activation has {c_in}"
    );
    let od = conv_out_extent(d, kd, stride, pad);
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);

    let mut y = Array4::<f64>::zeros((c_out, od, oh, ow));
    let lanes: Vec<_> = y.outer_iter_mut().collect();
    for_each_indexed(lanes, |co, mut y_c| {
        for ci in 0..c_in {
            let x_c = x.index_axis(Axis(0), ci);
            for zk in 0..kd {
                let (od_lo, od_hi) = out_range(d, od, stride, zk, pad);
                for yk in 0..kh {
                    let (oh_lo, oh_hi) = out_range(h, oh, stride, yk, pad);
                    for xk in 0..kw {
                        let (ow_lo, ow_hi) = out_range(w, ow, stride, xk, pad);
                        if od_lo > od_hi || oh_lo > oh_hi || ow_lo > ow_hi {
                            continue;
                        }
                        let wgt = k[[co, ci, zk, yk, xk]];
                        let iw0 = ow_lo * stride + xk - pad;
                        for o_d in od_lo..=od_hi {
                            let i_d = o_d * stride + zk - pad;
                            for o_h in oh_lo..=oh_hi {
                                let i_h = o_h * stride + yk - pad;
                                let x_row = x_c.slice(s![i_d, i_h, ..]);
                                let x_row = x_row.to_slice().expect("contiguous row");
                                let mut y_row = y_c.slice_mut(s![o_d, o_h, ow_lo..=ow_hi]);
                                let y_row = y_row.as_slice_mut().expect("contiguous row");
                                if stride == 1 {
                                    for (t, yv) in y_row.iter_mut().enumerate() {
                                        *yv += wgt * x_row[iw0 + t];
                                    }
                                } else {
                                    for (t, yv) in y_row.iter_mut().enumerate() {
                                        *yv += wgt * x_row[iw0 + t * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Gradient of [`conv3d_forward`] with respect to the activation.
pub fn conv3d_input_grad(
    gy: ArrayView4<'_, f64>,
    k: ArrayView5<'_, f64>,
    stride: usize,
    pad: usize,
    in_spatial: [usize; 3],
) -> Array4<f64> {
    let (c_out, od, oh, ow) = gy.dim();
    let (kc_out, c_in, kd, kh, kw) = k.dim();
    assert!(c_out == kc_out, "kernel/output channel mismatch");
    let [d, h, w] = in_spatial;

    let mut gx = Array4::<f64>::zeros((c_in, d, h, w));
    let lanes: Vec<_> = gx.outer_iter_mut().collect();
    for_each_indexed(lanes, |ci, mut gx_c| {
        for co in 0..c_out {
            let gy_c = gy.index_axis(Axis(0), co);
            for zk in 0..kd {
                let (od_lo, od_hi) = out_range(d, od, stride, zk, pad);
                for yk in 0..kh {
                    let (oh_lo, oh_hi) = out_range(h, oh, stride, yk, pad);
                    for xk in 0..kw {
                        let (ow_lo, ow_hi) = out_range(w, ow, stride, xk, pad);
                        if od_lo > od_hi || oh_lo > oh_hi || ow_lo > ow_hi {
                            continue;
                        }
                        let wgt = k[[co, ci, zk, yk, xk]];
                        let iw0 = ow_lo * stride + xk - pad;
                        for o_d in od_lo..=od_hi {
                            let i_d = o_d * stride + zk - pad;
                            for o_h in oh_lo..=oh_hi {
                                let i_h = o_h * stride + yk - pad;
                                let g_row = gy_c.slice(s![o_d, o_h, ow_lo..=ow_hi]);
                                let g_row = g_row.to_slice().expect("contiguous row");
                                let mut x_row = gx_c.slice_mut(s![i_d, i_h, ..]);
                                let x_row = x_row.as_slice_mut().expect("contiguous row");
                                for (t, gv) in g_row.iter().enumerate() {
                                    x_row[iw0 + t * stride] += wgt * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of [`conv3d_forward`] with respect to the kernel.
pub fn conv3d_kernel_grad(
    x: ArrayView4<'_, f64>,
    gy: ArrayView4<'_, f64>,
    stride: usize,
    pad: usize,
    kernel_shape: [usize; 5],
) -> Array5<f64> {
    let (c_in, d, h, w) = x.dim();
    let (c_out, od, oh, ow) = gy.dim();
    let [kc_out, kc_in, kd, kh, kw] = kernel_shape;
    assert!(c_out == kc_out && c_in == kc_in, "kernel shape mismatch");
    let _ = w;

    let mut gk = Array5::<f64>::zeros((c_out, c_in, kd, kh, kw));
    let lanes: Vec<_> = gk.outer_iter_mut().collect();
    for_each_indexed(lanes, |co, mut gk_c| {
        let gy_c = gy.index_axis(Axis(0), co);
        for ci in 0..c_in {
            let x_c = x.index_axis(Axis(0), ci);
            for zk in 0..kd {
                let (od_lo, od_hi) = out_range(d, od, stride, zk, pad);
                for yk in 0..kh {
                    let (oh_lo, oh_hi) = out_range(h, oh, stride, yk, pad);
                    for xk in 0..kw {
                        let (ow_lo, ow_hi) = out_range(x.dim().3, ow, stride, xk, pad);
                        if od_lo > od_hi || oh_lo > oh_hi || ow_lo > ow_hi {
                            continue;
                        }
                        let iw0 = ow_lo * stride + xk - pad;
                        let mut acc = 0.0;
                        for o_d in od_lo..=od_hi {
                            let i_d = o_d * stride + zk - pad;
                            for o_h in oh_lo..=oh_hi {
                                let i_h = o_h * stride + yk - pad;
                                let g_row = gy_c.slice(s![o_d, o_h, ow_lo..=ow_hi]);
                                let g_row = g_row.to_slice().expect("contiguous row");
                                let x_row = x_c.slice(s![i_d, i_h, ..]);
                                let x_row = x_row.to_slice().expect("contiguous row");
                                for (t, gv) in g_row.iter().enumerate() {
                                    acc += gv * x_row[iw0 + t * stride];
                                }
                            }
                        }
                        gk_c[[ci, zk, yk, xk]] = acc;
                    }
                }
            }
        }
    });
    gk
}

/// Nearest-neighbor upsampling by an integer factor along all spatial axes.
pub fn upsample3_forward(x: ArrayView4<'_, f64>, factor: usize) -> Array4<f64> {
    assert!(factor >= 1, "upsampling factor must be >= 1");
    let (c, d, h, w) = x.dim();
    Array4::from_shape_fn((c, d * factor, h * factor, w * factor), |(ci, i, j, l)| {
        x[[ci, i / factor, j / factor, l / factor]]
    })
}

/// Gradient of [`upsample3_forward`]: sums each `factor^3` block.
pub fn upsample3_input_grad(gy: ArrayView4<'_, f64>, factor: usize) -> Array4<f64> {
    let (c, fd, fh, fw) = gy.dim();
    assert!(
        fd % factor == 0 && fh % factor == 0 && fw % factor == 0,
        "upsampled extent not a multiple of factor"
    );
    let (d, h, w) = (fd / factor, fh / factor, fw / factor);
    let mut gx = Array4::<f64>::zeros((c, d, h, w));
    for ci in 0..c {
        for i in 0..fd {
            for j in 0..fh {
                for l in 0..fw {
                    gx[[ci, i / factor, j / factor, l / factor]] += gy[[ci, i, j, l]];
                }
            }
        }
    }
    gx
}

/// Per-channel batch normalization with biased variance over the spatial axes.
pub fn batch_norm_forward(
    x: ArrayView4<'_, f64>,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Array4<f64> {
    let (c, _, _, _) = x.dim();
    assert!(gamma.len() == c && beta.len() == c, "scale/offset must have one entry per channel");
    let mut y = x.to_owned();
    for ci in 0..c {
        let mut ch = y.index_axis_mut(Axis(0), ci);
        let n = ch.len() as f64;
        let mean = ch.sum() / n;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma[ci], beta[ci]);
        ch.mapv_inplace(|v| (v - mean) * inv * g + b);
    }
    y
}

/// Gradients of [`batch_norm_forward`]; returns `(gx, ggamma, gbeta)`.
pub fn batch_norm_backward(
    x: ArrayView4<'_, f64>,
    gamma: &[f64],
    eps: f64,
    gy: ArrayView4<'_, f64>,
) -> (Array4<f64>, Vec<f64>, Vec<f64>) {
    let (c, _, _, _) = x.dim();
    assert!(gy.dim() == x.dim(), "gradient/activation shape mismatch");
    let mut gx = Array4::<f64>::zeros(x.raw_dim());
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for ci in 0..c {
        let xc = x.index_axis(Axis(0), ci);
        let gc = gy.index_axis(Axis(0), ci);
        let n = xc.len() as f64;
        let mean = xc.sum() / n;
        let var = xc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let mut sum_g = 0.0;
        let mut sum_gxhat = 0.0;
        ndarray::Zip::from(&xc).and(&gc).for_each(|&xv, &gv| {
            sum_g += gv;
            sum_gxhat += gv * (xv - mean) * inv;
        });
        ggamma[ci] = sum_gxhat;
        gbeta[ci] = sum_g;
        let (mg, mgx) = (sum_g / n, sum_gxhat / n);
        let gamma_inv = gamma[ci] * inv;
        let mut out = gx.index_axis_mut(Axis(0), ci);
        ndarray::Zip::from(&mut out).and(&xc).and(&gc).for_each(|o, &xv, &gv| {
            let xhat = (xv - mean) * inv;
            *o = gamma_inv * (gv - mg - xhat * mgx);
        });
    }
    (gx, ggamma, gbeta)
}

/// One-sided difference along `axis`; zero at the far boundary unless periodic.
#[inline]
fn fwd_diff(x: &ArrayView3<'_, f64>, idx: [usize; 3], axis: usize, periodic: bool) -> f64 {
    let n = x.dim();
    let extent = [n.0, n.1, n.2][axis];
    let mut up = idx;
    if idx[axis] + 1 < extent {
        up[axis] += 1;
    } else if periodic {
        up[axis] = 0;
    } else {
        return 0.0;
    }
    x[up] - x[idx]
}

/// Isotropic total variation: `sum_r sqrt(dx^2 + dy^2 + dz^2 + eps)` with
/// forward differences. `eps > 0` smooths the kink at zero gradient.
pub fn tv_isotropic_value(x: ArrayView3<'_, f64>, eps: f64, periodic: bool) -> f64 {
    let (d, h, w) = x.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..h {
            for l in 0..w {
                let idx = [i, j, l];
                let gx = fwd_diff(&x, idx, 0, periodic);
                let gy = fwd_diff(&x, idx, 1, periodic);
                let gz = fwd_diff(&x, idx, 2, periodic);
                acc += (gx * gx + gy * gy + gz * gz + eps).sqrt();
            }
        }
    }
    acc
}

/// Gradient of `scale * tv_isotropic_value(x)` with respect to `x`.
pub fn tv_isotropic_grad(
    x: ArrayView3<'_, f64>,
    eps: f64,
    periodic: bool,
    scale: f64,
) -> Array3<f64> {
    let (d, h, w) = x.dim();
    let mut g = Array3::<f64>::zeros((d, h, w));
    for i in 0..d {
        for j in 0..h {
            for l in 0..w {
                let idx = [i, j, l];
                let diffs = [
                    fwd_diff(&x, idx, 0, periodic),
                    fwd_diff(&x, idx, 1, periodic),
                    fwd_diff(&x, idx, 2, periodic),
                ];
                let s = (diffs[0] * diffs[0] + diffs[1] * diffs[1] + diffs[2] * diffs[2] + eps)
                    .sqrt();
                if s == 0.0 {
                    continue;
                }
                let extent = [d, h, w];
                for (axis, &dv) in diffs.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let mut up = idx;
                    if idx[axis] + 1 < extent[axis] {
                        up[axis] += 1;
                    } else {
                        up[axis] = 0; // only reachable in the periodic case
                    }
                    let wgt = scale * dv / s;
                    g[up] += wgt;
                    g[idx] -= wgt;
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array4, Array5};

    fn pseudo(seq: &mut u64) -> f64 {
        *seq = seq.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        ((*seq >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut s = seed;
        Array4::from_shape_fn(shape, |_| pseudo(&mut s))
    }

    fn rand5(shape: (usize, usize, usize, usize, usize), seed: u64) -> Array5<f64> {
        let mut s = seed;
        Array5::from_shape_fn(shape, |_| pseudo(&mut s))
    }

    /// Direct-summation convolution used as the oracle.
    fn conv3d_naive(x: &Array4<f64>, k: &Array5<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (c_in, d, h, w) = x.dim();
        let (c_out, _, kd, kh, kw) = k.dim();
        let (od, oh, ow) = (d / stride, h / stride, w / stride);
        let mut y = Array4::<f64>::zeros((c_out, od, oh, ow));
        for co in 0..c_out {
            for o_d in 0..od {
                for o_h in 0..oh {
                    for o_w in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for zk in 0..kd {
                                for yk in 0..kh {
                                    for xk in 0..kw {
                                        let i_d = (o_d * stride + zk) as isize - pad as isize;
                                        let i_h = (o_h * stride + yk) as isize - pad as isize;
                                        let i_w = (o_w * stride + xk) as isize - pad as isize;
                                        if i_d < 0 || i_h < 0 || i_w < 0 {
                                            continue;
                                        }
                                        let (i_d, i_h, i_w) =
                                            (i_d as usize, i_h as usize, i_w as usize);
                                        if i_d >= d || i_h >= h || i_w >= w {
                                            continue;
                                        }
                                        acc += x[[ci, i_d, i_h, i_w]] * k[[co, ci, zk, yk, xk]];
                                    }
                                }
                            }
                        }
                        y[[co, o_d, o_h, o_w]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        for &stride in &[1usize, 2] {
            let x = rand4((3, 4, 6, 8), 42);
            let k = rand5((2, 3, 3, 3, 3), 7);
            let fast = conv3d_forward(x.view(), k.view(), stride, 1);
            let slow = conv3d_naive(&x, &k, stride, 1);
            let err = (&fast - &slow).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "stride {stride}: max err {err}");
        }
    }

    #[test]
    fn conv_grads_match_inner_product_identity() {
        // <gy, conv(x, k)> must equal <conv_input_grad(gy), x> and
        // <conv_kernel_grad(gy), k> — the defining adjoint property.
        for &stride in &[1usize, 2] {
            let x = rand4((2, 4, 4, 6), 1);
            let k = rand5((3, 2, 3, 3, 3), 2);
            let y = conv3d_forward(x.view(), k.view(), stride, 1);
            let gy = rand4(y.dim(), 3);
            let lhs: f64 = (&gy * &y).sum();
            let gx = conv3d_input_grad(gy.view(), k.view(), stride, 1, [4, 4, 6]);
            let gk = conv3d_kernel_grad(x.view(), gy.view(), stride, 1, [3, 2, 3, 3, 3]);
            let via_x: f64 = (&gx * &x).sum();
            let via_k: f64 = (&gk * &k).sum();
            assert!((lhs - via_x).abs() < 1e-10, "stride {stride}: {lhs} vs {via_x}");
            assert!((lhs - via_k).abs() < 1e-10, "stride {stride}: {lhs} vs {via_k}");
        }
    }

    #[test]
    #[should_panic(expected = "does not divide")]
    fn conv_rejects_non_dividing_stride() {
        let x = rand4((1, 5, 4, 4), 9);
        let k = rand5((1, 1, 3, 3, 3), 9);
        conv3d_forward(x.view(), k.view(), 2, 1);
    }

    #[test]
    fn upsample_roundtrip_shapes_and_adjoint() {
        let x = rand4((2, 3, 2, 4), 5);
        let y = upsample3_forward(x.view(), 2);
        assert_eq!(y.dim(), (2, 6, 4, 8));
        assert_eq!(y[[1, 5, 3, 7]], x[[1, 2, 1, 3]]);
        let gy = rand4(y.dim(), 6);
        let gx = upsample3_input_grad(gy.view(), 2);
        let lhs: f64 = (&gy * &y).sum();
        let rhs: f64 = (&gx * &x).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let x = rand4((3, 4, 4, 4), 8);
        let y = batch_norm_forward(x.view(), &[1.0; 3], &[0.0; 3], 1e-5);
        for c in 0..3 {
            let ch = y.index_axis(Axis(0), c);
            let n = ch.len() as f64;
            let mean = ch.sum() / n;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3); // eps shifts variance slightly below 1
        }
    }

    #[test]
    fn tv_of_linear_ramp_matches_hand_count() {
        // x[i, j, l] = i: forward differences are 1 along axis 0 except the
        // last plane (replicate boundary), 0 elsewhere; eps = 0.
        let x = ndarray::Array3::from_shape_fn((3, 2, 2), |(i, _, _)| i as f64);
        let tv = tv_isotropic_value(x.view(), 0.0, false);
        assert!((tv - 8.0).abs() < 1e-12, "got {tv}");
    }

    #[test]
    fn tv_grad_matches_finite_differences() {
        let mut s = 77u64;
        let x = ndarray::Array3::from_shape_fn((3, 3, 3), |_| pseudo(&mut s));
        for &periodic in &[false, true] {
            let eps = 1e-3;
            let g = tv_isotropic_grad(x.view(), eps, periodic, 1.0);
            let h = 1e-6;
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        let mut xp = x.clone();
                        xp[[i, j, l]] += h;
                        let mut xm = x.clone();
                        xm[[i, j, l]] -= h;
                        let fd = (tv_isotropic_value(xp.view(), eps, periodic)
                            - tv_isotropic_value(xm.view(), eps, periodic))
                            / (2.0 * h);
                        assert!(
                            (fd - g[[i, j, l]]).abs() < 1e-6,
                            "periodic={periodic} at ({i},{j},{l}): fd {fd} vs {}",
                            g[[i, j, l]]
                        );
                    }
                }
            }
        }
    }
}
