//! Layer primitives with exact adjoints, every tensor in (batch, channel,
//! t, z, x) layout. Forwards match the direct loop definitions; backwards
//! are verified against central finite differences.

use super::tensor::{Element, Tensor};
use crate::{Error, Result};

fn expect_rank5<E: Element>(t: &Tensor<E>, what: &str) -> Result<()> {
    if t.shape().len() != 5 {
        return Err(Error::shape(format!("{what} of rank 5"), format!("rank {}", t.shape().len())));
    }
    Ok(())
}

fn dims5<E: Element>(t: &Tensor<E>) -> [usize; 5] {
    t.shape().try_into().expect("rank checked")
}

/// Zero-padded stride-1 3D convolution. Weight is (c_out, c_in, kt, kz, kx)
/// with odd kernel sides; bias is (c_out).
pub fn conv3d_forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (w_dims, [b, _, tt, zz, xx]) = conv_shapes(input, weight, bias)?;
    let [c_out, c_in, kt, kz, kx] = w_dims;
    let (ht, hz, hx) = (kt / 2, kz / 2, kx / 2);
    let mut out = Tensor::zeros(&[b, c_out, tt, zz, xx]);

    let in_d = input.data();
    let w_d = weight.data();
    let out_d = out.data_mut();
    let (s_x, s_z, s_t, s_c) = (1usize, xx, zz * xx, tt * zz * xx);
    let s_b = c_in * s_c;
    let (ws_x, ws_z, ws_t, ws_c) = (1usize, kx, kz * kx, kt * kz * kx);
    let ws_o = c_in * ws_c;
    let o_sc = tt * zz * xx;

    for bi in 0..b {
        for co in 0..c_out {
            let bias_v = bias.data()[co];
            let o_base = bi * c_out * o_sc + co * o_sc;
            for t in 0..tt {
                let kt_lo = ht.saturating_sub(t);
                let kt_hi = kt.min(tt + ht - t);
                for z in 0..zz {
                    let kz_lo = hz.saturating_sub(z);
                    let kz_hi = kz.min(zz + hz - z);
                    for x in 0..xx {
                        let kx_lo = hx.saturating_sub(x);
                        let kx_hi = kx.min(xx + hx - x);
                        let mut acc = bias_v;
                        for ci in 0..c_in {
                            for kti in kt_lo..kt_hi {
                                let ti = t + kti - ht;
                                for kzi in kz_lo..kz_hi {
                                    let zi = z + kzi - hz;
                                    let row = bi * s_b + ci * s_c + ti * s_t + zi * s_z;
                                    let wrow = co * ws_o + ci * ws_c + kti * ws_t + kzi * ws_z;
                                    for kxi in kx_lo..kx_hi {
                                        let xi = x + kxi - hx;
                                        acc += in_d[row + xi * s_x] * w_d[wrow + kxi * ws_x];
                                    }
                                }
                            }
                        }
                        out_d[o_base + t * s_t + z * s_z + x] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss with respect to the convolution input,
/// weight, and bias, given the upstream output gradient.
pub fn conv3d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    upstream: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (w_dims, [b, _, tt, zz, xx]) = conv_shapes(input, weight, bias)?;
    let [c_out, c_in, kt, kz, kx] = w_dims;
    if upstream.shape() != [b, c_out, tt, zz, xx] {
        return Err(Error::shape(
            format!("{:?}", [b, c_out, tt, zz, xx]),
            format!("{:?}", upstream.shape()),
        ));
    }
    let (ht, hz, hx) = (kt / 2, kz / 2, kx / 2);
    let mut d_in = Tensor::zeros(input.shape());
    let mut d_w = Tensor::zeros(weight.shape());
    let mut d_b = Tensor::zeros(bias.shape());

    let in_d = input.data();
    let w_d = weight.data();
    let up_d = upstream.data();
    let (s_z, s_t, s_c) = (xx, zz * xx, tt * zz * xx);
    let s_b = c_in * s_c;
    let (ws_z, ws_t, ws_c) = (kx, kz * kx, kt * kz * kx);
    let ws_o = c_in * ws_c;
    let o_sc = tt * zz * xx;

    for bi in 0..b {
        for co in 0..c_out {
            let o_base = bi * c_out * o_sc + co * o_sc;
            let mut bias_acc = E::ZERO;
            for t in 0..tt {
                let kt_lo = ht.saturating_sub(t);
                let kt_hi = kt.min(tt + ht - t);
                for z in 0..zz {
                    let kz_lo = hz.saturating_sub(z);
                    let kz_hi = kz.min(zz + hz - z);
                    for x in 0..xx {
                        let g = up_d[o_base + t * s_t + z * s_z + x];
                        bias_acc += g;
                        let kx_lo = hx.saturating_sub(x);
                        let kx_hi = kx.min(xx + hx - x);
                        for ci in 0..c_in {
                            for kti in kt_lo..kt_hi {
                                let ti = t + kti - ht;
                                for kzi in kz_lo..kz_hi {
                                    let zi = z + kzi - hz;
                                    let row = bi * s_b + ci * s_c + ti * s_t + zi * s_z;
                                    let wrow = co * ws_o + ci * ws_c + kti * ws_t + kzi * ws_z;
                                    for kxi in kx_lo..kx_hi {
                                        let xi = x + kxi - hx;
                                        d_in.data_mut()[row + xi] += g * w_d[wrow + kxi];
                                        d_w.data_mut()[wrow + kxi] += g * in_d[row + xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            d_b.data_mut()[co] += bias_acc;
        }
    }
    Ok((d_in, d_w, d_b))
}

type ConvShapes = ([usize; 5], [usize; 5]);

fn conv_shapes<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<ConvShapes> {
    expect_rank5(input, "input")?;
    expect_rank5(weight, "weight")?;
    let w_dims = dims5(weight);
    let in_dims = dims5(input);
    if in_dims[1] != w_dims[1] {
        return Err(Error::shape(
            format!("{} input channels", w_dims[1]),
            in_dims[1],
        ));
    }
    if w_dims[2] % 2 == 0 || w_dims[3] % 2 == 0 || w_dims[4] % 2 == 0 {
        return Err(Error::InvalidArgument("kernel sides must be odd".into()));
    }
    if bias.shape() != [w_dims[0]] {
        return Err(Error::shape(format!("bias ({},)", w_dims[0]), format!("{:?}", bias.shape())));
    }
    Ok((w_dims, in_dims))
}

/// Non-overlapping max pooling; window equals stride and must divide the
/// pooled dimensions. Returns the flat input index of each window maximum
/// (first index in scan order on ties) for the backward pass.
pub fn maxpool3d_forward<E: Element>(
    input: &Tensor<E>,
    window: (usize, usize, usize),
) -> Result<(Tensor<E>, Vec<usize>)> {
    expect_rank5(input, "input")?;
    let [b, c, tt, zz, xx] = dims5(input);
    let (pt, pz, px) = window;
    if pt == 0 || pz == 0 || px == 0 || tt % pt != 0 || zz % pz != 0 || xx % px != 0 {
        return Err(Error::shape(
            format!("dims divisible by window {window:?}"),
            format!("{:?}", input.shape()),
        ));
    }
    let (ot, oz, ox) = (tt / pt, zz / pz, xx / px);
    let mut out = Tensor::zeros(&[b, c, ot, oz, ox]);
    let mut argmax = vec![0usize; out.len()];
    let in_d = input.data();
    let (s_z, s_t) = (xx, zz * xx);

    let mut o_i = 0usize;
    for bc in 0..b * c {
        let base = bc * tt * zz * xx;
        for t0 in 0..ot {
            for z0 in 0..oz {
                for x0 in 0..ox {
                    let mut best_i = base + (t0 * pt) * s_t + (z0 * pz) * s_z + x0 * px;
                    let mut best = in_d[best_i];
                    for dt in 0..pt {
                        for dz in 0..pz {
                            for dx in 0..px {
                                let i = base
                                    + (t0 * pt + dt) * s_t
                                    + (z0 * pz + dz) * s_z
                                    + (x0 * px + dx);
                                if in_d[i] > best {
                                    best = in_d[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.data_mut()[o_i] = best;
                    argmax[o_i] = best_i;
                    o_i += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool3d_backward<E: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor<E>,
) -> Tensor<E> {
    debug_assert_eq!(argmax.len(), upstream.len());
    let mut d_in = Tensor::zeros(input_shape);
    for (o_i, &i) in argmax.iter().enumerate() {
        d_in.data_mut()[i] += upstream.data()[o_i];
    }
    d_in
}

/// Non-overlapping average pooling (used along t for skip features).
pub fn avgpool3d_forward<E: Element>(
    input: &Tensor<E>,
    window: (usize, usize, usize),
) -> Result<Tensor<E>> {
    expect_rank5(input, "input")?;
    let [b, c, tt, zz, xx] = dims5(input);
    let (pt, pz, px) = window;
    if pt == 0 || pz == 0 || px == 0 || tt % pt != 0 || zz % pz != 0 || xx % px != 0 {
        return Err(Error::shape(
            format!("dims divisible by window {window:?}"),
            format!("{:?}", input.shape()),
        ));
    }
    let (ot, oz, ox) = (tt / pt, zz / pz, xx / px);
    let inv = E::ONE / E::from_f64((pt * pz * px) as f64);
    let mut out = Tensor::zeros(&[b, c, ot, oz, ox]);
    let in_d = input.data();
    let (s_z, s_t) = (xx, zz * xx);
    let mut o_i = 0usize;
    for bc in 0..b * c {
        let base = bc * tt * zz * xx;
        for t0 in 0..ot {
            for z0 in 0..oz {
                for x0 in 0..ox {
                    let mut acc = E::ZERO;
                    for dt in 0..pt {
                        for dz in 0..pz {
                            for dx in 0..px {
                                acc += in_d[base
                                    + (t0 * pt + dt) * s_t
                                    + (z0 * pz + dz) * s_z
                                    + (x0 * px + dx)];
                            }
                        }
                    }
                    out.data_mut()[o_i] = acc * inv;
                    o_i += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool3d_backward<E: Element>(
    input_shape: &[usize],
    window: (usize, usize, usize),
    upstream: &Tensor<E>,
) -> Tensor<E> {
    let [b, c, tt, zz, xx]: [usize; 5] = input_shape.try_into().expect("rank 5");
    let (pt, pz, px) = window;
    let (ot, oz, ox) = (tt / pt, zz / pz, xx / px);
    debug_assert_eq!(upstream.shape(), [b, c, ot, oz, ox]);
    let inv = E::ONE / E::from_f64((pt * pz * px) as f64);
    let mut d_in = Tensor::zeros(input_shape);
    let (s_z, s_t) = (xx, zz * xx);
    let mut o_i = 0usize;
    for bc in 0..b * c {
        let base = bc * tt * zz * xx;
        for t0 in 0..ot {
            for z0 in 0..oz {
                for x0 in 0..ox {
                    let g = upstream.data()[o_i] * inv;
                    o_i += 1;
                    for dt in 0..pt {
                        for dz in 0..pz {
                            for dx in 0..px {
                                d_in.data_mut()[base
                                    + (t0 * pt + dt) * s_t
                                    + (z0 * pz + dz) * s_z
                                    + (x0 * px + dx)] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Parametric rectifier with one learned slope per channel.
pub fn prelu_forward<E: Element>(input: &Tensor<E>, alpha: &Tensor<E>) -> Result<Tensor<E>> {
    expect_rank5(input, "input")?;
    let [b, c, tt, zz, xx] = dims5(input);
    if alpha.shape() != [c] {
        return Err(Error::shape(format!("alpha ({c},)"), format!("{:?}", alpha.shape())));
    }
    let mut out = input.clone();
    let plane = tt * zz * xx;
    for bi in 0..b {
        for ci in 0..c {
            let a = alpha.data()[ci];
            let base = (bi * c + ci) * plane;
            for v in &mut out.data_mut()[base..base + plane] {
                if !(*v > E::ZERO) {
                    *v = *v * a;
                }
            }
        }
    }
    Ok(out)
}

pub fn prelu_backward<E: Element>(
    input: &Tensor<E>,
    alpha: &Tensor<E>,
    upstream: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    expect_rank5(input, "input")?;
    let [b, c, tt, zz, xx] = dims5(input);
    if upstream.shape() != input.shape() {
        return Err(Error::shape(format!("{:?}", input.shape()), format!("{:?}", upstream.shape())));
    }
    let mut d_in = Tensor::zeros(input.shape());
    let mut d_alpha = Tensor::zeros(alpha.shape());
    let plane = tt * zz * xx;
    for bi in 0..b {
        for ci in 0..c {
            let a = alpha.data()[ci];
            let base = (bi * c + ci) * plane;
            let mut a_acc = E::ZERO;
            for i in base..base + plane {
                let x = input.data()[i];
                let g = upstream.data()[i];
                if x > E::ZERO {
                    d_in.data_mut()[i] = g;
                } else {
                    d_in.data_mut()[i] = g * a;
                    a_acc += g * x;
                }
            }
            d_alpha.data_mut()[ci] += a_acc;
        }
    }
    Ok((d_in, d_alpha))
}

/// Nearest-neighbor upsampling by integer factors per axis.
pub fn nn_resize_forward<E: Element>(
    input: &Tensor<E>,
    factors: (usize, usize, usize),
) -> Result<Tensor<E>> {
    expect_rank5(input, "input")?;
    let [b, c, tt, zz, xx] = dims5(input);
    let (ft, fz, fx) = factors;
    if ft == 0 || fz == 0 || fx == 0 {
        return Err(Error::InvalidArgument("resize factors must be nonzero".into()));
    }
    let (ot, oz, ox) = (tt * ft, zz * fz, xx * fx);
    let mut out = Tensor::zeros(&[b, c, ot, oz, ox]);
    let in_d = input.data();
    let mut o_i = 0usize;
    for bc in 0..b * c {
        let base = bc * tt * zz * xx;
        for t in 0..ot {
            for z in 0..oz {
                for x in 0..ox {
                    out.data_mut()[o_i] =
                        in_d[base + (t / ft) * zz * xx + (z / fz) * xx + x / fx];
                    o_i += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn nn_resize_backward<E: Element>(
    input_shape: &[usize],
    factors: (usize, usize, usize),
    upstream: &Tensor<E>,
) -> Tensor<E> {
    let [b, c, tt, zz, xx]: [usize; 5] = input_shape.try_into().expect("rank 5");
    let (ft, fz, fx) = factors;
    debug_assert_eq!(upstream.shape(), [b, c, tt * ft, zz * fz, xx * fx]);
    let mut d_in = Tensor::zeros(input_shape);
    let (ot, oz, ox) = (tt * ft, zz * fz, xx * fx);
    let mut o_i = 0usize;
    for bc in 0..b * c {
        let base = bc * tt * zz * xx;
        for t in 0..ot {
            for z in 0..oz {
                for x in 0..ox {
                    d_in.data_mut()[base + (t / ft) * zz * xx + (z / fz) * xx + x / fx] +=
                        upstream.data()[o_i];
                    o_i += 1;
                }
            }
        }
    }
    d_in
}

/// Stack `a`'s channels before `b`'s; all other dims must agree.
pub fn concat_channels<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    expect_rank5(a, "lhs")?;
    expect_rank5(b, "rhs")?;
    let da = dims5(a);
    let db = dims5(b);
    if da[0] != db[0] || da[2..] != db[2..] {
        return Err(Error::shape(format!("{da:?} vs matching dims"), format!("{db:?}")));
    }
    let plane = da[2] * da[3] * da[4];
    let mut out = Tensor::zeros(&[da[0], da[1] + db[1], da[2], da[3], da[4]]);
    for bi in 0..da[0] {
        let o_base = bi * (da[1] + db[1]) * plane;
        out.data_mut()[o_base..o_base + da[1] * plane]
            .copy_from_slice(&a.data()[bi * da[1] * plane..(bi + 1) * da[1] * plane]);
        out.data_mut()[o_base + da[1] * plane..o_base + (da[1] + db[1]) * plane]
            .copy_from_slice(&b.data()[bi * db[1] * plane..(bi + 1) * db[1] * plane]);
    }
    Ok(out)
}

/// Adjoint of `concat_channels`: split the gradient at channel `c_a`.
pub fn split_channels<E: Element>(upstream: &Tensor<E>, c_a: usize) -> (Tensor<E>, Tensor<E>) {
    let [b, c, tt, zz, xx] = dims5(upstream);
    debug_assert!(c_a <= c);
    let plane = tt * zz * xx;
    let mut a = Tensor::zeros(&[b, c_a, tt, zz, xx]);
    let mut rest = Tensor::zeros(&[b, c - c_a, tt, zz, xx]);
    for bi in 0..b {
        let base = bi * c * plane;
        a.data_mut()[bi * c_a * plane..(bi + 1) * c_a * plane]
            .copy_from_slice(&upstream.data()[base..base + c_a * plane]);
        rest.data_mut()[bi * (c - c_a) * plane..(bi + 1) * (c - c_a) * plane]
            .copy_from_slice(&upstream.data()[base + c_a * plane..base + c * plane]);
    }
    (a, rest)
}

/// Collapse the temporal axis to length 1 by averaging.
pub fn temporal_mean_forward<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let [b, c, tt, zz, xx] = dims5(input);
    let mut out = Tensor::zeros(&[b, c, 1, zz, xx]);
    let inv = E::ONE / E::from_f64(tt as f64);
    let plane = zz * xx;
    for bc in 0..b * c {
        for t in 0..tt {
            let base = bc * tt * plane + t * plane;
            for i in 0..plane {
                out.data_mut()[bc * plane + i] += input.data()[base + i];
            }
        }
    }
    for v in out.data_mut() {
        *v = *v * inv;
    }
    out
}

pub fn temporal_mean_backward<E: Element>(input_shape: &[usize], upstream: &Tensor<E>) -> Tensor<E> {
    let [b, c, tt, zz, xx]: [usize; 5] = input_shape.try_into().expect("rank 5");
    debug_assert_eq!(upstream.shape(), [b, c, 1, zz, xx]);
    let inv = E::ONE / E::from_f64(tt as f64);
    let mut d_in = Tensor::zeros(input_shape);
    let plane = zz * xx;
    for bc in 0..b * c {
        for t in 0..tt {
            let base = bc * tt * plane + t * plane;
            for i in 0..plane {
                d_in.data_mut()[base + i] = upstream.data()[bc * plane + i] * inv;
            }
        }
    }
    d_in
}

/// Logits are clamped to this magnitude before the sigmoid. Keeps the
/// output strictly inside (0, 1) in 32-bit (plain sigmoid rounds to exactly
/// 1 past ~17) and leaves the derivative large enough (~3e-7) that a
/// saturated head recovers at a useful optimizer step size.
pub const SIGMOID_CLAMP: f64 = 15.0;

fn clamp_logit<E: Element>(v: E) -> E {
    let hi = E::from_f64(SIGMOID_CLAMP);
    if v > hi {
        hi
    } else if -v > hi {
        -hi
    } else {
        v
    }
}

pub fn sigmoid_forward<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    input.map(|v| {
        let x = clamp_logit(v);
        E::ONE / (E::ONE + (-x).exp())
    })
}

/// Backward from the pre-sigmoid input: dy/dx = sigma(x) * sigma(-x) at the
/// clamped logit. Computed from x rather than y(1 - y) so the derivative
/// never rounds to zero.
pub fn sigmoid_backward<E: Element>(input: &Tensor<E>, upstream: &Tensor<E>) -> Tensor<E> {
    debug_assert_eq!(input.shape(), upstream.shape());
    let mut d_in = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        let x = clamp_logit(input.data()[i]);
        let pos = E::ONE / (E::ONE + (-x).exp());
        let neg = E::ONE / (E::ONE + x.exp());
        d_in.data_mut()[i] = upstream.data()[i] * pos * neg;
    }
    d_in
}

pub const DICE_SMOOTHING: f64 = 1.0;

/// Smoothed dice loss, 1 - (2 sum(p g) + eps) / (sum p + sum g + eps),
/// and its exact gradient with respect to the prediction.
pub fn dice_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<(E, Tensor<E>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("{:?}", pred.shape()), format!("{:?}", target.shape())));
    }
    let eps = E::from_f64(DICE_SMOOTHING);
    let two = E::from_f64(2.0);
    let mut inter = E::ZERO;
    let mut p_sum = E::ZERO;
    let mut g_sum = E::ZERO;
    for i in 0..pred.len() {
        inter += pred.data()[i] * target.data()[i];
        p_sum += pred.data()[i];
        g_sum += target.data()[i];
    }
    let num = two * inter + eps;
    let den = p_sum + g_sum + eps;
    let loss = E::ONE - num / den;
    let mut grad = Tensor::zeros(pred.shape());
    for i in 0..pred.len() {
        // d/dp_i [num/den] = (2 g_i den - num) / den^2.
        grad.data_mut()[i] = -(two * target.data()[i] * den - num) / (den * den);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::check::{
        max_rel_error, numeric_gradient, random_tensor, weighted_sum, FD_STEP, FD_TOLERANCE,
    };
    use crate::rng::seeded;

    #[test]
    fn dirac_kernel_is_the_identity() {
        let mut rng = seeded(11);
        let input = random_tensor(&[1, 1, 4, 5, 6], &mut rng, -1.0, 1.0);
        let mut weight = Tensor::zeros(&[1, 1, 3, 3, 3]);
        weight.data_mut()[13] = 1.0; // kernel center
        let bias = Tensor::zeros(&[1]);
        let out = conv3d_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out, input);

        let biased = conv3d_forward(&input, &weight, &Tensor::from_vec(&[1], vec![0.5]).unwrap())
            .unwrap();
        assert!((biased.data()[7] - (input.data()[7] + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_mismatched_shapes() {
        let input = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
        let weight = Tensor::<f32>::zeros(&[3, 1, 3, 3, 3]);
        let bias = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(
            conv3d_forward(&input, &weight, &bias),
            Err(Error::ShapeMismatch { .. })
        ));
        let even = Tensor::<f32>::zeros(&[3, 2, 2, 3, 3]);
        assert!(conv3d_forward(&input, &even, &bias).is_err());
    }

    #[test]
    fn maxpool_routes_constant_gradient_to_the_first_window_index() {
        let input = Tensor::from_vec(&[1, 1, 4, 2, 2], vec![1.0f64; 16]).unwrap();
        let (out, argmax) = maxpool3d_forward(&input, (4, 2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(argmax, vec![0]);
        let up = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let d_in = maxpool3d_backward(input.shape(), &argmax, &up);
        assert_eq!(d_in.data()[0], 2.0);
        assert!(d_in.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_requires_divisible_dims() {
        let input = Tensor::<f32>::zeros(&[1, 1, 5, 4, 4]);
        assert!(maxpool3d_forward(&input, (4, 2, 2)).is_err());
        assert!(avgpool3d_forward(&input, (4, 2, 2)).is_err());
    }

    #[test]
    fn resize_replicates_and_its_adjoint_sums() {
        let input = Tensor::from_vec(&[1, 1, 1, 1, 2], vec![3.0f64, 5.0]).unwrap();
        let out = nn_resize_forward(&input, (1, 2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 2, 4]);
        assert_eq!(out.data(), &[3.0, 3.0, 5.0, 5.0, 3.0, 3.0, 5.0, 5.0]);
        let up = Tensor::from_vec(&[1, 1, 1, 2, 4], vec![1.0; 8]).unwrap();
        let d_in = nn_resize_backward(input.shape(), (1, 2, 2), &up);
        assert_eq!(d_in.data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_then_split_roundtrips() {
        let mut rng = seeded(12);
        let a = random_tensor(&[2, 2, 2, 3, 3], &mut rng, -1.0, 1.0);
        let b = random_tensor(&[2, 3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[2, 5, 2, 3, 3]);
        let (a2, b2) = split_channels(&cat, 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
        assert!(concat_channels(&a, &Tensor::zeros(&[1, 3, 2, 3, 3])).is_err());
    }

    #[test]
    fn dice_loss_matches_hand_values() {
        let g = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0f64, 1.0, 1.0, 0.0]).unwrap();
        let (zero_loss, _) = dice_loss(&g, &g).unwrap();
        assert!(zero_loss.abs() < 1e-12);

        // p = 0 against |g| = s gives s/(s+1).
        let p = Tensor::zeros(&[1, 1, 1, 2, 2]);
        let (loss, _) = dice_loss(&p, &g).unwrap();
        assert!((loss - 3.0 / 4.0).abs() < 1e-12);
    }

    /// One finite-difference pass per op kind; the acceptance gate runs the
    /// full randomized battery.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = seeded(13);
        let shape = [1usize, 2, 4, 4, 4];

        // Convolution: input, weight, and bias gradients.
        let input = random_tensor(&shape, &mut rng, -1.0, 1.0);
        let weight = random_tensor(&[3, 2, 3, 3, 3], &mut rng, -0.5, 0.5);
        let bias = random_tensor(&[3], &mut rng, -0.5, 0.5);
        let up = random_tensor(&[1, 3, 4, 4, 4], &mut rng, -1.0, 1.0);
        let (d_in, d_w, d_b) = conv3d_backward(&input, &weight, &bias, &up).unwrap();
        let num_in = numeric_gradient(
            |x| weighted_sum(&conv3d_forward(x, &weight, &bias).unwrap(), &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num_in) < FD_TOLERANCE);
        let num_w = numeric_gradient(
            |w| weighted_sum(&conv3d_forward(&input, w, &bias).unwrap(), &up),
            &weight,
            FD_STEP,
        );
        assert!(max_rel_error(&d_w, &num_w) < FD_TOLERANCE);
        let num_b = numeric_gradient(
            |b| weighted_sum(&conv3d_forward(&input, &weight, b).unwrap(), &up),
            &bias,
            FD_STEP,
        );
        assert!(max_rel_error(&d_b, &num_b) < FD_TOLERANCE);

        // Max pooling.
        let input = random_tensor(&[1, 2, 8, 4, 4], &mut rng, -1.0, 1.0);
        let up = random_tensor(&[1, 2, 2, 2, 2], &mut rng, -1.0, 1.0);
        let (_, argmax) = maxpool3d_forward(&input, (4, 2, 2)).unwrap();
        let d_in = maxpool3d_backward(input.shape(), &argmax, &up);
        let num = numeric_gradient(
            |x| weighted_sum(&maxpool3d_forward(x, (4, 2, 2)).unwrap().0, &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num) < FD_TOLERANCE);

        // Average pooling along t.
        let up = random_tensor(&[1, 2, 2, 4, 4], &mut rng, -1.0, 1.0);
        let d_in = avgpool3d_backward(input.shape(), (4, 1, 1), &up);
        let num = numeric_gradient(
            |x| weighted_sum(&avgpool3d_forward(x, (4, 1, 1)).unwrap(), &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num) < FD_TOLERANCE);

        // Parametric rectifier: input and slope gradients.
        let input = random_tensor(&[1, 3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let alpha = random_tensor(&[3], &mut rng, 0.1, 0.4);
        let up = random_tensor(&[1, 3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let (d_in, d_alpha) = prelu_backward(&input, &alpha, &up).unwrap();
        let num_in = numeric_gradient(
            |x| weighted_sum(&prelu_forward(x, &alpha).unwrap(), &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num_in) < FD_TOLERANCE);
        let num_alpha = numeric_gradient(
            |a| weighted_sum(&prelu_forward(&input, a).unwrap(), &up),
            &alpha,
            FD_STEP,
        );
        assert!(max_rel_error(&d_alpha, &num_alpha) < FD_TOLERANCE);

        // Nearest-neighbor resize.
        let input = random_tensor(&[1, 2, 2, 3, 3], &mut rng, -1.0, 1.0);
        let up = random_tensor(&[1, 2, 2, 6, 6], &mut rng, -1.0, 1.0);
        let d_in = nn_resize_backward(input.shape(), (1, 2, 2), &up);
        let num = numeric_gradient(
            |x| weighted_sum(&nn_resize_forward(x, (1, 2, 2)).unwrap(), &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num) < FD_TOLERANCE);

        // Temporal mean collapse.
        let input = random_tensor(&[2, 2, 6, 3, 3], &mut rng, -1.0, 1.0);
        let up = random_tensor(&[2, 2, 1, 3, 3], &mut rng, -1.0, 1.0);
        let d_in = temporal_mean_backward(input.shape(), &up);
        let num = numeric_gradient(
            |x| weighted_sum(&temporal_mean_forward(x), &up),
            &input,
            FD_STEP,
        );
        assert!(max_rel_error(&d_in, &num) < FD_TOLERANCE);

        // Sigmoid.
        let input = random_tensor(&[1, 1, 2, 3, 3], &mut rng, -2.0, 2.0);
        let up = random_tensor(&[1, 1, 2, 3, 3], &mut rng, -1.0, 1.0);
        let d_in = sigmoid_backward(&input, &up);
        let num = numeric_gradient(|x| weighted_sum(&sigmoid_forward(x), &up), &input, FD_STEP);
        assert!(max_rel_error(&d_in, &num) < FD_TOLERANCE);

        // Dice loss gradient.
        let pred = random_tensor(&[1, 1, 1, 4, 4], &mut rng, 0.05, 0.95);
        let mut target = Tensor::zeros(&[1, 1, 1, 4, 4]);
        for (i, v) in target.data_mut().iter_mut().enumerate() {
            *v = if i % 3 == 0 { 1.0 } else { 0.0 };
        }
        let (_, grad) = dice_loss(&pred, &target).unwrap();
        let num = numeric_gradient(|p| dice_loss(p, &target).unwrap().0, &pred, FD_STEP);
        assert!(max_rel_error(&grad, &num) < FD_TOLERANCE);
    }
}
