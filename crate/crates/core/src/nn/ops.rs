//! Layer forward/backward passes.
//!
//! Every op comes as `*_forward` returning the output (plus whatever cache
//! the gradient needs) and `*_backward` mapping the upstream gradient to
//! input and parameter gradients. Gradients accumulate in fixed loop order
//! so training is bit-reproducible.

use rand::Rng;

use super::{Mode, NnError};
use crate::scalar::Scalar;
use crate::tensor::{matmul, NdArray};

const LOG_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

/// y = x W + b with x [B,in], W [in,out], b [out].
pub fn dense_forward<F: Scalar>(
    x: &NdArray<F>,
    w: &NdArray<F>,
    b: &NdArray<F>,
) -> Result<NdArray<F>, NnError> {
    if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(NnError::ShapeMismatch(format!(
            "dense: x {:?} vs W {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [w.shape()[1]] {
        return Err(NnError::ShapeMismatch(format!(
            "dense: b {:?} vs W {:?}",
            b.shape(),
            w.shape()
        )));
    }
    // seed the output with broadcast bias rows, then accumulate x W onto it
    let rows = x.shape()[0];
    let out = w.shape()[1];
    let mut data = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        data.extend_from_slice(b.data());
    }
    let mut y = NdArray::from_vec(&[rows, out], data);
    crate::tensor::matmul_acc(x, w, &mut y);
    Ok(y)
}

/// Gradients of the dense layer: returns dx and accumulates nothing itself.
pub fn dense_backward<F: Scalar>(
    x: &NdArray<F>,
    w: &NdArray<F>,
    gy: &NdArray<F>,
) -> (NdArray<F>, NdArray<F>, NdArray<F>) {
    let gx = matmul(gy, &w.transpose2());
    let gw = matmul(&x.transpose2(), gy);
    let out = w.shape()[1];
    let mut gb = NdArray::zeros(&[out]);
    for row in 0..gy.shape()[0] {
        let gy_row = &gy.data()[row * out..(row + 1) * out];
        for (acc, &g) in gb.data_mut().iter_mut().zip(gy_row) {
            *acc += g;
        }
    }
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

pub struct BatchNormCache<F> {
    /// Normalized input, [B,F].
    pub x_hat: NdArray<F>,
    /// 1 / sqrt(var + eps) per feature.
    pub inv_std: Vec<F>,
    pub mode: Mode,
}

pub struct BatchNormOut<F> {
    pub y: NdArray<F>,
    pub cache: BatchNormCache<F>,
    /// Batch mean/var (biased), only produced in train mode; the caller
    /// folds them into the running statistics.
    pub batch_mean: Option<Vec<F>>,
    pub batch_var: Option<Vec<F>>,
}

/// Per-feature standardization with scale/shift. Train mode uses batch
/// statistics, infer mode the provided running statistics.
pub fn batch_norm_forward<F: Scalar>(
    x: &NdArray<F>,
    gamma: &NdArray<F>,
    beta: &NdArray<F>,
    running_mean: &NdArray<F>,
    running_var: &NdArray<F>,
    eps: F,
    mode: Mode,
) -> Result<BatchNormOut<F>, NnError> {
    if x.shape().len() != 2 {
        return Err(NnError::ShapeMismatch(format!("batch_norm: x {:?}", x.shape())));
    }
    let (b, f) = (x.shape()[0], x.shape()[1]);
    for (name, arr) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if arr.shape() != [f] {
            return Err(NnError::ShapeMismatch(format!(
                "batch_norm: {name} {:?} for {f} features",
                arr.shape()
            )));
        }
    }

    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(NnError::DegenerateBatch(b));
            }
            let bn = F::from_usize(b);
            let mut mean = vec![F::zero(); f];
            for row in 0..b {
                for (m, &v) in mean.iter_mut().zip(x.row(row)) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= bn;
            }
            let mut var = vec![F::zero(); f];
            for row in 0..b {
                for ((vv, &xv), &m) in var.iter_mut().zip(x.row(row)).zip(&mean) {
                    let d = xv - m;
                    *vv += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= bn;
            }
            (mean, var)
        }
        Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut x_hat = NdArray::zeros(&[b, f]);
    let mut y = NdArray::zeros(&[b, f]);
    for row in 0..b {
        for col in 0..f {
            let xh = (x.at2(row, col) - mean[col]) * inv_std[col];
            x_hat.set2(row, col, xh);
            y.set2(row, col, gamma.data()[col] * xh + beta.data()[col]);
        }
    }

    let (batch_mean, batch_var) = match mode {
        Mode::Train => (Some(mean), Some(var)),
        Mode::Infer => (None, None),
    };
    Ok(BatchNormOut {
        y,
        cache: BatchNormCache { x_hat, inv_std, mode },
        batch_mean,
        batch_var,
    })
}

/// Returns (dx, dgamma, dbeta). In train mode the gradient flows through the
/// batch statistics; in infer mode the running stats are constants.
pub fn batch_norm_backward<F: Scalar>(
    cache: &BatchNormCache<F>,
    gamma: &NdArray<F>,
    gy: &NdArray<F>,
) -> (NdArray<F>, NdArray<F>, NdArray<F>) {
    let (b, f) = (gy.shape()[0], gy.shape()[1]);
    let bn = F::from_usize(b);
    let mut dgamma = NdArray::zeros(&[f]);
    let mut dbeta = NdArray::zeros(&[f]);
    for row in 0..b {
        for col in 0..f {
            let g = gy.at2(row, col);
            dgamma.data_mut()[col] += g * cache.x_hat.at2(row, col);
            dbeta.data_mut()[col] += g;
        }
    }

    let mut dx = NdArray::zeros(&[b, f]);
    match cache.mode {
        Mode::Train => {
            // dx = gamma*inv_std/B * (B*gxh - sum(gxh) - x_hat * sum(gxh*x_hat))
            // with gxh = gy (per-element, gamma folded in below via dgamma sums)
            for col in 0..f {
                let sum_g = dbeta.data()[col];
                let sum_gx = dgamma.data()[col];
                let scale = gamma.data()[col] * cache.inv_std[col] / bn;
                for row in 0..b {
                    let g = gy.at2(row, col);
                    let xh = cache.x_hat.at2(row, col);
                    dx.set2(row, col, scale * (bn * g - sum_g - xh * sum_gx));
                }
            }
        }
        Mode::Infer => {
            for row in 0..b {
                for col in 0..f {
                    dx.set2(row, col, gy.at2(row, col) * gamma.data()[col] * cache.inv_std[col]);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Folds batch statistics into running statistics with the given momentum.
pub fn update_running_stats<F: Scalar>(
    running: &mut NdArray<F>,
    batch: &[F],
    momentum: F,
) {
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = momentum * *r + (F::one() - momentum) * b;
    }
}

/// Single-pass inference batch norm: y = x * scale + shift with the affine
/// terms folded from gamma/beta and the running statistics. Matches the
/// infer-mode output of [`batch_norm_forward`] without building a cache.
pub fn batch_norm_infer<F: Scalar>(
    x: &NdArray<F>,
    gamma: &NdArray<F>,
    beta: &NdArray<F>,
    running_mean: &NdArray<F>,
    running_var: &NdArray<F>,
    eps: F,
) -> NdArray<F> {
    let mut y = x.clone();
    batch_norm_infer_into(&mut y, gamma, beta, running_mean, running_var, eps);
    y
}

/// In-place form of [`batch_norm_infer`].
pub fn batch_norm_infer_into<F: Scalar>(
    x: &mut NdArray<F>,
    gamma: &NdArray<F>,
    beta: &NdArray<F>,
    running_mean: &NdArray<F>,
    running_var: &NdArray<F>,
    eps: F,
) {
    let f = gamma.len();
    let scale: Vec<F> = (0..f)
        .map(|c| gamma.data()[c] / (running_var.data()[c] + eps).sqrt())
        .collect();
    let shift: Vec<F> = (0..f)
        .map(|c| beta.data()[c] - running_mean.data()[c] * scale[c])
        .collect();
    for row in x.data_mut().chunks_mut(f) {
        for ((v, &s), &t) in row.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * s + t;
        }
    }
}

pub fn relu_inplace<F: Scalar>(x: &mut NdArray<F>) {
    for v in x.data_mut() {
        *v = v.max(F::zero());
    }
}

/// y += skip, elementwise.
pub fn add_into<F: Scalar>(y: &mut NdArray<F>, skip: &NdArray<F>) {
    debug_assert_eq!(y.shape(), skip.shape());
    for (a, &b) in y.data_mut().iter_mut().zip(skip.data()) {
        *a += b;
    }
}

// ---------------------------------------------------------------------------
// relu / dropout / residual
// ---------------------------------------------------------------------------

pub fn relu_forward<F: Scalar>(x: &NdArray<F>) -> NdArray<F> {
    x.map(|v| v.max(F::zero()))
}

pub fn relu_backward<F: Scalar>(x: &NdArray<F>, gy: &NdArray<F>) -> NdArray<F> {
    debug_assert_eq!(x.shape(), gy.shape());
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &g)| if xv > F::zero() { g } else { F::zero() })
        .collect();
    NdArray::from_vec(x.shape(), data)
}

/// Inverted-scaling dropout. Train mode zeroes each element with probability
/// `rate` and scales survivors by 1/(1-rate); the mask doubles as the cache.
/// Rate 0 and infer mode are the identity (no RNG draws).
pub fn dropout_forward<F: Scalar, R: Rng>(
    x: &NdArray<F>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (NdArray<F>, Option<NdArray<F>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
    if mode == Mode::Infer || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep_scale = F::from_f64(1.0 / (1.0 - rate));
    let mask_data: Vec<F> = (0..x.len())
        .map(|_| {
            if rng.gen::<f64>() >= rate {
                keep_scale
            } else {
                F::zero()
            }
        })
        .collect();
    let mask = NdArray::from_vec(x.shape(), mask_data);
    let y = NdArray::from_vec(
        x.shape(),
        x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect(),
    );
    (y, Some(mask))
}

pub fn dropout_backward<F: Scalar>(mask: Option<&NdArray<F>>, gy: &NdArray<F>) -> NdArray<F> {
    match mask {
        None => gy.clone(),
        Some(m) => NdArray::from_vec(
            gy.shape(),
            gy.data().iter().zip(m.data()).map(|(&g, &mv)| g * mv).collect(),
        ),
    }
}

pub fn residual_add<F: Scalar>(x: &NdArray<F>, y: &NdArray<F>) -> Result<NdArray<F>, NnError> {
    if x.shape() != y.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "residual: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(NdArray::from_vec(
        x.shape(),
        x.data().iter().zip(y.data()).map(|(&a, &b)| a + b).collect(),
    ))
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Last-axis softmax, max-subtracted for stability.
pub fn softmax<F: Scalar>(x: &NdArray<F>) -> NdArray<F> {
    let c = *x.shape().last().expect("softmax needs at least one axis");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Jacobian-vector product of the softmax: dx_j = s_j (gy_j - sum_k gy_k s_k)
/// applied per last-axis row.
pub fn softmax_backward<F: Scalar>(s: &NdArray<F>, gy: &NdArray<F>) -> NdArray<F> {
    debug_assert_eq!(s.shape(), gy.shape());
    let c = *s.shape().last().unwrap();
    let mut out = NdArray::zeros(s.shape());
    let (sd, gd, od) = (s.data(), gy.data(), out.data_mut());
    for row in 0..sd.len() / c {
        let base = row * c;
        let mut dot = F::zero();
        for j in 0..c {
            dot += gd[base + j] * sd[base + j];
        }
        for j in 0..c {
            od[base + j] = sd[base + j] * (gd[base + j] - dot);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Output spatial size: (extent + 2*pad - kernel)/stride + 1.
pub fn conv_out_dim(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn pad4<F: Scalar>(x: &NdArray<F>, pad: usize) -> NdArray<F> {
    if pad == 0 {
        return x.clone();
    }
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = NdArray::zeros(&[b, c, h + 2 * pad, w + 2 * pad]);
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    out.set4(bi, ci, hi + pad, wi + pad, x.at4(bi, ci, hi, wi));
                }
            }
        }
    }
    out
}

fn unpad4<F: Scalar>(x: &NdArray<F>, pad: usize, h: usize, w: usize) -> NdArray<F> {
    if pad == 0 {
        return x.clone();
    }
    let s = x.shape();
    let (b, c) = (s[0], s[1]);
    let mut out = NdArray::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    out.set4(bi, ci, hi, wi, x.at4(bi, ci, hi + pad, wi + pad));
                }
            }
        }
    }
    out
}

/// Cross-channel 2-d convolution: x [B,C,H,W], kernels [O,C,kh,kw],
/// bias [O] -> [B,O,H',W'] with the output size formula above.
pub fn conv2d_forward<F: Scalar>(
    x: &NdArray<F>,
    kernels: &NdArray<F>,
    bias: &NdArray<F>,
    stride: usize,
    pad: usize,
) -> Result<NdArray<F>, NnError> {
    if x.shape().len() != 4 || kernels.shape().len() != 4 || x.shape()[1] != kernels.shape()[1] {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d: x {:?} vs kernels {:?}",
            x.shape(),
            kernels.shape()
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    if bias.shape() != [o] {
        return Err(NnError::ShapeMismatch(format!("conv2d: bias {:?}", bias.shape())));
    }
    let oh = conv_out_dim(h, kh, stride, pad)
        .ok_or_else(|| NnError::ShapeMismatch(format!("conv2d: output height < 1 for H={h} kh={kh}")))?;
    let ow = conv_out_dim(w, kw, stride, pad)
        .ok_or_else(|| NnError::ShapeMismatch(format!("conv2d: output width < 1 for W={w} kw={kw}")))?;

    let xp = pad4(x, pad);
    let mut y = NdArray::zeros(&[b, o, oh, ow]);
    for bi in 0..b {
        for oi in 0..o {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = bias.data()[oi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                acc += xp.at4(bi, ci, ohi * stride + i, owi * stride + j)
                                    * kernels.at4(oi, ci, i, j);
                            }
                        }
                    }
                    y.set4(bi, oi, ohi, owi, acc);
                }
            }
        }
    }
    Ok(y)
}

/// Returns (dx, dkernels, dbias).
pub fn conv2d_backward<F: Scalar>(
    x: &NdArray<F>,
    kernels: &NdArray<F>,
    gy: &NdArray<F>,
    stride: usize,
    pad: usize,
) -> (NdArray<F>, NdArray<F>, NdArray<F>) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    let (oh, ow) = (gy.shape()[2], gy.shape()[3]);

    let xp = pad4(x, pad);
    let mut gxp = NdArray::zeros(xp.shape());
    let mut gk = NdArray::zeros(kernels.shape());
    let mut gbias = NdArray::zeros(&[o]);
    for bi in 0..b {
        for oi in 0..o {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let g = gy.at4(bi, oi, ohi, owi);
                    gbias.data_mut()[oi] += g;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (hi, wi) = (ohi * stride + i, owi * stride + j);
                                let gkv = gk.at4(oi, ci, i, j) + g * xp.at4(bi, ci, hi, wi);
                                gk.set4(oi, ci, i, j, gkv);
                                let gxv = gxp.at4(bi, ci, hi, wi) + g * kernels.at4(oi, ci, i, j);
                                gxp.set4(bi, ci, hi, wi, gxv);
                            }
                        }
                    }
                }
            }
        }
    }
    (unpad4(&gxp, pad, h, w), gk, gbias)
}

/// Convolution over the channel-major CSI tensor [B,K,2N+1,2N+1]: K is the
/// summed input-channel axis, both spatial extents are the node count.
pub fn conv_multichannel_forward<F: Scalar>(
    x: &NdArray<F>,
    kernels: &NdArray<F>,
    bias: &NdArray<F>,
    stride: usize,
    pad: usize,
) -> Result<NdArray<F>, NnError> {
    if x.shape().len() != 4 || x.shape()[2] != x.shape()[3] {
        return Err(NnError::ShapeMismatch(format!(
            "conv_multichannel expects square spatial input, got {:?}",
            x.shape()
        )));
    }
    conv2d_forward(x, kernels, bias, stride, pad)
}

/// Axis permutation of a 4-d array: out[i0,i1,i2,i3] = x at the original
/// positions given by `perm` (out axis a comes from input axis perm[a]).
pub fn permute4<F: Scalar>(x: &NdArray<F>, perm: [usize; 4]) -> NdArray<F> {
    let s = x.shape();
    debug_assert_eq!(s.len(), 4);
    let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]], s[perm[3]]];
    let mut out = NdArray::zeros(&out_shape);
    let mut src = [0usize; 4];
    for a in 0..out_shape[0] {
        for b in 0..out_shape[1] {
            for c in 0..out_shape[2] {
                for d in 0..out_shape[3] {
                    let dst = [a, b, c, d];
                    for (axis, &p) in perm.iter().enumerate() {
                        src[p] = dst[axis];
                    }
                    out.set4(a, b, c, d, x.at4(src[0], src[1], src[2], src[3]));
                }
            }
        }
    }
    out
}

/// Inverse of [`permute4`] with the same `perm`.
pub fn permute4_inverse<F: Scalar>(x: &NdArray<F>, perm: [usize; 4]) -> NdArray<F> {
    let mut inv = [0usize; 4];
    for (axis, &p) in perm.iter().enumerate() {
        inv[p] = axis;
    }
    permute4(x, inv)
}

// ---------------------------------------------------------------------------
// attention fusion
// ---------------------------------------------------------------------------

pub struct AttentionCache<F> {
    /// Softmax weights over users, [B,I].
    pub weights: NdArray<F>,
}

/// Fuses per-user feature vectors u [B,I,Fb] into one vector per sample:
/// scores = concat(u) W + b over all users, weights = softmax(scores),
/// output = weighted sum of the user vectors. W is [I*Fb, I], b is [I].
pub fn attention_fuse_forward<F: Scalar>(
    u: &NdArray<F>,
    w: &NdArray<F>,
    b: &NdArray<F>,
) -> Result<(NdArray<F>, AttentionCache<F>), NnError> {
    if u.shape().len() != 3 {
        return Err(NnError::ShapeMismatch(format!("attention: u {:?}", u.shape())));
    }
    let (batch, users, feat) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    if w.shape() != [users * feat, users] || b.shape() != [users] {
        return Err(NnError::ShapeMismatch(format!(
            "attention: W {:?} b {:?} for {users} users x {feat} features",
            w.shape(),
            b.shape()
        )));
    }
    let flat = u.clone().reshape(&[batch, users * feat]);
    let scores = dense_forward(&flat, w, b)?;
    let weights = softmax(&scores);
    let mut fused = NdArray::zeros(&[batch, feat]);
    for bi in 0..batch {
        for ui in 0..users {
            let wgt = weights.at2(bi, ui);
            for fi in 0..feat {
                let v = fused.at2(bi, fi) + wgt * u.at3(bi, ui, fi);
                fused.set2(bi, fi, v);
            }
        }
    }
    Ok((fused, AttentionCache { weights }))
}

/// Returns (du, dW, db).
pub fn attention_fuse_backward<F: Scalar>(
    u: &NdArray<F>,
    w: &NdArray<F>,
    cache: &AttentionCache<F>,
    gy: &NdArray<F>,
) -> (NdArray<F>, NdArray<F>, NdArray<F>) {
    let (batch, users, feat) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    let weights = &cache.weights;

    // direct path: du[b,i,:] += s[b,i] * gy[b,:]; score sensitivities
    let mut du = NdArray::zeros(u.shape());
    let mut dscore_in = NdArray::zeros(&[batch, users]);
    for bi in 0..batch {
        for ui in 0..users {
            let s = weights.at2(bi, ui);
            let mut dot = F::zero();
            for fi in 0..feat {
                du.set3(bi, ui, fi, s * gy.at2(bi, fi));
                dot += u.at3(bi, ui, fi) * gy.at2(bi, fi);
            }
            dscore_in.set2(bi, ui, dot);
        }
    }
    let dscores = softmax_backward(weights, &dscore_in);

    // score path back through the dense scorer
    let flat = u.clone().reshape(&[batch, users * feat]);
    let (dflat, dw, db) = dense_backward(&flat, w, &dscores);
    for (acc, &g) in du.data_mut().iter_mut().zip(dflat.data()) {
        *acc += g;
    }
    (du, dw, db)
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean over the batch of -sum(onehot * ln(p + 1e-12)). `probs` holds
/// supervised rows of width C (the product of all leading axes is the row
/// count); `targets` gives one class index per row; `batch` is the batch
/// size the total is averaged over (rows per sample may exceed one).
pub fn cross_entropy_mean<F: Scalar>(probs: &NdArray<F>, targets: &[usize], batch: usize) -> F {
    let c = *probs.shape().last().unwrap();
    let rows = probs.len() / c;
    assert_eq!(rows, targets.len(), "one target per supervised row");
    let eps = F::from_f64(LOG_EPS);
    let mut total = F::zero();
    for (row, &t) in targets.iter().enumerate() {
        debug_assert!(t < c);
        total -= (probs.data()[row * c + t] + eps).ln();
    }
    total / F::from_usize(batch)
}

/// Gradient of [`cross_entropy_mean`] at the softmax *input*:
/// (probs - onehot) / batch, same shape as `probs`.
pub fn softmax_xent_grad<F: Scalar>(
    probs: &NdArray<F>,
    targets: &[usize],
    batch: usize,
) -> NdArray<F> {
    let c = *probs.shape().last().unwrap();
    let scale = F::one() / F::from_usize(batch);
    let mut grad = probs.map(|p| p * scale);
    for (row, &t) in targets.iter().enumerate() {
        let v = grad.data()[row * c + t] - scale;
        grad.data_mut()[row * c + t] = v;
    }
    grad
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

/// Uniform Glorot init in +-sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> NdArray<F> {
    let bound = F::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    NdArray::from_vec(shape, data)
}
