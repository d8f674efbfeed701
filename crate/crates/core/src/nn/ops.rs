//! Forward kernels for every layer and loss the models use.
//!
//! These are plain functions on [`Tensor`]s; the tape calls them for the
//! forward pass and pairs each with its adjoint.

use super::NnError;
use crate::tensor::{Scalar, Tensor};

/// Variance floor added inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the new batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;
/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NnError {
    NnError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `y = x Wᵀ + b` for `x` of shape `[in]` or `[rows, in]`, `W` of shape `[out, in]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    if w.rank() != 2 || x.rank() == 0 || x.rank() > 2 || x.cols() != w.dim(1) {
        return Err(shape_err("dense", x.shape(), w.shape()));
    }
    let (out, inp) = (w.dim(0), w.dim(1));
    if let Some(b) = b {
        if b.shape() != [out] {
            return Err(shape_err("dense", w.shape(), b.shape()));
        }
    }
    let rows = x.rows();
    let mut y = vec![T::zero(); rows * out];
    let (xd, wd) = (x.data(), w.data());
    for r in 0..rows {
        let xr = &xd[r * inp..(r + 1) * inp];
        let yr = &mut y[r * out..(r + 1) * out];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = T::zero();
            for (a, c) in xr.iter().zip(wr) {
                acc += *a * *c;
            }
            *yo = acc;
        }
        if let Some(b) = b {
            for (yo, bo) in yr.iter_mut().zip(b.data()) {
                *yo += *bo;
            }
        }
    }
    let shape = if x.rank() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(shape, y)
}

/// Fully connected layer on a single vector: `W·x + b`.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    linear(x, w, Some(b))
}

/// Input-gradient and weight-gradient of [`linear`].
pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (out, inp) = (w.dim(0), w.dim(1));
    let rows = x.rows();
    let (xd, wd, gd) = (x.data(), w.data(), gy.data());
    let mut gx = vec![T::zero(); rows * inp];
    let mut gw = vec![T::zero(); out * inp];
    let mut gb = vec![T::zero(); out];
    for r in 0..rows {
        let xr = &xd[r * inp..(r + 1) * inp];
        let gxr = &mut gx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = gd[r * out + o];
            if g == T::zero() {
                continue;
            }
            gb[o] += g;
            let wr = &wd[o * inp..(o + 1) * inp];
            let gwr = &mut gw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                gxr[i] += g * wr[i];
                gwr[i] += g * xr[i];
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(w.shape().to_vec(), gw).expect("shape"),
        Tensor::vector(gb),
    )
}

fn as_batched<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize), NnError> {
    match x.rank() {
        2 => Ok((1, x.dim(0), x.dim(1))),
        3 => Ok((x.dim(0), x.dim(1), x.dim(2))),
        _ => Err(shape_err(op, x.shape(), &[])),
    }
}

fn check_kernel<T: Scalar>(k: &Tensor<T>, padding: usize) -> Result<(), NnError> {
    if k.rank() != 3 {
        return Err(NnError::Config(format!(
            "convolution kernel must have rank 3, got shape {:?}",
            k.shape()
        )));
    }
    if k.dim(2) == 0 || padding >= k.dim(2) {
        return Err(NnError::Config(format!(
            "padding {padding} incompatible with kernel size {}",
            k.dim(2)
        )));
    }
    Ok(())
}

/// Stride-1 cross-correlation with zero padding.
///
/// `x` is `[in_ch, len]` or `[batch, in_ch, len]`, `kernels` is
/// `[out_ch, in_ch, k]`. Output length is `len + 2·padding − k + 1`.
pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    check_kernel(kernels, padding)?;
    let (batch, cin, len) = as_batched(x, "conv1d")?;
    let (cout, kcin, ks) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
    if kcin != cin {
        return Err(shape_err("conv1d", x.shape(), kernels.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err("conv1d", kernels.shape(), b.shape()));
        }
    }
    if len + 2 * padding < ks {
        return Err(shape_err("conv1d", x.shape(), kernels.shape()));
    }
    let lout = len + 2 * padding + 1 - ks;
    let (xd, kd) = (x.data(), kernels.data());
    let mut y = vec![T::zero(); batch * cout * lout];
    for b in 0..batch {
        for co in 0..cout {
            let yrow = &mut y[(b * cout + co) * lout..(b * cout + co + 1) * lout];
            for ci in 0..cin {
                let xrow = &xd[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                let krow = &kd[(co * cin + ci) * ks..(co * cin + ci + 1) * ks];
                for (i, yv) in yrow.iter_mut().enumerate() {
                    for (kk, &kv) in krow.iter().enumerate() {
                        let pos = i + kk;
                        if pos >= padding && pos - padding < len {
                            *yv += xrow[pos - padding] * kv;
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bv = bias.data()[co];
                yrow.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    let shape = if x.rank() == 2 {
        vec![cout, lout]
    } else {
        vec![batch, cout, lout]
    };
    Tensor::new(shape, y)
}

/// Stride-1 transposed convolution, the linear adjoint of [`conv1d_forward`].
///
/// `h` is `[in_ch, len]` or `[batch, in_ch, len]`, `kernels` is
/// `[in_ch, out_ch, k]`. Output length is `len + k − 1 − 2·padding`.
pub fn conv1d_transpose_forward<T: Scalar>(
    h: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    check_kernel(kernels, padding)?;
    let (batch, cin, len) = as_batched(h, "conv1d_transpose")?;
    let (kcin, cout, ks) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
    if kcin != cin {
        return Err(shape_err("conv1d_transpose", h.shape(), kernels.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err("conv1d_transpose", kernels.shape(), b.shape()));
        }
    }
    if len + ks < 1 + 2 * padding + 1 {
        return Err(shape_err("conv1d_transpose", h.shape(), kernels.shape()));
    }
    let lout = len + ks - 1 - 2 * padding;
    let (hd, kd) = (h.data(), kernels.data());
    let mut y = vec![T::zero(); batch * cout * lout];
    for b in 0..batch {
        for ci in 0..cin {
            let hrow = &hd[(b * cin + ci) * len..(b * cin + ci + 1) * len];
            for co in 0..cout {
                let krow = &kd[(ci * cout + co) * ks..(ci * cout + co + 1) * ks];
                let yrow = &mut y[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                for (i, &hv) in hrow.iter().enumerate() {
                    for (kk, &kv) in krow.iter().enumerate() {
                        let pos = i + kk;
                        if pos >= padding && pos - padding < lout {
                            yrow[pos - padding] += hv * kv;
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            for co in 0..cout {
                let bv = bias.data()[co];
                y[(b * cout + co) * lout..(b * cout + co + 1) * lout]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    let shape = if h.rank() == 2 {
        vec![cout, lout]
    } else {
        vec![batch, cout, lout]
    };
    Tensor::new(shape, y)
}

/// Gradient of a stride-1 convolution with respect to its input and kernels.
///
/// `transposed` selects which of the two layouts `kernels` is in. Both
/// directions share one loop: a transposed convolution is the convolution
/// with input and output roles swapped.
pub(crate) fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    gy: &Tensor<T>,
    padding: usize,
    transposed: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (batch, cin, len) = as_batched(x, "conv1d").expect("validated in forward");
    let ks = kernels.dim(2);
    let (_, cout, lout) = as_batched(gy, "conv1d").expect("validated in forward");
    let (xd, kd, gd) = (x.data(), kernels.data(), gy.data());
    let mut gx = vec![T::zero(); xd.len()];
    let mut gk = vec![T::zero(); kd.len()];
    let mut gb = vec![T::zero(); cout];
    for b in 0..batch {
        for co in 0..cout {
            let grow = &gd[(b * cout + co) * lout..(b * cout + co + 1) * lout];
            gb[co] += grow.iter().copied().sum();
            for ci in 0..cin {
                let koff = if transposed {
                    (ci * cout + co) * ks
                } else {
                    (co * cin + ci) * ks
                };
                let xoff = (b * cin + ci) * len;
                for kk in 0..ks {
                    let kv = kd[koff + kk];
                    let mut acc = T::zero();
                    if transposed {
                        // y[co, i + kk - p] += x[ci, i] * k
                        for i in 0..len {
                            let pos = i + kk;
                            if pos >= padding && pos - padding < lout {
                                let g = grow[pos - padding];
                                gx[xoff + i] += g * kv;
                                acc += g * xd[xoff + i];
                            }
                        }
                    } else {
                        // y[co, i] += x[ci, i + kk - p] * k
                        for (i, &g) in grow.iter().enumerate() {
                            let pos = i + kk;
                            if pos >= padding && pos - padding < len {
                                gx[xoff + pos - padding] += g * kv;
                                acc += g * xd[xoff + pos - padding];
                            }
                        }
                    }
                    gk[koff + kk] += acc;
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(kernels.shape().to_vec(), gk).expect("shape"),
        Tensor::vector(gb),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Running mean and variance of a batch-norm layer, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

/// Normalized activations plus the per-channel statistics used to produce them.
pub(crate) struct BatchNormOut<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Channel layout helper: `(batch, channels, len)`.
pub(crate) fn bn_layout<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    as_batched(x, "batchnorm1d")
}

pub(crate) fn batchnorm_compute<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BatchNormMode,
) -> Result<BatchNormOut<T>, NnError> {
    let (batch, ch, len) = bn_layout(x)?;
    for p in [gamma, beta, &running.mean, &running.var] {
        if p.shape() != [ch] {
            return Err(shape_err("batchnorm1d", x.shape(), p.shape()));
        }
    }
    let count = batch * len;
    let eps = T::lit(BN_EPS);
    let xd = x.data();
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        BatchNormMode::Train => {
            if count < 2 {
                return Err(NnError::DegenerateBatch {
                    op: "batchnorm1d",
                    count,
                });
            }
            let n = T::from_usize(count).expect("count");
            let mut means = vec![T::zero(); ch];
            let mut vars = vec![T::zero(); ch];
            for c in 0..ch {
                let mut s = T::zero();
                for b in 0..batch {
                    s += xd[(b * ch + c) * len..(b * ch + c + 1) * len].iter().copied().sum();
                }
                let m = s / n;
                let mut v = T::zero();
                for b in 0..batch {
                    for &xv in &xd[(b * ch + c) * len..(b * ch + c + 1) * len] {
                        v += (xv - m) * (xv - m);
                    }
                }
                means[c] = m;
                vars[c] = v / n;
            }
            let mom = T::lit(BN_MOMENTUM);
            let unbias = n / (n - T::one());
            for c in 0..ch {
                let rm = &mut running.mean.data_mut()[c];
                *rm = (T::one() - mom) * *rm + mom * means[c];
                let rv = &mut running.var.data_mut()[c];
                *rv = (T::one() - mom) * *rv + mom * vars[c] * unbias;
            }
            (means, vars)
        }
        BatchNormMode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..batch {
        for c in 0..ch {
            let (g, bt) = (gamma.data()[c], beta.data()[c]);
            for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                let xh = (xd[i] - mean[c]) * inv_std[c];
                xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
    }
    Ok(BatchNormOut {
        y: Tensor::new(x.shape().to_vec(), y)?,
        xhat: Tensor::new(x.shape().to_vec(), xhat)?,
        inv_std,
    })
}

/// Per-channel batch normalization of `[channels, len]` or `[batch, channels, len]`.
///
/// Train mode normalizes with the batch statistics and folds them into
/// `running`; eval mode normalizes with `running` and leaves it untouched.
pub fn batchnorm1d_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BatchNormMode,
) -> Result<Tensor<T>, NnError> {
    batchnorm_compute(x, gamma, beta, running, mode).map(|o| o.y)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let k = z.cols();
    let mut out = z.clone();
    if k == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

/// Mean of squared elementwise differences.
pub fn mse_loss<T: Scalar>(x: &Tensor<T>, x_rec: &Tensor<T>) -> Result<T, NnError> {
    x.expect_same_shape("mse", x_rec)?;
    if x.is_empty() {
        return Ok(T::zero());
    }
    let s: T = x
        .data()
        .iter()
        .zip(x_rec.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(s / T::from_usize(x.len()).expect("len"))
}

/// Mean over rows of `−ln max(p[row, y], 1e−12)`.
///
/// `p` is a probability vector `[k]` (one target) or a matrix `[rows, k]`.
pub fn cross_entropy_loss<T: Scalar>(p: &Tensor<T>, targets: &[usize]) -> Result<T, NnError> {
    let k = p.cols();
    if p.rows() != targets.len() || p.rank() == 0 || p.rank() > 2 {
        return Err(shape_err("cross_entropy", p.shape(), &[targets.len()]));
    }
    let floor = T::lit(PROB_FLOOR);
    let mut s = T::zero();
    for (r, &y) in targets.iter().enumerate() {
        if y >= k {
            return Err(NnError::ClassOutOfRange {
                index: y,
                classes: k,
            });
        }
        s -= p.row(r)[y].max(floor).ln();
    }
    Ok(s / T::from_usize(targets.len().max(1)).expect("len"))
}
