//! Forward kernels and their vector-Jacobian products.
//!
//! These work on plain tensors and carry no graph state; the [`Tape`] and
//! [`Eager`] executors in `graph` decide whether the backward halves are
//! ever needed.
//!
//! [`Tape`]: super::Tape
//! [`Eager`]: super::Eager

use serde::{Deserialize, Serialize};

use super::conv::{add_channel_bias, channel_sum, ConvGeometry};
use super::tensor::strides;
use super::{Float, RngStream, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(a)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative<T: Float>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(a)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_rank(op: &'static str, t: &Tensor<impl Float>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn same_shape<T: Float>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convolution

pub fn conv3d_geometry<T: Float>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
) -> Result<ConvGeometry> {
    check_rank("conv3d", x, 5)?;
    check_rank("conv3d", kernel, 5)?;
    let (xs, ks) = (x.shape(), kernel.shape());
    if ks[3] != xs[4] {
        return Err(Error::shape(
            "conv3d",
            format!("input has {} channels, kernel expects {}", xs[4], ks[3]),
        ));
    }
    if bias.numel() != ks[4] || bias.rank() != 1 {
        return Err(Error::shape(
            "conv3d",
            format!("bias {:?} for {} filters", bias.shape(), ks[4]),
        ));
    }
    ConvGeometry::new(
        xs[0],
        [xs[1], xs[2], xs[3]],
        [ks[0], ks[1], ks[2]],
        stride,
        xs[4],
        ks[4],
    )
}

pub fn conv3d<T: Float>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
) -> Result<(Tensor<T>, ConvGeometry)> {
    let g = conv3d_geometry(x, kernel, bias, stride)?;
    let mut out = g.wide_to_narrow(x.data(), kernel.data());
    add_channel_bias(&mut out, bias.data());
    let out = Tensor::new(g.narrow_shape(), out)?.ensure_finite("conv3d")?;
    Ok((out, g))
}

pub fn conv3d_transpose_geometry<T: Float>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
) -> Result<ConvGeometry> {
    check_rank("conv3d_transpose", x, 5)?;
    check_rank("conv3d_transpose", kernel, 5)?;
    let (xs, ks) = (x.shape(), kernel.shape());
    if ks[4] != xs[4] {
        return Err(Error::shape(
            "conv3d_transpose",
            format!("input has {} channels, kernel expects {}", xs[4], ks[4]),
        ));
    }
    if bias.numel() != ks[3] || bias.rank() != 1 {
        return Err(Error::shape(
            "conv3d_transpose",
            format!("bias {:?} for {} filters", bias.shape(), ks[3]),
        ));
    }
    if stride.contains(&0) {
        return Err(Error::invalid(
            "conv3d_transpose",
            "strides must be positive",
        ));
    }
    let wide = [xs[1] * stride[0], xs[2] * stride[1], xs[3] * stride[2]];
    let g = ConvGeometry::new(xs[0], wide, [ks[0], ks[1], ks[2]], stride, ks[3], ks[4])?;
    debug_assert_eq!(g.narrow, [xs[1], xs[2], xs[3]]);
    Ok(g)
}

/// Transposed convolution, defined as the input-adjoint of [`conv3d`] with
/// the same kernel; kernel layout `[kd,kh,kw,Cout,Cin]`.
pub fn conv3d_transpose<T: Float>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
) -> Result<(Tensor<T>, ConvGeometry)> {
    let g = conv3d_transpose_geometry(x, kernel, bias, stride)?;
    let mut out = g.narrow_to_wide(x.data(), kernel.data());
    add_channel_bias(&mut out, bias.data());
    let out = Tensor::new(g.wide_shape(), out)?.ensure_finite("conv3d_transpose")?;
    Ok((out, g))
}

// ---------------------------------------------------------------------------
// batch normalization

/// Per-channel statistics of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalize with the statistics of the batch itself.
    Train,
    /// Normalize with stored running statistics.
    Infer { mean: &'a [T], var: &'a [T] },
}

/// Saved state for the batch-norm backward pass.
pub struct BnSaved<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

pub fn batch_norm<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BnMode<'_, T>,
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>, Option<BatchStats<T>>)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid(
            "batch_norm",
            format!("eps must be positive, got {eps}"),
        ));
    }
    let c = x.channels();
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "{c} channels but gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let eps = T::of(eps);
    let (mean, var, stats) = match mode {
        BnMode::Train => {
            let n = T::of((x.numel() / c) as f64);
            let mean: Vec<T> = channel_sum(x.data(), c)
                .into_iter()
                .map(|s| s / n)
                .collect();
            let mut var = vec![T::zero(); c];
            for chunk in x.data().chunks_exact(c) {
                for ((v, &xi), &m) in var.iter_mut().zip(chunk).zip(&mean) {
                    let d = xi - m;
                    *v = *v + d * d;
                }
            }
            var.iter_mut().for_each(|v| *v = *v / n);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        BnMode::Infer { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::shape("batch_norm", "running statistics length"));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Vec::with_capacity(x.numel());
    let mut out = Vec::with_capacity(x.numel());
    for chunk in x.data().chunks_exact(c) {
        for ch in 0..c {
            let xh = (chunk[ch] - mean[ch]) * inv_std[ch];
            normalized.push(xh);
            out.push(gamma.data()[ch] * xh + beta.data()[ch]);
        }
    }
    let out = Tensor::new(x.shape(), out)?.ensure_finite("batch_norm")?;
    let train = stats.is_some();
    Ok((
        out,
        BnSaved {
            normalized,
            inv_std,
            train,
        },
        stats,
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Float>(
    saved: &BnSaved<T>,
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let mut dgamma = vec![T::zero(); c];
    let dbeta = channel_sum(dy, c);
    for (g, xh) in dy.chunks_exact(c).zip(saved.normalized.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] = dgamma[ch] + g[ch] * xh[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    if saved.train {
        let n = T::of((dy.len() / c) as f64);
        for (g, xh) in dy.chunks_exact(c).zip(saved.normalized.chunks_exact(c)) {
            for ch in 0..c {
                let scale = gamma[ch] * saved.inv_std[ch] / n;
                dx.push(scale * (n * g[ch] - dbeta[ch] - xh[ch] * dgamma[ch]));
            }
        }
    } else {
        for g in dy.chunks_exact(c) {
            for ch in 0..c {
                dx.push(g[ch] * gamma[ch] * saved.inv_std[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`0` or `1/(1-rate)`), or `None` when the op is the identity.
pub fn dropout<T: Float>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut RngStream,
    active: bool,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if !active || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = rng
        .bernoulli_mask(x.numel(), 1.0 - rate)
        .into_iter()
        .map(|k| if k { keep } else { T::zero() })
        .collect();
    let out: Vec<T> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape(), out)?, Some(mask)))
}

// ---------------------------------------------------------------------------
// shape ops

pub fn concat<T: Float>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no parts"))?;
    if axis >= first.rank() {
        return Err(Error::invalid(
            "concat",
            format!("axis {axis} for rank {}", first.rank()),
        ));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} off axis {axis}", p.shape(), first.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let run = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * run..(o + 1) * run]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

/// Splits an upstream gradient of a concat back into per-part pieces.
pub fn concat_backward<T: Float>(dy: &[T], shapes: &[Vec<usize>], axis: usize) -> Vec<Vec<T>> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut out: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for o in 0..outer {
        let mut off = o * total * inner;
        for (p, s) in out.iter_mut().zip(shapes) {
            let run = s[axis] * inner;
            p.extend_from_slice(&dy[off..off + run]);
            off += run;
        }
    }
    out
}

/// Copies the box `small` placed at `offsets` inside `big`, in either
/// direction. `to_small` reads from `big`; otherwise writes into it.
fn box_copy<T: Float>(
    big: &mut [T],
    big_shape: &[usize],
    small: &mut [T],
    small_shape: &[usize],
    offsets: &[usize],
    to_small: bool,
) {
    let rank = big_shape.len();
    let bs = strides(big_shape);
    let run = small_shape[rank - 1];
    let rows: usize = small_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    for r in 0..rows {
        let mut base = offsets[rank - 1];
        for a in 0..rank - 1 {
            base += (idx[a] + offsets[a]) * bs[a];
        }
        let s = &mut small[r * run..(r + 1) * run];
        let b = &mut big[base..base + run];
        if to_small {
            s.copy_from_slice(b);
        } else {
            b.copy_from_slice(s);
        }
        for a in (0..rank - 1).rev() {
            idx[a] += 1;
            if idx[a] < small_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn check_box(op: &'static str, big: &[usize], small: &[usize], offsets: &[usize]) -> Result<()> {
    let ok = big.len() == small.len()
        && offsets.len() == big.len()
        && (0..big.len()).all(|a| small[a] >= 1 && offsets[a] + small[a] <= big[a]);
    if !ok {
        return Err(Error::shape(
            op,
            format!("box {small:?} at {offsets:?} inside {big:?}"),
        ));
    }
    Ok(())
}

pub fn crop<T: Float>(x: &Tensor<T>, offsets: &[usize], shape: &[usize]) -> Result<Tensor<T>> {
    check_box("crop", x.shape(), shape, offsets)?;
    let mut big = x.to_vec();
    let mut small = vec![T::zero(); shape.iter().product()];
    box_copy(&mut big, x.shape(), &mut small, shape, offsets, true);
    Tensor::new(shape, small)
}

/// Zero-pads `x` into a tensor of `shape`, placing it at `offsets`.
pub fn pad<T: Float>(x: &Tensor<T>, offsets: &[usize], shape: &[usize]) -> Result<Tensor<T>> {
    check_box("pad", shape, x.shape(), offsets)?;
    let mut big = vec![T::zero(); shape.iter().product()];
    let mut small = x.to_vec();
    box_copy(&mut big, shape, &mut small, x.shape(), offsets, false);
    Tensor::new(shape, big)
}

/// Offsets that center an extent-`small` box inside extent-`big`.
pub fn center_offsets(big: &[usize], small: &[usize]) -> Vec<usize> {
    big.iter()
        .zip(small)
        .map(|(&b, &s)| (b.saturating_sub(s)) / 2)
        .collect()
}

// ---------------------------------------------------------------------------
// losses

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(z,0) - z t + ln(1 + e^{-|z|})`.
pub fn bce_with_logits<T: Float>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("bce_with_logits", logits, targets)?;
    if targets
        .data()
        .iter()
        .any(|&t| !(t >= T::zero() && t <= T::one()))
    {
        return Err(Error::invalid(
            "bce_with_logits",
            "targets must lie in [0, 1]",
        ));
    }
    // accumulate in f64 so the mean is not dominated by summation error
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let (z, t) = (z.as_f64(), t.as_f64());
            z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Tensor::scalar(T::of(total / logits.numel() as f64)).ensure_finite("bce_with_logits")
}

pub fn bce_with_logits_grad<T: Float>(logits: &[T], targets: &[T], upstream: T) -> Vec<T> {
    let n = T::of((logits.len()) as f64);
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| (sigmoid(z) - t) * upstream / n)
        .collect()
}

pub fn l1_loss<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Tensor::scalar(T::of(total / a.numel() as f64)).ensure_finite("l1_loss")
}

/// Gradient of [`l1_loss`] with respect to `a` (negate for `b`); the
/// subgradient at ties is zero.
pub fn l1_loss_grad<T: Float>(a: &[T], b: &[T], upstream: T) -> Vec<T> {
    let n = T::of((a.len()) as f64);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            let s = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            s * upstream / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(2.0f64), 2.0);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_relative_eq!(
            Activation::LeakyRelu(0.2).apply(-10.0f64),
            -2.0,
            epsilon = 1e-15
        );
        assert_eq!(Activation::Sigmoid.apply(-1000.0f32), 0.0);
        assert_eq!(Activation::Sigmoid.apply(1000.0f32), 1.0);
    }

    #[test]
    fn bce_closed_forms() {
        let z = Tensor::new([1], vec![0.0f64]).unwrap();
        let t = Tensor::new([1], vec![1.0f64]).unwrap();
        assert_relative_eq!(
            bce_with_logits(&z, &t).unwrap().item(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let z = Tensor::new([1], vec![50.0f64]).unwrap();
        let v = bce_with_logits(&z, &t).unwrap().item();
        assert!((0.0..1e-20).contains(&v));
        let z = Tensor::new([2], vec![-1e4f32, 1e4]).unwrap();
        let t = Tensor::new([2], vec![1.0f32, 0.0]).unwrap();
        assert_relative_eq!(
            bce_with_logits(&z, &t).unwrap().item(),
            1e4,
            max_relative = 1e-6
        );
    }

    #[test]
    fn bce_rejects_bad_targets() {
        let z = Tensor::new([1], vec![0.0f64]).unwrap();
        let t = Tensor::new([1], vec![1.5f64]).unwrap();
        assert!(bce_with_logits(&z, &t).is_err());
        let t2 = Tensor::new([2], vec![1.0f64, 0.0]).unwrap();
        assert!(bce_with_logits(&z, &t2).is_err());
    }

    #[test]
    fn l1_simple_values() {
        let a = Tensor::full([2, 3], 5.0f64);
        let b = Tensor::full([2, 3], 2.0f64);
        assert_eq!(l1_loss(&a, &a).unwrap().item(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap().item(), 3.0);
        assert!(l1_loss_grad(&[1.0f64], &[1.0], 1.0)[0] == 0.0);
    }

    #[test]
    fn batch_norm_normalizes_and_floors_constant_channel() {
        let x = Tensor::from_fn([4, 3, 2], |i| {
            if i % 2 == 0 {
                (i as f64).sin() * 3.0
            } else {
                7.0
            }
        });
        let (y, _, stats) = batch_norm(
            &x,
            &Tensor::ones([2]),
            &Tensor::zeros([2]),
            BnMode::Train,
            1e-5,
        )
        .unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.var[1], 0.0);
        let ch0: Vec<f64> = y.data().iter().step_by(2).copied().collect();
        let mean = ch0.iter().sum::<f64>() / ch0.len() as f64;
        let var = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch0.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
        assert!(y.data().iter().skip(1).step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_rejects_bad_eps_and_channels() {
        let x = Tensor::<f64>::ones([2, 3]);
        assert!(batch_norm(
            &x,
            &Tensor::ones([3]),
            &Tensor::zeros([3]),
            BnMode::Train,
            0.0
        )
        .is_err());
        assert!(batch_norm(
            &x,
            &Tensor::ones([2]),
            &Tensor::zeros([2]),
            BnMode::Train,
            1e-5
        )
        .is_err());
    }

    #[test]
    fn crop_and_pad_are_adjoint_boxes() {
        let x = Tensor::from_fn([1, 3, 4, 2], |i| i as f64);
        let c = crop(&x, &[0, 1, 1, 0], &[1, 2, 2, 2]).unwrap();
        assert_eq!(c.data(), &[10.0, 11.0, 12.0, 13.0, 18.0, 19.0, 20.0, 21.0]);
        let p = pad(&c, &[0, 1, 1, 0], &[1, 3, 4, 2]).unwrap();
        assert_eq!(p.data()[10], 10.0);
        assert_eq!(p.data()[0], 0.0);
        assert!(crop(&x, &[0, 2, 0, 0], &[1, 2, 4, 2]).is_err());
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f32>::zeros([1, 8, 6, 6, 128]);
        let b = Tensor::<f32>::ones([1, 8, 6, 6, 128]);
        let c = concat(&[&a, &b], 4).unwrap();
        assert_eq!(c.shape(), &[1, 8, 6, 6, 256]);
        assert_eq!(concat(&[&a], 4).unwrap(), a);
        let d = Tensor::<f32>::zeros([1, 8, 6, 5, 128]);
        assert!(concat(&[&a, &d], 4).is_err());
    }

    #[test]
    fn dropout_rate_bounds() {
        let x = Tensor::<f32>::ones([4]);
        let mut rng = RngStream::new(0, 0);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().0, x);
    }
}
