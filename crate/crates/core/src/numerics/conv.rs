//! 3D convolution kernels on channels-last (`N, D, H, W, C`) buffers.
//!
//! Every convolution here is a map between a "wide" tensor (extents `L`)
//! and a "narrow" tensor (extents `ceil(L / stride)`), using "same" padding
//! with the odd padding cell on the trailing side. A forward convolution
//! goes wide to narrow; a transposed convolution is its exact adjoint and
//! goes narrow to wide. Both are im2col followed by a GEMM, processed in row
//! chunks so the column buffer stays bounded for large grids.

use super::Float;
use crate::error::{Error, Result};

/// Upper bound on the number of elements held in one im2col chunk.
const CHUNK_ELEMS: usize = 1 << 21;

/// Output extent and leading pad for "same" convolution along one axis.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let needed = (out - 1) * stride + kernel;
    let total = needed.saturating_sub(len);
    (out, total / 2)
}

/// Shape bookkeeping shared by forward and transposed convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub wide: [usize; 3],
    pub narrow: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub wide_channels: usize,
    pub narrow_channels: usize,
}

impl ConvGeometry {
    pub fn new(
        batch: usize,
        wide: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        wide_channels: usize,
        narrow_channels: usize,
    ) -> Result<Self> {
        if stride.contains(&0) || kernel.contains(&0) {
            return Err(Error::invalid(
                "conv3d",
                "kernel and stride extents must be positive",
            ));
        }
        if batch == 0 || wide.contains(&0) || wide_channels == 0 || narrow_channels == 0 {
            return Err(Error::invalid("conv3d", "zero-sized input"));
        }
        let mut narrow = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let (o, p) = same_padding(wide[a], kernel[a], stride[a]);
            narrow[a] = o;
            pad[a] = p;
        }
        Ok(Self {
            batch,
            wide,
            narrow,
            kernel,
            stride,
            pad,
            wide_channels,
            narrow_channels,
        })
    }

    /// Number of im2col rows (narrow positions).
    pub fn rows(&self) -> usize {
        self.batch * self.narrow.iter().product::<usize>()
    }

    /// Length of one im2col row.
    pub fn patch(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.wide_channels
    }

    pub fn wide_len(&self) -> usize {
        self.batch * self.wide.iter().product::<usize>() * self.wide_channels
    }

    pub fn narrow_len(&self) -> usize {
        self.rows() * self.narrow_channels
    }

    pub fn kernel_len(&self) -> usize {
        self.patch() * self.narrow_channels
    }

    pub fn wide_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.wide[0],
            self.wide[1],
            self.wide[2],
            self.wide_channels,
        ]
    }

    pub fn narrow_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.narrow[0],
            self.narrow[1],
            self.narrow[2],
            self.narrow_channels,
        ]
    }

    fn chunk_rows(&self) -> usize {
        (CHUNK_ELEMS / self.patch().max(1)).clamp(1, self.rows().max(1))
    }

    /// Decomposes a row index into (batch, d, h, w) narrow coordinates.
    fn row_coords(&self, row: usize) -> (usize, [usize; 3]) {
        let [nd, nh, nw] = self.narrow;
        let w = row % nw;
        let h = (row / nw) % nh;
        let d = (row / (nw * nh)) % nd;
        let n = row / (nw * nh * nd);
        (n, [d, h, w])
    }

    /// Wide-tensor offset of the first channel at the given position, or
    /// `None` when the tap lands in padding.
    #[inline]
    fn tap(&self, n: usize, pos: [usize; 3], k: [usize; 3]) -> Option<usize> {
        let mut idx = n;
        for a in 0..3 {
            let p = (pos[a] * self.stride[a] + k[a]).checked_sub(self.pad[a])?;
            if p >= self.wide[a] {
                return None;
            }
            idx = idx * self.wide[a] + p;
        }
        Some(idx * self.wide_channels)
    }

    fn im2col<T: Float>(&self, wide: &[T], rows: std::ops::Range<usize>, cols: &mut [T]) {
        let c = self.wide_channels;
        let patch = self.patch();
        let [kd, kh, kw] = self.kernel;
        for (r, row) in rows.enumerate() {
            let (n, pos) = self.row_coords(row);
            let dst = &mut cols[r * patch..(r + 1) * patch];
            let mut off = 0;
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let out = &mut dst[off..off + c];
                        match self.tap(n, pos, [a, b, e]) {
                            Some(src) => out.copy_from_slice(&wide[src..src + c]),
                            None => out.fill(T::zero()),
                        }
                        off += c;
                    }
                }
            }
        }
    }

    fn col2im<T: Float>(&self, cols: &[T], rows: std::ops::Range<usize>, wide: &mut [T]) {
        let c = self.wide_channels;
        let patch = self.patch();
        let [kd, kh, kw] = self.kernel;
        for (r, row) in rows.enumerate() {
            let (n, pos) = self.row_coords(row);
            let src = &cols[r * patch..(r + 1) * patch];
            let mut off = 0;
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        if let Some(dst) = self.tap(n, pos, [a, b, e]) {
                            for (o, &v) in wide[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                                *o = *o + v;
                            }
                        }
                        off += c;
                    }
                }
            }
        }
    }

    /// Forward convolution: wide input, kernel laid out `[kd,kh,kw,Cwide,Cnarrow]`.
    pub fn wide_to_narrow<T: Float>(&self, wide: &[T], kernel: &[T]) -> Vec<T> {
        debug_assert_eq!(wide.len(), self.wide_len());
        debug_assert_eq!(kernel.len(), self.kernel_len());
        let (patch, cn, rows) = (self.patch(), self.narrow_channels, self.rows());
        let mut out = vec![T::zero(); self.narrow_len()];
        let step = self.chunk_rows();
        let mut cols = vec![T::zero(); step * patch];
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let m = r1 - r0;
            self.im2col(wide, r0..r1, &mut cols);
            T::gemm(
                m,
                patch,
                cn,
                T::one(),
                &cols[..m * patch],
                (patch as isize, 1),
                kernel,
                (cn as isize, 1),
                T::zero(),
                &mut out[r0 * cn..r1 * cn],
                cn as isize,
            );
        }
        out
    }

    /// Adjoint of [`wide_to_narrow`](Self::wide_to_narrow) in its input:
    /// scatters a narrow tensor back onto the wide grid.
    pub fn narrow_to_wide<T: Float>(&self, narrow: &[T], kernel: &[T]) -> Vec<T> {
        debug_assert_eq!(narrow.len(), self.narrow_len());
        debug_assert_eq!(kernel.len(), self.kernel_len());
        let (patch, cn, rows) = (self.patch(), self.narrow_channels, self.rows());
        let mut wide = vec![T::zero(); self.wide_len()];
        let step = self.chunk_rows();
        let mut cols = vec![T::zero(); step * patch];
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let m = r1 - r0;
            T::gemm(
                m,
                cn,
                patch,
                T::one(),
                &narrow[r0 * cn..r1 * cn],
                (cn as isize, 1),
                kernel,
                (1, cn as isize),
                T::zero(),
                &mut cols[..m * patch],
                patch as isize,
            );
            self.col2im(&cols[..m * patch], r0..r1, &mut wide);
        }
        wide
    }

    /// Gradient of the forward convolution with respect to its kernel.
    pub fn kernel_grad<T: Float>(&self, wide: &[T], narrow_grad: &[T]) -> Vec<T> {
        let (patch, cn, rows) = (self.patch(), self.narrow_channels, self.rows());
        let mut grad = vec![T::zero(); self.kernel_len()];
        let step = self.chunk_rows();
        let mut cols = vec![T::zero(); step * patch];
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let m = r1 - r0;
            self.im2col(wide, r0..r1, &mut cols);
            T::gemm(
                patch,
                m,
                cn,
                T::one(),
                &cols[..m * patch],
                (1, patch as isize),
                &narrow_grad[r0 * cn..r1 * cn],
                (cn as isize, 1),
                T::one(),
                &mut grad,
                cn as isize,
            );
        }
        grad
    }
}

/// Adds a per-channel bias in place to a channels-last buffer.
pub fn add_channel_bias<T: Float>(data: &mut [T], bias: &[T]) {
    let c = bias.len();
    for chunk in data.chunks_exact_mut(c) {
        for (v, &b) in chunk.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Per-channel sum over all leading axes.
pub fn channel_sum<T: Float>(data: &[T], channels: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); channels];
    for chunk in data.chunks_exact(channels) {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a = *a + v;
        }
    }
    acc
}
