//! Dense row-major `f64` tensors and the forward kernels every other module
//! is built from.
//!
//! A [`Tensor`] is an immutable value: ops return new tensors and the backing
//! buffer is shared behind an `Arc`, so clones are cheap and tensors can move
//! freely between threads. Gradient tracking lives in [`crate::tape`]; this
//! module only knows about values.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest argument for which `exp` stays finite in `f64` (ln of `f64::MAX`).
pub const EXP_OVERFLOW: f64 = 709.782_712_893_384;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= SHOWN {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?} ..", &self.data[..SHOWN])
        }
    }
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            dims: vec![n, n],
            data: Arc::new(data),
        }
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: Arc::new((0..n).map(f).collect()),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor with dims {:?}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.dims);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_dims(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{op}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_dims(other, op)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|x| -x)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    /// Natural exponential; fails instead of producing `inf`.
    pub fn exp(&self) -> Result<Tensor> {
        if let Some(&bad) = self.data.iter().find(|&&x| x > EXP_OVERFLOW) {
            return Err(Error::NumericRange(format!(
                "exp({bad}) overflows f64 (threshold {EXP_OVERFLOW})"
            )));
        }
        Ok(self.map(f64::exp))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn matrix_dims(&self, op: &str) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{op} expects a matrix, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (p, q) = self.matrix_dims("matmul")?;
        let (q2, r) = other.matrix_dims("matmul")?;
        if q != q2 {
            return Err(Error::shape(format!(
                "matmul inner dims disagree: {:?} x {:?}",
                self.dims, other.dims
            )));
        }
        let mut out = vec![0.0; p * r];
        matmul_acc(&self.data, &other.data, &mut out, p, q, r);
        Tensor::new(&[p, r], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("transpose")?;
        Tensor::new(&[c, r], transpose_raw(&self.data, r, c))
    }

    /// Sum of every row of a matrix.
    pub fn row_sums(&self) -> Result<Vec<f64>> {
        let (r, c) = self.matrix_dims("row_sums")?;
        Ok((0..r)
            .map(|i| self.data[i * c..(i + 1) * c].iter().sum())
            .collect())
    }

    fn chw(&self, op: &str) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "{op} expects a c x h x w feature map, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// 2-D cross-correlation of a `c_in x h x w` map with a
    /// `c_out x c_in x k x k` kernel bank plus per-channel bias.
    ///
    /// Output extent is `floor((h + 2 pad - k) / stride) + 1`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let geom = ConvGeometry::new(self, weight, bias, stride, pad)?;
        let mut out = vec![0.0; geom.c_out * geom.oh * geom.ow];
        geom.forward(&self.data, &weight.data, &bias.data, &mut out);
        Tensor::new(&[geom.c_out, geom.oh, geom.ow], out)
    }

    /// Nearest-neighbour 2x upsampling: every pixel becomes a 2x2 block.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let (c, h, w) = self.chw("upsample2x")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src = &self.data[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = src[x / 2];
                }
            }
        }
        Tensor::new(&[c, h2, w2], out)
    }

    /// Stacks `other`'s channels after `self`'s.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (c1, h, w) = self.chw("concat_channels")?;
        let (c2, h2, w2) = other.chw("concat_channels")?;
        if (h, w) != (h2, w2) {
            return Err(Error::shape(format!(
                "concat_channels spatial mismatch: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let mut data = Vec::with_capacity((c1 + c2) * h * w);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::new(&[c1 + c2, h, w], data)
    }
}

/// `out += a (p x q) * b (q x r)`, all row-major.
///
/// Dispatches to an AVX2 build of the same kernel when the CPU has it. Both
/// builds perform identical separate multiplies and adds, so results do not
/// depend on which one runs.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    assert!(a.len() >= p * q && b.len() >= q * r && out.len() >= p * r);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { matmul_acc_avx2(a, b, out, p, q, r) };
            return;
        }
    }
    matmul_kernel(a, b, out, p, q, r);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_acc_avx2(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    matmul_kernel(a, b, out, p, q, r);
}

/// Tiles of four output rows by `TILE` columns, so each loaded row of `b`
/// feeds four accumulators while the tile stays in L1.
#[inline(always)]
fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    const TILE: usize = 256;
    let mut i = 0;
    while i + 4 <= p {
        let (o0, rest) = out[i * r..(i + 4) * r].split_at_mut(r);
        let (o1, rest) = rest.split_at_mut(r);
        let (o2, o3) = rest.split_at_mut(r);
        let rows = [
            &a[i * q..(i + 1) * q],
            &a[(i + 1) * q..(i + 2) * q],
            &a[(i + 2) * q..(i + 3) * q],
            &a[(i + 3) * q..(i + 4) * q],
        ];
        for j0 in (0..r).step_by(TILE) {
            let j1 = (j0 + TILE).min(r);
            let (t0, t1, t2, t3) = (
                &mut o0[j0..j1],
                &mut o1[j0..j1],
                &mut o2[j0..j1],
                &mut o3[j0..j1],
            );
            for k in 0..q {
                let (a0, a1, a2, a3) = (rows[0][k], rows[1][k], rows[2][k], rows[3][k]);
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                    continue;
                }
                let bs = &b[k * r + j0..k * r + j1];
                let quad = t0
                    .iter_mut()
                    .zip(t1.iter_mut())
                    .zip(t2.iter_mut().zip(t3.iter_mut()));
                for (((x0, x1), (x2, x3)), &bv) in quad.zip(bs) {
                    *x0 += a0 * bv;
                    *x1 += a1 * bv;
                    *x2 += a2 * bv;
                    *x3 += a3 * bv;
                }
            }
        }
        i += 4;
    }
    for i in i..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b[k * r..(k + 1) * r]) {
                *o += aik * bv;
            }
        }
    }
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Validated extents of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(
        x: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (c_in, h, w) = x.chw("conv2d")?;
        let [c_out, wc_in, k, k2] = weight.dims[..] else {
            return Err(Error::shape(format!(
                "conv2d weight must be c_out x c_in x k x k, got {:?}",
                weight.dims
            )));
        };
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d needs a square odd kernel, got {k}x{k2}"
            )));
        }
        if bias.dims != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias must have dims [{c_out}], got {:?}",
                bias.dims
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv2d kernel {k} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is inside the image.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        // smallest ox with ox*stride + kx >= pad
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        // largest ox with ox*stride + kx - pad <= w - 1
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds `x` into a `(c_in*k*k) x (oh*ow)` patch matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.oh * self.ow;
        let mut cols = vec![0.0; self.patch_len() * n];
        for ci in 0..self.c_in {
            let xin = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.col_range(kx);
                    for oy in 0..self.oh {
                        let Some(iy) = self.input_row(oy, ky) else {
                            continue;
                        };
                        let src = &xin[iy * self.w..(iy + 1) * self.w];
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        for ox in lo..hi {
                            out[ox] = src[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto `gx`.
    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let n = self.oh * self.ow;
        for ci in 0..self.c_in {
            let gin = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.col_range(kx);
                    for oy in 0..self.oh {
                        let Some(iy) = self.input_row(oy, ky) else {
                            continue;
                        };
                        let g = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut gin[iy * self.w..(iy + 1) * self.w];
                        for ox in lo..hi {
                            dst[ox * self.stride + kx - self.pad] += g[ox];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let n = self.oh * self.ow;
        for (co, plane) in out.chunks_mut(n).enumerate() {
            plane.fill(bias[co]);
        }
        if self.is_pointwise() {
            matmul_acc(weight, x, out, self.c_out, self.c_in, n);
        } else {
            let cols = self.im2col(x);
            matmul_acc(weight, &cols, out, self.c_out, self.patch_len(), n);
        }
    }

    /// Accumulates input, weight and bias gradients for upstream gradient `gout`.
    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        gout: &[f64],
        gx: Option<&mut [f64]>,
        gw: Option<&mut [f64]>,
        gb: Option<&mut [f64]>,
    ) {
        let n = self.oh * self.ow;
        let kl = self.patch_len();
        if let Some(gb) = gb {
            for (g, plane) in gb.iter_mut().zip(gout.chunks(n)) {
                *g += plane.iter().sum::<f64>();
            }
        }
        if let Some(gw) = gw {
            let cols_t = if self.is_pointwise() {
                transpose_raw(x, kl, n)
            } else {
                transpose_raw(&self.im2col(x), kl, n)
            };
            matmul_acc(gout, &cols_t, gw, self.c_out, n, kl);
        }
        if let Some(gx) = gx {
            let wt = transpose_raw(weight, self.c_out, kl);
            if self.is_pointwise() {
                matmul_acc(&wt, gout, gx, kl, self.c_out, n);
            } else {
                let mut gcols = vec![0.0; kl * n];
                matmul_acc(&wt, gout, &mut gcols, kl, self.c_out, n);
                self.col2im(&gcols, gx);
            }
        }
    }
}
