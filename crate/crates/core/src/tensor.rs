//! Dense rank-4 tensors in row-major N-C-H-W layout.
//!
//! Every operation is a pure function returning a new tensor. The kernel set
//! is deliberately small: exactly what the coupling flow, its gradients and
//! the scoring path need.

use std::fmt::{self, Debug};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// On-disk dtype codes shared with the tensor file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Real element type. `f32` is the production path, `f64` exists for oracles.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` must hold exactly `DTYPE.size_of()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape(format!("all dimensions must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T> Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("dtype", &std::any::type_name::<T>())
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        assert!(shape.numel() > 0, "all dimensions must be >= 1, got {shape}");
        Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape4::new(1, 1, 1, 1), value)
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        assert!(shape.numel() > 0, "all dimensions must be >= 1, got {shape}");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `(h, w)` plane of one batch item and channel.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    // ---- batch helpers ----------------------------------------------------

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor4<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::shape(format!(
                    "stack: shapes {} and {} disagree on (c, h, w)",
                    s, t.shape
                )));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: Shape4::new(n, s.c, s.h, s.w),
            data,
        })
    }

    /// Batch item `i` as an `n = 1` tensor.
    pub fn item(&self, i: usize) -> Self {
        assert!(i < self.shape.n, "batch index {i} out of range");
        let per = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape4::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    // ---- elementwise ------------------------------------------------------

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn tanh(&self) -> Self {
        self.map(T::tanh)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    pub fn square(&self) -> Self {
        self.map(|v| v * v)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean_all(&self) -> T {
        self.sum_all() / T::from_usize(self.data.len()).expect("length fits")
    }

    /// Sum over the channel axis, producing a `c = 1` tensor.
    pub fn sum_over_channels(&self) -> Self {
        let s = self.shape;
        let p = s.plane();
        let mut out = vec![T::zero(); s.n * p];
        for n in 0..s.n {
            let dst = &mut out[n * p..(n + 1) * p];
            for c in 0..s.c {
                for (d, &v) in dst.iter_mut().zip(self.plane(n, c)) {
                    *d += v;
                }
            }
        }
        Tensor4 {
            shape: Shape4::new(s.n, 1, s.h, s.w),
            data: out,
        }
    }

    /// Per-item sum over `(c, h, w)`.
    pub fn sum_per_item(&self) -> Vec<T> {
        let per = self.shape.c * self.shape.plane();
        self.data.chunks(per).map(|c| c.iter().copied().sum()).collect()
    }

    // ---- channel manipulation --------------------------------------------

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::shape(format!(
                "channel range {start}..{} out of bounds for shape {s}",
                start + len
            )));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor4 {
            shape: Shape4::new(s.n, len, s.h, s.w),
            data,
        })
    }

    /// Splits into channel halves `[0, c/2)` and `[c/2, c)`.
    pub fn split_channels(&self) -> Result<(Self, Self)> {
        let c = self.shape.c;
        if c % 2 != 0 {
            return Err(Error::shape(format!(
                "cannot split odd channel count {c} (shape {})",
                self.shape
            )));
        }
        Ok((
            self.narrow_channels(0, c / 2)?,
            self.narrow_channels(c / 2, c / 2)?,
        ))
    }

    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (sa, sb) = (a.shape, b.shape);
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::shape(format!(
                "concat_channels: shapes {sa} and {sb} disagree on (n, h, w)"
            )));
        }
        let p = sa.plane();
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..sa.n {
            data.extend_from_slice(&a.data[n * sa.c * p..(n + 1) * sa.c * p]);
            data.extend_from_slice(&b.data[n * sb.c * p..(n + 1) * sb.c * p]);
        }
        Ok(Tensor4 {
            shape: Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w),
            data,
        })
    }

    /// Output channel `i` is input channel `perm[i]`.
    pub fn permute_channels(&self, perm: &ChannelPerm) -> Result<Self> {
        let s = self.shape;
        if perm.len() != s.c {
            return Err(Error::shape(format!(
                "permutation of length {} applied to shape {s}",
                perm.len()
            )));
        }
        let mut data = Vec::with_capacity(self.len());
        for n in 0..s.n {
            for &src in perm.as_slice() {
                data.extend_from_slice(self.plane(n, src));
            }
        }
        Ok(Tensor4 { shape: s, data })
    }

    // ---- spatial ----------------------------------------------------------

    /// Bilinear resize with half-pixel centers: the source coordinate of
    /// destination index `d` is `(d + 0.5) * src / dst - 0.5`, clamped to
    /// `[0, src - 1]`. Interpolates along `h` first, then `w`.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape(format!(
                "bilinear_resize target {out_h}x{out_w} must be at least 1x1"
            )));
        }
        let s = self.shape;
        let ys = sample_coords::<T>(s.h, out_h);
        let xs = sample_coords::<T>(s.w, out_w);
        let mut data = Vec::with_capacity(s.n * s.c * out_h * out_w);
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                for &(y0, y1, fy) in &ys {
                    for &(x0, x1, fx) in &xs {
                        let a0 = src[y0 * s.w + x0];
                        let a1 = src[y1 * s.w + x0];
                        let b0 = src[y0 * s.w + x1];
                        let b1 = src[y1 * s.w + x1];
                        let left = a0 + (a1 - a0) * fy;
                        let right = b0 + (b1 - b0) * fy;
                        data.push(left + (right - left) * fx);
                    }
                }
            }
        }
        Ok(Tensor4 {
            shape: Shape4::new(s.n, s.c, out_h, out_w),
            data,
        })
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s, |n, c, y, x| self.get(n, c, y, s.w - 1 - x))
    }

    /// Mirror along the height axis.
    pub fn flip_vertical(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s, |n, c, y, x| self.get(n, c, s.h - 1 - y, x))
    }

    /// Rotates each plane by `quarter_turns * 90` degrees counter-clockwise.
    /// Odd turns swap `h` and `w`.
    pub fn rot90(&self, quarter_turns: u32) -> Self {
        let s = self.shape;
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Self::from_fn(Shape4::new(s.n, s.c, s.w, s.h), |n, c, y, x| {
                self.get(n, c, x, s.w - 1 - y)
            }),
            2 => Self::from_fn(s, |n, c, y, x| self.get(n, c, s.h - 1 - y, s.w - 1 - x)),
            _ => Self::from_fn(Shape4::new(s.n, s.c, s.w, s.h), |n, c, y, x| {
                self.get(n, c, s.h - 1 - x, y)
            }),
        }
    }
}

fn sample_coords<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let ratio = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, max);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, T::from_f64_lossy(pos - i0 as f64))
        })
        .collect()
}

/// A bijection on channel indices.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ChannelPerm(Vec<usize>);

impl ChannelPerm {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid(format!("{perm:?} is not a permutation")));
            }
        }
        if perm.is_empty() {
            return Err(Error::invalid("empty permutation"));
        }
        Ok(ChannelPerm(perm))
    }

    pub fn identity(c: usize) -> Self {
        ChannelPerm((0..c).collect())
    }

    /// `[c/2, .., c-1, 0, .., c/2-1]`.
    pub fn swap_halves(c: usize) -> Self {
        let h = c / 2;
        ChannelPerm((h..c).chain(0..h).collect())
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        ChannelPerm(inv)
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &ChannelPerm) -> Self {
        ChannelPerm(next.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for ChannelPerm {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        ChannelPerm::new(v)
    }
}

impl From<ChannelPerm> for Vec<usize> {
    fn from(p: ChannelPerm) -> Self {
        p.0
    }
}

/// Convolution weights `(c_out, c_in, k, k)` plus a bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    weights: Tensor4<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = weights.shape();
        if s.h != s.w || !(s.h == 1 || s.h == 3) {
            return Err(Error::invalid(format!(
                "kernel must be 1x1 or 3x3, got weights {s}"
            )));
        }
        if bias.len() != s.n {
            return Err(Error::shape(format!(
                "bias length {} does not match c_out {}",
                bias.len(),
                s.n
            )));
        }
        Ok(ConvKernel { weights, bias })
    }

    pub fn weights(&self) -> &Tensor4<T> {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape().h
    }
}

/// Cross-correlation with stride 1; `3x3` zero-pads by one so the spatial
/// size is preserved.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    conv2d_raw(input, &kernel.weights, &kernel.bias)
}

fn check_conv_shapes<T: Scalar>(input: &Tensor4<T>, weights: &Tensor4<T>) -> Result<usize> {
    let (si, sw) = (input.shape(), weights.shape());
    if si.c != sw.c {
        return Err(Error::shape(format!(
            "conv2d: input {si} has {} channels but weights {sw} expect {}",
            si.c, sw.c
        )));
    }
    if sw.h != sw.w || !(sw.h == 1 || sw.h == 3) {
        return Err(Error::invalid(format!("conv2d: unsupported kernel {sw}")));
    }
    Ok(sw.h)
}

/// Valid output range for a kernel offset: rows `o` with `0 <= o + off - pad < size`.
#[inline]
fn valid_range(size: usize, off: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(off);
    let hi = (size + pad).saturating_sub(off).min(size);
    (lo, hi)
}

pub(crate) fn conv2d_raw<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
) -> Result<Tensor4<T>> {
    let k = check_conv_shapes(input, weights)?;
    let (si, sw) = (input.shape(), weights.shape());
    if bias.len() != sw.n {
        return Err(Error::shape(format!(
            "conv2d: bias length {} does not match c_out {}",
            bias.len(),
            sw.n
        )));
    }
    let pad = k / 2;
    let (h, w) = (si.h, si.w);
    let mut out = Tensor4::zeros(Shape4::new(si.n, sw.n, h, w));
    let p = h * w;
    for n in 0..si.n {
        for co in 0..sw.n {
            let dst_start = (n * sw.n + co) * p;
            let dst = &mut out.data[dst_start..dst_start + p];
            dst.fill(bias[co]);
            for ci in 0..si.c {
                let src = input.plane(n, ci);
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(h, ky, pad);
                    for kx in 0..k {
                        let (x_lo, x_hi) = valid_range(w, kx, pad);
                        let wv = weights.get(co, ci, ky, kx);
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - pad;
                            let d = &mut dst[oy * w + x_lo..oy * w + x_hi];
                            let s = &src[iy * w + x_lo + kx - pad..iy * w + x_hi + kx - pad];
                            for (o, &v) in d.iter_mut().zip(s) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a convolution output w.r.t. its input.
pub(crate) fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor4<T>,
    weights: &Tensor4<T>,
    input_shape: Shape4,
) -> Tensor4<T> {
    let sw = weights.shape();
    let k = sw.h;
    let pad = k / 2;
    let (h, w) = (input_shape.h, input_shape.w);
    let p = h * w;
    let mut gin = Tensor4::zeros(input_shape);
    for n in 0..input_shape.n {
        for ci in 0..input_shape.c {
            let dst_start = (n * input_shape.c + ci) * p;
            for co in 0..sw.n {
                let g = grad_out.plane(n, co);
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(h, ky, pad);
                    for kx in 0..k {
                        let (x_lo, x_hi) = valid_range(w, kx, pad);
                        let wv = weights.get(co, ci, ky, kx);
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - pad;
                            let row = dst_start + iy * w;
                            let d = &mut gin.data[row + x_lo + kx - pad..row + x_hi + kx - pad];
                            for (o, &gv) in d.iter_mut().zip(&g[oy * w + x_lo..oy * w + x_hi]) {
                                *o += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradients of a convolution output w.r.t. its weights and bias.
pub(crate) fn conv2d_grad_params<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    weight_shape: Shape4,
) -> (Tensor4<T>, Tensor4<T>) {
    let si = input.shape();
    let k = weight_shape.h;
    let pad = k / 2;
    let (h, w) = (si.h, si.w);
    let mut gw = Tensor4::zeros(weight_shape);
    let mut gb = Tensor4::zeros(Shape4::new(1, weight_shape.n, 1, 1));
    for co in 0..weight_shape.n {
        let mut bsum = T::zero();
        for n in 0..si.n {
            bsum += grad_out.plane(n, co).iter().copied().sum::<T>();
        }
        gb.data[co] = bsum;
        for ci in 0..si.c {
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(h, ky, pad);
                for kx in 0..k {
                    let (x_lo, x_hi) = valid_range(w, kx, pad);
                    let mut acc = T::zero();
                    for n in 0..si.n {
                        let g = grad_out.plane(n, co);
                        let src = input.plane(n, ci);
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - pad;
                            let gs = &g[oy * w + x_lo..oy * w + x_hi];
                            let ss = &src[iy * w + x_lo + kx - pad..iy * w + x_hi + kx - pad];
                            for (&a, &b) in gs.iter().zip(ss) {
                                acc += a * b;
                            }
                        }
                    }
                    let i = gw.index(co, ci, ky, kx);
                    gw.data[i] = acc;
                }
            }
        }
    }
    (gw, gb)
}
