//! Minimal dense-tensor kernels: batched matmul, masked row softmax,
//! and 1-D pooling. Row-major storage, float element type chosen by the
//! caller (f64 for reference runs, f32 for benchmark runs).
//!
//! All operations are pure functions over immutable inputs and check
//! their outputs for NaN/Inf; a non-finite value is an error, never a
//! silently returned tensor.

use std::fmt;

use num_traits::Float;

use crate::error::{Result, SnapError};

/// Additive-mask surrogate for negative infinity. Softmax uses
/// max-subtraction so this never produces NaN, while keeping masked
/// mass below 1e-12.
pub const NEG_MASK: f64 = -1e9;

/// Threshold below which a row maximum is considered fully masked.
const FULLY_MASKED: f64 = -1e8;

/// Element precision of a tensor or model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub const fn bytes(self) -> usize {
        match self {
            Self::F64 => 8,
            Self::F32 => 4,
        }
    }

    pub const fn tag(self) -> u8 {
        match self {
            Self::F64 => 0,
            Self::F32 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::F64),
            1 => Ok(Self::F32),
            t => Err(SnapError::Format(format!("unknown precision tag {t}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::F64 => write!(f, "f64"),
            Self::F32 => write!(f, "f32"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = SnapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Self::F64),
            "f32" => Ok(Self::F32),
            other => Err(SnapError::Config(format!(
                "precision must be f32 or f64, got {other:?}"
            ))),
        }
    }
}

/// Float element usable as tensor storage. Implemented for `f32` and `f64`.
pub trait Element:
    Float
    + num_traits::NumAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn from_le(bytes: &[u8]) -> Self;
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

/// Pooling mode for [`Tensor::pool1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Max => write!(f, "max"),
            Self::Avg => write!(f, "avg"),
        }
    }
}

impl std::str::FromStr for PoolMode {
    type Err = SnapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "avg" => Ok(Self::Avg),
            other => Err(SnapError::Config(format!(
                "pooling must be max or avg, got {other:?}"
            ))),
        }
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(SnapError::Shape(format!(
                "shape {shape:?} implies {expect} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape of equal volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(SnapError::Shape(format!(
                "cannot reshape {:?} ({} elems) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, op: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(SnapError::Numeric(format!(
                "{op}: non-finite value {} at flat index {pos}",
                self.data[pos]
            )));
        }
        Ok(())
    }

    /// Batched matrix product over the last two axes. Accepts rank 2..=4
    /// operands; leading batch dimensions must be broadcast-compatible
    /// (equal or 1).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (ra, rb) = (self.rank(), other.rank());
        if !(2..=4).contains(&ra) || !(2..=4).contains(&rb) {
            return Err(SnapError::Shape(format!(
                "matmul needs rank 2..4 operands, got {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, ka) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (kb, n) = (other.shape[rb - 2], other.shape[rb - 1]);
        if ka != kb {
            return Err(SnapError::Shape(format!(
                "matmul inner dims disagree: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let batch_a = &self.shape[..ra - 2];
        let batch_b = &other.shape[..rb - 2];
        let batch = broadcast_dims(batch_a, batch_b).ok_or_else(|| {
            SnapError::Shape(format!(
                "matmul batch dims not broadcastable: {:?} x {:?}",
                self.shape, other.shape
            ))
        })?;

        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = Self::zeros(out_shape);

        let batch_count: usize = batch.iter().product();
        let mat_a = m * ka;
        let mat_b = kb * n;
        let mat_o = m * n;
        for b in 0..batch_count {
            let idx = unravel(b, &batch);
            let oa = batch_offset(&idx, batch_a);
            let ob = batch_offset(&idx, batch_b);
            let a = &self.data[oa * mat_a..(oa + 1) * mat_a];
            let bm = &other.data[ob * mat_b..(ob + 1) * mat_b];
            let o = &mut out.data[b * mat_o..(b + 1) * mat_o];
            matmul_2d(a, bm, o, m, ka, n);
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// Softmax along the last axis, with an optional additive mask that
    /// broadcasts to this tensor's shape. Masked entries use [`NEG_MASK`];
    /// a fully masked row is an error (undefined distribution).
    pub fn softmax_rows(&self, mask: Option<&Self>) -> Result<Self> {
        if self.rank() < 1 {
            return Err(SnapError::Shape("softmax_rows needs rank >= 1".into()));
        }
        if let Some(m) = mask {
            if broadcast_to(m.shape(), self.shape()).is_none() {
                return Err(SnapError::Shape(format!(
                    "mask shape {:?} does not broadcast to {:?}",
                    m.shape, self.shape
                )));
            }
        }
        let row_len = *self.shape.last().unwrap();
        let rows = self.data.len() / row_len.max(1);
        let mut out = Self::zeros(self.shape.clone());
        let mut logits = vec![0.0f64; row_len];
        for r in 0..rows {
            let src = &self.data[r * row_len..(r + 1) * row_len];
            for (j, v) in src.iter().enumerate() {
                logits[j] = v.as_f64();
            }
            if let Some(m) = mask {
                for (j, l) in logits.iter_mut().enumerate() {
                    *l += mask_value(m, self.shape(), r * row_len + j).as_f64();
                }
            }
            let dst = &mut out.data[r * row_len..(r + 1) * row_len];
            softmax_into(&logits, dst).map_err(|e| {
                SnapError::Numeric(format!("softmax_rows row {r}: {e}"))
            })?;
        }
        out.check_finite("softmax_rows")?;
        Ok(out)
    }

    /// 1-D pooling along the last axis: stride 1, symmetric padding
    /// `kernel/2`, so the axis length is preserved. Max mode pads with the
    /// negative-infinity surrogate (out-of-range positions are ignored);
    /// avg mode pads with zero and always divides by the kernel size.
    pub fn pool1d(&self, kernel: usize, mode: PoolMode) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(SnapError::Config(format!(
                "pool1d kernel must be odd and positive, got {kernel}"
            )));
        }
        let l = *self.shape.last().ok_or_else(|| {
            SnapError::Shape("pool1d needs rank >= 1".into())
        })?;
        let half = kernel / 2;
        let rows = self.data.len() / l.max(1);
        let mut out = Self::zeros(self.shape.clone());
        for r in 0..rows {
            let src = &self.data[r * l..(r + 1) * l];
            let dst = &mut out.data[r * l..(r + 1) * l];
            for i in 0..l {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(l);
                match mode {
                    PoolMode::Max => {
                        let mut best = src[lo];
                        for &v in &src[lo + 1..hi] {
                            if v > best {
                                best = v;
                            }
                        }
                        dst[i] = best;
                    }
                    PoolMode::Avg => {
                        let mut sum = T::zero();
                        for &v in &src[lo..hi] {
                            sum += v;
                        }
                        dst[i] = sum / T::from_f64(kernel as f64);
                    }
                }
            }
        }
        out.check_finite("pool1d")?;
        Ok(out)
    }
}

/// Stable softmax of `logits` into `dst` (max-subtraction). Errors when
/// the row is fully masked.
fn softmax_into<T: Element>(logits: &[f64], dst: &mut [T]) -> std::result::Result<(), String> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || max <= FULLY_MASKED {
        return Err("fully masked row (no unmasked entries)".into());
    }
    let mut denom = 0.0;
    for &l in logits {
        denom += (l - max).exp();
    }
    for (d, &l) in dst.iter_mut().zip(logits) {
        *d = T::from_f64((l - max).exp() / denom);
    }
    Ok(())
}

/// Dot product with four accumulators so the inner loop vectorizes.
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut rest = T::zero();
    for i in chunks * 4..a.len() {
        rest += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + rest
}

/// Row-major 2-D matmul kernel, ikj order for cache locality.
fn matmul_2d<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn broadcast_dims(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_end(a, rank - 1 - i);
        let db = dim_from_end(b, rank - 1 - i);
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

fn dim_from_end(shape: &[usize], from_end: usize) -> usize {
    if from_end < shape.len() {
        shape[shape.len() - 1 - from_end]
    } else {
        1
    }
}

/// Checks `src` broadcasts to `dst` (trailing-aligned, dims equal or 1).
fn broadcast_to(src: &[usize], dst: &[usize]) -> Option<()> {
    if src.len() > dst.len() {
        return None;
    }
    for (i, &s) in src.iter().rev().enumerate() {
        let d = dst[dst.len() - 1 - i];
        if s != d && s != 1 {
            return None;
        }
    }
    Some(())
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for i in (0..shape.len()).rev() {
        idx[i] = flat % shape[i];
        flat /= shape[i];
    }
    idx
}

/// Flat batch offset of broadcast index `idx` into a tensor whose batch
/// dims are `dims` (size-1 dims are pinned at 0).
fn batch_offset(idx: &[usize], dims: &[usize]) -> usize {
    let skip = idx.len() - dims.len();
    let mut off = 0;
    for (i, &d) in dims.iter().enumerate() {
        let j = if d == 1 { 0 } else { idx[skip + i] };
        off = off * d + j;
    }
    off
}

/// Value of the (broadcast) mask at flat index `flat` of the target shape.
fn mask_value<T: Element>(mask: &Tensor<T>, target: &[usize], flat: usize) -> T {
    let idx = unravel(flat, target);
    let skip = target.len() - mask.shape().len();
    let mut off = 0;
    for (i, &d) in mask.shape().iter().enumerate() {
        let j = if d == 1 { 0 } else { idx[skip + i] };
        off = off * d + j;
    }
    mask.data()[off]
}
