//! Dense row-major tensors, log-space arithmetic, and the on-disk tensor format.
//!
//! All numeric sequences in this crate (spectrum frames, Gaussian parameters,
//! lattice matrices, gradients) live in [`Tensor`] values: a dimension list plus
//! a flat row-major `f64` payload. Computation is always 64-bit; 32-bit exists
//! only as a storage precision and is widened on load.
//!
//! Log-domain values use `f64::NEG_INFINITY` as the log-zero sentinel. NaN is
//! never stored: constructors and the file reader reject it.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MalnError, Result};

/// Log-domain probability or density value.
///
/// `f64::NEG_INFINITY` is the log-zero sentinel; values are never NaN.
/// Unnormalized log-densities may exceed zero.
pub type LogProb = f64;

/// Log-domain zero.
pub const LOG_ZERO: LogProb = f64::NEG_INFINITY;

/// Magic bytes opening every tensor file.
pub const TENSOR_MAGIC: [u8; 4] = *b"MALN";

/// Current tensor format version.
pub const TENSOR_VERSION: u8 = 0x01;

// ---------------------------------------------------------------------------
// Log-space helpers
// ---------------------------------------------------------------------------

/// `log(exp(a) + exp(b))` without leaving the log domain.
///
/// Log-zero absorbs: `log_add_exp(LOG_ZERO, x) == x`.
#[inline]
pub fn log_add_exp(a: LogProb, b: LogProb) -> LogProb {
    debug_assert!(!a.is_nan() && !b.is_nan());
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(v_i)` over a non-empty slice, stabilized by max subtraction.
///
/// Returns exact [`LOG_ZERO`] when every input is log-zero.
pub fn logsumexp(values: &[LogProb]) -> Result<LogProb> {
    if values.is_empty() {
        return Err(MalnError::EmptyReduction);
    }
    let max = values.iter().cloned().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return Ok(LOG_ZERO);
    }
    debug_assert!(!max.is_nan());
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

// ---------------------------------------------------------------------------
// Tensor container
// ---------------------------------------------------------------------------

/// Storage precision tag. In memory every tensor holds `f64`; the tag only
/// selects the payload width written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0x01,
            DType::F64 => 0x02,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(DType::F32),
            0x02 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Dense row-major array of real values.
///
/// Invariants: every dimension is positive, `product(dims) == data.len()`, and
/// every value is finite or exactly `NEG_INFINITY`. For an `F32` tensor the
/// payload is kept exactly representable in single precision so that disk
/// round-trips are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    let mut len: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(MalnError::InvalidInput("tensor dimensions must be positive".into()));
        }
        len = len
            .checked_mul(d)
            .ok_or_else(|| MalnError::InvalidInput("tensor size overflows".into()))?;
    }
    Ok(len)
}

fn check_value(v: f64) -> Result<()> {
    if v.is_nan() {
        return Err(MalnError::InvalidInput("NaN is never stored in a tensor".into()));
    }
    if v == f64::INFINITY {
        return Err(MalnError::InvalidInput(
            "+inf is not a valid tensor value (only -inf marks log-zero)".into(),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Build a 64-bit tensor from a dimension list and row-major data.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if len != data.len() {
            return Err(MalnError::Shape(format!(
                "dims {:?} imply {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        for &v in &data {
            check_value(v)?;
        }
        Ok(Tensor { dims, data, dtype: DType::F64 })
    }

    /// Change the storage precision. Narrowing to `F32` rounds the payload to
    /// single precision immediately so the in-memory value equals what a disk
    /// round-trip would produce.
    pub fn with_dtype(mut self, dtype: DType) -> Self {
        if dtype == DType::F32 && self.dtype != DType::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self.dtype = dtype;
        self
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Tensor { dims, data: vec![0.0; len], dtype: DType::F64 })
    }

    /// Tensor with every element set to `value` (finite or log-zero).
    pub fn full(dims: Vec<usize>, value: f64) -> Result<Self> {
        check_value(value)?;
        let len = checked_len(&dims)?;
        Ok(Tensor { dims, data: vec![value; len], dtype: DType::F64 })
    }

    /// Rank-2 tensor from a slice of equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MalnError::InvalidInput("no rows".into()));
        }
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MalnError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Size along `axis`.
    pub fn dim(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims[1] + j] = v;
    }

    /// Row `i` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.dims[1];
        &self.data[i * w..(i + 1) * w]
    }

    // -----------------------------------------------------------------------
    // On-disk format
    //
    // Little-endian: magic "MALN", version 0x01, dtype tag (0x01 = f32,
    // 0x02 = f64), rank byte r, r u64 dims, row-major payload.
    // Header length is 7 + 8r bytes.
    // -----------------------------------------------------------------------

    /// Serialize to a writer. Round-trips bit-exactly through [`Tensor::read_from`].
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.dims.len() > u8::MAX as usize {
            return Err(MalnError::InvalidInput("tensor rank exceeds 255".into()));
        }
        w.write_all(&TENSOR_MAGIC)?;
        w.write_all(&[TENSOR_VERSION, self.dtype.tag(), self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match self.dtype {
            DType::F64 => {
                for &v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            DType::F32 => {
                for &v in &self.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Parse a tensor from a reader, widening `f32` payloads to `f64`.
    ///
    /// Malformed input yields [`MalnError::Format`] with the byte offset of the
    /// first offending byte.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
            r.read_exact(buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    MalnError::Format { offset, message: format!("truncated {what}") }
                } else {
                    MalnError::Io(e)
                }
            })
        }

        let mut magic = [0u8; 4];
        read_exact_at(r, &mut magic, 0, "magic")?;
        if magic != TENSOR_MAGIC {
            return Err(MalnError::Format { offset: 0, message: format!("bad magic {magic:02x?}") });
        }

        let mut head = [0u8; 3];
        read_exact_at(r, &mut head, 4, "header")?;
        let [version, dtype_tag, rank] = head;
        if version != TENSOR_VERSION {
            return Err(MalnError::Format {
                offset: 4,
                message: format!("unsupported version 0x{version:02x}"),
            });
        }
        let dtype = DType::from_tag(dtype_tag).ok_or(MalnError::Format {
            offset: 5,
            message: format!("unknown dtype tag 0x{dtype_tag:02x}"),
        })?;

        let mut dims = Vec::with_capacity(rank as usize);
        for i in 0..rank as usize {
            let offset = 7 + 8 * i as u64;
            let mut b = [0u8; 8];
            read_exact_at(r, &mut b, offset, "dims")?;
            let d = u64::from_le_bytes(b);
            if d == 0 {
                return Err(MalnError::Format { offset, message: "zero dimension".into() });
            }
            dims.push(usize::try_from(d).map_err(|_| MalnError::Format {
                offset,
                message: format!("dimension {d} exceeds addressable size"),
            })?);
        }

        let payload_start = 7 + 8 * rank as u64;
        let len = checked_len(&dims).map_err(|_| MalnError::Format {
            offset: payload_start,
            message: "dimension product overflows".into(),
        })?;
        let byte_len = len.checked_mul(dtype.width()).ok_or(MalnError::Format {
            offset: payload_start,
            message: "payload size overflows".into(),
        })?;

        let mut payload = vec![0u8; byte_len];
        read_exact_at(r, &mut payload, payload_start, "payload")?;

        let data: Vec<f64> = match dtype {
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        for (i, &v) in data.iter().enumerate() {
            if check_value(v).is_err() {
                return Err(MalnError::Format {
                    offset: payload_start + (i * dtype.width()) as u64,
                    message: "invalid value (NaN or +inf)".into(),
                });
            }
        }

        Ok(Tensor { dims, data, dtype })
    }

    /// Write to a file path.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Read from a file path.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Tensor::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(t: &Tensor) -> Tensor {
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        Tensor::read_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn logsumexp_single_element_is_identity() {
        assert_eq!(logsumexp(&[-1.25]).unwrap(), -1.25);
    }

    #[test]
    fn logsumexp_log_zero_absorbs() {
        assert_eq!(logsumexp(&[LOG_ZERO, -1.0]).unwrap(), -1.0);
        assert_eq!(logsumexp(&[LOG_ZERO, LOG_ZERO]).unwrap(), LOG_ZERO);
    }

    #[test]
    fn logsumexp_two_values() {
        // -3 + ln(1 + e^-1), evaluated independently
        let expected = -3.0 + (1.0 + (-1.0f64).exp()).ln();
        let got = logsumexp(&[-3.0, -4.0]).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - (-2.686738312481777)).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_empty_is_error() {
        assert!(matches!(logsumexp(&[]), Err(MalnError::EmptyReduction)));
    }

    #[test]
    fn log_add_exp_handles_log_zero() {
        assert_eq!(log_add_exp(LOG_ZERO, -2.0), -2.0);
        assert_eq!(log_add_exp(-2.0, LOG_ZERO), -2.0);
        assert_eq!(log_add_exp(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        let two = log_add_exp(0.0, 0.0);
        assert!((two - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn scalar_f64_file_layout() {
        let t = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        // header 7 + 8*1 bytes, then one f64
        assert_eq!(buf.len(), 15 + 8);
        assert_eq!(&buf[0..4], b"MALN");
        assert_eq!(buf[4], 0x01);
        assert_eq!(buf[5], 0x02);
        assert_eq!(buf[6], 1);
        assert_eq!(roundtrip(&t), t);
    }

    #[test]
    fn rank2_roundtrip_preserves_dims() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let back = roundtrip(&t);
        assert_eq!(back.dims(), &[2, 3]);
        assert_eq!(back, t);
    }

    #[test]
    fn neg_infinity_roundtrips_bit_exactly() {
        let t = Tensor::new(vec![3], vec![LOG_ZERO, -1.5, LOG_ZERO]).unwrap();
        let back = roundtrip(&t);
        assert_eq!(back.data()[0], LOG_ZERO);
        assert_eq!(back.data()[0].to_bits(), LOG_ZERO.to_bits());
        assert_eq!(back, t);
    }

    #[test]
    fn f32_storage_roundtrips() {
        let t = Tensor::new(vec![2, 2], vec![0.1, 0.2, LOG_ZERO, 7.0])
            .unwrap()
            .with_dtype(DType::F32);
        // narrowing happened at construction, so the round-trip is exact
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let back = roundtrip(&t);
        assert_eq!(back.dtype(), DType::F32);
        assert_eq!(back, t);
    }

    #[test]
    fn wrong_magic_is_format_error_at_offset_zero() {
        let mut buf = Vec::new();
        Tensor::new(vec![1], vec![0.0]).unwrap().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        match Tensor::read_from(&mut buf.as_slice()) {
            Err(MalnError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_tag_is_format_error() {
        let mut buf = Vec::new();
        Tensor::new(vec![1], vec![0.0]).unwrap().write_to(&mut buf).unwrap();
        buf[5] = 0x7f;
        match Tensor::read_from(&mut buf.as_slice()) {
            Err(MalnError::Format { offset: 5, .. }) => {}
            other => panic!("expected format error at offset 5, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let mut buf = Vec::new();
        Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        match Tensor::read_from(&mut buf.as_slice()) {
            Err(MalnError::Format { offset, message }) => {
                assert_eq!(offset, 7 + 16);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_at_construction() {
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
        assert!(Tensor::new(vec![1], vec![LOG_ZERO]).is_ok());
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::zeros(vec![2, 0]).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![0.0; 3]), Err(MalnError::Shape(_))));
    }
}
