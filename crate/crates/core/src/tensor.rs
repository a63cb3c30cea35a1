//! Dense row-major tensors and the flat on-disk tensor format.
//!
//! Compute happens in f64; the file format stores f32. The format is
//! fixed byte-for-byte: magic `N2ST`, version byte 0x01, dtype byte 0x01
//! (float32), an ndim byte, ndim little-endian u32 extents, then the
//! row-major little-endian float32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"N2ST";
const VERSION: u8 = 0x01;
const DTYPE_F32: u8 = 0x01;

/// N-dimensional row-major tensor of f64 values.
///
/// Invariants: the data length equals the product of the extents, the
/// product is positive, and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".into()));
    }
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| Error::InvalidShape(format!("extent product overflow in {shape:?}")))?;
    }
    Ok(n)
}

impl Tensor {
    /// Builds a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::new", index: i });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![0.0; n] })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = checked_numel(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "Tensor::full", index: 0 });
        }
        Ok(Self { shape: shape.to_vec(), data: vec![value; n] })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Consumes the tensor, returning its flat payload.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Elementwise map; the result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::map", index: i });
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::zip_with", index: i });
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.numel() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (self.numel() as f64 - 1.0)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Writes a tensor in the flat tensor format (values rounded to f32).
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32])?;
    if t.shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("ndim {} exceeds format limit", t.shape.len())));
    }
    w.write_all(&[t.shape.len() as u8])?;
    for &e in &t.shape {
        let e32 = u32::try_from(e)
            .map_err(|_| Error::Format(format!("extent {e} overflows u32")))?;
        w.write_all(&e32.to_le_bytes())?;
    }
    for &v in &t.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tensor written by [`write_tensor`], validating the header.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if head[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    if head[5] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {}", head[5])));
    }
    let ndim = head[6] as usize;
    if ndim == 0 {
        return Err(Error::Format("zero-dimensional header".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated extents".into()))?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n = checked_numel(&shape).map_err(|_| Error::Format(format!("bad extents {shape:?}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            n * 4
        )));
    }
    let mut data = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        data.push(v);
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "read_tensor", index: i });
    }
    Ok(Tensor { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_zero_shapes() {
        assert!(Tensor::zeros(&[]).is_err());
        assert!(Tensor::zeros(&[3, 0]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        let t = Tensor::new(vec![1], vec![2.0]).unwrap();
        assert!(t.map(|v| v / 0.0).is_err());
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.n2st");
        let t = Tensor::new(vec![2, 3], vec![0.1, -0.25, 1.0, 3.5e-3, 123.456, 0.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data().iter()) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, (*a as f32) as f64);
        }
    }

    #[test]
    fn header_bytes_are_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.n2st");
        let t = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"N2ST");
        assert_eq!(bytes[4], 0x01);
        assert_eq!(bytes[5], 0x01);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 7 + 8 + 8);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.n2st");
        std::fs::write(&path, b"XXXX\x01\x01\x01\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        match read_tensor(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dim_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zd.n2st");
        std::fs::write(&path, b"N2ST\x01\x01\x00").unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tr.n2st");
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }
}
