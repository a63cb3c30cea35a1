//! Binary Netpbm I/O: PGM (P5) and PPM (P6), 8- and 16-bit samples,
//! 16-bit stored big-endian per the format. Images map to [0,1] tensors
//! of shape [C,H,W]; writing clamps to [0,1] and rounds to the target
//! depth.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tweedie_core::Tensor;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Image {
    pub tensor: Tensor,
    pub depth: BitDepth,
}

struct HeaderReader<R: Read> {
    inner: R,
    peeked: Option<u8>,
}

impl<R: Read> HeaderReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, peeked: None }
    }

    fn next_byte(&mut self) -> Result<u8> {
        if let Some(b) = self.peeked.take() {
            return Ok(b);
        }
        let mut buf = [0u8; 1];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| CliError::data("truncated netpbm header"))?;
        Ok(buf[0])
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<String> {
        let mut b = self.next_byte()?;
        loop {
            if b == b'#' {
                while b != b'\n' {
                    b = self.next_byte()?;
                }
            }
            if !b.is_ascii_whitespace() {
                break;
            }
            b = self.next_byte()?;
        }
        let mut tok = vec![b];
        loop {
            let c = self.next_byte()?;
            if c.is_ascii_whitespace() {
                break;
            }
            if c == b'#' {
                self.peeked = Some(c);
                break;
            }
            tok.push(c);
        }
        String::from_utf8(tok).map_err(|_| CliError::data("non-ascii netpbm header"))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse::<usize>()
            .map_err(|_| CliError::data(format!("bad netpbm header number `{tok}`")))
    }
}

pub fn read_netpbm(path: &Path) -> Result<Image> {
    let file = File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut r = HeaderReader::new(BufReader::new(file));
    let magic = r.token()?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(CliError::data(format!("unsupported netpbm magic `{other}`"))),
    };
    let w = r.number()?;
    let h = r.number()?;
    let maxval = r.number()?;
    if w == 0 || h == 0 {
        return Err(CliError::data("netpbm image with zero extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CliError::data(format!("netpbm maxval {maxval} out of range")));
    }
    let depth = if maxval <= 255 { BitDepth::Eight } else { BitDepth::Sixteen };
    let bytes_per_sample = if maxval <= 255 { 1 } else { 2 };
    let mut raster = vec![0u8; w * h * channels * bytes_per_sample];
    r.inner
        .read_exact(&mut raster)
        .map_err(|_| CliError::data(format!("truncated raster in {}", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).unwrap_or(0) != 0 {
        return Err(CliError::data(format!("trailing bytes in {}", path.display())));
    }
    let scale = 1.0 / maxval as f64;
    // Raster is interleaved; tensors are planar [C,H,W].
    let mut data = vec![0.0f64; channels * h * w];
    for idx in 0..h * w {
        for c in 0..channels {
            let s = idx * channels + c;
            let v = if bytes_per_sample == 1 {
                raster[s] as u32
            } else {
                u32::from(raster[2 * s]) << 8 | u32::from(raster[2 * s + 1])
            };
            if v as usize > maxval {
                return Err(CliError::data(format!(
                    "sample {v} exceeds maxval {maxval} in {}",
                    path.display()
                )));
            }
            data[c * h * w + idx] = v as f64 * scale;
        }
    }
    let tensor = Tensor::new(vec![channels, h, w], data).map_err(CliError::from)?;
    Ok(Image { tensor, depth })
}

pub fn write_netpbm(path: &Path, tensor: &Tensor, depth: BitDepth) -> Result<()> {
    let shape = tensor.shape();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(CliError::data(format!(
            "netpbm writer expects [1|3,H,W], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let maxval = depth.maxval();
    let file = File::create(path)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    write!(out, "{magic}\n{w} {h}\n{maxval}\n")?;
    let data = tensor.data();
    for idx in 0..h * w {
        for ch in 0..c {
            let v = data[ch * h * w + idx].clamp(0.0, 1.0);
            let q = (v * maxval as f64).round() as u32;
            match depth {
                BitDepth::Eight => out.write_all(&[q as u8])?,
                BitDepth::Sixteen => out.write_all(&[(q >> 8) as u8, (q & 0xff) as u8])?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Rec.601 luma of an RGB tensor; single-channel inputs pass through.
pub fn to_gray(tensor: &Tensor) -> Result<Tensor> {
    let shape = tensor.shape();
    if shape.len() != 3 {
        return Err(CliError::data(format!("expected [C,H,W], got {shape:?}")));
    }
    if shape[0] == 1 {
        return Ok(tensor.clone());
    }
    if shape[0] != 3 {
        return Err(CliError::data("grayscale conversion needs 1 or 3 channels"));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = tensor.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(plane);
    for idx in 0..plane {
        out.push(0.299 * data[idx] + 0.587 * data[plane + idx] + 0.114 * data[2 * plane + idx]);
    }
    Tensor::new(vec![1, h, w], out).map_err(CliError::from)
}

/// Mean squared error and peak signal-to-noise ratio on the [0,1]
/// scale; identical images report infinite PSNR.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(CliError::data(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
