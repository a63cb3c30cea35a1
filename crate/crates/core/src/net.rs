//! Residual score network: a plain convolutional stack with forward
//! evaluation, exact reverse-mode parameter gradients, an Adam
//! optimizer, and parameter (de)serialization.
//!
//! The network maps [C,H,W] to [C,H,W] with stride-1 convolutions and
//! same padding by edge replication, so constant inputs stay constant
//! and shapes are preserved at any size. There is no autodiff graph;
//! backward is written directly against the three convolution kernels
//! (output, weight-gradient, input-gradient), which keeps the whole
//! model dependency-free and deterministic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const PARAM_MAGIC: [u8; 4] = *b"N2SP";
const PARAM_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }
}

/// Architecture description; the parameter count is a pure function of
/// this value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// The reference architecture: five 3x3 convolutions,
    /// C -> 48 -> 48 -> 48 -> 48 -> C, ReLU between layers, nothing
    /// after the last.
    pub fn reference(channels: usize) -> Self {
        const HIDDEN: usize = 48;
        let mut layers = Vec::with_capacity(5);
        let widths = [channels, HIDDEN, HIDDEN, HIDDEN, HIDDEN, channels];
        for i in 0..5 {
            layers.push(LayerSpec {
                in_channels: widths[i],
                out_channels: widths[i + 1],
                kernel: 3,
                activation: if i < 4 { Activation::Relu } else { Activation::None },
            });
        }
        NetSpec { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("net spec has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::InvalidParameter(format!("layer {i} has zero channels")));
            }
            if l.kernel == 0 || l.kernel % 2 == 0 {
                return Err(Error::InvalidParameter(format!(
                    "layer {i} kernel {} must be odd",
                    l.kernel
                )));
            }
            if i + 1 < self.layers.len() && l.out_channels != self.layers[i + 1].in_channels {
                return Err(Error::InvalidParameter(format!(
                    "layer {i} out {} does not feed layer {} in {}",
                    l.out_channels,
                    i + 1,
                    self.layers[i + 1].in_channels
                )));
            }
        }
        let first = self.layers.first().unwrap();
        let last = self.layers.last().unwrap();
        if first.in_channels != last.out_channels {
            return Err(Error::InvalidParameter(
                "net must preserve the channel count".into(),
            ));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// The parametric residual model. Parameters live in one flat tensor in
/// canonical order: per layer, weights [out][in][ky][kx] then biases.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    spec: NetSpec,
    params: Tensor,
}

impl ResidualNet {
    pub fn new(spec: NetSpec, params: Tensor) -> Result<Self> {
        spec.validate()?;
        if params.numel() != spec.param_count() || params.shape().len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "spec wants {} flat parameters, got {:?}",
                spec.param_count(),
                params.shape()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let params = Tensor::zeros(&[spec.param_count()])?;
        Ok(Self { spec, params })
    }

    /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases,
    /// drawn in canonical order from the given generator.
    pub fn glorot(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut data = Vec::with_capacity(spec.param_count());
        for l in &spec.layers {
            let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
            let fan_out = (l.out_channels * l.kernel * l.kernel) as f64;
            let lim = (6.0 / (fan_in + fan_out)).sqrt();
            for _ in 0..l.weight_count() {
                data.push(rng.uniform_in(-lim, lim));
            }
            data.extend(std::iter::repeat(0.0).take(l.out_channels));
        }
        let params = Tensor::new(vec![spec.param_count()], data)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    pub fn set_params(&mut self, params: Tensor) -> Result<()> {
        if params.numel() != self.spec.param_count() || params.shape().len() != 1 {
            return Err(Error::ShapeMismatch("parameter tensor does not fit the spec".into()));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, y: &Tensor) -> Result<(usize, usize, usize)> {
        let shape = y.shape();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected [C,H,W] input, got {shape:?}"
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if c != self.spec.channels() {
            return Err(Error::ShapeMismatch(format!(
                "input has {c} channels, net expects {}",
                self.spec.channels()
            )));
        }
        Ok((c, h, w))
    }

    /// Deterministic evaluation; output shape equals input shape.
    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let (_, h, w) = self.check_input(y)?;
        let trace = self.run_forward(y.data(), h, w);
        let out = trace.post.last().unwrap().clone();
        Tensor::new(y.shape().to_vec(), out)
    }

    fn run_forward(&self, input: &[f64], h: usize, w: usize) -> ForwardTrace {
        let params = self.params.data();
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.spec.layers.len());
        post.push(input.to_vec());
        let mut offset = 0usize;
        for l in &self.spec.layers {
            let weights = &params[offset..offset + l.weight_count()];
            let bias = &params[offset + l.weight_count()..offset + l.param_count()];
            offset += l.param_count();
            let mut z = vec![0.0; l.out_channels * h * w];
            conv_forward(
                post.last().unwrap(),
                l.in_channels,
                h,
                w,
                weights,
                bias,
                l.out_channels,
                l.kernel,
                &mut z,
            );
            let a = match l.activation {
                Activation::None => z.clone(),
                Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            };
            pre.push(z);
            post.push(a);
        }
        ForwardTrace { pre, post }
    }

    /// Exact gradient of <upstream, forward(y)> with respect to the flat
    /// parameters.
    pub fn backward(&self, y: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        let (_, h, w) = self.check_input(y)?;
        if !upstream.same_shape(y) {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} vs output {:?}",
                upstream.shape(),
                y.shape()
            )));
        }
        let trace = self.run_forward(y.data(), h, w);
        let grads = self.run_backward(&trace, upstream.data(), h, w);
        Tensor::new(vec![self.spec.param_count()], grads)
    }

    fn run_backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let params = self.params.data();
        let n_layers = self.spec.layers.len();
        let mut grads = vec![0.0; self.spec.param_count()];

        // Parameter offsets per layer.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0usize;
        for l in &self.spec.layers {
            offsets.push(off);
            off += l.param_count();
        }

        let mut g: Vec<f64> = upstream.to_vec();
        for li in (0..n_layers).rev() {
            let l = &self.spec.layers[li];
            // Through the activation: d relu(z) = 1[z > 0].
            if l.activation == Activation::Relu {
                for (gi, &zi) in g.iter_mut().zip(trace.pre[li].iter()) {
                    if zi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let layer_input = &trace.post[li];
            let offset = offsets[li];
            let (w_grad, rest) = grads[offset..offset + l.param_count()]
                .split_at_mut(l.weight_count());
            conv_weight_grad(layer_input, l.in_channels, h, w, &g, l.out_channels, l.kernel, w_grad);
            // Bias gradient: plain sums over each output plane.
            for o in 0..l.out_channels {
                rest[o] = g[o * h * w..(o + 1) * h * w].iter().sum();
            }
            if li > 0 {
                let weights = &params[offset..offset + l.weight_count()];
                let mut g_in = vec![0.0; l.in_channels * h * w];
                conv_input_grad(&g, l.out_channels, h, w, weights, l.in_channels, l.kernel, &mut g_in);
                g = g_in;
            }
        }
        grads
    }

    /// Writes magic, version, the layer table (little-endian u32s), then
    /// parameters as little-endian f32 in canonical order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&PARAM_MAGIC)?;
        out.write_all(&[PARAM_VERSION])?;
        out.write_all(&(self.spec.layers.len() as u32).to_le_bytes())?;
        for l in &self.spec.layers {
            out.write_all(&(l.in_channels as u32).to_le_bytes())?;
            out.write_all(&(l.out_channels as u32).to_le_bytes())?;
            out.write_all(&(l.kernel as u32).to_le_bytes())?;
            out.write_all(&l.activation.code().to_le_bytes())?;
        }
        for &v in self.params.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut head = [0u8; 5];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated parameter header".into()))?;
        if head[0..4] != PARAM_MAGIC {
            return Err(Error::Format("bad parameter magic".into()));
        }
        if head[4] != PARAM_VERSION {
            return Err(Error::Format(format!("unsupported parameter version {}", head[4])));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32buf)
                .map_err(|_| Error::Format("truncated layer table".into()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let n_layers = read_u32(&mut r)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_channels = read_u32(&mut r)? as usize;
            let out_channels = read_u32(&mut r)? as usize;
            let kernel = read_u32(&mut r)? as usize;
            let activation = Activation::from_code(read_u32(&mut r)?)?;
            layers.push(LayerSpec { in_channels, out_channels, kernel, activation });
        }
        let spec = NetSpec { layers };
        spec.validate().map_err(|e| Error::Format(format!("bad layer table: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != spec.param_count() * 4 {
            return Err(Error::Format(format!(
                "parameter payload is {} bytes, expected {}",
                payload.len(),
                spec.param_count() * 4
            )));
        }
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let params = Tensor::new(vec![spec.param_count()], data)?;
        Ok(Self { spec, params })
    }

    /// Loads a parameter file and verifies it matches the expected spec.
    pub fn load_matching(path: &Path, expected: &NetSpec) -> Result<Self> {
        let net = Self::load(path)?;
        if net.spec != *expected {
            return Err(Error::ShapeMismatch(format!(
                "parameter file spec {:?} does not match expected {:?}",
                net.spec, expected
            )));
        }
        Ok(net)
    }
}

struct ForwardTrace {
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    /// post[0] is the network input; post[l+1] the activated output of
    /// layer l.
    post: Vec<Vec<f64>>,
}

// The three convolution kernels. Same padding is edge replication:
// source indices clamp to the valid range, which each kernel handles by
// splitting every row into an interior run (contiguous, vectorizable)
// and clamped edge columns. Inner loops are iterator zips so bounds
// checks vanish and the compiler vectorizes the row arithmetic.

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// dst += a * (src shifted by ox with edge replication).
#[inline]
fn axpy_shifted(dst: &mut [f64], src: &[f64], a: f64, ox: isize) {
    let w = dst.len();
    if ox >= 0 {
        let off = ox as usize;
        let run = w - off;
        axpy(&mut dst[..run], &src[off..], a);
        let edge = a * src[w - 1];
        for v in &mut dst[run..] {
            *v += edge;
        }
    } else {
        let off = (-ox) as usize;
        let edge = a * src[0];
        for v in &mut dst[..off.min(w)] {
            *v += edge;
        }
        axpy(&mut dst[off..], &src[..w - off], a);
    }
}

/// Sum over x of g[x] * (src shifted by ox with edge replication)[x].
#[inline]
fn dot_shifted(g_row: &[f64], src: &[f64], ox: isize) -> f64 {
    let w = g_row.len();
    if ox >= 0 {
        let off = ox as usize;
        let run = w - off;
        let tail: f64 = g_row[run..].iter().sum();
        dot(&g_row[..run], &src[off..]) + tail * src[w - 1]
    } else {
        let off = (-ox) as usize;
        let head: f64 = g_row[..off.min(w)].iter().sum();
        head * src[0] + dot(&g_row[off..], &src[..w - off])
    }
}

/// Transpose of `axpy_shifted`: scatter g into dst at shifted positions.
#[inline]
fn scatter_shifted(dst: &mut [f64], g_row: &[f64], a: f64, ox: isize) {
    let w = dst.len();
    if ox >= 0 {
        let off = ox as usize;
        let run = w - off;
        axpy(&mut dst[off..], &g_row[..run], a);
        let tail: f64 = g_row[run..].iter().sum();
        dst[w - 1] += a * tail;
    } else {
        let off = (-ox) as usize;
        let head: f64 = g_row[..off.min(w)].iter().sum();
        dst[0] += a * head;
        axpy(&mut dst[..w - off], &g_row[off..], a);
    }
}

/// One fused 3-tap row accumulation: out += t0*shift(-1) + t1*row + t2*shift(+1).
#[inline]
fn row_conv3(out_row: &mut [f64], row: &[f64], t0: f64, t1: f64, t2: f64) {
    let w = out_row.len();
    if w == 1 {
        out_row[0] += (t0 + t1 + t2) * row[0];
        return;
    }
    out_row[0] += (t0 + t1) * row[0] + t2 * row[1];
    for (o, win) in out_row[1..w - 1].iter_mut().zip(row.windows(3)) {
        *o += t0 * win[0] + t1 * win[1] + t2 * win[2];
    }
    out_row[w - 1] += t0 * row[w - 2] + (t1 + t2) * row[w - 1];
}

/// Transpose of `row_conv3`: dst[clamp(x+dx-1)] += t_dx * g[x]. The
/// interior is the same 3-tap pass with the taps reversed.
#[inline]
fn row_scatter3(dst: &mut [f64], g: &[f64], t0: f64, t1: f64, t2: f64) {
    let w = dst.len();
    if w == 1 {
        dst[0] += (t0 + t1 + t2) * g[0];
        return;
    }
    dst[0] += t0 * (g[0] + g[1]) + t1 * g[0];
    for (d, win) in dst[1..w - 1].iter_mut().zip(g.windows(3)) {
        *d += t2 * win[0] + t1 * win[1] + t0 * win[2];
    }
    dst[w - 1] += t2 * (g[w - 2] + g[w - 1]) + t1 * g[w - 1];
}

/// Fused 3-tap correlation sums: acc[dx] += sum_x g[x]*row[clamp(x+dx-1)].
#[inline]
fn row_dot3(g: &[f64], row: &[f64], acc: &mut [f64; 3]) {
    let w = g.len();
    if w == 1 {
        let v = g[0] * row[0];
        acc[0] += v;
        acc[1] += v;
        acc[2] += v;
        return;
    }
    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
    for (gx, win) in g[1..w - 1].iter().zip(row.windows(3)) {
        a0 += gx * win[0];
        a1 += gx * win[1];
        a2 += gx * win[2];
    }
    a0 += g[0] * row[0];
    a1 += g[0] * row[0];
    a2 += g[0] * row[1];
    a0 += g[w - 1] * row[w - 2];
    a1 += g[w - 1] * row[w - 1];
    a2 += g[w - 1] * row[w - 1];
    acc[0] += a0;
    acc[1] += a1;
    acc[2] += a2;
}

#[inline]
fn clamp_row(y: isize, h: usize) -> usize {
    y.clamp(0, h as isize - 1) as usize
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
    out: &mut [f64],
) {
    for o in 0..c_out {
        out[o * h * w..(o + 1) * h * w].fill(bias[o]);
    }
    if k == 3 {
        for o in 0..c_out {
            for i in 0..c_in {
                let tw = &weights[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
                for y in 0..h {
                    let rows = [
                        clamp_row(y as isize - 1, h),
                        y,
                        clamp_row(y as isize + 1, h),
                    ];
                    let out_row = &mut out[(o * h + y) * w..(o * h + y) * w + w];
                    for (dy, &sy) in rows.iter().enumerate() {
                        let in_row = &inp[(i * h + sy) * w..(i * h + sy) * w + w];
                        row_conv3(out_row, in_row, tw[3 * dy], tw[3 * dy + 1], tw[3 * dy + 2]);
                    }
                }
            }
        }
        return;
    }
    let p = (k / 2) as isize;
    for o in 0..c_out {
        for i in 0..c_in {
            let w_base = (o * c_in + i) * k * k;
            for dy in 0..k {
                let oy = dy as isize - p;
                for y in 0..h {
                    let sy = clamp_row(y as isize + oy, h);
                    let in_row = &inp[(i * h + sy) * w..(i * h + sy) * w + w];
                    let out_row = &mut out[(o * h + y) * w..(o * h + y) * w + w];
                    for dx in 0..k {
                        let wv = weights[w_base + dy * k + dx];
                        axpy_shifted(out_row, in_row, wv, dx as isize - p);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_weight_grad(
    layer_input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    g: &[f64],
    c_out: usize,
    k: usize,
    w_grad: &mut [f64],
) {
    if k == 3 {
        for o in 0..c_out {
            for i in 0..c_in {
                let mut acc = [[0.0f64; 3]; 3];
                for y in 0..h {
                    let g_row = &g[(o * h + y) * w..(o * h + y) * w + w];
                    let rows = [
                        clamp_row(y as isize - 1, h),
                        y,
                        clamp_row(y as isize + 1, h),
                    ];
                    for (dy, &sy) in rows.iter().enumerate() {
                        let in_row = &layer_input[(i * h + sy) * w..(i * h + sy) * w + w];
                        row_dot3(g_row, in_row, &mut acc[dy]);
                    }
                }
                let base = (o * c_in + i) * 9;
                for dy in 0..3 {
                    w_grad[base + 3 * dy..base + 3 * dy + 3].copy_from_slice(&acc[dy]);
                }
            }
        }
        return;
    }
    let p = (k / 2) as isize;
    for o in 0..c_out {
        for i in 0..c_in {
            let w_base = (o * c_in + i) * k * k;
            for dy in 0..k {
                let oy = dy as isize - p;
                let mut acc = vec![0.0; k];
                for y in 0..h {
                    let sy = clamp_row(y as isize + oy, h);
                    let in_row = &layer_input[(i * h + sy) * w..(i * h + sy) * w + w];
                    let g_row = &g[(o * h + y) * w..(o * h + y) * w + w];
                    for (dx, a) in acc.iter_mut().enumerate() {
                        *a += dot_shifted(g_row, in_row, dx as isize - p);
                    }
                }
                w_grad[w_base + dy * k..w_base + (dy + 1) * k].copy_from_slice(&acc);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_input_grad(
    g: &[f64],
    c_out: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_in: usize,
    k: usize,
    g_in: &mut [f64],
) {
    if k == 3 {
        for o in 0..c_out {
            for i in 0..c_in {
                let tw = &weights[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
                for y in 0..h {
                    let g_row = &g[(o * h + y) * w..(o * h + y) * w + w];
                    let rows = [
                        clamp_row(y as isize - 1, h),
                        y,
                        clamp_row(y as isize + 1, h),
                    ];
                    for (dy, &sy) in rows.iter().enumerate() {
                        let gi_row = &mut g_in[(i * h + sy) * w..(i * h + sy) * w + w];
                        row_scatter3(gi_row, g_row, tw[3 * dy], tw[3 * dy + 1], tw[3 * dy + 2]);
                    }
                }
            }
        }
        return;
    }
    let p = (k / 2) as isize;
    for o in 0..c_out {
        for i in 0..c_in {
            let w_base = (o * c_in + i) * k * k;
            for dy in 0..k {
                let oy = dy as isize - p;
                for y in 0..h {
                    let sy = clamp_row(y as isize + oy, h);
                    let gi_row = &mut g_in[(i * h + sy) * w..(i * h + sy) * w + w];
                    let g_row = &g[(o * h + y) * w..(o * h + y) * w + w];
                    for dx in 0..k {
                        let wv = weights[w_base + dy * k + dx];
                        scatter_shifted(gi_row, g_row, wv, dx as isize - p);
                    }
                }
            }
        }
    }
}

/// Adam optimizer state. Moment buffers match the parameter shape; the
/// defaults are the optimizer's canonical beta1=0.9, beta2=0.999,
/// epsilon=1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update; returns the updated parameters.
pub fn adam_step(state: &mut AdamState, params: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if params.numel() != state.m.len() || !params.same_shape(grad) {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {:?}, grad {:?}, state {}",
            params.shape(),
            grad.shape(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = Vec::with_capacity(params.numel());
    for (idx, (&pv, &gv)) in params.data().iter().zip(grad.data()).enumerate() {
        let m = state.beta1 * state.m[idx] + (1.0 - state.beta1) * gv;
        let v = state.beta2 * state.v[idx] + (1.0 - state.beta2) * gv * gv;
        state.m[idx] = m;
        state.v[idx] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        out.push(pv - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon));
    }
    Tensor::new(params.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetSpec {
        NetSpec {
            layers: vec![
                LayerSpec { in_channels: 1, out_channels: 3, kernel: 3, activation: Activation::Relu },
                LayerSpec { in_channels: 3, out_channels: 1, kernel: 3, activation: Activation::None },
            ],
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        crate::rng::sample_normal(&mut rng, &[1, h, w]).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = ResidualNet::zeros(NetSpec::reference(1)).unwrap();
        let y = image(8, 8, 1);
        let out = net.forward(&y).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let a = ResidualNet::glorot(NetSpec::reference(1), &mut Rng::new(9)).unwrap();
        let b = ResidualNet::glorot(NetSpec::reference(1), &mut Rng::new(9)).unwrap();
        let y = image(6, 7, 2);
        assert_eq!(a.forward(&y).unwrap(), b.forward(&y).unwrap());
    }

    #[test]
    fn identity_one_by_one_layer_is_identity() {
        let spec = NetSpec {
            layers: vec![LayerSpec {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                activation: Activation::None,
            }],
        };
        let params = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let net = ResidualNet::new(spec, params).unwrap();
        let y = image(5, 9, 3);
        assert_eq!(net.forward(&y).unwrap(), y);
    }

    #[test]
    fn constant_inputs_stay_constant_under_replicate_padding() {
        let net = ResidualNet::glorot(NetSpec::reference(1), &mut Rng::new(4)).unwrap();
        let y = Tensor::full(&[1, 8, 8], 0.37).unwrap();
        let out = net.forward(&y).unwrap();
        let v0 = out.data()[0];
        assert!(out.data().iter().all(|&v| (v - v0).abs() < 1e-12));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let net = ResidualNet::zeros(NetSpec::reference(1)).unwrap();
        let y = Tensor::zeros(&[3, 4, 4]).unwrap();
        assert!(matches!(net.forward(&y), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let net = ResidualNet::glorot(small_spec(), &mut Rng::new(5)).unwrap();
        let y = image(6, 6, 6);
        let upstream = image(6, 6, 7);
        let grad = net.backward(&y, &upstream).unwrap();

        let objective = |net: &ResidualNet| -> f64 {
            let out = net.forward(&y).unwrap();
            out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut rng = Rng::new(8);
        let mut max_rel = 0.0f64;
        for _ in 0..30 {
            let j = rng.below(net.params().numel());
            let mut plus = net.clone();
            let mut data = net.params().data().to_vec();
            data[j] += h;
            plus.set_params(Tensor::new(vec![data.len()], data.clone()).unwrap()).unwrap();
            let mut minus = net.clone();
            data[j] -= 2.0 * h;
            minus.set_params(Tensor::new(vec![data.len()], data).unwrap()).unwrap();
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let exact = grad.data()[j];
            let rel = (fd - exact).abs() / exact.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn backward_matches_finite_differences_on_generic_kernels() {
        // k=1 and k=5 exercise the generic fallback path; k=3 has its
        // own fused kernels and is covered by the test above.
        for kernel in [1usize, 5] {
            let spec = NetSpec {
                layers: vec![
                    LayerSpec { in_channels: 1, out_channels: 2, kernel, activation: Activation::Relu },
                    LayerSpec { in_channels: 2, out_channels: 1, kernel, activation: Activation::None },
                ],
            };
            let net = ResidualNet::glorot(spec, &mut Rng::new(31)).unwrap();
            let y = image(7, 6, 32);
            let upstream = image(7, 6, 33);
            let grad = net.backward(&y, &upstream).unwrap();
            let objective = |net: &ResidualNet| -> f64 {
                let out = net.forward(&y).unwrap();
                out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-5;
            for j in 0..net.params().numel() {
                let mut data = net.params().data().to_vec();
                data[j] += h;
                let mut plus = net.clone();
                plus.set_params(Tensor::new(vec![data.len()], data.clone()).unwrap()).unwrap();
                data[j] -= 2.0 * h;
                let mut minus = net.clone();
                minus.set_params(Tensor::new(vec![data.len()], data).unwrap()).unwrap();
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let exact = grad.data()[j];
                assert!(
                    (fd - exact).abs() / exact.abs().max(1e-8) <= 1e-4,
                    "k={kernel} coord {j}: fd {fd} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn narrow_images_are_handled() {
        // Widths 1 and 2 hit every clamped-edge branch of the fused
        // 3-tap kernels; validate against finite differences.
        for (h, w) in [(1usize, 1usize), (2, 2), (3, 1), (1, 4), (5, 2)] {
            let net = ResidualNet::glorot(small_spec(), &mut Rng::new(40)).unwrap();
            let mut rng = Rng::new(41);
            let y = crate::rng::sample_normal(&mut rng, &[1, h, w]).unwrap();
            let upstream = crate::rng::sample_normal(&mut rng, &[1, h, w]).unwrap();
            assert_eq!(net.forward(&y).unwrap().shape(), y.shape());
            let grad = net.backward(&y, &upstream).unwrap();
            let objective = |net: &ResidualNet| -> f64 {
                let out = net.forward(&y).unwrap();
                out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
            };
            let step = 1e-5;
            for j in (0..net.params().numel()).step_by(7) {
                let mut data = net.params().data().to_vec();
                data[j] += step;
                let mut plus = net.clone();
                plus.set_params(Tensor::new(vec![data.len()], data.clone()).unwrap()).unwrap();
                data[j] -= 2.0 * step;
                let mut minus = net.clone();
                minus.set_params(Tensor::new(vec![data.len()], data).unwrap()).unwrap();
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let exact = grad.data()[j];
                assert!(
                    (fd - exact).abs() <= 1e-4 * exact.abs().max(1.0),
                    "{h}x{w} coord {j}: fd {fd} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = ResidualNet::glorot(small_spec(), &mut Rng::new(10)).unwrap();
        let y = image(5, 5, 11);
        let zero = Tensor::zeros(&[1, 5, 5]).unwrap();
        let grad = net.backward(&y, &zero).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let net = ResidualNet::glorot(small_spec(), &mut Rng::new(12)).unwrap();
        let y = image(5, 5, 13);
        let u1 = image(5, 5, 14);
        let u2 = image(5, 5, 15);
        let (a, b) = (0.7, -1.3);
        let combo = u1.zip_with(&u2, |x1, x2| a * x1 + b * x2).unwrap();
        let g_combo = net.backward(&y, &combo).unwrap();
        let g1 = net.backward(&y, &u1).unwrap();
        let g2 = net.backward(&y, &u2).unwrap();
        for ((gc, gx), gy) in g_combo.data().iter().zip(g1.data()).zip(g2.data()) {
            assert!((gc - (a * gx + b * gy)).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let params = Tensor::new(vec![3], vec![0.5, -0.25, 1.0]).unwrap();
        let grad = Tensor::zeros(&[3]).unwrap();
        let mut state = AdamState::new(3, 1e-3);
        let updated = adam_step(&mut state, &params, &grad).unwrap();
        assert_eq!(updated, params);
    }

    #[test]
    fn adam_first_step_magnitude_is_the_learning_rate() {
        let lr = 2e-4;
        let params = Tensor::zeros(&[2]).unwrap();
        let grad = Tensor::new(vec![2], vec![3.0, -0.7]).unwrap();
        let mut state = AdamState::new(2, lr);
        let updated = adam_step(&mut state, &params, &grad).unwrap();
        // Bias correction makes m_hat = g and v_hat = g^2, so the step is
        // lr * g/(|g| + eps): magnitude ~lr, direction -sign(g).
        for (u, g) in updated.data().iter().zip(grad.data()) {
            assert!((u.abs() - lr).abs() < 1e-9, "{u}");
            assert!(u.signum() == -g.signum());
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let mut state = AdamState::new(4, 1e-2);
            for step in 0..50 {
                let grad = params.map(|v| v * v - 0.1 * step as f64).unwrap();
                params = adam_step(&mut state, &params, &grad).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn parameter_file_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.n2sp");
        let net = ResidualNet::glorot(small_spec(), &mut Rng::new(20)).unwrap();
        net.save(&path).unwrap();

        let loaded = ResidualNet::load(&path).unwrap();
        assert_eq!(loaded.spec(), net.spec());
        for (a, b) in loaded.params().data().iter().zip(net.params().data()) {
            assert_eq!(*a, (*b as f32) as f64);
        }

        assert!(ResidualNet::load_matching(&path, &NetSpec::reference(1)).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        let trunc = dir.path().join("trunc.n2sp");
        std::fs::write(&trunc, bytes).unwrap();
        assert!(matches!(ResidualNet::load(&trunc), Err(Error::Format(_))));
    }

    #[test]
    fn parameter_header_bytes_are_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.n2sp");
        let spec = NetSpec {
            layers: vec![LayerSpec {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                activation: Activation::None,
            }],
        };
        let net = ResidualNet::new(spec, Tensor::new(vec![2], vec![1.0, 0.0]).unwrap()).unwrap();
        net.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"N2SP");
        assert_eq!(bytes[4], 0x01);
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &1u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &1u32.to_le_bytes());
        assert_eq!(&bytes[21..25], &0u32.to_le_bytes());
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[29..33], &0.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 33);
    }
}
