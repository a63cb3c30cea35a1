//! Score-model objectives and the annealed training loop.
//!
//! The production objective is the amortized-residual denoising
//! autoencoder: E ||u + sigma_a R(y + sigma_a u)||^2 with u standard
//! normal. Its minimizer outputs the score of the (perturbation-
//! smoothed) noisy-image distribution directly, so no division by
//! sigma_a^2 ever happens at inference. The DAE, SURE and implicit
//! score matching objectives are kept as test instruments: SURE equals
//! the implicit score matching objective of the residual model up to an
//! affine map, and the suite pins that identity numerically.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::net::{adam_step, AdamState, ResidualNet};
use crate::rng::{sample_normal, Rng};
use crate::tensor::Tensor;
use crate::tweedie::{ScoreField, ScoreProvider};

/// Noise family tag; only the annealing-range defaults depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Gaussian,
    Poisson,
    Gamma,
    MixedPoissonGaussian,
}

impl NoiseFamily {
    /// (sigma_a_max, sigma_a_min). Gaussian and Gamma anneal over
    /// [0.1, 0.001]; Poisson trains on gain-normalized counts and uses
    /// [1, 0.05]. The mixed model trains on the raw image scale.
    pub fn annealing_range(self) -> (f64, f64) {
        match self {
            NoiseFamily::Poisson => (1.0, 0.05),
            _ => (0.1, 0.001),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Poisson => "poisson",
            NoiseFamily::Gamma => "gamma",
            NoiseFamily::MixedPoissonGaussian => "mixed",
        }
    }
}

/// Training schedule and sampling settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate for epochs 1..=lr_switch_epoch.
    pub learning_rate: f64,
    /// Learning rate afterwards.
    pub learning_rate_decayed: f64,
    pub lr_switch_epoch: usize,
    pub sigma_a_max: f64,
    pub sigma_a_min: f64,
    /// Square patch edge; patches are random crops with flip/flop
    /// augmentation.
    pub patch: usize,
    pub batch: usize,
    /// Patches drawn per epoch; images are cycled in order. Zero means
    /// one patch per corpus image.
    pub patches_per_epoch: usize,
    pub seed: u64,
    pub family: NoiseFamily,
}

impl TrainConfig {
    pub fn for_family(family: NoiseFamily) -> Self {
        let (sigma_a_max, sigma_a_min) = family.annealing_range();
        let epochs = 30;
        TrainConfig {
            epochs,
            learning_rate: 2e-4,
            learning_rate_decayed: 2e-5,
            lr_switch_epoch: epochs / 2,
            sigma_a_max,
            sigma_a_min,
            patch: 64,
            batch: 4,
            patches_per_epoch: 0,
            seed: 0,
            family,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.sigma_a_min > 0.0 && self.sigma_a_max >= self.sigma_a_min) {
            return Err(Error::InvalidParameter(format!(
                "annealing range [{}, {}] must satisfy max >= min > 0",
                self.sigma_a_max, self.sigma_a_min
            )));
        }
        if self.patch == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter("patch and batch must be positive".into()));
        }
        if self.learning_rate < 0.0 || self.learning_rate_decayed < 0.0 {
            return Err(Error::InvalidParameter("learning rates must be >= 0".into()));
        }
        Ok(())
    }

    /// Annealed sigma_a for a 1-based epoch index: linear from max to
    /// min, reaching min exactly at the final epoch.
    pub fn sigma_a_at(&self, epoch: usize) -> f64 {
        let q = epoch as f64 / self.epochs as f64;
        self.sigma_a_max * (1.0 - q) + self.sigma_a_min * q
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_switch_epoch || self.epochs == 1 {
            self.learning_rate
        } else {
            self.learning_rate_decayed
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub sigma_a: f64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub epochs: Vec<EpochStats>,
}

impl LossReport {
    /// Equality of the deterministic fields (loss and sigma bits);
    /// wall-clock is excluded.
    pub fn deterministic_eq(&self, other: &LossReport) -> bool {
        self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| {
                    a.epoch == b.epoch
                        && a.sigma_a.to_bits() == b.sigma_a.to_bits()
                        && a.mean_loss.to_bits() == b.mean_loss.to_bits()
                })
    }
}

/// Amortized-residual DAE objective over one batch.
///
/// Draws one u ~ N(0,I) per batch item, returns the mean-per-element
/// loss and its exact parameter gradient.
pub fn ardae_loss(
    net: &ResidualNet,
    batch: &[Tensor],
    sigma_a: f64,
    rng: &mut Rng,
) -> Result<(f64, Tensor)> {
    if sigma_a <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma_a {sigma_a} <= 0")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.params().numel()];
    for y in batch {
        let u = sample_normal(rng, y.shape())?;
        let v = y.zip_with(&u, |yi, ui| yi + sigma_a * ui)?;
        let r = net.forward(&v)?;
        let n = y.numel() as f64;
        let mut item_loss = 0.0;
        let mut upstream = Vec::with_capacity(y.numel());
        for (&ui, &ri) in u.data().iter().zip(r.data()) {
            let e = ui + sigma_a * ri;
            item_loss += e * e;
            upstream.push(2.0 * sigma_a * e / n);
        }
        loss += item_loss / n;
        let upstream = Tensor::new(y.shape().to_vec(), upstream)?;
        let g = net.backward(&v, &upstream)?;
        for (acc, gi) in grad.iter_mut().zip(g.data()) {
            *acc += gi;
        }
    }
    let b = batch.len() as f64;
    loss /= b;
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "ardae_loss", index: 0 });
    }
    for g in grad.iter_mut() {
        *g /= b;
    }
    Ok((loss, Tensor::new(vec![grad.len()], grad)?))
}

/// Plain DAE objective with the residual wrapper F(v) = v + sigma_a^2
/// R(v): mean-per-element ||y - F(y + sigma_a u)||^2. Pathwise it equals
/// sigma_a^2 times the amortized objective for the same u draws.
pub fn dae_loss(net: &ResidualNet, batch: &[Tensor], sigma_a: f64, rng: &mut Rng) -> Result<f64> {
    if sigma_a <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma_a {sigma_a} <= 0")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut loss = 0.0;
    for y in batch {
        let u = sample_normal(rng, y.shape())?;
        let v = y.zip_with(&u, |yi, ui| yi + sigma_a * ui)?;
        let r = net.forward(&v)?;
        // F(v) = v + sigma^2 r, so y - F = -(sigma u + sigma^2 r).
        let mut item = 0.0;
        for (&ui, &ri) in u.data().iter().zip(r.data()) {
            let e = sigma_a * ui + sigma_a * sigma_a * ri;
            item += e * e;
        }
        loss += item / y.numel() as f64;
    }
    Ok(loss / batch.len() as f64)
}

/// A vector field over images: a denoiser F or a score model, with an
/// optional exact divergence for models that know theirs (linear test
/// fields report their trace).
pub trait VectorField {
    fn eval(&self, y: &Tensor) -> Result<Tensor>;
    fn exact_divergence(&self, _y: &Tensor) -> Option<f64> {
        None
    }
}

impl VectorField for ResidualNet {
    fn eval(&self, y: &Tensor) -> Result<Tensor> {
        self.forward(y)
    }
}

/// Dense linear field y -> A vec(y), reshaped back; a test model with an
/// exact divergence (the trace of A).
pub struct LinearField {
    matrix: Vec<f64>,
    dim: usize,
}

impl LinearField {
    pub fn new(matrix: Vec<f64>, dim: usize) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                dim * dim
            )));
        }
        Ok(Self { matrix, dim })
    }

    pub fn random(dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let matrix = (0..dim * dim).map(|_| rng.uniform_in(-scale, scale)).collect();
        Self { matrix, dim }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.matrix[i * self.dim + i]).sum()
    }

    /// A - I, rescaled: the residual model corresponding to this field
    /// viewed as a denoiser at the given sigma.
    pub fn as_residual(&self, sigma: f64) -> LinearField {
        let inv = 1.0 / (sigma * sigma);
        let mut matrix = self.matrix.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let delta = if i == j { 1.0 } else { 0.0 };
                matrix[i * self.dim + j] = (matrix[i * self.dim + j] - delta) * inv;
            }
        }
        LinearField { matrix, dim: self.dim }
    }
}

impl VectorField for LinearField {
    fn eval(&self, y: &Tensor) -> Result<Tensor> {
        if y.numel() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "field dim {} vs input {}",
                self.dim,
                y.numel()
            )));
        }
        let x = y.data();
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            out.push(row.iter().zip(x).map(|(a, b)| a * b).sum());
        }
        Tensor::new(y.shape().to_vec(), out)
    }

    fn exact_divergence(&self, _y: &Tensor) -> Option<f64> {
        Some(self.trace())
    }
}

/// Denoiser wrapper F(y) = y + sigma^2 R(y) over any residual field.
pub struct ResidualWrap<'a, V: VectorField + ?Sized> {
    pub residual: &'a V,
    pub sigma: f64,
}

impl<'a, V: VectorField + ?Sized> VectorField for ResidualWrap<'a, V> {
    fn eval(&self, y: &Tensor) -> Result<Tensor> {
        let r = self.residual.eval(y)?;
        y.zip_with(&r, |yi, ri| yi + self.sigma * self.sigma * ri)
    }

    fn exact_divergence(&self, y: &Tensor) -> Option<f64> {
        self.residual
            .exact_divergence(y)
            .map(|d| y.numel() as f64 + self.sigma * self.sigma * d)
    }
}

/// Step for the central-difference divergence.
pub const DIVERGENCE_FD_STEP: f64 = 1e-4;

/// Largest image the exact per-pixel divergence loop will accept;
/// these objectives are test instruments, not training paths.
pub const DIVERGENCE_MAX_ELEMS: usize = 64 * 64;

/// Divergence of the field at y: exact when the model knows it,
/// otherwise a full per-pixel central-difference loop.
pub fn divergence(field: &(impl VectorField + ?Sized), y: &Tensor) -> Result<f64> {
    if let Some(d) = field.exact_divergence(y) {
        return Ok(d);
    }
    if y.numel() > DIVERGENCE_MAX_ELEMS {
        return Err(Error::Unsupported(format!(
            "finite-difference divergence is capped at {DIVERGENCE_MAX_ELEMS} elements, got {}",
            y.numel()
        )));
    }
    let h = DIVERGENCE_FD_STEP;
    let mut total = 0.0;
    let mut data = y.data().to_vec();
    for j in 0..y.numel() {
        let orig = data[j];
        data[j] = orig + h;
        let plus = field.eval(&Tensor::new(y.shape().to_vec(), data.clone())?)?;
        data[j] = orig - h;
        let minus = field.eval(&Tensor::new(y.shape().to_vec(), data.clone())?)?;
        data[j] = orig;
        total += (plus.data()[j] - minus.data()[j]) / (2.0 * h);
    }
    Ok(total)
}

/// Unbiased-risk objective of a denoiser F at noise level sigma, summed
/// over elements: ||y - F(y)||^2 + 2 sigma^2 div F(y).
pub fn sure_loss(denoiser: &(impl VectorField + ?Sized), y: &Tensor, sigma: f64) -> Result<f64> {
    let f = denoiser.eval(y)?;
    let resid: f64 = y
        .data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let div = divergence(denoiser, y)?;
    Ok(resid + 2.0 * sigma * sigma * div)
}

/// Implicit score matching objective of a score model, summed over
/// elements: 0.5 ||psi(y)||^2 + div psi(y).
pub fn ism_loss(score_model: &(impl VectorField + ?Sized), y: &Tensor) -> Result<f64> {
    let psi = score_model.eval(y)?;
    let sq: f64 = psi.data().iter().map(|v| v * v).sum();
    let div = divergence(score_model, y)?;
    Ok(0.5 * sq + div)
}

/// The trained network's score field: the residual output itself, with
/// no sigma_a division.
pub fn score_of(net: &ResidualNet, y: &Tensor) -> Result<ScoreField> {
    Ok(ScoreField::new(net.forward(y)?))
}

impl ScoreProvider for ResidualNet {
    fn score(&self, input: &Tensor) -> Result<ScoreField> {
        score_of(self, input)
    }
}

fn crop_patch(img: &Tensor, patch: usize, rng: &mut Rng) -> Result<Tensor> {
    let shape = img.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!("corpus image must be [C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if patch > h || patch > w {
        return Err(Error::InvalidParameter(format!(
            "patch {patch} larger than image {h}x{w}"
        )));
    }
    let top = rng.below(h - patch + 1);
    let left = rng.below(w - patch + 1);
    let flip_h = rng.flip();
    let flip_v = rng.flip();
    let data = img.data();
    let mut out = Vec::with_capacity(c * patch * patch);
    for ch in 0..c {
        for py in 0..patch {
            let sy = top + if flip_v { patch - 1 - py } else { py };
            for px in 0..patch {
                let sx = left + if flip_h { patch - 1 - px } else { px };
                out.push(data[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(vec![c, patch, patch], out)
}

/// Annealed training: for epoch n of N the perturbation is
/// sigma_a = max*(1-n/N) + min*(n/N), patches are random crops with
/// flip/flop augmentation, and each batch takes one Adam step on the
/// amortized-residual objective. Deterministic given the seed.
pub fn train(
    net: &ResidualNet,
    corpus: &[Tensor],
    cfg: &TrainConfig,
) -> Result<(ResidualNet, LossReport)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidParameter("empty training corpus".into()));
    }
    for img in corpus {
        if img.shape().len() != 3 || img.shape()[0] != net.spec().channels() {
            return Err(Error::ShapeMismatch(format!(
                "corpus image {:?} does not match net channels {}",
                img.shape(),
                net.spec().channels()
            )));
        }
        if cfg.patch > img.shape()[1] || cfg.patch > img.shape()[2] {
            return Err(Error::InvalidParameter(format!(
                "patch {} larger than image {:?}",
                cfg.patch,
                img.shape()
            )));
        }
    }

    let mut trained = net.clone();
    let mut adam = AdamState::new(trained.params().numel(), cfg.learning_rate);
    let mut rng = Rng::new(cfg.seed);
    let per_epoch = if cfg.patches_per_epoch == 0 {
        corpus.len()
    } else {
        cfg.patches_per_epoch
    };
    let mut report = LossReport::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let sigma_a = cfg.sigma_a_at(epoch);
        adam.learning_rate = cfg.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        let mut batch: Vec<Tensor> = Vec::with_capacity(cfg.batch);
        for idx in 0..per_epoch {
            batch.push(crop_patch(&corpus[idx % corpus.len()], cfg.patch, &mut rng)?);
            if batch.len() == cfg.batch || idx + 1 == per_epoch {
                let (loss, grad) = ardae_loss(&trained, &batch, sigma_a, &mut rng)?;
                let updated = adam_step(&mut adam, trained.params(), &grad)?;
                trained.set_params(updated)?;
                loss_sum += loss;
                loss_batches += 1;
                batch.clear();
            }
        }
        let mean_loss = loss_sum / loss_batches as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite { context: "train", index: epoch });
        }
        report.epochs.push(EpochStats {
            epoch,
            sigma_a,
            mean_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((trained, report))
}
