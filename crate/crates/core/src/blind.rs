//! Blind noise-parameter estimation.
//!
//! Because the trained score model is independent of the corruption
//! parameters, an unknown level can be recovered after training by
//! sweeping the closed-form estimator over a parameter grid and scoring
//! each candidate image with a quality penalty: plain total variation
//! for Gaussian noise, TV plus the counting-likelihood term for
//! Poisson, TV plus the speckle MAP terms for Gamma. For Gaussian and
//! Gamma a single precomputed score field serves the whole grid; only
//! the Poisson sweep re-evaluates the provider at y/zeta per candidate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tweedie::{denoise_gamma, denoise_gaussian, denoise_poisson, ScoreProvider};

/// Floor applied to estimate pixels inside log/ratio penalty terms only;
/// returned images are never altered.
const QUALITY_PIXEL_FLOOR: f64 = 1e-6;

/// Candidate-gain threshold at which the Poisson TV weight steps from
/// 0.1 to 0.25 when no explicit weight is supplied.
const POISSON_ALPHA_STEP_AT: f64 = 0.02;

/// Total variation with forward differences and zero boundary:
/// sum over pixels of sqrt(dh^2 + dv^2), channels summed independently.
pub fn tv_norm(x: &Tensor) -> Result<f64> {
    let shape = x.shape();
    let (c, h, w) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => {
            return Err(Error::InvalidShape(format!(
                "total variation expects a 2-D or 3-D image, got {shape:?}"
            )))
        }
    };
    if h * w <= 1 {
        return Err(Error::InvalidShape("total variation of a single pixel".into()));
    }
    let data = x.data();
    let mut total = 0.0;
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xcol in 0..w {
                let v = plane[y * w + xcol];
                let dh = if xcol + 1 < w { plane[y * w + xcol + 1] - v } else { 0.0 };
                let dv = if y + 1 < h { plane[(y + 1) * w + xcol] - v } else { 0.0 };
                total += (dh * dh + dv * dv).sqrt();
            }
        }
    }
    Ok(total)
}

/// Image-quality penalty; lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QualityMetric {
    /// Total variation alone; ignores the observation.
    GaussianTv,
    /// alpha * TV/N + mean(xhat - y ln xhat). `None` selects the
    /// candidate-dependent default weight (0.1 for gain <= 0.02, else
    /// 0.25).
    PoissonTv { alpha: Option<f64> },
    /// TV/N + mean(alpha y/xhat + (beta/2)(y/xhat)^2 + gamma ln xhat);
    /// stability requires alpha + beta = gamma.
    GammaMap { alpha: f64, beta: f64, gamma: f64 },
}

impl QualityMetric {
    pub fn gamma_map_default() -> Self {
        QualityMetric::GammaMap { alpha: 0.5, beta: 0.5, gamma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            QualityMetric::GaussianTv => Ok(()),
            QualityMetric::PoissonTv { alpha } => {
                if let Some(a) = alpha {
                    if a <= 0.0 {
                        return Err(Error::InvalidParameter(format!("poisson tv weight {a} <= 0")));
                    }
                }
                Ok(())
            }
            QualityMetric::GammaMap { alpha, beta, gamma } => {
                if alpha <= 0.0 || beta <= 0.0 || gamma <= 0.0 {
                    return Err(Error::InvalidParameter("gamma map weights must be positive".into()));
                }
                if (alpha + beta - gamma).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "gamma map stability needs alpha + beta = gamma, got {alpha}+{beta} != {gamma}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn poisson_alpha(&self, candidate_zeta: f64) -> f64 {
        match *self {
            QualityMetric::PoissonTv { alpha: Some(a) } => a,
            _ => {
                if candidate_zeta <= POISSON_ALPHA_STEP_AT {
                    0.1
                } else {
                    0.25
                }
            }
        }
    }
}

/// Evaluates the penalty of a candidate estimate against the
/// observation. For the Poisson metric with a `None` weight the
/// candidate gain must be supplied through [`quality_at`].
pub fn quality(metric: &QualityMetric, xhat: &Tensor, y: &Tensor) -> Result<f64> {
    quality_at(metric, xhat, y, f64::NAN)
}

/// As [`quality`], with the candidate parameter available for
/// weight-selection rules.
pub fn quality_at(metric: &QualityMetric, xhat: &Tensor, y: &Tensor, candidate: f64) -> Result<f64> {
    metric.validate()?;
    match *metric {
        QualityMetric::GaussianTv => tv_norm(xhat),
        QualityMetric::PoissonTv { .. } => {
            if !xhat.same_shape(y) {
                return Err(Error::ShapeMismatch("quality: estimate vs observation".into()));
            }
            let alpha = metric.poisson_alpha(candidate);
            if !alpha.is_finite() {
                return Err(Error::InvalidParameter(
                    "poisson tv default weight needs the candidate gain".into(),
                ));
            }
            let n = xhat.numel() as f64;
            let mut data_term = 0.0;
            for (i, (&xi, &yi)) in xhat.data().iter().zip(y.data()).enumerate() {
                if xi <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "nonpositive estimate pixel {i} under the poisson metric"
                    )));
                }
                let xf = xi.max(QUALITY_PIXEL_FLOOR);
                data_term += xf - yi * xf.ln();
            }
            Ok(alpha * tv_norm(xhat)? / n + data_term / n)
        }
        QualityMetric::GammaMap { alpha, beta, gamma } => {
            if !xhat.same_shape(y) {
                return Err(Error::ShapeMismatch("quality: estimate vs observation".into()));
            }
            let n = xhat.numel() as f64;
            let mut data_term = 0.0;
            for (i, (&xi, &yi)) in xhat.data().iter().zip(y.data()).enumerate() {
                if xi <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "nonpositive estimate pixel {i} under the gamma metric"
                    )));
                }
                let xf = xi.max(QUALITY_PIXEL_FLOOR);
                let r = yi / xf;
                data_term += alpha * r + 0.5 * beta * r * r + gamma * xf.ln();
            }
            Ok(tv_norm(xhat)? / n + data_term / n)
        }
    }
}

/// Sweep domain for one scalar parameter.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, step: f64) -> Result<Self> {
        let g = GridSpec { lower, upper, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !(self.step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid [{}, {}] step {} is not increasing",
                self.lower, self.upper, self.step
            )));
        }
        if (self.upper - self.lower) / self.step < 2.0 {
            return Err(Error::InvalidParameter(
                "grid must contain at least three points".into(),
            ));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let count = ((self.upper - self.lower) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lower + i as f64 * self.step).collect()
    }
}

/// Which parameter a blind sweep estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlindFamily {
    /// Gaussian sigma, in intensity units.
    Gaussian,
    /// Poisson gain zeta.
    Poisson,
    /// k-look speckle: alpha = beta = k.
    Gamma,
}

/// Result of a blind sweep: the chosen parameter and the full penalty
/// curve in grid order (singular candidates carry a NaN penalty).
#[derive(Debug, Clone)]
pub struct BlindEstimate {
    pub parameter: f64,
    pub curve: Vec<(f64, f64)>,
}

/// Smallest-parameter argmin over the finite points of a penalty curve.
pub fn argmin_curve(curve: &[(f64, f64)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(p, q) in curve {
        if !q.is_finite() {
            continue;
        }
        match best {
            // Strict inequality breaks ties toward the smaller
            // parameter, which comes first in grid order.
            Some((_, bq)) if q >= bq => {}
            _ => best = Some((p, q)),
        }
    }
    best.map(|(p, _)| p)
}

/// Grid search for the noise level given a fixed score provider.
///
/// Gaussian and Gamma evaluate the provider exactly once at y and reuse
/// the field across the grid; Poisson evaluates once per candidate at
/// y/zeta. Candidates where the estimator is singular are kept in the
/// curve as NaN; if every candidate is singular the search fails.
pub fn estimate_parameter(
    family: BlindFamily,
    y: &Tensor,
    provider: &dyn ScoreProvider,
    metric: &QualityMetric,
    grid: &GridSpec,
) -> Result<BlindEstimate> {
    grid.validate()?;
    metric.validate()?;
    let points = grid.points();
    let mut curve = Vec::with_capacity(points.len());

    match family {
        BlindFamily::Gaussian => {
            let field = provider.score(y)?;
            for &sigma in &points {
                let q = denoise_gaussian(y, &field, sigma)
                    .and_then(|xhat| quality_at(metric, &xhat, y, sigma));
                curve.push((sigma, q.unwrap_or(f64::NAN)));
            }
        }
        BlindFamily::Poisson => {
            for &zeta in &points {
                let q = (|| {
                    let scaled = y.map(|v| v / zeta)?;
                    let field = provider.score(&scaled)?;
                    let xhat = denoise_poisson(y, &field, zeta)?;
                    quality_at(metric, &xhat, y, zeta)
                })();
                curve.push((zeta, q.unwrap_or(f64::NAN)));
            }
        }
        BlindFamily::Gamma => {
            let field = provider.score(y)?;
            for &k in &points {
                let q = denoise_gamma(y, &field, k, k)
                    .and_then(|xhat| quality_at(metric, &xhat, y, k));
                curve.push((k, q.unwrap_or(f64::NAN)));
            }
        }
    }

    match argmin_curve(&curve) {
        Some(parameter) => Ok(BlindEstimate { parameter, curve }),
        None => Err(Error::EstimationFailed(
            "every grid candidate was singular or invalid".into(),
        )),
    }
}
