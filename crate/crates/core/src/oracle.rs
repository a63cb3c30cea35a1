//! Brute-force posterior oracles.
//!
//! Each case pairs two independent routes to the same estimate: the
//! closed-form estimator fed a numerically differentiated marginal
//! score, and a grid search for the posterior mode of eta = log x. The
//! grid route never touches the estimator code, so agreement validates
//! the closed forms rather than restating them.

use crate::error::Result;
use crate::special::ln_gamma;
use crate::tensor::Tensor;
use crate::tweedie::{denoise_gamma, denoise_poisson, ScoreField};

/// Grid for the posterior mode of eta = log x.
const ETA_LO: f64 = -5.0;
const ETA_HI: f64 = 5.0;
const ETA_STEP: f64 = 1e-4;

/// The two routes to one posterior estimate.
#[derive(Debug, Clone, Copy)]
pub struct RouteComparison {
    pub closed_form: f64,
    pub grid_mode: f64,
}

impl RouteComparison {
    pub fn relative_gap(&self) -> f64 {
        (self.closed_form - self.grid_mode).abs() / self.grid_mode.abs()
    }
}

/// Argmax of a log density over the eta grid, returned as x = exp(eta).
fn grid_mode_x(log_density: impl Fn(f64) -> f64) -> f64 {
    let steps = ((ETA_HI - ETA_LO) / ETA_STEP).round() as usize;
    let mut best_eta = ETA_LO;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let eta = ETA_LO + i as f64 * ETA_STEP;
        let v = log_density(eta);
        if v > best {
            best = v;
            best_eta = eta;
        }
    }
    best_eta.exp()
}

/// Poisson counts with a Gamma(shape, rate) prior on the mean.
///
/// The marginal of y is negative binomial; its log is differentiated by
/// a central difference at step 1 (the discrete analogue of the smooth
/// base-measure approximation the estimator uses). The grid route
/// maximizes the exact posterior log density of eta = log x.
pub fn poisson_gamma_prior_case(
    prior_shape: f64,
    prior_rate: f64,
    y: u64,
) -> Result<RouteComparison> {
    assert!(y >= 1, "central difference at step 1 needs y >= 1");
    let (a, b) = (prior_shape, prior_rate);
    // log marginal up to y-independent constants (they cancel in the
    // difference): ln Gamma(y+a) - ln Gamma(y+1) - y ln(1+b).
    let ln_marginal =
        |yy: f64| ln_gamma(yy + a) - ln_gamma(yy + 1.0) - yy * (1.0 + b).ln();
    let yf = y as f64;
    let score = 0.5 * (ln_marginal(yf + 1.0) - ln_marginal(yf - 1.0));

    let y_t = Tensor::new(vec![1], vec![yf])?;
    let s_t = ScoreField::new(Tensor::new(vec![1], vec![score])?);
    let closed_form = denoise_poisson(&y_t, &s_t, 1.0)?.data()[0];

    // Posterior in eta: (y + a) eta - (b + 1) e^eta, Jacobian included.
    let grid_mode = grid_mode_x(|eta| (yf + a) * eta - (b + 1.0) * eta.exp());
    Ok(RouteComparison { closed_form, grid_mode })
}

/// Multiplicative Gamma speckle with an inverse-gamma prior on the clean
/// value (equivalently a Gamma(prior_shape, prior_scale) prior on 1/x,
/// which is the conjugate family for this likelihood).
pub fn gamma_invgamma_prior_case(
    alpha: f64,
    beta: f64,
    prior_shape: f64,
    prior_scale: f64,
    y: f64,
) -> Result<RouteComparison> {
    assert!(y > 0.0);
    let (ap, sp) = (prior_shape, prior_scale);
    // log marginal up to constants: (alpha-1) ln y - (alpha+ap) ln(beta y + sp).
    let ln_marginal = |yy: f64| (alpha - 1.0) * yy.ln() - (alpha + ap) * (beta * yy + sp).ln();
    let h = 1e-5 * y;
    let score = (ln_marginal(y + h) - ln_marginal(y - h)) / (2.0 * h);

    let y_t = Tensor::new(vec![1], vec![y])?;
    let s_t = ScoreField::new(Tensor::new(vec![1], vec![score])?);
    let closed_form = denoise_gamma(&y_t, &s_t, alpha, beta)?.data()[0];

    // Posterior log density of eta = log x: the likelihood contributes
    // (alpha-1)(ln y - eta) - beta y e^{-eta} - eta, the inverse-gamma
    // prior -(ap+1) eta - sp e^{-eta}, and the change of variables +eta.
    let grid_mode = grid_mode_x(|eta| {
        let likelihood = -(alpha - 1.0) * eta - beta * y * (-eta).exp() - eta;
        let prior = -(ap + 1.0) * eta - sp * (-eta).exp();
        likelihood + prior + eta
    });
    Ok(RouteComparison { closed_form, grid_mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_mode_finds_a_quadratic_peak() {
        let x = grid_mode_x(|eta| -(eta - 1.2) * (eta - 1.2));
        assert!((x - 1.2f64.exp()).abs() < 1e-3);
    }
}
