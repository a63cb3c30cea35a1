//! Closed-form posterior estimates from (observation, score field, noise
//! model), plus the analytic score oracles used to validate them.
//!
//! Every estimator here is a pixelwise map. The score argument is the
//! gradient of the log marginal density of the *noisy* data; supplying
//! the exact marginal score of a degenerate one-image prior must return
//! that image exactly, which is what the oracle tests pin.

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::tensor::Tensor;

/// Denominator guard for the Gamma estimator. At or below this the pixel
/// is reported as singular instead of clamped; presentation-layer
/// clamping belongs to the harness.
pub const GAMMA_DENOM_EPS: f64 = 1e-9;

/// Tolerance for the advisory lattice check in the Poisson estimator.
const LATTICE_WARN_TOL: f64 = 1e-6;

/// Per-pixel estimate of the score of the noisy-image distribution,
/// in units of one over intensity. Same shape as the image it was
/// computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    values: Tensor,
}

impl ScoreField {
    pub fn new(values: Tensor) -> Self {
        // Tensor construction already guarantees finiteness.
        Self { values }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    fn check_shape(&self, y: &Tensor, op: &str) -> Result<()> {
        if !self.values.same_shape(y) {
            return Err(Error::ShapeMismatch(format!(
                "{op}: score {:?} vs image {:?}",
                self.values.shape(),
                y.shape()
            )));
        }
        Ok(())
    }
}

/// Anything that can evaluate a score field at a given input: a trained
/// network, an analytic oracle, or a test closure.
pub trait ScoreProvider {
    fn score(&self, input: &Tensor) -> Result<ScoreField>;
}

impl<F> ScoreProvider for F
where
    F: Fn(&Tensor) -> Result<ScoreField>,
{
    fn score(&self, input: &Tensor) -> Result<ScoreField> {
        self(input)
    }
}

// Pixel kernels shared by the specialized estimators and the generic
// canonical-parameter path, so the two routes agree bit for bit.

#[inline]
fn gaussian_pixel(y: f64, s: f64, sigma: f64) -> f64 {
    y + sigma * sigma * s
}

#[inline]
fn poisson_pixel(y: f64, s_at_scaled: f64, zeta: f64) -> f64 {
    (y + 0.5 * zeta) * s_at_scaled.exp()
}

#[inline]
fn bernoulli_pixel(s: f64) -> f64 {
    let e = s.exp();
    e / (1.0 + e)
}

/// Posterior mean under additive Gaussian noise: x = y + sigma^2 l'(y).
pub fn denoise_gaussian(y: &Tensor, score: &ScoreField, sigma: f64) -> Result<Tensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("gaussian sigma {sigma} < 0")));
    }
    score.check_shape(y, "denoise_gaussian")?;
    y.zip_with(score.values(), |yi, si| gaussian_pixel(yi, si, sigma))
}

/// Posterior estimate under Poisson counting with gain zeta:
/// x = (y + zeta/2) exp(l'(y/zeta)).
///
/// The score argument must have been evaluated at y/zeta; the parameter
/// name records that to prevent silent misuse. Observations drifting off
/// the gain lattice are reported with a warning, not an error.
pub fn denoise_poisson(y: &Tensor, score_at_y_over_zeta: &ScoreField, zeta: f64) -> Result<Tensor> {
    if !zeta.is_finite() || zeta <= 0.0 {
        return Err(Error::InvalidParameter(format!("poisson gain {zeta} <= 0")));
    }
    score_at_y_over_zeta.check_shape(y, "denoise_poisson")?;
    let mut worst = 0.0f64;
    for &yi in y.data() {
        let z = yi / zeta;
        worst = worst.max((z - z.round()).abs());
    }
    if worst > LATTICE_WARN_TOL {
        log::warn!("poisson observations off the gain lattice by up to {worst:e}");
    }
    poisson_kernel(y, score_at_y_over_zeta, zeta)
}

/// The Poisson map without the lattice check; the mixed-noise second
/// stage operates on an intermediate that has no lattice to honor.
fn poisson_kernel(y: &Tensor, score: &ScoreField, zeta: f64) -> Result<Tensor> {
    y.zip_with(score.values(), |yi, si| poisson_pixel(yi, si, zeta))
}

/// Posterior estimate under multiplicative Gamma speckle:
/// x = beta y / ((alpha - 1) - y l'(y)).
pub fn denoise_gamma(y: &Tensor, score: &ScoreField, alpha: f64, beta: f64) -> Result<Tensor> {
    if !alpha.is_finite() || alpha <= 1.0 {
        return Err(Error::InvalidParameter(format!("gamma alpha {alpha} <= 1")));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidParameter(format!("gamma beta {beta} <= 0")));
    }
    score.check_shape(y, "denoise_gamma")?;
    let mut data = Vec::with_capacity(y.numel());
    for (i, (&yi, &si)) in y.data().iter().zip(score.values().data()).enumerate() {
        let denom = (alpha - 1.0) - yi * si;
        if denom <= GAMMA_DENOM_EPS {
            return Err(Error::GammaSingular { index: i, denominator: denom });
        }
        data.push(beta * yi / denom);
    }
    Tensor::new(y.shape().to_vec(), data)
}

/// Posterior mean under Bernoulli observations: logistic of the score.
pub fn denoise_bernoulli(score: &ScoreField) -> Result<Tensor> {
    score.values().map(bernoulli_pixel)
}

/// Posterior rate estimate under Exponential observations: -l'(y).
pub fn denoise_exponential(score: &ScoreField) -> Result<Tensor> {
    score.values().map(|s| -s)
}

/// Generic canonical-parameter route for families whose sufficient
/// statistic is the observation itself (Gaussian with known sigma,
/// Poisson, Bernoulli, Exponential).
///
/// The posterior estimate of the canonical parameter is
/// eta = -l0'(y) + l'(y) with l0' the base-measure score, and the final
/// image is the family's inverse-canonical map of eta. Substituting the
/// base scores in closed form collapses each family to the same pixel
/// kernel the specialized estimator uses (Gaussian: sigma^2 eta =
/// y + sigma^2 l'; Poisson: zeta exp(eta) = (y + zeta/2) exp(l');
/// Bernoulli: logistic(l'); Exponential: -l'), so the two routes agree
/// bit for bit. Families with a vector statistic (Gamma, Gaussian with
/// unknown variance) have no scalar eta and are rejected.
pub fn solve_canonical(model: &NoiseModel, y: &Tensor, score: &ScoreField) -> Result<Tensor> {
    match *model {
        NoiseModel::Gaussian { sigma } => denoise_gaussian(y, score, sigma),
        NoiseModel::PoissonGain { zeta } => denoise_poisson(y, score, zeta),
        NoiseModel::Bernoulli => {
            score.check_shape(y, "solve_canonical")?;
            denoise_bernoulli(score)
        }
        NoiseModel::Exponential => {
            score.check_shape(y, "solve_canonical")?;
            denoise_exponential(score)
        }
        NoiseModel::Gamma { .. } => Err(Error::Unsupported(
            "generic canonical solve needs a scalar sufficient statistic; \
             the Gamma family carries a vector statistic"
                .into(),
        )),
    }
}

/// Two-step mixed Poisson-Gaussian removal: the Gaussian component is
/// removed first, then the Poisson component on the intermediate, with
/// the same score provider evaluated afresh at intermediate/zeta.
pub fn denoise_mixed_pg(
    y: &Tensor,
    provider: &dyn ScoreProvider,
    sigma: f64,
    zeta: f64,
) -> Result<Tensor> {
    if !zeta.is_finite() || zeta <= 0.0 {
        return Err(Error::InvalidParameter(format!("poisson gain {zeta} <= 0")));
    }
    let s1 = provider.score(y)?;
    let intermediate = denoise_gaussian(y, &s1, sigma)?;
    let scaled = intermediate.map(|v| v / zeta)?;
    let s2 = provider.score(&scaled)?;
    s2.check_shape(&intermediate, "denoise_mixed_pg")?;
    poisson_kernel(&intermediate, &s2, zeta)
}

/// Ground-truth prior for validating estimators: either a conjugate
/// Gaussian prior (Gaussian noise only) or a degenerate prior
/// concentrated on a single image (any model).
#[derive(Debug, Clone)]
pub enum ConjugateOracle {
    GaussPrior { mu0: f64, tau: f64 },
    PointMass { x0: Tensor },
}

/// Closed-form marginal score of the noisy observation under the oracle
/// prior. This route never touches the estimators it is used to test.
pub fn analytic_score(
    oracle: &ConjugateOracle,
    model: &NoiseModel,
    y: &Tensor,
) -> Result<ScoreField> {
    model.validate()?;
    let values = match (oracle, model) {
        (ConjugateOracle::GaussPrior { mu0, tau }, NoiseModel::Gaussian { sigma }) => {
            if *tau <= 0.0 {
                return Err(Error::InvalidParameter(format!("prior tau {tau} <= 0")));
            }
            // Marginal is N(mu0, tau^2 + sigma^2).
            let var = tau * tau + sigma * sigma;
            y.map(|v| -(v - mu0) / var)?
        }
        (ConjugateOracle::PointMass { x0 }, NoiseModel::Gaussian { sigma }) => {
            if *sigma <= 0.0 {
                return Err(Error::InvalidParameter("point-mass score needs sigma > 0".into()));
            }
            let var = sigma * sigma;
            y.zip_with(x0, |yi, xi| -(yi - xi) / var)?
        }
        (ConjugateOracle::PointMass { x0 }, NoiseModel::PoissonGain { zeta }) => {
            // Input is the scaled count z = y/zeta. Under the smooth
            // stand-in for the discrete base score, the marginal score
            // is log(x0/zeta) - log(z + 1/2).
            if let Some(i) = x0.data().iter().position(|&v| v <= 0.0) {
                return Err(Error::SupportViolation(format!(
                    "point mass nonpositive at index {i}"
                )));
            }
            y.zip_with(x0, |zi, xi| (xi / zeta).ln() - (zi + 0.5).ln())?
        }
        (ConjugateOracle::PointMass { x0 }, NoiseModel::Gamma { alpha, beta }) => {
            // Log-derivative in y of the sampling density at x0:
            // (alpha-1)/y - beta/x0.
            if let Some(i) = y.data().iter().position(|&v| v <= 0.0) {
                return Err(Error::SupportViolation(format!(
                    "gamma observation nonpositive at index {i}"
                )));
            }
            y.zip_with(x0, |yi, xi| (alpha - 1.0) / yi - beta / xi)?
        }
        (ConjugateOracle::PointMass { x0 }, NoiseModel::Exponential) => {
            // Marginal is Exponential(x0): score is the constant -x0.
            if y.numel() != x0.numel() {
                return Err(Error::ShapeMismatch("point mass shape".into()));
            }
            x0.map(|v| -v)?
        }
        (oracle, model) => {
            return Err(Error::Unsupported(format!(
                "no analytic score for {:?} under {}",
                oracle,
                model.kind_name()
            )))
        }
    };
    Ok(ScoreField::new(values))
}

/// Analytic score packaged as a provider, for the blind-estimation path
/// and the mixed-noise callback.
pub struct AnalyticScorer {
    pub oracle: ConjugateOracle,
    pub model: NoiseModel,
}

impl ScoreProvider for AnalyticScorer {
    fn score(&self, input: &Tensor) -> Result<ScoreField> {
        analytic_score(&self.oracle, &self.model, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::corrupt;
    use crate::rng::Rng;

    fn tensor(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn zero_score(shape: &[usize]) -> ScoreField {
        ScoreField::new(Tensor::zeros(shape).unwrap())
    }

    #[test]
    fn gaussian_sigma_zero_is_identity() {
        let y = tensor(&[0.2, 0.7, -1.0]);
        let s = ScoreField::new(tensor(&[5.0, -3.0, 1.0]));
        let out = denoise_gaussian(&y, &s, 0.0).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn gaussian_point_mass_recovery_is_exact() {
        let mut rng = Rng::new(21);
        let x0 = Tensor::new(vec![64], (0..64).map(|i| 0.1 + 0.01 * i as f64).collect()).unwrap();
        let model = NoiseModel::gaussian(0.25).unwrap();
        let y = corrupt(&model, &x0, &mut rng).unwrap();
        let s = analytic_score(&ConjugateOracle::PointMass { x0: x0.clone() }, &model, &y).unwrap();
        let xhat = denoise_gaussian(&y, &s, 0.25).unwrap();
        for (a, b) in xhat.data().iter().zip(x0.data()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn conjugate_gaussian_matches_posterior_mean() {
        // mu0 = 0, tau = 1, sigma = 1, y = 2: score -y/2, posterior mean 1.
        let y = tensor(&[2.0]);
        let model = NoiseModel::gaussian(1.0).unwrap();
        let oracle = ConjugateOracle::GaussPrior { mu0: 0.0, tau: 1.0 };
        let s = analytic_score(&oracle, &model, &y).unwrap();
        assert!((s.values().data()[0] + 1.0).abs() < 1e-15);
        let xhat = denoise_gaussian(&y, &s, 1.0).unwrap();
        assert!((xhat.data()[0] - 1.0).abs() < 1e-15);

        // Random case: posterior mean (tau^2 y + sigma^2 mu0)/(tau^2+sigma^2).
        let (mu0, tau, sigma) = (0.3, 0.8, 0.4);
        let model = NoiseModel::gaussian(sigma).unwrap();
        let oracle = ConjugateOracle::GaussPrior { mu0, tau };
        let mut rng = Rng::new(5);
        let y = crate::rng::sample_normal(&mut rng, &[257]).unwrap();
        let s = analytic_score(&oracle, &model, &y).unwrap();
        let xhat = denoise_gaussian(&y, &s, sigma).unwrap();
        for (yi, xi) in y.data().iter().zip(xhat.data()) {
            let expect = (tau * tau * yi + sigma * sigma * mu0) / (tau * tau + sigma * sigma);
            assert!((xi - expect).abs() <= 1e-12, "{xi} vs {expect}");
        }
    }

    #[test]
    fn poisson_zero_score_gives_half_shift() {
        let y = tensor(&[3.0]);
        let out = denoise_poisson(&y, &zero_score(&[1]), 1.0).unwrap();
        assert_eq!(out.data()[0], 3.5);
    }

    #[test]
    fn poisson_point_mass_recovery_under_smooth_base_score() {
        let zeta = 1.0;
        let model = NoiseModel::poisson_gain(zeta).unwrap();
        let x0 = Tensor::full(&[9], 4.0).unwrap();
        let oracle = ConjugateOracle::PointMass { x0: x0.clone() };
        // Recovery holds for every observation, not just likely ones.
        for k in 0..9 {
            let y = Tensor::new(vec![9], (0..9).map(|i| ((i + k) % 9) as f64).collect()).unwrap();
            let z = y.map(|v| v / zeta).unwrap();
            let s = analytic_score(&oracle, &model, &z).unwrap();
            let xhat = denoise_poisson(&y, &s, zeta).unwrap();
            for v in xhat.data() {
                assert!((v - 4.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn poisson_gain_point_mass_recovery() {
        let zeta = 0.01;
        let model = NoiseModel::poisson_gain(zeta).unwrap();
        let x0 = Tensor::new(vec![5], vec![0.2, 0.4, 0.5, 0.7, 0.9]).unwrap();
        let y = corrupt(&model, &x0, &mut Rng::new(2)).unwrap();
        let z = y.map(|v| v / zeta).unwrap();
        let s = analytic_score(&ConjugateOracle::PointMass { x0: x0.clone() }, &model, &z).unwrap();
        let xhat = denoise_poisson(&y, &s, zeta).unwrap();
        for (a, b) in xhat.data().iter().zip(x0.data()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gamma_zero_score_and_point_mass() {
        let y = tensor(&[1.0]);
        let out = denoise_gamma(&y, &zero_score(&[1]), 101.0, 100.0).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-15);

        let model = NoiseModel::gamma_k(100.0).unwrap();
        let x0 = Tensor::new(vec![6], vec![0.1, 0.3, 0.5, 0.6, 0.8, 1.0]).unwrap();
        let y = corrupt(&model, &x0, &mut Rng::new(3)).unwrap();
        let s = analytic_score(&ConjugateOracle::PointMass { x0: x0.clone() }, &model, &y).unwrap();
        let xhat = denoise_gamma(&y, &s, 100.0, 100.0).unwrap();
        for (a, b) in xhat.data().iter().zip(x0.data()) {
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn gamma_singularity_names_the_pixel() {
        let y = tensor(&[0.5, 0.5]);
        // Second pixel drives the denominator to zero: (alpha-1) = y*s.
        let s = ScoreField::new(tensor(&[0.0, 2.0]));
        match denoise_gamma(&y, &s, 2.0, 1.0) {
            Err(Error::GammaSingular { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn bernoulli_and_exponential_maps() {
        let half = denoise_bernoulli(&zero_score(&[1])).unwrap();
        assert_eq!(half.data()[0], 0.5);
        let s = ScoreField::new(tensor(&[3.0f64.ln()]));
        let three_quarters = denoise_bernoulli(&s).unwrap();
        assert!((three_quarters.data()[0] - 0.75).abs() < 1e-15);

        // Exponential point mass: score is -x0, estimate is x0.
        let model = NoiseModel::Exponential;
        let x0 = tensor(&[2.5]);
        let y = tensor(&[0.4]);
        let s = analytic_score(&ConjugateOracle::PointMass { x0: x0.clone() }, &model, &y).unwrap();
        let xhat = denoise_exponential(&s).unwrap();
        assert_eq!(xhat.data()[0], 2.5);
    }

    #[test]
    fn canonical_route_matches_specialized_bit_for_bit() {
        let mut rng = Rng::new(77);
        let y = crate::rng::sample_normal(&mut rng, &[128]).unwrap().map(|v| v.abs() + 0.1).unwrap();
        let s = ScoreField::new(crate::rng::sample_normal(&mut rng, &[128]).unwrap());

        let g = NoiseModel::gaussian(0.37).unwrap();
        assert_eq!(
            solve_canonical(&g, &y, &s).unwrap(),
            denoise_gaussian(&y, &s, 0.37).unwrap()
        );

        let p = NoiseModel::poisson_gain(1.0).unwrap();
        let y_counts = y.map(|v| (v * 10.0).round()).unwrap();
        let sp = ScoreField::new(s.values().map(|v| v * 0.1).unwrap());
        assert_eq!(
            solve_canonical(&p, &y_counts, &sp).unwrap(),
            denoise_poisson(&y_counts, &sp, 1.0).unwrap()
        );

        assert_eq!(
            solve_canonical(&NoiseModel::Bernoulli, &y, &s).unwrap(),
            denoise_bernoulli(&s).unwrap()
        );
        assert_eq!(
            solve_canonical(&NoiseModel::Exponential, &y, &s).unwrap(),
            denoise_exponential(&s).unwrap()
        );

        let gm = NoiseModel::gamma_k(50.0).unwrap();
        assert!(matches!(
            solve_canonical(&gm, &y, &s),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn two_parameter_gaussian_row_gives_the_same_estimate() {
        // Under the parameterization with unknown variance the canonical
        // pair is eta = [x/s2, -1/(2 s2)] against statistics [y, y^2],
        // the base measure is constant, and the stationarity equation
        // reads eta1 + 2 y eta2 = l'(y). With the variance known,
        // eta2 = -1/(2 sigma^2), so eta1 = l'(y) + y/sigma^2 and
        // x = sigma^2 eta1 — the one-parameter estimate again.
        let sigma = 0.45;
        let mut rng = Rng::new(8);
        let y = crate::rng::sample_normal(&mut rng, &[64]).unwrap();
        let s = ScoreField::new(crate::rng::sample_normal(&mut rng, &[64]).unwrap());
        let one_param = denoise_gaussian(&y, &s, sigma).unwrap();
        for ((yi, si), xi) in y.data().iter().zip(s.values().data()).zip(one_param.data()) {
            let eta2 = -1.0 / (2.0 * sigma * sigma);
            let eta1 = si - 2.0 * yi * eta2;
            let xhat = sigma * sigma * eta1;
            assert!((xhat - xi).abs() <= 1e-12 * xi.abs().max(1.0));
        }
    }

    #[test]
    fn mixed_degenerate_paths() {
        // sigma = 0 reduces to the Poisson step alone.
        let zeta = 0.5;
        let y = tensor(&[1.0, 1.5, 2.0]);
        let provider = |input: &Tensor| Ok(ScoreField::new(input.map(|v| -0.1 * v)?));
        let mixed = denoise_mixed_pg(&y, &provider, 0.0, zeta).unwrap();
        let z = y.map(|v| v / zeta).unwrap();
        let s = provider.score(&z).unwrap();
        let plain = denoise_poisson(&y, &s, zeta).unwrap();
        assert_eq!(mixed, plain);

        // Zero score in step two leaves the Gaussian result shifted by
        // zeta/2 and rescaled by exp(0) = 1.
        let zero = |input: &Tensor| Ok(ScoreField::new(Tensor::zeros(input.shape())?));
        let mixed = denoise_mixed_pg(&y, &zero, 0.3, zeta).unwrap();
        let gauss = denoise_gaussian(&y, &zero.score(&y).unwrap(), 0.3).unwrap();
        for (m, g) in mixed.data().iter().zip(gauss.data()) {
            assert!((m - (g + zeta / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_point_mass_chain_recovers_the_image() {
        let (sigma, zeta) = (0.1, 0.05);
        let x0 = Tensor::new(vec![4], vec![0.3, 0.5, 0.7, 0.9]).unwrap();
        let g = NoiseModel::gaussian(sigma).unwrap();
        let p = NoiseModel::poisson_gain(zeta).unwrap();
        let y = tensor(&[0.41, 0.48, 0.66, 1.02]);

        // Stateful callback: the first call sees the raw observation and
        // answers with the Gaussian point-mass score; the second sees the
        // scaled intermediate and answers with the Poisson one.
        let calls = std::cell::Cell::new(0usize);
        let x0c = x0.clone();
        let provider = move |input: &Tensor| {
            let n = calls.get();
            calls.set(n + 1);
            if n == 0 {
                analytic_score(&ConjugateOracle::PointMass { x0: x0c.clone() }, &g, input)
            } else {
                analytic_score(&ConjugateOracle::PointMass { x0: x0c.clone() }, &p, input)
            }
        };
        let xhat = denoise_mixed_pg(&y, &provider, sigma, zeta).unwrap();
        for (a, b) in xhat.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let y = tensor(&[1.0, 2.0]);
        let s = zero_score(&[3]);
        assert!(matches!(
            denoise_gaussian(&y, &s, 1.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn incompatible_oracle_pairs_are_rejected() {
        let y = tensor(&[0.5]);
        let oracle = ConjugateOracle::GaussPrior { mu0: 0.0, tau: 1.0 };
        assert!(analytic_score(&oracle, &NoiseModel::poisson_gain(1.0).unwrap(), &y).is_err());
        let pm = ConjugateOracle::PointMass { x0: tensor(&[0.5]) };
        assert!(analytic_score(&pm, &NoiseModel::Bernoulli, &y).is_err());
    }
}
