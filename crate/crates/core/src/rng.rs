//! Deterministic random sampling for every noise family.
//!
//! The bit generator is SplitMix64 (Steele, Lea, Flood 2014): a 64-bit
//! counter advanced by the golden-ratio increment whose output is a
//! finalizer mix of the counter. It is seedable, platform-independent,
//! and a pure function of (seed, call index), which is what the
//! reproducibility tests pin.

use crate::error::{Error, Result};
use crate::special::ln_gamma;
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seedable deterministic generator; single-owner by construction.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
    // Box-Muller produces normals in pairs; the partner is held here.
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed, spare_normal: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream from (seed, stream index).
    /// The child seed is mix64(seed XOR mix64(stream + 1)), so distinct
    /// streams decorrelate even for adjacent indices.
    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(stream.wrapping_add(1).wrapping_mul(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift on the top 53 bits keeps this unbiased enough
        // for patch positions while staying branch-free.
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn flip(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Standard normal via Box-Muller on (0,1] uniforms; pair-cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Exponential with the given rate (inverse CDF).
    pub fn exponential(&mut self, rate: f64) -> Result<f64> {
        if rate <= 0.0 {
            return Err(Error::InvalidParameter(format!("exponential rate {rate} <= 0")));
        }
        Ok(-self.uniform_open().ln() / rate)
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("bernoulli p {p} outside [0,1]")));
        }
        Ok(if self.uniform() < p { 1.0 } else { 0.0 })
    }

    /// Poisson draw, returned as an integer-valued f64.
    ///
    /// Inversion by sequential search below rate 30, the transformed
    /// rejection method PTRS (Hörmann 1993) at 30 and above. Both are
    /// exact; the threshold only trades speed.
    pub fn poisson(&mut self, rate: f64) -> Result<f64> {
        if rate < 0.0 || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("poisson rate {rate} < 0")));
        }
        if rate == 0.0 {
            return Ok(0.0);
        }
        if rate < 30.0 {
            Ok(self.poisson_inversion(rate))
        } else {
            Ok(self.poisson_ptrs(rate))
        }
    }

    fn poisson_inversion(&mut self, rate: f64) -> f64 {
        let mut p = (-rate).exp();
        let mut cum = p;
        let mut k = 0.0f64;
        let u = self.uniform();
        // Hard cap far beyond any plausible tail at rate < 30.
        while u > cum && k < 400.0 {
            k += 1.0;
            p *= rate / k;
            cum += p;
        }
        k
    }

    fn poisson_ptrs(&mut self, rate: f64) -> f64 {
        let ln_rate = rate.ln();
        let b = 0.931 + 2.53 * rate.sqrt();
        let a = -0.059 + 0.024_83 * b;
        let inv_alpha = 1.123_9 + 1.132_8 / (b - 3.4);
        let v_r = 0.927_7 - 3.622_4 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if (v * inv_alpha / (a / (us * us) + b)).ln()
                <= k * ln_rate - rate - ln_gamma(k + 1.0)
            {
                return k;
            }
        }
    }

    /// Gamma(shape α, rate β) via Marsaglia-Tsang (2000): squeeze/accept
    /// over a cubed-normal proposal, with the u^{1/α} boost for α < 1.
    pub fn gamma(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma shape {alpha} / rate {beta} must be positive"
            )));
        }
        if alpha < 1.0 {
            let boost = self.uniform_open().powf(1.0 / alpha);
            let g = self.gamma_large(alpha + 1.0);
            return Ok(boost * g / beta);
        }
        Ok(self.gamma_large(alpha) / beta)
    }

    fn gamma_large(&mut self, alpha: f64) -> f64 {
        let d = alpha - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let cube_root = 1.0 + c * x;
            if cube_root <= 0.0 {
                continue;
            }
            let v = cube_root * cube_root * cube_root;
            let u = self.uniform_open();
            let x2 = x * x;
            // Squeeze accept, then the exact log test.
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }
}

/// Tensor of i.i.d. standard normal entries.
pub fn sample_normal(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    let n = checked_len(shape)?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(rng.normal());
    }
    Tensor::new(shape.to_vec(), data)
}

/// Elementwise Poisson draws with per-element rates.
pub fn sample_poisson(rng: &mut Rng, rate: &Tensor) -> Result<Tensor> {
    if let Some(i) = rate.data().iter().position(|&r| r < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "poisson rate negative at index {i}"
        )));
    }
    let mut data = Vec::with_capacity(rate.numel());
    for &r in rate.data() {
        data.push(rng.poisson(r)?);
    }
    Tensor::new(rate.shape().to_vec(), data)
}

/// Tensor of i.i.d. Gamma(α, rate β) entries (mean α/β).
pub fn sample_gamma(rng: &mut Rng, alpha: f64, beta: f64, shape: &[usize]) -> Result<Tensor> {
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma shape {alpha} / rate {beta} must be positive"
        )));
    }
    let n = checked_len(shape)?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(rng.gamma(alpha, beta)?);
    }
    Tensor::new(shape.to_vec(), data)
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    Tensor::zeros(shape).map(|t| t.numel())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_give_identical_sequences() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(1);
        let ta = sample_normal(&mut a, &[4]).unwrap();
        let tb = sample_normal(&mut b, &[4]).unwrap();
        assert_eq!(ta.data(), tb.data());
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn child_streams_differ_from_parent_and_each_other() {
        let root = Rng::new(7);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let mut again = root.child(0);
        assert_eq!(c0.next_u64(), again.next_u64());
        assert_ne!(c0.next_u64(), c1.next_u64());
    }

    #[test]
    fn empty_shape_rejected() {
        let mut rng = Rng::new(0);
        assert!(sample_normal(&mut rng, &[]).is_err());
        assert!(sample_gamma(&mut rng, 1.0, 1.0, &[0]).is_err());
    }

    #[test]
    fn poisson_zero_rate_is_exactly_zero() {
        let mut rng = Rng::new(3);
        let rate = Tensor::zeros(&[100]).unwrap();
        let out = sample_poisson(&mut rng, &rate).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_negative_rate_rejected() {
        let mut rng = Rng::new(3);
        let rate = Tensor::new(vec![2], vec![1.0, -0.5]).unwrap();
        assert!(sample_poisson(&mut rng, &rate).is_err());
    }

    #[test]
    fn gamma_invalid_parameters_rejected() {
        let mut rng = Rng::new(3);
        assert!(sample_gamma(&mut rng, 0.0, 1.0, &[4]).is_err());
        assert!(sample_gamma(&mut rng, 1.0, -1.0, &[4]).is_err());
    }
}
