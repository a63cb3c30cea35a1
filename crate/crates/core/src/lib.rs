//! Self-supervised image denoising built on score estimation.
//!
//! The pipeline has two stages: a residual network is trained on noisy
//! images alone to output the score of the noisy-image distribution
//! (annealed residual denoising-autoencoder objective), and the clean
//! image is then recovered in closed form with the exponential-family
//! Tweedie estimator matching the corruption model (additive Gaussian,
//! Poisson counting with gain, multiplicative Gamma speckle, Bernoulli,
//! Exponential). Because the training stage never sees the noise
//! parameters, they can be estimated after the fact by sweeping the
//! estimator over a grid and scoring each candidate with an image
//! quality penalty.

pub mod blind;
pub mod error;
pub mod net;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod special;
pub mod training;
pub mod tweedie;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
