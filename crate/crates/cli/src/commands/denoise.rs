//! `tweedie denoise`: apply the trained score model and the family's
//! closed-form estimator to a directory of noisy images. Estimates are
//! clamped to [0,1] only here, at the presentation boundary.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use tweedie_core::net::ResidualNet;
use tweedie_core::tweedie::{
    denoise_gamma, denoise_gaussian, denoise_mixed_pg, denoise_poisson, ScoreProvider,
};
use tweedie_core::{Error as CoreError, Tensor};

use crate::commands::{file_name, list_images, thread_cap, CorruptionSpec};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::netpbm::{read_netpbm, write_netpbm, BitDepth};

pub struct DenoiseArgs<'a> {
    pub input: &'a Path,
    pub model: &'a Path,
    pub noise: &'a str,
    pub out: &'a Path,
}

fn estimate(net: &ResidualNet, spec: &CorruptionSpec, y: &Tensor) -> std::result::Result<Tensor, CoreError> {
    use tweedie_core::noise::NoiseModel::*;
    match spec {
        CorruptionSpec::Single(Gaussian { sigma }) => {
            let s = net.score(y)?;
            denoise_gaussian(y, &s, *sigma)
        }
        CorruptionSpec::Single(PoissonGain { zeta }) => {
            let z = y.map(|v| v / zeta)?;
            let s = net.score(&z)?;
            denoise_poisson(y, &s, *zeta)
        }
        CorruptionSpec::Single(Gamma { alpha, beta }) => {
            let s = net.score(y)?;
            denoise_gamma(y, &s, *alpha, *beta)
        }
        CorruptionSpec::Single(other) => Err(CoreError::Unsupported(format!(
            "no image pipeline for the {} family",
            other.kind_name()
        ))),
        CorruptionSpec::MixedPoissonGaussian { sigma, zeta } => {
            denoise_mixed_pg(y, net, *sigma, *zeta)
        }
    }
}

struct ImageOutcome {
    name: String,
    runtime_ms: f64,
    status: String,
    output: Option<(std::path::PathBuf, Tensor, BitDepth)>,
}

pub fn run(args: &DenoiseArgs) -> Result<()> {
    let spec = CorruptionSpec::parse(args.noise)?;
    if let CorruptionSpec::Single(m) = &spec {
        if matches!(
            m,
            tweedie_core::noise::NoiseModel::Bernoulli | tweedie_core::noise::NoiseModel::Exponential
        ) {
            return Err(CliError::usage(format!(
                "no image pipeline for the {} family",
                m.kind_name()
            )));
        }
    }
    let net = ResidualNet::load(args.model)?;
    std::fs::create_dir_all(args.out)?;
    let files = list_images(args.input)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| CliError::data(format!("thread pool: {e}")))?;

    // Per-image work is independent; results are assembled in input
    // order so manifests are deterministic.
    let outcomes: Vec<Result<ImageOutcome>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| -> Result<ImageOutcome> {
                let image = read_netpbm(path)?;
                if image.tensor.shape()[0] != net.spec().channels() {
                    return Err(CliError::data(format!(
                        "{} has {} channels but the model expects {}",
                        path.display(),
                        image.tensor.shape()[0],
                        net.spec().channels()
                    )));
                }
                let start = Instant::now();
                match estimate(&net, &spec, &image.tensor) {
                    Ok(xhat) => {
                        let clamped = xhat.map(|v| v.clamp(0.0, 1.0))?;
                        let out_path = args.out.join(file_name(path));
                        Ok(ImageOutcome {
                            name: file_name(path),
                            runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                            status: "ok".to_string(),
                            output: Some((out_path, clamped, image.depth)),
                        })
                    }
                    // A singular pixel skips the image and records why;
                    // the run continues.
                    Err(CoreError::GammaSingular { index, denominator }) => Ok(ImageOutcome {
                        name: file_name(path),
                        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                        status: format!("skipped: singular at pixel {index} (denominator {denominator:e})"),
                        output: None,
                    }),
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    });

    let mut manifest = RunManifest::new("denoise");
    manifest.set("noise", args.noise);
    manifest.set("model", args.model.display().to_string());
    manifest.set("threads", thread_cap());
    manifest.add_input(args.model)?;
    for path in &files {
        manifest.add_input(path)?;
    }
    for outcome in outcomes {
        let outcome = outcome?;
        if let Some((path, tensor, depth)) = &outcome.output {
            write_netpbm(path, tensor, *depth)?;
            manifest.add_output(path)?;
        }
        manifest.add_metric_row(&[
            ("image", outcome.name.clone()),
            ("runtime_ms", format!("{:.1}", outcome.runtime_ms)),
            ("status", outcome.status.clone()),
        ]);
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
