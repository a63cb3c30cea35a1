//! `tweedie blind-denoise`: estimate the unknown noise level by a
//! quality-penalty grid sweep over the fixed trained score model, then
//! denoise at the estimated level. Emits the penalty curve as CSV next
//! to each output image.

use std::io::Write;
use std::path::Path;

use tweedie_core::blind::{estimate_parameter, BlindFamily, GridSpec, QualityMetric};
use tweedie_core::net::ResidualNet;
use tweedie_core::tweedie::{denoise_gamma, denoise_gaussian, denoise_poisson, ScoreProvider};

use crate::commands::{file_name, file_stem, list_images};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::netpbm::{read_netpbm, write_netpbm};

pub struct BlindDenoiseArgs<'a> {
    pub input: &'a Path,
    pub model: &'a Path,
    pub family: &'a str,
    /// lo:hi:step in user units (file-scale sigma for Gaussian).
    pub grid: &'a str,
    pub poisson_alpha: Option<f64>,
    pub out: &'a Path,
}

fn parse_family(name: &str) -> Result<BlindFamily> {
    match name {
        "gaussian" => Ok(BlindFamily::Gaussian),
        "poisson" => Ok(BlindFamily::Poisson),
        "gamma" => Ok(BlindFamily::Gamma),
        other => Err(CliError::usage(format!(
            "unknown blind family `{other}` (expected gaussian, poisson, gamma)"
        ))),
    }
}

fn parse_grid(spec: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!("grid `{spec}` is not lo:hi:step")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| CliError::usage(format!("bad grid number `{p}`"))))
        .collect::<Result<_>>()?;
    Ok(GridSpec::new(nums[0], nums[1], nums[2])?)
}

pub fn run(args: &BlindDenoiseArgs) -> Result<()> {
    let family = parse_family(args.family)?;
    let user_grid = parse_grid(args.grid)?;
    // Gaussian sigma is spelled on the 255 file scale everywhere on the
    // CLI; the sweep itself runs in intensity units.
    let (grid, to_user): (GridSpec, fn(f64) -> f64) = match family {
        BlindFamily::Gaussian => (
            GridSpec::new(
                user_grid.lower / 255.0,
                user_grid.upper / 255.0,
                user_grid.step / 255.0,
            )?,
            |p| p * 255.0,
        ),
        _ => (user_grid, |p| p),
    };
    let metric = match family {
        BlindFamily::Gaussian => QualityMetric::GaussianTv,
        BlindFamily::Poisson => QualityMetric::PoissonTv { alpha: args.poisson_alpha },
        BlindFamily::Gamma => QualityMetric::gamma_map_default(),
    };

    let net = ResidualNet::load(args.model)?;
    std::fs::create_dir_all(args.out)?;
    let files = list_images(args.input)?;

    let mut manifest = RunManifest::new("blind-denoise");
    manifest.set("family", args.family);
    manifest.set("grid", args.grid);
    manifest.set("model", args.model.display().to_string());
    manifest.add_input(args.model)?;

    for path in &files {
        manifest.add_input(path)?;
        let image = read_netpbm(path)?;
        if image.tensor.shape()[0] != net.spec().channels() {
            return Err(CliError::data(format!(
                "{} has {} channels but the model expects {}",
                path.display(),
                image.tensor.shape()[0],
                net.spec().channels()
            )));
        }
        let y = &image.tensor;
        let estimate = estimate_parameter(family, y, &net, &metric, &grid)?;
        let p = estimate.parameter;
        let xhat = match family {
            BlindFamily::Gaussian => denoise_gaussian(y, &net.score(y)?, p)?,
            BlindFamily::Poisson => {
                let z = y.map(|v| v / p)?;
                denoise_poisson(y, &net.score(&z)?, p)?
            }
            BlindFamily::Gamma => denoise_gamma(y, &net.score(y)?, p, p)?,
        };
        let clamped = xhat.map(|v| v.clamp(0.0, 1.0))?;
        let out_image = args.out.join(file_name(path));
        write_netpbm(&out_image, &clamped, image.depth)?;

        let curve_path = args.out.join(format!("{}_curve.csv", file_stem(path)));
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&curve_path)?);
            writeln!(f, "parameter,Q")?;
            for &(param, q) in &estimate.curve {
                if q.is_finite() {
                    writeln!(f, "{:.9},{:.9e}", to_user(param), q)?;
                } else {
                    writeln!(f, "{:.9},nan", to_user(param))?;
                }
            }
        }
        manifest.add_output(&out_image)?;
        manifest.add_output(&curve_path)?;
        manifest.add_metric_row(&[
            ("image", file_name(path)),
            ("estimated_parameter", format!("{:.9}", to_user(p))),
        ]);
        println!("{}: estimated parameter {:.6}", file_name(path), to_user(p));
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
