//! Subcommand implementations.

pub mod blind_denoise;
pub mod denoise;
pub mod evaluate;
pub mod oracle_check;
pub mod synthesize;
pub mod train;

use std::path::{Path, PathBuf};

use tweedie_core::noise::NoiseModel;

use crate::error::{CliError, Result};

/// Corruption requested on the command line: one exponential-family
/// model, or the two-step mixed Poisson-Gaussian removal (denoise only).
#[derive(Debug, Clone, Copy)]
pub enum CorruptionSpec {
    Single(NoiseModel),
    MixedPoissonGaussian { sigma: f64, zeta: f64 },
}

impl CorruptionSpec {
    /// `gaussian:sigma=25` (file scale), `poisson:zeta=0.01`,
    /// `gamma:k=100`, or `mixed:sigma=25,zeta=0.01`.
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(args) = spec.strip_prefix("mixed:") {
            let mut sigma = None;
            let mut zeta = None;
            for part in args.split(',') {
                match part.split_once('=') {
                    Some(("sigma", v)) => {
                        sigma = Some(v.parse::<f64>().map_err(|_| {
                            CliError::usage(format!("bad sigma `{v}` in `{spec}`"))
                        })? / 255.0)
                    }
                    Some(("zeta", v)) => {
                        zeta = Some(v.parse::<f64>().map_err(|_| {
                            CliError::usage(format!("bad zeta `{v}` in `{spec}`"))
                        })?)
                    }
                    _ => return Err(CliError::usage(format!("bad mixed spec `{spec}`"))),
                }
            }
            let sigma = sigma.ok_or_else(|| CliError::usage("mixed spec needs sigma="))?;
            let zeta = zeta.ok_or_else(|| CliError::usage("mixed spec needs zeta="))?;
            if sigma < 0.0 || zeta <= 0.0 {
                return Err(CliError::usage("mixed spec needs sigma >= 0 and zeta > 0"));
            }
            return Ok(CorruptionSpec::MixedPoissonGaussian { sigma, zeta });
        }
        Ok(CorruptionSpec::Single(NoiseModel::parse_cli(spec)?))
    }

    pub fn describe(&self) -> String {
        match self {
            CorruptionSpec::Single(m) => format!("{m:?}"),
            CorruptionSpec::MixedPoissonGaussian { sigma, zeta } => {
                format!("MixedPoissonGaussian {{ sigma: {sigma}, zeta: {zeta} }}")
            }
        }
    }
}

/// Netpbm files of a directory in lexicographic filename order, the
/// iteration order every command pins.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|s| s.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    files.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if files.is_empty() {
        return Err(CliError::data(format!(
            "no .pgm/.ppm images in {}",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

/// Worker cap from N2S_THREADS; defaults to the machine's parallelism.
pub fn thread_cap() -> usize {
    std::env::var("N2S_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}
