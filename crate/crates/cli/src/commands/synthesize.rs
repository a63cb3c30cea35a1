//! `tweedie synthesize`: corrupt a directory of clean images with one
//! noise model, deterministically per (seed, filename order).

use std::path::Path;

use tweedie_core::noise::corrupt;
use tweedie_core::Rng;

use crate::commands::{file_name, list_images, CorruptionSpec};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::netpbm::{read_netpbm, to_gray, write_netpbm};

pub struct SynthesizeArgs<'a> {
    pub input: &'a Path,
    pub noise: &'a str,
    pub seed: u64,
    pub out: &'a Path,
    pub gray: bool,
}

pub fn run(args: &SynthesizeArgs) -> Result<()> {
    let model = match CorruptionSpec::parse(args.noise)? {
        CorruptionSpec::Single(m) => m,
        CorruptionSpec::MixedPoissonGaussian { .. } => {
            return Err(CliError::usage(
                "mixed corruption is a denoising route, not a sampling model",
            ));
        }
    };
    std::fs::create_dir_all(args.out)?;
    let files = list_images(args.input)?;
    let root = Rng::new(args.seed);

    let mut manifest = RunManifest::new("synthesize");
    manifest.seed = Some(args.seed);
    manifest.set("noise", args.noise);
    manifest.set("gray", args.gray);

    for (index, path) in files.iter().enumerate() {
        manifest.add_input(path)?;
        let image = read_netpbm(path)?;
        let clean = if args.gray { to_gray(&image.tensor)? } else { image.tensor };
        let mut rng = root.child(index as u64);
        let noisy = corrupt(&model, &clean, &mut rng)?;
        let out_path = args.out.join(file_name(path));
        write_netpbm(&out_path, &noisy, image.depth)?;
        manifest.add_output(&out_path)?;
        manifest.add_metric_row(&[
            ("image", file_name(path)),
            ("stream", index.to_string()),
        ]);
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
