//! `tweedie train`: fit the residual score network to a directory of
//! noisy images. Poisson corpora are gain-normalized (z = y/zeta)
//! before training, matching the inference-time score argument.

use std::io::Write;
use std::path::Path;

use tweedie_core::net::{NetSpec, ResidualNet};
use tweedie_core::training::{train, NoiseFamily, TrainConfig};
use tweedie_core::{Rng, Tensor};

use crate::commands::{list_images, CorruptionSpec};
use crate::config::{apply_config_file, apply_overrides, render_effective, TrainOverrides};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::netpbm::read_netpbm;

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub noise: &'a str,
    pub out: &'a Path,
    pub overrides: TrainOverrides,
}

fn family_of(spec: &CorruptionSpec) -> NoiseFamily {
    match spec {
        CorruptionSpec::Single(tweedie_core::noise::NoiseModel::PoissonGain { .. }) => {
            NoiseFamily::Poisson
        }
        CorruptionSpec::Single(tweedie_core::noise::NoiseModel::Gamma { .. }) => NoiseFamily::Gamma,
        CorruptionSpec::MixedPoissonGaussian { .. } => NoiseFamily::MixedPoissonGaussian,
        _ => NoiseFamily::Gaussian,
    }
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let spec = CorruptionSpec::parse(args.noise)?;
    let family = family_of(&spec);
    let mut cfg = TrainConfig::for_family(family);
    if let Some(path) = args.config {
        apply_config_file(&mut cfg, path)?;
    }
    apply_overrides(&mut cfg, &args.overrides);
    cfg.validate()?;

    let files = list_images(args.data)?;
    let mut corpus: Vec<Tensor> = Vec::with_capacity(files.len());
    let mut channels = None;
    for path in &files {
        let img = read_netpbm(path)?;
        let c = img.tensor.shape()[0];
        if *channels.get_or_insert(c) != c {
            return Err(CliError::data(format!(
                "mixed channel counts in corpus at {}",
                path.display()
            )));
        }
        // Poisson training operates on gain-normalized counts.
        let tensor = match spec {
            CorruptionSpec::Single(tweedie_core::noise::NoiseModel::PoissonGain { zeta }) => {
                img.tensor.map(|v| v / zeta)?
            }
            _ => img.tensor,
        };
        corpus.push(tensor);
    }
    let channels = channels.unwrap();

    let root = Rng::new(cfg.seed);
    let net = ResidualNet::glorot(NetSpec::reference(channels), &mut root.child(1))?;
    let (trained, report) = train(&net, &corpus, &cfg)?;

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    trained.save(args.out)?;

    // Report files sit next to the model: the loss curve (deterministic
    // columns only) and the effective configuration.
    let losses_path = args.out.with_extension("losses.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&losses_path)?);
        writeln!(f, "epoch,sigma_a,mean_loss")?;
        for e in &report.epochs {
            writeln!(f, "{},{:.12e},{:.12e}", e.epoch, e.sigma_a, e.mean_loss)?;
        }
    }
    let config_path = args.out.with_extension("config.txt");
    std::fs::write(&config_path, render_effective(&cfg))?;

    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(cfg.seed);
    manifest.set("noise", args.noise);
    manifest.set("family", family.name());
    manifest.set("corpus_images", corpus.len());
    manifest.set("channels", channels);
    for path in &files {
        manifest.add_input(path)?;
    }
    manifest.add_output(args.out)?;
    manifest.add_output(&losses_path)?;
    manifest.add_output(&config_path)?;
    for e in &report.epochs {
        manifest.add_metric_row(&[
            ("epoch", e.epoch.to_string()),
            ("sigma_a", format!("{:.6e}", e.sigma_a)),
            ("mean_loss", format!("{:.6e}", e.mean_loss)),
            ("wall_seconds", format!("{:.3}", e.wall_seconds)),
        ]);
    }
    manifest.write(&args.out.with_extension("manifest.json"))?;
    Ok(())
}
