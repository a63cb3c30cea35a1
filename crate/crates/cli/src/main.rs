use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tweedie_cli::commands::{blind_denoise, denoise, evaluate, oracle_check, synthesize, train};
use tweedie_cli::config::TrainOverrides;

/// Self-supervised image denoising: learn the score of noisy images,
/// then invert the noise model in closed form.
#[derive(Parser)]
#[command(name = "tweedie", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt clean PGM/PPM images with a noise model.
    Synthesize {
        /// Directory of clean images.
        #[arg(long)]
        input: PathBuf,
        /// Noise spec: gaussian:sigma=25 (file scale), poisson:zeta=0.01, gamma:k=100.
        #[arg(long)]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Convert color inputs to Rec.601 luma first.
        #[arg(long, default_value_t = false)]
        gray: bool,
    },
    /// Train the residual score network on noisy images.
    Train {
        /// Directory of noisy training images.
        #[arg(long)]
        data: PathBuf,
        /// key=value config file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Noise spec; selects annealing defaults (and gain scaling for poisson).
        #[arg(long)]
        noise: String,
        /// Output model file (.n2sp); reports are written next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainFlags,
    },
    /// Denoise with a trained model and a known noise level.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Noise spec, including mixed:sigma=..,zeta=.. for two-step removal.
        #[arg(long)]
        noise: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise with an unknown noise level estimated by grid search.
    BlindDenoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// gaussian, poisson, or gamma.
        #[arg(long)]
        family: String,
        /// lo:hi:step sweep (file-scale sigma for gaussian).
        #[arg(long)]
        grid: String,
        /// Fixed TV weight for the poisson penalty (default: 0.1 for
        /// gain <= 0.02, else 0.25).
        #[arg(long)]
        poisson_alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image and mean PSNR against a reference directory.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, name = "ref")]
        reference: PathBuf,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analytic-oracle suites.
    OracleCheck {
        /// all, point-mass, conjugate, sure-ism, or gradient.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Optional machine-readable CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    learning_rate_decayed: Option<f64>,
    #[arg(long)]
    lr_switch_epoch: Option<usize>,
    #[arg(long)]
    sigma_a_max: Option<f64>,
    #[arg(long)]
    sigma_a_min: Option<f64>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patches_per_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl From<TrainFlags> for TrainOverrides {
    fn from(f: TrainFlags) -> Self {
        TrainOverrides {
            epochs: f.epochs,
            learning_rate: f.learning_rate,
            learning_rate_decayed: f.learning_rate_decayed,
            lr_switch_epoch: f.lr_switch_epoch,
            sigma_a_max: f.sigma_a_max,
            sigma_a_min: f.sigma_a_min,
            patch: f.patch,
            batch: f.batch,
            patches_per_epoch: f.patches_per_epoch,
            seed: f.seed,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize { input, noise, seed, out, gray } => {
            synthesize::run(&synthesize::SynthesizeArgs {
                input,
                noise,
                seed: *seed,
                out,
                gray: *gray,
            })
        }
        Command::Train { data, config, noise, out, overrides } => train::run(&train::TrainArgs {
            data,
            config: config.as_deref(),
            noise,
            out,
            overrides: TrainOverrides {
                epochs: overrides.epochs,
                learning_rate: overrides.learning_rate,
                learning_rate_decayed: overrides.learning_rate_decayed,
                lr_switch_epoch: overrides.lr_switch_epoch,
                sigma_a_max: overrides.sigma_a_max,
                sigma_a_min: overrides.sigma_a_min,
                patch: overrides.patch,
                batch: overrides.batch,
                patches_per_epoch: overrides.patches_per_epoch,
                seed: overrides.seed,
            },
        }),
        Command::Denoise { input, model, noise, out } => {
            denoise::run(&denoise::DenoiseArgs { input, model, noise, out })
        }
        Command::BlindDenoise { input, model, family, grid, poisson_alpha, out } => {
            blind_denoise::run(&blind_denoise::BlindDenoiseArgs {
                input,
                model,
                family,
                grid,
                poisson_alpha: *poisson_alpha,
                out,
            })
        }
        Command::Evaluate { pred, reference, out } => {
            evaluate::run(&evaluate::EvaluateArgs { pred, reference, out }).map(|_| ())
        }
        Command::OracleCheck { suite, out } => {
            oracle_check::run(&oracle_check::OracleCheckArgs { suite, out: out.as_deref() })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
    }
}
