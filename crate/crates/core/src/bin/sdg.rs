use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdg::commands::{self, Selection};
use sdg::config::{Overrides, RunConfig};
use sdg::stft::StftConfig;

#[derive(Parser)]
#[command(name = "sdg", version, about = "Spectral dictionary learning for image generation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_images: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a dictionary and mixing weights on a CIFAR-10 batch.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Number of atoms.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        lambda_stft: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Fit the Gaussian prior over mixing weights and rewrite the checkpoint.
    FitPrior { checkpoint: PathBuf },
    /// Draw images from the prior into a directory.
    Sample {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Per-image reconstruction metrics.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Ridge-encode every image instead of using stored weights.
        #[arg(long)]
        unseen: bool,
    },
    /// Ridge-encode images against a trained basis.
    Encode {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render the reconstruction of a training image.
    Reconstruct {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Mixing-weight heatmaps for one image or "all".
    ExportHeatmap {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0")]
        index: Selection,
    },
    /// Per-atom waveforms and a parameter summary.
    ExportAtoms {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Magnitude spectrogram of one dataset image as CSV.
    ExportSpectrogram {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Compare analytic and finite-difference gradients on small random problems.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn required(p: Option<PathBuf>, flag: &str) -> sdg::Result<PathBuf> {
    p.ok_or_else(|| sdg::Error::InvalidArgument(format!("{flag} is required")))
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        data: c.data.clone(),
        out: c.out.clone(),
        seed: c.seed,
        max_images: c.max_images,
        ..Overrides::default()
    }
}

fn run(cli: Cli) -> sdg::Result<bool> {
    let cfg_file = cli.config.as_deref();
    match cli.command {
        Command::Train {
            common,
            epochs,
            k,
            lambda_stft,
            batch_size,
            lr,
        } => {
            let flags = Overrides {
                epochs,
                atoms: k,
                lambda_stft,
                batch_size,
                learning_rate: lr,
                ..overrides(&common)
            };
            let cfg = RunConfig::resolve(cfg_file, &flags)?;
            let data = required(cfg.data.clone(), "--data")?;
            let out = required(cfg.out.clone(), "--out")?;
            let o = commands::cmd_train(&cfg, &data, &out)?;
            if let Some(last) = o.history.epochs.last() {
                println!(
                    "epoch {}: L_time {:.6} L_freq {:.6}",
                    last.epoch, last.terms.time, last.terms.freq
                );
            }
            println!("wrote {} and {}", out.display(), o.loss_csv.display());
        }
        Command::FitPrior { checkpoint } => {
            let cfg = RunConfig::resolve(cfg_file, &Overrides::default())?;
            commands::cmd_fit_prior(&checkpoint, &cfg.prior)?;
            println!("prior written to {}", checkpoint.display());
        }
        Command::Sample {
            checkpoint,
            common,
            count,
        } => {
            let flags = Overrides {
                count,
                ..overrides(&common)
            };
            let cfg = RunConfig::resolve(cfg_file, &flags)?;
            let out = required(cfg.out.clone(), "--out")?;
            let s = commands::cmd_sample(&checkpoint, cfg.sample.count, cfg.sample.seed, &out)?;
            println!(
                "wrote {} samples to {} ({:.2}% of values clamped into [-1, 1])",
                s.files.len(),
                out.display(),
                100.0 * s.out_of_range
            );
        }
        Command::Eval {
            checkpoint,
            common,
            unseen,
        } => {
            let cfg = RunConfig::resolve(cfg_file, &overrides(&common))?;
            let data = required(cfg.data.clone(), "--data")?;
            let out = required(cfg.out.clone(), "--out")?;
            let r = commands::cmd_eval(&checkpoint, &data, cfg.max_images, unseen, cfg.encode_ridge, &out)?;
            println!(
                "{} images: mean MSE {:.6}, mean PSNR {:.2} dB",
                r.rows.len(),
                r.mean_mse(),
                r.mean_psnr()
            );
        }
        Command::Encode { checkpoint, common } => {
            let cfg = RunConfig::resolve(cfg_file, &overrides(&common))?;
            let data = required(cfg.data.clone(), "--data")?;
            let out = required(cfg.out.clone(), "--out")?;
            let rows = commands::cmd_encode(&checkpoint, &data, cfg.max_images, cfg.encode_ridge, &out)?;
            println!("encoded {} images", rows.len());
        }
        Command::Reconstruct {
            checkpoint,
            common,
            index,
        } => {
            let out = required(common.out, "--out")?;
            commands::cmd_reconstruct(&checkpoint, index, &out)?;
        }
        Command::ExportHeatmap {
            checkpoint,
            common,
            index,
        } => {
            let out = required(common.out, "--out")?;
            commands::cmd_export_heatmap(&checkpoint, index, &out)?;
        }
        Command::ExportAtoms { checkpoint, common } => {
            let out = required(common.out, "--out")?;
            commands::cmd_export_atoms(&checkpoint, &out)?;
        }
        Command::ExportSpectrogram { common, index } => {
            let cfg = RunConfig::resolve(cfg_file, &overrides(&common))?;
            let data = required(cfg.data.clone(), "--data")?;
            let out = required(cfg.out.clone(), "--out")?;
            let stft: StftConfig = cfg.train.stft;
            commands::cmd_export_spectrogram(&data, index, &stft, &out)?;
        }
        Command::Gradcheck {
            common,
            count,
            tolerance,
        } => {
            let reports = commands::cmd_gradcheck(common.seed.unwrap_or(0), count, &[0.0, 0.5], tolerance)?;
            let mut ok = true;
            for r in &reports {
                println!("{r}");
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
