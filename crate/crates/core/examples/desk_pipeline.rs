//! The whole pipeline at desk scale: train, fit the prior, sample, evaluate, export.
//!
//! ```text
//! cargo run --release --example desk_pipeline -- [cifar.bin] [out-dir]
//! ```

use std::path::PathBuf;

use sdg::commands::{
    cmd_eval, cmd_export_atoms, cmd_export_heatmap, cmd_fit_prior, cmd_sample, cmd_train, Selection,
};
use sdg::config::RunConfig;
use sdg::training::TrainConfig;

fn main() -> sdg::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = args
        .next()
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural_256.bin"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk_run".into()));
    std::fs::create_dir_all(&out).map_err(|e| sdg::Error::Format(e.to_string()))?;

    let cfg = RunConfig {
        max_images: Some(200),
        train: TrainConfig {
            epochs: 20,
            atoms: 128,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let ckpt = out.join("model.sdg");
    let trained = cmd_train(&cfg, &data, &ckpt)?;
    for e in &trained.history.epochs {
        println!("epoch {:2}  L_time {:9.3}  L_freq {:9.3}", e.epoch, e.terms.time, e.terms.freq);
    }

    cmd_fit_prior(&ckpt, &cfg.prior)?;
    let samples = cmd_sample(&ckpt, 16, 0, &out.join("samples"))?;
    println!(
        "{} samples in {}, {:.2}% of values clamped",
        samples.files.len(),
        out.join("samples").display(),
        100.0 * samples.out_of_range
    );

    let report = cmd_eval(&ckpt, &data, Some(256), false, cfg.encode_ridge, &out.join("metrics.csv"))?;
    let (seen, unseen): (Vec<_>, Vec<_>) = report.rows.iter().partition(|r| r.index < 200);
    let mean = |rows: &[&sdg::commands::ImageMetrics]| rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    println!("training PSNR {:.2} dB, unseen (ridge) PSNR {:.2} dB", mean(&seen), mean(&unseen));

    cmd_export_heatmap(&ckpt, Selection::Index(0), &out.join("heatmaps"))?;
    cmd_export_atoms(&ckpt, &out.join("atoms"))?;
    println!("heatmap and atoms written under {}", out.display());
    Ok(())
}
