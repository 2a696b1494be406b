//! Fit one image with a 256-atom dictionary and watch the loss fall.
//!
//! ```text
//! cargo run --release --example overfit_single_image -- [cifar.bin] [steps]
//! ```
//!
//! Without a path the bundled natural-image fixture is used.

use std::path::PathBuf;
use std::time::Instant;

use sdg::training::{MixingInit, Trainer};
use sdg::{read_cifar_batch, TrainConfig};

fn main() -> sdg::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural_256.bin"));
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let image = read_cifar_batch(&path, Some(1))?;

    let cfg = TrainConfig {
        epochs: steps,
        batch_size: 1,
        learning_rate: 1e-2,
        lambda_stft: 0.1,
        atoms: 256,
        mixing_init: MixingInit::Zero,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&image, cfg)?;
    let start = Instant::now();
    for step in 1..=steps {
        let e = trainer.run_epoch()?;
        if step == 1 || step % (steps / 10).max(1) == 0 {
            println!(
                "step {step:5}  mse {:.5}  L_freq {:8.3}  total {:9.3}  ({:.1}s)",
                e.terms.time / image[0].len() as f64,
                e.terms.freq,
                e.terms.total(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
