//! Magnitude spectrogram of one image, plus the spectral loss against a blurred copy.
//!
//! ```text
//! cargo run --release --example stft_spectrogram -- [cifar.bin] [out.csv]
//! ```

use std::path::PathBuf;

use sdg::commands::spectrogram_csv;
use sdg::{loss_freq, read_cifar_batch, stft_magnitude, ImageSignal, StftConfig};

fn main() -> sdg::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural_256.bin"));
    let x = read_cifar_batch(&path, Some(1))?.remove(0);
    let cfg = StftConfig::default();
    let spec = stft_magnitude(&x.values, &cfg)?;
    println!("{} bins x {} frames", spec.bins(), spec.frames());

    let mut energy: Vec<(usize, f64)> = (0..spec.bins())
        .map(|b| (b, spec.magnitudes.row(b).sum()))
        .collect();
    energy.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("strongest bins (summed over frames):");
    for (b, e) in energy.iter().take(5) {
        println!("  bin {b:3}  {e:10.3}");
    }

    // three-tap moving average along the flattened signal
    let v = &x.values;
    let blurred = ImageSignal::new(
        (0..v.len())
            .map(|j| {
                let lo = j.saturating_sub(1);
                let hi = (j + 1).min(v.len() - 1);
                v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect(),
    );
    println!("L_freq(x, blur(x)) at lambda 1: {:.4}", loss_freq(v, &blurred.values, &cfg, 1.0)?);

    if let Some(out) = args.next() {
        std::fs::write(&out, spectrogram_csv(v, &cfg)?).map_err(|e| sdg::Error::Format(e.to_string()))?;
        println!("wrote {out}");
    }
    Ok(())
}
