//! Compare the radix-2 FFT with a naive DFT for every power-of-two length up to 256.

use std::f64::consts::PI;

use num_complex::Complex64;
use sdg::fft;
use sdg::rng::SeededRng;

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (j * k) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn main() -> sdg::Result<()> {
    let mut rng = SeededRng::new(42);
    println!("{:>5} {:>12} {:>12} {:>12}", "n", "vs naive", "round trip", "parseval");
    for p in 0..=8 {
        let n = 1usize << p;
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
            .collect();
        let fast = fft(&x, false)?;
        let slow = naive_dft(&x);
        let dft_err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let back = fft(&fast, true)?;
        let rt_err = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let e_time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let e_freq: f64 = fast.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        println!("{n:5} {dft_err:12.3e} {rt_err:12.3e} {:12.3e}", (e_time - e_freq).abs());
    }
    Ok(())
}
