//! Radix-2 FFT, short-time Fourier magnitudes and the spectrogram L1 loss.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precomputed bit-reversal table and twiddles for one power-of-two length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    bitrev: Vec<usize>,
    // e^{-2 pi i k / len} for k in 0..len/2
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft length {len} is not a power of two"
            )));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Ok(Self {
            len,
            bitrev,
            twiddles,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place transform. Forward is the unnormalized DFT; inverse uses the
    /// conjugate kernel and scales by `1/len`.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) -> Result<()> {
        if buf.len() != self.len {
            return Err(Error::Shape(format!(
                "buffer of length {} given to a length-{} plan",
                buf.len(),
                self.len
            )));
        }
        let n = self.len;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let tw = self.twiddles[k * stride];
                    let tw = if inverse { tw.conj() } else { tw };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * tw;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
        if inverse {
            let scale = 1.0 / n as f64;
            buf.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(())
    }
}

/// Radix-2 FFT of a power-of-two length buffer.
pub fn fft(buffer: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(buffer.len())?;
    let mut out = buffer.to_vec();
    plan.process(&mut out, inverse)?;
    Ok(out)
}

/// Forward DFT of any length via Bluestein's chirp-z reduction onto the radix-2 FFT.
pub fn dft_any(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    if n == 0 {
        return Vec::new();
    }
    if n.is_power_of_two() {
        return fft(input, false).expect("power-of-two length");
    }
    let m = (2 * n - 1).next_power_of_two();
    let plan = FftPlan::new(m).expect("power-of-two length");
    // chirp[k] = e^{-i pi k^2 / n}, with k^2 reduced mod 2n to keep the angle small
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * k2 / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = input[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    plan.process(&mut a, false).expect("plan length");
    plan.process(&mut b, false).expect("plan length");
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    plan.process(&mut a, true).expect("plan length");
    (0..n).map(|k| a[k] * chirp[k]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Window::Hann => 0,
            Window::Rectangular => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Window::Hann),
            1 => Some(Window::Rectangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 256,
            hop_length: 128,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_length: usize, hop_length: usize, window: Window) -> Result<Self> {
        let cfg = Self {
            frame_length,
            hop_length,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || !self.frame_length.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "STFT frame length {} is not a power of two",
                self.frame_length
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "STFT hop {} must lie in 1..={}",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn frames(&self, signal_len: usize) -> Result<usize> {
        if signal_len < self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "signal of {signal_len} samples is shorter than the {}-sample frame",
                self.frame_length
            )));
        }
        Ok((signal_len - self.frame_length) / self.hop_length + 1)
    }
}

/// Magnitude spectrogram, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

/// Reusable STFT machinery for one configuration.
#[derive(Debug, Clone)]
pub struct Stft {
    cfg: StftConfig,
    plan: FftPlan,
    window: Vec<f64>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plan: FftPlan::new(cfg.frame_length)?,
            window: cfg.window.coefficients(cfg.frame_length),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// One-sided complex spectra, one `Vec` of `bins` values per frame.
    pub fn spectra(&self, signal: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let frames = self.cfg.frames(signal.len())?;
        let n = self.cfg.frame_length;
        let bins = self.cfg.bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut out = Vec::with_capacity(frames);
        for m in 0..frames {
            let seg = &signal[m * self.cfg.hop_length..m * self.cfg.hop_length + n];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.plan.process(&mut buf, false)?;
            out.push(buf[..bins].to_vec());
        }
        Ok(out)
    }

    pub fn magnitude(&self, signal: &[f64]) -> Result<Spectrogram> {
        let spectra = self.spectra(signal)?;
        let mut mags = Array2::zeros((self.cfg.bins(), spectra.len()));
        for (m, frame) in spectra.iter().enumerate() {
            for (k, v) in frame.iter().enumerate() {
                mags[[k, m]] = v.norm();
            }
        }
        Ok(Spectrogram { magnitudes: mags })
    }

    /// `lambda * sum |target - |STFT(xhat)||` and its gradient with respect to `xhat`.
    ///
    /// Subgradients use `sign(0) = 0`, and bins whose complex value is exactly
    /// zero contribute no gradient.
    pub fn l1_loss_and_grad(
        &self,
        target: &Spectrogram,
        xhat: &[f64],
        lambda: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let spectra = self.spectra(xhat)?;
        if target.frames() != spectra.len() || target.bins() != self.cfg.bins() {
            return Err(Error::Shape(format!(
                "target spectrogram is {}x{}, reconstruction gives {}x{}",
                target.bins(),
                target.frames(),
                self.cfg.bins(),
                spectra.len()
            )));
        }
        let n = self.cfg.frame_length;
        let mut grad = vec![0.0; xhat.len()];
        let mut loss = 0.0;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (m, frame) in spectra.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (k, x) in frame.iter().enumerate() {
                let mag = x.norm();
                let diff = mag - target.magnitudes[[k, m]];
                loss += diff.abs();
                let s = sign(diff);
                if s != 0.0 && mag > 0.0 {
                    buf[k] = *x * (lambda * s / mag);
                }
            }
            // sum_k Re(q_k e^{+2 pi i k n / N}) = N * Re(ifft(q))[n]
            self.plan.process(&mut buf, true)?;
            let off = m * self.cfg.hop_length;
            for j in 0..n {
                grad[off + j] += self.window[j] * n as f64 * buf[j].re;
            }
        }
        Ok((lambda * loss, grad))
    }
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn stft_magnitude(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.magnitude(signal)
}

/// `lambda` times the entrywise L1 distance between two magnitude spectrograms.
pub fn loss_freq(x: &[f64], xhat: &[f64], cfg: &StftConfig, lambda: f64) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::Shape(format!(
            "signals of length {} and {} differ",
            x.len(),
            xhat.len()
        )));
    }
    let stft = Stft::new(*cfg)?;
    let a = stft.magnitude(x)?;
    let b = stft.magnitude(xhat)?;
    let l1: f64 = a
        .magnitudes
        .iter()
        .zip(b.magnitudes.iter())
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(lambda * l1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * j % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn impulse_and_constant() {
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)], false).unwrap();
        assert!(out.iter().all(|v| (v - c(1.0)).norm() < 1e-15));
        let out = fft(&[c(1.0); 4], false).unwrap();
        assert!((out[0] - c(4.0)).norm() < 1e-15);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn length_sixteen_matches_naive() {
        let mut seed = 3;
        let x: Vec<Complex64> = (0..16).map(|_| Complex64::new(lcg(&mut seed), lcg(&mut seed))).collect();
        let fast = fft(&x, false).unwrap();
        for (a, b) in fast.iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft(&[c(0.0); 6], false), Err(Error::InvalidArgument(_))));
        assert!(FftPlan::new(0).is_err());
    }

    #[test]
    fn length_one_is_identity() {
        assert_eq!(fft(&[c(2.5)], false).unwrap(), vec![c(2.5)]);
    }

    #[test]
    fn bluestein_matches_naive() {
        let mut seed = 9;
        for n in [3usize, 5, 12, 96, 100] {
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(lcg(&mut seed), lcg(&mut seed))).collect();
            for (a, b) in dft_any(&x).iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn cifar_frame_count() {
        let cfg = StftConfig::default();
        let s = stft_magnitude(&vec![0.0; 3072], &cfg).unwrap();
        assert_eq!((s.bins(), s.frames()), (129, 23));
        assert!(s.magnitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_signal_rejected() {
        let cfg = StftConfig::default();
        assert!(matches!(stft_magnitude(&[0.0; 100], &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(250, 128, Window::Hann).is_err());
        assert!(StftConfig::new(256, 0, Window::Hann).is_err());
        assert!(StftConfig::new(256, 257, Window::Hann).is_err());
        assert!(StftConfig::new(256, 256, Window::Rectangular).is_ok());
    }

    #[test]
    fn on_bin_cosine_peaks_at_bin_eight() {
        let cfg = StftConfig::new(256, 128, Window::Rectangular).unwrap();
        let x: Vec<f64> = (0..3072).map(|n| (2.0 * PI * 8.0 * n as f64 / 256.0).cos()).collect();
        let s = stft_magnitude(&x, &cfg).unwrap();
        for m in 0..s.frames() {
            for k in 0..s.bins() {
                let v = s.magnitudes[[k, m]];
                if k == 8 {
                    assert!((v - 128.0).abs() < 1e-9);
                } else {
                    assert!(v < 1e-9, "bin {k} frame {m}: {v}");
                }
            }
        }
    }

    #[test]
    fn loss_freq_trivial_cases() {
        let cfg = StftConfig::new(4, 2, Window::Hann).unwrap();
        let x = [0.3, -0.1, 0.8, 0.2, -0.5, 0.9, 0.0, 0.4];
        let y = [0.1, 0.1, -0.2, 0.7, 0.5, -0.9, 0.3, 0.2];
        assert_eq!(loss_freq(&x, &x, &cfg, 2.0).unwrap(), 0.0);
        assert_eq!(loss_freq(&x, &y, &cfg, 0.0).unwrap(), 0.0);
        assert!(matches!(loss_freq(&x, &y[..6], &cfg, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_freq_small_case_matches_naive_frames() {
        // T=8, frame=4, hop=2: three frames, three bins each
        let cfg = StftConfig::new(4, 2, Window::Rectangular).unwrap();
        let x = [0.3, -0.1, 0.8, 0.2, -0.5, 0.9, 0.0, 0.4];
        let y = [0.1, 0.1, -0.2, 0.7, 0.5, -0.9, 0.3, 0.2];
        let mut expected = 0.0;
        for m in 0..3 {
            let fx: Vec<Complex64> = x[2 * m..2 * m + 4].iter().map(|&v| c(v)).collect();
            let fy: Vec<Complex64> = y[2 * m..2 * m + 4].iter().map(|&v| c(v)).collect();
            let (dx, dy) = (naive_dft(&fx), naive_dft(&fy));
            for k in 0..3 {
                expected += (dx[k].norm() - dy[k].norm()).abs();
            }
        }
        let got = loss_freq(&x, &y, &cfg, 0.7).unwrap();
        assert!((got - 0.7 * expected).abs() < 1e-12, "{got} vs {}", 0.7 * expected);
    }

    #[test]
    fn l1_gradient_matches_central_differences() {
        let cfg = StftConfig::new(8, 4, Window::Hann).unwrap();
        let stft = Stft::new(cfg).unwrap();
        let mut seed = 17;
        let x: Vec<f64> = (0..32).map(|_| lcg(&mut seed)).collect();
        let xhat: Vec<f64> = (0..32).map(|_| lcg(&mut seed)).collect();
        let target = stft.magnitude(&x).unwrap();
        let (loss, grad) = stft.l1_loss_and_grad(&target, &xhat, 0.5).unwrap();
        assert!((loss - loss_freq(&x, &xhat, &cfg, 0.5).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..xhat.len() {
            let mut p = xhat.clone();
            p[i] += h;
            let lp = stft.l1_loss_and_grad(&target, &p, 0.5).unwrap().0;
            p[i] -= 2.0 * h;
            let lm = stft.l1_loss_and_grad(&target, &p, 0.5).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-6, "coord {i}: {num} vs {}", grad[i]);
        }
    }

    #[test]
    fn equal_spectra_give_zero_gradient() {
        let cfg = StftConfig::new(8, 4, Window::Hann).unwrap();
        let stft = Stft::new(cfg).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let target = stft.magnitude(&x).unwrap();
        let (loss, grad) = stft.l1_loss_and_grad(&target, &x, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
