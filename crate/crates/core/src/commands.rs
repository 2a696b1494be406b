//! The pipeline stages behind the `sdg` binary, callable as plain functions.
//!
//! Every command reads and writes files only; all randomness comes from an
//! explicit seed, so repeated runs produce byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{PriorSettings, RunConfig};
use crate::dataset::{encode_rgb_png, make_time_grid, read_cifar_batch, write_png, ImageSignal, CIFAR_LEN, IMAGE_SIDE};
use crate::dictionary::{reconstruct, softplus, synthesize_basis, BasisMatrix, MixingVector};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::prior::{fit_gaussian_with, generate, out_of_range_fraction};
use crate::stft::{Stft, StftConfig};
use crate::training::{gradient_check, train, GradCheckConfig, GradCheckReport, LossHistory, Objective, RidgeEncoder};

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio for signals in `[-1, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (4.0 / mse).log10()).min(PSNR_CAP)
}

/// Where `train` puts the loss history for a checkpoint path: `model.sdg` gives `model.loss.csv`.
pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.csv")
}

fn load_data(path: &Path, max_images: Option<usize>) -> Result<Vec<ImageSignal>> {
    read_cifar_batch(path, max_images)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: LossHistory,
    pub loss_csv: PathBuf,
}

/// Trains on `data` and writes the checkpoint to `out` and the per-epoch losses next to it.
///
/// Nothing is written unless training succeeds.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainOutcome> {
    let images = load_data(data, cfg.max_images)?;
    let (model, history) = train(&images, &cfg.train)?;
    let checkpoint = Checkpoint {
        model,
        signal_len: images[0].len(),
        prior: None,
        config: cfg.train.clone(),
    };
    checkpoint.write(out)?;
    let loss_csv = loss_csv_path(out);
    write_atomic(&loss_csv, history.to_csv().as_bytes())?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        loss_csv,
    })
}

/// Fits the Gaussian prior to the stored mixing weights and rewrites the checkpoint in place.
pub fn cmd_fit_prior(checkpoint: &Path, settings: &PriorSettings) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::read(checkpoint)?;
    ckpt.prior = Some(fit_gaussian_with(&ckpt.model.mixing, settings.shrinkage, settings.mode)?);
    ckpt.write(checkpoint)?;
    Ok(ckpt)
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:04}.png")
}

/// Draws `count` images from the prior and writes `sample_0000.png`, ... into `out_dir`.
/// PNGs written by [`cmd_sample`], plus the share of generated samples that
/// fell outside `[-1, 1]` before clamping.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub files: Vec<PathBuf>,
    pub out_of_range: f64,
}

pub fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out_dir: &Path) -> Result<SampleOutcome> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let prior = ckpt.prior.as_ref().ok_or(Error::MissingPrior)?;
    let grid = make_time_grid(ckpt.signal_len)?;
    let images = generate(prior, &ckpt.model.dictionary, &grid, seed, count)?;
    let out_of_range = out_of_range_fraction(&images);
    if images.is_empty() {
        return Ok(SampleOutcome { files: Vec::new(), out_of_range });
    }
    ensure_dir(out_dir)?;
    let files = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = out_dir.join(sample_name(i));
            write_png(img, &path)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    Ok(SampleOutcome { files, out_of_range })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Index(usize),
    All,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Selection::All);
        }
        s.parse()
            .map(Selection::Index)
            .map_err(|_| Error::InvalidArgument(format!("expected an image index or \"all\", got {s:?}")))
    }
}

/// Gray levels for a min-to-max linear map; a constant vector maps to 0.
pub fn heat_levels(w: &[f64]) -> Vec<u8> {
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    w.iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Heatmap PNG: the vector as one row, replicated over 32 rows.
pub fn heatmap_png(w: &[f64]) -> Result<Vec<u8>> {
    let levels = heat_levels(w);
    let mut rgb = Vec::with_capacity(levels.len() * 3 * IMAGE_SIDE);
    for _ in 0..IMAGE_SIDE {
        for &l in &levels {
            rgb.extend_from_slice(&[l, l, l]);
        }
    }
    encode_rgb_png(w.len() as u32, IMAGE_SIDE as u32, &rgb)
}

/// CSV with columns `atom,weight,level`.
pub fn heatmap_csv(w: &[f64]) -> String {
    let mut out = String::from("atom,weight,level\n");
    for (i, (v, l)) in w.iter().zip(heat_levels(w)).enumerate() {
        writeln!(out, "{i},{},{l}", fmt_f64(*v)).unwrap();
    }
    out
}

/// Writes `heatmap_NNNN.csv` and `heatmap_NNNN.png` for the selected training images.
pub fn cmd_export_heatmap(checkpoint: &Path, which: Selection, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let n = ckpt.model.mixing.images();
    let indices: Vec<usize> = match which {
        Selection::All => (0..n).collect(),
        Selection::Index(i) if i < n => vec![i],
        Selection::Index(i) => {
            return Err(Error::InvalidArgument(format!(
                "image index {i} out of range; the checkpoint holds {n} images"
            )))
        }
    };
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for i in indices {
        let w = ckpt.model.mixing.row(i).0;
        let csv = out_dir.join(format!("heatmap_{i:04}.csv"));
        write_atomic(&csv, heatmap_csv(&w).as_bytes())?;
        let png = out_dir.join(format!("heatmap_{i:04}.png"));
        write_atomic(&png, &heatmap_png(&w)?)?;
        written.extend([csv, png]);
    }
    Ok(written)
}

/// Min-max scaled 8-bit rendering of an image-length signal.
fn atom_image(values: &[f64]) -> Result<Vec<u8>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half = ((hi - lo) / 2.0).max(f64::MIN_POSITIVE);
    let mid = (hi + lo) / 2.0;
    let scaled = ImageSignal::new(values.iter().map(|v| (v - mid) / half).collect());
    crate::dataset::signal_to_rgb(&scaled)
}

/// Summary CSV `atom,frequency,amplitude,phase` of the base (unmodulated) atom parameters.
pub fn atom_summary_csv(ckpt: &Checkpoint) -> String {
    let d = &ckpt.model.dictionary;
    let mut out = String::from("atom,frequency,amplitude,phase\n");
    for i in 0..d.atoms() {
        writeln!(
            out,
            "{i},{},{},{}",
            fmt_f64(softplus(d.base_frequency[i])),
            fmt_f64(softplus(d.base_amplitude[i])),
            fmt_f64(d.base_phase[i].rem_euclid(std::f64::consts::TAU))
        )
        .unwrap();
    }
    out
}

/// Writes `atom_NNNN.csv` (columns `j,t,value`) for each atom, a 32x32 PNG of
/// each atom when the signal length is an image, and `atoms_summary.csv`.
pub fn cmd_export_atoms(checkpoint: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let grid = make_time_grid(ckpt.signal_len)?;
    let basis = synthesize_basis(&ckpt.model.dictionary, &grid);
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for i in 0..basis.atoms() {
        let col = basis.column(i);
        let mut csv = String::from("j,t,value\n");
        for (j, (t, v)) in grid.points().iter().zip(&col).enumerate() {
            writeln!(csv, "{j},{},{}", fmt_f64(*t), fmt_f64(*v)).unwrap();
        }
        let path = out_dir.join(format!("atom_{i:04}.csv"));
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
        if col.len() == CIFAR_LEN {
            let png = encode_rgb_png(IMAGE_SIDE as u32, IMAGE_SIDE as u32, &atom_image(&col)?)?;
            let path = out_dir.join(format!("atom_{i:04}.png"));
            write_atomic(&path, &png)?;
            written.push(path);
        }
    }
    let path = out_dir.join("atoms_summary.csv");
    write_atomic(&path, atom_summary_csv(&ckpt).as_bytes())?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Stored,
    Ridge,
}

impl WeightSource {
    pub fn name(self) -> &'static str {
        match self {
            WeightSource::Stored => "stored",
            WeightSource::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub index: usize,
    pub source: WeightSource,
    /// Squared error summed over the signal.
    pub l_time: f64,
    pub mse: f64,
    pub psnr: f64,
    /// Unweighted L1 distance between magnitude spectrograms.
    pub stft_l1: f64,
    /// `lambda_stft * stft_l1`, the training-objective term.
    pub l_freq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageMetrics>,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_l_time(&self) -> f64 {
        self.mean(|r| r.l_time)
    }

    pub fn mean_l_freq(&self) -> f64 {
        self.mean(|r| r.l_freq)
    }

    pub fn mean_mse(&self) -> f64 {
        self.mean(|r| r.mse)
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr)
    }

    /// Per-image rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,source,l_time,mse,psnr,stft_l1,l_freq\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.index,
                r.source.name(),
                fmt_f64(r.l_time),
                fmt_f64(r.mse),
                fmt_f64(r.psnr),
                fmt_f64(r.stft_l1),
                fmt_f64(r.l_freq)
            )
            .unwrap();
        }
        if !self.rows.is_empty() {
            writeln!(
                out,
                "mean,all,{},{},{},{},{}",
                fmt_f64(self.mean_l_time()),
                fmt_f64(self.mean_mse()),
                fmt_f64(self.mean_psnr()),
                fmt_f64(self.mean(|r| r.stft_l1)),
                fmt_f64(self.mean_l_freq())
            )
            .unwrap();
        }
        out
    }
}

/// Scores reconstructions of `images`.
///
/// Image `n` uses the stored weights when `n` is below the number of stored
/// rows and `unseen` is false, otherwise it is ridge-encoded with `ridge`.
pub fn evaluate(ckpt: &Checkpoint, images: &[ImageSignal], unseen: bool, ridge: f64) -> Result<EvalReport> {
    let grid = make_time_grid(ckpt.signal_len)?;
    let basis = synthesize_basis(&ckpt.model.dictionary, &grid);
    let stft_cfg = ckpt.config.stft;
    let lambda = ckpt.config.lambda_stft;
    let objective = Objective::new(stft_cfg, lambda)?;
    let stft = stft_cfg.frames(ckpt.signal_len).ok().map(|_| Stft::new(stft_cfg)).transpose()?;
    let mut encoder: Option<RidgeEncoder> = None;
    let stored = ckpt.model.mixing.images();
    let mut rows = Vec::with_capacity(images.len());
    for (n, x) in images.iter().enumerate() {
        if x.len() != ckpt.signal_len {
            return Err(Error::Shape(format!(
                "image {n} has {} samples but the checkpoint was trained on {}",
                x.len(),
                ckpt.signal_len
            )));
        }
        let (w, source) = if !unseen && n < stored {
            (ckpt.model.mixing.row(n), WeightSource::Stored)
        } else {
            if encoder.is_none() {
                encoder = Some(RidgeEncoder::new(&basis, ridge)?);
            }
            (encoder.as_ref().unwrap().encode(x)?, WeightSource::Ridge)
        };
        let xhat = reconstruct(&basis, &w)?;
        let (l_time, l_freq) = objective.image_terms(x, &xhat.values)?;
        let stft_l1 = match &stft {
            Some(s) => s.l1_loss_and_grad(&s.magnitude(&x.values)?, &xhat.values, 1.0)?.0,
            None => f64::NAN,
        };
        let mse = l_time / x.len() as f64;
        rows.push(ImageMetrics {
            index: n,
            source,
            l_time,
            mse,
            psnr: psnr(mse),
            stft_l1,
            l_freq,
        });
    }
    Ok(EvalReport { rows })
}

/// Evaluates the checkpoint on a CIFAR batch and writes the metrics CSV to `out`.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    max_images: Option<usize>,
    unseen: bool,
    ridge: f64,
    out: &Path,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let images = load_data(data, max_images)?;
    let report = evaluate(&ckpt, &images, unseen, ridge)?;
    write_atomic(out, report.to_csv().as_bytes())?;
    Ok(report)
}

/// CSV of mixing vectors, one row per image: `index,w_0,...,w_{K-1}`.
pub fn weights_csv(rows: &[MixingVector]) -> String {
    let k = rows.first().map_or(0, MixingVector::len);
    let mut out = String::from("index");
    for i in 0..k {
        write!(out, ",w_{i}").unwrap();
    }
    out.push('\n');
    for (n, w) in rows.iter().enumerate() {
        write!(out, "{n}").unwrap();
        for v in &w.0 {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn basis_of(ckpt: &Checkpoint) -> Result<BasisMatrix> {
    let grid = make_time_grid(ckpt.signal_len)?;
    Ok(synthesize_basis(&ckpt.model.dictionary, &grid))
}

/// Ridge-encodes every image of a CIFAR batch against the checkpoint's basis.
pub fn cmd_encode(
    checkpoint: &Path,
    data: &Path,
    max_images: Option<usize>,
    ridge: f64,
    out: &Path,
) -> Result<Vec<MixingVector>> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let images = load_data(data, max_images)?;
    let basis = basis_of(&ckpt)?;
    let enc = RidgeEncoder::new(&basis, ridge)?;
    let rows = images.iter().map(|x| enc.encode(x)).collect::<Result<Vec<_>>>()?;
    write_atomic(out, weights_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Writes the reconstruction of stored training image `index` as a PNG.
pub fn cmd_reconstruct(checkpoint: &Path, index: usize, out: &Path) -> Result<ImageSignal> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let n = ckpt.model.mixing.images();
    if index >= n {
        return Err(Error::InvalidArgument(format!(
            "image index {index} out of range; the checkpoint holds {n} images"
        )));
    }
    let xhat = reconstruct(&basis_of(&ckpt)?, &ckpt.model.mixing.row(index))?;
    write_png(&xhat, out)?;
    Ok(xhat)
}

/// CSV `frame,bin,magnitude` of a signal's magnitude spectrogram.
pub fn spectrogram_csv(signal: &[f64], cfg: &StftConfig) -> Result<String> {
    let spec = Stft::new(*cfg)?.magnitude(signal)?;
    let mut out = String::from("frame,bin,magnitude\n");
    for f in 0..spec.frames() {
        for b in 0..spec.bins() {
            writeln!(out, "{f},{b},{}", fmt_f64(spec.magnitudes[[b, f]])).unwrap();
        }
    }
    Ok(out)
}

/// Writes the spectrogram of image `index` from a CIFAR batch.
pub fn cmd_export_spectrogram(data: &Path, index: usize, cfg: &StftConfig, out: &Path) -> Result<()> {
    let images = load_data(data, Some(index + 1))?;
    let x = images.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!("image index {index} out of range; the file holds {} images", images.len()))
    })?;
    write_atomic(out, spectrogram_csv(&x.values, cfg)?.as_bytes())
}

/// Gradient checks over `count` seeds starting at `seed`, at each of `lambdas`.
pub fn cmd_gradcheck(seed: u64, count: usize, lambdas: &[f64], tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for s in seed..seed + count as u64 {
        for &lambda_stft in lambdas {
            let cfg = GradCheckConfig {
                seed: s,
                lambda_stft,
                ..GradCheckConfig::default()
            };
            reports.push(gradient_check(&cfg, tolerance)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_policy() {
        assert_eq!(psnr(0.0), PSNR_CAP);
        assert!((psnr(4e-2) - 20.0).abs() < 1e-12);
        assert_eq!(psnr(1e-30), PSNR_CAP);
    }

    #[test]
    fn heat_levels_map_min_to_max() {
        assert_eq!(heat_levels(&[0.0, 1.0]), vec![0, 255]);
        assert_eq!(heat_levels(&[0.5, 0.5, 0.5]), vec![0, 0, 0]);
        assert_eq!(heat_levels(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn heatmap_csv_is_exact() {
        let w = [0.1, -2.5e-300];
        let csv = heatmap_csv(&w);
        let vals: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(vals, w);
    }

    #[test]
    fn selection_parsing() {
        assert_eq!("all".parse::<Selection>().unwrap(), Selection::All);
        assert_eq!("12".parse::<Selection>().unwrap(), Selection::Index(12));
        assert!("x".parse::<Selection>().is_err());
    }

    #[test]
    fn loss_csv_sits_next_to_checkpoint() {
        assert_eq!(loss_csv_path(Path::new("out/model.sdg")), Path::new("out/model.loss.csv"));
    }
}
