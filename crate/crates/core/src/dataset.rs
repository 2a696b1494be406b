//! CIFAR-10 binary ingest, signal normalization and PNG export.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes: the
//! red plane, then green, then blue, each 32 rows of 32 columns. Records are
//! flattened in that stored order, so byte `i + 1` of a record is sample `i`
//! of its signal.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
/// Signal length of one flattened CIFAR-10 image.
pub const CIFAR_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * CHANNELS;
pub const RECORD_LEN: usize = CIFAR_LEN + 1;

/// A flattened image as a 1-D signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSignal {
    pub values: Vec<f64>,
    pub label: Option<u8>,
}

impl ImageSignal {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            label: None,
        }
    }

    pub fn with_label(values: Vec<f64>, label: u8) -> Self {
        Self {
            values,
            label: Some(label),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform sample positions `t_j = j / (T - 1)` covering `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }
}

pub fn make_time_grid(len: usize) -> Result<TimeGrid> {
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "time grid needs at least 2 points, got {len}"
        )));
    }
    let last = (len - 1) as f64;
    let points = (0..len).map(|j| j as f64 / last).collect();
    Ok(TimeGrid { points })
}

/// Maps a pixel byte onto `[-1, 1]`.
#[inline]
pub fn normalize_byte(b: u8) -> f64 {
    2.0 * (b as f64 / 255.0) - 1.0
}

/// Inverse of [`normalize_byte`]; out-of-range samples are clamped first.
#[inline]
pub fn denormalize_sample(s: f64) -> u8 {
    let s = if s.is_nan() { -1.0 } else { s.clamp(-1.0, 1.0) };
    (255.0 * (s + 1.0) / 2.0).round() as u8
}

/// Parses an in-memory CIFAR-10 batch.
pub fn parse_cifar_bytes(bytes: &[u8], max_records: Option<usize>) -> Result<Vec<ImageSignal>> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "length {} is not a multiple of the {RECORD_LEN}-byte record size",
            bytes.len()
        )));
    }
    let available = bytes.len() / RECORD_LEN;
    let take = max_records.map_or(available, |m| m.min(available));
    bytes
        .chunks_exact(RECORD_LEN)
        .take(take)
        .enumerate()
        .map(|(index, rec)| {
            let label = rec[0];
            if label > 9 {
                return Err(Error::CorruptRecord { index, label });
            }
            let values = rec[1..].iter().copied().map(normalize_byte).collect();
            Ok(ImageSignal::with_label(values, label))
        })
        .collect()
}

pub fn read_cifar_batch(path: impl AsRef<Path>, max_records: Option<usize>) -> Result<Vec<ImageSignal>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_bytes(&bytes, max_records)
}

/// Serializes signals back into CIFAR-10 records. Missing labels become 0.
pub fn encode_cifar_records(signals: &[ImageSignal]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(signals.len() * RECORD_LEN);
    for s in signals {
        check_image_len(s)?;
        out.push(s.label.unwrap_or(0));
        out.extend(s.values.iter().copied().map(denormalize_sample));
    }
    Ok(out)
}

fn check_image_len(signal: &ImageSignal) -> Result<()> {
    if signal.len() != CIFAR_LEN {
        return Err(Error::Shape(format!(
            "image signal has {} samples, expected {CIFAR_LEN}",
            signal.len()
        )));
    }
    Ok(())
}

/// Interleaved 8-bit RGB bytes (row-major, 32x32) for a channel-major signal.
pub fn signal_to_rgb(signal: &ImageSignal) -> Result<Vec<u8>> {
    check_image_len(signal)?;
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut rgb = vec![0u8; CIFAR_LEN];
    for (p, px) in rgb.chunks_exact_mut(CHANNELS).enumerate() {
        for (c, out) in px.iter_mut().enumerate() {
            *out = denormalize_sample(signal.values[c * plane + p]);
        }
    }
    Ok(rgb)
}

/// Encodes an 8-bit RGB buffer as PNG bytes.
pub fn encode_rgb_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != (width * height * 3) as usize {
        return Err(Error::Shape(format!(
            "rgb buffer of {} bytes does not match {width}x{height}",
            rgb.len()
        )));
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
    }
    Ok(buf)
}

/// Writes a 32x32 RGB PNG of the signal, clamping samples into `[-1, 1]`.
pub fn write_png(signal: &ImageSignal, path: impl AsRef<Path>) -> Result<()> {
    let rgb = signal_to_rgb(signal)?;
    let bytes = encode_rgb_png(IMAGE_SIDE as u32, IMAGE_SIDE as u32, &rgb)?;
    crate::checkpoint::write_atomic(path.as_ref(), &bytes)
}

/// Reads an 8-bit RGB PNG back into interleaved bytes plus its dimensions.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit RGB, found {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

/// Rebuilds a channel-major signal from an interleaved 32x32 RGB buffer.
pub fn rgb_to_signal(rgb: &[u8]) -> Result<ImageSignal> {
    if rgb.len() != CIFAR_LEN {
        return Err(Error::Shape(format!(
            "rgb buffer has {} bytes, expected {CIFAR_LEN}",
            rgb.len()
        )));
    }
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut values = vec![0.0; CIFAR_LEN];
    for (p, px) in rgb.chunks_exact(CHANNELS).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            values[c * plane + p] = normalize_byte(b);
        }
    }
    Ok(ImageSignal::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..CIFAR_LEN).map(fill));
        r
    }

    #[test]
    fn ten_records_from_30730_bytes() {
        let bytes: Vec<u8> = (0..10).flat_map(|n| record(n as u8, |i| (i % 256) as u8)).collect();
        assert_eq!(bytes.len(), 30_730);
        let sigs = parse_cifar_bytes(&bytes, None).unwrap();
        assert_eq!(sigs.len(), 10);
        assert!(sigs.iter().all(|s| s.len() == CIFAR_LEN));
        assert_eq!(sigs[7].label, Some(7));
    }

    #[test]
    fn max_records_truncates() {
        let bytes: Vec<u8> = (0..4).flat_map(|_| record(1, |_| 0)).collect();
        assert_eq!(parse_cifar_bytes(&bytes, Some(2)).unwrap().len(), 2);
        assert_eq!(parse_cifar_bytes(&bytes, Some(10)).unwrap().len(), 4);
    }

    #[test]
    fn byte_endpoints() {
        assert_eq!(normalize_byte(0), -1.0);
        assert_eq!(normalize_byte(255), 1.0);
        assert!((normalize_byte(128) - 0.003_921_568_627_451).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_a_bijection_on_bytes() {
        for b in 0..=255u8 {
            assert_eq!(denormalize_sample(normalize_byte(b)), b);
        }
    }

    #[test]
    fn bad_length_is_format_error() {
        let bytes = vec![0u8; RECORD_LEN + 5];
        assert!(matches!(parse_cifar_bytes(&bytes, None), Err(Error::Format(_))));
    }

    #[test]
    fn label_eleven_is_corrupt() {
        let mut bytes = record(0, |_| 0);
        bytes.extend(record(11, |_| 0));
        match parse_cifar_bytes(&bytes, None) {
            Err(Error::CorruptRecord { index, label }) => {
                assert_eq!(index, 1);
                assert_eq!(label, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn golden_byte_order_is_preserved() {
        let bytes = record(3, |i| ((i * 7 + i / 1024) % 256) as u8);
        let sig = &parse_cifar_bytes(&bytes, None).unwrap()[0];
        for (i, &v) in sig.values.iter().enumerate() {
            assert_eq!(v, normalize_byte(bytes[i + 1]), "sample {i}");
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(make_time_grid(2).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(make_time_grid(5).unwrap().points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_time_grid(CIFAR_LEN).unwrap();
        assert!((g.spacing() - 3.2563e-4).abs() < 1e-8);
        assert_eq!(*g.points().last().unwrap(), 1.0);
        assert!(matches!(make_time_grid(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn grid_spacing_constant_within_one_ulp() {
        let g = make_time_grid(CIFAR_LEN).unwrap();
        let h = g.spacing();
        for w in g.points().windows(2) {
            let d = w[1] - w[0];
            // ulp of the larger endpoint bounds the rounding of each point
            let ulp = f64::EPSILON * w[1].max(h);
            assert!((d - h).abs() <= 2.0 * ulp, "spacing {d} vs {h}");
        }
    }

    #[test]
    fn rgb_interleave_round_trip() {
        let bytes = record(0, |i| (i % 251) as u8);
        let sig = &parse_cifar_bytes(&bytes, None).unwrap()[0];
        let rgb = signal_to_rgb(sig).unwrap();
        // pixel (0,1) red is signal index 1, green is 1025
        assert_eq!(rgb[3], bytes[2]);
        assert_eq!(rgb[4], bytes[1 + 1025]);
        let back = rgb_to_signal(&rgb).unwrap();
        assert_eq!(back.values, sig.values);
    }

    #[test]
    fn wrong_length_png_is_shape_error() {
        let sig = ImageSignal::new(vec![0.0; 10]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_png(&sig, dir.path().join("x.png")), Err(Error::Shape(_))));
    }
}
