//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian, floats are IEEE-754 f64):
//!
//! | field | type |
//! |---|---|
//! | magic | 4 bytes `SDG1` |
//! | version | u32, currently 1 |
//! | atoms `K`, length `T`, hidden `H`, images `N` | 4 x u64 |
//! | base_amplitude, base_frequency, base_phase | 3 x `K` f64 |
//! | input_weights, input_bias | 2 x `H` f64 |
//! | output_weights | `3K x H` f64, row-major |
//! | output_bias | `3K` f64 |
//! | mixing | `N x K` f64, row-major |
//! | has_prior | u8 (0 or 1) |
//! | prior (if present): mode u8, shrinkage f64, mean `K`, covariance `K x K`, chol `K x K` | |
//! | config: epochs u64, batch_size u64, learning_rate f64, lambda_stft f64, adam_beta1 f64, adam_beta2 f64, adam_epsilon f64, seed u64, atoms u64, hidden u64, frame_length u64, hop_length u64, window u8, frequency_init u8, hidden_scale f64, mixing_init u8, init_ridge f64 | |
//!
//! Nothing may follow the config block.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dictionary::{FrequencyInit, ModulationNetwork, SpectralDictionary};
use crate::error::{Error, Result};
use crate::prior::{CovarianceMode, GaussianPrior};
use crate::stft::{StftConfig, Window};
use crate::training::{MixingInit, MixingMatrix, Model, TrainConfig};

pub const MAGIC: [u8; 4] = *b"SDG1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Signal length the dictionary was trained on.
    pub signal_len: usize,
    pub prior: Option<GaussianPrior>,
    pub config: TrainConfig,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(field))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated(field));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn usize(&mut self, field: &'static str) -> Result<usize> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| Error::CheckpointField {
            field,
            detail: format!("{v} does not fit in usize"),
        })
    }
    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated(field))?, field)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize, field: &'static str) -> Result<Array2<f64>> {
        let len = rows.checked_mul(cols).ok_or(Error::Truncated(field))?;
        let v = self.f64s(len, field)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
    }
}

fn bad(field: &'static str, detail: impl Into<String>) -> Error {
    Error::CheckpointField {
        field,
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.model.dictionary;
        let (k, h, n) = (d.atoms(), d.hidden_width(), self.model.mixing.images());
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u32(VERSION);
        w.usize(k);
        w.usize(self.signal_len);
        w.usize(h);
        w.usize(n);
        w.f64s(d.base_amplitude.iter());
        w.f64s(d.base_frequency.iter());
        w.f64s(d.base_phase.iter());
        w.f64s(d.modnet.input_weights.iter());
        w.f64s(d.modnet.input_bias.iter());
        w.f64s(d.modnet.output_weights.iter());
        w.f64s(d.modnet.output_bias.iter());
        w.f64s(self.model.mixing.rows.iter());
        match &self.prior {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.u8(p.mode.code());
                w.f64(p.shrinkage);
                w.f64s(p.mean.iter());
                w.f64s(p.covariance.iter());
                w.f64s(p.chol.iter());
            }
        }
        let c = &self.config;
        w.usize(c.epochs);
        w.usize(c.batch_size);
        w.f64(c.learning_rate);
        w.f64(c.lambda_stft);
        w.f64(c.adam_beta1);
        w.f64(c.adam_beta2);
        w.f64(c.adam_epsilon);
        w.u64(c.seed);
        w.usize(c.atoms);
        w.usize(c.hidden);
        w.usize(c.stft.frame_length);
        w.usize(c.stft.hop_length);
        w.u8(c.stft.window.code());
        w.u8(c.frequency_init.code());
        w.f64(c.hidden_scale);
        w.u8(c.mixing_init.code());
        w.f64(c.init_ridge);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let k = r.usize("atoms")?;
        let signal_len = r.usize("signal_len")?;
        let h = r.usize("hidden")?;
        let n = r.usize("images")?;
        if k == 0 || h == 0 {
            return Err(bad("atoms", "atom count and hidden width must be positive"));
        }
        let base_amplitude = Array1::from(r.f64s(k, "base_amplitude")?);
        let base_frequency = Array1::from(r.f64s(k, "base_frequency")?);
        let base_phase = Array1::from(r.f64s(k, "base_phase")?);
        let input_weights = Array1::from(r.f64s(h, "input_weights")?);
        let input_bias = Array1::from(r.f64s(h, "input_bias")?);
        let output_weights = r.matrix(3 * k, h, "output_weights")?;
        let output_bias = Array1::from(r.f64s(3 * k, "output_bias")?);
        let mixing = MixingMatrix {
            rows: r.matrix(n, k, "mixing")?,
        };
        let prior = match r.u8("has_prior")? {
            0 => None,
            1 => {
                let mode = CovarianceMode::from_code(r.u8("prior.mode")?)
                    .ok_or_else(|| bad("prior.mode", "unknown covariance mode"))?;
                let shrinkage = r.f64("prior.shrinkage")?;
                let mean = Array1::from(r.f64s(k, "prior.mean")?);
                let covariance = r.matrix(k, k, "prior.covariance")?;
                let chol = r.matrix(k, k, "prior.chol")?;
                Some(GaussianPrior {
                    mean,
                    covariance,
                    chol,
                    shrinkage,
                    mode,
                })
            }
            other => return Err(bad("has_prior", format!("flag byte {other}"))),
        };
        let epochs = r.usize("config.epochs")?;
        let batch_size = r.usize("config.batch_size")?;
        let learning_rate = r.f64("config.learning_rate")?;
        let lambda_stft = r.f64("config.lambda_stft")?;
        let adam_beta1 = r.f64("config.adam_beta1")?;
        let adam_beta2 = r.f64("config.adam_beta2")?;
        let adam_epsilon = r.f64("config.adam_epsilon")?;
        let seed = r.u64("config.seed")?;
        let atoms = r.usize("config.atoms")?;
        let hidden = r.usize("config.hidden")?;
        let frame_length = r.usize("config.frame_length")?;
        let hop_length = r.usize("config.hop_length")?;
        let window = Window::from_code(r.u8("config.window")?).ok_or_else(|| bad("config.window", "unknown window"))?;
        let frequency_init = FrequencyInit::from_code(r.u8("config.frequency_init")?)
            .ok_or_else(|| bad("config.frequency_init", "unknown initialization"))?;
        let hidden_scale = r.f64("config.hidden_scale")?;
        let mixing_init = MixingInit::from_code(r.u8("config.mixing_init")?)
            .ok_or_else(|| bad("config.mixing_init", "unknown initialization"))?;
        let init_ridge = r.f64("config.init_ridge")?;
        if r.pos != bytes.len() {
            return Err(bad("end", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model: Model {
                dictionary: SpectralDictionary {
                    base_amplitude,
                    base_frequency,
                    base_phase,
                    modnet: ModulationNetwork {
                        input_weights,
                        input_bias,
                        output_weights,
                        output_bias,
                    },
                },
                mixing,
            },
            signal_len,
            prior,
            config: TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                lambda_stft,
                adam_beta1,
                adam_beta2,
                adam_epsilon,
                seed,
                atoms,
                hidden,
                stft: StftConfig {
                    frame_length,
                    hop_length,
                    window,
                },
                frequency_init,
                hidden_scale,
                mixing_init,
                init_ridge,
                threads: 0,
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
