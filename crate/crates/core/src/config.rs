//! Run configuration: a TOML file, command-line overrides and defaults.
//!
//! Flags override the file, the file overrides the defaults below. Unknown
//! keys anywhere are an error. A complete file with every default spelled out:
//!
//! ```toml
//! # data = "data_batch_1.bin"   # no default
//! # out = "model.sdg"           # no default
//! # max_images = 200            # default: all records
//! encode_ridge = 1e-3
//!
//! [train]
//! epochs = 20
//! batch_size = 32
//! learning_rate = 1e-3
//! lambda_stft = 0.1
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_epsilon = 1e-8
//! seed = 0
//! atoms = 256
//! hidden = 64
//! frequency_init = "spectrum"   # or "geometric"
//! hidden_scale = 30.0
//! mixing_init = "zero"          # or "ridge"
//! init_ridge = 1e-3
//! threads = 0                   # SDG_THREADS overrides this
//!
//! [train.stft]
//! frame_length = 256
//! hop_length = 128
//! window = "hann"               # or "rectangular"
//!
//! [prior]
//! shrinkage = 1e-3
//! mode = "full"                 # or "diagonal"
//!
//! [sample]
//! count = 16
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{CovarianceMode, DEFAULT_SHRINKAGE};
use crate::training::TrainConfig;

pub const THREADS_ENV: &str = "SDG_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub shrinkage: f64,
    pub mode: CovarianceMode,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            shrinkage: DEFAULT_SHRINKAGE,
            mode: CovarianceMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub count: usize,
    pub seed: u64,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self { count: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_images: Option<usize>,
    /// Ridge penalty for encoding images that have no stored weights.
    pub encode_ridge: f64,
    pub train: TrainConfig,
    pub prior: PriorSettings,
    pub sample: SampleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            max_images: None,
            encode_ridge: 1e-3,
            train: TrainConfig::default(),
            prior: PriorSettings::default(),
            sample: SampleSettings::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub atoms: Option<usize>,
    pub lambda_stft: Option<f64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub count: Option<usize>,
    pub max_images: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Defaults, then the optional file, then `flags`, then `SDG_THREADS`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        if let Ok(v) = std::env::var(THREADS_ENV) {
            cfg.train.threads = parse_threads(&v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &Overrides) {
        if let Some(v) = &flags.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &flags.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = flags.max_images {
            self.max_images = Some(v);
        }
        if let Some(v) = flags.seed {
            self.train.seed = v;
            self.sample.seed = v;
        }
        if let Some(v) = flags.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = flags.atoms {
            self.train.atoms = v;
        }
        if let Some(v) = flags.lambda_stft {
            self.train.lambda_stft = v;
        }
        if let Some(v) = flags.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = flags.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = flags.count {
            self.sample.count = v;
        }
    }
}

pub fn parse_threads(v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a non-negative integer")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::Window;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn documented_example_matches_defaults() {
        let doc = include_str!("config.rs");
        let block: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(RunConfig::from_toml(&block).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_tables() {
        let c = RunConfig::from_toml("[train]\nepochs = 3\n[train.stft]\nwindow = \"rectangular\"\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.stft.window, Window::Rectangular);
        assert_eq!(c.train.stft.frame_length, 256);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1", "[train]\nlearning_rat = 0.1", "[train.stft]\nhop = 3", "[prior]\nx = 1"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::from_toml("[train]\nepochs = 3\nseed = 9\n").unwrap();
        c.apply(&Overrides {
            epochs: Some(7),
            atoms: Some(32),
            ..Overrides::default()
        });
        assert_eq!((c.train.epochs, c.train.seed, c.train.atoms), (7, 9, 32));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn thread_values() {
        assert_eq!(parse_threads(" 4 ").unwrap(), 4);
        assert!(parse_threads("-1").is_err());
    }
}
