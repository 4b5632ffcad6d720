//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use refsplat_core::TrainConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{DEFAULT_RESOLUTION, TEST_EVERY};
use crate::error::{Error, Result};
use crate::evalkit::DEFAULT_RELIGHT;

pub const CONFIG_FILE: &str = "run_config.toml";

/// Image size written as `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            width: DEFAULT_RESOLUTION.0,
            height: DEFAULT_RESOLUTION.1,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension `{v}` in `{s}`"));
        let r = Self {
            width: parse(w)?,
            height: parse(h)?,
        };
        if r.width < 16 || r.height < 16 {
            return Err(format!("resolution must be at least 16x16, got {r}"));
        }
        Ok(r)
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub fps_warmup: usize,
    pub fps_reps: usize,
    pub relight: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            fps_warmup: 2,
            fps_reps: 5,
            relight: DEFAULT_RELIGHT.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resolution: Resolution,
    /// Hold out one image in this many.
    pub test_every: usize,
    pub sh_degree: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Gradient reduction order is fixed, so runs are always reproducible; kept for the record.
    pub deterministic: bool,
    pub checkpoint_interval: usize,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            out: None,
            resolution: Resolution::default(),
            test_every: TEST_EVERY,
            sh_degree: 3,
            threads: 0,
            deterministic: true,
            checkpoint_interval: 7000,
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Sets the iteration budget, scaling the densification schedule to fit.
    pub fn set_iters(&mut self, iters: usize) {
        self.train = self.train.clone().with_total_iters(iters);
    }

    /// Rescales a schedule that does not fit the iteration budget, then validates.
    pub fn resolve(&mut self) -> Result<()> {
        if self.train.densify && self.train.densify_end > self.train.total_iters {
            let iters = self.train.total_iters;
            self.train.total_iters = TrainConfig::default().total_iters.max(self.train.densify_end);
            self.set_iters(iters);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.test_every < 2 {
            return Err(Error::Config("test_every must be at least 2".into()));
        }
        if self.sh_degree > refsplat_core::sh::MAX_DEGREE {
            return Err(Error::Config(format!("sh_degree must be at most {}", refsplat_core::sh::MAX_DEGREE)));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        if let Some(k) = self.eval.relight.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::Config(format!("relighting coefficients must be finite and >= 0, got {k}")));
        }
        Ok(())
    }

    /// Writes the resolved configuration as `run_config.toml` in `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
