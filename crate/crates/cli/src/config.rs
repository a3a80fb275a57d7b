//! Flat `key = value` run configuration.
//!
//! ```text
//! # HTTP generator
//! protocol = http
//! trace = data/http.csv
//! K = 3
//! J = 3
//! H = 128
//! M = 12
//! num_epochs = 90
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use flowsynth::pipeline::PipelineConfig;

use crate::error::CliError;

pub const KEYS: &[&str] = &[
    "protocol",
    "trace",
    "K",
    "J",
    "min_covar",
    "max_iter",
    "tol",
    "H",
    "M",
    "num_epochs",
    "batch_size",
    "learning_rate",
    "clip_norm",
    "train_frac",
    "seed",
    "iat_quantile",
    "weight_floor",
    "mtu",
    "iat_floor",
    "grid_size",
    "segment_len",
    "max_lag",
    "kl_eps",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { pipeline: PipelineConfig::http(), trace: None }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let pipeline = PipelineConfig::preset(name)
            .ok_or_else(|| CliError::Config(format!("unknown preset {name:?} (expected http or udp)")))?;
        Ok(Self { pipeline, trace: None })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let p = &mut self.pipeline;
        match key {
            "protocol" => p.protocol = value.to_string(),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "K" => p.states = num(key, value)?,
            "J" => p.components = num(key, value)?,
            "min_covar" => p.min_covar = num(key, value)?,
            "max_iter" => p.max_iter = num(key, value)?,
            "tol" => p.tol = num(key, value)?,
            "H" => p.hidden = num(key, value)?,
            "M" => p.mixtures = num(key, value)?,
            "num_epochs" => p.epochs = num(key, value)?,
            "batch_size" => p.batch_size = num(key, value)?,
            "learning_rate" => p.learning_rate = num(key, value)?,
            "clip_norm" => p.clip_norm = num(key, value)?,
            "train_frac" => p.train_frac = num(key, value)?,
            "seed" => p.seed = num(key, value)?,
            "iat_quantile" => p.iat_quantile = num(key, value)?,
            "weight_floor" => p.weight_floor = num(key, value)?,
            "mtu" => p.mtu = num(key, value)?,
            "iat_floor" => p.iat_floor = num(key, value)?,
            "grid_size" => p.metrics.grid_size = num(key, value)?,
            "segment_len" => p.metrics.segment_len = num(key, value)?,
            "max_lag" => p.metrics.max_lag = num(key, value)?,
            "kl_eps" => p.metrics.eps = num(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Parse(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        Ok(self.pipeline.validate()?)
    }

    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let _ = writeln!(s, "protocol = {}", p.protocol);
        if let Some(t) = &self.trace {
            let _ = writeln!(s, "trace = {}", t.display());
        }
        let pairs: [(&str, String); 21] = [
            ("K", p.states.to_string()),
            ("J", p.components.to_string()),
            ("min_covar", p.min_covar.to_string()),
            ("max_iter", p.max_iter.to_string()),
            ("tol", p.tol.to_string()),
            ("H", p.hidden.to_string()),
            ("M", p.mixtures.to_string()),
            ("num_epochs", p.epochs.to_string()),
            ("batch_size", p.batch_size.to_string()),
            ("learning_rate", p.learning_rate.to_string()),
            ("clip_norm", p.clip_norm.to_string()),
            ("train_frac", p.train_frac.to_string()),
            ("seed", p.seed.to_string()),
            ("iat_quantile", p.iat_quantile.to_string()),
            ("weight_floor", p.weight_floor.to_string()),
            ("mtu", p.mtu.to_string()),
            ("iat_floor", p.iat_floor.to_string()),
            ("grid_size", p.metrics.grid_size.to_string()),
            ("segment_len", p.metrics.segment_len.to_string()),
            ("max_lag", p.metrics.max_lag.to_string()),
            ("kl_eps", p.metrics.eps.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
