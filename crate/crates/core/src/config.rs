//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Keys match the
//! command-line flags with `-` replaced by `_`.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::engine::DEFAULT_HORIZON;
use crate::protocol::{GateMode, ProtocolConfig, Step, Variant};
use crate::topology::{CostModelParams, Point};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub side: f64,
    pub range: f64,
    pub k: usize,
    pub f: f64,
    pub gate_mode: GateMode,
    pub variant: Variant,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub sink_x: f64,
    pub sink_y: f64,
    pub seed: u64,
    pub delay_min: Step,
    pub delay_max: Step,
    /// Time-sync velocity; `None` derives the conservative default.
    pub v: Option<f64>,
    pub horizon: Step,
    /// Reuse an `id,x,y` layout instead of generating one.
    pub layout: Option<PathBuf>,
    /// Moving-average window for the time series output.
    pub window: usize,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            side: 4000.0,
            range: 300.0,
            k: 8,
            f: 1.1,
            gate_mode: GateMode::SignificantImprovement,
            variant: Variant::Gated,
            a: 100.0,
            b: 100.0,
            gamma: 1.5,
            sink_x: 200.0,
            sink_y: 200.0,
            seed: 1,
            delay_min: 1,
            delay_max: 100,
            v: None,
            horizon: DEFAULT_HORIZON,
            layout: None,
            window: 200,
            out: PathBuf::from("out"),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Keys that never influence simulation output.
const OUTPUT_ONLY: &[&str] = &["out", "workers"];

impl RunConfig {
    pub fn cost_params(&self) -> CostModelParams {
        CostModelParams {
            a: self.a,
            b: self.b,
            gamma: self.gamma,
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            variant: self.variant,
            f: self.f,
            gate_mode: self.gate_mode,
            delay_min: self.delay_min,
            delay_max: self.delay_max,
            v: self.v,
        }
    }

    pub fn sink_point(&self) -> Point {
        Point::new(self.sink_x, self.sink_y)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 && self.layout.is_none() {
            return Err(Error::Config("n must be >= 1 (the sink is a node)".into()));
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(Error::Config(format!(
                "side must be > 0 (got {})",
                self.side
            )));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::Config(format!(
                "range must be > 0 (got {})",
                self.range
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.cost_params().validate()?;
        self.protocol().validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
        }
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "n" => self.n = parse(key, value)?,
            "side" => self.side = parse(key, value)?,
            "range" => self.range = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "f" => self.f = parse(key, value)?,
            "gate_mode" => self.gate_mode = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "a" => self.a = parse(key, value)?,
            "b" => self.b = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "sink_x" => self.sink_x = parse(key, value)?,
            "sink_y" => self.sink_y = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "delay_min" => self.delay_min = parse(key, value)?,
            "delay_max" => self.delay_max = parse(key, value)?,
            "v" => {
                self.v = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "horizon" => self.horizon = parse(key, value)?,
            "layout" => self.layout = (!value.is_empty()).then(|| PathBuf::from(value)),
            "window" => self.window = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a whole config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: &Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            ("n", self.n.to_string()),
            ("side", self.side.to_string()),
            ("range", self.range.to_string()),
            ("k", self.k.to_string()),
            ("f", self.f.to_string()),
            ("gate_mode", self.gate_mode.to_string()),
            ("variant", self.variant.to_string()),
            ("a", self.a.to_string()),
            ("b", self.b.to_string()),
            ("gamma", self.gamma.to_string()),
            ("sink_x", self.sink_x.to_string()),
            ("sink_y", self.sink_y.to_string()),
            ("seed", self.seed.to_string()),
            ("delay_min", self.delay_min.to_string()),
            ("delay_max", self.delay_max.to_string()),
            ("v", opt(&self.v)),
            ("horizon", self.horizon.to_string()),
            (
                "layout",
                self.layout
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("window", self.window.to_string()),
            ("out", self.out.display().to_string()),
            ("workers", self.workers.to_string()),
        ]
    }

    /// Effective configuration as a config file; floats are written in
    /// shortest round-trip form so reloading reproduces the run exactly.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    /// Short digest of every setting that affects simulation output.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, value) in self.entries() {
            if !OUTPUT_ONLY.contains(&key) {
                hasher.update(format!("{key}={value}\n"));
            }
        }
        hex::encode(&hasher.finalize()[..6])
    }

    /// Output subdirectory for a single run of this configuration.
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!("{}-s{}", self.hash(), self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.n, cfg.side, cfg.range), (4000, 4000.0, 300.0));
        assert_eq!(cfg.cost_params(), CostModelParams::default());
        assert_eq!((cfg.delay_min, cfg.delay_max), (1, 100));
    }

    #[test]
    fn dump_round_trips() {
        let cfg = RunConfig {
            f: 1.0 / 3.0 + 1.0,
            v: Some(1e-5),
            variant: Variant::TimeSync,
            layout: Some(PathBuf::from("layouts/a.csv")),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_text(&cfg.dump()).unwrap(), cfg);
    }

    #[test]
    fn file_syntax() {
        let cfg = RunConfig::from_text("# comment\n\n k = 32 \ngate-mode = literal_eq3\n").unwrap();
        assert_eq!(cfg.k, 32);
        assert_eq!(cfg.gate_mode, GateMode::LiteralEq3);
        assert!(RunConfig::from_text("k 32").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("k = eight").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        for text in [
            "k = 0",
            "f = 0.5",
            "n = 0",
            "range = -1",
            "delay_min = 0",
            "a = 0",
        ] {
            let cfg = RunConfig::from_text(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn hash_ignores_output_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        b.workers = 99;
        assert_eq!(a.hash(), b.hash());
        b.k = 9;
        assert_ne!(a.hash(), b.hash());
    }
}
