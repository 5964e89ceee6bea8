//! `key = value` run configuration. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shiftnet_core::nets::GeneratorConfig;
use shiftnet_core::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            other => Err(format!("unknown precision '{other}' (f32 or f64)")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub precision: Precision,
    /// Training crop; must equal the generator input size.
    pub crop_size: usize,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::desk();
        Self {
            crop_size: generator.input_size,
            generator,
            train: TrainConfig::default(),
            precision: Precision::F32,
            data_dir: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Accepts a plain real or a fraction such as `5/16`.
fn parse_real(v: &str) -> Result<f64, String> {
    let parsed = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number '{v}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number '{v}'"))?;
            a / b
        }
        None => v.parse().map_err(|_| format!("bad number '{v}'"))?,
    };
    if parsed.is_finite() {
        Ok(parsed)
    } else {
        Err(format!("'{v}' is not finite"))
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| format!("bad value '{v}': {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("bad boolean '{other}'")),
    }
}

pub const KEYS: &[&str] = &[
    "input_size",
    "depth",
    "base_channels",
    "shift_layer",
    "shift_mode",
    "slice_zero",
    "threshold_T",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "lambda_g",
    "lambda_adv",
    "mask_kind",
    "seed",
    "crop_size",
    "resize_min",
    "fill",
    "flip",
    "sum_reduction",
    "saturating",
    "precision",
    "max_steps",
    "disc_base_channels",
    "data_dir",
    "out_dir",
];

impl RunConfig {
    /// Sets one key. Values are checked for syntax here and for consistency
    /// in [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let g = &mut self.generator;
        let t = &mut self.train;
        match key {
            "input_size" => g.input_size = parse(value)?,
            "depth" => g.depth = parse(value)?,
            "base_channels" => g.base_channels = parse(value)?,
            "shift_layer" => g.shift_layer = parse(value)?,
            "shift_mode" => g.shift_mode = parse(value)?,
            "slice_zero" => g.slice_zero = parse(value)?,
            "threshold_T" => g.threshold = parse_real(value)?,
            "epochs" => t.epochs = parse(value)?,
            "batch_size" => t.batch_size = parse(value)?,
            "lr" => t.adam.lr = parse_real(value)?,
            "beta1" => t.adam.beta1 = parse_real(value)?,
            "beta2" => t.adam.beta2 = parse_real(value)?,
            "eps" => t.adam.eps = parse_real(value)?,
            "lambda_g" => t.weights.lambda_g = parse_real(value)?,
            "lambda_adv" => t.weights.lambda_adv = parse_real(value)?,
            "mask_kind" => t.mask_kind = parse(value)?,
            "seed" => t.seed = parse(value)?,
            "crop_size" => self.crop_size = parse(value)?,
            "resize_min" => t.resize_min = parse(value)?,
            "fill" => t.fill = parse_real(value)?,
            "flip" => t.flip = parse_bool(value)?,
            "sum_reduction" => t.loss.sum_reduction = parse_bool(value)?,
            "saturating" => t.loss.saturating = parse_bool(value)?,
            "precision" => self.precision = parse(value)?,
            "max_steps" => {
                t.max_steps = match value {
                    "none" => None,
                    v => Some(parse(v)?),
                }
            }
            "disc_base_channels" => {
                t.disc_base_channels = match value {
                    "none" => None,
                    v => Some(parse(v)?),
                }
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Parses a config on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Syntax { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key '{k}'")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
            path: path.display().to_string(),
            err,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: shiftnet_core::Error| ConfigError::Invalid(e.to_string());
        self.generator.validate().map_err(inv)?;
        self.train.validate(&self.generator).map_err(inv)?;
        if self.crop_size != self.generator.input_size {
            return Err(ConfigError::Invalid(format!(
                "crop_size {} must equal input_size {}",
                self.crop_size, self.generator.input_size
            )));
        }
        let a = &self.train.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "optimizer settings out of range: lr={} beta1={} beta2={} eps={}",
                a.lr, a.beta1, a.beta2, a.eps
            )));
        }
        if self.train.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Every key, in a form [`parse`](Self::parse) reads back unchanged.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("input_size", &g.input_size);
        kv("depth", &g.depth);
        kv("base_channels", &g.base_channels);
        kv("shift_layer", &g.shift_layer);
        kv("shift_mode", &g.shift_mode);
        kv("slice_zero", &g.slice_zero);
        kv("threshold_T", &g.threshold);
        kv("epochs", &t.epochs);
        kv("batch_size", &t.batch_size);
        kv("lr", &t.adam.lr);
        kv("beta1", &t.adam.beta1);
        kv("beta2", &t.adam.beta2);
        kv("eps", &t.adam.eps);
        kv("lambda_g", &t.weights.lambda_g);
        kv("lambda_adv", &t.weights.lambda_adv);
        kv("mask_kind", &t.mask_kind);
        kv("seed", &t.seed);
        kv("crop_size", &self.crop_size);
        kv("resize_min", &t.resize_min);
        kv("fill", &t.fill);
        kv("flip", &t.flip);
        kv("sum_reduction", &t.loss.sum_reduction);
        kv("saturating", &t.loss.saturating);
        kv("precision", &self.precision);
        kv("max_steps", &opt(t.max_steps));
        kv("disc_base_channels", &opt(t.disc_base_channels));
        if let Some(d) = &self.data_dir {
            kv("data_dir", &d.display());
        }
        kv("out_dir", &self.out_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shiftnet_core::nets::ShiftMode;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn fractions_and_comments() {
        let cfg = RunConfig::parse("# sweep\nthreshold_T = 6/16  # high\nshift_mode = random\n").unwrap();
        assert_eq!(cfg.generator.threshold, 0.375);
        assert_eq!(cfg.generator.shift_mode, ShiftMode::Random);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = RunConfig::parse("epochs = 3\nlambda_gg = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("lambda_gg"), "{e}");
    }

    #[test]
    fn keys_list_matches_setter() {
        let mut cfg = RunConfig::default();
        let text = cfg.to_text();
        let written: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        for k in KEYS {
            assert!(written.contains(k) || *k == "data_dir", "{k}");
        }
        assert!(cfg.set("data_dir", "x").is_ok());
    }

    #[test]
    fn inconsistent_values_rejected() {
        assert!(RunConfig::parse("crop_size = 64\n").is_err());
        assert!(RunConfig::parse("batch_size = 4\n").is_err());
        assert!(RunConfig::parse("shift_mode = off\nslice_zero = shift\n").is_err());
        assert!(RunConfig::parse("epochs\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
    }
}
