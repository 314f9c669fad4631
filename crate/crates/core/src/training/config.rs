use std::path::Path;

use super::loss::LossKind;
use crate::error::{Error, Result};

/// Optimizer and loop settings.
///
/// The defaults are the published ones (batch 32, momentum 0.95,
/// learning rate 1e-5). On the small synthetic datasets a larger learning
/// rate reaches a usable model in far fewer iterations; the acceptance
/// tests set it explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iterations: u64,
    pub loss: LossKind,
    pub seed: u64,
    /// Iterations between held-out evaluations; 0 disables them.
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-5,
            momentum: 0.95,
            max_iterations: 1000,
            loss: LossKind::Mse,
            seed: 0,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 7] = [
        "lr",
        "momentum",
        "batch_size",
        "max_iterations",
        "loss",
        "seed",
        "eval_interval",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::invalid(format!("bad {what} value {value:?}"));
        match key {
            "lr" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "momentum" => self.momentum = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "max_iterations" => self.max_iterations = value.parse().map_err(|_| bad(key))?,
            "loss" => self.loss = LossKind::parse(value).ok_or_else(|| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "eval_interval" => self.eval_interval = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown key {key:?} (expected one of {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(source: &Path, text: &str) -> Result<Self> {
        Self::parse_over(TrainConfig::default(), source, text)
    }

    /// Like [`TrainConfig::parse`], with unset keys taken from `base`.
    pub fn parse_over(base: TrainConfig, source: &Path, text: &str) -> Result<Self> {
        let mut cfg = base;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: source.to_path_buf(),
                line: n as u64 + 1,
                reason,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate().map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_over(TrainConfig::default(), path)
    }

    pub fn load_over(base: TrainConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_over(base, path, &text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "lr = {}\nmomentum = {}\nbatch_size = {}\nmax_iterations = {}\nloss = {}\nseed = {}\neval_interval = {}\n",
            self.learning_rate,
            self.momentum,
            self.batch_size,
            self.max_iterations,
            self.loss.name(),
            self.seed,
            self.eval_interval
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.momentum, c.learning_rate), (32, 0.95, 1e-5));
        assert_eq!(c.loss, LossKind::Mse);
        c.validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = TrainConfig::parse(Path::new("c"), "# comment\nlr = 0.001\n\nloss=mae\nseed = 9\n").unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.loss, LossKind::Mae);
        assert_eq!(c.seed, 9);
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        match TrainConfig::parse(Path::new("c"), "lr = 0.1\nweight_decay = 0.1\n") {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("weight_decay"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariants_enforced() {
        for text in ["momentum = 1.0", "lr = 0", "lr = -1", "batch_size = 0", "loss = l2", "lr"] {
            assert!(TrainConfig::parse(Path::new("c"), text).is_err(), "{text}");
        }
        assert!(TrainConfig::parse(Path::new("c"), "momentum = 0").is_ok());
    }

    #[test]
    fn text_roundtrip() {
        let c = TrainConfig {
            learning_rate: 3e-4,
            max_iterations: 77,
            loss: LossKind::Mae,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(Path::new("c"), &c.to_text()).unwrap(), c);
    }
}
