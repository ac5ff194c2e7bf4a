//! Flat key=value experiment configuration with dotted sections.
//!
//! Example:
//!
//! ```text
//! # reference benchmark, half the unlabeled pool out-of-distribution
//! method = toor
//! seeds = 1,2,3,4,5
//! split.zeta = 0.5
//! scoring.delta = 0.9
//! sweep.zetas = 0,0.25,0.5,0.75
//! ```
//!
//! Unknown keys are rejected before any compute runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toor_core::data::SplitSpec;
use toor_core::error::{Error, Result};
use toor_core::scoring::ScoringConfig;
use toor_core::ssl::{SslConfig, SslVariant};
use toor_core::trainer::{Method, TrainConfig};

/// Parsed and validated experiment description. Per-run fields (seeds,
/// split seed) are filled in by the command layer.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Seed of the synthetic dataset itself (splits reseed per run).
    pub data_seed: u64,
    /// External dataset; replaces the built-in benchmark when set.
    pub data_csv: Option<PathBuf>,
    pub split: SplitSpec,
    /// Network overrides applied once data dimensions are known.
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub disc_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub noise_sigma: f64,
    pub train: TrainConfig,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub sweep_zetas: Vec<f64>,
    pub sweep_methods: Vec<Method>,
}

fn parse_kv(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key = value".into()))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(parse_err("empty key".into()));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(parse_err(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

struct KeyReader {
    map: BTreeMap<String, String>,
    path: PathBuf,
}

impl KeyReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, &v)),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.bad(key, &v)),
        }
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| self.bad(key, s)))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn bad(&self, key: &str, value: &str) -> Error {
        Error::Config(format!(
            "{}: bad value '{value}' for key '{key}'",
            self.path.display()
        ))
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!(
                "{}: unknown key '{key}'",
                self.path.display()
            )));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(path, &text)
    }

    pub fn from_text(path: &Path, text: &str) -> Result<Self> {
        let mut r = KeyReader {
            map: parse_kv(path, text)?,
            path: path.to_path_buf(),
        };

        let data_seed = r.parse("data.seed", 1u64)?;
        let data_csv: Option<PathBuf> = r.take("data.csv").map(PathBuf::from);

        let zeta = r.parse("split.zeta", 0.5f64)?;
        let split = SplitSpec {
            labeled_per_class: r.parse("split.labeled_per_class", 10usize)?,
            unlabeled_size: r.parse("split.unlabeled_size", 2000usize)?,
            zeta,
            near_fraction: r.parse("split.near_fraction", 0.5f64)?,
            test_per_class: r.parse("split.test_per_class", 100usize)?,
            seed: 0, // per-run
        };

        let feature_dim = r.parse("net.feature_dim", 16usize)?;
        let hidden = r.parse_list("net.hidden")?.unwrap_or_else(|| vec![32]);
        let disc_hidden = r.parse("net.disc_hidden", 64usize)?;
        let dropout = r.parse("net.dropout", 0.5f64)?;
        let leaky_slope = r.parse("net.leaky_slope", 0.1f64)?;
        let noise_sigma = r.parse("net.noise_sigma", 0.15f64)?;

        let defaults = TrainConfig::default();
        let max_iter = r.parse("train.max_iter", defaults.max_iter)?;
        let pretrain_iter = r
            .parse_opt("train.pretrain_iter")?
            .unwrap_or(max_iter / 100);
        let variant_name: Option<String> = r.take("ssl.variant");
        let variant = match variant_name.as_deref() {
            None => SslVariant::PiModel,
            Some(name) => SslVariant::parse(name).ok_or_else(|| {
                Error::Config(format!("unknown ssl.variant '{name}'"))
            })?,
        };
        let variant = match (variant, r.parse_opt::<f64>("ssl.threshold")?) {
            (SslVariant::PseudoLabel { .. }, Some(threshold)) => {
                SslVariant::PseudoLabel { threshold }
            }
            (v, _) => v,
        };
        let coeff = r
            .parse_opt("ssl.coeff")?
            .unwrap_or_else(|| variant.default_coeff());
        let train = TrainConfig {
            max_iter,
            pretrain_iter,
            batch_size: r.parse("train.batch_size", defaults.batch_size)?,
            labeled_fraction: r.parse("train.labeled_fraction", defaults.labeled_fraction)?,
            refresh_epochs: r.parse("train.refresh_epochs", defaults.refresh_epochs)?,
            report_interval: r.parse("train.report_interval", defaults.report_interval)?,
            lr: r.parse("train.lr", defaults.lr)?,
            disc_lr: r.parse("train.disc_lr", defaults.disc_lr)?,
            lr_decay_factor: r.parse("train.lr_decay_factor", defaults.lr_decay_factor)?,
            lr_decay_frac: r.parse("train.lr_decay_frac", defaults.lr_decay_frac)?,
            lambda_frac: r.parse("train.lambda_frac", defaults.lambda_frac)?,
            gamma_frac: r.parse("train.gamma_frac", defaults.gamma_frac)?,
            flip_frac: r.parse("train.flip_frac", defaults.flip_frac)?,
            ssl: SslConfig { variant, coeff },
            scoring: ScoringConfig {
                temperature: r.parse("scoring.temperature", 0.8f64)?,
                delta: r.parse("scoring.delta", 0.9f64)?,
                ema_momentum: r.parse("scoring.ema", 0.6f64)?,
            },
            seed: 0, // per-run
        };

        let method_name: String = r.take("method").unwrap_or_else(|| "toor".into());
        let method = Method::parse(&method_name)
            .ok_or_else(|| Error::Config(format!("unknown method '{method_name}'")))?;
        let seeds = r.parse_list("seeds")?.unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
        let out = PathBuf::from(r.take("out").unwrap_or_else(|| "runs".into()));
        let sweep_zetas = r
            .parse_list("sweep.zetas")?
            .unwrap_or_else(|| vec![zeta]);
        let sweep_methods = match r.take("sweep.methods") {
            None => vec![method],
            Some(v) => v
                .split(',')
                .map(|s| {
                    Method::parse(s.trim())
                        .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
                })
                .collect::<Result<Vec<Method>>>()?,
        };

        r.finish()?;

        let cfg = ExperimentConfig {
            data_seed,
            data_csv,
            split,
            feature_dim,
            hidden,
            disc_hidden,
            dropout,
            leaky_slope,
            noise_sigma,
            train,
            method,
            seeds,
            out,
            sweep_zetas,
            sweep_methods,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        {
            // Full validation happens in the trainer; catch config-file
            // mistakes early with a throwaway seed.
            let mut t = self.train.clone();
            t.seed = 0;
            t.validate()?;
        }
        let mut s = self.split.clone();
        s.seed = 0;
        s.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        if self.sweep_zetas.is_empty() {
            return Err(Error::Config("sweep.zetas must not be empty".into()));
        }
        for &z in &self.sweep_zetas {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::Config(format!("sweep zeta {z} out of [0,1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_text(Path::new("test.cfg"), text)
    }

    #[test]
    fn defaults_parse() {
        let cfg = load("").unwrap();
        assert_eq!(cfg.method, Method::Toor);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.train.max_iter, 20_000);
        assert_eq!(cfg.train.pretrain_iter, 200);
        assert_eq!(cfg.split.zeta, 0.5);
        assert_eq!(cfg.train.scoring.delta, 0.9);
    }

    #[test]
    fn dotted_keys_and_comments() {
        let cfg = load(
            "# a comment\nmethod = pi-model\nscoring.delta = 0.8\n\nsweep.zetas = 0, 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::PiModel);
        assert_eq!(cfg.train.scoring.delta, 0.8);
        assert_eq!(cfg.sweep_zetas, vec![0.0, 0.5]);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load("scoring.deltaa = 0.9").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = load("method = toor\nmethod = toor\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn bad_value_reports_key() {
        let err = load("train.max_iter = soon").unwrap_err();
        assert!(err.to_string().contains("train.max_iter"), "{err}");
    }

    #[test]
    fn pretrain_defaults_to_one_percent() {
        let cfg = load("train.max_iter = 5000").unwrap();
        assert_eq!(cfg.train.pretrain_iter, 50);
    }

    #[test]
    fn ssl_coeff_follows_variant_default() {
        let cfg = load("ssl.variant = pseudo-label").unwrap();
        assert_eq!(cfg.train.ssl.coeff, 0.3);
        let cfg = load("ssl.variant = pseudo-label\nssl.coeff = 2.5").unwrap();
        assert_eq!(cfg.train.ssl.coeff, 2.5);
    }

    #[test]
    fn invalid_zeta_rejected_before_compute() {
        assert!(load("sweep.zetas = 0.5, 1.5").is_err());
    }
}
