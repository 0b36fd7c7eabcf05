//! Experiment configuration read from a flat TOML file.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::wavelets::Basis;

use super::presets::{model_from_json, preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Q,
    Smooth,
    Rough,
    Direction,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Q => "q",
            Estimator::Smooth => "smooth",
            Estimator::Rough => "rough",
            Estimator::Direction => "direction",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(Estimator::Q),
            "smooth" => Ok(Estimator::Smooth),
            "rough" => Ok(Estimator::Rough),
            "direction" => Ok(Estimator::Direction),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Where the separating direction comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DirectionSource {
    /// The true `ψ₂`.
    Oracle,
    /// Estimated on the first third of a `3n` path, used on the last third.
    Split3n,
    /// A grid record on disk.
    File(PathBuf),
}

impl FromStr for DirectionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DirectionSource::Oracle),
            "split3n" => Ok(DirectionSource::Split3n),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(DirectionSource::File(PathBuf::from(path))),
                _ => Err(Error::Config(format!(
                    "direction must be `oracle`, `split3n` or `file:<path>`, got `{s}`"
                ))),
            },
        }
    }
}

impl std::fmt::Display for DirectionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DirectionSource::Oracle => write!(f, "oracle"),
            DirectionSource::Split3n => write!(f, "split3n"),
            DirectionSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl Serialize for DirectionSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DirectionSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_model() -> String {
    "theta-star".into()
}

fn default_reps() -> usize {
    1
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Q]
}

fn default_m() -> u32 {
    3
}

fn default_beta() -> f64 {
    1.0
}

/// Everything a sweep needs. Unset tuning constants are derived from the
/// model when the sweep runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name, ignored when `model_file` is set.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    /// Grid resolution of a preset.
    #[serde(default)]
    pub resolution: Option<u32>,
    pub n: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(rename = "M", default = "default_m")]
    pub m: u32,
    /// Defaults to 4 with an estimated direction and to `max(1, sup|ψ̃|)` otherwise.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Defaults to the class-based rule with constant `beta`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Defaults to the larger sup of the true densities.
    #[serde(default)]
    pub t_check: Option<f64>,
    #[serde(rename = "J", default)]
    pub j0: u32,
    #[serde(default)]
    pub basis: Basis,
    #[serde(default = "default_direction")]
    pub direction: DirectionSource,
    /// Record per-row wall time; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

fn default_direction() -> DirectionSource {
    DirectionSource::Split3n
}

impl ExperimentConfig {
    pub fn new(model: &str, n: Vec<usize>, reps: usize, seed: u64, estimators: Vec<Estimator>) -> Self {
        ExperimentConfig {
            model: model.into(),
            model_file: None,
            resolution: None,
            n,
            reps,
            seed,
            estimators,
            m: default_m(),
            tau: None,
            gamma: None,
            beta: default_beta(),
            t_check: None,
            j0: 0,
            basis: Basis::Haar,
            direction: DirectionSource::Split3n,
            timing: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() {
            return Err(Error::Config("field `n`: at least one sample size is required".into()));
        }
        if self.n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("field `n`: values must be strictly increasing".into()));
        }
        if self.n[0] < 4 {
            return Err(Error::Config("field `n`: sample sizes must be at least 4".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("field `reps`: must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("field `estimators`: list is empty".into()));
        }
        if let Some(t) = self.tau {
            if !(t >= 1.0) {
                return Err(Error::Config(format!("field `tau`: {t} is below 1")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return Err(Error::Config(format!("field `gamma`: {g} is negative")));
            }
        }
        if let Some(t) = self.t_check {
            if !(t > 0.0) {
                return Err(Error::Config(format!("field `t_check`: {t} must be positive")));
            }
        }
        if self.j0 > self.m {
            return Err(Error::Config(format!("field `J`: {} exceeds M = {}", self.j0, self.m)));
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<ModelParams> {
        match &self.model_file {
            Some(path) => model_from_json(&std::fs::read_to_string(path)?),
            None => preset(&self.model, self.resolution),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::from_toml(
            r#"
model = "theta-star"
n = [1024, 2048]
reps = 3
seed = 9
estimators = ["q", "direction"]
M = 2
tau = 4.0
direction = "oracle"
"#,
        )
        .unwrap();
        assert_eq!(cfg.n, vec![1024, 2048]);
        assert_eq!(cfg.estimators, vec![Estimator::Q, Estimator::Direction]);
        assert_eq!(cfg.direction, DirectionSource::Oracle);
        assert_eq!(cfg.m, 2);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let err = ExperimentConfig::from_toml("n = [1024]\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::from_toml("n = [2048, 1024]").unwrap_err();
        assert!(err.to_string().contains("`n`"));
        let err = ExperimentConfig::from_toml("n = [1024]\nreps = 0").unwrap_err();
        assert!(err.to_string().contains("`reps`"));
    }

    #[test]
    fn direction_sources() {
        assert_eq!("file:/tmp/x".parse::<DirectionSource>().unwrap(), DirectionSource::File("/tmp/x".into()));
        assert!("file:".parse::<DirectionSource>().is_err());
        assert!("guess".parse::<DirectionSource>().is_err());
        assert_eq!(DirectionSource::Split3n.to_string(), "split3n");
    }
}
