//! JSON run configuration. Every field is optional; flags on the command line
//! win over values read here.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use relshift::tuning::{DEFAULT_N_LAMBDA, DEFAULT_RATIO};
use relshift::{FitConfig, PenaltyKind, RootPolicy, SolverConfig};
use serde::{Deserialize, Serialize};

/// A fixed penalty level or `auto` for cross-validated selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Auto,
    Value(f64),
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaArg::Value(v)),
            _ => Err(format!("expected a nonnegative number or 'auto', got '{s}'")),
        }
    }
}

impl fmt::Display for LambdaArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaArg::Auto => f.write_str("auto"),
            LambdaArg::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for LambdaArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaArg::Auto => s.serialize_str("auto"),
            LambdaArg::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => format!("{v}").parse().map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: Option<usize>,
    pub n_lambda: Option<usize>,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub one_se: Option<bool>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub penalty: Option<PenaltyKind>,
    pub lambda: Option<LambdaArg>,
    pub cv: CvConfig,
    pub solver: Option<SolverConfig>,
    pub root: Option<RootPolicy>,
    pub standardize_covariates: Option<bool>,
    pub truncation_threshold: Option<f64>,
    pub merge_tol: Option<f64>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| relshift::Error::Argument(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn fit_config(&self) -> FitConfig {
        let base = FitConfig::default();
        FitConfig {
            solver: self.solver.clone().unwrap_or(base.solver),
            root: self.root.unwrap_or(base.root),
            standardize_covariates: self.standardize_covariates.unwrap_or(base.standardize_covariates),
            truncation_threshold: self.truncation_threshold.unwrap_or(base.truncation_threshold),
            merge_tol: self.merge_tol.or(base.merge_tol),
        }
    }
}

/// Cross-validation settings after merging flags over the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvSettings {
    pub k: usize,
    pub n_lambda: usize,
    pub ratio: f64,
    pub seed: u64,
    pub one_se: bool,
}

impl CvSettings {
    pub fn merge(flags: &CvConfig, file: &CvConfig, seed: Option<u64>) -> CvSettings {
        CvSettings {
            k: flags.k.or(file.k).unwrap_or(5),
            n_lambda: flags.n_lambda.or(file.n_lambda).unwrap_or(DEFAULT_N_LAMBDA),
            ratio: flags.ratio.or(file.ratio).unwrap_or(DEFAULT_RATIO),
            seed: flags.seed.or(file.seed).or(seed).unwrap_or(0),
            one_se: flags.one_se.or(file.one_se).unwrap_or(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_tokens() {
        assert_eq!("auto".parse::<LambdaArg>().unwrap(), LambdaArg::Auto);
        assert_eq!("0.25".parse::<LambdaArg>().unwrap(), LambdaArg::Value(0.25));
        assert!("-1".parse::<LambdaArg>().is_err());
        assert!("abc".parse::<LambdaArg>().is_err());
    }

    #[test]
    fn config_file_fields() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"penalty":"dl2","lambda":"auto","cv":{"k":4},"solver":{"max_iter":10},"threads":1}"#,
        )
        .unwrap();
        assert_eq!(cfg.penalty, Some(PenaltyKind::DescL2));
        assert_eq!(cfg.lambda, Some(LambdaArg::Auto));
        assert_eq!(cfg.fit_config().solver.max_iter, 10);
        let cv = CvSettings::merge(&CvConfig { k: Some(3), ..Default::default() }, &cfg.cv, Some(9));
        assert_eq!((cv.k, cv.seed), (3, 9));
        let fixed: RunConfig = serde_json::from_str(r#"{"lambda":0.5}"#).unwrap();
        assert_eq!(fixed.lambda, Some(LambdaArg::Value(0.5)));
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda":1}"#).is_err());
    }
}
