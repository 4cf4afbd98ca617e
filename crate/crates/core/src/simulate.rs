//! Seeded generative designs.
//!
//! Every scenario is reproducible from its name and seed. Responses are
//! always computed from the untruncated compositions; models only see the
//! truncated ones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::composition::{
    add_noise_snr, sample_logistic_normal, sample_variance, truncate_renormalize, CompositionMatrix, CovSpec,
    Table,
};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::taxonomy::{parse_newick, TaxTree};

/// Truncation cut of the two main studies.
pub const STUDY_CUT: f64 = 0.005;
/// Truncation cut of the six-taxon tree design: half the mean abundance,
/// the same relative cut as [`STUDY_CUT`] at p = 100.
pub const SMALLTREE_CUT: f64 = 0.5 / 6.0;

const STREAM_BETA: u64 = 0;
const STREAM_X: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Study1Equisparse,
    Study2Tree,
    SuppLogcontrast,
    SuppSmalltree,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Study1Equisparse,
        ScenarioName::Study2Tree,
        ScenarioName::SuppLogcontrast,
        ScenarioName::SuppSmalltree,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ScenarioName::Study1Equisparse => "study1_equisparse",
            ScenarioName::Study2Tree => "study2_tree",
            ScenarioName::SuppLogcontrast => "supp_logcontrast",
            ScenarioName::SuppSmalltree => "supp_smalltree",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.token() == s)
            .ok_or_else(|| Error::arg(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseModel {
    /// `y = X beta + e`.
    RelativeShift,
    /// `y = log(X) beta + e`.
    LogContrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Variance set so that `var(signal) / var(noise)` equals this.
    Snr(f64),
    /// Known standard deviation.
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub n_train: usize,
    pub n_test: usize,
    pub p: usize,
    pub noise: Noise,
    /// `None` keeps the compositions free of zeros.
    pub truncation_cut: Option<f64>,
    pub seed: u64,
    pub beta: Vec<f64>,
    pub newick: Option<String>,
    pub response: ResponseModel,
    pub latent_mean: Vec<f64>,
    /// Correlation `rho^|i-j|` of the latent Gaussian; 0 is independent.
    pub latent_rho: f64,
}

impl Scenario {
    /// Equi-sparse design over 100 taxa with three coefficient blocks.
    pub fn study1(seed: u64) -> Scenario {
        let p = 100;
        let mut beta = vec![0.0; p];
        beta[..20].fill(-1.0);
        beta[20..30].fill(2.0);
        Scenario {
            name: ScenarioName::Study1Equisparse,
            n_train: 100,
            n_test: 400,
            p,
            noise: Noise::Snr(1.0),
            truncation_cut: Some(STUDY_CUT),
            seed,
            beta,
            newick: None,
            response: ResponseModel::RelativeShift,
            latent_mean: vec![0.0; p - 1],
            latent_rho: 0.0,
        }
    }

    /// Tree-structured design; the last 20 coefficients are drawn per seed.
    pub fn study2(seed: u64) -> Scenario {
        let p = 100;
        let mut rng = SimRng::with_stream(seed, STREAM_BETA);
        let mut beta = vec![0.0; p];
        beta[..20].fill(1.0);
        beta[20..30].fill(-2.0);
        beta[30..40].fill(0.5);
        beta[40..80].fill(2.0);
        for b in &mut beta[80..] {
            *b = rng.normal();
        }
        Scenario {
            name: ScenarioName::Study2Tree,
            newick: Some(study2_newick()),
            beta,
            ..Scenario::study1(seed)
        }
    }

    /// Sparse log-contrast model without zeros.
    pub fn logcontrast(seed: u64, snr: f64) -> Scenario {
        let p = 100;
        let mut beta = vec![0.0; p];
        beta[..8].copy_from_slice(&[1.0, -0.8, 0.6, 0.0, 0.0, -1.5, -0.5, 1.2]);
        Scenario {
            name: ScenarioName::SuppLogcontrast,
            noise: Noise::Snr(snr),
            truncation_cut: None,
            beta,
            response: ResponseModel::LogContrast,
            latent_mean: (1..p).map(|j| j as f64 / p as f64).collect(),
            latent_rho: 0.2,
            ..Scenario::study1(seed)
        }
    }

    /// Six taxa; leaves 1-4 share one coefficient and leaves 5-6 another.
    pub fn smalltree(seed: u64) -> Scenario {
        let p = 6;
        Scenario {
            name: ScenarioName::SuppSmalltree,
            p,
            truncation_cut: Some(SMALLTREE_CUT),
            beta: vec![0.5, 0.5, 0.5, 0.5, 2.0, 2.0],
            newick: Some("(((t1,t2),(t3,t4)),(t5,t6));".into()),
            latent_mean: vec![0.0; p - 1],
            ..Scenario::study1(seed)
        }
    }

    pub fn named(name: ScenarioName, seed: u64) -> Scenario {
        match name {
            ScenarioName::Study1Equisparse => Scenario::study1(seed),
            ScenarioName::Study2Tree => Scenario::study2(seed),
            ScenarioName::SuppLogcontrast => Scenario::logcontrast(seed, 1.0),
            ScenarioName::SuppSmalltree => Scenario::smalltree(seed),
        }
    }

    pub fn with_noise(mut self, noise: Noise) -> Scenario {
        self.noise = noise;
        self
    }

    pub fn with_sizes(mut self, n_train: usize, n_test: usize) -> Scenario {
        self.n_train = n_train;
        self.n_test = n_test;
        self
    }

    pub fn with_truncation(mut self, cut: Option<f64>) -> Scenario {
        self.truncation_cut = cut;
        self
    }

    /// Same design with a different seed. Study II redraws its free block.
    pub fn reseeded(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.seed = seed;
        if self.name == ScenarioName::Study2Tree {
            s.beta = Scenario::study2(seed).beta;
        }
        s
    }

    pub fn tree(&self) -> Result<Option<Arc<TaxTree>>> {
        self.newick.as_deref().map(|s| parse_newick(s).map(Arc::new)).transpose()
    }

    pub fn taxa(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("t{j}")).collect()
    }

    fn latent(&self) -> CovSpec {
        if self.latent_rho == 0.0 {
            CovSpec::Identity
        } else {
            CovSpec::ExpDecay { rho: self.latent_rho }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.p < 2 || self.beta.len() != self.p || self.latent_mean.len() != self.p - 1 {
            return Err(Error::arg(format!("inconsistent scenario '{}'", self.name)));
        }
        match self.noise {
            Noise::Snr(v) | Noise::Sigma(v) if v > 0.0 && v.is_finite() => Ok(()),
            _ => Err(Error::arg("noise level must be positive")),
        }
    }

    /// Noise-free response for the given compositions.
    pub fn signal(&self, x: &CompositionMatrix) -> Vec<f64> {
        let b = Array1::from(self.beta.clone());
        match self.response {
            ResponseModel::RelativeShift => x.values().dot(&b).to_vec(),
            ResponseModel::LogContrast => x.values().mapv(f64::ln).dot(&b).to_vec(),
        }
    }

    /// Draw compositions only, for `n` samples, from the given RNG stream.
    pub fn sample_compositions(&self, n: usize, stream: u64) -> Result<CompositionMatrix> {
        let mut rng = SimRng::with_stream(self.seed, stream);
        let x = sample_logistic_normal(n, self.p, &self.latent_mean, self.latent(), &mut rng)?;
        let rows = (1..=n).map(|i| format!("s{i}")).collect();
        CompositionMatrix::with_labels(x.values().clone(), rows, self.taxa())
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let n = self.n_train + self.n_test;
        let x_true = self.sample_compositions(n, STREAM_X)?;
        let signal = self.signal(&x_true);
        let mut rng = SimRng::with_stream(self.seed, STREAM_NOISE);
        let (y, sigma) = match self.noise {
            Noise::Snr(snr) => add_noise_snr(&signal, snr, &mut rng)?,
            Noise::Sigma(s) => (signal.iter().map(|v| v + s * rng.normal()).collect(), s),
        };
        let (x_obs, zero_fraction) = match self.truncation_cut {
            Some(cut) => truncate_renormalize(&x_true, cut)?,
            None => (x_true.clone(), x_true.zero_fraction()),
        };
        Ok(Dataset { scenario: self.clone(), tree: self.tree()?, x_true, x_obs, y, signal, sigma, zero_fraction })
    }
}

/// Noise standard deviation that gives `snr` on a large reference sample of
/// the scenario's compositions.
pub fn calibrate_sigma(scenario: &Scenario, snr: f64, n_ref: usize) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::arg("snr must be positive"));
    }
    let x = scenario.sample_compositions(n_ref, u64::MAX)?;
    Ok((sample_variance(&scenario.signal(&x)) / snr).sqrt())
}

/// Tree over 100 leaves: ten parents over ten consecutive leaves each,
/// grouped as (L1,L2), (L3,L4), (L5..L8), (L9,L10), and those pairwise under
/// two children of the root.
pub fn study2_newick() -> String {
    let level4: Vec<String> = (0..10)
        .map(|g| {
            let leaves: Vec<String> = (1..=10).map(|j| format!("t{}", 10 * g + j)).collect();
            format!("({})L{}", leaves.join(","), g + 1)
        })
        .collect();
    let a = format!("({},{})A", level4[0], level4[1]);
    let b = format!("({},{})B", level4[2], level4[3]);
    let c = format!("({})C", level4[4..8].join(","));
    let d = format!("({},{})D", level4[8], level4[9]);
    format!("(({a},{b})E,({c},{d})F)root;")
}

/// One generated replicate.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenario: Scenario,
    pub tree: Option<Arc<TaxTree>>,
    pub x_true: CompositionMatrix,
    pub x_obs: CompositionMatrix,
    pub y: Vec<f64>,
    pub signal: Vec<f64>,
    pub sigma: f64,
    pub zero_fraction: f64,
}

/// Ground truth written next to each replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Scenario,
    pub sigma: f64,
    pub zero_fraction: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Dataset {
    pub fn train_rows(&self) -> Vec<usize> {
        (0..self.scenario.n_train).collect()
    }

    pub fn test_rows(&self) -> Vec<usize> {
        (self.scenario.n_train..self.scenario.n_train + self.scenario.n_test).collect()
    }

    pub fn train_x(&self) -> CompositionMatrix {
        self.x_obs.select_rows(&self.train_rows())
    }

    pub fn test_x(&self) -> CompositionMatrix {
        self.x_obs.select_rows(&self.test_rows())
    }

    pub fn train_y(&self) -> Vec<f64> {
        self.scenario_slice(&self.y, true)
    }

    pub fn test_y(&self) -> Vec<f64> {
        self.scenario_slice(&self.y, false)
    }

    fn scenario_slice(&self, v: &[f64], train: bool) -> Vec<f64> {
        let n_train = self.scenario.n_train;
        if train {
            v[..n_train].to_vec()
        } else {
            v[n_train..].to_vec()
        }
    }

    pub fn truth(&self) -> Truth {
        let ids = self.x_true.row_labels();
        let n_train = self.scenario.n_train;
        Truth {
            scenario: self.scenario.clone(),
            sigma: self.sigma,
            zero_fraction: self.zero_fraction,
            train_ids: ids[..n_train].to_vec(),
            test_ids: ids[n_train..].to_vec(),
        }
    }

    /// Write `x_true.csv`, `x_observed.csv`, `y.csv`, `truth.json` and, for
    /// tree designs, `tree.nwk` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        Table::from(&self.x_true).write_csv(dir.join("x_true.csv"), "sample")?;
        Table::from(&self.x_obs).write_csv(dir.join("x_observed.csv"), "sample")?;
        let y = Table {
            row_labels: self.x_true.row_labels().to_vec(),
            col_labels: vec!["y".into()],
            values: Array2::from_shape_vec((self.y.len(), 1), self.y.clone()).expect("column shape"),
        };
        y.write_csv(dir.join("y.csv"), "sample")?;
        std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&self.truth())?)?;
        if let Some(t) = &self.tree {
            std::fs::write(dir.join("tree.nwk"), format!("{}\n", t.to_newick()))?;
        }
        Ok(())
    }
}

pub fn make_study1(seed: u64) -> Result<Dataset> {
    Scenario::study1(seed).generate()
}

pub fn make_study2(seed: u64) -> Result<Dataset> {
    Scenario::study2(seed).generate()
}

pub fn make_supp_logcontrast(seed: u64, snr: f64) -> Result<Dataset> {
    Scenario::logcontrast(seed, snr).generate()
}

pub fn make_supp_smalltree(seed: u64) -> Result<Dataset> {
    Scenario::smalltree(seed).generate()
}
