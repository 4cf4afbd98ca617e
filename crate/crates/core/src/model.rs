//! The relative-shift estimator: fitting, prediction and interpretation.
//!
//! Equi-sparsity fits solve the intercept-free problem on `(C, X)` directly.
//! Tree fits work in the node coefficients `gamma`: the root coefficient is
//! fixed (by default to the response mean) and the remaining coordinates are
//! fitted on the offset response with design `(C, XA)`.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionMatrix, CovariateMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::solver::{self, SmoothedProblem, SolverConfig, SolverReport};
use crate::taxonomy::{coarsest_aggregating_set, AggregatingSet, IndicatorMatrix, TaxTree};

/// Default group-norm threshold below which node coefficients are zeroed
/// when interpreting a tree fit.
pub const DEFAULT_TRUNCATION: f64 = 1e-4;

/// Value of the root node coefficient in tree fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootPolicy {
    Mean,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub solver: SolverConfig,
    pub root: RootPolicy,
    /// Divide each covariate column by its standard deviation before
    /// fitting. Coefficients are reported on the original scale.
    pub standardize_covariates: bool,
    pub truncation_threshold: f64,
    /// Equi-sparsity fits only: sorted coefficients whose gaps are at most
    /// this are reported as one block. Defaults to twice the smoothing
    /// parameter in use.
    pub merge_tol: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            solver: SolverConfig::default(),
            root: RootPolicy::Mean,
            standardize_covariates: false,
            truncation_threshold: DEFAULT_TRUNCATION,
            merge_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub n_iter: usize,
    pub converged: bool,
    pub final_objective: f64,
}

/// Blocks of taxa sharing one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub node_labels: Vec<String>,
    pub blocks: Vec<Vec<String>>,
    /// Leaf indices per block.
    #[serde(skip)]
    pub indices: Vec<Vec<usize>>,
    /// Tree node per block; empty for equi-sparsity fits.
    #[serde(skip)]
    pub nodes: Vec<usize>,
}

impl AggregationReport {
    fn from_set(tree: &TaxTree, set: &AggregatingSet) -> Self {
        AggregationReport {
            node_labels: set.nodes.iter().map(|&u| tree.node_name(u)).collect(),
            blocks: set
                .blocks
                .iter()
                .map(|b| b.iter().map(|&j| tree.node_name(j)).collect())
                .collect(),
            indices: set.blocks.clone(),
            nodes: set.nodes.clone(),
        }
    }

    fn from_blocks(taxa: &[String], blocks: Vec<Vec<usize>>) -> Self {
        AggregationReport {
            node_labels: (1..=blocks.len()).map(|k| format!("block{k}")).collect(),
            blocks: blocks.iter().map(|b| b.iter().map(|&j| taxa[j].clone()).collect()).collect(),
            indices: blocks,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub penalty: PenaltyKind,
    pub lambda: f64,
    pub gamma_root: f64,
    pub beta_c: Vec<f64>,
    pub beta: Vec<f64>,
    /// Non-root node coefficients; empty for equi-sparsity fits.
    pub gamma: Vec<f64>,
    /// Blocks of the truncated (tree) or merged (equi-sparsity) fit.
    pub aggregation: AggregationReport,
    pub truncation_threshold: f64,
    pub standardized_covariates: bool,
    /// Smoothing parameter actually used.
    pub mu: f64,
    pub solver: SolverSummary,
    /// Solution in solver coordinates, for warm starts.
    #[serde(skip)]
    pub coef: Vec<f64>,
    #[serde(skip)]
    pub report: Option<SolverReport>,
    #[serde(skip)]
    pub taxa: Vec<String>,
    #[serde(skip)]
    spec: Option<PenaltySpec>,
}

impl FitResult {
    pub fn tree(&self) -> Option<&Arc<TaxTree>> {
        self.spec.as_ref().and_then(|s| s.tree())
    }

    pub fn spec(&self) -> Option<&PenaltySpec> {
        self.spec.as_ref()
    }

    /// Fitted values on the given data.
    pub fn fitted(&self, x: &CompositionMatrix, c: &CovariateMatrix) -> Result<Vec<f64>> {
        predict(self, x, c)
    }
}

/// A fitter bound to one data set, reusable along a lambda path.
#[derive(Debug, Clone)]
pub struct PathFitter {
    spec: PenaltySpec,
    indicator: Option<IndicatorMatrix>,
    problem: SmoothedProblem,
    config: FitConfig,
    gamma_root: f64,
    cov_scale: Vec<f64>,
    taxa: Vec<String>,
    null_coef: Vec<f64>,
    lambda_max: f64,
}

impl PathFitter {
    pub fn new(
        x: &CompositionMatrix,
        c: &CovariateMatrix,
        y: &[f64],
        spec: &PenaltySpec,
        config: &FitConfig,
    ) -> Result<PathFitter> {
        let n = x.n_samples();
        if y.len() != n || c.n_samples() != n {
            return Err(Error::Schema(format!(
                "row counts differ: compositions {n}, covariates {}, response {}",
                c.n_samples(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("response must be finite"));
        }
        if !(config.truncation_threshold >= 0.0) {
            return Err(Error::arg("truncation threshold must be nonnegative"));
        }
        let tree = spec.tree().cloned();
        match &tree {
            Some(t) => check_leaf_labels(x, t)?,
            None if spec.dim() != x.n_taxa() => {
                return Err(Error::Schema(format!(
                    "penalty covers {} taxa, composition has {}",
                    spec.dim(),
                    x.n_taxa()
                )))
            }
            None => {}
        }
        let q = c.n_covariates();

        let cov_scale: Vec<f64> = if config.standardize_covariates {
            c.values()
                .axis_iter(Axis(1))
                .map(|col| {
                    let sd = crate::composition::sample_variance(&col.to_vec()).sqrt();
                    if sd > 0.0 && sd.is_finite() {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect()
        } else {
            vec![1.0; q]
        };
        let mut cv = c.values().clone();
        for (mut col, s) in cv.axis_iter_mut(Axis(1)).zip(&cov_scale) {
            col /= *s;
        }
        let c_scaled = CovariateMatrix::new(cv, c.col_labels().to_vec())?;

        let gamma_root = match (&tree, config.root) {
            (None, _) => 0.0,
            (Some(_), RootPolicy::Mean) => y.iter().sum::<f64>() / n as f64,
            (Some(_), RootPolicy::Fixed(v)) => v,
        };
        let response: Vec<f64> = y.iter().map(|v| v - gamma_root).collect();
        let indicator = tree.as_deref().map(IndicatorMatrix::new);

        let mut problem =
            solver::assemble(&c_scaled, x, indicator.as_ref(), &response, spec, 0.0, config.solver.mu_policy)?;
        // smoothing is relative to the response spread, so scaling y scales
        // the smoothed problem's solution exactly
        let mean = response.iter().sum::<f64>() / n as f64;
        let sd = (response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if sd > 0.0 { sd } else { 1.0 };
        problem.set_mu(problem.mu() * y_scale)?;

        let null_coef = null_fit(&problem, q, spec.kind())?;
        let lambda_max = lambda_max_at(&problem, &null_coef, q, spec)?;

        Ok(PathFitter {
            spec: spec.clone(),
            indicator,
            problem,
            config: config.clone(),
            gamma_root,
            cov_scale,
            taxa: x.col_labels().to_vec(),
            null_coef,
            lambda_max,
        })
    }

    /// Smallest lambda at which the penalized block is fully aggregated,
    /// or an upper bound on it.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// The fully aggregated solution in solver coordinates.
    pub fn null_coef(&self) -> &[f64] {
        &self.null_coef
    }

    pub fn problem(&self) -> &SmoothedProblem {
        &self.problem
    }

    pub fn gamma_root(&self) -> f64 {
        self.gamma_root
    }

    /// Fit at `lambda`, starting from `init` (solver coordinates) or from the
    /// fully aggregated solution.
    pub fn fit(&mut self, lambda: f64, init: Option<&[f64]>) -> Result<FitResult> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::arg(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        if lambda == 0.0 && self.spec.kind() == PenaltyKind::EquiSparsity {
            let design = self.problem.design().view();
            let resp = self.problem.response().view();
            if let Some(coef) = solver::solve_ols(design, resp) {
                let obj = self.problem.loss(&coef);
                let summary = SolverSummary { n_iter: 0, converged: true, final_objective: obj };
                return self.build(lambda, coef, summary, None);
            }
        }
        self.problem.set_lambda(lambda)?;
        let start = match init {
            Some(v) => v.to_vec(),
            None => self.null_coef.clone(),
        };
        let report = solver::solve_fista(&self.problem, Some(&start), &self.config.solver)?;
        let summary = SolverSummary {
            n_iter: report.n_iter,
            converged: report.converged,
            final_objective: report.final_objective,
        };
        let coef = report.coef.clone();
        self.build(lambda, coef, summary, Some(report))
    }

    fn build(
        &self,
        lambda: f64,
        coef: Vec<f64>,
        solver: SolverSummary,
        report: Option<SolverReport>,
    ) -> Result<FitResult> {
        let q = self.cov_scale.len();
        let beta_c: Vec<f64> = coef[..q].iter().zip(&self.cov_scale).map(|(b, s)| b / s).collect();
        let penalized = &coef[q..];
        let mu = self.problem.mu();
        let mut fit = FitResult {
            penalty: self.spec.kind(),
            lambda,
            gamma_root: self.gamma_root,
            beta_c,
            beta: Vec::new(),
            gamma: Vec::new(),
            aggregation: AggregationReport::from_blocks(&[], Vec::new()),
            truncation_threshold: self.config.truncation_threshold,
            standardized_covariates: self.config.standardize_covariates,
            mu,
            solver,
            coef: coef.clone(),
            report,
            taxa: self.taxa.clone(),
            spec: Some(self.spec.clone()),
        };
        match &self.indicator {
            Some(a) => {
                fit.gamma = penalized.to_vec();
                fit.beta = beta_from_gamma(a, &fit.gamma, self.gamma_root);
                let truncated = truncate_and_aggregate(&fit, self.config.truncation_threshold)?;
                fit.aggregation = truncated.aggregation;
            }
            None => {
                fit.beta = penalized.to_vec();
                let tol = self.config.merge_tol.unwrap_or(2.0 * mu);
                fit.aggregation = AggregationReport::from_blocks(&self.taxa, merge_equal(&fit.beta, tol));
            }
        }
        Ok(fit)
    }
}

fn check_leaf_labels(x: &CompositionMatrix, tree: &TaxTree) -> Result<()> {
    let leaves = tree.leaf_labels();
    let cols: Vec<&str> = x.col_labels().iter().map(String::as_str).collect();
    if leaves == cols {
        return Ok(());
    }
    let missing: Vec<&str> = leaves.iter().copied().filter(|l| !cols.contains(l)).collect();
    let extra: Vec<&str> = cols.iter().copied().filter(|l| !leaves.contains(l)).collect();
    if missing.is_empty() && extra.is_empty() {
        return Err(Error::Schema(
            "composition columns are not in tree leaf order; reorder them to match the tree".into(),
        ));
    }
    let mut msg = String::from("taxon labels do not match tree leaves");
    if !extra.is_empty() {
        msg.push_str(&format!("; not in tree: {}", extra.join(", ")));
    }
    if !missing.is_empty() {
        msg.push_str(&format!("; missing from data: {}", missing.join(", ")));
    }
    Err(Error::Schema(msg))
}

/// Solution with every penalized coefficient fused (equi-sparsity) or every
/// node coefficient zero (tree kinds).
fn null_fit(problem: &SmoothedProblem, q: usize, kind: PenaltyKind) -> Result<Vec<f64>> {
    let design = problem.design();
    let d = design.ncols();
    let n = design.nrows();
    let resp = problem.response().view();
    let mut coef = vec![0.0; d];
    match kind {
        PenaltyKind::EquiSparsity => {
            // rows of X sum to one, so fused coefficients act as an intercept
            let mut small = Array2::<f64>::ones((n, q + 1));
            small.slice_mut(ndarray::s![.., ..q]).assign(&design.slice(ndarray::s![.., ..q]));
            let b = linalg::least_squares(small.view(), resp)
                .map_err(|_| Error::arg("covariates are collinear with the constant"))?;
            coef[..q].copy_from_slice(&b.as_slice().unwrap()[..q]);
            coef[q..].iter_mut().for_each(|v| *v = b[q]);
        }
        _ => {
            if q > 0 {
                let small = design.slice(ndarray::s![.., ..q]);
                let b = linalg::least_squares(small, resp).map_err(|_| Error::arg("covariates are collinear"))?;
                coef[..q].copy_from_slice(b.as_slice().unwrap());
            }
        }
    }
    Ok(coef)
}

fn lambda_max_at(problem: &SmoothedProblem, null: &[f64], q: usize, spec: &PenaltySpec) -> Result<f64> {
    let n = problem.n_samples() as f64;
    let design = problem.design();
    let resid = problem.response() - &design.dot(&ArrayView1::from(null));
    // v = -grad of the loss at the null fit
    let v_full = design.t().dot(&resid) / n;
    let v = &v_full.as_slice().unwrap()[q..];
    let out = match spec.kind() {
        PenaltyKind::EquiSparsity => {
            let p = v.len();
            let mut sorted = v.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let mut best = 0.0f64;
            let mut prefix = 0.0;
            for k in 1..p {
                prefix += sorted[k - 1];
                best = best.max(prefix.abs() / (k * (p - k)) as f64);
            }
            let w_min = (0..p)
                .flat_map(|j| ((j + 1)..p).map(move |k| (j, k)))
                .map(|(j, k)| spec.pair_weight(j, k))
                .fold(f64::INFINITY, f64::min);
            if best == 0.0 {
                0.0
            } else if w_min > 0.0 {
                best / w_min
            } else {
                return Err(Error::arg("a zero pair weight leaves lambda_max unbounded"));
            }
        }
        PenaltyKind::NodeL1 | PenaltyKind::ChildL2 => group_certificate(spec, v, |_, g| g.to_vec())?,
        PenaltyKind::DescL2 => {
            let tree = spec.tree().expect("tree penalty");
            let child = group_certificate(spec, v, |u, _| tree.children(u).to_vec())?;
            let root_norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let w_root = spec.node_weight(tree.root());
            let root = if root_norm == 0.0 { 0.0 } else if w_root > 0.0 { root_norm / w_root } else { f64::INFINITY };
            child.min(root)
        }
    };
    if !out.is_finite() {
        return Err(Error::arg("zero node weights leave lambda_max unbounded"));
    }
    Ok(out)
}

/// `max_u ||v_{S(u)}|| / w_u` over the penalty groups.
fn group_certificate<F>(spec: &PenaltySpec, v: &[f64], coords: F) -> Result<f64>
where
    F: Fn(usize, &[usize]) -> Vec<usize>,
{
    let mut best = 0.0f64;
    for (u, g) in spec.groups() {
        let norm = coords(*u, g).iter().map(|&k| v[k] * v[k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let w = spec.node_weight(*u);
        best = best.max(if w > 0.0 { norm / w } else { f64::INFINITY });
    }
    Ok(best)
}

fn beta_from_gamma(a: &IndicatorMatrix, gamma: &[f64], root: f64) -> Vec<f64> {
    a.apply(ArrayView1::from(gamma)).iter().map(|b| b + root).collect()
}

/// Fit at one lambda. Tree penalties carry their tree inside `spec`, and the
/// composition columns must be in tree leaf order.
pub fn fit(
    x: &CompositionMatrix,
    c: &CovariateMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    lambda: f64,
    config: &FitConfig,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::arg(format!("lambda must be nonnegative, got {lambda}")));
    }
    PathFitter::new(x, c, y, spec, config)?.fit(lambda, None)
}

/// `C_new beta_c + X_new beta`.
pub fn predict(fit: &FitResult, x_new: &CompositionMatrix, c_new: &CovariateMatrix) -> Result<Vec<f64>> {
    if x_new.n_taxa() != fit.beta.len() {
        return Err(Error::Schema(format!(
            "model has {} taxa, new data has {}",
            fit.beta.len(),
            x_new.n_taxa()
        )));
    }
    if !fit.taxa.is_empty() && fit.taxa.as_slice() != x_new.col_labels() {
        return Err(Error::Schema("new composition columns differ from the training taxa".into()));
    }
    if c_new.n_covariates() != fit.beta_c.len() || c_new.n_samples() != x_new.n_samples() {
        return Err(Error::Schema(format!(
            "model has {} covariates, new data has {} columns over {} rows (compositions have {})",
            fit.beta_c.len(),
            c_new.n_covariates(),
            c_new.n_samples(),
            x_new.n_samples()
        )));
    }
    let mut y = x_new.values().dot(&Array1::from(fit.beta.clone()));
    if !fit.beta_c.is_empty() {
        y += &c_new.values().dot(&Array1::from(fit.beta_c.clone()));
    }
    Ok(y.to_vec())
}

/// Zero every penalty group of `gamma` whose norm is below `threshold`,
/// then recompute `beta` and the coarsest aggregating set.
pub fn truncate_and_aggregate(fit: &FitResult, threshold: f64) -> Result<FitResult> {
    if !(threshold >= 0.0) {
        return Err(Error::arg("threshold must be nonnegative"));
    }
    let spec = fit.spec.as_ref().filter(|s| s.kind().is_tree()).ok_or_else(|| {
        Error::arg("truncation applies to tree fits only")
    })?;
    let tree = spec.tree().expect("tree penalty");
    let norms = spec.group_norms(&fit.gamma)?;
    let mut gamma = fit.gamma.clone();
    for ((_, g), norm) in spec.groups().iter().zip(norms) {
        if norm < threshold {
            for &k in g {
                gamma[k] = 0.0;
            }
        }
    }
    let a = IndicatorMatrix::new(tree);
    let beta = beta_from_gamma(&a, &gamma, fit.gamma_root);
    let scale = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let set = coarsest_aggregating_set(tree, &beta, 1e-12 * (1.0 + scale));
    let mut out = fit.clone();
    out.gamma = gamma;
    out.beta = beta;
    out.truncation_threshold = threshold;
    out.aggregation = AggregationReport::from_set(tree, &set);
    Ok(out)
}

/// Partition coefficient indices into blocks whose sorted values are linked
/// by gaps of at most `tol`. Blocks are ordered by their smallest index.
pub fn merge_equal(beta: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[a].total_cmp(&beta[b]).then(a.cmp(&b)));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (i, &j) in order.iter().enumerate() {
        if i > 0 && beta[j] - beta[order[i - 1]] <= tol {
            blocks.last_mut().unwrap().push(j);
        } else {
            blocks.push(vec![j]);
        }
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks.sort_by_key(|b| b[0]);
    blocks
}

/// Mean squared prediction error.
pub fn mspe(y_true: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y_true.len() != y_hat.len() {
        return Err(Error::arg(format!("lengths differ: {} vs {}", y_true.len(), y_hat.len())));
    }
    if y_true.is_empty() {
        return Err(Error::arg("empty vectors"));
    }
    let s: f64 = y_true.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / y_true.len() as f64)
}
