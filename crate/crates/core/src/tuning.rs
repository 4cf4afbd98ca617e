//! Lambda grids and cross-validation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::composition::{sample_variance, CompositionMatrix, CovariateMatrix};
use crate::error::{Error, Result};
use crate::model::{mspe, predict, FitConfig, FitResult, PathFitter};
use crate::par;
use crate::penalty::PenaltySpec;
use crate::rng::SimRng;

pub const DEFAULT_N_LAMBDA: usize = 50;
pub const DEFAULT_RATIO: f64 = 1e-3;

/// Log-spaced descending grid from `lambda_max` to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, ratio: f64) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::arg("a lambda grid needs at least two values"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("grid ratio must lie in (0, 1), got {ratio}")));
    }
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::arg("response is already fitted by the fully aggregated model; no lambda grid exists"));
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    let step = (hi - lo) / (n_lambda - 1) as f64;
    let mut grid: Vec<f64> = (0..n_lambda).map(|i| (hi - step * i as f64).exp()).collect();
    grid[0] = lambda_max;
    Ok(grid)
}

/// Upper bound on the smallest fully aggregating lambda for this data.
pub fn lambda_max(
    x: &CompositionMatrix,
    c: &CovariateMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    config: &FitConfig,
) -> Result<f64> {
    Ok(PathFitter::new(x, c, y, spec, config)?.lambda_max())
}

/// Default grid for a data set.
pub fn lambda_grid_for(
    x: &CompositionMatrix,
    c: &CovariateMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    config: &FitConfig,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    lambda_grid(lambda_max(x, c, y, spec, config)?, n_lambda, ratio)
}

/// Folds and grid for one cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub lambda_grid: Vec<f64>,
    /// Fold index of each sample.
    pub folds: Vec<usize>,
    pub seed: u64,
    /// Pick the largest lambda within one standard error of the minimum.
    pub one_se: bool,
}

impl CvPlan {
    pub fn new(n: usize, k: usize, lambda_grid: Vec<f64>, seed: u64) -> Result<CvPlan> {
        if lambda_grid.is_empty() {
            return Err(Error::arg("empty lambda grid"));
        }
        if lambda_grid.windows(2).any(|w| !(w[0] > w[1])) || lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::arg("lambda grid must be nonnegative and strictly descending"));
        }
        Ok(CvPlan { k, folds: fold_assignment(n, k, seed)?, lambda_grid, seed, one_se: false })
    }

    pub fn with_one_se(mut self, on: bool) -> CvPlan {
        self.one_se = on;
        self
    }

    pub fn n_samples(&self) -> usize {
        self.folds.len()
    }
}

/// Shuffle sample indices and deal them round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::arg("cross-validation needs at least two folds"));
    }
    if k > n {
        return Err(Error::arg(format!("{k} folds requested for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SimRng::new(seed).shuffle(&mut order);
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub lambda_grid: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_best: f64,
    pub seed: u64,
    pub k: usize,
    /// Validation MSPE per fold and lambda.
    #[serde(skip)]
    pub fold_mspe: Vec<Vec<f64>>,
    #[serde(skip)]
    pub refit: Option<FitResult>,
}

impl CvReport {
    pub fn best_index(&self) -> usize {
        self.lambda_grid.iter().position(|l| *l == self.lambda_best).unwrap_or(0)
    }
}

/// Fit a descending lambda path on `fitter`, warm-starting each fit from the
/// previous one when `warm` is set.
pub fn fit_path(fitter: &mut PathFitter, grid: &[f64], warm: bool) -> Result<Vec<FitResult>> {
    let mut out: Vec<FitResult> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let init = if warm { out.last().map(|f| f.coef.clone()) } else { None };
        out.push(fitter.fit(lambda, init.as_deref())?);
    }
    Ok(out)
}

/// K-fold cross-validation over the plan's grid, then a refit on all data at
/// the selected lambda.
pub fn cross_validate(
    plan: &CvPlan,
    x: &CompositionMatrix,
    c: &CovariateMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    config: &FitConfig,
) -> Result<CvReport> {
    let n = x.n_samples();
    if plan.n_samples() != n || y.len() != n {
        return Err(Error::Schema(format!("plan covers {} samples, data has {n}", plan.n_samples())));
    }
    let warm = config.solver.warm_start;
    let k = plan.k;
    let per_fold: Vec<Result<Vec<f64>>> = par::map_indexed(k, |f| {
        let train: Vec<usize> = (0..n).filter(|&i| plan.folds[i] != f).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| plan.folds[i] == f).collect();
        let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let y_va: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
        if valid.len() > 1 && sample_variance(&y_va) == 0.0 {
            warn!("fold {f} has a constant validation response");
        }
        let x_tr = x.select_rows(&train);
        let c_tr = c.select_rows(&train);
        let x_va = x.select_rows(&valid);
        let c_va = c.select_rows(&valid);
        let mut fitter = PathFitter::new(&x_tr, &c_tr, &y_tr, spec, config)?;
        let fits = fit_path(&mut fitter, &plan.lambda_grid, warm)?;
        fits.iter().map(|fit| mspe(&y_va, &predict(fit, &x_va, &c_va)?)).collect()
    });
    let fold_mspe: Vec<Vec<f64>> = per_fold.into_iter().collect::<Result<_>>()?;

    let m = plan.lambda_grid.len();
    let kf = k as f64;
    let mut cv_mean = vec![0.0; m];
    let mut cv_se = vec![0.0; m];
    for l in 0..m {
        let vals: Vec<f64> = fold_mspe.iter().map(|f| f[l]).collect();
        cv_mean[l] = vals.iter().sum::<f64>() / kf;
        cv_se[l] = (sample_variance(&vals) / kf).sqrt();
    }
    // strict comparison keeps the earliest (largest) lambda on ties
    let mut best = 0;
    for l in 1..m {
        if cv_mean[l] < cv_mean[best] {
            best = l;
        }
    }
    if plan.one_se {
        let limit = cv_mean[best] + cv_se[best];
        best = (0..=best).find(|&l| cv_mean[l] <= limit).unwrap_or(best);
    }
    let lambda_best = plan.lambda_grid[best];

    let mut fitter = PathFitter::new(x, c, y, spec, config)?;
    let refit = if warm {
        fit_path(&mut fitter, &plan.lambda_grid[..=best], true)?.pop()
    } else {
        Some(fitter.fit(lambda_best, None)?)
    };

    Ok(CvReport {
        lambda_grid: plan.lambda_grid.clone(),
        cv_mean,
        cv_se,
        lambda_best,
        seed: plan.seed,
        k,
        fold_mspe,
        refit,
    })
}

/// Leave-one-out prediction squared errors, each using an inner
/// `inner_k`-fold cross-validation on the remaining samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoocvReport {
    pub pse: Vec<f64>,
    pub lambda_selected: Vec<f64>,
    pub median: f64,
    /// Median absolute deviation from the median.
    pub mad: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn loocv_pse(
    x: &CompositionMatrix,
    c: &CovariateMatrix,
    y: &[f64],
    spec: &PenaltySpec,
    config: &FitConfig,
    n_lambda: usize,
    ratio: f64,
    inner_k: usize,
    seed: u64,
) -> Result<LoocvReport> {
    let n = x.n_samples();
    if n < inner_k + 1 {
        return Err(Error::arg("too few samples for nested cross-validation"));
    }
    let rows: Vec<Result<(f64, f64)>> = (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x_tr = x.select_rows(&keep);
            let c_tr = c.select_rows(&keep);
            let y_tr: Vec<f64> = keep.iter().map(|&j| y[j]).collect();
            let grid = lambda_grid_for(&x_tr, &c_tr, &y_tr, spec, config, n_lambda, ratio)?;
            let plan = CvPlan::new(n - 1, inner_k, grid, seed.wrapping_add(i as u64))?;
            let cv = cross_validate(&plan, &x_tr, &c_tr, &y_tr, spec, config)?;
            let fit = cv.refit.expect("refit present");
            let pred = predict(&fit, &x.select_rows(&[i]), &c.select_rows(&[i]))?;
            Ok(((y[i] - pred[0]).powi(2), cv.lambda_best))
        })
        .collect();
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let pse: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let med = median(&pse);
    let dev: Vec<f64> = pse.iter().map(|v| (v - med).abs()).collect();
    Ok(LoocvReport { lambda_selected: rows.iter().map(|r| r.1).collect(), median: med, mad: median(&dev), pse })
}

/// Median of a nonempty slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0, 5, 1e-2).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 2.0);
        assert!((g[4] - 0.02).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!(lambda_grid(2.0, 5, 1.0).is_err());
        assert!(lambda_grid(2.0, 1, 0.5).is_err());
        assert!(lambda_grid(0.0, 5, 0.5).is_err());
    }

    #[test]
    fn folds_partition() {
        let f = fold_assignment(23, 5, 9).unwrap();
        let mut counts = [0; 5];
        for &v in &f {
            counts[v] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 9).unwrap());
        assert!(fold_assignment(10, 1, 0).is_err());
        assert_eq!(fold_assignment(4, 4, 3).unwrap().iter().copied().collect::<std::collections::BTreeSet<_>>().len(), 4);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
