//! Smoothing proximal gradient for
//! `min (2n)^-1 ||y - X b||^2 + lambda * Omega(b)`.
//!
//! `Omega` is replaced by its Nesterov-smoothed surrogate `f_mu`, and the
//! resulting smooth objective `h` is minimised by FISTA with the fixed step
//! `1/L`, `L = sigma_max(X^T X)/n + lambda ||D||^2 / mu`.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionMatrix, CovariateMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::penalty::{compile_dual, DualForm, PenaltySpec};
use crate::taxonomy::IndicatorMatrix;

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuPolicy {
    Fixed(f64),
    /// Smoothing error of `f_mu` at most `eps / 2`.
    Accuracy(f64),
}

impl Default for MuPolicy {
    fn default() -> Self {
        MuPolicy::Fixed(1e-4)
    }
}

pub fn mu_from_policy(dual: &DualForm, policy: MuPolicy) -> Result<f64> {
    match policy {
        MuPolicy::Fixed(mu) if mu > 0.0 && mu.is_finite() => Ok(mu),
        MuPolicy::Accuracy(eps) if eps > 0.0 && eps.is_finite() => {
            Ok(eps / (2.0 * dual.smooth_radius().max(0.5)))
        }
        other => Err(Error::arg(format!("invalid smoothing policy {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop once the relative objective change stays below this for
    /// [`STALL_WINDOW`] consecutive iterations.
    pub tol: f64,
    pub mu_policy: MuPolicy,
    /// Reuse the previous solution along a lambda path.
    pub warm_start: bool,
    /// Estimate `L` by backtracking instead of using the analytic constant.
    pub backtracking: bool,
    /// Reset momentum whenever the objective increases.
    pub restart: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 20_000,
            tol: 1e-8,
            mu_policy: MuPolicy::default(),
            warm_start: true,
            backtracking: false,
            restart: true,
        }
    }
}

pub const STALL_WINDOW: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub coef: Vec<f64>,
    /// `h` at each iterate.
    pub objective_trace: Vec<f64>,
    /// Running minimum of `objective_trace`.
    pub best_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub final_gap: f64,
    pub final_objective: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Assembled design, response, penalty and smoothing constants.
#[derive(Debug, Clone)]
pub struct SmoothedProblem {
    design: Array2<f64>,
    response: Array1<f64>,
    dual: DualForm,
    lambda: f64,
    mu: f64,
    design_lipschitz: f64,
    dual_norm: f64,
}

impl SmoothedProblem {
    /// `dual` must already carry the offset for unpenalized leading columns.
    pub fn new(design: Array2<f64>, response: Array1<f64>, dual: DualForm, lambda: f64, mu: f64) -> Result<Self> {
        let (n, d) = design.dim();
        if n == 0 || response.len() != n {
            return Err(Error::arg(format!("response has {} entries for {n} design rows", response.len())));
        }
        if dual.n_cols() != d {
            return Err(Error::arg(format!("penalty acts on {} columns, design has {d}", dual.n_cols())));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::arg("lambda must be finite and nonnegative"));
        }
        if !(mu > 0.0) {
            return Err(Error::arg("mu must be positive"));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("design and response must be finite"));
        }
        let design_lipschitz = linalg::gram_top_eigenvalue(design.view()) / n as f64;
        if !(design_lipschitz > 0.0) {
            return Err(Error::arg("design has rank zero"));
        }
        let dual_norm = dual.spectral_norm();
        Ok(SmoothedProblem { design, response, dual, lambda, mu, design_lipschitz, dual_norm })
    }

    pub fn design(&self) -> &Array2<f64> {
        &self.design
    }

    pub fn response(&self) -> &Array1<f64> {
        &self.response
    }

    pub fn dual(&self) -> &DualForm {
        &self.dual
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::arg("lambda must be finite and nonnegative"));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::arg("mu must be positive"));
        }
        self.mu = mu;
        Ok(())
    }

    /// `sigma_max(X^T X) / n`.
    pub fn design_lipschitz(&self) -> f64 {
        self.design_lipschitz
    }

    /// `||D||`.
    pub fn dual_norm(&self) -> f64 {
        self.dual_norm
    }

    pub fn lipschitz(&self) -> f64 {
        self.design_lipschitz + self.lambda * self.dual_norm * self.dual_norm / self.mu
    }

    pub fn loss(&self, coef: &[f64]) -> f64 {
        let r = &self.response - &self.design.dot(&ArrayView1::from(coef));
        r.dot(&r) / (2.0 * self.n_samples() as f64)
    }

    /// Smoothed objective `h_mu`.
    pub fn objective(&self, coef: &[f64]) -> f64 {
        let mut alpha = vec![0.0; self.dual.n_rows()];
        let dv = self.dual.apply(coef);
        self.loss(coef) + self.lambda * self.dual.smooth_from_dv(&dv, self.mu, &mut alpha)
    }

    /// Unsmoothed objective with the exact penalty.
    pub fn exact_objective(&self, coef: &[f64]) -> f64 {
        self.loss(coef) + self.lambda * self.dual.dual_norm_value(coef)
    }

    pub fn gradient(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.n_samples() as f64;
        let r = self.design.dot(&ArrayView1::from(coef)) - &self.response;
        let mut g = self.design.t().dot(&r) / n;
        if self.lambda > 0.0 {
            let pen = self.dual.smoothed_gradient(coef, self.mu).expect("mu validated at construction");
            for (a, b) in g.iter_mut().zip(pen) {
                *a += self.lambda * b;
            }
        }
        g.to_vec()
    }
}

/// Stack covariates and compositions (times `A` for tree penalties) into one
/// design and compile the penalty with zero columns for the covariates.
pub fn assemble(
    covariates: &CovariateMatrix,
    x: &CompositionMatrix,
    indicator: Option<&IndicatorMatrix>,
    y: &[f64],
    spec: &PenaltySpec,
    lambda: f64,
    mu_policy: MuPolicy,
) -> Result<SmoothedProblem> {
    let n = x.n_samples();
    if y.is_empty() {
        return Err(Error::arg("empty response"));
    }
    if y.len() != n || covariates.n_samples() != n {
        return Err(Error::Schema(format!(
            "row counts differ: compositions {n}, covariates {}, response {}",
            covariates.n_samples(),
            y.len()
        )));
    }
    let penalized = match (spec.kind().is_tree(), indicator) {
        (true, Some(a)) => {
            if a.n_leaves() != x.n_taxa() {
                return Err(Error::Schema("indicator matrix rows differ from composition columns".into()));
            }
            x.values().dot(a.entries())
        }
        (true, None) => return Err(Error::arg("tree penalties need the indicator matrix")),
        (false, _) => x.values().clone(),
    };
    if penalized.ncols() != spec.dim() {
        return Err(Error::Schema(format!(
            "penalty expects {} coefficients, design provides {}",
            spec.dim(),
            penalized.ncols()
        )));
    }
    let design = ndarray::concatenate(ndarray::Axis(1), &[covariates.values().view(), penalized.view()])
        .map_err(|e| Error::Schema(e.to_string()))?;
    let dual = compile_dual(spec).with_offset(covariates.n_covariates());
    let mu = mu_from_policy(&dual, mu_policy)?;
    SmoothedProblem::new(design, Array1::from(y.to_vec()), dual, lambda, mu)
}

/// FISTA on the smoothed problem.
///
/// Design products are carried along the momentum recursion so each
/// iteration costs one product with `X` and one with `X^T`.
pub fn solve_fista(prob: &SmoothedProblem, init: Option<&[f64]>, cfg: &SolverConfig) -> Result<SolverReport> {
    if cfg.max_iter == 0 {
        return Err(Error::arg("max_iter must be at least 1"));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::arg("tol must be positive"));
    }
    let start = Instant::now();
    let d = prob.dim();
    let n = prob.n_samples();
    let nf = n as f64;
    let lambda = prob.lambda;
    let mu = prob.mu;
    let design = prob.design.view();
    let resp = prob.response.as_slice().expect("contiguous response");
    let mut scratch = prob.dual.scratch();

    let mut x = match init {
        Some(v) if v.len() == d => v.to_vec(),
        Some(v) => return Err(Error::arg(format!("initial point has length {}, expected {d}", v.len()))),
        None => vec![0.0; d],
    };
    let loss_of = |xb: &[f64]| -> f64 { xb.iter().zip(resp).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / (2.0 * nf) };

    let mut xb = matvec(design, &x);
    let mut h = loss_of(&xb);
    if lambda > 0.0 {
        h += lambda * prob.dual.smooth_eval(&x, mu, None, &mut scratch);
    }
    if !h.is_finite() {
        return Err(Error::Numerical { iteration: 0, message: "objective is not finite at the start".into() });
    }
    let mut x_prev = x.clone();
    let mut xb_prev = xb.clone();
    let mut best = h;
    let mut best_x = x.clone();
    let mut trace = Vec::new();
    let mut best_trace = Vec::new();

    let l_max = prob.lipschitz();
    let mut step_l = if cfg.backtracking { prob.design_lipschitz.min(l_max) } else { l_max };
    let mut t = 1.0f64;
    let mut theta = 0.0f64;
    let mut stall = 0usize;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut iters = 0usize;

    let mut y = vec![0.0; d];
    let mut yb = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut grad = vec![0.0; d];
    let mut pen_grad = vec![0.0; d];
    let mut x_new = vec![0.0; d];
    let mut xb_new = vec![0.0; n];

    for k in 1..=cfg.max_iter {
        iters = k;
        for i in 0..d {
            y[i] = x[i] + theta * (x[i] - x_prev[i]);
        }
        for i in 0..n {
            yb[i] = xb[i] + theta * (xb[i] - xb_prev[i]);
            resid[i] = (yb[i] - resp[i]) / nf;
        }
        matvec_t_into(design, &resid, &mut grad);
        let f_y = if lambda > 0.0 {
            let f = prob.dual.smooth_eval(&y, mu, Some(&mut pen_grad), &mut scratch);
            for i in 0..d {
                grad[i] += lambda * pen_grad[i];
            }
            f
        } else {
            0.0
        };

        let h_new = loop {
            for i in 0..d {
                x_new[i] = y[i] - grad[i] / step_l;
            }
            matvec_into(design, &x_new, &mut xb_new);
            let mut h_new = loss_of(&xb_new);
            if lambda > 0.0 {
                h_new += lambda * prob.dual.smooth_eval(&x_new, mu, None, &mut scratch);
            }
            if !cfg.backtracking || step_l >= l_max {
                break h_new;
            }
            // sufficient decrease against the quadratic model at y
            let h_y = loss_of(&yb) + lambda * f_y;
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..d {
                let dlt = x_new[i] - y[i];
                lin += grad[i] * dlt;
                sq += dlt * dlt;
            }
            if h_new <= h_y + lin + 0.5 * step_l * sq + 1e-12 * h_y.abs() {
                break h_new;
            }
            step_l = (2.0 * step_l).min(l_max);
        };

        if !h_new.is_finite() {
            return Err(Error::Numerical { iteration: k, message: "objective overflowed".into() });
        }

        let restart = cfg.restart && h_new > h;
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut xb_prev, &mut xb);
        x.copy_from_slice(&x_new);
        xb.copy_from_slice(&xb_new);

        gap = (h_new - h).abs() / h.abs().max(f64::MIN_POSITIVE);
        h = h_new;
        if h < best {
            best = h;
            best_x.copy_from_slice(&x);
        }
        trace.push(h);
        best_trace.push(best);

        if restart {
            t = 1.0;
            theta = 0.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            theta = (t - 1.0) / t_next;
            t = t_next;
        }

        if gap < cfg.tol {
            stall += 1;
            if stall >= STALL_WINDOW {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    Ok(SolverReport {
        coef: best_x,
        objective_trace: trace,
        best_trace,
        n_iter: iters,
        converged,
        final_gap: gap,
        final_objective: best,
        wall_time: start.elapsed(),
    })
}

fn matvec(a: ArrayView2<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    matvec_into(a, v, &mut out);
    out
}

fn matvec_into(a: ArrayView2<f64>, v: &[f64], out: &mut [f64]) {
    ndarray::linalg::general_mat_vec_mul(
        1.0,
        &a,
        &ArrayView1::from(v),
        0.0,
        &mut ndarray::ArrayViewMut1::from(out),
    );
}

fn matvec_t_into(a: ArrayView2<f64>, v: &[f64], out: &mut [f64]) {
    ndarray::linalg::general_mat_vec_mul(
        1.0,
        &a.t(),
        &ArrayView1::from(v),
        0.0,
        &mut ndarray::ArrayViewMut1::from(out),
    );
}

/// Intercept-free least squares through the normal equations, for
/// `lambda = 0` on a full column rank design. `None` when the Gram matrix is
/// singular.
pub fn solve_ols(design: ArrayView2<f64>, response: ArrayView1<f64>) -> Option<Vec<f64>> {
    if design.nrows() < design.ncols() {
        return None;
    }
    linalg::least_squares(design, response).ok().map(|b| b.to_vec())
}

/// Plain subgradient descent on the unsmoothed objective
/// `(2n)^-1 ||y - X b||^2 + lambda * P(b[q..])`. Only meant as an
/// independent reference on small problems.
///
/// Steps are `min(1, s / sqrt(k)) / L` with `L = sigma_max(X^T X / n)`, run
/// once for each scale `s` in [`REFERENCE_SCALES`]; the best iterate over
/// all runs is returned.
pub fn subgradient_reference(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    penalty: &PenaltySpec,
    lambda: f64,
    iterations: usize,
) -> Result<Vec<f64>> {
    let (n, d) = design.dim();
    let q = d.checked_sub(penalty.dim()).ok_or_else(|| Error::arg("penalty larger than design"))?;
    let nf = n as f64;
    let gram = design.t().dot(&design) / nf;
    let b = design.t().dot(&response) / nf;
    let c0 = response.dot(&response) / (2.0 * nf);
    let lg = linalg::power_iteration(d, |v| gram.dot(&v), 1e-10, 10_000).eigenvalue;
    let inv_l = 1.0 / lg.max(f64::MIN_POSITIVE);

    let objective = |x: &Array1<f64>| -> Result<f64> {
        let quad = 0.5 * x.dot(&gram.dot(x)) - b.dot(x) + c0;
        Ok(quad + lambda * penalty.evaluate(&x.as_slice().unwrap()[q..])?)
    };

    let mut best_x = Array1::<f64>::zeros(d);
    let mut best = objective(&best_x)?;
    for scale in REFERENCE_SCALES {
        let mut x = Array1::<f64>::zeros(d);
        for k in 1..=iterations {
            let mut g = gram.dot(&x) - &b;
            if lambda > 0.0 {
                let sg = penalty.subgradient(&x.as_slice().unwrap()[q..])?;
                for (i, s) in sg.into_iter().enumerate() {
                    g[q + i] += lambda * s;
                }
            }
            let step = (scale / (k as f64).sqrt()).min(1.0) * inv_l;
            x.scaled_add(-step, &g);
            let f = objective(&x)?;
            if f < best {
                best = f;
                best_x.assign(&x);
            }
        }
    }
    Ok(best_x.to_vec())
}

/// Step scales tried by [`subgradient_reference`].
pub const REFERENCE_SCALES: [f64; 3] = [1.0, 10.0, 100.0];

/// Projected subgradient for `min P(g)` subject to `A g = target`.
/// Used to approximate the smallest penalty among exact representations.
pub fn subgradient_affine_min(
    penalty: &PenaltySpec,
    a: ArrayView2<f64>,
    target: ArrayView1<f64>,
    init: &[f64],
    iterations: usize,
) -> Result<Vec<f64>> {
    let aat = a.dot(&a.t());
    let chol = linalg::cholesky(aat.view())?;
    let project = |x: &mut Array1<f64>| {
        let r = a.dot(&*x) - &target;
        let z = linalg::cholesky_solve(chol.view(), r.view());
        *x -= &a.t().dot(&z);
    };
    let mut x = Array1::from(init.to_vec());
    project(&mut x);
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mut best = penalty.evaluate(x.as_slice().unwrap())?;
    let mut best_x = x.clone();
    for k in 1..=iterations {
        let g = Array1::from(penalty.subgradient(x.as_slice().unwrap())?);
        let gn = g.dot(&g).sqrt();
        if gn == 0.0 {
            break;
        }
        x.scaled_add(-scale / ((k as f64).sqrt() * gn), &g);
        project(&mut x);
        let f = penalty.evaluate(x.as_slice().unwrap())?;
        if f < best {
            best = f;
            best_x.assign(&x);
        }
    }
    Ok(best_x.to_vec())
}
