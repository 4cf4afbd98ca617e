//! Monte-Carlo checks of the prediction error bound for tree penalties.
//!
//! In this mode the root coefficient is fixed at 0, fits use the true
//! (untruncated) compositions, and the noise level is known. The bound is
//! `||X beta_hat - X beta*||^2 / n  <~  lambda * min { P(g) : A g = beta* }`
//! at `lambda = 2 sqrt(2) sigma sqrt(log |I(T)| / (delta n))`.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::composition::CovariateMatrix;
use crate::error::{Error, Result};
use crate::model::{FitConfig, PathFitter, RootPolicy};
use crate::par;
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::simulate::{Noise, Scenario};
use crate::solver::subgradient_affine_min;
use crate::taxonomy::{coarsest_aggregating_set, IndicatorMatrix, TaxTree};
use crate::tuning::median;

/// Empirical ceiling on `lhs / rhs`.
pub const RATIO_CEILING: f64 = 10.0;

/// Largest tree for which the affine minimisation is attempted.
const AFFINE_MAX_LEAVES: usize = 10;
const AFFINE_ITERS: usize = 20_000;

/// Node coefficients with root 0 that reproduce `beta*` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Non-root node coefficients.
    pub gamma: Vec<f64>,
    pub support: Vec<usize>,
    /// `|B*|`, counting the root's children when `B*` is the root alone.
    pub bstar_size: usize,
    /// `max |beta*|`.
    pub sup_norm: f64,
}

impl Witness {
    pub fn bound(&self) -> f64 {
        self.sup_norm * self.bstar_size as f64
    }
}

pub fn lemma1_witness(tree: &TaxTree, beta_star: &[f64]) -> Result<Witness> {
    if !tree.is_full() {
        return Err(Error::Assumption("every internal node needs at least two children".into()));
    }
    if beta_star.len() != tree.n_leaves() {
        return Err(Error::arg(format!("beta has {} entries for {} leaves", beta_star.len(), tree.n_leaves())));
    }
    if beta_star.iter().any(|b| !b.is_finite()) {
        return Err(Error::arg("beta must be finite"));
    }
    let set = coarsest_aggregating_set(tree, beta_star, 0.0);
    let root = tree.root();
    let support: Vec<usize> = if set.nodes == [root] { tree.children(root).to_vec() } else { set.nodes.clone() };
    let mut gamma = vec![0.0; tree.n_nodes() - 1];
    for &u in &support {
        gamma[u] = beta_star[tree.leaves_of(u)[0]];
    }
    let sup_norm = beta_star.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    Ok(Witness { gamma, bstar_size: support.len(), support, sup_norm })
}

/// Theorem-mode lambda.
pub fn theorem_lambda(sigma: f64, internal_count: usize, delta: f64, n: usize) -> f64 {
    2.0 * 2f64.sqrt() * sigma * ((internal_count as f64).ln() / (delta * n as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub kind: PenaltyKind,
    pub delta: f64,
    pub n: usize,
    pub replicates: usize,
    /// Known noise standard deviation; required.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub replicate: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub penalty: PenaltyKind,
    pub lambda_used: f64,
    pub delta: f64,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub internal_count: usize,
    pub penalty_at_witness: f64,
    /// Smallest penalty found over exact representations.
    pub penalty_min: f64,
    pub witness_bound: f64,
    pub ratio_ceiling: f64,
    pub coverage: f64,
    pub median_lhs: f64,
    pub median_ratio: f64,
    #[serde(skip)]
    pub rows: Vec<BoundRow>,
}

/// Smallest penalty over `{g : A g = beta*}` found from the witness, exact
/// enough for bounding on small trees and the witness value otherwise.
pub fn min_penalty(spec: &PenaltySpec, tree: &TaxTree, witness: &Witness, beta_star: &[f64]) -> Result<f64> {
    let at_witness = spec.evaluate(&witness.gamma)?;
    if tree.n_leaves() > AFFINE_MAX_LEAVES {
        return Ok(at_witness);
    }
    let a = IndicatorMatrix::new(tree);
    let g = subgradient_affine_min(
        spec,
        a.entries().view(),
        ArrayView1::from(beta_star),
        &witness.gamma,
        AFFINE_ITERS,
    )?;
    let resid = a.apply(ArrayView1::from(&g[..])) - Array1::from(beta_star.to_vec());
    let feasible = resid.iter().all(|r| r.abs() < 1e-9);
    let val = spec.evaluate(&g)?;
    Ok(if feasible { val.min(at_witness) } else { at_witness })
}

/// Fit `replicates` draws of `scenario` at the theorem's lambda and compare
/// the in-sample prediction error against `lambda * P`.
pub fn theorem1_check(scenario: &Scenario, cfg: &BoundConfig) -> Result<BoundReport> {
    let sigma = cfg.sigma.ok_or_else(|| Error::arg("the bound check needs a known noise level"))?;
    if !(sigma > 0.0) {
        return Err(Error::arg("sigma must be positive"));
    }
    if !cfg.kind.is_tree() {
        return Err(Error::arg("the bound applies to tree penalties"));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) || cfg.n < 2 || cfg.replicates == 0 {
        return Err(Error::arg("need 0 < delta < 1, n >= 2 and at least one replicate"));
    }
    let tree: Arc<TaxTree> = scenario.tree()?.ok_or_else(|| Error::arg("scenario has no tree"))?;
    let spec = PenaltySpec::for_tree(cfg.kind, tree.clone())?;
    let witness = lemma1_witness(&tree, &scenario.beta)?;
    let p_witness = spec.evaluate(&witness.gamma)?;
    let p_min = min_penalty(&spec, &tree, &witness, &scenario.beta)?;
    let lambda = theorem_lambda(sigma, tree.n_internal(), cfg.delta, cfg.n);
    let rhs = lambda * p_min;

    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.root = RootPolicy::Fixed(0.0);
    let base = scenario
        .clone()
        .with_sizes(cfg.n, 0)
        .with_noise(Noise::Sigma(sigma))
        .with_truncation(None);

    let rows: Vec<Result<BoundRow>> = par::map_indexed(cfg.replicates, |r| {
        let data = base.reseeded(cfg.seed.wrapping_add(r as u64)).generate()?;
        let c = CovariateMatrix::empty(cfg.n);
        let mut fitter = PathFitter::new(&data.x_true, &c, &data.y, &spec, &fit_cfg)?;
        let fit = fitter.fit(lambda, None)?;
        let lhs = in_sample_error(&data.x_true.values().dot(&Array1::from(fit.beta.clone())).to_vec(), &data.signal);
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
        Ok(BoundRow { replicate: r, lhs, rhs, ratio, satisfied: ratio <= RATIO_CEILING })
    });
    let rows: Vec<BoundRow> = rows.into_iter().collect::<Result<_>>()?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.lhs).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    Ok(BoundReport {
        penalty: cfg.kind,
        lambda_used: lambda,
        delta: cfg.delta,
        n: cfg.n,
        p: tree.n_leaves(),
        sigma,
        internal_count: tree.n_internal(),
        penalty_at_witness: p_witness,
        penalty_min: p_min,
        witness_bound: witness.bound(),
        ratio_ceiling: RATIO_CEILING,
        coverage: rows.iter().filter(|r| r.satisfied).count() as f64 / rows.len() as f64,
        median_lhs: median(&lhs),
        median_ratio: median(&ratios),
        rows,
    })
}

fn in_sample_error(fitted: &[f64], truth: &[f64]) -> f64 {
    fitted.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64
}

/// Balanced full binary tree over `p` leaves labelled `t1..tp`.
pub fn balanced_binary_newick(p: usize) -> Result<String> {
    fn build(lo: usize, hi: usize) -> String {
        if hi - lo == 1 {
            return format!("t{}", lo + 1);
        }
        let mid = lo + (hi - lo).div_ceil(2);
        format!("({},{})", build(lo, mid), build(mid, hi))
    }
    if p < 2 {
        return Err(Error::arg("need at least two leaves"));
    }
    Ok(format!("{};", build(0, p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub p: usize,
    pub n: usize,
    pub rate: f64,
    pub median_lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweep {
    pub penalty: PenaltyKind,
    pub sigma: f64,
    pub cells: Vec<RateCell>,
    /// Least-squares slope of `log median_lhs` on `log rate`.
    pub slope: f64,
}

/// Median in-sample error over a grid of `(p, n)` on balanced binary trees,
/// with the left half of the leaves at `+1` and the right half at `-1`.
pub fn corollary1_rate_sweep(
    p_list: &[usize],
    n_list: &[usize],
    kind: PenaltyKind,
    replicates: usize,
    sigma: f64,
    seed: u64,
) -> Result<RateSweep> {
    let mut cells = Vec::new();
    for &p in p_list {
        let newick = balanced_binary_newick(p)?;
        let beta: Vec<f64> = (0..p).map(|j| if j < p.div_ceil(2) { 1.0 } else { -1.0 }).collect();
        for &n in n_list {
            let scenario = Scenario {
                p,
                beta: beta.clone(),
                newick: Some(newick.clone()),
                latent_mean: vec![0.0; p - 1],
                ..Scenario::smalltree(seed)
            };
            let cfg = BoundConfig {
                kind,
                delta: 0.1,
                n,
                replicates,
                sigma: Some(sigma),
                seed,
                fit: FitConfig::default(),
            };
            let rep = theorem1_check(&scenario, &cfg)?;
            cells.push(RateCell { p, n, rate: ((p as f64).ln() / n as f64).sqrt(), median_lhs: rep.median_lhs });
        }
    }
    let xs: Vec<f64> = cells.iter().map(|c| c.rate.ln()).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.median_lhs.max(f64::MIN_POSITIVE).ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    Ok(RateSweep { penalty: kind, sigma, cells, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::parse_newick;

    #[test]
    fn witness_on_example_tree() {
        let t = parse_newick("(((1,2),3,4),((5,6),7));").unwrap();
        let beta = [1.0, 1.0, 2.0, 3.0, -1.0, -1.0, -1.0];
        let w = lemma1_witness(&t, &beta).unwrap();
        let named: Vec<usize> = w.support.iter().map(|u| u + 1).collect();
        assert_eq!(named, vec![3, 4, 8, 11]);
        let a = IndicatorMatrix::new(&t);
        assert_eq!(a.apply(ArrayView1::from(&w.gamma[..])).to_vec(), beta.to_vec());
    }

    #[test]
    fn constant_beta_uses_root_children() {
        let t = parse_newick("((a,b),(c,d),e);").unwrap();
        let w = lemma1_witness(&t, &[0.7; 5]).unwrap();
        assert_eq!(w.bstar_size, 3);
        let a = IndicatorMatrix::new(&t);
        assert!(a.apply(ArrayView1::from(&w.gamma[..])).iter().all(|&b| b == 0.7));
    }

    #[test]
    fn non_full_tree_rejected() {
        let t = parse_newick("((a),b);");
        if let Ok(t) = t {
            assert!(matches!(lemma1_witness(&t, &[1.0, 2.0]), Err(Error::Assumption(_))));
        }
    }

    #[test]
    fn lambda_formula() {
        let l = theorem_lambda(0.5, 5, 0.1, 100);
        assert_eq!(l, 2.0 * 2f64.sqrt() * 0.5 * (5f64.ln() / 10.0).sqrt());
    }

    #[test]
    fn balanced_tree_is_full() {
        for p in [2, 3, 8, 13] {
            let t = parse_newick(&balanced_binary_newick(p).unwrap()).unwrap();
            assert!(t.is_full());
            assert_eq!(t.n_leaves(), p);
        }
    }
}
