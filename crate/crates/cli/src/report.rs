//! Plain-text summaries printed after each command.

use std::fmt::Write;

use relshift::theorycheck::BoundReport;
use relshift::tuning::CvReport;
use relshift::FitResult;

/// Penalty, lambda, solver status and one line per aggregation block, with
/// blocks named by their tree node and listing their taxa.
pub fn fit_summary(fit: &FitResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "penalty {}  lambda {:.6e}", fit.penalty, fit.lambda);
    let _ = writeln!(
        s,
        "solver: {} iterations, {}, objective {:.8e}",
        fit.solver.n_iter,
        if fit.solver.converged { "converged" } else { "iteration limit reached" },
        fit.solver.final_objective
    );
    if fit.penalty.is_tree() {
        let _ = writeln!(s, "root gamma {:.6}", fit.gamma_root);
    }
    if !fit.beta_c.is_empty() {
        let _ = writeln!(s, "covariate coefficients: {:?}", fit.beta_c);
    }
    let agg = &fit.aggregation;
    let _ = writeln!(s, "{} aggregation blocks", agg.blocks.len());
    for ((node, taxa), idx) in agg.node_labels.iter().zip(&agg.blocks).zip(&agg.indices) {
        let coef = idx.iter().map(|&j| fit.beta[j]).sum::<f64>() / idx.len().max(1) as f64;
        let _ = writeln!(s, "  {node} ({} taxa, beta {coef:+.4}): {}", taxa.len(), taxa.join(" "));
    }
    s
}

pub fn cv_summary(cv: &CvReport) -> String {
    let mut s = String::new();
    let best = cv.best_index();
    let _ = writeln!(s, "{}-fold cross-validation over {} lambdas (seed {})", cv.k, cv.lambda_grid.len(), cv.seed);
    let _ = writeln!(s, "  {:>14} {:>14} {:>14}", "lambda", "cv_mse", "cv_se");
    for (i, ((l, m), e)) in cv.lambda_grid.iter().zip(&cv.cv_mean).zip(&cv.cv_se).enumerate() {
        let mark = if i == best { " *" } else { "" };
        let _ = writeln!(s, "  {l:>14.6e} {m:>14.6e} {e:>14.6e}{mark}");
    }
    s
}

pub fn bound_summary(rep: &BoundReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "penalty {}  n {}  p {}  sigma {:.6}  delta {}  lambda {:.6e}",
        rep.penalty, rep.n, rep.p, rep.sigma, rep.delta, rep.lambda_used
    );
    let _ = writeln!(
        s,
        "penalty at witness {:.6}  minimal penalty {:.6}  witness bound {:.6}",
        rep.penalty_at_witness, rep.penalty_min, rep.witness_bound
    );
    let _ = writeln!(
        s,
        "{} replicates: median lhs {:.6e}, median ratio {:.4}, ratio <= {} in {:.1}%",
        rep.rows.len(),
        rep.median_lhs,
        rep.median_ratio,
        rep.ratio_ceiling,
        100.0 * rep.coverage
    );
    s
}
