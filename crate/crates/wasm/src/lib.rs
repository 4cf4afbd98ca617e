//! Browser demo bindings. Every export takes plain values and returns a JSON
//! string so the page needs no generated TypeScript types.

use std::sync::Arc;

use relshift::model::PathFitter;
use relshift::penalty::compile_dual;
use relshift::simulate::Scenario;
use relshift::taxonomy::{coarsest_aggregating_set, parse_newick};
use relshift::tuning::{fit_path, lambda_grid};
use relshift::{CovariateMatrix, FitConfig, PenaltyKind, PenaltySpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PathPoint {
    lambda: f64,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    blocks: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct PathView {
    penalty: PenaltyKind,
    newick: String,
    node_labels: Vec<String>,
    true_beta: Vec<f64>,
    gamma_root: f64,
    points: Vec<PathPoint>,
}

fn path_json(seed: u64, penalty: &str, n_lambda: usize) -> relshift::Result<String> {
    let kind: PenaltyKind = penalty.parse()?;
    let data = Scenario::smalltree(seed).generate()?;
    let tree = data.tree.clone().expect("scenario has a tree");
    let x = data.train_x();
    let y = data.train_y();
    let c = CovariateMatrix::empty(x.n_samples());
    let spec = if kind.is_tree() {
        PenaltySpec::for_tree(kind, Arc::clone(&tree))?
    } else {
        PenaltySpec::equi_sparsity(x.n_taxa())
    };
    let mut fitter = PathFitter::new(&x, &c, &y, &spec, &FitConfig::default())?;
    let grid = lambda_grid(fitter.lambda_max(), n_lambda.max(2), 1e-3)?;
    let points = fit_path(&mut fitter, &grid, true)?
        .into_iter()
        .map(|f| PathPoint { lambda: f.lambda, beta: f.beta, gamma: f.gamma, blocks: f.aggregation.blocks })
        .collect();
    let view = PathView {
        penalty: kind,
        newick: tree.to_newick(),
        node_labels: (0..tree.root()).map(|u| tree.node_name(u)).collect(),
        true_beta: data.scenario.beta.clone(),
        gamma_root: fitter.gamma_root(),
        points,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct AggregationView {
    nodes: Vec<String>,
    blocks: Vec<Vec<String>>,
}

fn aggregate_json(newick: &str, beta: &str, tol: f64) -> relshift::Result<String> {
    let tree = parse_newick(newick.trim())?;
    let beta: Vec<f64> = serde_json::from_str(beta)?;
    if beta.len() != tree.n_leaves() {
        return Err(relshift::Error::Argument(format!(
            "tree has {} leaves but {} coefficients were given",
            tree.n_leaves(),
            beta.len()
        )));
    }
    let set = coarsest_aggregating_set(&tree, &beta, tol);
    let view = AggregationView {
        nodes: set.nodes.iter().map(|&u| tree.node_name(u)).collect(),
        blocks: set.blocks.iter().map(|b| b.iter().map(|&j| tree.node_name(j)).collect()).collect(),
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct CurveView {
    mu: f64,
    t: Vec<f64>,
    exact: Vec<f64>,
    smoothed: Vec<f64>,
    gradient: Vec<f64>,
}

/// `|b1 - b2|` and its smoothed surrogate along `b = (t, 0)`.
fn curve_json(mu: f64, t_max: f64, points: usize) -> relshift::Result<String> {
    if !(t_max > 0.0) || points < 2 {
        return Err(relshift::Error::Argument("need t_max > 0 and at least two points".into()));
    }
    let dual = compile_dual(&PenaltySpec::equi_sparsity(2));
    let mut view = CurveView { mu, t: Vec::new(), exact: Vec::new(), smoothed: Vec::new(), gradient: Vec::new() };
    for i in 0..points {
        let t = -t_max + 2.0 * t_max * i as f64 / (points - 1) as f64;
        let (f, alpha) = dual.smoothed_value_and_dual(&[t, 0.0], mu)?;
        view.t.push(t);
        view.exact.push(t.abs());
        view.smoothed.push(f);
        view.gradient.push(dual.apply_t(&alpha)[0]);
    }
    Ok(serde_json::to_string(&view)?)
}

fn js(r: relshift::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Warm-started lambda path on one draw of the six-taxon tree design.
#[wasm_bindgen]
pub fn small_tree_path(seed: u32, penalty: &str, n_lambda: u32) -> Result<String, JsError> {
    js(path_json(seed as u64, penalty, n_lambda as usize))
}

/// Coarsest aggregating set of `beta` (a JSON array in leaf order).
#[wasm_bindgen]
pub fn aggregate(newick: &str, beta: &str, tol: f64) -> Result<String, JsError> {
    js(aggregate_json(newick, beta, tol))
}

#[wasm_bindgen]
pub fn smoothing_curve(mu: f64, t_max: f64, points: u32) -> Result<String, JsError> {
    js(curve_json(mu, t_max, points as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn path_has_one_block_at_the_top() {
        let v: Value = serde_json::from_str(&path_json(1, "cl2", 5).unwrap()).unwrap();
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0]["blocks"].as_array().unwrap().len(), 1);
        assert_eq!(v["node_labels"].as_array().unwrap().len(), 10);
    }

    #[test]
    fn aggregation_of_two_groups() {
        let out = aggregate_json("(((a,b),(c,d)),(e,f));", "[1,1,1,1,2,2]", 1e-9).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
        assert!(aggregate_json("((a,b),c);", "[1,2]", 1e-9).is_err());
    }

    #[test]
    fn curve_stays_within_mu_over_two() {
        let v: Value = serde_json::from_str(&curve_json(0.5, 2.0, 41).unwrap()).unwrap();
        let exact = v["exact"].as_array().unwrap();
        let smooth = v["smoothed"].as_array().unwrap();
        for (e, s) in exact.iter().zip(smooth) {
            let gap = e.as_f64().unwrap() - s.as_f64().unwrap();
            assert!((-1e-12..=0.25 + 1e-12).contains(&gap));
        }
    }
}
