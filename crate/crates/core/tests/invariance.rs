mod common;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use relshift::model::{truncate_and_aggregate, PathFitter};
use relshift::rng::SimRng;
use relshift::taxonomy::{aggregate_columns, coarsest_aggregating_set, parse_newick};
use relshift::{predict, CompositionMatrix, CovariateMatrix, FitConfig, FitResult, PenaltyKind, TaxTree};

use common::*;

struct Instance {
    tree: Arc<TaxTree>,
    x: CompositionMatrix,
    y: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = SimRng::new(seed);
    let tree = Arc::new(parse_newick("(((t1,t2),t3),((t4,t5),(t6,t7,t8)),t9);").unwrap());
    let x = compositions_for(&tree, 60, &mut rng);
    let beta = [1.0, 1.0, 1.0, -1.0, -1.0, 2.0, 2.0, 2.0, 0.5];
    let y = noisy_response(&x, &beta, 0.3, &mut rng);
    Instance { tree, x, y }
}

fn fit_at(inst: &Instance, kind: PenaltyKind, y: &[f64], lambda_frac: Option<f64>, lambda: Option<f64>) -> FitResult {
    let spec = spec_for(kind, &inst.tree);
    let c = CovariateMatrix::empty(inst.x.n_samples());
    let mut cfg = FitConfig::default();
    cfg.solver.tol = 1e-13;
    cfg.solver.max_iter = 100_000;
    let mut fitter = PathFitter::new(&inst.x, &c, y, &spec, &cfg).unwrap();
    let l = lambda.unwrap_or_else(|| fitter.lambda_max() * lambda_frac.unwrap());
    fitter.fit(l, None).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn scaling_the_response_and_lambda_scales_the_fit() {
    let inst = instance(1);
    for kind in KINDS {
        let base = fit_at(&inst, kind, &inst.y, Some(0.1), None);
        for c in [0.25, 4.0] {
            let y: Vec<f64> = inst.y.iter().map(|v| c * v).collect();
            let scaled = fit_at(&inst, kind, &y, None, Some(c * base.lambda));
            let expected: Vec<f64> = base.beta.iter().map(|b| c * b).collect();
            let scale = expected.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            assert!(max_abs_diff(&scaled.beta, &expected) <= 1e-6 * scale, "{kind} c={c}");
        }
    }
}

#[test]
fn shifting_every_coefficient_shifts_predictions() {
    let inst = instance(2);
    let c = CovariateMatrix::empty(inst.x.n_samples());
    for kind in KINDS {
        let base = fit_at(&inst, kind, &inst.y, Some(0.1), None);
        let before = predict(&base, &inst.x, &c).unwrap();

        // a constant added to every coefficient moves each prediction by it
        let a = 0.7;
        let mut moved = base.clone();
        moved.beta.iter_mut().for_each(|b| *b += a);
        let after = predict(&moved, &inst.x, &c).unwrap();
        for (u, v) in before.iter().zip(&after) {
            assert!((v - u - a).abs() < 1e-12);
        }

        // and the same constant added to the response is absorbed by it
        let y: Vec<f64> = inst.y.iter().map(|v| v + a).collect();
        let refit = fit_at(&inst, kind, &y, None, Some(base.lambda));
        let shifted: Vec<f64> = base.beta.iter().map(|b| b + a).collect();
        assert!(max_abs_diff(&refit.beta, &shifted) < 1e-6, "{kind}");
    }
}

#[test]
fn moving_mass_between_two_taxa_changes_prediction_by_the_contrast() {
    let inst = instance(3);
    let mut rng = SimRng::new(33);
    let c1 = CovariateMatrix::empty(1);
    for kind in KINDS {
        let fit = fit_at(&inst, kind, &inst.y, Some(0.05 + 0.3 * rng.uniform()), None);
        for _ in 0..50 {
            let i = rng.below(inst.x.n_samples());
            let (j, k) = (rng.below(9), rng.below(9));
            let row = inst.x.select_rows(&[i]);
            let mut shifted = row.values().clone();
            let delta = shifted[[0, k]] * rng.uniform();
            shifted[[0, k]] -= delta;
            shifted[[0, j]] += delta;
            let moved =
                CompositionMatrix::with_labels(shifted, row.row_labels().to_vec(), row.col_labels().to_vec()).unwrap();
            let change = predict(&fit, &moved, &c1).unwrap()[0] - predict(&fit, &row, &c1).unwrap()[0];
            assert!((change - delta * (fit.beta[j] - fit.beta[k])).abs() < 1e-10);
        }
    }
}

#[test]
fn tree_coefficients_are_root_path_sums() {
    let inst = instance(4);
    for kind in [PenaltyKind::NodeL1, PenaltyKind::ChildL2, PenaltyKind::DescL2] {
        let fit = fit_at(&inst, kind, &inst.y, Some(0.2), None);
        for j in 0..inst.tree.n_leaves() {
            let mut s = fit.gamma_root + fit.gamma[j];
            let mut u = j;
            while let Some(q) = inst.tree.parent(u) {
                if q != inst.tree.root() {
                    s += fit.gamma[q];
                }
                u = q;
            }
            assert!((fit.beta[j] - s).abs() < 1e-12, "{kind} leaf {j}");
        }
    }
}

#[test]
fn equal_coefficients_aggregate_without_loss() {
    let inst = instance(5);
    let c = CovariateMatrix::empty(inst.x.n_samples());
    let mut rng = SimRng::new(55);
    for kind in [PenaltyKind::NodeL1, PenaltyKind::ChildL2, PenaltyKind::DescL2] {
        let raw = fit_at(&inst, kind, &inst.y, Some(0.3), None);
        let fit = truncate_and_aggregate(&raw, 1e-4).unwrap();
        let blocks = &fit.aggregation.indices;
        assert!(blocks.len() < inst.tree.n_leaves(), "{kind} merged nothing");

        // aggregated design with one coefficient per block
        let set = coarsest_aggregating_set(&inst.tree, &fit.beta, 1e-12);
        let agg = aggregate_columns(&inst.x, &inst.tree, &set).unwrap();
        for row in agg.values().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let block_beta = Array1::from(set.blocks.iter().map(|b| fit.beta[b[0]]).collect::<Vec<_>>());
        let full = predict(&fit, &inst.x, &c).unwrap();
        let reduced = agg.values().dot(&block_beta);
        assert!(max_abs_diff(&full, reduced.as_slice().unwrap()) < 1e-12);

        // moving mass inside a block leaves every prediction unchanged
        let mut moved: Array2<f64> = inst.x.values().clone();
        for i in 0..moved.nrows() {
            for b in blocks.iter().filter(|b| b.len() > 1) {
                let (from, to) = (b[rng.below(b.len())], b[rng.below(b.len())]);
                let d = moved[[i, from]] * rng.uniform();
                moved[[i, from]] -= d;
                moved[[i, to]] += d;
            }
        }
        let moved =
            CompositionMatrix::with_labels(moved, inst.x.row_labels().to_vec(), inst.x.col_labels().to_vec()).unwrap();
        let after = predict(&fit, &moved, &c).unwrap();
        assert!(max_abs_diff(&full, &after) < 1e-10, "{kind}");
    }
}
