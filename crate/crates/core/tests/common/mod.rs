#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array1;
use relshift::composition::{sample_logistic_normal, CovSpec};
use relshift::rng::SimRng;
use relshift::taxonomy::parse_newick;
use relshift::{CompositionMatrix, PenaltyKind, PenaltySpec, TaxTree};

/// Random tree over `t1..tp` where every internal node has two or three
/// children.
pub fn random_full_newick(p: usize, rng: &mut SimRng) -> String {
    let mut nodes: Vec<String> = (1..=p).map(|j| format!("t{j}")).collect();
    while nodes.len() > 1 {
        let k = (2 + rng.below(2)).min(nodes.len());
        let start = rng.below(nodes.len() - k + 1);
        let group: Vec<String> = nodes.drain(start..start + k).collect();
        nodes.insert(start, format!("({})", group.join(",")));
    }
    format!("{};", nodes[0])
}

pub fn random_tree(p: usize, rng: &mut SimRng) -> Arc<TaxTree> {
    Arc::new(parse_newick(&random_full_newick(p, rng)).unwrap())
}

/// Compositions whose columns carry the tree's leaf labels in leaf order.
pub fn compositions_for(tree: &TaxTree, n: usize, rng: &mut SimRng) -> CompositionMatrix {
    let p = tree.n_leaves();
    let x = sample_logistic_normal(n, p, &vec![0.0; p - 1], CovSpec::Identity, rng).unwrap();
    let rows = (0..n).map(|i| format!("s{}", i + 1)).collect();
    let cols = tree.leaf_labels().iter().map(|s| s.to_string()).collect();
    CompositionMatrix::with_labels(x.values().clone(), rows, cols).unwrap()
}

pub fn noisy_response(x: &CompositionMatrix, beta: &[f64], sigma: f64, rng: &mut SimRng) -> Vec<f64> {
    x.values().dot(&Array1::from(beta.to_vec())).iter().map(|v| v + sigma * rng.normal()).collect()
}

pub fn spec_for(kind: PenaltyKind, tree: &Arc<TaxTree>) -> PenaltySpec {
    if kind.is_tree() {
        PenaltySpec::for_tree(kind, Arc::clone(tree)).unwrap()
    } else {
        PenaltySpec::equi_sparsity(tree.n_leaves())
    }
}

pub const KINDS: [PenaltyKind; 4] =
    [PenaltyKind::EquiSparsity, PenaltyKind::NodeL1, PenaltyKind::ChildL2, PenaltyKind::DescL2];

/// Children lists by walking parent pointers, independent of the tree's own
/// child and descendant tables.
pub fn children_by_parent(tree: &TaxTree) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); tree.n_nodes()];
    for u in 0..tree.n_nodes() {
        if let Some(q) = tree.parent(u) {
            ch[q].push(u);
        }
    }
    ch
}

pub fn descendants_by_parent(tree: &TaxTree, u: usize) -> Vec<usize> {
    let ch = children_by_parent(tree);
    let mut out = Vec::new();
    let mut stack = ch[u].clone();
    while let Some(v) = stack.pop() {
        out.push(v);
        stack.extend(ch[v].iter().copied());
    }
    out.sort_unstable();
    out
}

/// Penalty value from first principles: pairwise sums for equi-sparsity and
/// per-node sums over `gamma` without the root for the tree kinds.
pub fn penalty_value(kind: PenaltyKind, tree: &TaxTree, coef: &[f64]) -> f64 {
    let norm = |idx: &[usize]| idx.iter().map(|&k| coef[k] * coef[k]).sum::<f64>().sqrt();
    let internal = (0..tree.n_nodes()).filter(|&u| !tree.is_leaf(u));
    match kind {
        PenaltyKind::EquiSparsity => {
            let mut s = 0.0;
            for j in 0..coef.len() {
                for k in j + 1..coef.len() {
                    s += (coef[j] - coef[k]).abs();
                }
            }
            s
        }
        PenaltyKind::NodeL1 => coef.iter().map(|v| v.abs()).sum(),
        PenaltyKind::ChildL2 => internal.map(|u| norm(&children_by_parent(tree)[u])).sum(),
        PenaltyKind::DescL2 => internal.map(|u| norm(&descendants_by_parent(tree, u))).sum(),
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
