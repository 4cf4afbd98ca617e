//! Reading and aligning input tables.
//!
//! Samples are joined by ID and put in sorted ID order, so the row order of
//! the input files never changes a result. Composition columns are matched to
//! tree leaves by label; a permutation is applied only when every label
//! matches and is always reported.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use relshift::composition::{validate_closure, Table, CLOSURE_TOL};
use relshift::taxonomy::parse_newick;
use relshift::{CompositionMatrix, CovariateMatrix, Error, Result, TaxTree};

pub struct Inputs {
    pub x: CompositionMatrix,
    pub c: CovariateMatrix,
    pub y: Vec<f64>,
    pub tree: Option<Arc<TaxTree>>,
    /// Messages about adjustments made to the inputs.
    pub notes: Vec<String>,
}

pub struct InputPaths<'a> {
    pub x: &'a Path,
    pub y: &'a Path,
    pub covariates: Option<&'a Path>,
    pub tree: Option<&'a Path>,
}

fn schema(msg: String) -> Error {
    Error::Schema(msg)
}

fn unique_index(labels: &[String], what: &str, file: &Path) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if map.insert(l.clone(), i).is_some() {
            return Err(schema(format!("{}: duplicate {what} '{l}'", file.display())));
        }
    }
    Ok(map)
}

/// Rows of `table` ordered as `ids`; every ID must be present on both sides.
fn align_rows(table: &Table, ids: &[String], file: &Path, reference: &Path) -> Result<Array2<f64>> {
    let index = unique_index(&table.row_labels, "sample", file)?;
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(extra) = table.row_labels.iter().find(|l| !wanted.contains(l.as_str())) {
        return Err(schema(format!(
            "sample '{extra}' in {} has no row in {}",
            file.display(),
            reference.display()
        )));
    }
    let mut out = Array2::zeros((ids.len(), table.values.ncols()));
    for (i, id) in ids.iter().enumerate() {
        let r = *index
            .get(id)
            .ok_or_else(|| schema(format!("sample '{id}' is missing from {}", file.display())))?;
        out.row_mut(i).assign(&table.values.row(r));
    }
    Ok(out)
}

pub fn read_tree(path: &Path) -> Result<TaxTree> {
    let text = std::fs::read_to_string(path)?;
    parse_newick(text.trim())
}

/// Column order that puts `labels` in the tree's leaf order.
fn leaf_order(labels: &[String], tree: &TaxTree, file: &Path) -> Result<Vec<usize>> {
    let index = unique_index(labels, "taxon", file)?;
    let leaves = tree.leaf_labels();
    let leaf_set: HashSet<&str> = leaves.iter().copied().collect();
    let not_in_tree: Vec<&str> = labels.iter().map(String::as_str).filter(|l| !leaf_set.contains(l)).collect();
    let not_in_data: Vec<&str> = leaves.iter().copied().filter(|l| !index.contains_key(*l)).collect();
    if !not_in_tree.is_empty() || !not_in_data.is_empty() {
        let mut parts = Vec::new();
        if !not_in_tree.is_empty() {
            parts.push(format!("taxa not in the tree: {}", not_in_tree.join(", ")));
        }
        if !not_in_data.is_empty() {
            parts.push(format!("tree leaves missing from {}: {}", file.display(), not_in_data.join(", ")));
        }
        return Err(schema(parts.join("; ")));
    }
    Ok(leaves.iter().map(|l| index[*l]).collect())
}

pub fn load(paths: &InputPaths<'_>) -> Result<Inputs> {
    let mut notes = Vec::new();
    let xt = Table::read_csv(paths.x)?;
    unique_index(&xt.row_labels, "sample", paths.x)?;
    let mut ids = xt.row_labels.clone();
    ids.sort();
    let x_rows = align_rows(&xt, &ids, paths.x, paths.x)?;

    let yt = Table::read_csv(paths.y)?;
    if yt.values.ncols() != 1 {
        return Err(schema(format!(
            "{}: expected one response column, found {} ({})",
            paths.y.display(),
            yt.col_labels.len(),
            yt.col_labels.join(", ")
        )));
    }
    let y: Vec<f64> = align_rows(&yt, &ids, paths.y, paths.x)?.column(0).to_vec();

    let c = match paths.covariates {
        Some(path) => {
            let ct = Table::read_csv(path)?;
            unique_index(&ct.col_labels, "covariate", path)?;
            CovariateMatrix::new(align_rows(&ct, &ids, path, paths.x)?, ct.col_labels.clone())?
        }
        None => CovariateMatrix::empty(ids.len()),
    };

    let tree = paths.tree.map(read_tree).transpose()?.map(Arc::new);
    let (values, taxa) = match &tree {
        Some(t) => {
            let order = leaf_order(&xt.col_labels, t, paths.x)?;
            let moved = order.iter().enumerate().filter(|(i, j)| i != *j).count();
            if moved > 0 {
                notes.push(format!("reordered {moved} of {} composition columns to the tree's leaf order", order.len()));
            }
            let taxa = order.iter().map(|&j| xt.col_labels[j].clone()).collect();
            (x_rows.select(ndarray::Axis(1), &order), taxa)
        }
        None => {
            unique_index(&xt.col_labels, "taxon", paths.x)?;
            (x_rows, xt.col_labels.clone())
        }
    };
    let (x, closed) = validate_closure(values, ids, taxa, CLOSURE_TOL)?;
    if closed {
        notes.push("closed composition rows that did not sum to 1".into());
    }
    Ok(Inputs { x, c, y, tree, notes })
}
