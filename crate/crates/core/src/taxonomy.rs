//! Taxonomic trees, the ancestor indicator matrix, and aggregating sets.
//!
//! Node numbering is fixed at construction: leaves come first (`0..p`) in
//! left-to-right order, internal nodes follow ordered by depth from the
//! deepest level upwards (left to right within a level), and the root is the
//! last node. Children therefore always carry smaller indices than their
//! parent, so a single ascending sweep is a valid bottom-up traversal.
//!
//! Intermediate coefficient vectors `gamma` are indexed by node with the
//! root dropped, which with this numbering is just `0..n_nodes - 1`.

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::composition::CompositionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TaxTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    labels: Vec<Option<String>>,
    depth: Vec<usize>,
    leaves_below: Vec<Vec<usize>>,
    n_leaves: usize,
}

/// All five node relations at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relations {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub ancestors: Vec<usize>,
    pub descendants: Vec<usize>,
    pub leaves: Vec<usize>,
}

impl TaxTree {
    /// Build a tree from raw child lists in any node order.
    ///
    /// `labels[i]` is mandatory for leaves and optional for internal nodes.
    /// Nodes are renumbered as described in the module docs.
    pub fn from_children(
        children: Vec<Vec<usize>>,
        labels: Vec<Option<String>>,
        root: usize,
    ) -> Result<TaxTree> {
        let n = children.len();
        if labels.len() != n {
            return Err(Error::InvalidTree("label count differs from node count".into()));
        }
        if root >= n {
            return Err(Error::InvalidTree(format!("root {root} out of range")));
        }
        // preorder walk; every node must be reached exactly once
        let mut seen = vec![false; n];
        let mut depth = vec![0usize; n];
        let mut preorder = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            if seen[u] {
                return Err(Error::InvalidTree(format!("node {u} reached twice (cycle or shared child)")));
            }
            seen[u] = true;
            preorder.push(u);
            for &c in children[u].iter().rev() {
                if c >= n {
                    return Err(Error::InvalidTree(format!("child index {c} out of range")));
                }
                depth[c] = depth[u] + 1;
                stack.push(c);
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTree(format!("node {u} is not connected to the root")));
        }

        let leaves: Vec<usize> = preorder.iter().copied().filter(|&u| children[u].is_empty()).collect();
        let mut internal: Vec<(usize, usize)> = preorder
            .iter()
            .enumerate()
            .filter(|(_, &u)| !children[u].is_empty())
            .map(|(pos, &u)| (pos, u))
            .collect();
        if internal.is_empty() {
            return Err(Error::InvalidTree("tree needs at least one internal node".into()));
        }
        internal.sort_by(|a, b| depth[b.1].cmp(&depth[a.1]).then(a.0.cmp(&b.0)));

        let mut new_id = vec![0usize; n];
        let order: Vec<usize> = leaves.iter().copied().chain(internal.iter().map(|&(_, u)| u)).collect();
        for (k, &u) in order.iter().enumerate() {
            new_id[u] = k;
        }

        let mut seen_labels = HashSet::new();
        for &u in &leaves {
            match &labels[u] {
                Some(l) if !l.is_empty() => {
                    if !seen_labels.insert(l.clone()) {
                        return Err(Error::InvalidTree(format!("duplicate leaf label '{l}'")));
                    }
                }
                _ => return Err(Error::InvalidTree("leaf without a label".into())),
            }
        }

        let mut new_children = vec![Vec::new(); n];
        let mut new_parent = vec![None; n];
        let mut new_labels = vec![None; n];
        let mut new_depth = vec![0; n];
        for &u in &order {
            let k = new_id[u];
            new_children[k] = children[u].iter().map(|&c| new_id[c]).collect();
            for &c in &new_children[k] {
                new_parent[c] = Some(k);
            }
            new_labels[k] = labels[u].clone().filter(|l| !l.is_empty());
            new_depth[k] = depth[u];
        }

        let p = leaves.len();
        let mut leaves_below: Vec<Vec<usize>> = vec![Vec::new(); n];
        for u in 0..n {
            if u < p {
                leaves_below[u] = vec![u];
            } else {
                let mut acc: Vec<usize> = new_children[u]
                    .iter()
                    .flat_map(|&c| leaves_below[c].iter().copied())
                    .collect();
                acc.sort_unstable();
                leaves_below[u] = acc;
            }
        }

        Ok(TaxTree {
            parent: new_parent,
            children: new_children,
            labels: new_labels,
            depth: new_depth,
            leaves_below,
            n_leaves: p,
        })
    }

    /// Root with every leaf as a direct child.
    pub fn star<S: AsRef<str>>(labels: &[S]) -> Result<TaxTree> {
        let p = labels.len();
        let mut children = vec![Vec::new(); p + 1];
        children[p] = (0..p).collect();
        let mut l: Vec<Option<String>> = labels.iter().map(|s| Some(s.as_ref().to_string())).collect();
        l.push(None);
        TaxTree::from_children(children, l, p)
    }

    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_internal(&self) -> usize {
        self.n_nodes() - self.n_leaves
    }

    pub fn root(&self) -> usize {
        self.n_nodes() - 1
    }

    pub fn is_leaf(&self, u: usize) -> bool {
        u < self.n_leaves
    }

    /// Internal nodes in index order, root last.
    pub fn internal_nodes(&self) -> std::ops::Range<usize> {
        self.n_leaves..self.n_nodes()
    }

    pub fn parent(&self, u: usize) -> Option<usize> {
        self.parent[u]
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn depth(&self, u: usize) -> usize {
        self.depth[u]
    }

    pub fn label(&self, u: usize) -> Option<&str> {
        self.labels[u].as_deref()
    }

    /// Label if present, otherwise `node<k>` with a 1-based index.
    pub fn node_name(&self, u: usize) -> String {
        self.label(u).map(str::to_string).unwrap_or_else(|| format!("node{}", u + 1))
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        (0..self.n_leaves).map(|u| self.labels[u].as_deref().unwrap_or("")).collect()
    }

    pub fn leaf_index(&self, label: &str) -> Option<usize> {
        (0..self.n_leaves).find(|&u| self.labels[u].as_deref() == Some(label))
    }

    /// Node whose label matches, leaves and internal nodes alike.
    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        (0..self.n_nodes()).find(|&u| self.labels[u].as_deref() == Some(label))
    }

    /// Leaves of the subtree rooted at `u`, ascending.
    pub fn leaves_of(&self, u: usize) -> &[usize] {
        &self.leaves_below[u]
    }

    /// Ancestors from the parent upwards, root last.
    pub fn ancestors(&self, u: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent[u];
        while let Some(a) = cur {
            out.push(a);
            cur = self.parent[a];
        }
        out
    }

    /// Strict descendants of `u`, ascending.
    pub fn descendants(&self, u: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[u].clone();
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend_from_slice(&self.children[v]);
        }
        out.sort_unstable();
        out
    }

    pub fn relations(&self, u: usize) -> Result<Relations> {
        if u >= self.n_nodes() {
            return Err(Error::arg(format!("node index {u} out of range 0..{}", self.n_nodes())));
        }
        Ok(Relations {
            parent: self.parent[u],
            children: self.children[u].clone(),
            ancestors: self.ancestors(u),
            descendants: self.descendants(u),
            leaves: self.leaves_of(u).to_vec(),
        })
    }

    /// Every internal node has at least two children.
    pub fn is_full(&self) -> bool {
        self.internal_nodes().all(|u| self.children[u].len() >= 2)
    }

    /// Remove internal nodes with a single child, splicing the child into
    /// the parent's place. Internal labels of removed nodes are dropped.
    pub fn compress_unary(&self) -> Result<TaxTree> {
        let skip = |mut u: usize| {
            while !self.is_leaf(u) && self.children[u].len() == 1 {
                u = self.children[u][0];
            }
            u
        };
        let root = skip(self.root());
        let children: Vec<Vec<usize>> = (0..self.n_nodes())
            .map(|u| self.children[u].iter().map(|&c| skip(c)).collect())
            .collect();
        // unreachable nodes are dropped by rebuilding from the reachable set
        let mut keep = Vec::new();
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            keep.push(u);
            stack.extend(children[u].iter().copied());
        }
        keep.sort_unstable();
        let pos: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let new_children = keep.iter().map(|&u| children[u].iter().map(|c| pos[c]).collect()).collect();
        let new_labels = keep.iter().map(|&u| self.labels[u].clone()).collect();
        TaxTree::from_children(new_children, new_labels, pos[&root])
    }

    /// Serialize as Newick with leaf labels and any internal labels.
    pub fn to_newick(&self) -> String {
        fn quote(s: &str) -> String {
            if s.chars().any(|c| "()[]',:; \t\n".contains(c)) {
                format!("'{}'", s.replace('\'', "''"))
            } else {
                s.to_string()
            }
        }
        fn write(t: &TaxTree, u: usize, out: &mut String) {
            if !t.is_leaf(u) {
                out.push('(');
                for (i, &c) in t.children[u].iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(t, c, out);
                }
                out.push(')');
            }
            if let Some(l) = t.label(u) {
                out.push_str(&quote(l));
            }
        }
        let mut out = String::new();
        write(self, self.root(), &mut out);
        out.push(';');
        out
    }
}

enum State {
    ExpectChild,
    AfterChild,
    ExpectEnd,
}

/// Parse a single rooted Newick tree. Branch lengths and `[...]` comments
/// are skipped; unquoted labels are taken verbatim (underscores are kept).
pub fn parse_newick(text: &str) -> Result<TaxTree> {
    let bytes = text.as_bytes();
    let mut pos = 0usize;
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut labels: Vec<Option<String>> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut root = None;

    let err = |offset: usize, msg: &str| Error::Parse { offset, message: msg.to_string() };

    fn skip_ws(bytes: &[u8], pos: &mut usize) -> Result<()> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'[' {
                let start = *pos;
                while *pos < bytes.len() && bytes[*pos] != b']' {
                    *pos += 1;
                }
                if *pos == bytes.len() {
                    return Err(Error::Parse { offset: start, message: "unterminated comment".into() });
                }
                *pos += 1;
            } else {
                return Ok(());
            }
        }
    }

    fn read_label(text: &str, pos: &mut usize) -> Result<String> {
        let bytes = text.as_bytes();
        if *pos < bytes.len() && bytes[*pos] == b'\'' {
            let start = *pos;
            *pos += 1;
            let mut out = String::new();
            loop {
                if *pos >= bytes.len() {
                    return Err(Error::Parse { offset: start, message: "unterminated quoted label".into() });
                }
                if bytes[*pos] == b'\'' {
                    if *pos + 1 < bytes.len() && bytes[*pos + 1] == b'\'' {
                        out.push('\'');
                        *pos += 2;
                        continue;
                    }
                    *pos += 1;
                    return Ok(out);
                }
                let ch = text[*pos..].chars().next().unwrap();
                out.push(ch);
                *pos += ch.len_utf8();
            }
        }
        let start = *pos;
        while *pos < bytes.len() {
            let b = bytes[*pos];
            if b"()[]',:;".contains(&b) || b.is_ascii_whitespace() {
                break;
            }
            *pos += 1;
        }
        Ok(text[start..*pos].to_string())
    }

    fn skip_length(text: &str, pos: &mut usize) -> Result<()> {
        let bytes = text.as_bytes();
        skip_ws(bytes, pos)?;
        if *pos < bytes.len() && bytes[*pos] == b':' {
            *pos += 1;
            skip_ws(bytes, pos)?;
            let start = *pos;
            while *pos < bytes.len() && (bytes[*pos].is_ascii_alphanumeric() || b"+-.".contains(&bytes[*pos])) {
                *pos += 1;
            }
            if text[start..*pos].parse::<f64>().is_err() {
                return Err(Error::Parse { offset: start, message: "invalid branch length".into() });
            }
        }
        Ok(())
    }

    let mut state = State::ExpectChild;
    loop {
        skip_ws(bytes, &mut pos)?;
        match state {
            State::ExpectChild => {
                if pos >= bytes.len() {
                    return Err(err(pos, "unexpected end of input"));
                }
                if bytes[pos] == b'(' {
                    let id = children.len();
                    children.push(Vec::new());
                    labels.push(None);
                    if let Some(&top) = stack.last() {
                        children[top].push(id);
                    } else if root.is_some() {
                        return Err(err(pos, "more than one tree"));
                    }
                    stack.push(id);
                    pos += 1;
                } else {
                    let at = pos;
                    let label = read_label(text, &mut pos)?;
                    if label.is_empty() {
                        return Err(err(at, "leaf without a label"));
                    }
                    skip_length(text, &mut pos)?;
                    let id = children.len();
                    children.push(Vec::new());
                    labels.push(Some(label));
                    match stack.last() {
                        Some(&top) => {
                            children[top].push(id);
                            state = State::AfterChild;
                        }
                        None => {
                            root = Some(id);
                            state = State::ExpectEnd;
                        }
                    }
                }
            }
            State::AfterChild => {
                if pos >= bytes.len() {
                    return Err(err(pos, "unexpected end of input, unbalanced parentheses"));
                }
                match bytes[pos] {
                    b',' => {
                        pos += 1;
                        state = State::ExpectChild;
                    }
                    b')' => {
                        pos += 1;
                        let node = stack.pop().expect("non-empty stack in AfterChild");
                        skip_ws(bytes, &mut pos)?;
                        let label = read_label(text, &mut pos)?;
                        if !label.is_empty() {
                            labels[node] = Some(label);
                        }
                        skip_length(text, &mut pos)?;
                        if stack.is_empty() {
                            root = Some(node);
                            state = State::ExpectEnd;
                        }
                    }
                    _ => return Err(err(pos, "expected ',' or ')' (unbalanced parentheses)")),
                }
            }
            State::ExpectEnd => {
                if pos >= bytes.len() || bytes[pos] != b';' {
                    return Err(err(pos, "expected ';' after the tree"));
                }
                pos += 1;
                skip_ws(bytes, &mut pos)?;
                if pos != bytes.len() {
                    return Err(err(pos, "trailing content after ';'"));
                }
                break;
            }
        }
    }
    let root = root.ok_or_else(|| err(0, "empty tree"))?;
    TaxTree::from_children(children, labels, root)
}

/// Dense 0/1 matrix `A` with `A[j, k] = 1` iff node `k` is leaf `j` or one
/// of its ancestors. The root column is omitted since the root coefficient
/// is handled separately.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    entries: Array2<f64>,
}

impl IndicatorMatrix {
    pub fn new(tree: &TaxTree) -> IndicatorMatrix {
        let p = tree.n_leaves();
        let d = tree.n_nodes() - 1;
        let mut entries = Array2::zeros((p, d));
        for k in 0..d {
            for &j in tree.leaves_of(k) {
                entries[[j, k]] = 1.0;
            }
        }
        IndicatorMatrix { entries }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn n_leaves(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.entries.ncols()
    }

    /// `beta = A gamma`.
    pub fn apply(&self, gamma: ArrayView1<f64>) -> Array1<f64> {
        self.entries.dot(&gamma)
    }
}

pub fn indicator_matrix(tree: &TaxTree) -> IndicatorMatrix {
    IndicatorMatrix::new(tree)
}

/// Set of nodes whose subtree leaf sets partition the leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatingSet {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    /// Leaf indices under each node, aligned with `nodes`.
    pub blocks: Vec<Vec<usize>>,
}

impl AggregatingSet {
    pub fn from_nodes(tree: &TaxTree, mut nodes: Vec<usize>) -> Result<AggregatingSet> {
        nodes.sort_unstable();
        nodes.dedup();
        let blocks: Vec<Vec<usize>> = nodes.iter().map(|&u| tree.leaves_of(u).to_vec()).collect();
        let set = AggregatingSet { nodes, blocks };
        if !set.is_partition(tree.n_leaves()) {
            return Err(Error::arg("node set does not partition the leaves"));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Blocks are disjoint and cover `0..p`.
    pub fn is_partition(&self, p: usize) -> bool {
        let mut hit = vec![false; p];
        for b in &self.blocks {
            for &j in b {
                if j >= p || hit[j] {
                    return false;
                }
                hit[j] = true;
            }
        }
        hit.into_iter().all(|h| h)
    }
}

/// The coarsest aggregating set of `beta` on `tree`.
///
/// A node is uniform when all leaf coefficients below it lie within `tol`
/// of each other (max minus min, so the test is transitive and does not
/// depend on merge order). The result is the set of maximal uniform nodes.
pub fn coarsest_aggregating_set(tree: &TaxTree, beta: &[f64], tol: f64) -> AggregatingSet {
    assert_eq!(beta.len(), tree.n_leaves(), "beta length must equal the leaf count");
    let n = tree.n_nodes();
    let mut range: Vec<Option<(f64, f64)>> = vec![None; n];
    for u in 0..n {
        range[u] = if tree.is_leaf(u) {
            Some((beta[u], beta[u]))
        } else {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut ok = true;
            for &c in tree.children(u) {
                match range[c] {
                    Some((a, b)) => {
                        lo = lo.min(a);
                        hi = hi.max(b);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            (ok && hi - lo <= tol).then_some((lo, hi))
        };
    }
    let nodes: Vec<usize> = (0..n)
        .filter(|&u| range[u].is_some() && tree.parent(u).is_none_or(|q| range[q].is_none()))
        .collect();
    let blocks = nodes.iter().map(|&u| tree.leaves_of(u).to_vec()).collect();
    AggregatingSet { nodes, blocks }
}

/// Sum the columns of `x` within each block. Column labels become node names.
pub fn aggregate_columns(x: &CompositionMatrix, tree: &TaxTree, set: &AggregatingSet) -> Result<CompositionMatrix> {
    if x.n_taxa() != tree.n_leaves() {
        return Err(Error::Schema(format!(
            "composition has {} columns, tree has {} leaves",
            x.n_taxa(),
            tree.n_leaves()
        )));
    }
    if !set.is_partition(tree.n_leaves()) {
        return Err(Error::arg("aggregating set is not a partition of the leaves"));
    }
    let v = x.values();
    let mut out = Array2::zeros((x.n_samples(), set.len()));
    for (b, block) in set.blocks.iter().enumerate() {
        for &j in block {
            for i in 0..x.n_samples() {
                out[[i, b]] += v[[i, j]];
            }
        }
    }
    let cols = set.nodes.iter().map(|&u| tree.node_name(u)).collect();
    CompositionMatrix::with_labels(out, x.row_labels().to_vec(), cols)
}
