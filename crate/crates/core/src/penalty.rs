//! Equi-sparsity and tree-guided penalties, and their dual-norm form.
//!
//! Every penalty here can be written `max_{alpha in Q} alpha^T D v` where
//! `Q` is a product of intervals `[-1, 1]` (one per row of `D`) or of unit
//! Euclidean balls (one per group of rows). Smoothing subtracts
//! `mu/2 ||alpha||^2` inside the max, which gives a closed-form maximiser
//! `alpha*` and a gradient `D^T alpha*` with Lipschitz constant `||D||^2/mu`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::taxonomy::TaxTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    /// Sum of weighted absolute pairwise differences of `beta`.
    #[serde(rename = "es")]
    EquiSparsity,
    /// Weighted absolute value of each non-root `gamma_u`.
    #[serde(rename = "l1")]
    NodeL1,
    /// Per internal node, weighted norm of its children's `gamma`.
    #[serde(rename = "cl2")]
    ChildL2,
    /// Per internal node, weighted norm of its descendants' `gamma`.
    #[serde(rename = "dl2")]
    DescL2,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 4] =
        [PenaltyKind::EquiSparsity, PenaltyKind::NodeL1, PenaltyKind::ChildL2, PenaltyKind::DescL2];

    pub fn token(self) -> &'static str {
        match self {
            PenaltyKind::EquiSparsity => "es",
            PenaltyKind::NodeL1 => "l1",
            PenaltyKind::ChildL2 => "cl2",
            PenaltyKind::DescL2 => "dl2",
        }
    }

    pub fn is_tree(self) -> bool {
        !matches!(self, PenaltyKind::EquiSparsity)
    }

    /// Group-norm kinds use Euclidean balls; the others use intervals.
    pub fn is_group(self) -> bool {
        matches!(self, PenaltyKind::ChildL2 | PenaltyKind::DescL2)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "es" => Ok(PenaltyKind::EquiSparsity),
            "l1" => Ok(PenaltyKind::NodeL1),
            "cl2" => Ok(PenaltyKind::ChildL2),
            "dl2" => Ok(PenaltyKind::DescL2),
            other => Err(Error::arg(format!("unknown penalty '{other}' (expected es, l1, cl2 or dl2)"))),
        }
    }
}

/// A penalty with its weights and, for tree kinds, the tree.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    dim: usize,
    pair_weights: Option<Array2<f64>>,
    node_weights: Vec<f64>,
    tree: Option<Arc<TaxTree>>,
    /// `(node, coordinates)` per penalty term, for the tree kinds.
    groups: Vec<(usize, Vec<usize>)>,
}

impl PenaltySpec {
    /// Unit-weight equi-sparsity penalty over `p` coefficients.
    pub fn equi_sparsity(p: usize) -> PenaltySpec {
        PenaltySpec {
            kind: PenaltyKind::EquiSparsity,
            dim: p,
            pair_weights: None,
            node_weights: Vec::new(),
            tree: None,
            groups: Vec::new(),
        }
    }

    /// Unit-weight tree penalty. Coefficients are the non-root `gamma`.
    pub fn for_tree(kind: PenaltyKind, tree: Arc<TaxTree>) -> Result<PenaltySpec> {
        if !kind.is_tree() {
            return Err(Error::arg("equi-sparsity does not take a tree"));
        }
        let groups = match kind {
            PenaltyKind::NodeL1 => (0..tree.root()).map(|u| (u, vec![u])).collect(),
            PenaltyKind::ChildL2 => tree.internal_nodes().map(|u| (u, tree.children(u).to_vec())).collect(),
            PenaltyKind::DescL2 => tree.internal_nodes().map(|u| (u, tree.descendants(u))).collect(),
            PenaltyKind::EquiSparsity => unreachable!(),
        };
        Ok(PenaltySpec {
            kind,
            dim: tree.n_nodes() - 1,
            pair_weights: None,
            node_weights: vec![1.0; tree.n_nodes()],
            tree: Some(tree),
            groups,
        })
    }

    pub fn new(kind: PenaltyKind, p: usize, tree: Option<Arc<TaxTree>>) -> Result<PenaltySpec> {
        match (kind, tree) {
            (PenaltyKind::EquiSparsity, _) => Ok(PenaltySpec::equi_sparsity(p)),
            (k, Some(t)) => {
                if t.n_leaves() != p {
                    return Err(Error::Schema(format!("tree has {} leaves, expected {p}", t.n_leaves())));
                }
                PenaltySpec::for_tree(k, t)
            }
            (k, None) => Err(Error::arg(format!("penalty '{k}' needs a tree"))),
        }
    }

    /// Symmetric `p x p` nonnegative pair weights (only `j < k` is read).
    pub fn with_pair_weights(mut self, w: Array2<f64>) -> Result<PenaltySpec> {
        if self.kind != PenaltyKind::EquiSparsity {
            return Err(Error::arg("pair weights only apply to the equi-sparsity penalty"));
        }
        if w.dim() != (self.dim, self.dim) {
            return Err(Error::arg("pair weight table must be p x p"));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("pair weights must be finite and nonnegative"));
        }
        self.pair_weights = Some(w);
        Ok(self)
    }

    /// Per-node weights indexed by node (length `|T|`; the root entry is
    /// only read by the group kinds).
    pub fn with_node_weights(mut self, w: Vec<f64>) -> Result<PenaltySpec> {
        let tree = self.tree.as_ref().ok_or_else(|| Error::arg("node weights need a tree penalty"))?;
        if w.len() != tree.n_nodes() {
            return Err(Error::arg(format!("expected {} node weights, got {}", tree.n_nodes(), w.len())));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("node weights must be finite and nonnegative"));
        }
        self.node_weights = w;
        Ok(self)
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    /// Number of penalized coefficients.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tree(&self) -> Option<&Arc<TaxTree>> {
        self.tree.as_ref()
    }

    /// Per-term `(node, coordinates)` for tree kinds; empty for equi-sparsity.
    pub fn groups(&self) -> &[(usize, Vec<usize>)] {
        &self.groups
    }

    pub fn node_weight(&self, u: usize) -> f64 {
        self.node_weights[u]
    }

    pub fn pair_weight(&self, j: usize, k: usize) -> f64 {
        self.pair_weights.as_ref().map_or(1.0, |w| w[[j, k]])
    }

    fn check_dim(&self, coef: &[f64]) -> Result<()> {
        if coef.len() != self.dim {
            return Err(Error::arg(format!(
                "penalty '{}' expects {} coefficients, got {}",
                self.kind,
                self.dim,
                coef.len()
            )));
        }
        Ok(())
    }

    /// Exact penalty value.
    pub fn evaluate(&self, coef: &[f64]) -> Result<f64> {
        self.check_dim(coef)?;
        Ok(match self.kind {
            PenaltyKind::EquiSparsity => {
                let mut s = 0.0;
                for j in 0..self.dim {
                    for k in (j + 1)..self.dim {
                        s += self.pair_weight(j, k) * (coef[j] - coef[k]).abs();
                    }
                }
                s
            }
            PenaltyKind::NodeL1 => self.groups.iter().map(|(u, _)| self.node_weights[*u] * coef[*u].abs()).sum(),
            PenaltyKind::ChildL2 | PenaltyKind::DescL2 => self
                .groups
                .iter()
                .map(|(u, g)| self.node_weights[*u] * g.iter().map(|&v| coef[v] * coef[v]).sum::<f64>().sqrt())
                .sum(),
        })
    }

    /// One subgradient of the unsmoothed penalty, taking zero wherever the
    /// penalty is not differentiable.
    pub fn subgradient(&self, coef: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(coef)?;
        let mut g = vec![0.0; self.dim];
        match self.kind {
            PenaltyKind::EquiSparsity => {
                for j in 0..self.dim {
                    for k in (j + 1)..self.dim {
                        let d = coef[j] - coef[k];
                        if d != 0.0 {
                            let s = self.pair_weight(j, k) * d.signum();
                            g[j] += s;
                            g[k] -= s;
                        }
                    }
                }
            }
            PenaltyKind::NodeL1 => {
                for (u, _) in &self.groups {
                    if coef[*u] != 0.0 {
                        g[*u] = self.node_weights[*u] * coef[*u].signum();
                    }
                }
            }
            PenaltyKind::ChildL2 | PenaltyKind::DescL2 => {
                for (u, grp) in &self.groups {
                    let norm = grp.iter().map(|&v| coef[v] * coef[v]).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        let w = self.node_weights[*u];
                        for &v in grp {
                            g[v] += w * coef[v] / norm;
                        }
                    }
                }
            }
        }
        Ok(g)
    }

    /// Norm of each tree group, aligned with [`PenaltySpec::groups`].
    pub fn group_norms(&self, coef: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(coef)?;
        Ok(self.groups.iter().map(|(_, g)| g.iter().map(|&v| coef[v] * coef[v]).sum::<f64>().sqrt()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    /// Each row is its own interval `[-1, 1]`.
    Singletons,
    /// Row blocks `starts[g]..starts[g+1]`, each a unit Euclidean ball.
    Blocks(Vec<usize>),
}

/// Sparse `D` (CSR) with the geometry of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualForm {
    kind: PenaltyKind,
    n_cols: usize,
    col_offset: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    layout: Layout,
    /// Pair weights in row order when every row is a weighted pairwise
    /// difference, enabling a fused kernel that never forms `D v`.
    pairwise: Option<Vec<f64>>,
}

/// Buffers reused across [`DualForm::smooth_eval`] calls.
#[derive(Debug, Clone)]
pub struct SmoothScratch {
    dv: Vec<f64>,
    alpha: Vec<f64>,
}

struct CsrBuilder {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrBuilder {
    fn new() -> Self {
        CsrBuilder { row_ptr: vec![0], col_idx: Vec::new(), vals: Vec::new() }
    }

    fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(c, v) in entries {
            self.col_idx.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.col_idx.len());
    }
}

/// Compile a penalty into `(D, Q)`.
///
/// Equi-sparsity rows run over pairs `(j, k)`, `j < k`, in lexicographic
/// order. Tree kinds act on `gamma` with one block per internal node
/// (ascending) and rows within a block in ascending coordinate order.
pub fn compile_dual(spec: &PenaltySpec) -> DualForm {
    let mut b = CsrBuilder::new();
    let mut pairwise = None;
    let layout = match spec.kind {
        PenaltyKind::EquiSparsity => {
            let mut w_all = Vec::with_capacity(spec.dim * spec.dim.saturating_sub(1) / 2);
            for j in 0..spec.dim {
                for k in (j + 1)..spec.dim {
                    let w = spec.pair_weight(j, k);
                    b.push_row(&[(j, w), (k, -w)]);
                    w_all.push(w);
                }
            }
            pairwise = Some(w_all);
            Layout::Singletons
        }
        PenaltyKind::NodeL1 => {
            for (u, _) in &spec.groups {
                b.push_row(&[(*u, spec.node_weights[*u])]);
            }
            Layout::Singletons
        }
        PenaltyKind::ChildL2 | PenaltyKind::DescL2 => {
            let mut starts = vec![0];
            for (u, grp) in &spec.groups {
                let w = spec.node_weights[*u];
                for &v in grp {
                    b.push_row(&[(v, w)]);
                }
                starts.push(b.row_ptr.len() - 1);
            }
            Layout::Blocks(starts)
        }
    };
    DualForm {
        kind: spec.kind,
        n_cols: spec.dim,
        col_offset: 0,
        row_ptr: b.row_ptr,
        col_idx: b.col_idx,
        vals: b.vals,
        layout,
        pairwise,
    }
}

impl DualForm {
    /// Prepend `q` unpenalized coordinates (zero columns of `D`).
    pub fn with_offset(mut self, q: usize) -> DualForm {
        self.n_cols = self.n_cols - self.col_offset + q;
        self.col_offset = q;
        self
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    /// Rows of `D` (dual coordinates).
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Columns of `D`, including any unpenalized offset.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn col_offset(&self) -> usize {
        self.col_offset
    }

    pub fn n_groups(&self) -> usize {
        match &self.layout {
            Layout::Singletons => self.n_rows(),
            Layout::Blocks(s) => s.len() - 1,
        }
    }

    /// `max_{alpha in Q} ||alpha||^2 / 2`.
    pub fn smooth_radius(&self) -> f64 {
        self.n_groups() as f64 / 2.0
    }

    pub fn dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_rows(), self.n_cols));
        for r in 0..self.n_rows() {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[[r, self.col_offset + self.col_idx[i]]] += self.vals[i];
            }
        }
        d
    }

    /// `out = D v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_cols);
        let v = &v[self.col_offset..];
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[i] * v[self.col_idx[i]];
            }
            *o = s;
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.apply_into(v, &mut out);
        out
    }

    /// `out = D^T alpha`.
    pub fn apply_t_into(&self, alpha: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let tail = &mut out[self.col_offset..];
        for (r, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                tail[self.col_idx[i]] += self.vals[i] * a;
            }
        }
    }

    pub fn apply_t(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        self.apply_t_into(alpha, &mut out);
        out
    }

    /// `max_{alpha in Q} alpha^T D v` by the per-group closed form.
    pub fn dual_norm_value(&self, v: &[f64]) -> f64 {
        let dv = self.apply(v);
        match &self.layout {
            Layout::Singletons => dv.iter().map(|a| a.abs()).sum(),
            Layout::Blocks(starts) => starts
                .windows(2)
                .map(|w| dv[w[0]..w[1]].iter().map(|a| a * a).sum::<f64>().sqrt())
                .sum(),
        }
    }

    /// Given `dv = D v`, write `alpha*` and return the smoothed value.
    pub fn smooth_from_dv(&self, dv: &[f64], mu: f64, alpha: &mut [f64]) -> f64 {
        let mut f = 0.0;
        match &self.layout {
            Layout::Singletons => {
                for (a, &u) in alpha.iter_mut().zip(dv) {
                    let s = (u / mu).clamp(-1.0, 1.0);
                    *a = s;
                    f += s * u - 0.5 * mu * s * s;
                }
            }
            Layout::Blocks(starts) => {
                for w in starts.windows(2) {
                    let u = &dv[w[0]..w[1]];
                    let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt() / mu;
                    let scale = 1.0 / (mu * norm.max(1.0));
                    let mut dot = 0.0;
                    let mut sq = 0.0;
                    for (a, &x) in alpha[w[0]..w[1]].iter_mut().zip(u) {
                        *a = x * scale;
                        dot += *a * x;
                        sq += *a * *a;
                    }
                    f += dot - 0.5 * mu * sq;
                }
            }
        }
        f
    }

    pub fn scratch(&self) -> SmoothScratch {
        SmoothScratch { dv: vec![0.0; self.n_rows()], alpha: vec![0.0; self.n_rows()] }
    }

    /// `f_mu(v)`, also writing `grad f_mu(v) = D^T alpha*` into `grad` when
    /// given. `v` and `grad` span all columns including the offset.
    pub fn smooth_eval(&self, v: &[f64], mu: f64, grad: Option<&mut [f64]>, scratch: &mut SmoothScratch) -> f64 {
        if let Some(w) = &self.pairwise {
            return self.pairwise_eval(w, v, mu, grad);
        }
        self.apply_into(v, &mut scratch.dv);
        let f = self.smooth_from_dv(&scratch.dv, mu, &mut scratch.alpha);
        if let Some(g) = grad {
            self.apply_t_into(&scratch.alpha, g);
        }
        f
    }

    fn pairwise_eval(&self, weights: &[f64], v: &[f64], mu: f64, grad: Option<&mut [f64]>) -> f64 {
        let off = self.col_offset;
        let v = &v[off..];
        let p = v.len();
        let inv_mu = 1.0 / mu;
        let mut f = 0.0;
        let mut row = 0;
        match grad {
            Some(g) => {
                g.iter_mut().for_each(|x| *x = 0.0);
                let g = &mut g[off..];
                for j in 0..p {
                    let vj = v[j];
                    let w = &weights[row..row + p - j - 1];
                    let (head, tail) = g.split_at_mut(j + 1);
                    let mut gj = 0.0;
                    for ((gk, &vk), &wk) in tail.iter_mut().zip(&v[j + 1..]).zip(w) {
                        let d = wk * (vj - vk);
                        let a = (d * inv_mu).clamp(-1.0, 1.0);
                        f += a * d - 0.5 * mu * a * a;
                        gj += wk * a;
                        *gk -= wk * a;
                    }
                    head[j] += gj;
                    row += p - j - 1;
                }
            }
            None => {
                for j in 0..p {
                    let vj = v[j];
                    let w = &weights[row..row + p - j - 1];
                    for (&vk, &wk) in v[j + 1..].iter().zip(w) {
                        let d = wk * (vj - vk);
                        let a = (d * inv_mu).clamp(-1.0, 1.0);
                        f += a * d - 0.5 * mu * a * a;
                    }
                    row += p - j - 1;
                }
            }
        }
        f
    }

    /// Smoothed penalty `f_mu(v)` and its maximiser `alpha*`.
    pub fn smoothed_value_and_dual(&self, coef: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
        if !(mu > 0.0) {
            return Err(Error::arg("smoothing parameter mu must be positive"));
        }
        if coef.len() != self.n_cols {
            return Err(Error::arg(format!("expected {} coefficients, got {}", self.n_cols, coef.len())));
        }
        let dv = self.apply(coef);
        let mut alpha = vec![0.0; dv.len()];
        let f = self.smooth_from_dv(&dv, mu, &mut alpha);
        Ok((f, alpha))
    }

    /// `grad f_mu(v) = D^T alpha*`.
    pub fn smoothed_gradient(&self, coef: &[f64], mu: f64) -> Result<Vec<f64>> {
        let (_, alpha) = self.smoothed_value_and_dual(coef, mu)?;
        Ok(self.apply_t(&alpha))
    }

    /// `||D||_1 ||D||_inf`, an upper bound on `||D||_2^2`.
    fn norm_bound_sq(&self) -> f64 {
        let max_row = (0..self.n_rows())
            .map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut col = vec![0.0; self.n_cols];
        for (i, &c) in self.col_idx.iter().enumerate() {
            col[c] += self.vals[i].abs();
        }
        max_row * col.into_iter().fold(0.0, f64::max)
    }

    /// Spectral norm `||D||` by power iteration on `D^T D`, falling back to
    /// `sqrt(||D||_1 ||D||_inf)` when it does not converge.
    pub fn spectral_norm(&self) -> f64 {
        let d = self.n_cols;
        let mut buf = vec![0.0; self.n_rows()];
        let res = linalg::power_iteration(
            d,
            |v| {
                let v = v.to_vec();
                self.apply_into(&v, &mut buf);
                ndarray::Array1::from(self.apply_t(&buf))
            },
            1e-8,
            10_000,
        );
        if res.converged {
            res.eigenvalue.max(0.0).sqrt()
        } else {
            self.norm_bound_sq().sqrt()
        }
    }
}

pub fn dual_spectral_norm(dual: &DualForm) -> f64 {
    dual.spectral_norm()
}
