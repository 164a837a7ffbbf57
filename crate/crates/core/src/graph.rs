//! Nearest-neighbor pixel graph with 0-1 weights and its Laplacian.
//!
//! The graph is built on the observed spectra. Each pixel selects its `p`
//! nearest pixels by Euclidean distance (ties go to the lower index) and the
//! directed choices are symmetrized by union.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::model::{AbundanceMatrix, HyperspectralScene};

pub const DEFAULT_NEIGHBORS: usize = 5;

/// Edge weighting scheme. Only binary weights are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    ZeroOne,
}

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(col, value)` lists. Columns must be sorted.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(col, value)` pairs of row `i`, in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    /// `H·A` for a `P × n` matrix `H` (A symmetric, so this is also `(A·Hᵀ)ᵀ`).
    pub fn right_multiply(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for j in 0..self.n {
            let mut col = out.column_mut(j);
            for (l, v) in self.row(j) {
                col.scaled_add(v, &h.column(l));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// Symmetric pixel affinity graph and its degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGraph {
    weights: SparseMatrix,
    degrees: Vec<f64>,
    neighbors_per_node: usize,
}

impl PixelGraph {
    /// Builds a 0-1 weighted graph from undirected edges over `m` nodes.
    /// Duplicate edges collapse; self-loops are rejected.
    pub fn from_edges(m: usize, edges: &[(usize, usize)], neighbors_per_node: usize) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(UnmixError::Parameter(format!(
                    "edge ({a}, {b}) out of range for {m} nodes"
                )));
            }
            if a == b {
                return Err(UnmixError::Parameter(format!("self-loop at node {a}")));
            }
            rows[a].push(b);
            rows[b].push(a);
        }
        Ok(Self::from_adjacency_lists(rows, neighbors_per_node))
    }

    fn from_adjacency_lists(mut rows: Vec<Vec<usize>>, neighbors_per_node: usize) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = rows
            .iter_mut()
            .map(|r| {
                r.sort_unstable();
                r.dedup();
                r.iter().map(|&c| (c, 1.0)).collect()
            })
            .collect();
        let weights = SparseMatrix::from_rows(rows);
        let degrees = (0..weights.dim()).map(|i| weights.row_sum(i)).collect();
        PixelGraph {
            weights,
            degrees,
            neighbors_per_node,
        }
    }

    pub fn node_count(&self) -> usize {
        self.weights.dim()
    }

    pub fn weights(&self) -> &SparseMatrix {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn neighbors_per_node(&self) -> usize {
        self.neighbors_per_node
    }

    /// Undirected edges `(j, l)` with `j < l`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.node_count())
            .flat_map(|j| self.weights.row(j).filter(move |&(l, _)| l > j).map(move |(l, _)| (j, l)))
            .collect()
    }

    /// Writes one `j l weight` line per undirected edge, zero-indexed.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for j in 0..self.node_count() {
            for (l, w) in self.weights.row(j) {
                if l > j {
                    writeln!(out, "{j} {l} {w}")?;
                }
            }
        }
        Ok(())
    }
}

/// p-nearest-neighbor graph over the scene's pixel spectra.
pub fn knn_graph(scene: &HyperspectralScene, p: usize, scheme: WeightScheme) -> Result<PixelGraph> {
    let WeightScheme::ZeroOne = scheme;
    let m = scene.pixel_count();
    if p < 1 {
        return Err(UnmixError::Parameter("neighbor count p must be at least 1".into()));
    }
    if p >= m {
        return Err(UnmixError::Parameter(format!(
            "neighbor count p = {p} must be smaller than the pixel count {m}"
        )));
    }
    let data = scene.data();
    let choices: Vec<Vec<usize>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let yj = data.column(j);
            let mut cand: Vec<(f64, usize)> = (0..m)
                .filter(|&l| l != j)
                .map(|l| {
                    let d: f64 = yj
                        .iter()
                        .zip(data.column(l).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, l)
                })
                .collect();
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(p - 1, by_dist);
            cand.truncate(p);
            cand.into_iter().map(|(_, l)| l).collect()
        })
        .collect();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (j, chosen) in choices.into_iter().enumerate() {
        for l in chosen {
            rows[j].push(l);
            rows[l].push(j);
        }
    }
    Ok(PixelGraph::from_adjacency_lists(rows, p))
}

/// Graph Laplacian `D − W`.
pub fn laplacian(graph: &PixelGraph) -> SparseMatrix {
    let rows = (0..graph.node_count())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = graph.weights.row(i).map(|(j, w)| (j, -w)).collect();
            let pos = row.partition_point(|&(j, _)| j < i);
            row.insert(pos, (i, graph.degrees[i]));
            row
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

fn check_columns(h: &Array2<f64>, graph: &PixelGraph) -> Result<()> {
    if h.ncols() != graph.node_count() {
        return Err(UnmixError::dims(
            "abundance columns vs graph nodes",
            graph.node_count(),
            h.ncols(),
        ));
    }
    Ok(())
}

/// `R = ½ Σ_{j,l} ‖h_j − h_l‖² w_jl`, summed over ordered pairs.
pub fn graph_regularizer(h: &AbundanceMatrix, graph: &PixelGraph) -> Result<f64> {
    check_columns(h.fractions(), graph)?;
    Ok(regularizer_raw(h.fractions().view(), graph))
}

pub(crate) fn regularizer_raw(h: ArrayView2<'_, f64>, graph: &PixelGraph) -> f64 {
    let mut total = 0.0;
    for j in 0..graph.node_count() {
        let zj = h.column(j);
        for (l, w) in graph.weights.row(j) {
            let d: f64 = zj
                .iter()
                .zip(h.column(l).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += w * d;
        }
    }
    0.5 * total
}

/// `trace(H·L·Hᵀ)` computed from the Laplacian directly.
pub fn laplacian_trace(h: &AbundanceMatrix, lap: &SparseMatrix) -> Result<f64> {
    let h = h.fractions();
    if h.ncols() != lap.dim() {
        return Err(UnmixError::dims("abundance columns vs Laplacian", lap.dim(), h.ncols()));
    }
    Ok(h.rows().into_iter().map(|row| lap.quadratic_form(&row.to_vec())).sum())
}
