use rayon::prelude::*;

use super::FeatureStack;
use crate::error::{Error, Result};
use crate::signal::Grid2D;

/// Binary neighbourhood graph `G` with degree matrix `F` and Laplacian
/// `L = F - G`, stored as sorted adjacency lists.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    neighbor_count: usize,
}

impl LaplacianGraph {
    /// Builds a graph from an undirected edge list; duplicates and self loops are dropped.
    pub fn from_edges(size: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); size];
        for &(a, b) in edges {
            if a >= size || b >= size {
                return Err(Error::DimensionMismatch(format!("edge ({a}, {b}) outside {size} nodes")));
            }
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        Ok(Self::from_lists(lists, 0))
    }

    /// 4-connected lattice over a grid.
    pub fn lattice(grid: Grid2D) -> Self {
        let mut edges = Vec::with_capacity(2 * grid.len());
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                if c + 1 < grid.cols {
                    edges.push((grid.index(r, c), grid.index(r, c + 1)));
                }
                if r + 1 < grid.rows {
                    edges.push((grid.index(r, c), grid.index(r + 1, c)));
                }
            }
        }
        Self::from_edges(grid.len(), &edges).expect("lattice edges are in range")
    }

    fn from_lists(mut lists: Vec<Vec<usize>>, neighbor_count: usize) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Self { offsets, neighbors, neighbor_count }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `r` used to build the graph (0 when built from explicit edges).
    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// `L v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = self.neighbors(i).iter().map(|&j| v[j]).sum();
            *o = self.degree(i) as f64 * v[i] - s;
        }
    }

    /// `z^T L z`.
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        z.iter().zip(self.apply(z)).map(|(a, b)| a * b).sum()
    }

    /// `tr(Z L Z^T)` for a code stack whose channels are the rows of `Z`.
    pub fn trace_form(&self, z: &FeatureStack) -> f64 {
        (0..z.channels()).map(|d| self.quadratic_form(z.channel(d))).sum()
    }

    /// Dense row-major `L`.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = self.degree(i) as f64;
            for &j in self.neighbors(i) {
                out[i * n + j] -= 1.0;
            }
        }
        out
    }

    /// Power-iteration estimate of the largest eigenvalue of `L`.
    pub fn spectral_norm(&self, iterations: usize) -> f64 {
        let n = self.size();
        if n == 0 || self.neighbors.is_empty() {
            return 0.0;
        }
        // Alternating start vector: the all-ones vector spans the null space.
        let mut v: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let w = self.apply(&v);
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if wn == 0.0 {
                return 0.0;
            }
            estimate = wn / vn;
            v = w.into_iter().map(|x| x / wn).collect();
        }
        estimate
    }
}

/// `r`-nearest-neighbour graph over the feature columns of `x` (Euclidean
/// distance, ties broken by lower index), symmetrized with `G <- max(G, G^T)`.
pub fn build_laplacian(x: &FeatureStack, r: usize) -> Result<LaplacianGraph> {
    let n = x.len();
    if r == 0 || r >= n {
        return Err(Error::InvalidParameter(format!("need 1 <= r < {n}, got r = {r}")));
    }
    let dim = x.channels();
    let columns = x.pixel_major();
    const BLOCK: usize = 64;

    // Scan outward from each point along the coordinate of largest spread.
    // A single squared coordinate gap never exceeds the full squared
    // distance, so the scan can stop once the gap alone is too large.
    let axis = (0..dim)
        .map(|c| {
            let mean = (0..n).map(|i| columns[i * dim + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (columns[i * dim + c] - mean).powi(2)).sum::<f64>();
            (var, c)
        })
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
        .1;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| columns[a * dim + axis].total_cmp(&columns[b * dim + axis]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }

    let nearest: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .with_min_len(BLOCK)
        .map(|i| {
            let xi = &columns[i * dim..(i + 1) * dim];
            let pi = xi[axis];
            // Sorted ascending by (distance, index).
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(r + 1);
            let offer = |j: usize, best: &mut Vec<(f64, usize)>| {
                let xj = &columns[j * dim..(j + 1) * dim];
                let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                let key = (d, j);
                if best.len() == r && !lex_less(key, best[r - 1]) {
                    return;
                }
                let pos = best.partition_point(|&b| lex_less(b, key));
                best.insert(pos, key);
                best.truncate(r);
            };
            let (mut lo, mut hi) = (rank[i], rank[i] + 1);
            let (mut lo_open, mut hi_open) = (true, true);
            while lo_open || hi_open {
                if lo_open {
                    if lo == 0 {
                        lo_open = false;
                    } else {
                        let j = order[lo - 1];
                        let gap = (pi - columns[j * dim + axis]) * (pi - columns[j * dim + axis]);
                        if best.len() == r && gap > best[r - 1].0 {
                            lo_open = false;
                        } else {
                            offer(j, &mut best);
                            lo -= 1;
                        }
                    }
                }
                if hi_open {
                    if hi == n {
                        hi_open = false;
                    } else {
                        let j = order[hi];
                        let gap = (pi - columns[j * dim + axis]) * (pi - columns[j * dim + axis]);
                        if best.len() == r && gap > best[r - 1].0 {
                            hi_open = false;
                        } else {
                            offer(j, &mut best);
                            hi += 1;
                        }
                    }
                }
            }
            best.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut lists = vec![Vec::new(); n];
    for (i, near) in nearest.iter().enumerate() {
        for &j in near {
            lists[i].push(j);
            lists[j].push(i);
        }
    }
    Ok(LaplacianGraph::from_lists(lists, r))
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
