//! Saved solver instances for `fof solve`.
//!
//! ```json
//! { "rows": 8, "cols": 8,
//!   "x": [[...], ...],          // D channels of rows*cols values, row-major
//!   "b": [[...], ...],          // D rows of k values, unit-norm columns
//!   "y": [...], "c": [...],     // optional; Gaussian labels and Hann window
//!   "edges": [[0, 1], ...],     // optional graph, or
//!   "knn": 4 }                  // build the k-NN graph from X
//! ```

use std::fs;
use std::path::Path;

use fof_core::coding::{build_laplacian, Codebook, FeatureStack, LaplacianGraph};
use fof_core::signal::{default_label_sigma, gaussian_labels, hann_window, Grid2D, Plane};
use fof_core::solver::{fof_solve, FofSolution, SolverConfig};
use serde::Deserialize;

use crate::{core_error, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub rows: usize,
    pub cols: usize,
    pub x: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub knn: Option<usize>,
}

impl Instance {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read instance {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<FofSolution, CliError> {
        let grid = Grid2D::new(self.rows, self.cols).map_err(core_error)?;
        let n = grid.len();
        let dim = self.x.len();
        if dim == 0 || self.x.iter().any(|c| c.len() != n) {
            return Err(CliError::Config(format!("x must hold at least one channel of {n} values")));
        }
        let x = FeatureStack::from_vec(grid, dim, self.x.concat()).map_err(core_error)?;
        if self.b.len() != dim {
            return Err(CliError::Config(format!("b has {} rows, x has {dim} channels", self.b.len())));
        }
        let atoms = self.b.first().map_or(0, Vec::len);
        let book = Codebook::from_row_major(dim, atoms, self.b.concat()).map_err(core_error)?;
        let y = match &self.y {
            Some(v) => Plane::from_vec(grid, v.clone()).map_err(core_error)?,
            None => gaussian_labels(grid, default_label_sigma(grid)).map_err(core_error)?,
        };
        let c = match &self.c {
            Some(v) => Plane::from_vec(grid, v.clone()).map_err(core_error)?,
            None => hann_window(grid).map_err(core_error)?,
        };
        let graph: Option<LaplacianGraph> = match (&self.edges, self.knn) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either edges or knn, not both".into())),
            (Some(e), None) => Some(LaplacianGraph::from_edges(n, e).map_err(core_error)?),
            (None, Some(r)) => Some(build_laplacian(&x, r).map_err(core_error)?),
            (None, None) => None,
        };
        fof_solve(&x, &book, graph.as_ref(), &y, &c, cfg).map_err(core_error)
    }
}
