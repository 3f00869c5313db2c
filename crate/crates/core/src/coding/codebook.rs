use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureStack;
use crate::error::{Error, Result};

/// Dictionary of `atoms` unit-norm columns in a `dim`-dimensional feature space.
///
/// Serialized as `{"dim": D, "atoms": k, "values": [...]}` with `values`
/// holding the `D x k` matrix in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    dim: usize,
    atoms: usize,
    values: Vec<f64>,
}

const UNIT_NORM_TOLERANCE: f64 = 1e-9;

impl Codebook {
    /// Builds a codebook from columns, normalizing each one.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let atoms = columns.len();
        if atoms == 0 {
            return Err(Error::InvalidParameter("codebook needs at least one atom".into()));
        }
        let dim = columns[0].len();
        if dim == 0 || columns.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch("codebook columns differ in length".into()));
        }
        let mut values = vec![0.0; dim * atoms];
        for (j, col) in columns.iter().enumerate() {
            let unit = normalized(col)
                .ok_or_else(|| Error::InvalidParameter(format!("atom {j} has zero norm")))?;
            for d in 0..dim {
                values[d * atoms + j] = unit[d];
            }
        }
        Ok(Self { dim, atoms, values })
    }

    /// Row-major `dim x atoms` values; every column must already have unit norm.
    pub fn from_row_major(dim: usize, atoms: usize, values: Vec<f64>) -> Result<Self> {
        let book = Self { dim, atoms, values };
        book.validate()?;
        Ok(book)
    }

    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for d in 0..dim {
            values[d * dim + d] = 1.0;
        }
        Self { dim, atoms: dim, values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms == 0 || self.dim == 0 || self.values.len() != self.dim * self.atoms {
            return Err(Error::DimensionMismatch(format!(
                "codebook {}x{} with {} values",
                self.dim,
                self.atoms,
                self.values.len()
            )));
        }
        for j in 0..self.atoms {
            let n: f64 = self.atom(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("atom {j} has norm {n}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn atoms(&self) -> usize {
        self.atoms
    }

    #[inline]
    pub fn get(&self, d: usize, j: usize) -> f64 {
        self.values[d * self.atoms + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn atom(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|d| self.get(d, j)).collect()
    }

    pub(crate) fn set_atom(&mut self, j: usize, unit: &[f64]) {
        for d in 0..self.dim {
            self.values[d * self.atoms + j] = unit[d];
        }
    }

    /// `B^T B`, row-major `atoms x atoms`.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.atoms;
        let mut g = vec![0.0; k * k];
        for a in 0..k {
            for b in a..k {
                let v: f64 = (0..self.dim).map(|d| self.get(d, a) * self.get(d, b)).sum();
                g[a * k + b] = v;
                g[b * k + a] = v;
            }
        }
        g
    }

    /// Largest singular value squared of `B`, by power iteration on `B^T B`.
    pub fn spectral_norm_sq(&self, iterations: usize) -> f64 {
        let k = self.atoms;
        let g = self.gram();
        let mut v: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * (i % 5) as f64).collect();
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let w: Vec<f64> =
                (0..k).map(|i| (0..k).map(|j| g[i * k + j] * v[j]).sum::<f64>()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            estimate = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        estimate
    }

    /// `B^T X`: project every feature column onto the atoms.
    pub fn project(&self, x: &FeatureStack) -> Result<FeatureStack> {
        if x.channels() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "features have {} channels, codebook expects {}",
                x.channels(),
                self.dim
            )));
        }
        let grid = x.grid();
        let mut out = FeatureStack::zeros(grid, self.atoms);
        for j in 0..self.atoms {
            let dst = out.channel_mut(j);
            for d in 0..self.dim {
                let w = self.get(d, j);
                if w == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(x.channel(d)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `B Z`: reconstruct features from codes.
    pub fn reconstruct(&self, z: &FeatureStack) -> Result<FeatureStack> {
        if z.channels() != self.atoms {
            return Err(Error::DimensionMismatch(format!(
                "codes have {} channels, codebook has {} atoms",
                z.channels(),
                self.atoms
            )));
        }
        let mut out = FeatureStack::zeros(z.grid(), self.dim);
        for d in 0..self.dim {
            let dst = out.channel_mut(d);
            for j in 0..self.atoms {
                let w = self.get(d, j);
                if w == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(z.channel(j)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let book: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        book.validate()?;
        Ok(book)
    }
}

pub(crate) fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Grid2D;

    #[test]
    fn columns_are_normalized() {
        let b = Codebook::from_columns(&[vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(b.atom(0), vec![0.6, 0.8]);
        assert_eq!(b.atom(1), vec![0.0, 1.0]);
        assert!(Codebook::from_columns(&[vec![0.0, 0.0]]).is_err());
        assert!(Codebook::from_row_major(2, 1, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn project_and_reconstruct_with_identity() {
        let g = Grid2D::new(2, 3).unwrap();
        let x = FeatureStack::from_vec(g, 2, (0..12).map(f64::from).collect()).unwrap();
        let b = Codebook::identity(2);
        assert_eq!(b.project(&x).unwrap(), x);
        assert_eq!(b.reconstruct(&x).unwrap(), x);
        assert!((b.spectral_norm_sq(20) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("book.json");
        let b = Codebook::from_columns(&[vec![1.0, 2.0, 2.0], vec![0.0, 1.0, 0.0]]).unwrap();
        b.save_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"dim\": 3"));
        assert_eq!(Codebook::load_json(&path).unwrap(), b);
    }
}
