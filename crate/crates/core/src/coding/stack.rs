use crate::error::{Error, Result};
use crate::signal::{dft2, Grid2D, Plane, Spectrum};

/// Multi-channel feature field stored as a `channels x (rows*cols)` matrix:
/// row `d` is the spatial plane of channel `d`, column `j` is the feature
/// vector of pixel `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    grid: Grid2D,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureStack {
    pub fn zeros(grid: Grid2D, channels: usize) -> Self {
        Self { grid, channels, values: vec![0.0; grid.len() * channels] }
    }

    pub fn from_vec(grid: Grid2D, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::DimensionMismatch("feature stack needs at least one channel".into()));
        }
        if values.len() != grid.len() * channels {
            return Err(Error::DimensionMismatch(format!(
                "{channels} channels on {grid} need {} values, got {}",
                grid.len() * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature stack"));
        }
        Ok(Self { grid, channels, values })
    }

    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no planes supplied".into()))?;
        let grid = first.grid();
        let mut values = Vec::with_capacity(grid.len() * planes.len());
        for p in planes {
            grid.ensure_same(p.grid())?;
            values.extend_from_slice(p.values());
        }
        Self::from_vec(grid, planes.len(), values)
    }

    /// Builds a stack from pixel-major data (`pixels x channels`).
    pub fn from_pixel_major(grid: Grid2D, channels: usize, data: &[f64]) -> Result<Self> {
        if data.len() != grid.len() * channels {
            return Err(Error::DimensionMismatch("pixel-major buffer length".into()));
        }
        let n = grid.len();
        let mut values = vec![0.0; n * channels];
        for j in 0..n {
            for d in 0..channels {
                values[d * n + j] = data[j * channels + d];
            }
        }
        Self::from_vec(grid, channels, values)
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of feature columns (pixels).
    #[inline]
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn channel(&self, d: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[d * n..(d + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[d * n..(d + 1) * n]
    }

    pub fn channel_plane(&self, d: usize) -> Plane {
        Plane::from_vec(self.grid, self.channel(d).to_vec()).expect("channel length")
    }

    #[inline]
    pub fn get(&self, d: usize, j: usize) -> f64 {
        self.values[d * self.grid.len() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.channels).map(|d| self.get(d, j)).collect()
    }

    /// Copy as a `pixels x channels` row-major buffer.
    pub fn pixel_major(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n * self.channels];
        for d in 0..self.channels {
            for (j, v) in self.channel(d).iter().enumerate() {
                out[j * self.channels + d] = *v;
            }
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Every channel multiplied elementwise by `window`.
    pub fn windowed(&self, window: &Plane) -> Result<Self> {
        self.grid.ensure_same(window.grid())?;
        let mut out = self.clone();
        for d in 0..self.channels {
            for (v, w) in out.channel_mut(d).iter_mut().zip(window.values()) {
                *v *= w;
            }
        }
        Ok(out)
    }

    /// Per-channel forward transforms.
    pub fn spectra(&self) -> Vec<Spectrum> {
        (0..self.channels).map(|d| dft2(&self.channel_plane(d))).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn circshift(&self, dr: isize, dc: isize) -> Self {
        let planes: Vec<Plane> =
            (0..self.channels).map(|d| self.channel_plane(d).circshift(dr, dc)).collect();
        Self::from_planes(&planes).expect("shape preserved")
    }
}
