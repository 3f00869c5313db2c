//! Two-dimensional real/complex planes, their discrete Fourier transforms,
//! and the window and label generators used by every correlation filter.
//!
//! Conventions used throughout the crate:
//!
//! * the forward transform is unnormalized, the inverse divides by `M*N`;
//! * `S(x)` is the circulant matrix with `S(x) v = x (*) v` (circular
//!   convolution), so `S(x) S(x)^T` has eigenvalues `|dft2(x)|^2`;
//! * Gaussian labels peak at index `(0, 0)`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative bound on the imaginary part an inverse transform may discard.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid2D {
    pub rows: usize,
    pub cols: usize,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub(crate) fn ensure_same(&self, other: Grid2D) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch { expected: *self, found: other })
        }
    }
}

impl fmt::Display for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Real scalar field over a grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Plane {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "plane on {grid} needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                values.push(f(r, c));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.grid.index(row, col);
        self.values[i] = value;
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// Elementwise product with another plane on the same grid.
    pub fn hadamard(&self, other: &Plane) -> Result<Self> {
        self.grid.ensure_same(other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    /// Circular shift: `out(r, c) = self(r - dr, c - dc)`.
    pub fn circshift(&self, dr: isize, dc: isize) -> Self {
        let (m, n) = (self.grid.rows as isize, self.grid.cols as isize);
        Self::from_fn(self.grid, |r, c| {
            let sr = (r as isize - dr).rem_euclid(m) as usize;
            let sc = (c as isize - dc).rem_euclid(n) as usize;
            self.get(sr, sc)
        })
    }
}

/// Complex scalar field over a grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_vec(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum on {grid} needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[self.grid.index(row, col)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `(1 - rate) * self + rate * other`, in place.
    pub fn blend(&mut self, other: &Spectrum, rate: f64) -> Result<()> {
        self.grid.ensure_same(other.grid)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a * (1.0 - rate) + *b * rate;
        }
        Ok(())
    }

    /// Largest deviation from `X(m, n) = conj(X(-m, -n))`.
    pub fn hermitian_defect(&self) -> f64 {
        let Grid2D { rows, cols } = self.grid;
        let mut worst = 0.0f64;
        for r in 0..rows {
            for c in 0..cols {
                let mirror = self.get((rows - r) % rows, (cols - c) % cols);
                worst = worst.max((self.get(r, c) - mirror.conj()).norm());
            }
        }
        worst
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// In-place separable 2-D FFT (unnormalized in both directions).
fn fft2_in_place(grid: Grid2D, data: &mut [Complex64], direction: Direction) {
    let Grid2D { rows, cols } = grid;
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = match direction {
            Direction::Forward => (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows)),
            Direction::Inverse => (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows)),
        };
        if cols > 1 {
            row_fft.process(data);
        }
        if rows > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); rows];
            for c in 0..cols {
                for r in 0..rows {
                    column[r] = data[r * cols + c];
                }
                col_fft.process(&mut column);
                for r in 0..rows {
                    data[r * cols + c] = column[r];
                }
            }
        }
    });
}

/// Unnormalized forward 2-D DFT of a real plane.
pub fn dft2(plane: &Plane) -> Spectrum {
    let mut data: Vec<Complex64> =
        plane.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(plane.grid, &mut data, Direction::Forward);
    Spectrum { grid: plane.grid, values: data }
}

/// Unnormalized forward 2-D DFT of a complex field.
pub fn dft2_complex(spectrum: &Spectrum) -> Spectrum {
    let mut data = spectrum.values.clone();
    fft2_in_place(spectrum.grid, &mut data, Direction::Forward);
    Spectrum { grid: spectrum.grid, values: data }
}

/// Normalized inverse 2-D DFT keeping the complex result.
pub fn idft2_complex(spectrum: &Spectrum) -> Spectrum {
    let mut data = spectrum.values.clone();
    fft2_in_place(spectrum.grid, &mut data, Direction::Inverse);
    let scale = 1.0 / spectrum.grid.len() as f64;
    for v in &mut data {
        *v *= scale;
    }
    Spectrum { grid: spectrum.grid, values: data }
}

/// Normalized inverse 2-D DFT, returning the real part.
///
/// Fails with [`Error::ImaginaryResidue`] when the largest imaginary part
/// exceeds `1e-8 * ||s||`, which only happens if `s` was not
/// Hermitian-symmetric.
pub fn idft2(spectrum: &Spectrum) -> Result<Plane> {
    let inverse = idft2_complex(spectrum);
    let residue = inverse.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let bound = IMAGINARY_TOLERANCE * spectrum.norm_sq().sqrt();
    if residue > bound {
        return Err(Error::ImaginaryResidue { residue, bound });
    }
    Ok(Plane { grid: spectrum.grid, values: inverse.values.into_iter().map(|v| v.re).collect() })
}

/// Separable Hann window `0.25 (1 - cos(2 pi m/(M-1))) (1 - cos(2 pi n/(N-1)))`.
pub fn hann_window(grid: Grid2D) -> Result<Plane> {
    if grid.rows < 2 || grid.cols < 2 {
        return Err(Error::GridTooSmall(grid));
    }
    let rows = hann_1d(grid.rows);
    let cols = hann_1d(grid.cols);
    Ok(Plane::from_fn(grid, |r, c| rows[r] * cols[c]))
}

fn hann_1d(len: usize) -> Vec<f64> {
    let denom = (len - 1) as f64;
    (0..len).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos())).collect()
}

/// Default label bandwidth: `sqrt(M*N) / 10`.
pub fn default_label_sigma(grid: Grid2D) -> f64 {
    (grid.len() as f64).sqrt() / 10.0
}

/// Gaussian regression targets with the peak wrapped to index `(0, 0)`.
pub fn gaussian_labels(grid: Grid2D, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let (cr, cc) = (grid.rows / 2, grid.cols / 2);
    let denom = 2.0 * sigma * sigma;
    // The centered Gaussian is evaluated at (r + cr, c + cc) so its mean lands on (0, 0).
    Ok(Plane::from_fn(grid, |r, c| {
        let sr = (r + cr) % grid.rows;
        let sc = (c + cc) % grid.cols;
        let dr = sr as f64 - cr as f64;
        let dc = sc as f64 - cc as f64;
        (-(dr * dr + dc * dc) / denom).exp()
    }))
}

/// `S(base) v` computed spectrally, i.e. the circular convolution `base (*) v`.
pub fn circulant_apply(base: &Plane, v: &Plane) -> Result<Plane> {
    base.grid.ensure_same(v.grid)?;
    let b = dft2(base);
    let x = dft2(v);
    let product: Vec<Complex64> = b.values.iter().zip(&x.values).map(|(p, q)| p * q).collect();
    idft2(&Spectrum { grid: base.grid, values: product })
}

/// Circular cross-correlation `out(s) = sum_t a(t + s) b(t)`, computed spectrally.
pub fn circular_correlation(a: &Plane, b: &Plane) -> Result<Plane> {
    a.grid.ensure_same(b.grid)?;
    let fa = dft2(a);
    let fb = dft2(b);
    let product: Vec<Complex64> =
        fa.values.iter().zip(&fb.values).map(|(p, q)| p * q.conj()).collect();
    idft2(&Spectrum { grid: a.grid, values: product })
}

/// Elementwise spectrum product, optionally conjugating the right operand.
pub fn spectrum_product(a: &Spectrum, b: &Spectrum, conjugate_b: bool) -> Result<Spectrum> {
    a.grid.ensure_same(b.grid)?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(p, q)| if conjugate_b { p * q.conj() } else { p * q })
        .collect();
    Ok(Spectrum { grid: a.grid, values })
}

/// Samples a periodic plane on a new grid with wrap-around bilinear
/// interpolation. Both grids are taken to cover the same physical extent,
/// so displacement `d` on the target grid maps to `d * src/dst` on the
/// source grid.
pub fn resample_periodic(plane: &Plane, target: Grid2D) -> Plane {
    let src = plane.grid;
    if src == target {
        return plane.clone();
    }
    let sr = src.rows as f64 / target.rows as f64;
    let sc = src.cols as f64 / target.cols as f64;
    Plane::from_fn(target, |r, c| {
        // Signed displacement on the target grid, mapped to the source grid.
        let dr = wrap_signed(r, target.rows) as f64 * sr;
        let dc = wrap_signed(c, target.cols) as f64 * sc;
        let r0 = dr.floor();
        let c0 = dc.floor();
        let fr = dr - r0;
        let fc = dc - c0;
        let at = |rr: f64, cc: f64| {
            let ri = (rr as isize).rem_euclid(src.rows as isize) as usize;
            let ci = (cc as isize).rem_euclid(src.cols as isize) as usize;
            plane.get(ri, ci)
        };
        (1.0 - fr) * (1.0 - fc) * at(r0, c0)
            + (1.0 - fr) * fc * at(r0, c0 + 1.0)
            + fr * (1.0 - fc) * at(r0 + 1.0, c0)
            + fr * fc * at(r0 + 1.0, c0 + 1.0)
    })
}

/// Index `i` on a periodic axis of length `len` as a signed displacement.
#[inline]
pub fn wrap_signed(i: usize, len: usize) -> isize {
    if i > len / 2 {
        i as isize - len as isize
    } else {
        i as isize
    }
}
