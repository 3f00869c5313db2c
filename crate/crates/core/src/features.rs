//! Grayscale rasters, search-window sampling, and the two hand-crafted
//! feature layers (cell-averaged intensity and 31-channel HOG).

use std::f64::consts::PI;
use std::path::Path;

use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::coding::FeatureStack;
use crate::error::{Error, Result};
use crate::signal::Grid2D;

/// Single-channel image with intensities on the 0..255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "raster {width}x{height} with {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Pixel value with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at pixel-index coordinates, border replicated.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn from_image(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => Self {
                width: g.width() as usize,
                height: g.height() as usize,
                values: g.as_raw().iter().map(|&v| v as f64).collect(),
            },
            other => {
                let rgb = other.to_rgb8();
                let values = rgb
                    .pixels()
                    .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                    .collect();
                Self { width: rgb.width() as usize, height: rgb.height() as usize, values }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_image(&image::open(path)?))
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_image().save(path)?;
        Ok(())
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8;
            Rgb([v, v, v])
        })
    }
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("bad box {x},{y},{w},{h}")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - 0.5 * w, y: cy - 0.5 * h, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        Self::from_center(cx, cy, self.w * factor, self.h * factor)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }
}

/// Resamples the image region of size `w x h` (image pixels) centred at
/// `(cx, cy)` onto an `out_w x out_h` raster. Samples outside the image
/// replicate the border.
pub fn sample_window(
    image: &Raster,
    center: (f64, f64),
    size: (f64, f64),
    out_w: usize,
    out_h: usize,
) -> Result<Raster> {
    let (cx, cy) = center;
    let (w, h) = size;
    let (x0, y0, x1, y1) = (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
    if !(w > 0.0 && h > 0.0) || !(x0.is_finite() && y0.is_finite()) {
        return Err(Error::EmptyWindow(format!("{w}x{h} at ({cx}, {cy})")));
    }
    if x1 <= 0.0 || y1 <= 0.0 || x0 >= image.width() as f64 || y0 >= image.height() as f64 {
        return Err(Error::EmptyWindow(format!("{w:.1}x{h:.1} at ({cx:.1}, {cy:.1})")));
    }
    let (sx, sy) = (w / out_w as f64, h / out_h as f64);
    Ok(Raster::from_fn(out_w, out_h, |c, r| {
        let x = x0 + (c as f64 + 0.5) * sx - 0.5;
        let y = y0 + (r as f64 + 0.5) * sy - 0.5;
        image.bilinear(x, y)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Gray,
    Hog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: FeatureKind,
    pub cell: usize,
    pub weight: f64,
}

impl LayerSpec {
    pub fn channels(&self) -> usize {
        match self.kind {
            FeatureKind::Gray => 1,
            FeatureKind::Hog => HOG_CHANNELS,
        }
    }

    pub fn grid_for(&self, patch_w: usize, patch_h: usize) -> Result<Grid2D> {
        Grid2D::new(patch_h / self.cell, patch_w / self.cell)
    }
}

/// Computes the layer's features on an already-sampled patch.
pub fn layer_features(patch: &Raster, spec: &LayerSpec) -> Result<FeatureStack> {
    if spec.cell == 0 {
        return Err(Error::InvalidParameter("cell size must be positive".into()));
    }
    match spec.kind {
        FeatureKind::Gray => gray_cells(patch, spec.cell),
        FeatureKind::Hog => hog_features(patch, spec.cell),
    }
}

/// Samples the window around `bbox` (inflated by `1 + padding`) at the
/// patch resolution and computes one layer.
pub fn extract_features(
    image: &Raster,
    bbox: &BBox,
    padding: f64,
    patch: (usize, usize),
    spec: &LayerSpec,
) -> Result<FeatureStack> {
    let window = sample_window(
        image,
        bbox.center(),
        (bbox.w * (1.0 + padding), bbox.h * (1.0 + padding)),
        patch.0,
        patch.1,
    )?;
    layer_features(&window, spec)
}

/// Cell-averaged intensity scaled to [0, 1] with the patch mean removed.
pub fn gray_cells(patch: &Raster, cell: usize) -> Result<FeatureStack> {
    let grid = Grid2D::new(patch.height() / cell, patch.width() / cell)?;
    let inv = 1.0 / (cell * cell) as f64 / 255.0;
    let mut values = vec![0.0; grid.len()];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let mut s = 0.0;
            for y in r * cell..(r + 1) * cell {
                for x in c * cell..(c + 1) * cell {
                    s += patch.get(x, y);
                }
            }
            values[grid.index(r, c)] = s * inv;
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    FeatureStack::from_vec(grid, 1, values)
}

pub const HOG_CHANNELS: usize = 31;
const SIGNED_BINS: usize = 18;
const UNSIGNED_BINS: usize = 9;
const TRUNCATION: f64 = 0.2;
const TEXTURE_WEIGHT: f64 = 0.2357;

/// Felzenszwalb-style HOG: 18 contrast-sensitive bins, 9 insensitive
/// bins and 4 texture-energy channels per cell.
///
/// Orientation 0 corresponds to a gradient pointing along +x (a vertical edge).
pub fn hog_features(patch: &Raster, cell: usize) -> Result<FeatureStack> {
    let grid = Grid2D::new(patch.height() / cell, patch.width() / cell)?;
    let (rows, cols) = (grid.rows, grid.cols);
    let n = grid.len();

    let mut hist = vec![0.0; n * SIGNED_BINS];
    for y in 0..rows * cell {
        for x in 0..cols * cell {
            let (xi, yi) = (x as isize, y as isize);
            let gx = patch.get_clamped(xi + 1, yi) - patch.get_clamped(xi - 1, yi);
            let gy = patch.get_clamped(xi, yi + 1) - patch.get_clamped(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle / (2.0 * PI) * SIGNED_BINS as f64).round() as usize) % SIGNED_BINS;
            let cidx = (y / cell) * cols + x / cell;
            hist[cidx * SIGNED_BINS + bin] += mag;
        }
    }

    let unsigned = |cidx: usize, o: usize| hist[cidx * SIGNED_BINS + o] + hist[cidx * SIGNED_BINS + o + UNSIGNED_BINS];
    let energy: Vec<f64> = (0..n)
        .map(|i| (0..UNSIGNED_BINS).map(|o| unsigned(i, o).powi(2)).sum())
        .collect();
    let energy_at = |r: isize, c: isize| {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        energy[r * cols + c]
    };

    let mut out = vec![0.0; HOG_CHANNELS * n];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let (ri, ci) = (r as isize, c as isize);
            let mut norms = [0.0; 4];
            for (slot, (dr, dc)) in [(-1, -1), (-1, 1), (1, -1), (1, 1)].into_iter().enumerate() {
                let s = energy_at(ri, ci) + energy_at(ri + dr, ci) + energy_at(ri, ci + dc) + energy_at(ri + dr, ci + dc);
                norms[slot] = 1.0 / (s + 1e-10).sqrt();
            }
            let mut texture = [0.0; 4];
            for o in 0..SIGNED_BINS {
                let h = hist[i * SIGNED_BINS + o];
                let v: f64 = norms.iter().map(|nv| (h * nv).min(TRUNCATION)).sum();
                out[o * n + i] = 0.5 * v;
            }
            for o in 0..UNSIGNED_BINS {
                let h = unsigned(i, o);
                let mut v = 0.0;
                for (slot, nv) in norms.iter().enumerate() {
                    let t = (h * nv).min(TRUNCATION);
                    v += t;
                    texture[slot] += t;
                }
                out[(SIGNED_BINS + o) * n + i] = 0.5 * v;
            }
            for (slot, t) in texture.iter().enumerate() {
                out[(SIGNED_BINS + UNSIGNED_BINS + slot) * n + i] = TEXTURE_WEIGHT * t;
            }
        }
    }
    FeatureStack::from_vec(grid, HOG_CHANNELS, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.random_range(0.0..200.0))
    }

    #[test]
    fn constant_image_gives_zero_gray_layer() {
        let img = Raster::filled(40, 40, 117.0);
        let spec = LayerSpec { kind: FeatureKind::Gray, cell: 2, weight: 1.0 };
        let f = extract_features(&img, &BBox::new(10.0, 10.0, 8.0, 8.0).unwrap(), 1.5, (20, 20), &spec).unwrap();
        assert_eq!(f.grid(), Grid2D::square(10).unwrap());
        assert!(f.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn vertical_edge_peaks_in_first_unsigned_bin() {
        let img = Raster::from_fn(32, 32, |x, _| if x < 16 { 20.0 } else { 220.0 });
        let f = hog_features(&img, 4).unwrap();
        let cell = f.grid().index(3, 3); // touches the edge at x = 15/16
        let bins: Vec<f64> = (0..UNSIGNED_BINS).map(|o| f.get(SIGNED_BINS + o, cell)).collect();
        let argmax = bins.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 0, "{bins:?}");
        assert!(bins[0] > 0.0);
    }

    #[test]
    fn hog_ignores_intensity_offset() {
        let a = noise(24, 24, 3);
        let b = Raster::new(24, 24, a.values().iter().map(|v| v + 40.0).collect()).unwrap();
        let (fa, fb) = (hog_features(&a, 4).unwrap(), hog_features(&b, 4).unwrap());
        for (x, y) in fa.values().iter().zip(fb.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hog_is_bounded_and_flat_regions_vanish() {
        let f = hog_features(&noise(32, 24, 5), 8).unwrap();
        assert_eq!(f.channels(), HOG_CHANNELS);
        assert_eq!(f.grid(), Grid2D::new(3, 4).unwrap());
        assert!(f.values().iter().all(|v| (0.0..=4.0 * TRUNCATION).contains(v)));
        let flat = hog_features(&Raster::filled(16, 16, 9.0), 4).unwrap();
        assert!(flat.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_fully_outside_is_rejected() {
        let img = noise(20, 20, 1);
        let err = sample_window(&img, (-30.0, 5.0), (10.0, 10.0), 8, 8).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow(_)));
        // Partially outside is fine and replicates the border.
        let w = sample_window(&img, (0.0, 0.0), (4.0, 4.0), 4, 4).unwrap();
        assert_eq!(w.get(0, 0), img.get(0, 0));
    }

    #[test]
    fn identity_window_reproduces_pixels() {
        let img = noise(16, 12, 2);
        let w = sample_window(&img, (8.0, 6.0), (16.0, 12.0), 16, 12).unwrap();
        for (a, b) in w.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb_uses_luminance_weights() {
        let rgb = RgbImage::from_pixel(2, 1, Rgb([100, 50, 200]));
        let r = Raster::from_image(&DynamicImage::ImageRgb8(rgb));
        assert!((r.get(1, 0) - (29.9 + 29.35 + 22.8)).abs() < 1e-9);
    }

    #[test]
    fn bbox_helpers() {
        let b = BBox::new(10.0, 20.0, 4.0, 6.0).unwrap();
        assert_eq!(b.center(), (12.0, 23.0));
        let s = b.scaled(2.0);
        assert_eq!((s.w, s.h, s.center()), (8.0, 12.0, (12.0, 23.0)));
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
