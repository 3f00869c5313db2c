//! Frame-by-frame tracking: multi-layer coded correlation filters for
//! translation, a HOG appearance filter for re-detection, and a HOG scale
//! filter evaluated over a target pyramid.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{build_laplacian, learn_codebook, Codebook, DictionaryParams, FeatureStack};
use crate::dcf::{dcf_train, localize, response_map, update_model, CfModel, DualFilter};
use crate::error::{Error, Result};
use crate::features::{layer_features, sample_window, BBox, FeatureKind, LayerSpec, Raster};
use crate::signal::{gaussian_labels, hann_window, resample_periodic, Grid2D, Plane};
use crate::solver::{fof_solve, laplacian_coding, SolverConfig, SweepRecord};

/// Switches that remove one component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Code the features first, then train a plain filter on the codes.
    pub no_jl: bool,
    /// Drop the Laplacian term (`gamma = 0`).
    pub no_l: bool,
    /// Never re-detect.
    pub no_tr: bool,
    /// Keep the initial target size.
    pub no_sh: bool,
}

impl Ablation {
    /// Parses a comma-separated list such as `noJL,noSH`.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut out = Self::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name.to_ascii_lowercase().as_str() {
                "nojl" => out.no_jl = true,
                "nol" => out.no_l = true,
                "notr" => out.no_tr = true,
                "nosh" => out.no_sh = true,
                "none" => {}
                _ => return Err(Error::InvalidParameter(format!("unknown ablation '{name}'"))),
            }
        }
        Ok(out)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.no_jl {
            v.push("noJL");
        }
        if self.no_l {
            v.push("noL");
        }
        if self.no_tr {
            v.push("noTR");
        }
        if self.no_sh {
            v.push("noSH");
        }
        v
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.names();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse_list(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub layers: Vec<LayerSpec>,
    /// Search window = target size times `1 + padding`.
    pub padding: f64,
    /// Re-detection trigger on the fused score.
    pub t1: f64,
    /// Re-detection acceptance on the appearance score.
    pub t2: f64,
    pub scale_count: usize,
    pub scale_step: f64,
    /// Motion-model learning rate.
    pub eta: f64,
    /// Scale-model learning rate.
    pub eta1: f64,
    /// Appearance-model learning rate.
    pub eta2: f64,
    /// Solve and update the motion models on frames where `index % interval == 0`.
    pub update_interval: usize,
    pub codebook_k: usize,
    pub dictionary_iters: usize,
    pub knn_r: usize,
    /// Label bandwidth as a fraction of the target extent, in cells:
    /// `sigma = factor * sqrt(M N) / (1 + padding)`.
    pub label_sigma_factor: f64,
    /// Longest side of the resampled search window, in patch pixels.
    pub max_patch: usize,
    /// Context around the target for the scale filter.
    pub scale_padding: f64,
    /// Context around the target for the appearance filter.
    pub appearance_padding: f64,
    /// Longest side of the scale and appearance patches.
    pub aux_patch: usize,
    pub aux_cell: usize,
    /// Iterations of the standalone coder used by the `noJL` ablation.
    pub separate_coding_iters: usize,
    pub solver: SolverConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSpec { kind: FeatureKind::Gray, cell: 2, weight: 0.25 },
                LayerSpec { kind: FeatureKind::Hog, cell: 8, weight: 0.5 },
                LayerSpec { kind: FeatureKind::Hog, cell: 4, weight: 1.0 },
            ],
            padding: 1.5,
            t1: 0.25,
            t2: 0.38,
            scale_count: 33,
            scale_step: 1.02,
            eta: 0.01,
            eta1: 0.01,
            eta2: 0.01,
            update_interval: 3,
            codebook_k: 10,
            dictionary_iters: 30,
            knn_r: 4,
            label_sigma_factor: 0.1,
            max_patch: 200,
            scale_padding: 0.5,
            appearance_padding: 1.0,
            aux_patch: 128,
            aux_cell: 4,
            separate_coding_iters: 6,
            solver: SolverConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        self.solver.validate()?;
        if self.layers.is_empty() {
            return bad("at least one feature layer is required".into());
        }
        for l in &self.layers {
            if !(l.weight > 0.0) || l.cell == 0 {
                return bad(format!("layer {l:?} needs a positive weight and cell size"));
            }
        }
        if !(self.padding >= 0.0) || !(self.scale_padding >= 0.0) || !(self.appearance_padding >= 0.0) {
            return bad("paddings must be non-negative".into());
        }
        for (name, v) in [("t1", self.t1), ("t2", self.t2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.scale_count % 2 == 0 {
            return bad(format!("scale_count must be odd, got {}", self.scale_count));
        }
        if !(self.scale_step > 1.0) {
            return bad(format!("scale_step must exceed 1, got {}", self.scale_step));
        }
        for (name, v) in [("eta", self.eta), ("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.update_interval == 0 || self.codebook_k == 0 || self.dictionary_iters == 0 {
            return bad("update_interval, codebook_k and dictionary_iters must be positive".into());
        }
        if self.knn_r == 0 || self.separate_coding_iters == 0 {
            return bad("knn_r and separate_coding_iters must be positive".into());
        }
        if !(self.label_sigma_factor > 0.0) {
            return bad("label_sigma_factor must be positive".into());
        }
        if self.aux_cell == 0 || self.aux_patch < 2 * self.aux_cell {
            return bad("aux_patch must cover at least two aux cells".into());
        }
        let coarsest = self.layers.iter().map(|l| l.cell).max().unwrap_or(1);
        if self.max_patch < 2 * coarsest {
            return bad("max_patch must cover at least two cells of every layer".into());
        }
        Ok(())
    }

    fn cell_multiple(&self) -> usize {
        self.layers.iter().fold(1, |acc, l| lcm(acc, l.cell))
    }
}

fn label_sigma(grid: Grid2D, factor: f64, padding: f64) -> f64 {
    factor * (grid.len() as f64).sqrt() / (1.0 + padding)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Patch dimensions for a window of `w x h` image pixels: scaled so the
/// longest side is at most `cap`, then rounded to a multiple of `multiple`.
fn patch_size(w: f64, h: f64, cap: usize, multiple: usize) -> (usize, usize) {
    let shrink = (cap as f64 / w.max(h)).min(1.0);
    let round = |v: f64| {
        let m = multiple as f64;
        (((v * shrink) / m).round().max(2.0) * m) as usize
    };
    let (pw, ph) = (round(w), round(h));
    let limit = (cap / multiple).max(2) * multiple;
    (pw.min(limit), ph.min(limit))
}

#[derive(Clone, Debug)]
enum Coding {
    /// Codes and filter from the joint solver.
    Joint(Codebook),
    /// Codes from the coding terms alone, plain filter on top.
    Separate(Codebook),
    /// Raw features, plain filter.
    Raw,
}

#[derive(Clone, Debug)]
struct MotionLayer {
    spec: LayerSpec,
    window: Plane,
    labels: Plane,
    coding: Coding,
    model: CfModel,
}

/// Plain HOG filter on a box-relative window.
#[derive(Clone, Debug)]
struct HogFilter {
    padding: f64,
    patch: (usize, usize),
    spec: LayerSpec,
    window: Plane,
    labels: Plane,
    model: CfModel,
}

impl HogFilter {
    fn new(frame: &Raster, bbox: &BBox, padding: f64, cfg: &TrackerConfig) -> Result<Self> {
        let (w, h) = (bbox.w * (1.0 + padding), bbox.h * (1.0 + padding));
        let patch = patch_size(w, h, cfg.aux_patch, cfg.aux_cell);
        let spec = LayerSpec { kind: FeatureKind::Hog, cell: cfg.aux_cell, weight: 1.0 };
        let grid = spec.grid_for(patch.0, patch.1)?;
        let window = hann_window(grid)?;
        let labels = gaussian_labels(grid, label_sigma(grid, cfg.label_sigma_factor, padding))?;
        let x = aux_features(frame, bbox, padding, patch, &spec, &window)?;
        let model = CfModel::train(&x, &labels, &window, cfg.solver.lambda)?;
        Ok(Self { padding, patch, spec, window, labels, model })
    }

    fn features(&self, frame: &Raster, bbox: &BBox) -> Result<FeatureStack> {
        aux_features(frame, bbox, self.padding, self.patch, &self.spec, &self.window)
    }

    fn respond(&self, frame: &Raster, bbox: &BBox) -> Result<Plane> {
        response_map(&self.model, &self.features(frame, bbox)?, &self.window)
    }

    fn update(&mut self, frame: &Raster, bbox: &BBox, eta: f64) -> Result<()> {
        let x = self.features(frame, bbox)?;
        let u = dcf_train(&x, &self.labels, &self.window, self.model.lambda())?;
        update_model(&mut self.model, &x, &self.window, &u, eta)
    }

    /// Image pixels per response cell along x and y for a window around `bbox`.
    fn cell_pixels(&self, bbox: &BBox) -> (f64, f64) {
        let grid = self.model.grid();
        (
            bbox.w * (1.0 + self.padding) / grid.cols as f64,
            bbox.h * (1.0 + self.padding) / grid.rows as f64,
        )
    }
}

fn aux_features(
    frame: &Raster,
    bbox: &BBox,
    padding: f64,
    patch: (usize, usize),
    spec: &LayerSpec,
    window: &Plane,
) -> Result<FeatureStack> {
    let (w, h) = (bbox.w * (1.0 + padding), bbox.h * (1.0 + padding));
    let raster = sample_window(frame, bbox.center(), (w, h), patch.0, patch.1)?;
    normalized_features(&raster, spec, window)
}

/// Layer features rescaled so that `||c * x||_F^2 = M N`. Linear-kernel
/// responses then peak near 1 on a match regardless of patch contrast or
/// feature type, which keeps the fixed thresholds meaningful.
fn normalized_features(patch: &Raster, spec: &LayerSpec, window: &Plane) -> Result<FeatureStack> {
    let mut x = layer_features(patch, spec)?;
    let energy = x.windowed(window)?.norm_sq();
    if energy > 1e-12 {
        let s = (x.len() as f64 / energy).sqrt();
        x.values_mut().iter_mut().for_each(|v| *v *= s);
    }
    Ok(x)
}

/// What happened on one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame_index: usize,
    /// Fused translation confidence `s_t`.
    pub score: f64,
    /// Per-layer response maxima.
    pub layer_scores: Vec<f64>,
    /// Motion models were re-solved and blended on this frame.
    pub updated: bool,
    /// A layer solve failed and its cached model was kept.
    pub fallback: bool,
    pub redetect_attempted: bool,
    pub redetected: bool,
    pub redetect_score: Option<f64>,
    /// Size factor adopted by the scale step (1 when unchanged).
    pub scale_factor: f64,
    pub scale_score: Option<f64>,
    /// Joint-solver sweep records per layer index, on update frames.
    pub solver_traces: Vec<(usize, Vec<SweepRecord>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOutput {
    pub bbox: BBox,
    pub score: f64,
}

pub struct Tracker {
    cfg: TrackerConfig,
    patch: (usize, usize),
    fine_grid: Grid2D,
    layers: Vec<MotionLayer>,
    appearance: HogFilter,
    scale: HogFilter,
    bbox: BBox,
    frame_index: usize,
    last_score: f64,
    notes: Vec<String>,
}

impl Tracker {
    /// Builds codebooks, labels and all filters from the first frame.
    pub fn init(frame: &Raster, bb0: BBox, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let bb0 = BBox::new(bb0.x, bb0.y, bb0.w, bb0.h)?;
        let (cx, cy) = bb0.center();
        if cx < 0.0 || cy < 0.0 || cx >= frame.width() as f64 || cy >= frame.height() as f64 {
            return Err(Error::InvalidParameter(format!("initial box centre ({cx:.1}, {cy:.1}) is outside the frame")));
        }
        let patch = patch_size(
            bb0.w * (1.0 + cfg.padding),
            bb0.h * (1.0 + cfg.padding),
            cfg.max_patch,
            cfg.cell_multiple(),
        );
        let mut notes = Vec::new();
        let ab = cfg.ablation;
        if ab.no_jl {
            notes.push("joint learning disabled".to_string());
        }
        if ab.no_l {
            notes.push("laplacian constraint disabled".to_string());
        }
        if ab.no_tr {
            notes.push("re-detection disabled".to_string());
        }
        if ab.no_sh {
            notes.push("scale handling disabled".to_string());
        }

        let window_px = (bb0.w * (1.0 + cfg.padding), bb0.h * (1.0 + cfg.padding));
        let raw_patch = sample_window(frame, bb0.center(), window_px, patch.0, patch.1)?;
        let layers = cfg
            .layers
            .par_iter()
            .enumerate()
            .map(|(i, spec)| init_layer(&raw_patch, spec, &cfg, cfg.seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let fine_grid = layers
            .iter()
            .map(|l| l.model.grid())
            .max_by_key(|g| g.len())
            .expect("at least one layer");

        let appearance = HogFilter::new(frame, &bb0, cfg.appearance_padding, &cfg)?;
        let scale = HogFilter::new(frame, &bb0, cfg.scale_padding, &cfg)?;
        Ok(Self {
            cfg,
            patch,
            fine_grid,
            layers,
            appearance,
            scale,
            bbox: bb0,
            frame_index: 0,
            last_score: 1.0,
            notes,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn last_score(&self) -> f64 {
        self.last_score
    }

    /// Tracker-level remarks such as disabled components.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Size of the resampled search window in patch pixels.
    pub fn patch_size(&self) -> (usize, usize) {
        self.patch
    }

    fn window_px(&self, bbox: &BBox) -> (f64, f64) {
        (bbox.w * (1.0 + self.cfg.padding), bbox.h * (1.0 + self.cfg.padding))
    }

    fn sample_patch(&self, frame: &Raster, bbox: &BBox) -> Result<Raster> {
        sample_window(frame, bbox.center(), self.window_px(bbox), self.patch.0, self.patch.1)
    }

    /// Fused confidence map on the finest layer grid (weights normalized)
    /// plus each layer's own maximum.
    fn fused_response(&self, patch: &Raster) -> Result<(Plane, Vec<f64>)> {
        let responses = self
            .layers
            .par_iter()
            .map(|layer| {
                let x = normalized_features(patch, &layer.spec, &layer.window)?;
                let feats = detection_codes(&x, &layer.coding, &self.cfg)?;
                response_map(&layer.model, &feats, &layer.window)
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = self.layers.iter().map(|l| l.spec.weight).sum();
        let mut fused = Plane::zeros(self.fine_grid);
        let mut maxima = Vec::with_capacity(responses.len());
        for (layer, resp) in self.layers.iter().zip(&responses) {
            maxima.push(resp.max());
            let resized = resample_periodic(resp, self.fine_grid);
            let w = layer.spec.weight / total;
            for (f, r) in fused.values_mut().iter_mut().zip(resized.values()) {
                *f += w * r;
            }
        }
        Ok((fused, maxima))
    }

    /// Processes the next frame and returns the final box and score.
    pub fn track_frame(&mut self, frame: &Raster) -> Result<(FrameOutput, FrameDiagnostics)> {
        self.frame_index += 1;
        let mut diag = FrameDiagnostics { frame_index: self.frame_index, scale_factor: 1.0, ..Default::default() };

        // Translation.
        let patch = self.sample_patch(frame, &self.bbox)?;
        let (fused, maxima) = self.fused_response(&patch)?;
        let peak = localize(&fused);
        let (wx, wy) = self.window_px(&self.bbox);
        let step_x = wx / self.fine_grid.cols as f64;
        let step_y = wy / self.fine_grid.rows as f64;
        let mut bbox = self.bbox.translated(peak.dx as f64 * step_x, peak.dy as f64 * step_y);
        let score = peak.score;
        diag.score = score;
        diag.layer_scores = maxima;

        // Motion-model update.
        if self.frame_index % self.cfg.update_interval == 0 {
            match self.update_motion(frame, &bbox) {
                Ok((fallback, traces)) => {
                    diag.updated = true;
                    diag.fallback = fallback;
                    diag.solver_traces = traces;
                }
                Err(Error::EmptyWindow(msg)) => debug!("frame {}: skipped update, {msg}", self.frame_index),
                Err(e) => return Err(e),
            }
        }

        // Re-detection.
        if score < self.cfg.t1 && !self.cfg.ablation.no_tr {
            diag.redetect_attempted = true;
            let (found, best) = self.redetect(frame, &bbox)?;
            diag.redetect_score = best;
            if let Some(b) = found {
                bbox = b;
                diag.redetected = true;
                self.appearance.update(frame, &bbox, self.cfg.eta2)?;
            }
        }

        // Scale.
        if !self.cfg.ablation.no_sh {
            let (factor, best) = self.scale_search(frame, &bbox)?;
            diag.scale_score = Some(best);
            if best > score {
                bbox = bbox.scaled(factor);
                diag.scale_factor = factor;
                self.scale.update(frame, &bbox, self.cfg.eta1)?;
            }
        }

        self.bbox = bbox;
        self.last_score = score;
        Ok((FrameOutput { bbox, score }, diag))
    }

    /// Re-solves every motion layer at `bbox` and blends it into the model.
    /// Returns whether any layer fell back to its cached model, plus the
    /// joint-solver traces.
    fn update_motion(&mut self, frame: &Raster, bbox: &BBox) -> Result<(bool, Vec<(usize, Vec<SweepRecord>)>)> {
        let patch = self.sample_patch(frame, bbox)?;
        let cfg = &self.cfg;
        let fresh: Vec<Result<Solved>> = self
            .layers
            .par_iter()
            .map(|layer| {
                let x = normalized_features(&patch, &layer.spec, &layer.window)?;
                solve_layer(&x, &layer.coding, &layer.labels, &layer.window, cfg)
            })
            .collect();
        let mut fallback = false;
        let mut traces = Vec::new();
        for (i, (layer, res)) in self.layers.iter_mut().zip(fresh).enumerate() {
            match res {
                Ok(solved) => {
                    update_model(&mut layer.model, &solved.codes, &layer.window, &solved.filter, cfg.eta)?;
                    if let Some(t) = solved.trace {
                        traces.push((i, t));
                    }
                }
                Err(Error::NonFinite(what)) => {
                    warn!("frame {}: {what} diverged, keeping cached model", self.frame_index);
                    fallback = true;
                }
                Err(e) => return Err(e),
            }
        }
        Ok((fallback, traces))
    }

    /// Sliding-window proposals over the whole frame at three sizes, scored
    /// by the appearance filter. Returns the accepted box (if any) and the
    /// best score seen.
    pub fn redetect(&self, frame: &Raster, around: &BBox) -> Result<(Option<BBox>, Option<f64>)> {
        let mut proposals = Vec::new();
        for factor in [0.8, 1.0, 1.2] {
            let (w, h) = (around.w * factor, around.h * factor);
            let (sx, sy) = ((0.25 * w).max(1.0), (0.25 * h).max(1.0));
            let mut cy = 0.5 * h;
            while cy <= frame.height() as f64 - 0.5 * h + 1e-9 {
                let mut cx = 0.5 * w;
                while cx <= frame.width() as f64 - 0.5 * w + 1e-9 {
                    proposals.push(BBox::from_center(cx, cy, w, h));
                    cx += sx;
                }
                cy += sy;
            }
        }
        if proposals.is_empty() {
            return Ok((None, None));
        }
        let scored = proposals
            .par_iter()
            .map(|p| {
                let resp = self.appearance.respond(frame, p)?;
                Ok((localize(&resp), *p))
            })
            .collect::<Result<Vec<_>>>()?;
        // First maximum in proposal order keeps the choice deterministic.
        let (peak, best) = scored
            .iter()
            .fold(None::<&(crate::dcf::Peak, BBox)>, |acc, item| match acc {
                Some(a) if a.0.score >= item.0.score => Some(a),
                _ => Some(item),
            })
            .copied()
            .expect("non-empty proposals");
        if peak.score > self.cfg.t2 {
            let (px, py) = self.appearance.cell_pixels(&best);
            let refined = best.translated(peak.dx as f64 * px, peak.dy as f64 * py);
            Ok((Some(refined), Some(peak.score)))
        } else {
            Ok((None, Some(peak.score)))
        }
    }

    /// Size factors `a^r` and their scale-filter scores.
    pub fn pyramid_scores(&self, frame: &Raster, bbox: &BBox) -> Result<(Vec<f64>, Vec<f64>)> {
        let half = (self.cfg.scale_count / 2) as i32;
        let factors: Vec<f64> = (-half..=half).map(|r| self.cfg.scale_step.powi(r)).collect();
        let scores = factors
            .par_iter()
            .map(|&b| Ok(self.scale.respond(frame, &bbox.scaled(b))?.max()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((factors, scores))
    }

    /// Scores the target pyramid around `bbox`; returns the best size
    /// factor and its score.
    pub fn scale_search(&self, frame: &Raster, bbox: &BBox) -> Result<(f64, f64)> {
        let half = (self.cfg.scale_count / 2) as i32;
        let (factors, scores) = self.pyramid_scores(frame, bbox)?;
        // Ties resolve toward the unchanged size.
        let mut best = half as usize;
        for (i, &s) in scores.iter().enumerate() {
            let closer = (i as i32 - half).abs() < (best as i32 - half).abs();
            if s > scores[best] || (s == scores[best] && closer) {
                best = i;
            }
        }
        Ok((factors[best], scores[best]))
    }
}

fn init_layer(patch: &Raster, spec: &LayerSpec, cfg: &TrackerConfig, seed: u64) -> Result<MotionLayer> {
    let grid = spec.grid_for(patch.width(), patch.height())?;
    let window = hann_window(grid)?;
    let x = normalized_features(patch, spec, &window)?;
    let labels = gaussian_labels(grid, label_sigma(grid, cfg.label_sigma_factor, cfg.padding))?;
    let ab = cfg.ablation;
    let coding = if ab.no_jl && ab.no_l {
        Coding::Raw
    } else {
        // More atoms than channels leaves the codes unidentified along the
        // null space of B, so the layer uses at most D atoms.
        let params = DictionaryParams {
            atoms: cfg.codebook_k.min(x.channels()),
            iterations: cfg.dictionary_iters,
            ..Default::default()
        };
        let fit = learn_codebook(&x, &params, seed)?;
        if ab.no_jl {
            Coding::Separate(fit.codebook)
        } else {
            Coding::Joint(fit.codebook)
        }
    };
    let solved = solve_layer(&x, &coding, &labels, &window, cfg)?;
    let model = CfModel::new(&solved.codes, &window, solved.filter, cfg.solver.lambda)?;
    Ok(MotionLayer { spec: *spec, window, labels, coding, model })
}

/// Codes of a search patch: the coding terms of the joint model
/// (reconstruction plus Laplacian on the patch's own graph), without the
/// filter coupling, since the target position in the new frame is unknown.
fn detection_codes(x: &FeatureStack, coding: &Coding, cfg: &TrackerConfig) -> Result<FeatureStack> {
    match coding {
        Coding::Joint(book) | Coding::Separate(book) => {
            let gamma = if cfg.ablation.no_l { 0.0 } else { cfg.solver.gamma };
            let graph = if gamma > 0.0 { Some(build_laplacian(x, cfg.knn_r.min(x.len() - 1))?) } else { None };
            laplacian_coding(x, book, graph.as_ref(), gamma, cfg.separate_coding_iters)
        }
        Coding::Raw => Ok(x.clone()),
    }
}

struct Solved {
    codes: FeatureStack,
    filter: DualFilter,
    trace: Option<Vec<SweepRecord>>,
}

/// Features and filter for one layer under the configured ablation.
fn solve_layer(
    x: &FeatureStack,
    coding: &Coding,
    labels: &Plane,
    window: &Plane,
    cfg: &TrackerConfig,
) -> Result<Solved> {
    let no_l = cfg.ablation.no_l;
    let gamma = if no_l { 0.0 } else { cfg.solver.gamma };
    let graph = if no_l || gamma == 0.0 { None } else { Some(build_laplacian(x, cfg.knn_r.min(x.len() - 1))?) };
    match coding {
        Coding::Joint(book) => {
            let solver = SolverConfig { gamma, ..cfg.solver.clone() };
            let sol = fof_solve(x, book, graph.as_ref(), labels, window, &solver)?;
            Ok(Solved { codes: sol.codes, filter: sol.filter, trace: Some(sol.trace) })
        }
        Coding::Separate(book) => {
            let codes = laplacian_coding(x, book, graph.as_ref(), gamma, cfg.separate_coding_iters)?;
            let filter = dcf_train(&codes, labels, window, cfg.solver.lambda)?;
            Ok(Solved { codes, filter, trace: None })
        }
        Coding::Raw => {
            let filter = dcf_train(x, labels, window, cfg.solver.lambda)?;
            Ok(Solved { codes: x.clone(), filter, trace: None })
        }
    }
}
