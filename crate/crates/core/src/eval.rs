//! Sequence loading, per-frame metrics, precision/success curves and the
//! batch benchmark runner.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{Rgb, RgbImage};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{BBox, Raster};
use crate::solver::SweepRecord;
use crate::tracker::{FrameDiagnostics, Tracker, TrackerConfig};

/// Distance between box centres.
pub fn center_error(pred: &BBox, gt: &BBox) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    (px - gx).hypot(py - gy)
}

/// Intersection over union.
pub fn overlap_iou(pred: &BBox, gt: &BBox) -> f64 {
    let iw = (pred.x + pred.w).min(gt.x + gt.w) - pred.x.max(gt.x);
    let ih = (pred.y + pred.h).min(gt.y + gt.h) - pred.y.max(gt.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (pred.area() + gt.area() - inter)
}

pub const PRECISION_THRESHOLD: f64 = 20.0;
pub const PRECISION_MAX: usize = 50;
pub const SUCCESS_POINTS: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    /// Value at threshold `t`, if `t` is on the grid.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.thresholds.iter().position(|&x| (x - t).abs() < 1e-9).map(|i| self.values[i])
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Pairs of predictions and present ground-truth boxes.
fn scored_pairs<'a>(preds: &'a [BBox], gts: &'a [Option<BBox>]) -> Result<Vec<(&'a BBox, &'a BBox)>> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch(preds.len(), gts.len()));
    }
    Ok(preds.iter().zip(gts).filter_map(|(p, g)| g.as_ref().map(|g| (p, g))).collect())
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Fraction of frames with centre error `<= t` for `t = 0, 1, ..., 50`.
/// Frames without ground truth are left out of the denominator.
pub fn precision_curve(preds: &[BBox], gts: &[Option<BBox>]) -> Result<Curve> {
    let errors: Vec<f64> = scored_pairs(preds, gts)?.into_iter().map(|(p, g)| center_error(p, g)).collect();
    let thresholds: Vec<f64> = (0..=PRECISION_MAX).map(|t| t as f64).collect();
    let values = thresholds
        .iter()
        .map(|&t| fraction(errors.iter().filter(|&&e| e <= t).count(), errors.len()))
        .collect();
    Ok(Curve { thresholds, values })
}

/// Fraction of frames with IoU strictly above `t` on the 101-point grid
/// `t = 0, 0.01, ..., 1`.
pub fn success_curve(preds: &[BBox], gts: &[Option<BBox>]) -> Result<Curve> {
    let ious: Vec<f64> = scored_pairs(preds, gts)?.into_iter().map(|(p, g)| overlap_iou(p, g)).collect();
    let thresholds: Vec<f64> = (0..SUCCESS_POINTS).map(|i| i as f64 / (SUCCESS_POINTS - 1) as f64).collect();
    let values = thresholds
        .iter()
        .map(|&t| fraction(ious.iter().filter(|&&v| v > t).count(), ious.len()))
        .collect();
    Ok(Curve { thresholds, values })
}

/// Area under the success curve as the mean of its samples.
pub fn success_auc(preds: &[BBox], gts: &[Option<BBox>]) -> Result<f64> {
    Ok(success_curve(preds, gts)?.mean())
}

/// One sequence in OTB layout.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    /// 0-based boxes; `None` marks frames without usable ground truth.
    pub ground_truth: Vec<Option<BBox>>,
}

impl Sequence {
    /// Reads `<dir>/img/*.{jpg,png}` and, if present, `<dir>/groundtruth_rect.txt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Dataset(format!("{} has no sequence name", dir.display())))?;
        let img = dir.join("img");
        let mut frames: Vec<PathBuf> = fs::read_dir(&img)
            .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", img.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(Error::Dataset(format!("{} contains no jpg/png frames", img.display())));
        }
        let gt_path = dir.join("groundtruth_rect.txt");
        let ground_truth = if gt_path.exists() {
            let gt = parse_ground_truth(&fs::read_to_string(&gt_path)?)?;
            if gt.len() > frames.len() {
                return Err(Error::Dataset(format!(
                    "{}: {} ground-truth lines for {} frames",
                    name,
                    gt.len(),
                    frames.len()
                )));
            }
            let mut gt = gt;
            if gt.len() < frames.len() {
                warn!("{name}: ground truth covers {} of {} frames", gt.len(), frames.len());
                gt.resize(frames.len(), None);
            }
            gt
        } else {
            vec![None; frames.len()]
        };
        Ok(Self { name, frames, ground_truth })
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.first().is_some_and(|g| g.is_some())
    }

    pub fn absent_frames(&self) -> usize {
        self.ground_truth.iter().filter(|g| g.is_none()).count()
    }
}

/// Parses 1-based `x,y,w,h` lines separated by commas, tabs or spaces.
/// Non-finite or non-positive sizes become `None`.
pub fn parse_ground_truth(text: &str) -> Result<Vec<Option<BBox>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split([',', '\t', ' ']).filter(|s| !s.is_empty()).collect();
        if fields.len() != 4 {
            return Err(Error::Dataset(format!("ground truth line {}: expected 4 fields, got '{line}'", lineno + 1)));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::Dataset(format!("ground truth line {}: bad number '{f}'", lineno + 1)))?;
        }
        out.push(BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).ok());
    }
    Ok(out)
}

/// Tracking output for one sequence.
#[derive(Clone, Debug)]
pub struct TrackResult {
    pub name: String,
    pub boxes: Vec<BBox>,
    pub scores: Vec<f64>,
    pub frame_seconds: Vec<f64>,
    pub diagnostics: Vec<FrameDiagnostics>,
    pub notes: Vec<String>,
}

impl TrackResult {
    pub fn fps(&self) -> f64 {
        let total: f64 = self.frame_seconds.iter().sum();
        if total > 0.0 {
            self.frame_seconds.len() as f64 / total
        } else {
            0.0
        }
    }

    /// `frame_index,x,y,w,h,score` per frame, 1-based frame index and
    /// coordinates (the ground-truth convention).
    pub fn write_records<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (i, (b, s)) in self.boxes.iter().zip(&self.scores).enumerate() {
            writeln!(out, "{},{:.3},{:.3},{:.3},{:.3},{:.6}", i + 1, b.x + 1.0, b.y + 1.0, b.w, b.h, s)?;
        }
        Ok(())
    }

    /// Solver sweep records of every update frame.
    pub fn write_traces<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "frame,layer,sweep,lagrangian_start,lagrangian_end,objective,coding_residual,window_residual,mu")?;
        for d in &self.diagnostics {
            for (layer, trace) in &d.solver_traces {
                for (k, r) in trace.iter().enumerate() {
                    write_trace_row(out, d.frame_index + 1, *layer, k + 1, r)?;
                }
            }
        }
        Ok(())
    }
}

fn write_trace_row<W: Write>(out: &mut W, frame: usize, layer: usize, sweep: usize, r: &SweepRecord) -> std::io::Result<()> {
    writeln!(
        out,
        "{frame},{layer},{sweep},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.3e}",
        r.lagrangian_start, r.lagrangian_end, r.objective, r.coding_residual, r.window_residual, r.mu
    )
}

/// Tracks a sequence of frames supplied in order by `frame_at`.
pub fn track_frames<F>(count: usize, mut frame_at: F, init: BBox, cfg: &TrackerConfig) -> Result<TrackResult>
where
    F: FnMut(usize) -> Result<Raster>,
{
    if count == 0 {
        return Err(Error::Dataset("sequence has no frames".into()));
    }
    let first = frame_at(0)?;
    let start = Instant::now();
    let mut tracker = Tracker::init(&first, init, cfg.clone())?;
    let mut result = TrackResult {
        name: String::new(),
        boxes: vec![init],
        scores: vec![1.0],
        frame_seconds: vec![start.elapsed().as_secs_f64()],
        diagnostics: vec![FrameDiagnostics { frame_index: 0, score: 1.0, scale_factor: 1.0, ..Default::default() }],
        notes: tracker.notes().to_vec(),
    };
    for i in 1..count {
        let frame = frame_at(i)?;
        let t0 = Instant::now();
        let (out, diag) = tracker.track_frame(&frame)?;
        result.frame_seconds.push(t0.elapsed().as_secs_f64());
        result.boxes.push(out.bbox);
        result.scores.push(out.score);
        result.diagnostics.push(diag);
    }
    Ok(result)
}

/// Tracks one loaded sequence. `init` overrides the first ground-truth box.
pub fn track_sequence(seq: &Sequence, init: Option<BBox>, cfg: &TrackerConfig) -> Result<TrackResult> {
    let init = init.or(seq.ground_truth[0]).ok_or_else(|| {
        Error::InvalidParameter(format!("{}: no initial box (ground truth missing and none given)", seq.name))
    })?;
    let mut res = track_frames(seq.frames.len(), |i| Raster::load(&seq.frames[i]), init, cfg)?;
    res.name = seq.name.clone();
    Ok(res)
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub tracker: TrackerConfig,
    pub emit_traces: bool,
    pub emit_frames: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub name: String,
    pub frames: usize,
    pub absent: usize,
    pub pr20: f64,
    pub auc: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BenchReport {
    pub sequences: Vec<SequenceSummary>,
    pub failures: Vec<(String, String)>,
    pub mean_pr20: f64,
    pub mean_auc: f64,
}

impl BenchReport {
    pub fn all_failed(&self) -> bool {
        self.sequences.is_empty() && !self.failures.is_empty()
    }
}

/// Sub-directories of `root` that contain an `img` folder, sorted by name.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("img").is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Header describing the metric conventions.
pub fn report_header(cfg: &TrackerConfig) -> String {
    format!(
        "# lambda={} gamma={} ablation={} seed={}\n# PR: centre error <= t px, t=0..{PRECISION_MAX}, representative t={PRECISION_THRESHOLD}\n# SR: IoU > t on a {SUCCESS_POINTS}-point grid t=0,0.01,...,1; AUC = mean of samples\n",
        cfg.solver.lambda, cfg.solver.gamma, cfg.ablation, cfg.seed
    )
}

/// Tracks every sequence under `root` (in parallel) and writes result
/// files, curves and summaries into `out`. One failing sequence does not
/// stop the others.
pub fn run_benchmark(root: &Path, opts: &BenchOptions, out: &Path) -> Result<BenchReport> {
    opts.tracker.validate()?;
    let dirs = discover_sequences(root)?;
    fs::create_dir_all(out)?;
    if dirs.is_empty() {
        warn!("no sequences found under {}", root.display());
    }

    let outcomes: Vec<(String, Result<(SequenceSummary, Curve, Curve)>)> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let res = evaluate_one(dir, opts, out);
            (name, res)
        })
        .collect();

    let mut report = BenchReport::default();
    let mut curves = BufWriter::new(fs::File::create(out.join("curves.csv"))?);
    writeln!(curves, "name,kind,threshold,value")?;
    for (name, res) in outcomes {
        match res {
            Ok((summary, pr, sr)) => {
                for (kind, c) in [("precision", &pr), ("success", &sr)] {
                    for (t, v) in c.thresholds.iter().zip(&c.values) {
                        writeln!(curves, "{},{kind},{t:.2},{v:.6}", summary.name)?;
                    }
                }
                report.sequences.push(summary);
            }
            Err(e) => {
                warn!("sequence {name} failed: {e}");
                report.failures.push((name, e.to_string()));
            }
        }
    }
    curves.flush()?;
    let n = report.sequences.len();
    if n > 0 {
        report.mean_pr20 = report.sequences.iter().map(|s| s.pr20).sum::<f64>() / n as f64;
        report.mean_auc = report.sequences.iter().map(|s| s.auc).sum::<f64>() / n as f64;
    }

    let mut summary = BufWriter::new(fs::File::create(out.join("summary.csv"))?);
    writeln!(summary, "name,PR@20,SR_AUC,fps")?;
    for s in &report.sequences {
        writeln!(summary, "{},{:.4},{:.4},{:.2}", s.name, s.pr20, s.auc, s.fps)?;
    }
    if n > 0 {
        let fps = report.sequences.iter().map(|s| s.fps).sum::<f64>() / n as f64;
        writeln!(summary, "mean,{:.4},{:.4},{:.2}", report.mean_pr20, report.mean_auc, fps)?;
    }
    summary.flush()?;

    let mut text = BufWriter::new(fs::File::create(out.join("report.txt"))?);
    write!(text, "{}", report_header(&opts.tracker))?;
    writeln!(text, "{}", format_table(&report))?;
    text.flush()?;
    info!("benchmark: {} sequences, {} failures", n, report.failures.len());
    Ok(report)
}

fn evaluate_one(dir: &Path, opts: &BenchOptions, out: &Path) -> Result<(SequenceSummary, Curve, Curve)> {
    let seq = Sequence::load(dir)?;
    let result = track_sequence(&seq, None, &opts.tracker)?;
    write_outputs(&seq, &result, opts, out)?;
    let pr = precision_curve(&result.boxes, &seq.ground_truth)?;
    let sr = success_curve(&result.boxes, &seq.ground_truth)?;
    let summary = SequenceSummary {
        name: seq.name.clone(),
        frames: seq.frames.len(),
        absent: seq.absent_frames(),
        pr20: pr.at(PRECISION_THRESHOLD).unwrap_or(0.0),
        auc: sr.mean(),
        fps: result.fps(),
    };
    Ok((summary, pr, sr))
}

/// Result file plus the optional traces and annotated frames.
pub fn write_outputs(seq: &Sequence, result: &TrackResult, opts: &BenchOptions, out: &Path) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(out.join(format!("{}.txt", seq.name)))?);
    result.write_records(&mut f)?;
    f.flush()?;
    if opts.emit_traces {
        let dir = out.join("traces");
        fs::create_dir_all(&dir)?;
        let mut t = BufWriter::new(fs::File::create(dir.join(format!("{}.csv", seq.name)))?);
        result.write_traces(&mut t)?;
        t.flush()?;
    }
    if opts.emit_frames {
        let dir = out.join("frames").join(&seq.name);
        fs::create_dir_all(&dir)?;
        for (i, path) in seq.frames.iter().enumerate() {
            let mut img = Raster::load(path)?.to_rgb_image();
            if let Some(gt) = &seq.ground_truth[i] {
                draw_box(&mut img, gt, Rgb([0, 220, 0]));
            }
            draw_box(&mut img, &result.boxes[i], Rgb([230, 20, 20]));
            img.save(dir.join(format!("{:04}.png", i + 1)))?;
        }
    }
    Ok(())
}

/// Fixed-width text table of a report.
pub fn format_table(report: &BenchReport) -> String {
    let mut s = format!("{:<24} {:>7} {:>7} {:>8} {:>7}\n", "sequence", "PR@20", "SR_AUC", "fps", "absent");
    for q in &report.sequences {
        s.push_str(&format!("{:<24} {:>7.4} {:>7.4} {:>8.2} {:>7}\n", q.name, q.pr20, q.auc, q.fps, q.absent));
    }
    if !report.sequences.is_empty() {
        s.push_str(&format!("{:<24} {:>7.4} {:>7.4}\n", "mean", report.mean_pr20, report.mean_auc));
    }
    for (name, err) in &report.failures {
        s.push_str(&format!("FAILED {name}: {err}\n"));
    }
    s
}

fn draw_box(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.x + b.w).round() as i64;
    let y1 = (b.y + b.h).round() as i64;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn center_error_cases() {
        let g = b(10.0, 10.0, 20.0, 30.0);
        assert_eq!(center_error(&g, &g), 0.0);
        assert_eq!(center_error(&g.translated(3.0, 4.0), &g), 5.0);
    }

    #[test]
    fn iou_cases() {
        let u = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(overlap_iou(&u, &u), 1.0);
        assert_eq!(overlap_iou(&u, &u.translated(2.0, 0.0)), 0.0);
        assert!((overlap_iou(&u, &u.translated(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn precision_half_and_half() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let preds = vec![g.translated(10.0, 0.0), g.translated(30.0, 0.0)];
        let gts = vec![Some(g); 2];
        let pr = precision_curve(&preds, &gts).unwrap();
        assert_eq!(pr.at(20.0), Some(0.5));
        assert_eq!(pr.thresholds.len(), 51);
        assert!(precision_curve(&preds, &gts[..1]).is_err());
    }

    #[test]
    fn absent_ground_truth_is_excluded() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let preds = vec![g, g.translated(100.0, 0.0)];
        let pr = precision_curve(&preds, &[Some(g), None]).unwrap();
        assert_eq!(pr.at(0.0), Some(1.0));
    }

    #[test]
    fn success_grid_conventions() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let perfect = success_auc(&[g; 3], &[Some(g); 3]).unwrap();
        assert!((perfect - 100.0 / 101.0).abs() < 1e-12);
        let half = b(0.0, 0.0, 10.0, 5.0);
        let auc = success_auc(&[half], &[Some(g)]).unwrap();
        assert!((auc - 50.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_parsing() {
        let gt = parse_ground_truth("1,1,10,20\n5\t6\t7\t8\n3 4 5 6\nNaN,NaN,NaN,NaN\n0,0,0,0\n").unwrap();
        assert_eq!(gt.len(), 5);
        assert_eq!(gt[0], Some(b(0.0, 0.0, 10.0, 20.0)));
        assert_eq!(gt[1], Some(b(4.0, 5.0, 7.0, 8.0)));
        assert_eq!(gt[2], Some(b(2.0, 3.0, 5.0, 6.0)));
        assert_eq!((gt[3], gt[4]), (None, None));
        assert!(parse_ground_truth("1,2,3\n").is_err());
        assert!(parse_ground_truth("a,b,c,d\n").is_err());
    }
}
