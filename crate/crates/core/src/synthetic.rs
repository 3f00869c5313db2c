//! Deterministic synthetic sequences: a high-contrast textured target
//! moving over a weaker textured background.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{BBox, Raster};

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;
pub const TARGET_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    /// Constant velocity in pixels per frame.
    Translate { vx: f64, vy: f64 },
    /// Centre fixed, size multiplied by `rate` every frame.
    Zoom { rate: f64 },
    /// Stationary, then jumps by `(dx, dy)` at frame `at`.
    Teleport { at: usize, dx: f64, dy: f64 },
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub frames: usize,
    pub start: BBox,
    pub motion: Motion,
    pub seed: u64,
}

impl Scenario {
    pub fn translation(seed: u64) -> Self {
        Self {
            name: "translate".into(),
            frames: 100,
            start: BBox { x: 30.0, y: 40.0, w: TARGET_SIZE as f64, h: TARGET_SIZE as f64 },
            motion: Motion::Translate { vx: 1.6, vy: 1.2 },
            seed,
        }
    }

    pub fn stationary(seed: u64) -> Self {
        Self {
            name: "static".into(),
            frames: 50,
            start: BBox { x: 128.0, y: 88.0, w: TARGET_SIZE as f64, h: TARGET_SIZE as f64 },
            motion: Motion::Translate { vx: 0.0, vy: 0.0 },
            seed,
        }
    }

    pub fn zoom(seed: u64) -> Self {
        Self {
            name: "zoom".into(),
            frames: 60,
            start: BBox { x: 128.0, y: 88.0, w: TARGET_SIZE as f64, h: TARGET_SIZE as f64 },
            motion: Motion::Zoom { rate: 1.01 },
            seed,
        }
    }

    pub fn teleport(seed: u64) -> Self {
        Self {
            name: "teleport".into(),
            frames: 60,
            start: BBox { x: 40.0, y: 88.0, w: TARGET_SIZE as f64, h: TARGET_SIZE as f64 },
            motion: Motion::Teleport { at: 30, dx: 176.0, dy: 0.0 },
            seed,
        }
    }

    /// Ground-truth box on frame `t` (0-based).
    pub fn truth(&self, t: usize) -> BBox {
        let b = self.start;
        match self.motion {
            Motion::Translate { vx, vy } => b.translated(vx * t as f64, vy * t as f64),
            Motion::Zoom { rate } => b.scaled(rate.powi(t as i32)),
            Motion::Teleport { at, dx, dy } => {
                if t >= at {
                    b.translated(dx, dy)
                } else {
                    b
                }
            }
        }
    }

    pub fn render(&self) -> SyntheticSequence {
        let background = smooth_texture(FRAME_WIDTH, FRAME_HEIGHT, 16, 60.0, self.seed);
        let background = Raster::new(
            FRAME_WIDTH,
            FRAME_HEIGHT,
            background.values().iter().map(|v| 110.0 + v).collect(),
        )
        .expect("background size");
        let texture = target_texture(self.seed.wrapping_add(0x5eed));
        let mut frames = Vec::with_capacity(self.frames);
        let mut truth = Vec::with_capacity(self.frames);
        for t in 0..self.frames {
            let bb = self.truth(t);
            frames.push(compose(&background, &texture, &bb));
            truth.push(bb);
        }
        SyntheticSequence { name: self.name.clone(), frames, truth }
    }
}

pub struct SyntheticSequence {
    pub name: String,
    pub frames: Vec<Raster>,
    pub truth: Vec<BBox>,
}

impl SyntheticSequence {
    /// Writes `<root>/<name>/img/0001.png ...` and a 1-based
    /// `groundtruth_rect.txt`.
    pub fn write_otb(&self, root: &Path) -> Result<()> {
        let dir = root.join(&self.name);
        fs::create_dir_all(dir.join("img"))?;
        for (i, f) in self.frames.iter().enumerate() {
            f.save_png(&dir.join("img").join(format!("{:04}.png", i + 1)))?;
        }
        let mut gt = fs::File::create(dir.join("groundtruth_rect.txt"))?;
        for b in &self.truth {
            writeln!(gt, "{:.3},{:.3},{:.3},{:.3}", b.x + 1.0, b.y + 1.0, b.w, b.h)?;
        }
        Ok(())
    }
}

/// Bilinearly upsampled random lattice: values in roughly `[-amp, amp]`.
fn smooth_texture(width: usize, height: usize, period: usize, amp: f64, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gw, gh) = (width / period + 2, height / period + 2);
    let coarse = Raster::from_fn(gw, gh, |_, _| rng.random_range(-amp..amp));
    let fine_amp = 0.35 * amp;
    let fine: Vec<f64> = (0..width * height).map(|_| rng.random_range(-fine_amp..fine_amp)).collect();
    Raster::from_fn(width, height, |x, y| {
        coarse.bilinear(x as f64 / period as f64, y as f64 / period as f64) + fine[y * width + x]
    })
}

/// Blocky high-contrast pattern with a bright frame, so the target is
/// distinctive at every scale.
fn target_texture(seed: u64) -> Raster {
    let n = TARGET_SIZE;
    let blocks = smooth_texture(n, n, 8, 1.0, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let cells: Vec<f64> = (0..64).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Raster::from_fn(n, n, |x, y| {
        let border = x < 4 || y < 4 || x >= n - 4 || y >= n - 4;
        if border {
            return 250.0;
        }
        let cell = cells[(y / 8) * 8 + x / 8];
        (128.0 + 80.0 * cell + 30.0 * blocks.get(x, y)).clamp(0.0, 255.0)
    })
}

fn compose(background: &Raster, texture: &Raster, bb: &BBox) -> Raster {
    let (tw, th) = (texture.width() as f64, texture.height() as f64);
    Raster::from_fn(background.width(), background.height(), |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let u = (px - bb.x) / bb.w * tw;
        let v = (py - bb.y) / bb.h * th;
        if u >= 0.0 && v >= 0.0 && u < tw && v < th {
            texture.bilinear(u - 0.5, v - 0.5)
        } else {
            background.get(x, y)
        }
    })
}
