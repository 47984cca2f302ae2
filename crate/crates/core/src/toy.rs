//! Synthetic moving-shape sequences with events from the crossing simulator.
//!
//! Each sequence is a static textured background with a few textured squares
//! translating at constant velocity. Frames are rendered with exact box
//! coverage at the edges, and events come from [`CrossingSimulator`] driven at
//! `substeps` renders per frame interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Sequence;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::sim::{CrossingSimulator, ThresholdModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub size: usize,
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub substeps: usize,
    pub num_shapes: usize,
    pub min_side: f64,
    pub max_side: f64,
    /// Pixels per frame interval.
    pub max_speed: f64,
    pub threshold: ThresholdModel,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 64,
            num_sequences: 8,
            frames_per_sequence: 12,
            frame_interval: 0.01,
            substeps: 8,
            num_shapes: 2,
            min_side: 12.0,
            max_side: 22.0,
            max_speed: 2.0,
            threshold: ThresholdModel { theta: 0.2, noise_sigma: 0.03, log_eps: 1e-3 },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        Self {
            kx: rng.random_range(0.1..0.6),
            ky: rng.random_range(0.1..0.6),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amp,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.amp * (self.kx * x + self.ky * y + self.phase).sin()
    }
}

#[derive(Clone, Debug)]
struct Square {
    x0: f64,
    y0: f64,
    side: f64,
    vx: f64,
    vy: f64,
    base: f64,
    texture: Wave,
}

#[derive(Clone, Debug)]
struct Scene {
    size: usize,
    background: Vec<f64>,
    squares: Vec<Square>,
}

/// Length of `[a, a + 1]` covered by `[lo, hi]`.
fn overlap(a: f64, lo: f64, hi: f64) -> f64 {
    (hi.min(a + 1.0) - lo.max(a)).max(0.0)
}

impl Scene {
    fn random(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.size;
        let waves: Vec<Wave> = (0..3).map(|_| Wave::random(rng, 0.08)).collect();
        let level = rng.random_range(0.3..0.5);
        let background = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                level + waves.iter().map(|w| w.at(x, y)).sum::<f64>()
            })
            .collect();
        let frames = (cfg.frames_per_sequence - 1) as f64;
        let squares = (0..cfg.num_shapes)
            .map(|_| {
                let side = rng.random_range(cfg.min_side..=cfg.max_side);
                let speed = rng.random_range(0.5 * cfg.max_speed..=cfg.max_speed);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let (vx, vy) = (speed * dir.cos(), speed * dir.sin());
                // keep the square inside the image for the whole sequence
                let mut span = |v: f64| {
                    let travel = v * frames;
                    let lo = 1.0f64.max(1.0 - travel);
                    let hi = (n as f64 - side - 1.0).min(n as f64 - side - 1.0 - travel);
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                };
                let x0 = span(vx);
                let y0 = span(vy);
                let bright = rng.random_bool(0.5);
                let base = if bright { rng.random_range(0.75..0.95) } else { rng.random_range(0.05..0.15) };
                Square { x0, y0, side, vx, vy, base, texture: Wave::random(rng, 0.04) }
            })
            .collect();
        Self { size: n, background, squares }
    }

    /// Scene at `s` frame intervals after the start.
    fn render(&self, s: f64) -> Frame {
        let n = self.size;
        let mut data: Vec<f32> = self.background.iter().map(|&v| v as f32).collect();
        for sq in &self.squares {
            let (left, top) = (sq.x0 + sq.vx * s, sq.y0 + sq.vy * s);
            let (right, bottom) = (left + sq.side, top + sq.side);
            let x_range = (left.floor().max(0.0) as usize)..(right.ceil().min(n as f64) as usize);
            let y_range = (top.floor().max(0.0) as usize)..(bottom.ceil().min(n as f64) as usize);
            for y in y_range {
                let cy = overlap(y as f64, top, bottom);
                for x in x_range.clone() {
                    let c = overlap(x as f64, left, right) * cy;
                    if c > 0.0 {
                        let v = sq.base + sq.texture.at(x as f64 - left, y as f64 - top);
                        let p = &mut data[y * n + x];
                        *p = ((1.0 - c) * *p as f64 + c * v) as f32;
                    }
                }
            }
        }
        Frame::from_vec(n, n, data).expect("square buffer")
    }
}

/// Generates `cfg.num_sequences` sequences deterministically from `cfg.seed`.
pub fn toy_dataset(cfg: &ToyConfig) -> Result<Vec<Sequence>> {
    cfg.threshold.validate()?;
    if cfg.size == 0 || cfg.frames_per_sequence < 2 || cfg.substeps == 0 || !(cfg.frame_interval > 0.0) {
        return Err(Error::InvalidArgument(format!("bad toy dataset config {cfg:?}")));
    }
    if !(cfg.min_side > 0.0 && cfg.max_side >= cfg.min_side && cfg.max_side < cfg.size as f64 - 2.0) {
        return Err(Error::InvalidArgument("toy square sides must fit inside the image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.num_sequences)
        .map(|k| {
            let scene = Scene::random(cfg, &mut rng);
            let first = scene.render(0.0);
            let mut sim = CrossingSimulator::new(&first, 0.0, &cfg.threshold, cfg.seed.wrapping_mul(1000).wrapping_add(k as u64))?;
            let mut frames = vec![first];
            let mut times = vec![0.0];
            for f in 1..cfg.frames_per_sequence {
                for s in 1..=cfg.substeps {
                    let u = (f - 1) as f64 + s as f64 / cfg.substeps as f64;
                    let img = scene.render(u);
                    sim.advance(&img, u * cfg.frame_interval)?;
                    if s == cfg.substeps {
                        frames.push(img);
                    }
                }
                times.push(f as f64 * cfg.frame_interval);
            }
            Sequence::new(frames, times, sim.finish()?)
        })
        .collect()
}
