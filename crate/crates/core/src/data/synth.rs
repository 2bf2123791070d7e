//! Procedural video clips: a smooth textured background plus a few rigid,
//! striped patterns translating at constant sub-pixel velocities.
//!
//! Every frame is evaluated from closed-form continuous functions, so
//! translating a pattern by `t * v` is exact rather than resampled.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Largest pattern speed in HR pixels per frame.
pub const MAX_SPEED: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Wave {
    /// Cycles per pixel along (y, x).
    pub freq: (f64, f64),
    pub phase: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Disk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub shape: Shape,
    /// Position at t = 0, (y, x).
    pub center: (f64, f64),
    /// Pixels per frame, (y, x).
    pub velocity: (f64, f64),
    pub half_size: (f64, f64),
    /// Stripe texture inside the pattern.
    pub stripes: Wave,
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub background_level: f64,
    pub background: Vec<Wave>,
    /// Background translation in pixels per frame, (y, x).
    pub pan: (f64, f64),
    pub patterns: Vec<Pattern>,
}

fn smoothstep(e: f64) -> f64 {
    let t = e.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Pattern {
    /// Coverage in [0, 1] at pattern-local offset (dy, dx), with a one-pixel soft edge.
    fn coverage(&self, dy: f64, dx: f64) -> f64 {
        let inside = match self.shape {
            Shape::Rect => (self.half_size.0 - dy.abs()).min(self.half_size.1 - dx.abs()),
            Shape::Disk => self.half_size.0 - (dy * dy + dx * dx).sqrt(),
        };
        smoothstep(inside + 0.5)
    }

    fn texture(&self, dy: f64, dx: f64) -> f64 {
        let s = &self.stripes;
        self.base + s.amp * (TAU * (s.freq.0 * dy + s.freq.1 * dx) + s.phase).sin()
    }
}

impl Scene {
    pub fn intensity(&self, y: f64, x: f64, t: f64) -> f64 {
        let (by, bx) = (y - self.pan.0 * t, x - self.pan.1 * t);
        let mut v = self.background_level
            + self
                .background
                .iter()
                .map(|w| w.amp * (TAU * (w.freq.0 * by + w.freq.1 * bx) + w.phase).cos())
                .sum::<f64>();
        for p in &self.patterns {
            let dy = y - p.center.0 - p.velocity.0 * t;
            let dx = x - p.center.1 - p.velocity.1 * t;
            let m = p.coverage(dy, dx);
            if m > 0.0 {
                v = v * (1.0 - m) + m * p.texture(dy, dx);
            }
        }
        v.clamp(0.0, 1.0)
    }

    /// Frame `t` as `[1, H, W]`.
    pub fn render(&self, t: f64) -> Tensor<f32> {
        Tensor::from_fn(&[1, self.height, self.width], |i| {
            let (y, x) = (i / self.width, i % self.width);
            self.intensity(y as f64, x as f64, t) as f32
        })
        .expect("scene extents are non-zero")
    }

    /// Random scene with 1-3 patterns; pattern speeds are at most [`MAX_SPEED`].
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_waves = 6;
        let background = (0..n_waves)
            .map(|_| {
                let f = rng.random_range(0.01..0.08);
                let a: f64 = rng.random_range(0.0..TAU);
                Wave {
                    freq: (f * a.sin(), f * a.cos()),
                    phase: rng.random_range(0.0..TAU),
                    amp: rng.random_range(0.02..0.07),
                }
            })
            .collect();
        let pan_speed = rng.random_range(0.0..1.0);
        let pan_dir: f64 = rng.random_range(0.0..TAU);
        let n_patterns = rng.random_range(1..=3);
        let (hf, wf) = (height as f64, width as f64);
        let patterns = (0..n_patterns)
            .map(|_| {
                let speed = rng.random_range(0.3..MAX_SPEED);
                let dir: f64 = rng.random_range(0.0..TAU);
                let size = rng.random_range(0.12..0.3) * hf.min(wf);
                let f = rng.random_range(0.03..0.12);
                let a: f64 = rng.random_range(0.0..TAU);
                Pattern {
                    shape: if rng.random_bool(0.5) { Shape::Rect } else { Shape::Disk },
                    center: (rng.random_range(0.2..0.8) * hf, rng.random_range(0.2..0.8) * wf),
                    velocity: (speed * dir.sin(), speed * dir.cos()),
                    half_size: (size, size * rng.random_range(0.6..1.4)),
                    stripes: Wave {
                        freq: (f * a.sin(), f * a.cos()),
                        phase: rng.random_range(0.0..TAU),
                        amp: rng.random_range(0.15..0.35),
                    },
                    base: rng.random_range(0.35..0.65),
                }
            })
            .collect();
        Scene {
            height,
            width,
            background_level: rng.random_range(0.3..0.7),
            background,
            pan: (pan_speed * pan_dir.sin(), pan_speed * pan_dir.cos()),
            patterns,
        }
    }
}

/// Deterministic `frames`-long HR clip of `height x width` pixels.
pub fn synth_sequence(seed: u64, frames: usize, height: usize, width: usize) -> Vec<Tensor<f32>> {
    let scene = Scene::random(seed, height, width);
    (0..frames).map(|t| scene.render(t as f64)).collect()
}
