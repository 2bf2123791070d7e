//! Finite-difference check of every recorded op on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Step used for the central differences.
pub const SUITE_EPS: f64 = 1e-4;
/// Pass threshold on the max relative error.
pub const SUITE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub instances: usize,
    pub components: usize,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < SUITE_TOL
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[0.1, 1)` with random sign: clear of the relu kink.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_| {
        let v = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Offsets with fractional parts in `[0.2, 0.8]`, away from bilinear kinks.
fn fractional(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_| rng.random_range(-2i32..2) as f64 + rng.random_range(0.2..0.8))
}

/// `sum(y * r)` for a random `r` drawn from `rng`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(y).shape().to_vec();
    let r = g.constant(uniform(&mut rng, &shape, -1.0, 1.0)?);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn case(rng: &mut ChaCha8Rng, op: &str) -> Result<Case> {
    let s: u64 = rng.random();
    let (ci, co) = (rng.random_range(1..3), rng.random_range(1..3));
    let (t, h, w) = (rng.random_range(1..4), rng.random_range(2..5), rng.random_range(2..5));
    Ok(match op {
        "conv3d" => (
            vec![
                uniform(rng, &[ci, t, h, w], -1.0, 1.0)?,
                uniform(rng, &[co, ci, 3, 3, 3], -1.0, 1.0)?,
                uniform(rng, &[co], -1.0, 1.0)?,
            ],
            Box::new(move |g, v| {
                let y = g.conv3d(v[0], v[1], Some(v[2]))?;
                project(g, y, s)
            }),
        ),
        "conv2d" => (
            vec![
                uniform(rng, &[ci, h, w], -1.0, 1.0)?,
                uniform(rng, &[co, ci, 3, 3], -1.0, 1.0)?,
                uniform(rng, &[co], -1.0, 1.0)?,
            ],
            Box::new(move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]))?;
                project(g, y, s)
            }),
        ),
        "d3d" => (
            vec![
                uniform(rng, &[ci, t, h, w], -1.0, 1.0)?,
                uniform(rng, &[co, ci, 3, 3, 3], -1.0, 1.0)?,
                uniform(rng, &[co], -1.0, 1.0)?,
                fractional(rng, &[54, t, h, w])?,
            ],
            Box::new(move |g, v| {
                let y = g.d3d(v[0], v[1], Some(v[2]), v[3])?;
                project(g, y, s)
            }),
        ),
        "relu" => (
            vec![signed_away_from_zero(rng, &[ci, h, w])?],
            Box::new(move |g, v| {
                let y = g.relu(v[0]);
                project(g, y, s)
            }),
        ),
        "add/mul/scale" => (
            vec![uniform(rng, &[ci, h, w], -1.0, 1.0)?, uniform(rng, &[ci, h, w], -1.0, 1.0)?],
            Box::new(move |g, v| {
                let m = g.mul(v[0], v[1])?;
                let a = g.add(m, v[0])?;
                let y = g.scale(a, 0.7);
                project(g, y, s)
            }),
        ),
        "concat/fold/pixel_shuffle" => (
            vec![uniform(rng, &[1, 2, h, w], -1.0, 1.0)?, uniform(rng, &[1, 2, h, w], -1.0, 1.0)?],
            Box::new(move |g, v| {
                let c = g.concat_channels(&[v[0], v[1]])?;
                let f = g.fold_time(c)?;
                let y = g.pixel_shuffle(f, 2)?;
                project(g, y, s)
            }),
        ),
        "mse" => (
            vec![uniform(rng, &[1, h, w], 0.0, 1.0)?, uniform(rng, &[1, h, w], 0.0, 1.0)?],
            Box::new(|g, v| g.mse(v[0], v[1])),
        ),
        _ => unreachable!("unknown suite op {op}"),
    })
}

pub const SUITE_OPS: [&str; 7] = [
    "conv3d",
    "conv2d",
    "d3d",
    "relu",
    "add/mul/scale",
    "concat/fold/pixel_shuffle",
    "mse",
];

/// Check every op in [`SUITE_OPS`] on `instances` random instances, in f64.
pub fn gradcheck_suite(seed: u64, instances: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SUITE_OPS
        .iter()
        .map(|&op| {
            let mut entry = SuiteEntry {
                op,
                instances,
                components: 0,
                max_rel_error: 0.0,
            };
            for _ in 0..instances {
                let (inputs, f) = case(&mut rng, op)?;
                let rep = grad_check(f, &inputs, SUITE_EPS)?;
                entry.components += rep.components;
                entry.max_rel_error = entry.max_rel_error.max(rep.max_rel_error);
            }
            Ok(entry)
        })
        .collect()
}
