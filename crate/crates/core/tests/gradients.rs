//! Central-difference checks of every differentiable op, in f64.

mod common;

use common::*;
use d3d::autograd::{grad_check, Graph, Var};
use d3d::{Result, Tensor};
use rand::Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight in the loss.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let r = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Offsets whose fractional part lies in [0.2, 0.8], so a step of EPS never
/// crosses an integer and the bilinear kink.
fn fractional_offsets(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let whole = r.random_range(-2i32..2) as f64;
        whole + r.random_range(0.2..0.8)
    })
    .unwrap()
}

fn check(name: &str, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) {
    let rep = grad_check(f, inputs, EPS).unwrap();
    assert!(
        rep.max_rel_error < TOL,
        "{name}: max rel error {:e} at {:?} (per input {:?})",
        rep.max_rel_error,
        rep.worst,
        rep.per_input
    );
}

#[test]
fn conv3d_gradients() {
    let mut r = rng(21);
    for i in 0..5 {
        let (ci, co) = (r.random_range(1..4), r.random_range(1..4));
        let (t, h, w) = (r.random_range(1..4), r.random_range(2..5), r.random_range(2..5));
        let x = uniform(&mut r, &[ci, t, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[co, ci, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        check(
            "conv3d",
            |g, v| {
                let y = g.conv3d(v[0], v[1], Some(v[2]))?;
                project(g, y, i)
            },
            &[x, wt, b],
        );
    }
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(22);
    for i in 0..5 {
        let (ci, co) = (r.random_range(1..4), r.random_range(1..4));
        let (h, w) = (r.random_range(2..6), r.random_range(2..6));
        let k = [1, 3][i as usize % 2];
        let x = uniform(&mut r, &[ci, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[co, ci, k, k], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        check(
            "conv2d",
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]))?;
                project(g, y, 100 + i)
            },
            &[x, wt, b],
        );
    }
}

#[test]
fn d3d_gradients_including_offsets() {
    let mut r = rng(23);
    for i in 0..5 {
        let (ci, co) = (r.random_range(1..3), r.random_range(1..3));
        let (t, h, w) = (r.random_range(1..4), r.random_range(2..5), r.random_range(2..5));
        let x = uniform(&mut r, &[ci, t, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[co, ci, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let off = fractional_offsets(&mut r, &[54, t, h, w]);
        check(
            "d3d",
            |g, v| {
                let y = g.d3d(v[0], v[1], Some(v[2]), v[3])?;
                project(g, y, 200 + i)
            },
            &[x, wt, b, off],
        );
    }
}

#[test]
fn d3d_layer_with_generated_offsets() {
    // offsets come from a conv3d of the input. |x| < 1 over 54 taps with
    // |gw| < 0.002 moves them by < 0.11, so fractions stay inside (0, 1)
    let mut r = rng(24);
    for i in 0..5 {
        let x = uniform(&mut r, &[2, 2, 4, 4], -1.0, 1.0);
        let wt = uniform(&mut r, &[2, 2, 3, 3, 3], -1.0, 1.0);
        let gw = uniform(&mut r, &[54, 2, 3, 3, 3], -0.002, 0.002);
        let gb = fractional_offsets(&mut r, &[54]);
        check(
            "d3d layer",
            |g, v| {
                let off = g.conv3d(v[0], v[2], Some(v[3]))?;
                let y = g.d3d(v[0], v[1], None, off)?;
                project(g, y, 300 + i)
            },
            &[x, wt, gw, gb],
        );
    }
}

#[test]
fn elementwise_and_layout_gradients() {
    let mut r = rng(25);
    for i in 0..5 {
        // keep relu inputs away from the kink
        let a = Tensor::from_fn(&[4, 2, 3, 3], |_| {
            let v: f64 = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .unwrap();
        let b = uniform(&mut r, &[4, 2, 3, 3], -1.0, 1.0);
        check(
            "relu/add/mul/scale/fold/shuffle/concat",
            |g, v| {
                let p = g.relu(v[0]);
                let q = g.mul(p, v[1])?;
                let s = g.add(q, v[0])?;
                let s = g.scale(s, 0.7);
                let c = g.concat_channels(&[s, v[1]])?;
                let f = g.fold_time(c)?;
                let u = g.pixel_shuffle(f, 2)?;
                project(g, u, 400 + i)
            },
            &[a, b],
        );
    }
}

#[test]
fn mse_gradient() {
    let mut r = rng(26);
    for _ in 0..5 {
        let a = uniform(&mut r, &[1, 4, 5], 0.0, 1.0);
        let b = uniform(&mut r, &[1, 4, 5], 0.0, 1.0);
        check("mse", |g, v| g.mse(v[0], v[1]), &[a, b]);
    }
}
