//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Each criterion produces a log line made only of seeded quantities, so
//! the determinism check can compare lines byte for byte. Wall-clock times
//! are printed next to the line but are never part of it.
//!
//! Run with `cargo test -p d3d-core --test acceptance -- --nocapture`.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use d3d::autograd::{gradcheck_suite, AdamConfig};
use d3d::conv::conv3d;
use d3d::data::{load_frame, luminance_of, synth_sequence, DegradedSequence};
use d3d::deform::{d3d, OffsetField};
use d3d::metrics::{psnr, ssim};
use d3d::network::{count_flops, offset_branch_params, BlockKind, NetworkConfig};
use d3d::train::{evaluate_bicubic, evaluate_model, TrainConfig, Trainer};
use d3d::Tensor;
use rand::Rng;

// 1
const REDUCTION_CONFIGS: usize = 24;
const REDUCTION_F32_TOL: f64 = 1e-6;
const REDUCTION_BUDGET: Duration = Duration::from_secs(60);
// 2
const GRAD_INSTANCES: usize = 5;
const GRAD_TOL: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
// 3
const BRUTE_INSTANCES: usize = 12;
const BRUTE_TOL: f64 = 1e-6;
// 4
const OFFSET_BRANCH: usize = 186_732;
const OFFSET_BRANCH_STATED: f64 = 0.19e6;
const OFFSET_BRANCH_TOL: f64 = 0.02;
const TOTAL_PARAMS_STATED: f64 = 2.58e6;
const TOTAL_PARAMS_TOL: f64 = 0.15;
// 5
const FLOPS_STATED: f64 = 408.82e9;
const FLOPS_FACTOR: f64 = 2.0;
// 6
const DESK_TRAIN: u64 = 50;
const DESK_TEST: u64 = 10;
const DESK_HR: usize = 64;
const DESK_FRAMES: usize = 9;
const DESK_STEPS: usize = 1500;
const DESK_SHORT_STEPS: usize = 20;
const DESK_MARGIN_DB: f64 = 1.0;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);
// 7
const PSNR_ONE_LEVEL: f64 = 48.131;
const PSNR_ONE_LEVEL_TOL: f64 = 1e-3;
const SSIM_SELF_TOL: f64 = 1e-9;
const SSIM_BRUTE_TOL: f64 = 1e-6;
// 8
const VID4_ENV: &str = "D3D_VID4";
const VID4_PSNR: f64 = 23.76;
const VID4_SSIM: f64 = 0.631;
const VID4_PSNR_TOL: f64 = 0.15;
const VID4_SSIM_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    /// Outside a band that is informative only.
    SoftMiss,
    Skip,
}

impl Status {
    fn of(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    fn soft(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::SoftMiss
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::SoftMiss => "SOFT-MISS",
            Status::Skip => "SKIP",
        }
    }
}

struct Outcome {
    id: u8,
    status: Status,
    log: String,
    elapsed: Duration,
}

fn timed(id: u8, f: impl FnOnce() -> (Status, String)) -> Outcome {
    let t0 = Instant::now();
    let (status, log) = f();
    Outcome {
        id,
        status,
        log,
        elapsed: t0.elapsed(),
    }
}

fn over_budget(o: &mut Outcome, budget: Duration) {
    if o.elapsed > budget && o.status == Status::Pass {
        o.status = Status::Fail;
        o.log.push_str(&format!(" | over budget of {}s", budget.as_secs()));
    }
}

fn report(o: &Outcome) {
    println!(
        "criterion {} [{}] {}  ({:.1}s)",
        o.id,
        o.status.tag(),
        o.log,
        o.elapsed.as_secs_f64()
    );
}

fn c1_reduction(seed: u64) -> (Status, String) {
    let mut r = rng(seed);
    let (mut exact, mut worst32) = (0, 0.0f64);
    for _ in 0..REDUCTION_CONFIGS {
        let (ci, co) = (r.random_range(1..=8), r.random_range(1..=8));
        let (t, h, w) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8));
        let x = uniform(&mut r, &[ci, t, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[co, ci, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let zero = OffsetField::zeros(27, t, h, w).unwrap();
        let a = d3d(&x, &wt, Some(&b), &zero).unwrap();
        let c = conv3d(&x, &wt, Some(&b)).unwrap();
        exact += a.bit_eq(&c) as usize;

        let (x, wt, b) = (x.cast::<f32>(), wt.cast::<f32>(), b.cast::<f32>());
        let zero = OffsetField::<f32>::zeros(27, t, h, w).unwrap();
        let a = d3d(&x, &wt, Some(&b), &zero).unwrap().cast::<f64>();
        let c = conv3d(&x, &wt, Some(&b)).unwrap().cast::<f64>();
        worst32 = worst32.max(max_rel(a.data(), c.data()));
    }
    let ok = exact == REDUCTION_CONFIGS && worst32 <= REDUCTION_F32_TOL;
    (
        Status::of(ok),
        format!(
            "zero-offset d3d vs conv3d: {exact}/{REDUCTION_CONFIGS} bit-exact in f64, f32 max rel {worst32:.3e} (tol {REDUCTION_F32_TOL:e})"
        ),
    )
}

fn c2_gradients(seed: u64) -> (Status, String) {
    let entries = gradcheck_suite(seed, GRAD_INSTANCES).unwrap();
    let ok = entries.iter().all(|e| e.max_rel_error < GRAD_TOL && e.instances >= 5);
    let parts: Vec<String> = entries
        .iter()
        .map(|e| format!("{} {:.2e}", e.op, e.max_rel_error))
        .collect();
    (
        Status::of(ok),
        format!(
            "finite differences, {GRAD_INSTANCES} instances per op, max rel (tol {GRAD_TOL:e}): {}",
            parts.join(", ")
        ),
    )
}

fn c3_brute_force(seed: u64) -> (Status, String) {
    let mut r = rng(seed);
    let (mut conv_err, mut d3d_err) = (0.0f64, 0.0f64);
    for _ in 0..BRUTE_INSTANCES {
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let (t, h, w) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
        let x = uniform(&mut r, &[ci, t, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[co, ci, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let off = uniform(&mut r, &[54, t, h, w], -2.5, 2.5);
        let got = conv3d(&x, &wt, Some(&b)).unwrap();
        conv_err = conv_err.max(max_rel(got.data(), conv3d_naive(&x, &wt, Some(&b)).data()));
        let field = OffsetField::new(off.clone()).unwrap();
        let got = d3d(&x, &wt, Some(&b), &field).unwrap();
        d3d_err = d3d_err.max(max_rel(got.data(), d3d_naive(&x, &wt, Some(&b), &off).data()));
    }
    let ok = conv_err <= BRUTE_TOL && d3d_err <= BRUTE_TOL;
    (
        Status::of(ok),
        format!(
            "nested-loop oracles on {BRUTE_INSTANCES} instances each: conv3d max rel {conv_err:.3e}, d3d max rel {d3d_err:.3e} (tol {BRUTE_TOL:e})"
        ),
    )
}

fn total_params(cfg: &NetworkConfig) -> usize {
    cfg.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

fn c4_params() -> (Status, String) {
    let branch = offset_branch_params(64);
    let d = NetworkConfig::default();
    let (pd, pc) = (total_params(&d), total_params(&d.with_block(BlockKind::C3d)));
    let rel_branch = (branch as f64 - OFFSET_BRANCH_STATED).abs() / OFFSET_BRANCH_STATED;
    let rel_total = (pd as f64 - TOTAL_PARAMS_STATED) / TOTAL_PARAMS_STATED;
    let hard = branch == OFFSET_BRANCH && rel_branch <= OFFSET_BRANCH_TOL && pd - pc == 5 * branch;
    let soft = rel_total.abs() <= TOTAL_PARAMS_TOL;
    let status = match (hard, soft) {
        (false, _) => Status::Fail,
        (true, s) => Status::soft(s),
    };
    (
        status,
        format!(
            "offset branch {branch} ({:+.2}% of 0.19M), d3d - c3d {} = {}x branch, total {pd} ({:+.2}% of 2.58M, soft band {:.0}%)",
            100.0 * (branch as f64 - OFFSET_BRANCH_STATED) / OFFSET_BRANCH_STATED,
            pd - pc,
            (pd - pc) as f64 / branch as f64,
            100.0 * rel_total,
            100.0 * TOTAL_PARAMS_TOL
        ),
    )
}

fn c5_flops() -> (Status, String) {
    let f = count_flops(&NetworkConfig::default(), 720, 1280).unwrap();
    let ratio = f.flops as f64 / FLOPS_STATED;
    let ok = (1.0 / FLOPS_FACTOR..=FLOPS_FACTOR).contains(&ratio);
    (
        Status::soft(ok),
        format!(
            "default model at 1280x720: {:.2} GFLOPs, {ratio:.2}x of 408.82G (soft band {FLOPS_FACTOR}x)",
            f.flops as f64 / 1e9
        ),
    )
}

struct Desk {
    train: Vec<DegradedSequence>,
    test: Vec<DegradedSequence>,
}

fn desk_data() -> Desk {
    let seq = |name: String, seed| {
        DegradedSequence::new(name, synth_sequence(seed, DESK_FRAMES, DESK_HR, DESK_HR), 4).unwrap()
    };
    Desk {
        train: (0..DESK_TRAIN).map(|i| seq(format!("train{i:02}"), 1000 + i)).collect(),
        test: (0..DESK_TEST).map(|i| seq(format!("test{i:02}"), 5000 + i)).collect(),
    }
}

/// Reduced network and schedule used for all three desk runs. Everything
/// except `block` and `frames` is shared, including the seed.
fn desk_config(block: BlockKind, frames: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        network: NetworkConfig {
            frames,
            channels: 8,
            res_blocks: 1,
            recon_blocks: 1,
            scale: 4,
            block,
            global_skip: true,
        },
        adam: AdamConfig {
            base_lr: 1e-3,
            halve_every: 0,
            ..AdamConfig::default()
        },
        epochs: 1,
        steps_per_epoch: steps,
        batch_size: 4,
        patch: 16,
        augment: true,
        seed: 0,
    }
}

/// Train one variant and return (held-out PSNR, last loss).
fn desk_run(desk: &Desk, block: BlockKind, frames: usize, steps: usize) -> (f64, f32) {
    let mut t = Trainer::new(desk_config(block, frames, steps)).unwrap();
    let recs = t.train_epoch(&desk.train, &mut std::io::sink()).unwrap();
    let rep = evaluate_model(&t.model, &desk.test).unwrap();
    (rep.mean_psnr, recs.last().unwrap().loss)
}

fn c6_desk(desk: &Desk, steps: usize) -> (Status, String) {
    let bic = evaluate_bicubic(&desk.test, 4).unwrap().mean_psnr;
    let (d7, l7) = desk_run(desk, BlockKind::D3d, 7, steps);
    let (c7, lc) = desk_run(desk, BlockKind::C3d, 7, steps);
    let (d3, l3) = desk_run(desk, BlockKind::D3d, 3, steps);
    let a = d7 - bic >= DESK_MARGIN_DB;
    let b = d7 >= c7;
    let c = d7 >= d3;
    let mark = |ok: bool| if ok { "ok" } else { "MISS" };
    (
        Status::of(a && b && c),
        format!(
            "{} train / {} test synthetic clips, {steps} steps: bicubic {bic:.4} dB, d3d-7 {d7:.4}, c3d-7 {c7:.4}, d3d-3 {d3:.4} | (a) d3d-7 - bicubic {:+.4} >= {DESK_MARGIN_DB} {} | (b) d3d-7 - c3d-7 {:+.4} >= 0 {} | (c) d3d-7 - d3d-3 {:+.4} >= 0 {} | last losses {l7:.6e} {lc:.6e} {l3:.6e}",
            desk.train.len(),
            desk.test.len(),
            d7 - bic,
            mark(a),
            d7 - c7,
            mark(b),
            d7 - d3,
            mark(c)
        ),
    )
}

fn c7_metrics(seed: u64) -> (Status, String) {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[1, 24, 20], 0.1, 0.9);
    let b = a.map(|v| v + 1.0 / 255.0);
    let p = psnr(&a, &b).unwrap();
    let self_ssim = ssim(&a, &a).unwrap();
    let mut brute = 0.0f64;
    for _ in 0..3 {
        let (h, w) = (r.random_range(11..=20), r.random_range(11..=20));
        let x = uniform(&mut r, &[1, h, w], 0.0, 1.0);
        let noise = uniform(&mut r, &[1, h, w], -0.2, 0.2);
        let y = x.add(&noise).unwrap().map(|v| v.clamp(0.0, 1.0));
        brute = brute.max((ssim(&x, &y).unwrap() - ssim_naive(x.data(), y.data(), h, w)).abs());
    }
    let ok = (p - PSNR_ONE_LEVEL).abs() <= PSNR_ONE_LEVEL_TOL
        && (self_ssim - 1.0).abs() <= SSIM_SELF_TOL
        && brute <= SSIM_BRUTE_TOL;
    (
        Status::of(ok),
        format!(
            "psnr at 1/255 {p:.6} dB (want {PSNR_ONE_LEVEL} +- {PSNR_ONE_LEVEL_TOL}), ssim(a,a) - 1 = {:.3e}, ssim vs brute force {brute:.3e} (tol {SSIM_BRUTE_TOL:e})",
            self_ssim - 1.0
        ),
    )
}

fn load_vid4(root: &Path) -> Vec<DegradedSequence> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| {
            let mut files: Vec<_> = std::fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            let frames: Vec<Tensor<f32>> = files
                .iter()
                .map(|f| {
                    let y = luminance_of(&load_frame(f).unwrap()).unwrap();
                    let (h, w) = (y.shape()[1] / 4 * 4, y.shape()[2] / 4 * 4);
                    Tensor::from_fn(&[1, h, w], |i| y.at(&[0, i / w, i % w])).unwrap()
                })
                .collect();
            let name = d.file_name().unwrap().to_string_lossy().into_owned();
            DegradedSequence::new(name, frames, 4).unwrap()
        })
        .collect()
}

fn c8_vid4() -> (Status, String) {
    let Some(root) = std::env::var_os(VID4_ENV) else {
        return (Status::Skip, format!("set {VID4_ENV} to a directory of Vid4 clip folders to run"));
    };
    let seqs = load_vid4(Path::new(&root));
    let rep = evaluate_bicubic(&seqs, 4).unwrap();
    let ok = !seqs.is_empty()
        && (rep.mean_psnr - VID4_PSNR).abs() <= VID4_PSNR_TOL
        && (rep.mean_ssim - VID4_SSIM).abs() <= VID4_SSIM_TOL;
    (
        Status::of(ok),
        format!(
            "bicubic x4 on {} clips: {:.3} dB / {:.4} (want {VID4_PSNR} +- {VID4_PSNR_TOL} / {VID4_SSIM} +- {VID4_SSIM_TOL})",
            seqs.len(),
            rep.mean_psnr,
            rep.mean_ssim
        ),
    )
}

/// Logs of criteria 1-7 with a given desk step count.
fn rerunnable_logs(desk: &Desk, steps: usize) -> Vec<String> {
    vec![
        c1_reduction(1).1,
        c2_gradients(2).1,
        c3_brute_force(3).1,
        c4_params().1,
        c5_flops().1,
        c6_desk(desk, steps).1,
        c7_metrics(7).1,
    ]
}

#[test]
fn acceptance() {
    let desk = desk_data();
    let mut outcomes = Vec::new();

    let mut o = timed(1, || c1_reduction(1));
    over_budget(&mut o, REDUCTION_BUDGET);
    outcomes.push(o);
    let mut o = timed(2, || c2_gradients(2));
    over_budget(&mut o, GRAD_BUDGET);
    outcomes.push(o);
    outcomes.push(timed(3, || c3_brute_force(3)));
    outcomes.push(timed(4, c4_params));
    outcomes.push(timed(5, c5_flops));
    let mut o = timed(6, || c6_desk(&desk, DESK_STEPS));
    over_budget(&mut o, DESK_BUDGET);
    outcomes.push(o);
    outcomes.push(timed(7, || c7_metrics(7)));
    outcomes.push(timed(8, c8_vid4));

    // The first pass already holds full-length logs; the rerun compares two
    // further passes with a short desk schedule to keep the suite bounded.
    let full: Vec<String> = outcomes[..7].iter().map(|o| o.log.clone()).collect();
    outcomes.push(timed(9, || {
        let again = rerunnable_logs(&desk, DESK_SHORT_STEPS);
        let third = rerunnable_logs(&desk, DESK_SHORT_STEPS);
        let same_full = full
            .iter()
            .zip(&again)
            .enumerate()
            .filter(|(i, _)| *i != 5)
            .all(|(_, (a, b))| a == b);
        let same = same_full && again == third;
        let differing: Vec<String> = (0..7)
            .filter(|&i| again[i] != third[i] || (i != 5 && full[i] != again[i]))
            .map(|i| (i + 1).to_string())
            .collect();
        (
            Status::of(same),
            format!(
                "criteria 1-7 rerun (desk at {DESK_SHORT_STEPS} steps, twice): {}",
                if same {
                    "logs byte-identical".to_string()
                } else {
                    format!("logs differ for {}", differing.join(", "))
                }
            ),
        )
    }));

    println!();
    for o in &outcomes {
        report(o);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| o.status == Status::Fail).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
