//! Command implementations behind the `d3d` binary.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use d3d::autograd::{gradcheck_suite, SUITE_TOL};
use d3d::data::{
    frame_file_name, load_sequence, save_sequence, synth_sequence, DatasetManifest, DegradedSequence, SequenceEntry,
    Split,
};
use d3d::metrics::EvalReport;
use d3d::network::{count_flops, load_checkpoint, save_checkpoint, BlockKind, Model};
use d3d::train::{evaluate_bicubic, evaluate_model, super_resolve, TrainConfig, Trainer};
use d3d::Tensor;

#[derive(Debug, Parser)]
#[command(name = "d3d", version, about = "Deformable 3D convolution video super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (frames + manifest) to --out.
    Synth,
    /// Train on the dataset at --data, writing checkpoints and a loss log to --out.
    Train,
    /// Score the test split with bicubic and, given --checkpoint, the network.
    Eval,
    /// Super-resolve the frames in --input into --out.
    Sr,
    /// Finite-difference check of every differentiable op.
    Gradcheck,
    /// Parameter count, FLOPs at 1280x720 and forward time.
    Bench,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["3", "5", "7"])]
    pub frames: Option<String>,
    #[arg(long, global = true)]
    pub block: Option<BlockKind>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory holding manifest.toml.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Directory of frame_%04d.png files to super-resolve.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_sequences: 50,
            test_sequences: 8,
            frames: 9,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub runs: usize,
    /// LR input size for the timed forward passes.
    pub height: usize,
    pub width: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            height: 32,
            width: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: PathBuf::from("data"),
            checkpoint: None,
            input: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Config file (or defaults) with command-line flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = o.seed {
            c.seed = s;
        }
        c.train.seed = c.seed;
        if let Some(f) = &o.frames {
            c.train.network.frames = f.parse()?;
        }
        if let Some(b) = o.block {
            c.train.network.block = b;
        }
        if let Some(e) = o.epochs {
            c.train.epochs = e;
        }
        if let Some(lr) = o.lr {
            ensure!(lr > 0.0 && lr.is_finite(), "--lr must be positive, got {lr}");
            c.train.adam.base_lr = lr;
        }
        if let Some(p) = &o.out {
            c.out = p.clone();
        }
        if let Some(p) = &o.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        if let Some(p) = &o.data {
            c.data = p.clone();
        }
        if let Some(p) = &o.input {
            c.input = Some(p.clone());
        }
        c.train.validate()?;
        Ok(c)
    }
}

/// Run one command; the returned text is what the binary prints.
pub fn run(command: Command, cfg: &RunConfig) -> Result<String> {
    match command {
        Command::Synth => cmd_synth(cfg),
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Sr => cmd_sr(cfg),
        Command::Gradcheck => cmd_gradcheck(cfg),
        Command::Bench => cmd_bench(cfg),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    let s = &cfg.synth;
    ensure!(s.frames >= 1 && s.train_sequences + s.test_sequences >= 1, "nothing to synthesise");
    let r = cfg.train.network.scale;
    ensure!(
        s.height.is_multiple_of(r) && s.width.is_multiple_of(r),
        "frame size {}x{} not divisible by scale {r}",
        s.height,
        s.width
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sequences = Vec::new();
    let splits = [(Split::Train, "train", s.train_sequences), (Split::Test, "test", s.test_sequences)];
    for (split, prefix, count) in splits {
        for i in 0..count {
            let name = format!("{prefix}_{i:03}");
            let frames = synth_sequence(rng.random(), s.frames, s.height, s.width);
            save_sequence(&frames, &cfg.out.join(&name))?;
            sequences.push(SequenceEntry {
                path: PathBuf::from(&name),
                name,
                frames: s.frames,
                split,
            });
        }
    }
    let manifest = DatasetManifest {
        seed: Some(cfg.seed),
        sequences,
    };
    manifest.save(&cfg.out.join(DatasetManifest::FILE_NAME))?;
    Ok(format!(
        "wrote {} train + {} test sequences of {} frames ({}x{}) to {}\n",
        s.train_sequences,
        s.test_sequences,
        s.frames,
        s.height,
        s.width,
        cfg.out.display()
    ))
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<DegradedSequence>> {
    let path = cfg.data.join(DatasetManifest::FILE_NAME);
    ensure!(path.exists(), "no dataset at {} (missing {})", cfg.data.display(), path.display());
    let manifest = DatasetManifest::load(&path)?;
    let seqs = manifest.load_split(&cfg.data, split)?;
    ensure!(!seqs.is_empty(), "dataset {} has no {split:?} sequences", cfg.data.display());
    seqs.into_iter()
        .map(|(name, frames)| Ok(DegradedSequence::new(name, frames, cfg.train.network.scale)?))
        .collect()
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub const LOSS_LOG: &str = "loss.log";

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let data = load_split(cfg, Split::Train)?;
    // training always runs on luminance
    let data: Vec<_> = data
        .into_iter()
        .map(|s| {
            let hr = d3d::train::to_luma(&s.hr)?;
            Ok(DegradedSequence::new(s.name, hr, cfg.train.network.scale)?)
        })
        .collect::<Result<_>>()?;
    let mut trainer = match &cfg.checkpoint {
        Some(p) => Trainer::resume(cfg.train, load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?)?,
        None => Trainer::new(cfg.train)?,
    };
    fs::create_dir_all(&cfg.out)?;
    let log_file = OpenOptions::new().create(true).append(true).open(cfg.out.join(LOSS_LOG))?;
    let mut log = BufWriter::new(log_file);
    let mut summary = String::new();
    while trainer.epoch < trainer.config.epochs {
        let records = trainer.train_epoch(&data, &mut log)?;
        let mean = records.iter().map(|r| r.loss as f64).sum::<f64>() / records.len() as f64;
        let path = cfg.out.join(checkpoint_name(trainer.epoch));
        save_checkpoint(&path, &trainer.checkpoint())?;
        writeln!(
            summary,
            "epoch {} lr {:e} mean loss {mean:.6e} -> {}",
            trainer.epoch,
            records[0].lr,
            path.display()
        )?;
    }
    if summary.is_empty() {
        writeln!(summary, "already at epoch {}; nothing to do", trainer.epoch)?;
    }
    Ok(summary)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let data = load_split(cfg, Split::Test)?;
    let mut reports = vec![evaluate_bicubic(&data, cfg.train.network.scale)?];
    if let Some(p) = &cfg.checkpoint {
        let ckpt = load_checkpoint::<f32>(p).with_context(|| format!("loading {}", p.display()))?;
        ensure!(
            ckpt.model.config.scale == cfg.train.network.scale,
            "checkpoint scale {} differs from config scale {}",
            ckpt.model.config.scale,
            cfg.train.network.scale
        );
        reports.push(evaluate_model(&ckpt.model, &data)?);
    }
    fs::create_dir_all(&cfg.out)?;
    let mut out = String::new();
    writeln!(out, "{:<16} {:>9} {:>8}", "method", "PSNR", "SSIM")?;
    for r in &reports {
        fs::write(cfg.out.join(format!("{}.json", r.method)), r.to_json())?;
        writeln!(out, "{:<16} {:>9.4} {:>8.5}", r.method, r.mean_psnr, r.mean_ssim)?;
    }
    Ok(out)
}

/// Read a previously written report.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(EvalReport::from_json(&fs::read_to_string(path)?)?)
}

pub fn cmd_sr(cfg: &RunConfig) -> Result<String> {
    let Some(ckpt_path) = &cfg.checkpoint else {
        bail!("sr needs --checkpoint");
    };
    let Some(input) = &cfg.input else {
        bail!("sr needs --input DIR");
    };
    let model = load_checkpoint::<f32>(ckpt_path)
        .with_context(|| format!("loading {}", ckpt_path.display()))?
        .model;
    let lr = load_sequence(input)?;
    let sr = super_resolve(&model, &lr)?;
    save_sequence(&sr, &cfg.out)?;
    Ok(format!(
        "wrote {} frames ({}) to {}\n",
        sr.len(),
        shape_text(sr[0].shape()),
        cfg.out.join(frame_file_name(0)).parent().unwrap_or(&cfg.out).display()
    ))
}

fn shape_text(s: &[usize]) -> String {
    s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<String> {
    let entries = gradcheck_suite(cfg.seed, 5)?;
    let mut out = String::new();
    writeln!(out, "{:<28} {:>9} {:>11} {:>12}  result", "op", "instances", "components", "max rel err")?;
    for e in &entries {
        writeln!(
            out,
            "{:<28} {:>9} {:>11} {:>12.3e}  {}",
            e.op,
            e.instances,
            e.components,
            e.max_rel_error,
            if e.passed() { "pass" } else { "FAIL" }
        )?;
    }
    let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| e.op).collect();
    if !failed.is_empty() {
        print!("{out}");
        bail!("gradient check failed (tolerance {SUITE_TOL:e}) for: {}", failed.join(", "));
    }
    Ok(out)
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<String> {
    let net = cfg.train.network;
    let b = &cfg.bench;
    ensure!(b.runs >= 1, "bench.runs must be >= 1");
    let mut out = String::new();
    writeln!(
        out,
        "{:<6} {:>12} {:>16} {:>14}",
        "block",
        "params",
        "GFLOPs@1280x720",
        format!("fwd ms ({}x{})", b.height, b.width)
    )?;
    let mut params = Vec::new();
    for block in [BlockKind::D3d, BlockKind::C3d] {
        let c = net.with_block(block);
        let model = Model::<f32>::build(c, cfg.seed)?;
        let flops = count_flops(&c, 720, 1280)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let x = Tensor::from_fn(&[1, c.frames, b.height, b.width], |_| rng.random_range(0.0f32..1.0))?;
        model.infer(&x)?;
        let t0 = Instant::now();
        for _ in 0..b.runs {
            model.infer(&x)?;
        }
        let ms = t0.elapsed().as_secs_f64() * 1e3 / b.runs as f64;
        params.push(model.param_count());
        writeln!(
            out,
            "{:<6} {:>12} {:>16.2} {:>14.2}",
            block.to_string(),
            model.param_count(),
            flops.flops as f64 / 1e9,
            ms
        )?;
    }
    writeln!(out, "d3d - c3d params: {}", params[0] - params[1])?;
    writeln!(out, "forward time is the mean of {} runs", b.runs)?;
    Ok(out)
}
