//! Training loop, sliding-window inference and evaluation helpers.

use std::io::Write;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AdamConfig, AdamState};
use crate::data::{augment, luminance_of, rgb_to_ycbcr, upsample, ycbcr_to_rgb, DegradedSequence, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_sequence, EvalReport};
use crate::network::{Checkpoint, Model, NetworkConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// LR patch side length.
    pub patch: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            adam: AdamConfig::default(),
            epochs: 35,
            steps_per_epoch: 1000,
            batch_size: 8,
            patch: 32,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.steps_per_epoch == 0 || self.batch_size == 0 || self.patch == 0 {
            return Err(Error::Config("steps_per_epoch, batch_size and patch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training state: model, optimizer and position in the schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f32,
    pub lr: f64,
}

impl std::fmt::Display for LossRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {:e} {:e}", self.epoch, self.step, self.loss, self.lr)
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: Model::build(config.network, config.seed)?,
            adam: AdamState::new(config.adam),
            epoch: 0,
            config,
        })
    }

    /// Continue from a checkpoint; network and optimizer settings come from it.
    pub fn resume(mut config: TrainConfig, ckpt: Checkpoint<f32>) -> Result<Self> {
        config.network = ckpt.model.config;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(config.adam));
        config.adam = adam.config;
        config.validate()?;
        Ok(Self {
            config,
            model: ckpt.model,
            adam,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            adam: Some(self.adam.clone()),
        }
    }

    /// The batch for global step `step`. Depends only on the seed, the step
    /// and the data, never on earlier draws.
    pub fn batch(&self, data: &[DegradedSequence], step: u64) -> Result<Vec<VideoSample>> {
        if data.is_empty() {
            return Err(Error::invalid("no training sequences"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let n = &self.config.network;
        (0..self.config.batch_size)
            .map(|_| {
                let seq = &data[rng.random_range(0..data.len())];
                let s = seq.random_sample(n.frames, n.scale, self.config.patch, &mut rng)?;
                Ok(if self.config.augment { augment(&s, &mut rng) } else { s })
            })
            .collect()
    }

    /// Mean loss and mean gradients over a batch. Per-sample gradients are
    /// summed in batch order.
    pub fn batch_gradients(&self, batch: &[VideoSample]) -> Result<(f32, IndexMap<String, Tensor<f32>>)> {
        let per_sample = batch_map(batch, |s| self.model.loss_and_grads(&s.lr_frames, &s.hr_center))?;
        let scale = 1.0 / batch.len() as f32;
        let mut loss = 0.0f32;
        let mut total: IndexMap<String, Tensor<f32>> = IndexMap::new();
        for (l, g) in per_sample {
            loss += l;
            for (k, v) in g {
                match total.get_mut(&k) {
                    Some(t) => t.add_assign(&v)?,
                    None => {
                        total.insert(k, v);
                    }
                }
            }
        }
        for t in total.values_mut() {
            *t = t.scalar_mul(scale);
        }
        Ok((loss * scale, total))
    }

    /// One optimizer step at the current epoch's learning rate.
    pub fn step(&mut self, data: &[DegradedSequence]) -> Result<LossRecord> {
        let step = self.adam.step;
        let batch = self.batch(data, step)?;
        let (loss, grads) = self.batch_gradients(&batch)?;
        let lr = self.config.adam.lr_at_epoch(self.epoch);
        self.adam.update(&mut self.model.params, &grads, lr)?;
        Ok(LossRecord {
            epoch: self.epoch,
            step,
            loss,
            lr,
        })
    }

    /// Run one epoch, appending a line per step to `log`.
    pub fn train_epoch(&mut self, data: &[DegradedSequence], log: &mut impl Write) -> Result<Vec<LossRecord>> {
        let mut records = Vec::with_capacity(self.config.steps_per_epoch);
        for _ in 0..self.config.steps_per_epoch {
            let r = self.step(data)?;
            writeln!(log, "{r}")?;
            records.push(r);
        }
        log.flush()?;
        self.epoch += 1;
        Ok(records)
    }
}

fn batch_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !crate::parallel::is_sequential() && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Super-resolve every frame of a single-channel LR sequence with a
/// sliding window of `T` frames, replicating edge frames.
pub fn super_resolve_luma(model: &Model<f32>, lr: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    if lr.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    let frames = model.config.frames;
    let half = (frames / 2) as isize;
    let last = lr.len() as isize - 1;
    let indices: Vec<usize> = (0..lr.len()).collect();
    batch_map(&indices, |&c| {
        let window: Vec<_> = (-half..=half)
            .map(|d| lr[(c as isize + d).clamp(0, last) as usize].clone())
            .collect();
        let clip = Tensor::stack_frames(&window)?;
        Ok(model.infer(&clip)?.map(|v| v.clamp(0.0, 1.0)))
    })
}

/// Super-resolve `[1|3, h, w]` frames. Colour frames are processed in
/// YCbCr: the network upscales Y and chroma is upscaled bicubically.
pub fn super_resolve(model: &Model<f32>, lr: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    let colour = lr.first().is_some_and(|f| f.shape()[0] == 3);
    if !colour {
        return super_resolve_luma(model, lr);
    }
    let ycc: Vec<_> = lr.iter().map(rgb_to_ycbcr).collect::<Result<_>>()?;
    let luma: Vec<_> = ycc.iter().map(|f| f.slice_channels(0, 1)).collect::<Result<_>>()?;
    let sr_y = super_resolve_luma(model, &luma)?;
    ycc.iter()
        .zip(sr_y)
        .map(|(f, y)| {
            let chroma = upsample(&f.slice_channels(1, 3)?, model.config.scale)?;
            let rgb = ycbcr_to_rgb(&Tensor::concat_channels(&[&y, &chroma])?)?;
            Ok(rgb.map(|v| v.clamp(0.0, 1.0)))
        })
        .collect()
}

/// Bicubic upscaling of every LR frame, clamped to [0, 1].
pub fn bicubic_sequence(lr: &[Tensor<f32>], scale: usize) -> Result<Vec<Tensor<f32>>> {
    lr.iter()
        .map(|f| Ok(upsample(f, scale)?.map(|v| v.clamp(0.0, 1.0))))
        .collect()
}

/// Luminance sequence from `[1|3, H, W]` frames.
pub fn to_luma(frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    frames.iter().map(luminance_of).collect()
}

pub fn evaluate_model(model: &Model<f32>, data: &[DegradedSequence]) -> Result<EvalReport> {
    let seqs = data
        .iter()
        .map(|s| evaluate_sequence(&s.name, &super_resolve(model, &s.lr)?, &s.hr))
        .collect::<Result<_>>()?;
    EvalReport::new(format!("network-{}", model.config.block), seqs)
}

pub fn evaluate_bicubic(data: &[DegradedSequence], scale: usize) -> Result<EvalReport> {
    let seqs = data
        .iter()
        .map(|s| evaluate_sequence(&s.name, &bicubic_sequence(&s.lr, scale)?, &s.hr))
        .collect::<Result<_>>()?;
    EvalReport::new("bicubic", seqs)
}
