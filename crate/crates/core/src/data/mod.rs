//! Training data: degradation, patch sampling, augmentation and frame I/O.

mod color;
mod io;
mod resample;
mod synth;

pub use color::{luminance_of, rgb_to_luminance, rgb_to_ycbcr, ycbcr_to_rgb};
pub use io::{
    frame_file_name, load_frame, load_sequence, quantize, save_frame, save_sequence, DatasetManifest, SequenceEntry,
    Split,
};
pub use resample::{bicubic_resample, downsample, keys_cubic, upsample, upsample_nearest, AxisWeights, Resize};
pub use synth::{synth_sequence, Pattern, Scene, Shape, Wave, MAX_SPEED};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An LR clip paired with the HR version of its centre frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// `[1, T, h, w]` in [0, 1].
    pub lr_frames: Tensor<f32>,
    /// `[1, h*r, w*r]` in [0, 1].
    pub hr_center: Tensor<f32>,
    pub id: String,
}

impl VideoSample {
    pub fn frames(&self) -> usize {
        self.lr_frames.shape()[1]
    }

    pub fn check(&self, scale: usize) -> Result<()> {
        let l = self.lr_frames.shape();
        let h = self.hr_center.shape();
        if l.len() != 4 || l[0] != 1 || l[1].is_multiple_of(2) {
            return Err(Error::invalid(format!("bad LR clip shape {l:?}")));
        }
        if h != [1, l[2] * scale, l[3] * scale] {
            return Err(Error::mismatch("sample HR/LR extents", h, l));
        }
        let in_range = |t: &Tensor<f32>| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&self.lr_frames) || !in_range(&self.hr_center) {
            return Err(Error::invalid("sample values outside [0, 1]"));
        }
        Ok(())
    }
}

fn crop(frame: &Tensor<f32>, y: usize, x: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if y + size > h || x + size > w {
        return Err(Error::invalid(format!("crop {size} at ({y}, {x}) exceeds {h}x{w}")));
    }
    Tensor::from_fn(&[c, size, size], |i| {
        let (ci, r) = (i / (size * size), i % (size * size));
        frame.data()[(ci * h + y + r / size) * w + x + r % size]
    })
}

fn clamp_unit(t: Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Build a sample from already-degraded LR frames and the HR centre frame,
/// cropping an LR patch at `(y, x)` and the aligned HR patch at `(r*y, r*x)`.
pub fn sample_at(
    lr_window: &[Tensor<f32>],
    hr_center: &Tensor<f32>,
    scale: usize,
    patch: usize,
    y: usize,
    x: usize,
) -> Result<VideoSample> {
    if lr_window.len().is_multiple_of(2) {
        return Err(Error::invalid("window length must be odd"));
    }
    let lr: Vec<_> = lr_window
        .iter()
        .map(|f| crop(f, y, x, patch))
        .collect::<Result<_>>()?;
    let lr_frames = Tensor::stack_frames(&lr)?;
    let hr = crop(hr_center, y * scale, x * scale, patch * scale)?;
    Ok(VideoSample {
        lr_frames,
        hr_center: hr,
        id: format!("y{y}x{x}"),
    })
}

/// Degrade a window of HR frames by bicubic downsampling, then crop a random
/// `patch x patch` LR clip and the aligned HR centre patch.
pub fn make_sample(frames: &[Tensor<f32>], scale: usize, patch: usize, rng: &mut impl Rng) -> Result<VideoSample> {
    let lr: Vec<_> = frames
        .iter()
        .map(|f| downsample(f, scale).map(clamp_unit))
        .collect::<Result<_>>()?;
    let (h, w) = (lr[0].shape()[1], lr[0].shape()[2]);
    if patch > h || patch > w {
        return Err(Error::invalid(format!("patch {patch} larger than LR frame {h}x{w}")));
    }
    let y = rng.random_range(0..=h - patch);
    let x = rng.random_range(0..=w - patch);
    sample_at(&lr, &frames[frames.len() / 2], scale, patch, y, x)
}

/// Geometric augmentations applied identically to every frame of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub const ALL: [Augment; 6] = [
        Augment::Identity,
        Augment::FlipH,
        Augment::FlipV,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
    ];

    /// Apply to the last two axes of `t` (any rank >= 2). Rotations are
    /// counter-clockwise.
    pub fn apply(self, t: &Tensor<f32>) -> Tensor<f32> {
        let s = t.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = t.len() / (h * w);
        let swap = matches!(self, Augment::Rot90 | Augment::Rot270);
        let (ho, wo) = if swap { (w, h) } else { (h, w) };
        let mut shape = s.to_vec();
        let n = shape.len();
        shape[n - 2] = ho;
        shape[n - 1] = wo;
        let src = t.data();
        let mut out = Vec::with_capacity(t.len());
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for x in 0..wo {
                    let (sy, sx) = match self {
                        Augment::Identity => (y, x),
                        Augment::FlipH => (y, w - 1 - x),
                        Augment::FlipV => (h - 1 - y, x),
                        Augment::Rot90 => (x, w - 1 - y),
                        Augment::Rot180 => (h - 1 - y, w - 1 - x),
                        Augment::Rot270 => (h - 1 - x, y),
                    };
                    out.push(plane[sy * w + sx]);
                }
            }
        }
        Tensor::new(&shape, out).expect("augmented shape")
    }
}

/// Apply one uniformly chosen [`Augment`] to every LR frame and the HR frame.
pub fn augment(sample: &VideoSample, rng: &mut impl Rng) -> VideoSample {
    let a = Augment::ALL[rng.random_range(0..Augment::ALL.len())];
    augment_with(sample, a)
}

pub fn augment_with(sample: &VideoSample, a: Augment) -> VideoSample {
    VideoSample {
        lr_frames: a.apply(&sample.lr_frames),
        hr_center: a.apply(&sample.hr_center),
        id: format!("{}/{a:?}", sample.id),
    }
}

/// Full-frame LR/HR pairs of one sequence, degraded once.
#[derive(Debug, Clone)]
pub struct DegradedSequence {
    pub name: String,
    pub hr: Vec<Tensor<f32>>,
    pub lr: Vec<Tensor<f32>>,
}

impl DegradedSequence {
    pub fn new(name: impl Into<String>, hr: Vec<Tensor<f32>>, scale: usize) -> Result<Self> {
        let lr = hr
            .iter()
            .map(|f| downsample(f, scale).map(clamp_unit))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            hr,
            lr,
        })
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// LR window of `frames` frames centred on `center`, replicating edge
    /// frames past either end of the sequence.
    pub fn lr_window(&self, center: usize, frames: usize) -> Vec<Tensor<f32>> {
        let half = (frames / 2) as isize;
        let last = self.lr.len() as isize - 1;
        (-half..=half)
            .map(|d| self.lr[(center as isize + d).clamp(0, last) as usize].clone())
            .collect()
    }

    /// Random training sample centred on a frame with a full window.
    pub fn random_sample(&self, frames: usize, scale: usize, patch: usize, rng: &mut impl Rng) -> Result<VideoSample> {
        let half = frames / 2;
        if self.len() < frames {
            return Err(Error::invalid(format!(
                "sequence {} has {} frames, needs {frames}",
                self.name,
                self.len()
            )));
        }
        let center = rng.random_range(half..self.len() - half);
        let (h, w) = (self.lr[0].shape()[1], self.lr[0].shape()[2]);
        if patch > h || patch > w {
            return Err(Error::invalid(format!("patch {patch} larger than LR frame {h}x{w}")));
        }
        let y = rng.random_range(0..=h - patch);
        let x = rng.random_range(0..=w - patch);
        let mut s = sample_at(&self.lr_window(center, frames), &self.hr[center], scale, patch, y, x)?;
        s.id = format!("{}/t{center}/{}", self.name, s.id);
        Ok(s)
    }
}
