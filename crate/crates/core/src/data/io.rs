//! 8-bit PNG frames and the TOML dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// Map [0, 1] to the nearest 8-bit code.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write `[1, H, W]` as grayscale or `[3, H, W]` as RGB.
pub fn save_frame(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = match frame.shape() {
        &[c @ (1 | 3), h, w] => (c, h, w),
        s => return Err(Error::invalid(format!("expected [1|3, H, W] frame, got {s:?}"))),
    };
    let d = frame.data();
    let n = h * w;
    let img = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([quantize(d[y as usize * w + x as usize])])
        }))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            image::Rgb([quantize(d[p]), quantize(d[n + p]), quantize(d[2 * n + p])])
        }))
    };
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Read an 8-bit image; grayscale gives `[1, H, W]`, anything else `[3, H, W]`.
pub fn load_frame(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Tensor::new(&[1, h, w], g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        other => {
            let rgb = other.to_rgb8().into_raw();
            let n = h * w;
            Tensor::from_fn(&[3, h, w], |i| rgb[(i % n) * 3 + i / n] as f32 / 255.0)
        }
    }
}

pub fn save_sequence(frames: &[Tensor<f32>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        save_frame(f, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Load `frame_0000.png, frame_0001.png, ...` until the first gap.
pub fn load_sequence(dir: &Path) -> Result<Vec<Tensor<f32>>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_file_name(frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(load_frame(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::invalid(format!("no frame_0000.png in {}", dir.display())));
    }
    if frames.iter().any(|f| f.shape() != frames[0].shape()) {
        return Err(Error::invalid(format!("frames in {} differ in shape", dir.display())));
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub frames: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub seed: Option<u64>,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.toml";

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SequenceEntry> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    /// Load every sequence of `split`, resolving paths against `root`,
    /// and check frame counts against the manifest.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<(String, Vec<Tensor<f32>>)>> {
        self.split(split)
            .map(|e| {
                let frames = load_sequence(&root.join(&e.path))?;
                if frames.len() != e.frames {
                    return Err(Error::invalid(format!(
                        "sequence {}: manifest lists {} frames, found {}",
                        e.name,
                        e.frames,
                        frames.len()
                    )));
                }
                Ok((e.name.clone(), frames))
            })
            .collect()
    }
}
