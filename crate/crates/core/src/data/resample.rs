//! Separable bicubic resampling with the Keys cubic kernel (`a = -0.5`).
//!
//! Output sample `i` maps to input coordinate `(i + 0.5) / s - 0.5` for a
//! scale factor `s = out / in`. When shrinking, the kernel is stretched by
//! `1 / s` (and its amplitude scaled by `s`) so it also acts as the
//! anti-aliasing filter. Taps falling outside the image are clamped to the
//! nearest edge sample, and each output's weights are normalised to sum to 1.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    let a = -0.5;
    let ax = x.abs();
    if ax <= 1.0 {
        (a + 2.0) * ax.powi(3) - (a + 3.0) * ax * ax + 1.0
    } else if ax < 2.0 {
        a * ax.powi(3) - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a
    } else {
        0.0
    }
}

/// Integer resampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resize {
    Up(usize),
    Down(usize),
}

impl Resize {
    fn factor(self) -> usize {
        match self {
            Resize::Up(f) | Resize::Down(f) => f,
        }
    }

    fn out_len(self, n: usize) -> Result<usize> {
        match self {
            Resize::Up(f) => Ok(n * f),
            Resize::Down(f) if n.is_multiple_of(f) => Ok(n / f),
            Resize::Down(f) => Err(Error::invalid(format!("extent {n} not divisible by {f}"))),
        }
    }
}

/// Source indices and normalised weights of every output sample along one axis.
#[derive(Debug, Clone)]
pub struct AxisWeights {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let (stretch, width) = if scale < 1.0 {
            (scale, 4.0 / scale)
        } else {
            (1.0, 4.0)
        };
        let taps = (0..out_len)
            .map(|i| {
                let u = (i as f64 + 0.5) / scale - 0.5;
                let left = (u - width / 2.0).floor() as isize;
                let count = width.ceil() as isize + 2;
                let mut raw: Vec<(usize, f64)> = Vec::with_capacity(count as usize);
                let mut total = 0.0;
                for j in left..left + count {
                    let wgt = stretch * keys_cubic(stretch * (u - j as f64));
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = j.clamp(0, in_len as isize - 1) as usize;
                    total += wgt;
                    match raw.iter_mut().find(|(s, _)| *s == src) {
                        Some(e) => e.1 += wgt,
                        None => raw.push((src, wgt)),
                    }
                }
                raw.iter_mut().for_each(|e| e.1 /= total);
                raw
            })
            .collect();
        Self { taps }
    }
}

fn resize_rows<S: Scalar>(src: &[S], rows: usize, cols: usize, aw: &AxisWeights) -> Vec<S> {
    let out_cols = aw.taps.len();
    let mut out = Vec::with_capacity(rows * out_cols);
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for taps in &aw.taps {
            let v: f64 = taps.iter().map(|&(j, w)| w * row[j].as_f64()).sum();
            out.push(S::lit(v));
        }
    }
    out
}

fn resize_cols<S: Scalar>(src: &[S], rows: usize, cols: usize, aw: &AxisWeights) -> Vec<S> {
    let out_rows = aw.taps.len();
    let mut out = vec![S::zero(); out_rows * cols];
    for (i, taps) in aw.taps.iter().enumerate() {
        for c in 0..cols {
            let v: f64 = taps.iter().map(|&(j, w)| w * src[j * cols + c].as_f64()).sum();
            out[i * cols + c] = S::lit(v);
        }
    }
    debug_assert!(rows > 0);
    out
}

/// Resample every channel of `img: [C, H, W]`. Supported factors: 1, 2, 4.
pub fn bicubic_resample<S: Scalar>(img: &Tensor<S>, resize: Resize) -> Result<Tensor<S>> {
    if !matches!(resize.factor(), 1 | 2 | 4) {
        return Err(Error::invalid(format!("unsupported resize factor {resize:?}")));
    }
    if img.rank() != 3 {
        return Err(Error::invalid(format!("bicubic_resample expects [C, H, W], got {:?}", img.shape())));
    }
    if resize.factor() == 1 {
        return Ok(img.clone());
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (ho, wo) = (resize.out_len(h)?, resize.out_len(w)?);
    let aw_w = AxisWeights::new(w, wo);
    let aw_h = AxisWeights::new(h, ho);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        let tmp = resize_rows(plane, h, w, &aw_w);
        out.extend(resize_cols(&tmp, h, wo, &aw_h));
    }
    Tensor::new(&[c, ho, wo], out)
}

pub fn downsample<S: Scalar>(img: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    bicubic_resample(img, Resize::Down(factor))
}

pub fn upsample<S: Scalar>(img: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    bicubic_resample(img, Resize::Up(factor))
}

/// Nearest-neighbour upscaling (pixel replication).
pub fn upsample_nearest<S: Scalar>(img: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    if img.rank() != 3 || factor == 0 {
        return Err(Error::invalid("upsample_nearest expects [C, H, W] and factor >= 1"));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    Tensor::from_fn(&[c, h * factor, w * factor], |i| {
        let x = i % (w * factor) / factor;
        let y = i / (w * factor) % (h * factor) / factor;
        let ci = i / (w * factor * h * factor);
        img.data()[(ci * h + y) * w + x]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(keys_cubic(0.0), 1.0);
        assert_eq!(keys_cubic(1.0), 0.0);
        assert_eq!(keys_cubic(2.0), 0.0);
        assert!((keys_cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((keys_cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::<f64>::full(&[1, 16, 12], 0.3).unwrap();
        for r in [Resize::Down(4), Resize::Up(4), Resize::Down(2)] {
            let out = bicubic_resample(&img, r).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-12), "{r:?}");
        }
    }

    #[test]
    fn identity_and_errors() {
        let img = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32).unwrap();
        assert_eq!(bicubic_resample(&img, Resize::Up(1)).unwrap(), img);
        assert!(bicubic_resample(&img, Resize::Up(3)).is_err());
        assert!(bicubic_resample(&Tensor::<f32>::zeros(&[1, 6, 4]).unwrap(), Resize::Down(4)).is_err());
    }

    #[test]
    fn upsampling_interpolates_at_integer_phase() {
        // ramp is reproduced exactly away from the clamped borders
        let img = Tensor::<f64>::from_fn(&[1, 1, 16], |i| i as f64).unwrap();
        let up = bicubic_resample(&img.clone().reshape(&[1, 1, 16]).unwrap(), Resize::Up(2));
        // height 1 is fine: every row tap clamps to row 0
        let up = up.unwrap();
        for x in 8..24 {
            let u = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.data()[x] - u).abs() < 1e-9, "x={x}");
        }
    }
}
