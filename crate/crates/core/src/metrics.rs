//! PSNR and SSIM on luminance frames in [0, 1].

use serde::{Deserialize, Serialize};

use crate::data::luminance_of;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Frames skipped at each end of a sequence when scoring.
pub const EDGE_EXCLUDE: usize = 2;

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    same_shape(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn plane<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, Vec<f64>)> {
    let (h, w) = match t.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::invalid(format!("expected a single-channel frame, got {s:?}"))),
    };
    Ok((h, w, t.data().iter().map(|v| v.as_f64()).collect()))
}

/// Valid separable filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| g[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every fully contained 11x11 Gaussian window.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (h, w, x) = plane(a)?;
    let (_, _, y) = plane(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let sxx = filter_valid(&prod(&x, &x), h, w, &g);
    let syy = filter_valid(&prod(&y, &y), h, w, &g);
    let sxy = filter_valid(&prod(&x, &y), h, w, &g);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub excluded_edge_frames: usize,
    pub sequences: Vec<SequenceReport>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    v.sum::<f64>() / n as f64
}

/// Score `sr` against `hr` on luminance, skipping the first and last
/// [`EDGE_EXCLUDE`] frames.
pub fn evaluate_sequence(name: &str, sr: &[Tensor<f32>], hr: &[Tensor<f32>]) -> Result<SequenceReport> {
    if sr.len() != hr.len() {
        return Err(Error::invalid(format!(
            "sequence {name}: {} SR frames vs {} HR frames",
            sr.len(),
            hr.len()
        )));
    }
    if sr.len() <= 2 * EDGE_EXCLUDE {
        return Err(Error::invalid(format!(
            "sequence {name}: {} frames leave nothing to score",
            sr.len()
        )));
    }
    let frames = (EDGE_EXCLUDE..sr.len() - EDGE_EXCLUDE)
        .map(|i| {
            let a = luminance_of(&sr[i].cast::<f64>())?;
            let b = luminance_of(&hr[i].cast::<f64>())?;
            Ok(FrameScore {
                frame: i,
                psnr: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceReport {
        name: name.to_string(),
        mean_psnr: mean(frames.iter().map(|f| f.psnr)),
        mean_ssim: mean(frames.iter().map(|f| f.ssim)),
        frames,
    })
}

impl EvalReport {
    pub fn new(method: impl Into<String>, sequences: Vec<SequenceReport>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("report needs at least one sequence"));
        }
        Ok(Self {
            method: method.into(),
            excluded_edge_frames: EDGE_EXCLUDE,
            mean_psnr: mean(sequences.iter().map(|s| s.mean_psnr)),
            mean_ssim: mean(sequences.iter().map(|s| s.mean_ssim)),
            sequences,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[1, h, w], f).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = frame(8, 8, |i| (i % 7) as f64 / 10.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 1.0 / 255.0);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        let z = frame(4, 4, |_| 0.0);
        let o = frame(4, 4, |_| 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&z, &frame(4, 5, |_| 0.0)).is_err());
    }

    #[test]
    fn ssim_basics() {
        let a = frame(16, 16, |i| ((i * 37) % 17) as f64 / 16.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let board = frame(16, 16, |i| ((i / 16 + i % 16) % 2) as f64);
        let inv = board.map(|v| 1.0 - v);
        assert!(ssim(&board, &inv).unwrap() < 0.0);
        assert!(ssim(&frame(10, 16, |_| 0.0), &frame(10, 16, |_| 0.0)).is_err());
    }

    #[test]
    fn window_is_normalised() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
    }

    #[test]
    fn sequence_scores_interior_frames() {
        let hr: Vec<_> = (0..7)
            .map(|t| Tensor::<f32>::from_fn(&[1, 12, 12], |i| ((i + t) % 5) as f32 / 5.0).unwrap())
            .collect();
        let r = evaluate_sequence("s", &hr, &hr).unwrap();
        assert_eq!(r.frames.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(r.mean_psnr, PSNR_CAP);
        assert!((r.mean_ssim - 1.0).abs() < 1e-12);
        assert!(evaluate_sequence("s", &hr[..4], &hr[..4]).is_err());
    }

    #[test]
    fn report_json_roundtrip() {
        let s = SequenceReport {
            name: "a".into(),
            frames: vec![FrameScore {
                frame: 2,
                psnr: 30.0,
                ssim: 0.9,
            }],
            mean_psnr: 30.0,
            mean_ssim: 0.9,
        };
        let mut t = s.clone();
        t.mean_psnr = 20.0;
        let r = EvalReport::new("bicubic", vec![s, t]).unwrap();
        assert_eq!(r.mean_psnr, 25.0);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }
}
