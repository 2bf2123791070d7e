//! Independent reference implementations used as oracles. Written as
//! direct nested loops over the defining sums, with no shared code from
//! the library's kernels.
#![allow(dead_code)]

use d3d::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
}

/// Largest `|a - b| / max(|b|, 1)` over all elements.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Zero-padded same-size 3D correlation, summed naively.
pub fn conv3d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [ci, t, h, wd] = x.shape().try_into().unwrap();
    let [co, _, kt, kh, kw] = w.shape().try_into().unwrap();
    let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = Tensor::zeros(&[co, t, h, wd]).unwrap();
    for o in 0..co {
        for z in 0..t {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for a in 0..kt {
                            for bb in 0..kh {
                                for d in 0..kw {
                                    let zz = z as isize + a as isize - pt;
                                    let yy = y as isize + bb as isize - ph;
                                    let x2 = xx as isize + d as isize - pw;
                                    if zz < 0 || yy < 0 || x2 < 0 || zz >= t as isize || yy >= h as isize || x2 >= wd as isize {
                                        continue;
                                    }
                                    s += w.at(&[o, c, a, bb, d]) * x.at(&[c, zz as usize, yy as usize, x2 as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[o, z, y, xx], s);
                }
            }
        }
    }
    out
}

pub fn conv2d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [ci, h, wd] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = w.shape().try_into().unwrap();
    let x3 = x.clone().reshape(&[ci, 1, h, wd]).unwrap();
    let w3 = w.clone().reshape(&[co, ci, 1, kh, kw]).unwrap();
    conv3d_naive(&x3, &w3, b).reshape(&[co, h, wd]).unwrap()
}

/// Bilinear read with zero outside the frame, written from the textbook
/// four-corner formula.
pub fn bilinear(x: &Tensor<f64>, c: usize, t: usize, py: f64, px: f64) -> f64 {
    let (h, w) = (x.shape()[2] as isize, x.shape()[3] as isize);
    let (y0, x0) = (py.floor(), px.floor());
    let (fy, fx) = (py - y0, px - x0);
    let get = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            0.0
        } else {
            x.at(&[c, t, yy as usize, xx as usize])
        }
    };
    let (y0, x0) = (y0 as isize, x0 as isize);
    (1.0 - fy) * (1.0 - fx) * get(y0, x0)
        + (1.0 - fy) * fx * get(y0, x0 + 1)
        + fy * (1.0 - fx) * get(y0 + 1, x0)
        + fy * fx * get(y0 + 1, x0 + 1)
}

/// Deformable 3D convolution with a `3x3x3` kernel, offsets `[54, T, H, W]`
/// (channel `2n` = dh, `2n+1` = dw for tap `n = 9*dt + 3*dh + dw`).
pub fn d3d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, off: &Tensor<f64>) -> Tensor<f64> {
    let [ci, t, h, wd] = x.shape().try_into().unwrap();
    let co = w.shape()[0];
    let mut out = Tensor::zeros(&[co, t, h, wd]).unwrap();
    for o in 0..co {
        for z in 0..t {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for n in 0..27 {
                            let (a, bb, d) = (n / 9, (n / 3) % 3, n % 3);
                            let zz = z as isize + a as isize - 1;
                            if zz < 0 || zz >= t as isize {
                                continue;
                            }
                            let py = y as f64 + bb as f64 - 1.0 + off.at(&[2 * n, z, y, xx]);
                            let px = xx as f64 + d as f64 - 1.0 + off.at(&[2 * n + 1, z, y, xx]);
                            s += w.at(&[o, c, a, bb, d]) * bilinear(x, c, zz as usize, py, px);
                        }
                    }
                    out.set(&[o, z, y, xx], s);
                }
            }
        }
    }
    out
}

/// Keys cubic, a = -0.5.
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Antialiased bicubic resize of one plane by a rational factor, borders
/// replicated, weights normalised. Same conventions as MATLAB's imresize.
pub fn imresize_naive(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |n: usize, m: usize| -> Vec<Vec<(usize, f64)>> {
        let s = m as f64 / n as f64;
        let k = s.min(1.0);
        (0..m)
            .map(|i| {
                let c = (i as f64 + 0.5) / s - 0.5;
                let support = 2.0 / k;
                let lo = (c - support).floor() as isize;
                let hi = (c + support).ceil() as isize;
                let mut taps: Vec<(usize, f64)> = (lo..=hi)
                    .map(|j| (j.clamp(0, n as isize - 1) as usize, k * cubic(k * (c - j as f64))))
                    .filter(|(_, v)| *v != 0.0)
                    .collect();
                let tot: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter_mut().for_each(|t| t.1 /= tot);
                taps
            })
            .collect()
    };
    let (ay, ax) = (axis(h, oh), axis(w, ow));
    let mut out = vec![0.0; oh * ow];
    for (i, ty) in ay.iter().enumerate() {
        for (j, tx) in ax.iter().enumerate() {
            let mut s = 0.0;
            for &(y, wy) in ty {
                for &(x, wx) in tx {
                    s += wy * wx * src[y * w + x];
                }
            }
            out[i * ow + j] = s;
        }
    }
    out
}

/// SSIM averaged over every 11x11 window position, each window computed
/// from scratch with the 2-D Gaussian weights (sigma 1.5).
pub fn ssim_naive(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let g1: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g1.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = g1[i] * g1[j] / norm;
                    let (u, v) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += g * u;
                    mb += g * v;
                    saa += g * u * u;
                    sbb += g * v * v;
                    sab += g * u * v;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
