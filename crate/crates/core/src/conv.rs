//! Plain 3D and 2D convolution, stride 1, dilation 1, zero "same" padding.
//!
//! For a 3x3x3 kernel the output at `p0` is
//! `bias + sum_n w(p_n) * x(p0 + p_n)` over the 27 taps
//! `p_n in {-1,0,1}^3`, enumerated lexicographically in `(dt, dh, dw)`.
//! Taps landing outside the input read zero.
//!
//! Every output element accumulates its terms in the same order
//! (input channel outer, tap inner), which the deformable kernel mirrors.

use crate::error::{Error, Result};
use crate::gemm::{matmul, matmul_nt_acc, row_blocks, transpose, Mat};
use crate::parallel::for_each_chunk;
use crate::tensor::{Scalar, Tensor};

/// Weights of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<S = f32> {
    /// `[C_out, C_in, kT, kH, kW]` (3D) or `[C_out, C_in, kH, kW]` (2D).
    pub weight: Tensor<S>,
    /// `[C_out]`.
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> ConvWeights<S> {
    pub fn new(weight: Tensor<S>, bias: Option<Tensor<S>>) -> Result<Self> {
        let cw = Self { weight, bias };
        cw.validate()?;
        Ok(cw)
    }

    pub fn zeros(shape: &[usize], with_bias: bool) -> Result<Self> {
        let weight = Tensor::zeros(shape)?;
        let bias = if with_bias {
            Some(Tensor::zeros(&[shape[0]])?)
        } else {
            None
        };
        Self::new(weight, bias)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> &[usize] {
        &self.weight.shape()[2..]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if !(s.len() == 4 || s.len() == 5) {
            return Err(Error::invalid(format!("conv weight must be rank 4 or 5, got {s:?}")));
        }
        if s[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!("conv kernel extents must be odd, got {s:?}")));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [s[0]] {
                return Err(Error::mismatch("conv bias", b.shape(), &[s[0]]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    t: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    fn taps(&self) -> usize {
        self.kt * self.kh * self.kw
    }
}

/// Valid output index range for a tap displaced by `d` on an axis of length `n`.
#[inline]
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

fn check_bias<S: Scalar>(bias: Option<&Tensor<S>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::mismatch("conv bias", b.shape(), &[cout]));
        }
    }
    Ok(())
}

fn geometry3d<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>) -> Result<Geometry> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 5 {
        return Err(Error::invalid(format!(
            "conv3d expects x [C, T, H, W] and w [Co, Ci, kT, kH, kW], got {xs:?} and {ws:?}"
        )));
    }
    if xs[0] != ws[1] {
        return Err(Error::mismatch("conv3d channels", xs, ws));
    }
    if ws[2..].iter().any(|k| k % 2 == 0) {
        return Err(Error::invalid(format!("conv kernel extents must be odd, got {ws:?}")));
    }
    Ok(Geometry {
        cin: xs[0],
        cout: ws[0],
        t: xs[1],
        h: xs[2],
        w: xs[3],
        kt: ws[2],
        kh: ws[3],
        kw: ws[4],
    })
}

fn geometry2d<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>) -> Result<Geometry> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 3 || ws.len() != 4 {
        return Err(Error::invalid(format!(
            "conv2d expects x [C, H, W] and w [Co, Ci, kH, kW], got {xs:?} and {ws:?}"
        )));
    }
    if xs[0] != ws[1] {
        return Err(Error::mismatch("conv2d channels", xs, ws));
    }
    if ws[2..].iter().any(|k| k % 2 == 0) {
        return Err(Error::invalid(format!("conv kernel extents must be odd, got {ws:?}")));
    }
    Ok(Geometry {
        cin: xs[0],
        cout: ws[0],
        t: 1,
        h: xs[1],
        w: xs[2],
        kt: 1,
        kh: ws[2],
        kw: ws[3],
    })
}

/// Column buffer `[C_in * taps, rows * W]` for output rows `h0..h1` of frame `t`,
/// row `ci * taps + tap`. Taps falling outside the input read zero.
fn im2col<S: Scalar>(g: &Geometry, x: &[S], t: usize, h0: usize, h1: usize) -> Vec<S> {
    let taps = g.taps();
    let vol = g.volume();
    let n = (h1 - h0) * g.w;
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut cols = vec![S::zero(); g.cin * taps * n];
    for_each_chunk(&mut cols, taps * n, |ci, block| {
        let xc = &x[ci * vol..(ci + 1) * vol];
        let mut tap = 0;
        for kt in 0..g.kt {
            let ti = t as isize + kt as isize - pt;
            for kh in 0..g.kh {
                let dh = kh as isize - ph;
                for kw in 0..g.kw {
                    let dw = kw as isize - pw;
                    let (w0, w1) = valid_range(dw, g.w);
                    let row = &mut block[tap * n..(tap + 1) * n];
                    tap += 1;
                    if ti < 0 || ti as usize >= g.t || w0 >= w1 {
                        continue;
                    }
                    for h in h0..h1 {
                        let hi = h as isize + dh;
                        if hi < 0 || hi as usize >= g.h {
                            continue;
                        }
                        let xoff = (ti as usize * g.h + hi as usize) * g.w;
                        let src = &xc[(xoff as isize + w0 as isize + dw) as usize..(xoff as isize + w1 as isize + dw) as usize];
                        row[(h - h0) * g.w + w0..(h - h0) * g.w + w1].copy_from_slice(src);
                    }
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: accumulate `dcols` into `dx`.
fn col2im<S: Scalar>(g: &Geometry, dcols: &[S], t: usize, h0: usize, h1: usize, dx: &mut [S]) {
    let taps = g.taps();
    let vol = g.volume();
    let n = (h1 - h0) * g.w;
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    for_each_chunk(dx, vol, |ci, dxc| {
        let block = &dcols[ci * taps * n..(ci + 1) * taps * n];
        let mut tap = 0;
        for kt in 0..g.kt {
            let ti = t as isize + kt as isize - pt;
            for kh in 0..g.kh {
                let dh = kh as isize - ph;
                for kw in 0..g.kw {
                    let dw = kw as isize - pw;
                    let (w0, w1) = valid_range(dw, g.w);
                    let row = &block[tap * n..(tap + 1) * n];
                    tap += 1;
                    if ti < 0 || ti as usize >= g.t || w0 >= w1 {
                        continue;
                    }
                    for h in h0..h1 {
                        let hi = h as isize + dh;
                        if hi < 0 || hi as usize >= g.h {
                            continue;
                        }
                        let xoff = (ti as usize * g.h + hi as usize) * g.w;
                        let dst = &mut dxc[(xoff as isize + w0 as isize + dw) as usize..(xoff as isize + w1 as isize + dw) as usize];
                        for (o, &d) in dst.iter_mut().zip(&row[(h - h0) * g.w + w0..(h - h0) * g.w + w1]) {
                            *o += d;
                        }
                    }
                }
            }
        }
    });
}

fn forward_raw<S: Scalar>(g: Geometry, x: &[S], weight: &[S], bias: Option<&[S]>) -> Vec<S> {
    let vol = g.volume();
    let k = g.cin * g.taps();
    let mut out = vec![S::zero(); g.cout * vol];
    for t in 0..g.t {
        for (h0, h1) in row_blocks(g.h, g.w, k) {
            let n = (h1 - h0) * g.w;
            let cols = im2col(&g, x, t, h0, h1);
            let p0 = (t * g.h + h0) * g.w;
            matmul(
                g.cout,
                k,
                n,
                Mat { data: weight, ld: k },
                Mat { data: &cols, ld: n },
                bias,
                &mut out[p0..],
                vol,
            );
        }
    }
    out
}

/// Gradients of a convolution with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<S = f32> {
    /// Present only when requested.
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub dbias: Tensor<S>,
}

fn backward_raw<S: Scalar>(
    g: Geometry,
    x: &[S],
    weight: &[S],
    dy: &[S],
    want_dx: bool,
) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
    let vol = g.volume();
    let k = g.cin * g.taps();

    let dbias: Vec<S> = (0..g.cout)
        .map(|co| dy[co * vol..(co + 1) * vol].iter().copied().sum())
        .collect();

    let mut dw = vec![S::zero(); g.cout * k];
    let mut dx = want_dx.then(|| vec![S::zero(); g.cin * vol]);
    let wt = if want_dx { transpose(weight, g.cout, k) } else { Vec::new() };
    for t in 0..g.t {
        for (h0, h1) in row_blocks(g.h, g.w, k) {
            let n = (h1 - h0) * g.w;
            let p0 = (t * g.h + h0) * g.w;
            let dyb = Mat { data: &dy[p0..], ld: vol };
            let cols = im2col(&g, x, t, h0, h1);
            // dw[co, kk] += sum_p dy[co, p] * cols[kk, p]
            matmul_nt_acc(g.cout, k, n, dyb, Mat { data: &cols, ld: n }, &mut dw);
            if let Some(dx) = dx.as_mut() {
                // dcols[kk, p] = sum_co w[co, kk] * dy[co, p]
                let mut dcols = cols;
                matmul(k, g.cout, n, Mat { data: &wt, ld: g.cout }, dyb, None, &mut dcols, n);
                col2im(&g, &dcols, t, h0, h1, dx);
            }
        }
    }
    (dx, dw, dbias)
}

/// 3D convolution of `x: [C_in, T, H, W]` with `weight: [C_out, C_in, kT, kH, kW]`.
pub fn conv3d<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let g = geometry3d(x, weight)?;
    check_bias(bias, g.cout)?;
    let out = forward_raw(g, x.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.cout, g.t, g.h, g.w], out)
}

pub fn conv3d_forward<S: Scalar>(x: &Tensor<S>, p: &ConvWeights<S>) -> Result<Tensor<S>> {
    conv3d(x, &p.weight, p.bias.as_ref())
}

/// Adjoint of [`conv3d`]: `dx` is the correlation of `dy` with the flipped
/// kernel, `dw` the cross-correlation of `x` with `dy`, `dbias` the
/// per-channel sum of `dy`.
pub fn conv3d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    want_dx: bool,
) -> Result<ConvGrads<S>> {
    let g = geometry3d(x, weight)?;
    if dy.shape() != [g.cout, g.t, g.h, g.w] {
        return Err(Error::mismatch("conv3d_backward dy", dy.shape(), &[g.cout, g.t, g.h, g.w]));
    }
    let (dx, dw, dbias) = backward_raw(g, x.data(), weight.data(), dy.data(), want_dx);
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        dw: Tensor::new(weight.shape(), dw)?,
        dbias: Tensor::new(&[g.cout], dbias)?,
    })
}

/// 2D convolution of `x: [C_in, H, W]` with `weight: [C_out, C_in, kH, kW]`.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let g = geometry2d(x, weight)?;
    check_bias(bias, g.cout)?;
    let out = forward_raw(g, x.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.cout, g.h, g.w], out)
}

pub fn conv2d_forward<S: Scalar>(x: &Tensor<S>, p: &ConvWeights<S>) -> Result<Tensor<S>> {
    conv2d(x, &p.weight, p.bias.as_ref())
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    want_dx: bool,
) -> Result<ConvGrads<S>> {
    let g = geometry2d(x, weight)?;
    if dy.shape() != [g.cout, g.h, g.w] {
        return Err(Error::mismatch("conv2d_backward dy", dy.shape(), &[g.cout, g.h, g.w]));
    }
    let (dx, dw, dbias) = backward_raw(g, x.data(), weight.data(), dy.data(), want_dx);
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        dw: Tensor::new(weight.shape(), dw)?,
        dbias: Tensor::new(&[g.cout], dbias)?,
    })
}

/// Multiply-accumulates of one same-padded convolution producing `out_positions` outputs.
pub fn conv_macs(weight_shape: &[usize], out_positions: usize) -> u64 {
    let per_output: usize = weight_shape[1..].iter().product();
    (weight_shape[0] * per_output) as u64 * out_positions as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_through() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 4, 5], |i| (i as f64 * 0.37).sin()).unwrap();
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]).unwrap();
        w.set(&[0, 0, 1, 1, 1], 1.0);
        let y = conv3d(&x, &w, Some(&Tensor::zeros(&[1]).unwrap())).unwrap();
        assert!(y.bit_eq(&x));

        let x2 = Tensor::<f64>::from_fn(&[1, 4, 5], |i| i as f64).unwrap();
        let mut w2 = Tensor::<f64>::zeros(&[1, 1, 3, 3]).unwrap();
        w2.set(&[0, 0, 1, 1], 1.0);
        assert!(conv2d(&x2, &w2, None).unwrap().bit_eq(&x2));
    }

    #[test]
    fn all_ones_counts_in_bounds_taps() {
        let x = Tensor::<f32>::full(&[1, 3, 3, 3], 1.0).unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 3, 3, 3], 1.0).unwrap();
        let y = conv3d(&x, &w, None).unwrap();
        assert_eq!(y.at(&[0, 1, 1, 1]), 27.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 8.0);
        assert_eq!(y.at(&[0, 2, 2, 2]), 8.0);
        // edge centre: 2 * 3 * 3 = 18 in-bounds taps at (t=0, h=1, w=1)
        assert_eq!(y.at(&[0, 0, 1, 1]), 18.0);
    }

    #[test]
    fn zero_dy_gives_zero_grads() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 4], |i| i as f64).unwrap();
        let w = Tensor::<f64>::full(&[3, 2, 3, 3, 3], 0.5).unwrap();
        let dy = Tensor::<f64>::zeros(&[3, 3, 4, 4]).unwrap();
        let g = conv3d_backward(&x, &w, &dy, true).unwrap();
        assert!(g.dx.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.dw.data().iter().all(|&v| v == 0.0));
        assert!(g.dbias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dbias_is_element_count_for_unit_dy() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 1, 3, 3, 3]).unwrap();
        let dy = Tensor::<f64>::full(&[2, 3, 4, 4], 1.0).unwrap();
        let g = conv3d_backward(&x, &w, &dy, false).unwrap();
        assert_eq!(g.dbias.data(), &[48.0, 48.0]);
        assert!(g.dx.is_none());
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 3, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3, 3]).unwrap();
        assert!(conv3d(&x, &w, None).is_err());
        let w_even = Tensor::<f32>::zeros(&[1, 2, 2, 3, 3]).unwrap();
        assert!(conv3d(&x, &w_even, None).is_err());
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3, 3]).unwrap();
        let bad_dy = Tensor::<f32>::zeros(&[1, 3, 4, 5]).unwrap();
        assert!(conv3d_backward(&x, &w, &bad_dy, true).is_err());
        assert!(conv3d(&x, &w, Some(&Tensor::zeros(&[2]).unwrap())).is_err());
    }

    #[test]
    fn macs_formula() {
        assert_eq!(conv_macs(&[64, 1, 3, 3, 3], 10), 64 * 27 * 10);
    }
}
