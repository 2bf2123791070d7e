use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_with<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Self) -> Result<Self> {
        zip_with("add", self, other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        zip_with("sub", self, other, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        zip_with("mul", self, other, |x, y| x * y)
    }

    pub fn scalar_mul(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > S::zero() { v } else { S::zero() })
    }

    /// Concatenate along axis 0. Every other extent must agree.
    pub fn concat_channels(ts: &[&Self]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels needs at least one tensor"))?;
        let tail = &first.shape()[1..];
        let mut channels = 0;
        let mut data = Vec::with_capacity(ts.iter().map(|t| t.len()).sum());
        for t in ts {
            if &t.shape()[1..] != tail {
                return Err(Error::mismatch("concat_channels", first.shape(), t.shape()));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = channels;
        Tensor::new(&shape, data)
    }

    /// Channels `start..end` along axis 0.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let c = self.shape()[0];
        if start >= end || end > c {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} invalid for {c} channels"
            )));
        }
        let plane = self.len() / c;
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Tensor::new(&shape, self.data()[start * plane..end * plane].to_vec())
    }

    /// `[C*r*r, H, W] -> [C, H*r, W*r]` with
    /// `out(c, h*r + dy, w*r + dx) = in(c*r*r + dy*r + dx, h, w)`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        if self.rank() != 3 || r == 0 {
            return Err(Error::invalid(format!(
                "pixel_shuffle expects [C, H, W] and r >= 1, got {:?}, r = {r}",
                self.shape()
            )));
        }
        let (cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if cin % (r * r) != 0 {
            return Err(Error::invalid(format!(
                "pixel_shuffle: {cin} channels not divisible by r^2 = {}",
                r * r
            )));
        }
        let c = cin / (r * r);
        let (ho, wo) = (h * r, w * r);
        let src = self.data();
        let mut out = vec![S::zero(); self.len()];
        for co in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let plane = &src[ci * h * w..(ci + 1) * h * w];
                    for y in 0..h {
                        let row = &plane[y * w..(y + 1) * w];
                        let orow = co * ho * wo + (y * r + dy) * wo;
                        for (x, &v) in row.iter().enumerate() {
                            out[orow + x * r + dx] = v;
                        }
                    }
                }
            }
        }
        Tensor::new(&[c, ho, wo], out)
    }

    /// `[C, T, H, W] -> [T*C, H, W]`, output channel `t*C + c` holding `in(c, t)`:
    /// the T per-frame feature maps concatenated along channels.
    pub fn fold_time(&self) -> Result<Self> {
        if self.rank() != 4 {
            return Err(Error::invalid(format!("fold_time expects [C, T, H, W], got {:?}", self.shape())));
        }
        let (c, t, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let hw = h * w;
        let src = self.data();
        let mut out = Vec::with_capacity(self.len());
        for ti in 0..t {
            for ci in 0..c {
                let off = (ci * t + ti) * hw;
                out.extend_from_slice(&src[off..off + hw]);
            }
        }
        Tensor::new(&[t * c, h, w], out)
    }

    /// Inverse of [`Tensor::fold_time`].
    pub fn unfold_time(&self, frames: usize) -> Result<Self> {
        if self.rank() != 3 || frames == 0 || !self.shape()[0].is_multiple_of(frames) {
            return Err(Error::invalid(format!(
                "unfold_time: cannot split {:?} into {frames} frames",
                self.shape()
            )));
        }
        let (tc, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let c = tc / frames;
        let hw = h * w;
        let src = self.data();
        let mut out = vec![S::zero(); self.len()];
        for ti in 0..frames {
            for ci in 0..c {
                let from = (ti * c + ci) * hw;
                let to = (ci * frames + ti) * hw;
                out[to..to + hw].copy_from_slice(&src[from..from + hw]);
            }
        }
        Tensor::new(&[c, frames, h, w], out)
    }

    /// Frame `t` of a `[C, T, H, W]` tensor as `[C, H, W]`.
    pub fn frame(&self, t: usize) -> Result<Self> {
        if self.rank() != 4 || t >= self.shape()[1] {
            return Err(Error::invalid(format!("frame {t} out of range for {:?}", self.shape())));
        }
        let (c, tt, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let hw = h * w;
        let mut out = Vec::with_capacity(c * hw);
        for ci in 0..c {
            let off = (ci * tt + t) * hw;
            out.extend_from_slice(&self.data()[off..off + hw]);
        }
        Tensor::new(&[c, h, w], out)
    }

    /// Stack `[C, H, W]` frames into `[C, T, H, W]`.
    pub fn stack_frames(frames: &[Self]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("stack_frames needs at least one frame"))?;
        if first.rank() != 3 {
            return Err(Error::invalid(format!("stack_frames expects [C, H, W], got {:?}", first.shape())));
        }
        for f in frames {
            same_shape("stack_frames", first, f)?;
        }
        let (c, h, w) = (first.shape()[0], first.shape()[1], first.shape()[2]);
        let hw = h * w;
        let t = frames.len();
        let mut out = vec![S::zero(); c * t * hw];
        for (ti, f) in frames.iter().enumerate() {
            for ci in 0..c {
                let to = (ci * t + ti) * hw;
                out[to..to + hw].copy_from_slice(&f.data()[ci * hw..(ci + 1) * hw]);
            }
        }
        Tensor::new(&[c, t, h, w], out)
    }
}

/// Inverse of [`Tensor::pixel_shuffle`]: `[C, H*r, W*r] -> [C*r*r, H, W]`.
pub fn pixel_unshuffle<S: Scalar>(t: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    if t.rank() != 3 || r == 0 || !t.shape()[1].is_multiple_of(r) || !t.shape()[2].is_multiple_of(r) {
        return Err(Error::invalid(format!(
            "pixel_unshuffle: {:?} not divisible by r = {r}",
            t.shape()
        )));
    }
    let (c, ho, wo) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (h, w) = (ho / r, wo / r);
    let src = t.data();
    let mut out = vec![S::zero(); t.len()];
    for co in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let ci = co * r * r + dy * r + dx;
                for y in 0..h {
                    let irow = co * ho * wo + (y * r + dy) * wo;
                    let orow = ci * h * w + y * w;
                    for x in 0..w {
                        out[orow + x] = src[irow + x * r + dx];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * r * r, h, w], out)
}
