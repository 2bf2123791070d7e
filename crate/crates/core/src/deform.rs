//! Deformable 3D convolution.
//!
//! Each of the `N = kT*kH*kW` kernel taps is displaced in the spatial plane
//! by a learned, per-output-location offset `(dh, dw)`:
//!
//! ```text
//! y(p0) = bias + sum_n w(p_n) * x(p0 + p_n + offset_n(p0))
//! ```
//!
//! The temporal coordinate of a tap is never displaced. Fractional sample
//! positions are resolved by bilinear interpolation within the tap's frame;
//! corners outside the frame contribute zero, matching the zero padding of
//! [`crate::conv`].
//!
//! Offsets live in an [`OffsetField`] of shape `[2N, T, H, W]`: channel `2n`
//! holds `dh` and channel `2n + 1` holds `dw` for tap `n`, taps enumerated
//! lexicographically in `(dt, dh, dw)`. One offset field is shared by all
//! input channels.

use crate::conv::{conv3d, conv3d_backward, ConvWeights};
use crate::error::{Error, Result};
use crate::gemm::{matmul, matmul_nt_acc, row_blocks, transpose, Mat};
use crate::parallel::for_each_chunk;
use crate::tensor::{Scalar, Tensor};

/// Per-location spatial displacements of every kernel tap, `[2N, T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField<S = f32>(Tensor<S>);

impl<S: Scalar> OffsetField<S> {
    pub fn new(t: Tensor<S>) -> Result<Self> {
        if t.rank() != 4 || !t.shape()[0].is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "offset field must be [2N, T, H, W], got {:?}",
                t.shape()
            )));
        }
        Ok(Self(t))
    }

    pub fn zeros(taps: usize, t: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[2 * taps, t, h, w])?)
    }

    /// Same offset `(dh, dw)` for every tap and location.
    pub fn constant(taps: usize, t: usize, h: usize, w: usize, dh: S, dw: S) -> Result<Self> {
        let vol = t * h * w;
        Self::new(Tensor::from_fn(&[2 * taps, t, h, w], |i| {
            if (i / vol).is_multiple_of(2) {
                dh
            } else {
                dw
            }
        })?)
    }

    pub fn taps(&self) -> usize {
        self.0.shape()[0] / 2
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.0
    }
}

/// One deformable 3D convolution with its offset generator.
#[derive(Debug, Clone, PartialEq)]
pub struct D3DLayer<S = f32> {
    pub main: ConvWeights<S>,
    /// `C_in -> 2N` convolution with the same kernel extents as `main`.
    pub offset_gen: ConvWeights<S>,
}

impl<S: Scalar> D3DLayer<S> {
    /// Layer with the given main weights and a zero offset generator,
    /// so it starts out as a plain 3D convolution.
    pub fn from_main(main: ConvWeights<S>) -> Result<Self> {
        let k = main.kernel().to_vec();
        if k.len() != 3 {
            return Err(Error::invalid("D3D main kernel must be 3D"));
        }
        let taps: usize = k.iter().product();
        let offset_gen = ConvWeights::zeros(&[2 * taps, main.in_channels(), k[0], k[1], k[2]], true)?;
        Self::new(main, offset_gen)
    }

    pub fn new(main: ConvWeights<S>, offset_gen: ConvWeights<S>) -> Result<Self> {
        let taps: usize = main.kernel().iter().product();
        if offset_gen.out_channels() != 2 * taps {
            return Err(Error::invalid(format!(
                "offset generator must have 2N = {} output channels, has {}",
                2 * taps,
                offset_gen.out_channels()
            )));
        }
        if offset_gen.in_channels() != main.in_channels() {
            return Err(Error::invalid("offset generator and main kernel must read the same input"));
        }
        Ok(Self { main, offset_gen })
    }
}

pub fn generate_offsets<S: Scalar>(x: &Tensor<S>, gen: &ConvWeights<S>, taps: usize) -> Result<OffsetField<S>> {
    if gen.out_channels() != 2 * taps {
        return Err(Error::invalid(format!(
            "offset generator has {} output channels, expected 2N = {}",
            gen.out_channels(),
            2 * taps
        )));
    }
    OffsetField::new(conv3d(x, &gen.weight, gen.bias.as_ref())?)
}

/// Bilinear read of channel `c`, frame `t` of `x: [C, T, H, W]` at real `(h, w)`.
/// Out-of-range frames and corners read zero.
pub fn bilinear_sample<S: Scalar>(x: &Tensor<S>, c: usize, t: isize, h: S, w: S) -> S {
    let s = x.shape();
    let (tt, hh, ww) = (s[1], s[2], s[3]);
    if t < 0 || t as usize >= tt || c >= s[0] {
        return S::zero();
    }
    let plane = &x.data()[(c * tt + t as usize) * hh * ww..][..hh * ww];
    Resolved::new(&Site::new(h, w), hh, ww).sample(plane)
}

/// Integer corner and fractional weights of one bilinear read.
#[derive(Clone, Copy)]
struct Site<S> {
    h0: isize,
    w0: isize,
    lh: S,
    lw: S,
}

impl<S: Scalar> Site<S> {
    #[inline]
    fn new(h: S, w: S) -> Self {
        let hf = h.floor();
        let wf = w.floor();
        Self {
            h0: hf.to_isize().unwrap_or(isize::MIN / 2),
            w0: wf.to_isize().unwrap_or(isize::MIN / 2),
            lh: h - hf,
            lw: w - wf,
        }
    }

    /// The four corners with their interpolation weights, in a fixed order.
    #[inline]
    fn corners(&self) -> [(isize, isize, S); 4] {
        let one = S::one();
        [
            (self.h0, self.w0, (one - self.lh) * (one - self.lw)),
            (self.h0, self.w0 + 1, (one - self.lh) * self.lw),
            (self.h0 + 1, self.w0, self.lh * (one - self.lw)),
            (self.h0 + 1, self.w0 + 1, self.lh * self.lw),
        ]
    }
}

/// A bilinear read resolved against a concrete `hh x ww` plane: flat corner
/// indices (clamped into the plane) and weights, zeroed for corners that
/// fall outside.
#[derive(Clone, Copy)]
struct Resolved<S> {
    idx: [u32; 4],
    /// Bilinear weight of each corner, zero outside the plane.
    wt: [S; 4],
    /// 1 inside the plane, 0 outside.
    inside: [S; 4],
    lh: S,
    lw: S,
}

impl<S: Scalar> Resolved<S> {
    #[inline]
    fn new(site: &Site<S>, hh: usize, ww: usize) -> Self {
        let mut r = Self {
            idx: [0; 4],
            wt: [S::zero(); 4],
            inside: [S::zero(); 4],
            lh: site.lh,
            lw: site.lw,
        };
        for (i, (h, w, wt)) in site.corners().into_iter().enumerate() {
            if h >= 0 && w >= 0 && (h as usize) < hh && (w as usize) < ww {
                r.idx[i] = (h as usize * ww + w as usize) as u32;
                r.wt[i] = wt;
                r.inside[i] = S::one();
            }
        }
        r
    }

    #[inline]
    fn sample(&self, plane: &[S]) -> S {
        let mut v = S::zero();
        for i in 0..4 {
            v += self.wt[i] * plane[self.idx[i] as usize];
        }
        v
    }

    /// Corner values, zero outside the plane.
    #[inline]
    fn corners(&self, plane: &[S]) -> [S; 4] {
        std::array::from_fn(|i| self.inside[i] * plane[self.idx[i] as usize])
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
    fn taps(&self) -> usize {
        self.kt * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

fn geometry<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, offsets: &OffsetField<S>) -> Result<Geometry> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 5 {
        return Err(Error::invalid(format!(
            "d3d expects x [C, T, H, W] and w [Co, Ci, kT, kH, kW], got {xs:?} and {ws:?}"
        )));
    }
    if xs[0] != ws[1] {
        return Err(Error::mismatch("d3d channels", xs, ws));
    }
    if ws[2..].iter().any(|k| k % 2 == 0) {
        return Err(Error::invalid(format!("d3d kernel extents must be odd, got {ws:?}")));
    }
    let g = Geometry {
        cin: xs[0],
        cout: ws[0],
        t: xs[1],
        h: xs[2],
        w: xs[3],
        kt: ws[2],
        kh: ws[3],
        kw: ws[4],
    };
    let expect = [2 * g.taps(), g.t, g.h, g.w];
    if offsets.tensor().shape() != expect {
        return Err(Error::mismatch("d3d offsets", offsets.tensor().shape(), &expect));
    }
    Ok(g)
}

/// Sampling sites of every tap at every location of output rows `h0..h1`
/// of frame `t`, plus the source frame of each tap (`None` when it falls
/// outside the clip).
struct BlockPlan<S> {
    sites: Vec<Resolved<S>>,
    frames: Vec<Option<usize>>,
    t: usize,
    h0: usize,
    n: usize,
}

fn plan_block<S: Scalar>(g: &Geometry, offsets: &[S], t: usize, h0: usize, h1: usize) -> BlockPlan<S> {
    let taps = g.taps();
    let hw = g.plane();
    let vol = g.t * hw;
    let n = (h1 - h0) * g.w;
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut sites = Vec::with_capacity(taps * n);
    let mut frames = Vec::with_capacity(taps);
    for kt in 0..g.kt {
        let src_t = t as isize + kt as isize - pt;
        for kh in 0..g.kh {
            for kw in 0..g.kw {
                let tap = (kt * g.kh + kh) * g.kw + kw;
                frames.push((src_t >= 0 && (src_t as usize) < g.t).then_some(src_t as usize));
                let base = t * hw + h0 * g.w;
                let off_h = &offsets[(2 * tap) * vol + base..][..n];
                let off_w = &offsets[(2 * tap + 1) * vol + base..][..n];
                let dh = S::lit((kh as isize - ph) as f64);
                let dw = S::lit((kw as isize - pw) as f64);
                for h in h0..h1 {
                    let hb = S::lit(h as f64) + dh;
                    for w in 0..g.w {
                        let i = (h - h0) * g.w + w;
                        sites.push(Resolved::new(&Site::new(hb + off_h[i], S::lit(w as f64) + dw + off_w[i]), g.h, g.w));
                    }
                }
            }
        }
    }
    BlockPlan { sites, frames, t, h0, n }
}

/// Sampled input columns `[C_in * N, n]` for one block, row `ci * N + tap`.
fn gather_columns<S: Scalar>(g: &Geometry, x: &[S], plan: &BlockPlan<S>) -> Vec<S> {
    let taps = g.taps();
    let hw = g.plane();
    let vol = g.t * hw;
    let n = plan.n;
    let mut cols = vec![S::zero(); g.cin * taps * n];
    for_each_chunk(&mut cols, taps * n, |ci, block| {
        for tap in 0..taps {
            let Some(src_t) = plan.frames[tap] else { continue };
            let plane = &x[ci * vol + src_t * hw..][..hw];
            let sites = &plan.sites[tap * n..(tap + 1) * n];
            for (dst, site) in block[tap * n..(tap + 1) * n].iter_mut().zip(sites) {
                *dst = site.sample(plane);
            }
        }
    });
    cols
}

/// Deformable 3D convolution with an explicit offset field.
pub fn d3d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    offsets: &OffsetField<S>,
) -> Result<Tensor<S>> {
    let g = geometry(x, weight, offsets)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::mismatch("d3d bias", b.shape(), &[g.cout]));
        }
    }
    let k = g.cin * g.taps();
    let vol = g.t * g.plane();
    let mut out = vec![S::zero(); g.cout * vol];
    for t in 0..g.t {
        for (h0, h1) in row_blocks(g.h, g.w, k) {
            let plan = plan_block(&g, offsets.tensor().data(), t, h0, h1);
            let cols = gather_columns(&g, x.data(), &plan);
            let p0 = (t * g.h + h0) * g.w;
            matmul(
                g.cout,
                k,
                plan.n,
                Mat { data: weight.data(), ld: k },
                Mat { data: &cols, ld: plan.n },
                bias.map(|b| b.data()),
                &mut out[p0..],
                vol,
            );
        }
    }
    Tensor::new(&[g.cout, g.t, g.h, g.w], out)
}

/// Full layer: generate offsets from `x`, then deform-convolve `x`.
pub fn d3d_forward<S: Scalar>(x: &Tensor<S>, layer: &D3DLayer<S>) -> Result<Tensor<S>> {
    let taps: usize = layer.main.kernel().iter().product();
    let offsets = generate_offsets(x, &layer.offset_gen, taps)?;
    d3d(x, &layer.main.weight, layer.main.bias.as_ref(), &offsets)
}

/// Gradients of [`d3d`].
#[derive(Debug, Clone)]
pub struct D3dGrads<S = f32> {
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub dbias: Tensor<S>,
    pub doffsets: Tensor<S>,
}

/// Adjoint of [`d3d`] with respect to input, weights, bias and offsets.
///
/// `dx` scatters `dy * w` back through the four bilinear corners of every
/// tap; the offset gradient uses the piecewise-linear derivative of the
/// bilinear blend (corner differences along each axis).
pub fn d3d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    offsets: &OffsetField<S>,
    dy: &Tensor<S>,
    want_dx: bool,
) -> Result<D3dGrads<S>> {
    let g = geometry(x, weight, offsets)?;
    let expect = [g.cout, g.t, g.h, g.w];
    if dy.shape() != expect {
        return Err(Error::mismatch("d3d_backward dy", dy.shape(), &expect));
    }
    let taps = g.taps();
    let k = g.cin * taps;
    let hw = g.plane();
    let vol = g.t * hw;
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();

    let dbias: Vec<S> = (0..g.cout)
        .map(|co| dyd[co * vol..(co + 1) * vol].iter().copied().sum())
        .collect();
    let mut dw = vec![S::zero(); g.cout * k];
    let mut dx = want_dx.then(|| vec![S::zero(); g.cin * vol]);
    let mut doff = vec![S::zero(); 2 * taps * vol];
    let wt = transpose(wd, g.cout, k);

    for t in 0..g.t {
        for (h0, h1) in row_blocks(g.h, g.w, k) {
            let plan = plan_block(&g, offsets.tensor().data(), t, h0, h1);
            let n = plan.n;
            let p0 = (t * g.h + h0) * g.w;
            let dyb = Mat { data: &dyd[p0..], ld: vol };
            let cols = gather_columns(&g, xd, &plan);
            matmul_nt_acc(g.cout, k, n, dyb, Mat { data: &cols, ld: n }, &mut dw);

            // dcols[kk, p] = sum_co w[co, kk] * dy[co, p]
            let mut dcols = cols;
            matmul(k, g.cout, n, Mat { data: &wt, ld: g.cout }, dyb, None, &mut dcols, n);

            if let Some(dx) = dx.as_mut() {
                scatter_columns(&g, &plan, &dcols, dx);
            }
            offset_grads(&g, &plan, xd, &dcols, &mut doff);
        }
    }

    Ok(D3dGrads {
        dx: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        dw: Tensor::new(weight.shape(), dw)?,
        dbias: Tensor::new(&[g.cout], dbias)?,
        doffsets: Tensor::new(offsets.tensor().shape(), doff)?,
    })
}

/// Adjoint of [`gather_columns`]: spread `dcols` back through the bilinear corners.
fn scatter_columns<S: Scalar>(g: &Geometry, plan: &BlockPlan<S>, dcols: &[S], dx: &mut [S]) {
    let taps = g.taps();
    let hw = g.plane();
    let vol = g.t * hw;
    let n = plan.n;
    for_each_chunk(dx, vol, |ci, dxc| {
        for tap in 0..taps {
            let Some(src_t) = plan.frames[tap] else { continue };
            let plane = &mut dxc[src_t * hw..(src_t + 1) * hw];
            let drow = &dcols[(ci * taps + tap) * n..][..n];
            let sites = &plan.sites[tap * n..(tap + 1) * n];
            for (&d, site) in drow.iter().zip(sites) {
                for i in 0..4 {
                    plane[site.idx[i] as usize] += site.wt[i] * d;
                }
            }
        }
    });
}

/// Offset gradient of one block: derivative of the bilinear blend along
/// each axis (corner differences), weighted by `dcols`, summed over channels.
fn offset_grads<S: Scalar>(g: &Geometry, plan: &BlockPlan<S>, x: &[S], dcols: &[S], doff: &mut [S]) {
    let taps = g.taps();
    let hw = g.plane();
    let vol = g.t * hw;
    let n = plan.n;
    let base = plan.t * hw + plan.h0 * g.w;
    let one = S::one();
    for tap in 0..taps {
        let Some(src_t) = plan.frames[tap] else { continue };
        let sites = &plan.sites[tap * n..(tap + 1) * n];
        for ci in 0..g.cin {
            let plane = &x[ci * vol + src_t * hw..][..hw];
            let drow = &dcols[(ci * taps + tap) * n..][..n];
            for (p, (&d, site)) in drow.iter().zip(sites).enumerate() {
                let [v00, v01, v10, v11] = site.corners(plane);
                let d_h = (one - site.lw) * (v10 - v00) + site.lw * (v11 - v01);
                let d_w = (one - site.lh) * (v01 - v00) + site.lh * (v11 - v10);
                doff[(2 * tap) * vol + base + p] += d * d_h;
                doff[(2 * tap + 1) * vol + base + p] += d * d_w;
            }
        }
    }
}

/// Gradients of a whole [`D3DLayer`], including its offset generator.
#[derive(Debug, Clone)]
pub struct D3DLayerGrads<S = f32> {
    pub dx: Tensor<S>,
    pub main: D3dGrads<S>,
    pub offset_gen_dw: Tensor<S>,
    pub offset_gen_dbias: Tensor<S>,
}

pub fn d3d_layer_backward<S: Scalar>(x: &Tensor<S>, layer: &D3DLayer<S>, dy: &Tensor<S>) -> Result<D3DLayerGrads<S>> {
    let taps: usize = layer.main.kernel().iter().product();
    let offsets = generate_offsets(x, &layer.offset_gen, taps)?;
    let main = d3d_backward(x, &layer.main.weight, &offsets, dy, true)?;
    let gen = conv3d_backward(x, &layer.offset_gen.weight, &main.doffsets, true)?;
    let mut dx = main.dx.clone().expect("requested dx");
    dx.add_assign(gen.dx.as_ref().expect("requested dx"))?;
    Ok(D3DLayerGrads {
        dx,
        main,
        offset_gen_dw: gen.dw,
        offset_gen_dbias: gen.dbias,
    })
}

/// Multiply-accumulates of one deformable layer (main kernel plus bilinear
/// sampling at 4 per tap and input channel), excluding the offset generator.
pub fn d3d_macs(weight_shape: &[usize], out_positions: usize) -> u64 {
    let cin = weight_shape[1] as u64;
    let taps: u64 = weight_shape[2..].iter().map(|&k| k as u64).product();
    let main = weight_shape[0] as u64 * cin * taps;
    let sampling = 4 * cin * taps;
    (main + sampling) * out_positions as u64
}
