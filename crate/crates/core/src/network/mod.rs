//! The video super-resolution network.
//!
//! ```text
//! LR clip [1, T, h, w]
//!   -> conv3d 1->C, ReLU
//!   -> B1 residual blocks   y = x + L2(relu(L1(x)))   (L = D3D or plain C3D)
//!   -> fold time into channels [C*T, h, w] -> 1x1 conv2d C*T->C
//!   -> B2 residual blocks   y = x + conv(relu(conv(x)))   (2D, 3x3)
//!   -> per x2 stage: conv2d C->4C, pixel shuffle(2), ReLU
//!   -> conv2d C->1
//! SR centre frame [1, h*r, w*r]
//! ```
//!
//! With the D3D block kind every block layer owns an offset generator
//! (3x3x3 conv, C -> 54) that starts at zero, so a fresh D3D network
//! computes exactly what the C3D network with the same shared weights does.

mod accounting;
mod checkpoint;

pub use accounting::{count_flops, count_params, offset_branch_params, FlopCount};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::upsample;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Kernel taps of a 3x3x3 convolution.
pub const TAPS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    D3d,
    C3d,
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d3d" => Ok(BlockKind::D3d),
            "c3d" => Ok(BlockKind::C3d),
            other => Err(Error::Config(format!("unknown block kind `{other}` (expected d3d or c3d)"))),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockKind::D3d => "d3d",
            BlockKind::C3d => "c3d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Input frames; odd so that a centre reference frame exists.
    pub frames: usize,
    pub channels: usize,
    /// Residual 3D blocks (B1).
    pub res_blocks: usize,
    /// Residual 2D reconstruction blocks (B2).
    pub recon_blocks: usize,
    /// Upscale factor, 2 or 4.
    pub scale: usize,
    pub block: BlockKind,
    /// Add the bicubic upscale of the centre LR frame to the output, so the
    /// network predicts a residual.
    pub global_skip: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            frames: 7,
            channels: 64,
            res_blocks: 5,
            recon_blocks: 6,
            scale: 4,
            block: BlockKind::D3d,
            global_skip: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.frames.is_multiple_of(2) {
            return Err(Error::Config(format!("frames must be odd, got {}", self.frames)));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.res_blocks == 0 || self.recon_blocks == 0 {
            return Err(Error::Config("res_blocks and recon_blocks must be >= 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of x2 pixel-shuffle stages.
    pub fn up_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    pub fn with_block(self, block: BlockKind) -> Self {
        Self { block, ..self }
    }

    /// Every parameter name and shape, in construction order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let mut out = Vec::new();
        let mut conv = |name: String, w: Vec<usize>| {
            let co = w[0];
            out.push((format!("{name}.weight"), w));
            out.push((format!("{name}.bias"), vec![co]));
        };
        conv("input".into(), vec![c, 1, 3, 3, 3]);
        for b in 0..self.res_blocks {
            for l in 0..2 {
                conv(format!("block{b}.conv{l}"), vec![c, c, 3, 3, 3]);
                if self.block == BlockKind::D3d {
                    conv(format!("block{b}.conv{l}.offset"), vec![2 * TAPS, c, 3, 3, 3]);
                }
            }
        }
        conv("fuse".into(), vec![c, c * self.frames, 1, 1]);
        for b in 0..self.recon_blocks {
            for l in 0..2 {
                conv(format!("recon{b}.conv{l}"), vec![c, c, 3, 3]);
            }
        }
        for u in 0..self.up_stages() {
            conv(format!("up{u}"), vec![4 * c, c, 3, 3]);
        }
        conv("output".into(), vec![1, c, 3, 3]);
        out
    }
}

fn is_offset_generator(name: &str) -> bool {
    name.contains(".offset.")
}

/// Network parameters plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S = f32> {
    pub config: NetworkConfig,
    pub params: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> Model<S> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases, zero offset
    /// generators. Offset generators draw nothing from the RNG, so D3D and
    /// C3D models built from the same seed share all common weights.
    /// With `global_skip` the output conv also starts at zero, so a fresh
    /// model returns the bicubic upscale.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        for (name, shape) in config.param_shapes() {
            let zero_output = config.global_skip && name == "output.weight";
            let t = if name.ends_with(".bias") || is_offset_generator(&name) || zero_output {
                Tensor::zeros(&shape)?
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::invalid(e.to_string()))?;
                Tensor::from_fn(&shape, |_| S::lit(normal.sample(&mut rng)))?
            };
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: IndexMap<String, Tensor<S>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = params.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::mismatch("parameter shape", t.shape(), shape));
            }
        }
        Ok(Self { config, params })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<S>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Record the forward pass of `lr_frames: [1, T, h, w]` into `graph`.
    /// Returns the SR centre frame `[1, h*r, w*r]`.
    pub fn forward(&self, graph: &mut Graph<S>, lr_frames: &Tensor<S>) -> Result<Var> {
        let s = lr_frames.shape();
        if s.len() != 4 || s[0] != 1 {
            return Err(Error::invalid(format!("expected LR clip [1, T, h, w], got {s:?}")));
        }
        if s[1] != self.config.frames {
            return Err(Error::invalid(format!(
                "network expects {} frames, got {}",
                self.config.frames, s[1]
            )));
        }
        let p = |g: &mut Graph<S>, name: &str| -> Result<Var> { Ok(g.param(name, self.param(name)?.clone())) };

        let x = graph.constant(lr_frames.clone());
        let (w, b) = (p(graph, "input.weight")?, p(graph, "input.bias")?);
        let mut f = graph.conv3d(x, w, Some(b))?;
        f = graph.relu(f);

        for blk in 0..self.config.res_blocks {
            let mut h = f;
            for l in 0..2 {
                let name = format!("block{blk}.conv{l}");
                let w = p(graph, &format!("{name}.weight"))?;
                let b = p(graph, &format!("{name}.bias"))?;
                h = match self.config.block {
                    BlockKind::C3d => graph.conv3d(h, w, Some(b))?,
                    BlockKind::D3d => {
                        let ow = p(graph, &format!("{name}.offset.weight"))?;
                        let ob = p(graph, &format!("{name}.offset.bias"))?;
                        let offsets = graph.conv3d(h, ow, Some(ob))?;
                        graph.d3d(h, w, Some(b), offsets)?
                    }
                };
                if l == 0 {
                    h = graph.relu(h);
                }
            }
            f = graph.add(f, h)?;
        }

        let folded = graph.fold_time(f)?;
        let (w, b) = (p(graph, "fuse.weight")?, p(graph, "fuse.bias")?);
        let mut g = graph.conv2d(folded, w, Some(b))?;

        for blk in 0..self.config.recon_blocks {
            let mut h = g;
            for l in 0..2 {
                let name = format!("recon{blk}.conv{l}");
                let w = p(graph, &format!("{name}.weight"))?;
                let b = p(graph, &format!("{name}.bias"))?;
                h = graph.conv2d(h, w, Some(b))?;
                if l == 0 {
                    h = graph.relu(h);
                }
            }
            g = graph.add(g, h)?;
        }

        for u in 0..self.config.up_stages() {
            let (w, b) = (p(graph, &format!("up{u}.weight"))?, p(graph, &format!("up{u}.bias"))?);
            g = graph.conv2d(g, w, Some(b))?;
            g = graph.pixel_shuffle(g, 2)?;
            g = graph.relu(g);
        }

        let (w, b) = (p(graph, "output.weight")?, p(graph, "output.bias")?);
        let out = graph.conv2d(g, w, Some(b))?;
        if !self.config.global_skip {
            return Ok(out);
        }
        let base = graph.constant(upsample(&lr_frames.frame(s[1] / 2)?, self.config.scale)?);
        graph.add(out, base)
    }

    /// Forward pass without keeping the graph.
    pub fn infer(&self, lr_frames: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, lr_frames)?;
        Ok(g.value(out).clone())
    }

    /// Loss and parameter gradients for one `(LR clip, HR centre)` pair.
    pub fn loss_and_grads(&self, lr_frames: &Tensor<S>, hr: &Tensor<S>) -> Result<(S, IndexMap<String, Tensor<S>>)> {
        let mut g = Graph::new();
        let sr = self.forward(&mut g, lr_frames)?;
        let target = g.constant(hr.clone());
        let loss = g.mse(sr, target)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        Ok((value, grads.into_params()))
    }
}

/// Residual D3D block `y = x + L2(relu(L1(x)))` on plain tensors, with
/// layers given as `(weight, bias, offset weight, offset bias)`.
pub fn res_d3d_block<S: Scalar>(x: &Tensor<S>, layers: [(&Tensor<S>, &Tensor<S>, &Tensor<S>, &Tensor<S>); 2]) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut h = xv;
    for (l, (w, b, ow, ob)) in layers.into_iter().enumerate() {
        let (w, b, ow, ob) = (g.constant(w.clone()), g.constant(b.clone()), g.constant(ow.clone()), g.constant(ob.clone()));
        let off = g.conv3d(h, ow, Some(ob))?;
        h = g.d3d(h, w, Some(b), off)?;
        if l == 0 {
            h = g.relu(h);
        }
    }
    let y = g.add(xv, h)?;
    Ok(g.value(y).clone())
}

/// Mean squared error between an SR frame and its ground truth.
pub fn mse_loss<S: Scalar>(sr: &Tensor<S>, hr: &Tensor<S>) -> Result<S> {
    if sr.shape() != hr.shape() {
        return Err(Error::mismatch("mse_loss", sr.shape(), hr.shape()));
    }
    Ok(crate::autograd::mse_value(sr, hr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(block: BlockKind) -> NetworkConfig {
        NetworkConfig {
            frames: 3,
            channels: 4,
            res_blocks: 1,
            recon_blocks: 1,
            scale: 4,
            block,
            global_skip: false,
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let bad = [
            NetworkConfig { frames: 4, ..Default::default() },
            NetworkConfig { scale: 3, ..Default::default() },
            NetworkConfig { res_blocks: 0, ..Default::default() },
            NetworkConfig { recon_blocks: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(Model::<f32>::build(c, 0).is_err(), "{c:?}");
        }
    }

    #[test]
    fn c3d_differs_only_by_offset_generators() {
        let d = tiny(BlockKind::D3d).param_shapes();
        let c = tiny(BlockKind::C3d).param_shapes();
        let without: Vec<_> = d.iter().filter(|(n, _)| !is_offset_generator(n)).cloned().collect();
        assert_eq!(without, c);
        assert_eq!(d.len() - c.len(), 4);
    }

    #[test]
    fn names_are_deterministic() {
        let a = Model::<f32>::build(tiny(BlockKind::D3d), 1).unwrap();
        let b = Model::<f32>::build(tiny(BlockKind::D3d), 2).unwrap();
        assert!(a.params.keys().eq(b.params.keys()));
    }

    #[test]
    fn output_shape() {
        let m = Model::<f32>::build(tiny(BlockKind::D3d), 3).unwrap();
        let x = Tensor::full(&[1, 3, 5, 6], 0.5).unwrap();
        let y = m.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 20, 24]);
        assert!(y.all_finite());
        let wrong_t = Tensor::full(&[1, 5, 5, 6], 0.5).unwrap();
        assert!(m.infer(&wrong_t).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::<f64>::full(&[1, 2, 2], 0.3).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor::<f64>::full(&[1, 2, 2], 0.8).unwrap();
        assert!((mse_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse_loss(&a, &Tensor::zeros(&[1, 2, 3]).unwrap()).is_err());
    }

    #[test]
    fn fresh_skip_model_returns_bicubic() {
        let cfg = NetworkConfig { global_skip: true, ..tiny(BlockKind::D3d) };
        let m = Model::<f64>::build(cfg, 5).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 3, 4, 5], |i| (i % 7) as f64 / 7.0).unwrap();
        let want = upsample(&x.frame(1).unwrap(), 4).unwrap();
        assert!(m.infer(&x).unwrap().bit_eq(&want));
    }
}
