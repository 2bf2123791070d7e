use super::{BlockKind, Model, NetworkConfig, TAPS};
use crate::conv::conv_macs;
use crate::deform::d3d_macs;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub fn count_params<S: Scalar>(model: &Model<S>) -> usize {
    model.param_count()
}

/// Parameters of the two offset generators in one residual D3D block.
pub fn offset_branch_params(channels: usize) -> usize {
    2 * (TAPS * channels * 2 * TAPS + 2 * TAPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub macs: u64,
    /// `2 * macs`.
    pub flops: u64,
}

/// Operation count for producing one SR frame of `out_h x out_w`.
///
/// Convolutions count one MAC per weight per output position; deformable
/// layers add 4 MACs per tap and input channel for the bilinear reads.
/// Activations, additions and pixel shuffles are not counted.
pub fn count_flops(config: &NetworkConfig, out_h: usize, out_w: usize) -> Result<FlopCount> {
    config.validate()?;
    let r = config.scale;
    if !out_h.is_multiple_of(r) || !out_w.is_multiple_of(r) {
        return Err(Error::invalid(format!(
            "output {out_h}x{out_w} not divisible by scale {r}"
        )));
    }
    let c = config.channels;
    let (h, w) = (out_h / r, out_w / r);
    let clip = config.frames * h * w;

    let mut macs = conv_macs(&[c, 1, 3, 3, 3], clip);
    for _ in 0..2 * config.res_blocks {
        macs += match config.block {
            BlockKind::C3d => conv_macs(&[c, c, 3, 3, 3], clip),
            BlockKind::D3d => d3d_macs(&[c, c, 3, 3, 3], clip) + conv_macs(&[2 * TAPS, c, 3, 3, 3], clip),
        };
    }
    macs += conv_macs(&[c, c * config.frames, 1, 1], h * w);
    macs += 2 * config.recon_blocks as u64 * conv_macs(&[c, c, 3, 3], h * w);
    let mut res = h * w;
    for _ in 0..config.up_stages() {
        macs += conv_macs(&[4 * c, c, 3, 3], res);
        res *= 4;
    }
    macs += conv_macs(&[1, c, 3, 3], res);
    Ok(FlopCount { macs, flops: 2 * macs })
}
