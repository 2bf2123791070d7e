//! ITU-R BT.601 studio-swing YCbCr for inputs in [0, 1].

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const TO_YCBCR: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

fn check_rgb<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize)> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(Error::invalid(format!("expected [3, H, W], got {:?}", t.shape())));
    }
    Ok((t.shape()[1], t.shape()[2]))
}

/// `Y = (65.481 R + 128.553 G + 24.966 B) / 255 + 16 / 255`.
pub fn rgb_to_luminance<S: Scalar>(rgb: &Tensor<S>) -> Result<Tensor<S>> {
    rgb_to_ycbcr(rgb)?.slice_channels(0, 1)
}

pub fn rgb_to_ycbcr<S: Scalar>(rgb: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = check_rgb(rgb)?;
    let n = h * w;
    let d = rgb.data();
    let mut out = vec![S::zero(); 3 * n];
    for p in 0..n {
        let px = [d[p].as_f64(), d[n + p].as_f64(), d[2 * n + p].as_f64()];
        for c in 0..3 {
            let v = TO_YCBCR[c][0] * px[0] + TO_YCBCR[c][1] * px[1] + TO_YCBCR[c][2] * px[2];
            out[c * n + p] = S::lit((v + OFFSET[c]) / 255.0);
        }
    }
    Tensor::new(&[3, h, w], out)
}

pub fn ycbcr_to_rgb<S: Scalar>(ycc: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = check_rgb(ycc)?;
    let inv = inverse(TO_YCBCR);
    let n = h * w;
    let d = ycc.data();
    let mut out = vec![S::zero(); 3 * n];
    for p in 0..n {
        let px: [f64; 3] = std::array::from_fn(|c| d[c * n + p].as_f64() * 255.0 - OFFSET[c]);
        for c in 0..3 {
            out[c * n + p] = S::lit(inv[c][0] * px[0] + inv[c][1] * px[1] + inv[c][2] * px[2]);
        }
    }
    Tensor::new(&[3, h, w], out)
}

/// Luminance of a frame: single-channel frames are taken as already being luminance.
pub fn luminance_of<S: Scalar>(frame: &Tensor<S>) -> Result<Tensor<S>> {
    match frame.shape() {
        [1, _, _] => Ok(frame.clone()),
        [3, _, _] => rgb_to_luminance(frame),
        s => Err(Error::invalid(format!("expected [1|3, H, W] frame, got {s:?}"))),
    }
}
