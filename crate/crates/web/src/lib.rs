//! Browser bindings: render a synthetic clip frame, shift it with a
//! deformable convolution, and compare bicubic against nearest upscaling.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`.

use d3d::data::{downsample, synth_sequence, upsample, upsample_nearest};
use d3d::deform::{d3d, OffsetField};
use d3d::metrics::psnr;
use d3d::Tensor;
use wasm_bindgen::prelude::*;

const SCALE: usize = 4;

fn err(e: d3d::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn frame(seed: u32, t: u32, size: usize) -> Tensor<f32> {
    let mut clip = synth_sequence(seed as u64, t as usize + 1, size, size);
    clip.pop().expect("at least one frame")
}

fn rgba(gray: &Tensor<f32>) -> Vec<u8> {
    gray.data()
        .iter()
        .flat_map(|&v| {
            let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [b, b, b, 255]
        })
        .collect()
}

/// Frame `t` of clip `seed`, `size x size` pixels.
#[wasm_bindgen]
pub fn synth_frame(seed: u32, t: u32, size: u32) -> Vec<u8> {
    rgba(&frame(seed, t, size as usize))
}

/// Single-frame D3D whose only non-zero weight is the centre tap, with every
/// tap offset by `(dy, dx)`: the result samples the frame at `(h + dy, w + dx)`.
pub fn shifted(seed: u32, t: u32, size: usize, dy: f32, dx: f32) -> Result<Tensor<f32>, d3d::Error> {
    let f = frame(seed, t, size);
    let x = f.reshape(&[1, 1, size, size])?;
    let mut w = Tensor::zeros(&[1, 1, 3, 3, 3])?;
    w.set(&[0, 0, 1, 1, 1], 1.0);
    let off = OffsetField::constant(27, 1, size, size, dy, dx)?;
    d3d(&x, &w, None, &off)?.reshape(&[1, size, size])
}

#[wasm_bindgen]
pub fn deform_shift(seed: u32, t: u32, size: u32, dy: f32, dx: f32) -> Result<Vec<u8>, JsError> {
    shifted(seed, t, size as usize, dy, dx).map(|f| rgba(&f)).map_err(err)
}

/// Downscale by 4, upscale back with `method` ("bicubic" or "nearest").
/// Returns the reconstruction and its PSNR against the original frame.
pub fn round_trip(seed: u32, t: u32, size: usize, method: &str) -> Result<(Tensor<f32>, f64), d3d::Error> {
    let hr = frame(seed, t, size);
    let lr = downsample(&hr, SCALE)?;
    let sr = match method {
        "bicubic" => upsample(&lr, SCALE)?,
        "nearest" => upsample_nearest(&lr, SCALE)?,
        other => return Err(d3d::Error::Config(format!("unknown method {other}"))),
    };
    let p = psnr(&sr, &hr)?;
    Ok((sr, p))
}

#[wasm_bindgen]
pub fn upscale(seed: u32, t: u32, size: u32, method: &str) -> Result<Vec<u8>, JsError> {
    round_trip(seed, t, size as usize, method).map(|(f, _)| rgba(&f)).map_err(err)
}

#[wasm_bindgen]
pub fn upscale_psnr(seed: u32, t: u32, size: u32, method: &str) -> Result<f64, JsError> {
    round_trip(seed, t, size as usize, method).map(|(_, p)| p).map_err(err)
}
