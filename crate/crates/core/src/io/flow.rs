//! Displacement-field files and the Middlebury color coding.

use std::fs;
use std::path::Path;

use image::RgbImage;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FLOW_MAGIC: &[u8; 4] = b"MBGF";

/// Hue segments of the wheel: red-yellow, yellow-green, green-cyan,
/// cyan-blue, blue-magenta, magenta-red.
pub const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const WHEEL_BINS: usize = 55;

/// Smallest normalizer used when the field is all zero.
pub const MIN_MAGNITUDE: f64 = 1e-9;

/// RGB value of every wheel bin.
pub fn color_wheel() -> Vec<[u8; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let mut wheel = Vec::with_capacity(WHEEL_BINS);
    let [ry, yg, gc, cb, bm, mr] = WHEEL_SEGMENTS;
    wheel.extend((0..ry).map(|i| [255, ramp(i, ry), 0]));
    wheel.extend((0..yg).map(|i| [255 - ramp(i, yg), 255, 0]));
    wheel.extend((0..gc).map(|i| [0, 255, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0, 255 - ramp(i, cb), 255]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0, 255]));
    wheel.extend((0..mr).map(|i| [255, 0, 255 - ramp(i, mr)]));
    wheel
}

/// Color of a displacement already divided by the normalizing magnitude.
pub fn flow_color(wheel: &[[u8; 3]], u: f64, v: f64) -> [u8; 3] {
    let bins = wheel.len();
    let rad = (u * u + v * v).sqrt();
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (bins - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == bins { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let c0 = f64::from(wheel[k0][ch]) / 255.0;
        let c1 = f64::from(wheel[k1][ch]) / 255.0;
        let mut col = (1.0 - f) * c0 + f * c1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        *o = (255.0 * col).floor() as u8;
    }
    out
}

fn check_field<S: Scalar>(op: &'static str, flow: &Tensor<S>) -> Result<(usize, usize)> {
    match *flow.shape() {
        [h, w, 2] => Ok((h, w)),
        _ => Err(Error::shape(op, "H x W x 2", flow.shape())),
    }
}

/// Colors an `H x W x 2` pixel displacement field. Without `max_magnitude`
/// the largest displacement norm in the field normalizes it.
pub fn flow_to_color<S: Scalar>(flow: &Tensor<S>, max_magnitude: Option<f64>) -> Result<RgbImage> {
    let (h, w) = check_field("flow_to_color", flow)?;
    let d: Vec<f64> = flow.to_f64_vec();
    let max = max_magnitude
        .unwrap_or_else(|| d.chunks_exact(2).map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).fold(0.0, f64::max))
        .max(MIN_MAGNITUDE);
    let wheel = color_wheel();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (px, p) in img.pixels_mut().zip(d.chunks_exact(2)) {
        px.0 = flow_color(&wheel, p[0] / max, p[1] / max);
    }
    Ok(img)
}

/// Writes `"MBGF"`, `H` and `W` as little-endian `u32`, then interleaved
/// `(dx, dy)` as little-endian `f32`, row-major.
pub fn encode_flow<S: Scalar>(flow: &Tensor<S>) -> Result<Vec<u8>> {
    let (h, w) = check_field("encode_flow", flow)?;
    let mut out = Vec::with_capacity(12 + 4 * flow.numel());
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>> {
    let bad = |m: String| Error::invalid("decode_flow", m);
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(bad("not a MBGF flow file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w) = (word(4), word(8));
    let want = 12 + 8 * h * w;
    if bytes.len() != want {
        return Err(bad(format!("{h}x{w} field needs {want} bytes, file has {}", bytes.len())));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))).expect("f32 converts"))
        .collect();
    Tensor::from_vec(&[h, w, 2], data)
}

pub fn save_flow<S: Scalar>(flow: &Tensor<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_flow(flow)?)?;
    Ok(())
}

pub fn load_flow<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    decode_flow(&fs::read(path)?).map_err(|e| Error::Media {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
