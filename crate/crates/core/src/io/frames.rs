//! PNG frame directories: `frame_0000.png`, `frame_0001.png`, ...
//!
//! Pixels map to `[-1, 1]` via `x / 127.5 - 1`; saving inverts with
//! round-half-to-even and clamping.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::video::VideoSequence;

pub const FRAME_PREFIX: &str = "frame_";
pub const FRAME_SUFFIX: &str = ".png";

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{FRAME_PREFIX}{index:04}{FRAME_SUFFIX}"))
}

pub fn pixel_to_value(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

pub fn value_to_pixel(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    ((v + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

fn media(path: &Path, message: impl Into<String>) -> Error {
    Error::Media {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an 8-bit RGB or grayscale PNG as `H x W x 3`.
pub fn load_image<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = image::open(path).map_err(|e| media(path, e.to_string()))?;
    let rgb = match img.color() {
        ColorType::Rgb8 | ColorType::L8 => img.to_rgb8(),
        other => return Err(media(path, format!("unsupported pixel format {other:?}; expected 8-bit RGB or grayscale"))),
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&p| S::from_f64_lossy(pixel_to_value(p))).collect();
    Tensor::from_vec(&[h as usize, w as usize, 3], data)
}

/// Writes an `H x W x C` frame, `C` in `{1, 3}`, as an 8-bit PNG.
pub fn save_image<S: Scalar>(frame: &Tensor<S>, path: &Path) -> Result<()> {
    let &[h, w, c] = frame.shape() else {
        return Err(Error::shape("save_image", "H x W x C", frame.shape()));
    };
    let bytes: Vec<u8> = frame.data().iter().map(|v| value_to_pixel(v.to_f64_lossy())).collect();
    let (w, h) = (w as u32, h as u32);
    let img = match c {
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized")),
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized")),
        _ => return Err(Error::shape("save_image", "1 or 3 channels", frame.shape())),
    };
    img.save(path).map_err(|e| media(path, e.to_string()))
}

fn frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix(FRAME_PREFIX)?.strip_suffix(FRAME_SUFFIX)?;
    (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Number of frame files in `dir`; indices must run contiguously from 0.
pub fn frame_count(dir: &Path) -> Result<usize> {
    let mut indices = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| media(dir, e.to_string()))? {
        if let Some(i) = entry?.file_name().to_str().and_then(frame_index) {
            indices.insert(i);
        }
    }
    if indices.is_empty() {
        return Err(media(dir, "no frame_%04d.png files"));
    }
    if let Some(missing) = (0..).zip(&indices).find(|(want, &got)| *want != got).map(|(want, _)| want) {
        return Err(Error::MissingFrame {
            dir: dir.to_path_buf(),
            index: missing,
        });
    }
    Ok(indices.len())
}

/// Loads every frame of `dir` as a `T x H x W x 3` video.
pub fn load_video<S: Scalar>(dir: &Path) -> Result<VideoSequence<S>> {
    let n = frame_count(dir)?;
    let mut frames: Vec<Tensor<S>> = Vec::with_capacity(n);
    for i in 0..n {
        let path = frame_path(dir, i);
        let frame = load_image(&path)?;
        if let Some(first) = frames.first() {
            if first.shape() != frame.shape() {
                return Err(media(
                    &path,
                    format!("size {:?} differs from frame 0 {:?}", frame.shape(), first.shape()),
                ));
            }
        }
        frames.push(frame);
    }
    VideoSequence::from_frames(&frames)
}

/// Writes every frame of `video` into `dir`, creating it if needed.
pub fn save_video<S: Scalar>(video: &VideoSequence<S>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in 0..video.num_frames() {
        save_image(&video.frame(t), &frame_path(dir, t))?;
    }
    Ok(())
}
