//! PNG I/O for frames and masks.
//!
//! Frames are 8-bit RGB PNGs normalized to [0, 1] on load; masks are 8-bit
//! grayscale PNGs thresholded at 128, with a wide ambiguity band rejected so
//! soft-matte files are not silently binarized.

use crate::error::{Error, Result};
use crate::metrics::{EditMask, FrameImage};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use std::path::Path;

/// Encode a frame as 8-bit PNG bytes (RGB for 3 channels, grayscale for 1).
pub fn frame_to_png_bytes(frame: &FrameImage) -> Result<Vec<u8>> {
    let to_u8 = |v: f64| -> u8 { ((v / frame.max_val()).clamp(0.0, 1.0) * 255.0).round() as u8 };
    let mut cursor = std::io::Cursor::new(Vec::new());
    match frame.channels() {
        1 => {
            let mut img = GrayImage::new(frame.width() as u32, frame.height() as u32);
            for y in 0..frame.height() {
                for x in 0..frame.width() {
                    img.put_pixel(x as u32, y as u32, image::Luma([to_u8(frame.at(0, y, x))]));
                }
            }
            img.write_to(&mut cursor, ImageFormat::Png)?;
        }
        3 => {
            let mut img = RgbImage::new(frame.width() as u32, frame.height() as u32);
            for y in 0..frame.height() {
                for x in 0..frame.width() {
                    img.put_pixel(
                        x as u32,
                        y as u32,
                        image::Rgb([
                            to_u8(frame.at(0, y, x)),
                            to_u8(frame.at(1, y, x)),
                            to_u8(frame.at(2, y, x)),
                        ]),
                    );
                }
            }
            img.write_to(&mut cursor, ImageFormat::Png)?;
        }
        c => {
            return Err(Error::Metric(format!(
                "cannot encode {c}-channel frame as PNG"
            )))
        }
    }
    Ok(cursor.into_inner())
}

pub fn save_frame_png(frame: &FrameImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = frame_to_png_bytes(frame)?;
    std::fs::write(path.as_ref(), bytes)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

fn frame_from_dynamic(img: DynamicImage) -> FrameImage {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    FrameImage::from_fn(3, h, w, 1.0, |c, y, x| {
        rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

pub fn load_frame_png(path: impl AsRef<Path>) -> Result<FrameImage> {
    let img = image::open(path.as_ref()).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path.as_ref().display().to_string(), io),
        other => Error::Image(other),
    })?;
    Ok(frame_from_dynamic(img))
}

pub fn frame_from_png_bytes(bytes: &[u8]) -> Result<FrameImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(frame_from_dynamic(img))
}

/// Gray values this far from both 0 and 255 are considered non-binary and
/// rejected rather than silently thresholded.
const MASK_AMBIGUOUS_LO: u8 = 97;
const MASK_AMBIGUOUS_HI: u8 = 159;

pub fn save_mask_png(mask: &EditMask, path: impl AsRef<Path>) -> Result<()> {
    let mut img = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let v = if mask.at(y, x) { 255 } else { 0 };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(Error::Image)
}

/// Load an 8-bit grayscale mask, thresholding at 128.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<EditMask> {
    let img = image::open(path.as_ref())
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path.as_ref().display().to_string(), io),
            other => Error::Image(other),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = img.get_pixel(x as u32, y as u32).0[0];
            if (MASK_AMBIGUOUS_LO..=MASK_AMBIGUOUS_HI).contains(&v) {
                return Err(Error::Mask(format!(
                    "{}: pixel ({x},{y}) value {v} is not binary within threshold tolerance",
                    path.as_ref().display()
                )));
            }
            data.push(v >= 128);
        }
    }
    EditMask::new(h, w, data)
}

/// Read `(width, height)` from a PNG header without decoding the image.
pub fn png_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let reader = image::ImageReader::open(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let (w, h) = reader.into_dimensions()?;
    Ok((w as usize, h as usize))
}
