//! PNG encodings: depth as 16-bit millimeters (0 = invalid), masks as
//! 16-bit cluster ids (0 = background), color as 8-bit RGB.

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::{GroundTruthMasks, RgbdFrame};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("expected a {expected} PNG")]
    WrongPixelType { expected: &'static str },
    #[error("buffer of {len} values does not fit a {width}x{height} image")]
    Size { width: u32, height: u32, len: usize },
}

fn encode(image: DynamicImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Cursor::new(Vec::new());
    image.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn luma16(width: u32, height: u32, data: Vec<u16>) -> Result<DynamicImage, ImageError> {
    let len = data.len();
    ImageBuffer::<Luma<u16>, _>::from_raw(width, height, data)
        .map(DynamicImage::ImageLuma16)
        .ok_or(ImageError::Size { width, height, len })
}

/// Millimeter depth, rounded; values beyond 65.535 m clamp.
pub fn encode_depth_png(frame: &RgbdFrame) -> Result<Vec<u8>, ImageError> {
    let mm = frame
        .depth
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    encode(luma16(frame.width(), frame.height(), mm)?)
}

/// Returns `(width, height, depth_m)` with NaN for zero pixels.
pub fn decode_depth_png(bytes: &[u8]) -> Result<(u32, u32, Vec<f64>), ImageError> {
    let DynamicImage::ImageLuma16(img) =
        image::load_from_memory_with_format(bytes, ImageFormat::Png)?
    else {
        return Err(ImageError::WrongPixelType {
            expected: "16-bit grayscale",
        });
    };
    let (w, h) = img.dimensions();
    let depth = img
        .into_raw()
        .into_iter()
        .map(|mm| {
            if mm == 0 {
                f64::NAN
            } else {
                f64::from(mm) / 1000.0
            }
        })
        .collect();
    Ok((w, h, depth))
}

pub fn encode_mask_png(masks: &GroundTruthMasks) -> Result<Vec<u8>, ImageError> {
    encode(luma16(masks.width, masks.height, masks.ids.clone())?)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<GroundTruthMasks, ImageError> {
    let DynamicImage::ImageLuma16(img) =
        image::load_from_memory_with_format(bytes, ImageFormat::Png)?
    else {
        return Err(ImageError::WrongPixelType {
            expected: "16-bit grayscale",
        });
    };
    let (width, height) = img.dimensions();
    Ok(GroundTruthMasks {
        width,
        height,
        ids: img.into_raw(),
    })
}

pub fn encode_rgb_png(frame: &RgbdFrame) -> Result<Vec<u8>, ImageError> {
    let (width, height) = (frame.width(), frame.height());
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(width, height, frame.rgb.clone()).ok_or(
        ImageError::Size {
            width,
            height,
            len: frame.rgb.len(),
        },
    )?;
    encode(DynamicImage::ImageRgb8(img))
}
