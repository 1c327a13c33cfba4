//! 8-bit PNG / binary PPM input and PNG output.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};

/// Decodes an 8-bit PNG (RGB, RGBA, gray) or binary PPM to `[0, 1]` floats.
///
/// Alpha is dropped; grayscale is replicated to three channels.
pub fn read_image(path: &Path) -> Result<PlanarImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Unsupported(format!(
                "{}: format {:?} (only PNG and PPM are read)",
                path.display(),
                other
            )))
        }
    }
    let decoded = reader.decode().map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = match decoded {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageRgba8(_) => decoded.to_rgb8(),
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            log::warn!("{}: grayscale input replicated to RGB", path.display());
            decoded.to_rgb8()
        }
        other => {
            return Err(Error::Unsupported(format!(
                "{}: {:?} samples; only 8-bit images are supported",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(from_rgb8(&rgb))
}

pub fn from_rgb8(rgb: &RgbImage) -> PlanarImage {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    PlanarImage::from_fn(w, h, ColorState::SrgbEncoded, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    })
}

/// Clips to `[0, 1]` and rounds half to even onto 8 bits.
pub fn to_rgb8(img: &PlanarImage) -> RgbImage {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8;
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixel(x as usize, y as usize);
        image::Rgb([q(p[0]), q(p[1]), q(p[2])])
    })
}

/// Writes an 8-bit RGB PNG.
pub fn write_image(img: &PlanarImage, path: &Path) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
}
