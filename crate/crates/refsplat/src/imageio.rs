//! 8-bit image files to and from `[0, 1]` float images.

use std::path::Path;

use refsplat_core::Image;

use crate::error::{Error, Result};

/// Loads any PNG or JPEG as a 3-channel image with values `v / 255`.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(Image::from_vec(w as usize, h as usize, 3, data)?)
}

/// Reads only the pixel dimensions.
pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((w as usize, h as usize))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Clamps to `[0, 1]`, rounds to 8 bits and writes a PNG (1 or 3 channels).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Data(format!("cannot write a {c}-channel PNG"))),
    };
    image::save_buffer_with_format(path, &bytes, img.width as u32, img.height as u32, color, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
