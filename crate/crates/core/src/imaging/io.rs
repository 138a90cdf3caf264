use std::path::Path;

use super::RgbImage;
use crate::error::Result;

/// Reads a PNG or JPEG file; 8-bit channels are mapped to `[0, 1]` by `/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    RgbImage::new(h as usize, w as usize, data)
}

/// Writes an 8-bit PNG (values rounded to the nearest level).
pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
