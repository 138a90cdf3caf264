//! Rasters, colour conversion and the geometric primitives used to build views.

mod color;
mod io;
mod ops;

pub use color::{argmax_a_star, srgb_pixel_to_lab, srgb_to_cielab, LabPlanes, WHITE_D65};
pub use io::{load_image, save_png};
pub use ops::{assemble_grid, crop_square, resize, tile_grid};
pub(crate) use ops::{crop_box, crop_rect};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major RGB raster with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Builds an image from interleaved RGB data, validating length and range.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "data length {} != {height}*{width}*3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Clamps every value into `[0, 1]` (NaN becomes 0).
    pub fn from_unclamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in data.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::from_unclamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for in-place transforms. Callers must keep values in
    /// `[0, 1]`; [`RgbImage::clamp`] restores the invariant.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn clamp(&mut self) {
        for v in self.data.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Sum of all channel values, accumulated in f64.
    pub fn checksum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Square crop placement. The covered region is
/// `[cx - side/2, cx - side/2 + side) x [cy - side/2, cy - side/2 + side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub cx: usize,
    pub cy: usize,
    pub side: usize,
}

impl CropBox {
    /// Places a `side` square centred on `(cx, cy)`, shifting it (never
    /// shrinking it) so it lies inside a `height x width` image.
    pub fn clamped(cx: usize, cy: usize, side: usize, height: usize, width: usize) -> Result<Self> {
        if side == 0 || side > height.min(width) {
            return Err(Error::CropExceedsImage {
                side,
                height,
                width,
            });
        }
        let half = side / 2;
        let x0 = (cx as i64 - half as i64).clamp(0, (width - side) as i64) as usize;
        let y0 = (cy as i64 - half as i64).clamp(0, (height - side) as i64) as usize;
        Ok(Self {
            cx: x0 + half,
            cy: y0 + half,
            side,
        })
    }

    pub fn x0(&self) -> usize {
        self.cx - self.side / 2
    }

    pub fn y0(&self) -> usize {
        self.cy - self.side / 2
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> usize {
        self.x0() + self.side
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> usize {
        self.y0() + self.side
    }

    pub fn area(&self) -> usize {
        self.side * self.side
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0() && x < self.x1() && y >= self.y0() && y < self.y1()
    }

    /// Pixel count of the intersection with the half-open rectangle
    /// `[x0, x1) x [y0, y1)`.
    pub fn overlap_rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> usize {
        let w = self.x1().min(x1).saturating_sub(self.x0().max(x0));
        let h = self.y1().min(y1).saturating_sub(self.y0().max(y0));
        w * h
    }

    pub fn intersects(&self, other: &CropBox) -> bool {
        self.overlap_rect(other.x0(), other.y0(), other.x1(), other.y1()) > 0
    }
}
