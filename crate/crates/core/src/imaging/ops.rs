use super::{CropBox, RgbImage};
use crate::error::{Error, Result};

/// Cuts a `side x side` square centred on `center = (x, y)`. A box that would
/// leave the image is shifted back inside; it is never shrunk.
pub fn crop_square(img: &RgbImage, center: (usize, usize), side: usize) -> Result<(RgbImage, CropBox)> {
    let bx = CropBox::clamped(center.0, center.1, side, img.height(), img.width())?;
    Ok((crop_box(img, &bx), bx))
}

pub(crate) fn crop_box(img: &RgbImage, bx: &CropBox) -> RgbImage {
    crop_rect(img, bx.x0(), bx.y0(), bx.side, bx.side)
}

pub(crate) fn crop_rect(img: &RgbImage, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
    debug_assert!(x0 + w <= img.width() && y0 + h <= img.height());
    let mut data = Vec::with_capacity(w * h * 3);
    let src = img.data();
    for y in y0..y0 + h {
        let start = (y * img.width() + x0) * 3;
        data.extend_from_slice(&src[start..start + w * 3]);
    }
    RgbImage::new(h, w, data).expect("crop of a valid image is valid")
}

/// Splits an image into a 3x3 grid; tile `t` covers grid cell `(t / 3, t % 3)`.
pub fn tile_grid(img: &RgbImage) -> Result<Vec<RgbImage>> {
    let (h, w) = (img.height(), img.width());
    if h % 3 != 0 || w % 3 != 0 {
        return Err(Error::NotTileable {
            height: h,
            width: w,
        });
    }
    let (th, tw) = (h / 3, w / 3);
    Ok((0..9)
        .map(|t| crop_rect(img, (t % 3) * tw, (t / 3) * th, tw, th))
        .collect())
}

/// Inverse of [`tile_grid`] for tiles given in grid order.
pub fn assemble_grid(tiles: &[RgbImage]) -> Result<RgbImage> {
    if tiles.len() != 9 {
        return Err(Error::TileCount(tiles.len()));
    }
    let (th, tw) = (tiles[0].height(), tiles[0].width());
    if tiles.iter().any(|t| t.height() != th || t.width() != tw) {
        return Err(Error::Shape("tiles differ in size".into()));
    }
    let (h, w) = (th * 3, tw * 3);
    let mut data = vec![0.0f32; h * w * 3];
    for (t, tile) in tiles.iter().enumerate() {
        let (oy, ox) = ((t / 3) * th, (t % 3) * tw);
        for y in 0..th {
            let dst = ((oy + y) * w + ox) * 3;
            let src = y * tw * 3;
            data[dst..dst + tw * 3].copy_from_slice(&tile.data()[src..src + tw * 3]);
        }
    }
    RgbImage::new(h, w, data)
}

/// Source sampling positions for one axis: (lower index, upper index, weight
/// of the upper index), pixel centres aligned, clamped at the borders.
fn axis_weights(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize. Same-size requests return an exact copy.
pub fn resize(img: &RgbImage, out_h: usize, out_w: usize) -> RgbImage {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be non-empty");
    if out_h == img.height() && out_w == img.width() {
        return img.clone();
    }
    let ys = axis_weights(out_h, img.height());
    let xs = axis_weights(out_w, img.width());
    let src = img.data();
    let iw = img.width();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let p00 = (y0 * iw + x0) * 3;
            let p01 = (y0 * iw + x1) * 3;
            let p10 = (y1 * iw + x0) * 3;
            let p11 = (y1 * iw + x1) * 3;
            for c in 0..3 {
                let top = src[p00 + c] + (src[p01 + c] - src[p00 + c]) * wx;
                let bot = src[p10 + c] + (src[p11 + c] - src[p10 + c]) * wx;
                data.push(top + (bot - top) * wy);
            }
        }
    }
    RgbImage::from_unclamped(out_h, out_w, data).expect("resize output is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| {
            [
                (y * w + x) as f32 / (h * w) as f32,
                x as f32 / w as f32,
                y as f32 / h as f32,
            ]
        })
        .unwrap()
    }

    #[test]
    fn crop_examples() {
        let img = ramp(100, 100);
        let (c, b) = crop_square(&img, (50, 50), 20).unwrap();
        assert_eq!((c.height(), c.width()), (20, 20));
        assert_eq!((b.x0(), b.y0()), (40, 40));
        assert_eq!(c.pixel(0, 0), img.pixel(40, 40));
        let (_, b) = crop_square(&img, (2, 2), 20).unwrap();
        assert_eq!((b.x0(), b.x1(), b.y0(), b.y1()), (0, 20, 0, 20));
        let err = crop_square(&img, (50, 50), 120).unwrap_err();
        assert!(err.to_string().contains("crop exceeds image"));
    }

    #[test]
    fn tiles_partition_the_image() {
        let img = ramp(120, 120);
        let tiles = tile_grid(&img).unwrap();
        assert_eq!(tiles.len(), 9);
        assert!(tiles.iter().all(|t| t.height() == 40 && t.width() == 40));
        assert_eq!(tiles[0], crop_rect(&img, 0, 0, 40, 40));
        assert_eq!(tiles[5], crop_rect(&img, 80, 40, 40, 40));
        assert_eq!(assemble_grid(&tiles).unwrap(), img);
        assert!(tile_grid(&ramp(100, 99)).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(13, 17);
        assert_eq!(resize(&img, 13, 17), img);
        let c = RgbImage::filled(7, 5, [0.2, 0.4, 0.6]).unwrap();
        let r = resize(&c, 11, 3);
        assert_eq!((r.height(), r.width()), (11, 3));
        for px in r.data().chunks(3) {
            assert!((px[0] - 0.2).abs() < 1e-6 && (px[1] - 0.4).abs() < 1e-6 && (px[2] - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn checkerboard_upsample_matches_hand_evaluation() {
        // [[0,1],[1,0]] with centre-aligned sampling; source positions per
        // output index are -0.25(->0), 0.25, 0.75, 1.25(->1).
        let img = RgbImage::from_fn(2, 2, |y, x| {
            let v = ((x + y) % 2) as f32;
            [v, v, v]
        })
        .unwrap();
        let up = resize(&img, 4, 4);
        let want = [
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert!((up.pixel(y, x)[0] - want[y][x]).abs() < 1e-6, "({y},{x})");
            }
        }
    }

    proptest! {
        #[test]
        fn crop_is_always_side_square(h in 9usize..60, w in 9usize..60, cx in 0usize..80, cy in 0usize..80, frac in 0.05f64..1.0) {
            let img = ramp(h, w);
            let side = ((h.min(w) as f64 * frac) as usize).max(1);
            let (c, b) = crop_square(&img, (cx, cy), side).unwrap();
            prop_assert_eq!((c.height(), c.width()), (side, side));
            prop_assert!(b.x1() <= w && b.y1() <= h);
        }

        #[test]
        fn tile_checksum_is_preserved(k in 3usize..20, j in 3usize..20) {
            let img = ramp(3 * k, 3 * j);
            let tiles = tile_grid(&img).unwrap();
            let total: f64 = tiles.iter().map(|t| t.checksum()).sum();
            prop_assert!((total - img.checksum()).abs() < 1e-6);
        }
    }
}
