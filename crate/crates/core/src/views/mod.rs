//! Construction of the prior view `v_p`, the jigsaw view `v_d` and the
//! within-instance negative `v_win` for one image.

mod dump;
mod transforms;

pub use dump::{write_bundle_debug, BundleSidecar};
pub use transforms::{Jitter, ResizedCrop, SampledTransform, TransformKind, TransformSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{argmax_a_star, crop_box, resize, srgb_to_cielab, tile_grid, CropBox, RgbImage};
use crate::rng::{mix, rng_from};

/// How the prior box is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Centred on the smoothed a* maximum.
    #[default]
    Redness,
    /// Uniformly random placement; the ablation baseline.
    RandomCrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub crop_size: usize,
    pub view_size: usize,
    pub tile_size: usize,
    pub smooth_radius: usize,
    pub enable_win: bool,
    pub prior_mode: PriorMode,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            crop_size: 60,
            view_size: 120,
            tile_size: 40,
            smooth_radius: 2,
            enable_win: true,
            prior_mode: PriorMode::Redness,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::config("views.crop_size", "must be positive"));
        }
        if self.view_size == 0 {
            return Err(Error::config("views.view_size", "must be positive"));
        }
        if self.tile_size == 0 {
            return Err(Error::config("views.tile_size", "must be positive"));
        }
        Ok(())
    }
}

/// The jigsaw view: tiles in permuted order plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortedView {
    /// `tiles[k]` is grid tile `permutation[k]`.
    pub tiles: Vec<RgbImage>,
    pub permutation: [usize; 9],
    pub shared_mask: [bool; 9],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub v_p: RgbImage,
    pub v_d_tiles: Vec<RgbImage>,
    pub permutation: [usize; 9],
    pub v_win: Option<RgbImage>,
    pub prior_box: CropBox,
    pub shared_mask: [bool; 9],
    pub instance_id: usize,
    pub seed: u64,
}

fn check_source(img: &RgbImage) -> Result<()> {
    if img.height() < 9 || img.width() < 9 {
        return Err(Error::InvalidImage(format!(
            "view sources must be at least 9x9, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Places the prior box. `seed` is only consumed by [`PriorMode::RandomCrop`].
pub fn locate_prior(img: &RgbImage, cfg: &ViewConfig, seed: u64) -> Result<CropBox> {
    check_source(img)?;
    match cfg.prior_mode {
        PriorMode::Redness => {
            let (x, y) = argmax_a_star(&srgb_to_cielab(img), cfg.smooth_radius);
            CropBox::clamped(x, y, cfg.crop_size, img.height(), img.width())
        }
        PriorMode::RandomCrop => {
            let mut rng = rng_from(seed);
            let x = rng.random_range(0..img.width());
            let y = rng.random_range(0..img.height());
            CropBox::clamped(x, y, cfg.crop_size, img.height(), img.width())
        }
    }
}

/// Crops `prior_box`, applies `t`, and returns a `view_size` square.
pub fn prior_view_from_box(
    img: &RgbImage,
    prior_box: &CropBox,
    view_size: usize,
    t: &SampledTransform,
) -> RgbImage {
    t.apply(&crop_box(img, prior_box), view_size, view_size)
}

/// `v_p`: a fixed square around the reddest region, augmented with one `T_p`
/// draw. Returns the view and the pre-transform box.
pub fn make_prior_view(img: &RgbImage, cfg: &ViewConfig, seed: u64) -> Result<(RgbImage, CropBox)> {
    let prior_box = locate_prior(img, cfg, mix(seed, &[0]))?;
    let t = TransformSet::prior().sample(&mut rng_from(seed));
    Ok((prior_view_from_box(img, &prior_box, cfg.view_size, &t), prior_box))
}

/// Which grid tiles count as shared with the prior view: at least a quarter
/// of the tile area lies inside `prior_box`. Computed in continuous
/// coordinates so that the result does not depend on the resize target.
pub fn shared_mask(prior_box: &CropBox, height: usize, width: usize) -> [bool; 9] {
    let (th, tw) = (height as f64 / 3.0, width as f64 / 3.0);
    let (bx0, bx1) = (prior_box.x0() as f64, prior_box.x1() as f64);
    let (by0, by1) = (prior_box.y0() as f64, prior_box.y1() as f64);
    let mut mask = [false; 9];
    for (t, m) in mask.iter_mut().enumerate() {
        let (r, c) = ((t / 3) as f64, (t % 3) as f64);
        let ow = (bx1.min((c + 1.0) * tw) - bx0.max(c * tw)).max(0.0);
        let oh = (by1.min((r + 1.0) * th) - by0.max(r * th)).max(0.0);
        *m = ow * oh >= 0.25 * tw * th;
    }
    mask
}

/// `v_d`: nine tiles of the whole image. Shared tiles get independent `T_p`
/// draws, the rest independent `T_d` draws, and the tiles are shuffled.
pub fn make_distorted_view(
    img: &RgbImage,
    prior_box: &CropBox,
    cfg: &ViewConfig,
    seed: u64,
) -> Result<DistortedView> {
    check_source(img)?;
    let side = 3 * cfg.tile_size;
    let grid = tile_grid(&resize(img, side, side))?;
    let mask = shared_mask(prior_box, img.height(), img.width());
    let mut rng = rng_from(seed);
    let prior_set = TransformSet::prior();
    let distort_set = TransformSet::distort();
    let transformed: Vec<RgbImage> = grid
        .iter()
        .zip(mask.iter())
        .map(|(tile, &shared)| {
            let t = if shared {
                prior_set.sample(&mut rng)
            } else {
                distort_set.sample(&mut rng)
            };
            t.apply(tile, cfg.tile_size, cfg.tile_size)
        })
        .collect();
    let mut permutation = [0usize, 1, 2, 3, 4, 5, 6, 7, 8];
    permutation.shuffle(&mut rng);
    let tiles = permutation.iter().map(|&t| transformed[t].clone()).collect();
    Ok(DistortedView {
        tiles,
        permutation,
        shared_mask: mask,
    })
}

/// Copy of `img` with every channel set to zero inside `bx`.
pub fn zero_box(img: &RgbImage, bx: &CropBox) -> RgbImage {
    let mut out = img.clone();
    let w = img.width();
    let data = out.data_mut();
    for y in bx.y0()..bx.y1().min(img.height()) {
        let start = (y * w + bx.x0()) * 3;
        let end = (y * w + bx.x1().min(w)) * 3;
        data[start..end].fill(0.0);
    }
    out
}

/// `v_win` with an explicit transform draw.
pub fn win_view_with(img: &RgbImage, prior_box: &CropBox, view_size: usize, t: &SampledTransform) -> RgbImage {
    let holed = zero_box(img, prior_box);
    let full = t.apply(&holed, img.height(), img.width());
    resize(&full, view_size, view_size)
}

/// `v_win`: the image with the prior region zeroed, then one `T_win` draw,
/// then resized to the network input size.
pub fn make_win_view(img: &RgbImage, prior_box: &CropBox, cfg: &ViewConfig, seed: u64) -> Result<RgbImage> {
    check_source(img)?;
    if prior_box.x1() > img.width() || prior_box.y1() > img.height() {
        return Err(Error::Shape("prior box lies outside the image".into()));
    }
    let t = TransformSet::win().sample(&mut rng_from(seed));
    Ok(win_view_with(img, prior_box, cfg.view_size, &t))
}

/// Builds all views for one instance from a known prior box.
pub fn build_view_bundle_with_box(
    img: &RgbImage,
    prior_box: CropBox,
    cfg: &ViewConfig,
    instance_id: usize,
    seed: u64,
) -> Result<ViewBundle> {
    check_source(img)?;
    let t_p = TransformSet::prior().sample(&mut rng_from(mix(seed, &[1])));
    let v_p = prior_view_from_box(img, &prior_box, cfg.view_size, &t_p);
    let d = make_distorted_view(img, &prior_box, cfg, mix(seed, &[2]))?;
    let v_win = if cfg.enable_win {
        Some(make_win_view(img, &prior_box, cfg, mix(seed, &[3]))?)
    } else {
        None
    };
    Ok(ViewBundle {
        v_p,
        v_d_tiles: d.tiles,
        permutation: d.permutation,
        v_win,
        prior_box,
        shared_mask: d.shared_mask,
        instance_id,
        seed,
    })
}

/// Pure function of `(img, cfg, seed)`; sub-seeds for the box, each view and
/// its transforms are derived from `seed`.
pub fn build_view_bundle(img: &RgbImage, cfg: &ViewConfig, instance_id: usize, seed: u64) -> Result<ViewBundle> {
    let prior_box = locate_prior(img, cfg, mix(seed, &[0]))?;
    build_view_bundle_with_box(img, prior_box, cfg, instance_id, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| {
            [
                0.6 + 0.2 * ((x as f32) * 0.3).sin(),
                0.4 + 0.1 * ((y as f32) * 0.2).cos(),
                0.4,
            ]
        })
        .unwrap()
    }

    fn with_red_square(mut img: RgbImage, x0: usize, y0: usize, side: usize) -> RgbImage {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img.set_pixel(y, x, [0.9, 0.1, 0.15]);
            }
        }
        img
    }

    #[test]
    fn prior_box_finds_red_square() {
        let img = with_red_square(textured(120, 120), 80, 20, 10);
        let cfg = ViewConfig { crop_size: 30, view_size: 24, tile_size: 8, ..Default::default() };
        let (v, bx) = make_prior_view(&img, &cfg, 5).unwrap();
        assert_eq!((v.height(), v.width()), (24, 24));
        assert!(bx.contains(85, 25));
    }

    #[test]
    fn centred_blob_identity_view_is_resized_centre_crop() {
        let img = with_red_square(textured(90, 90), 43, 43, 4);
        let cfg = ViewConfig { crop_size: 30, view_size: 24, tile_size: 8, ..Default::default() };
        let bx = locate_prior(&img, &cfg, 0).unwrap();
        assert_eq!((bx.cx, bx.cy), (45, 45));
        let v = prior_view_from_box(&img, &bx, 24, &SampledTransform::identity());
        let (crop, _) = crate::imaging::crop_square(&img, (45, 45), 30).unwrap();
        assert_eq!(v, resize(&crop, 24, 24));
    }

    #[test]
    fn full_scale_crop_sizes_fit() {
        // Prior crop sizes used at the original resolutions.
        for (size, crop) in [(576usize, 150usize), (336, 100)] {
            let img = textured(size, size);
            let cfg = ViewConfig { crop_size: crop, ..Default::default() };
            let bx = locate_prior(&img, &cfg, 0).unwrap();
            assert_eq!(bx.side, crop);
            assert!(bx.x1() <= size && bx.y1() <= size);
        }
    }

    #[test]
    fn whole_image_box_shares_every_tile() {
        let img = textured(90, 90);
        let bx = CropBox::clamped(45, 45, 90, 90, 90).unwrap();
        let cfg = ViewConfig { crop_size: 90, view_size: 30, tile_size: 10, ..Default::default() };
        let d = make_distorted_view(&img, &bx, &cfg, 3).unwrap();
        assert_eq!(d.shared_mask, [true; 9]);
    }

    #[test]
    fn box_inside_centre_tile_marks_only_tile_4() {
        let bx = CropBox::clamped(45, 45, 20, 90, 90).unwrap(); // [35,55)^2 inside [30,60)^2
        let mask = shared_mask(&bx, 90, 90);
        let mut want = [false; 9];
        want[4] = true;
        assert_eq!(mask, want);
    }

    #[test]
    fn distorted_view_is_deterministic_and_permutes() {
        let img = textured(90, 90);
        let bx = CropBox::clamped(20, 20, 30, 90, 90).unwrap();
        let cfg = ViewConfig { crop_size: 30, view_size: 30, tile_size: 10, ..Default::default() };
        let a = make_distorted_view(&img, &bx, &cfg, 77).unwrap();
        let b = make_distorted_view(&img, &bx, &cfg, 77).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.permutation;
        sorted.sort();
        assert_eq!(sorted, [0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(a.tiles.iter().all(|t| t.height() == 10 && t.width() == 10));
    }

    #[test]
    fn win_view_zeroes_prior_region() {
        let img = textured(90, 90);
        let bx = CropBox::clamped(30, 60, 30, 90, 90).unwrap();
        let holed = zero_box(&img, &bx);
        let zeros = holed.data().chunks(3).filter(|p| p.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zeros, bx.area());

        // Identity draw, no resize: the hole stays exactly in place.
        let v = win_view_with(&img, &bx, 90, &SampledTransform::identity());
        for y in bx.y0()..bx.y1() {
            for x in bx.x0()..bx.x1() {
                assert_eq!(v.pixel(y, x), [0.0; 3]);
            }
        }
        // Downsampled by 3: interior of the rescaled box is still black.
        let v = win_view_with(&img, &bx, 30, &SampledTransform::identity());
        for y in 16..24 {
            for x in 6..14 {
                assert_eq!(v.pixel(y, x), [0.0; 3], "({y},{x})");
            }
        }

        let all = CropBox::clamped(45, 45, 90, 90, 90).unwrap();
        let cfg = ViewConfig { crop_size: 90, view_size: 30, tile_size: 10, ..Default::default() };
        let v = make_win_view(&img, &all, &cfg, 1).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bundles_are_pure_and_win_optional() {
        let img = with_red_square(textured(120, 120), 30, 70, 12);
        let cfg = ViewConfig { crop_size: 30, view_size: 24, tile_size: 8, ..Default::default() };
        let a = build_view_bundle(&img, &cfg, 3, 99).unwrap();
        let b = build_view_bundle(&img, &cfg, 3, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.v_win.is_some());
        let no_win = ViewConfig { enable_win: false, ..cfg };
        let c = build_view_bundle(&img, &no_win, 3, 99).unwrap();
        assert!(c.v_win.is_none());
        assert_eq!(c.v_p, a.v_p);
        assert_eq!(c.v_d_tiles, a.v_d_tiles);
        assert_eq!(c.permutation, a.permutation);
    }

    #[test]
    fn rejects_tiny_sources() {
        let img = RgbImage::filled(8, 8, [0.5; 3]).unwrap();
        assert!(build_view_bundle(&img, &ViewConfig { crop_size: 4, ..Default::default() }, 0, 0).is_err());
    }

    #[test]
    fn random_crop_mode_varies_with_seed() {
        let img = textured(120, 120);
        let cfg = ViewConfig { crop_size: 30, prior_mode: PriorMode::RandomCrop, ..Default::default() };
        let boxes: std::collections::HashSet<_> =
            (0..20).map(|s| locate_prior(&img, &cfg, s).unwrap()).collect();
        assert!(boxes.len() > 10);
    }
}
