//! The three augmentation families: benign `T_p` for the prior view and
//! shared tiles, destructive `T_d` for non-shared tiles, mild `T_win` for
//! within-instance negatives.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imaging::{resize, RgbImage};
use crate::imaging::crop_rect;
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    Prior,
    Distort,
    Win,
}

/// Parameter ranges of one augmentation family. `None` disables a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub kind: TransformKind,
    /// Area fraction range of the random resized crop.
    pub crop_scale: Option<(f32, f32)>,
    pub hflip_p: f32,
    pub vflip_p: f32,
    /// Shared range for brightness, contrast and saturation factors.
    pub jitter: Option<(f32, f32)>,
    /// Hue shift range, in turns.
    pub hue: Option<(f32, f32)>,
    pub blur_sigma: Option<(f32, f32)>,
    pub noise_sigma: Option<(f32, f32)>,
    pub grayscale_p: f32,
    pub channel_perm_p: f32,
}

impl TransformSet {
    pub fn prior() -> Self {
        Self {
            kind: TransformKind::Prior,
            crop_scale: Some((0.6, 1.0)),
            hflip_p: 0.5,
            vflip_p: 0.5,
            jitter: Some((0.6, 1.4)),
            hue: Some((-0.1, 0.1)),
            blur_sigma: None,
            noise_sigma: None,
            grayscale_p: 0.0,
            channel_perm_p: 0.0,
        }
    }

    pub fn distort() -> Self {
        Self {
            kind: TransformKind::Distort,
            crop_scale: None,
            hflip_p: 0.0,
            vflip_p: 0.0,
            jitter: Some((0.4, 1.6)),
            hue: None,
            blur_sigma: Some((1.0, 3.0)),
            noise_sigma: Some((0.05, 0.15)),
            grayscale_p: 0.3,
            channel_perm_p: 0.3,
        }
    }

    pub fn win() -> Self {
        Self {
            kind: TransformKind::Win,
            crop_scale: None,
            hflip_p: 0.5,
            vflip_p: 0.5,
            jitter: Some((0.8, 1.2)),
            hue: None,
            blur_sigma: None,
            noise_sigma: None,
            grayscale_p: 0.0,
            channel_perm_p: 0.0,
        }
    }

    pub fn for_kind(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Prior => Self::prior(),
            TransformKind::Distort => Self::distort(),
            TransformKind::Win => Self::win(),
        }
    }

    /// Draws concrete parameters. Deterministic in the RNG state.
    pub fn sample(&self, rng: &mut Rng) -> SampledTransform {
        let mut uniform = |r: (f32, f32)| {
            if r.1 > r.0 {
                rng.random_range(r.0..=r.1)
            } else {
                r.0
            }
        };
        let crop = self.crop_scale.map(|r| {
            let scale = uniform(r);
            let frac = scale.sqrt().min(1.0);
            let ox = uniform((0.0, 1.0));
            let oy = uniform((0.0, 1.0));
            ResizedCrop { frac, ox, oy }
        });
        let jitter = self.jitter.map(|r| Jitter {
            brightness: uniform(r),
            contrast: uniform(r),
            saturation: uniform(r),
            hue: self.hue.map_or(0.0, &mut uniform),
        });
        let blur_sigma = self.blur_sigma.map(&mut uniform);
        let noise = self.noise_sigma.map(|r| (uniform(r), 0));
        let hflip = rng.random::<f32>() < self.hflip_p;
        let vflip = rng.random::<f32>() < self.vflip_p;
        let grayscale = rng.random::<f32>() < self.grayscale_p;
        let channel_perm = if rng.random::<f32>() < self.channel_perm_p {
            let mut p = [0usize, 1, 2];
            p.shuffle(rng);
            Some(p)
        } else {
            None
        };
        let noise = noise.map(|(s, _)| (s, rng.random::<u64>()));
        SampledTransform {
            crop,
            hflip,
            vflip,
            jitter,
            grayscale,
            channel_perm,
            blur_sigma,
            noise,
        }
    }
}

/// Square sub-window covering `frac` of the shorter side, positioned by the
/// fractional offsets `ox`, `oy` within the remaining slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizedCrop {
    pub frac: f32,
    pub ox: f32,
    pub oy: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

/// Concrete parameters of one augmentation draw.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampledTransform {
    pub crop: Option<ResizedCrop>,
    pub hflip: bool,
    pub vflip: bool,
    pub jitter: Option<Jitter>,
    pub grayscale: bool,
    pub channel_perm: Option<[usize; 3]>,
    pub blur_sigma: Option<f32>,
    /// Noise standard deviation and the seed of its generator.
    pub noise: Option<(f32, u64)>,
}

impl SampledTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Applies the transform and returns an `out_h x out_w` image.
    pub fn apply(&self, img: &RgbImage, out_h: usize, out_w: usize) -> RgbImage {
        let mut out = match self.crop {
            Some(c) => {
                let side = ((img.height().min(img.width()) as f32 * c.frac).round() as usize)
                    .clamp(1, img.height().min(img.width()));
                let x0 = ((img.width() - side) as f32 * c.ox).round() as usize;
                let y0 = ((img.height() - side) as f32 * c.oy).round() as usize;
                resize(&crop_rect(img, x0, y0, side, side), out_h, out_w)
            }
            None => resize(img, out_h, out_w),
        };
        if self.hflip {
            flip(&mut out, true);
        }
        if self.vflip {
            flip(&mut out, false);
        }
        if let Some(j) = self.jitter {
            color_jitter(&mut out, j);
        }
        if self.grayscale {
            for px in out.data_mut().chunks_exact_mut(3) {
                let g = luma(px);
                px.fill(g);
            }
        }
        if let Some(p) = self.channel_perm {
            for px in out.data_mut().chunks_exact_mut(3) {
                let src = [px[0], px[1], px[2]];
                for c in 0..3 {
                    px[c] = src[p[c]];
                }
            }
        }
        if let Some(sigma) = self.blur_sigma {
            gaussian_blur(&mut out, sigma);
        }
        if let Some((sigma, seed)) = self.noise {
            let mut rng = rng_from(seed);
            let normal = Normal::new(0.0f32, sigma).expect("positive sigma");
            for v in out.data_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        out.clamp();
        out
    }
}

#[inline]
fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn flip(img: &mut RgbImage, horizontal: bool) {
    let (h, w) = (img.height(), img.width());
    let data = img.data_mut();
    if horizontal {
        for y in 0..h {
            for x in 0..w / 2 {
                for c in 0..3 {
                    data.swap((y * w + x) * 3 + c, (y * w + (w - 1 - x)) * 3 + c);
                }
            }
        }
    } else {
        for y in 0..h / 2 {
            let (top, bottom) = data.split_at_mut((h - 1 - y) * w * 3);
            top[y * w * 3..(y + 1) * w * 3].swap_with_slice(&mut bottom[..w * 3]);
        }
    }
}

fn color_jitter(img: &mut RgbImage, j: Jitter) {
    let data = img.data_mut();
    if j.brightness != 1.0 {
        for v in data.iter_mut() {
            *v = (*v * j.brightness).clamp(0.0, 1.0);
        }
    }
    if j.contrast != 1.0 {
        let n = (data.len() / 3) as f32;
        let mean = data.chunks_exact(3).map(luma).sum::<f32>() / n;
        for v in data.iter_mut() {
            *v = ((*v - mean) * j.contrast + mean).clamp(0.0, 1.0);
        }
    }
    if j.saturation != 1.0 {
        for px in data.chunks_exact_mut(3) {
            let g = luma(px);
            for v in px.iter_mut() {
                *v = ((*v - g) * j.saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    if j.hue != 0.0 {
        for px in data.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb((h + j.hue).rem_euclid(1.0), s, v);
            px[0] = r;
            px[1] = g;
            px[2] = b;
        }
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn gaussian_blur(img: &mut RgbImage, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f32 = kernel.iter().sum();
    let (h, w) = (img.height() as isize, img.width() as isize);
    let src = img.data().to_vec();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                let i = ((y * w + xx) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kv * src[i + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                tmp[o + c] = acc[c] / ksum;
            }
        }
    }
    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).clamp(0, h - 1);
                let i = ((yy * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kv * tmp[i + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                data[o + c] = acc[c] / ksum;
            }
        }
    }
}
