//! Deterministic synthetic corpus: pinkish low-frequency backgrounds under
//! varying illumination, non-red distractors, and one planted red anomaly
//! whose shape carries the class.

mod corpus;

pub use corpus::{load_corpus, write_dataset, Corpus, Manifest, ManifestItem};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{argmax_a_star, srgb_to_cielab, CropBox, RgbImage};
use crate::rng::{derive, rng_from, Rng, Stream};

pub const NUM_CLASSES: usize = 4;

/// Class ids of the generator.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["normal", "red_blob", "red_ring", "red_texture"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub image_size: usize,
    pub n_images: usize,
    /// Proportions over the four classes.
    pub class_mix: [f64; NUM_CLASSES],
    /// Anomaly radius range in pixels, inclusive.
    pub anomaly_radius: [usize; 2],
    /// Per-image distractor count range, inclusive.
    pub distractors: [usize; 2],
    pub bubble_radius: [usize; 2],
    pub debris_radius: [usize; 2],
    /// Probability that an image receives a greenish fluid overlay.
    pub fluid_p: f64,
    /// Global illumination gain range.
    pub illumination: [f64; 2],
    /// Required a* lead of the anomaly over the background.
    pub margin: f64,
    /// Lowers the margin to 5 and desaturates anomalies toward it.
    pub hard_mode: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 240,
            n_images: 100,
            class_mix: [0.25; NUM_CLASSES],
            anomaly_radius: [12, 30],
            distractors: [0, 4],
            bubble_radius: [4, 12],
            debris_radius: [5, 14],
            fluid_p: 0.3,
            illumination: [0.6, 1.05],
            margin: 15.0,
            hard_mode: false,
            seed: 0,
        }
    }
}

pub const HARD_MARGIN: f64 = 5.0;

impl SynthSpec {
    pub fn effective_margin(&self) -> f64 {
        if self.hard_mode {
            HARD_MARGIN
        } else {
            self.margin
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::config("synth.n_images", "must be positive"));
        }
        if self.class_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("synth.class_mix", "proportions must be finite and non-negative"));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::config("synth.class_mix", format!("proportions sum to {total}, expected 1")));
        }
        let [rmin, rmax] = self.anomaly_radius;
        if rmin == 0 || rmin > rmax {
            return Err(Error::config("synth.anomaly_radius", "need 0 < min <= max"));
        }
        if 4 * rmax >= self.image_size {
            return Err(Error::config("synth.anomaly_radius", format!("max radius {rmax} must be below image_size/4")));
        }
        if self.image_size < 32 {
            return Err(Error::config("synth.image_size", "must be at least 32"));
        }
        for (field, r) in [("synth.bubble_radius", self.bubble_radius), ("synth.debris_radius", self.debris_radius)] {
            if r[0] == 0 || r[0] > r[1] || 4 * r[1] >= self.image_size {
                return Err(Error::config(field, "need 0 < min <= max < image_size/4"));
            }
        }
        if self.distractors[0] > self.distractors[1] {
            return Err(Error::config("synth.distractors", "min exceeds max"));
        }
        if !(0.0..=1.0).contains(&self.fluid_p) {
            return Err(Error::config("synth.fluid_p", "must lie in [0, 1]"));
        }
        let [g0, g1] = self.illumination;
        if !(g0 > 0.0 && g0 <= g1 && g1 <= 1.5) {
            return Err(Error::config("synth.illumination", "need 0 < min <= max <= 1.5"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::config("synth.margin", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub image: RgbImage,
    pub label: usize,
    /// Absent exactly for class 0.
    pub anomaly_box: Option<CropBox>,
    pub distractor_boxes: Vec<CropBox>,
}

/// Class label per image index: largest-remainder counts, then a seeded
/// shuffle.
pub fn assign_labels(spec: &SynthSpec) -> Vec<usize> {
    let n = spec.n_images;
    let exact: Vec<f64> = spec.class_mix.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    labels.shuffle(&mut rng_from(derive(spec.seed, Stream::Synth, &[u64::MAX])));
    labels
}

/// All images of `spec`, in index order. Each image depends only on the spec
/// and its index, so generation runs in parallel.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    let labels = assign_labels(spec);
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| generate_record(spec, i, label))
        .collect()
}

/// One image of the dataset.
pub fn generate_record(spec: &SynthSpec, index: usize, label: usize) -> Result<SynthRecord> {
    if label >= NUM_CLASSES {
        return Err(Error::config("synth.label", format!("class {label} out of range")));
    }
    let mut rng = rng_from(derive(spec.seed, Stream::Synth, &[index as u64]));
    let s = spec.image_size;
    let scene = Scene::sample(spec, &mut rng);
    let mut px = scene.background(s);

    let anomaly = (label != 0).then(|| Anomaly::sample(spec, label, &mut rng));
    let anomaly_box = anomaly.as_ref().map(|a| a.bounding_box(s));

    let mut distractor_boxes = Vec::new();
    let n_distractors = rng.random_range(spec.distractors[0]..=spec.distractors[1]);
    for _ in 0..n_distractors {
        let kind = rng.random_range(0..2u8);
        let range = if kind == 0 { spec.bubble_radius } else { spec.debris_radius };
        let r = rng.random_range(range[0]..=range[1]);
        // a few placement tries; distractors never cover the anomaly
        for _ in 0..20 {
            let cx = rng.random_range(r..s - r);
            let cy = rng.random_range(r..s - r);
            let bx = CropBox::clamped(cx, cy, 2 * r + 1, s, s)?;
            if anomaly_box.is_some_and(|a| a.intersects(&bx)) {
                continue;
            }
            if kind == 0 {
                paint_bubble(&mut px, s, cx as f64, cy as f64, r as f64, &scene);
            } else {
                paint_debris(&mut px, s, cx as f64, cy as f64, r as f64, &mut rng);
            }
            distractor_boxes.push(bx);
            break;
        }
    }
    if rng.random::<f64>() < spec.fluid_p {
        paint_fluid(&mut px, s, &mut rng);
    }

    if let Some(a) = &anomaly {
        let base = px.clone();
        let margin = spec.effective_margin();
        let bx = anomaly_box.expect("anomaly has a box");
        let background_max = max_a_outside(&base, s, &bx);
        // Strengthen (or, in hard mode, weaken) the colour until the a* lead
        // reaches the target; the final attempt is kept either way.
        let mut colour = a.colour;
        for attempt in 0..12 {
            px.copy_from_slice(&base);
            let c = if spec.hard_mode { blend(colour, scene.tone, a.hard_blend) } else { colour };
            let floor = 0.55 + 0.05 * attempt as f64;
            a.paint(&mut px, s, c, floor, &scene, &mut rng_from(derive(spec.seed, Stream::Synth, &[index as u64, 1])));
            let lead = max_a_inside(&px, s, &bx) - background_max;
            if lead >= margin || attempt == 11 {
                break;
            }
            colour = [(colour[0] * 1.1 + 0.05).min(1.0), colour[1] * 0.7, colour[2] * 0.7];
        }
    }

    Ok(SynthRecord {
        image: RgbImage::from_unclamped(s, s, px.iter().map(|&v| v as f32).collect())?,
        label,
        anomaly_box,
        distractor_boxes,
    })
}

struct Scene {
    tone: [f64; 3],
    gain: f64,
    vignette: f64,
    centre: (f64, f64),
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Scene {
    fn sample(spec: &SynthSpec, rng: &mut Rng) -> Self {
        let tone = [rng.random_range(0.78..0.93), rng.random_range(0.45..0.62), rng.random_range(0.38..0.52)];
        let s = spec.image_size as f64;
        let waves = (0..3)
            .map(|_| {
                let freq = [rng.random_range(-2.5..2.5) / s, rng.random_range(-2.5..2.5) / s];
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = [rng.random_range(0.02..0.06), rng.random_range(0.02..0.06), rng.random_range(0.02..0.06)];
                ([freq[0] * std::f64::consts::TAU, freq[1] * std::f64::consts::TAU], phase, amp)
            })
            .collect();
        Self {
            tone,
            gain: rng.random_range(spec.illumination[0]..=spec.illumination[1]),
            vignette: rng.random_range(0.0..0.35),
            centre: (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s),
            waves,
        }
    }

    fn light(&self, s: usize, x: f64, y: f64) -> f64 {
        let r2 = ((x - self.centre.0).powi(2) + (y - self.centre.1).powi(2)) / (s * s) as f64;
        self.gain * (1.0 - self.vignette * 2.0 * r2).max(0.3)
    }

    fn background(&self, s: usize) -> Vec<f64> {
        let mut px = vec![0.0; s * s * 3];
        for y in 0..s {
            for x in 0..s {
                let (xf, yf) = (x as f64, y as f64);
                let light = self.light(s, xf, yf);
                let i = (y * s + x) * 3;
                for c in 0..3 {
                    let wave: f64 = self.waves.iter().map(|(f, p, a)| a[c] * (f[0] * xf + f[1] * yf + p).sin()).sum();
                    px[i + c] = (self.tone[c] * (1.0 + wave) * light).clamp(0.0, 1.0);
                }
            }
        }
        px
    }
}

struct Anomaly {
    label: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    colour: [f64; 3],
    hard_blend: f64,
}

const EDGE: f64 = 2.0;

impl Anomaly {
    fn sample(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Self {
        let s = spec.image_size;
        let r = rng.random_range(spec.anomaly_radius[0]..=spec.anomaly_radius[1]);
        let ext = r + EDGE as usize + 1;
        let cx = rng.random_range(ext..s - ext);
        let cy = rng.random_range(ext..s - ext);
        let colour = [rng.random_range(0.55..0.95), rng.random_range(0.02..0.18), rng.random_range(0.05..0.35)];
        Self {
            label,
            cx: cx as f64,
            cy: cy as f64,
            radius: r as f64,
            colour,
            hard_blend: rng.random_range(0.35..0.6),
        }
    }

    fn bounding_box(&self, s: usize) -> CropBox {
        let side = 2 * (self.radius + EDGE) as usize + 1;
        CropBox::clamped(self.cx as usize, self.cy as usize, side, s, s).expect("anomaly fits the image")
    }

    fn paint(&self, px: &mut [f64], s: usize, colour: [f64; 3], light_floor: f64, scene: &Scene, rng: &mut Rng) {
        let r = self.radius;
        let pale = [0.96, 0.88, 0.84];
        let thickness = (0.4 * r).max(6.0);
        let half = r + EDGE;
        let (x0, x1) = ((self.cx - half).floor() as usize, ((self.cx + half).ceil() as usize).min(s - 1));
        let (y0, y1) = ((self.cy - half).floor() as usize, ((self.cy + half).ceil() as usize).min(s - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
                let dist = (dx * dx + dy * dy).sqrt();
                let light = scene.light(s, x as f64, y as f64).clamp(light_floor.min(1.0), 1.0);
                let i = (y * s + x) * 3;
                let (target, alpha) = match self.label {
                    1 => (colour, smooth_inside(r - dist)),
                    2 => {
                        let inner = r - thickness;
                        if dist < inner {
                            (pale, smooth_inside(inner - EDGE - dist).max(0.0) * 0.8)
                        } else {
                            (colour, smooth_inside(r - dist).min(smooth_inside(dist - inner)))
                        }
                    }
                    _ => {
                        let inside = dx.abs().max(dy.abs());
                        let speck: f64 = rng.random_range(0.0..0.45);
                        let c = blend(colour, [0.9, 0.35, 0.4], speck);
                        (c, smooth_inside(r - inside))
                    }
                };
                if alpha <= 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let painted = (target[c] * light).clamp(0.0, 1.0);
                    px[i + c] = px[i + c] * (1.0 - alpha) + painted * alpha;
                }
            }
        }
    }
}

/// 1 well inside, 0 beyond `EDGE` outside, linear between.
fn smooth_inside(signed: f64) -> f64 {
    (signed / EDGE + 0.5).clamp(0.0, 1.0)
}

fn blend(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] * (1.0 - t) + b[0] * t, a[1] * (1.0 - t) + b[1] * t, a[2] * (1.0 - t) + b[2] * t]
}

fn paint_bubble(px: &mut [f64], s: usize, cx: f64, cy: f64, r: f64, scene: &Scene) {
    let grey = 0.9 + 0.05 * scene.gain.min(1.0);
    let body = [grey, grey * 0.97, grey * 0.97];
    for_disc(s, cx, cy, r, |i, dist| {
        let rim = if (r - dist) < 1.5 { 1.0 } else { 0.55 };
        let alpha = smooth_inside(r - dist) * rim;
        for c in 0..3 {
            px[i + c] = px[i + c] * (1.0 - alpha) + body[c] * alpha;
        }
    });
}

fn paint_debris(px: &mut [f64], s: usize, cx: f64, cy: f64, r: f64, rng: &mut Rng) {
    let shade = rng.random_range(0.12..0.3);
    let colour = [shade * 1.1, shade, shade * 0.75];
    let squash = rng.random_range(0.5..1.0);
    for_disc(s, cx, cy, r, |i, dist| {
        let alpha = smooth_inside(r * squash - dist * squash.sqrt()) * 0.9;
        for c in 0..3 {
            px[i + c] = px[i + c] * (1.0 - alpha) + colour[c] * alpha;
        }
    });
}

fn paint_fluid(px: &mut [f64], s: usize, rng: &mut Rng) {
    let tint = [0.55, 0.7, 0.35];
    let strength = rng.random_range(0.1..0.3);
    let cx = rng.random_range(0.0..s as f64);
    let cy = rng.random_range(0.0..s as f64);
    let reach = rng.random_range(0.3..0.8) * s as f64;
    for y in 0..s {
        for x in 0..s {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let alpha = strength * (1.0 - d / reach).max(0.0);
            let i = (y * s + x) * 3;
            for c in 0..3 {
                px[i + c] = px[i + c] * (1.0 - alpha) + tint[c] * px[i + 1].max(0.3) * alpha;
            }
        }
    }
}

fn for_disc(s: usize, cx: f64, cy: f64, r: f64, mut f: impl FnMut(usize, f64)) {
    let half = r + EDGE;
    let x0 = (cx - half).floor().max(0.0) as usize;
    let y0 = (cy - half).floor().max(0.0) as usize;
    let x1 = ((cx + half).ceil() as usize).min(s - 1);
    let y1 = ((cy + half).ceil() as usize).min(s - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            f((y * s + x) * 3, dist);
        }
    }
}

fn a_star(rgb: &[f64]) -> f64 {
    crate::imaging::srgb_pixel_to_lab([rgb[0], rgb[1], rgb[2]])[1]
}

fn max_a_outside(px: &[f64], s: usize, bx: &CropBox) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for y in 0..s {
        for x in 0..s {
            if !bx.contains(x, y) {
                best = best.max(a_star(&px[(y * s + x) * 3..]));
            }
        }
    }
    best
}

fn max_a_inside(px: &[f64], s: usize, bx: &CropBox) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for y in bx.y0()..bx.y1() {
        for x in bx.x0()..bx.x1() {
            best = best.max(a_star(&px[(y * s + x) * 3..]));
        }
    }
    best
}

/// Findings of [`validate_record`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordCheck {
    pub passed: bool,
    /// Max a* inside the anomaly box minus max a* outside it.
    pub margin: Option<f64>,
    /// Smoothed a* argmax (radius 2) lies inside the anomaly box.
    pub argmax_inside: Option<bool>,
    pub problems: Vec<String>,
}

/// Checks the structural invariants and the a* dominance of the anomaly.
pub fn validate_record(record: &SynthRecord, required_margin: f64) -> RecordCheck {
    let mut problems = Vec::new();
    let (h, w) = (record.image.height(), record.image.width());
    if record.label >= NUM_CLASSES {
        problems.push(format!("label {} out of range", record.label));
    }
    if (record.label == 0) != record.anomaly_box.is_none() {
        problems.push("anomaly box must be absent exactly for class 0".into());
    }
    let mut margin = None;
    let mut argmax_inside = None;
    if let Some(bx) = &record.anomaly_box {
        if bx.x1() > w || bx.y1() > h {
            problems.push("anomaly box leaves the image".into());
        } else {
            let lab = srgb_to_cielab(&record.image);
            let (x, y) = argmax_a_star(&lab, 2);
            let inside = bx.contains(x, y);
            let (mut a_in, mut a_out) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (i, &a) in lab.a.iter().enumerate() {
                if bx.contains(i % w, i / w) {
                    a_in = a_in.max(a);
                } else {
                    a_out = a_out.max(a);
                }
            }
            let m = a_in - a_out;
            if !inside {
                problems.push(format!("a* argmax ({x}, {y}) lies outside the anomaly box"));
            }
            if m < required_margin {
                problems.push(format!("a* margin {m:.2} below {required_margin}"));
            }
            margin = Some(m);
            argmax_inside = Some(inside);
        }
    }
    RecordCheck {
        passed: problems.is_empty(),
        margin,
        argmax_inside,
        problems,
    }
}
