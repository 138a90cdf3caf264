use super::RgbImage;

/// D65 reference white (2° observer), Y normalised to 1.
pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

// Linear sRGB -> XYZ, derived from the sRGB primaries so that each row sums
// to the matching WHITE_D65 component.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_439_089_692_1, 0.357_576_077_643_908_97, 0.180_437_483_266_398_93],
    [0.212_672_851_405_622_49, 0.715_152_155_287_817_94, 0.072_174_993_306_559_572],
    [0.019_333_895_582_329_317, 0.119_192_025_881_302_99, 0.950_304_078_536_367_69],
];

/// CIELAB planes of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabPlanes {
    pub height: usize,
    pub width: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabPlanes {
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.l[i], self.a[i], self.b[i]]
    }

    /// A plane-only constructor, mostly useful for exercising [`argmax_a_star`].
    pub fn from_a_plane(height: usize, width: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), height * width);
        Self {
            height,
            width,
            l: vec![50.0; a.len()],
            b: vec![0.0; a.len()],
            a,
        }
    }
}

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts a single sRGB triple (values in `[0, 1]`) to `(L*, a*, b*)`.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let v = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(v / WHITE_D65[i]);
    }
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// sRGB (IEC 61966-2-1 transfer) -> linear RGB -> XYZ (D65) -> CIELAB.
pub fn srgb_to_cielab(img: &RgbImage) -> LabPlanes {
    let n = img.height() * img.width();
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for px in img.data().chunks_exact(3) {
        let lab = srgb_pixel_to_lab([px[0] as f64, px[1] as f64, px[2] as f64]);
        l.push(lab[0]);
        a.push(lab[1]);
        b.push(lab[2]);
    }
    LabPlanes {
        height: img.height(),
        width: img.width(),
        l,
        a,
        b,
    }
}

/// Edge-clamped box filter of side `2r + 1`, separable.
fn box_filter(plane: &[f64], height: usize, width: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return plane.to_vec();
    }
    let ri = r as isize;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut horiz = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut s = 0.0;
            for dx in -ri..=ri {
                let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                s += row[xx];
            }
            horiz[y * width + x] = s;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for dy in -ri..=ri {
                let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                s += horiz[yy * width + x];
            }
            out[y * width + x] = s / norm;
        }
    }
    out
}

/// Location `(x, y)` of the largest box-smoothed a* value. Ties resolve to
/// the smallest row-major index.
pub fn argmax_a_star(lab: &LabPlanes, smooth_radius: usize) -> (usize, usize) {
    let smoothed = box_filter(&lab.a, lab.height, lab.width, smooth_radius);
    let mut best = 0;
    for (i, &v) in smoothed.iter().enumerate() {
        if v > smoothed[best] {
            best = i;
        }
    }
    (best % lab.width, best / lab.width)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from an independent 50-digit evaluation of the same
    // conversion chain.
    const RED_LAB: [f64; 3] = [53.240_788_867_6, 80.092_494_286_4, 67.203_191_397_4];
    const GREEN_LAB: [f64; 3] = [87.734_720_190_9, -86.182_714_624_5, 83.179_309_850_5];
    const BLUE_LAB: [f64; 3] = [32.297_009_439_8, 79.187_517_397_2, -107.860_162_889];
    const MIXED_LAB: [f64; 3] = [49.880_038_967_2, 49.207_218_395_5, 41.087_547_488_5];

    #[test]
    fn primaries_match_reference() {
        for (rgb, want) in [
            ([1.0, 0.0, 0.0], RED_LAB),
            ([0.0, 1.0, 0.0], GREEN_LAB),
            ([0.0, 0.0, 1.0], BLUE_LAB),
            ([0.8, 0.3, 0.2], MIXED_LAB),
        ] {
            let got = srgb_pixel_to_lab(rgb);
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() < 1e-8, "{rgb:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn black_and_white_endpoints() {
        let black = srgb_pixel_to_lab([0.0; 3]);
        assert_eq!(black, [0.0, 0.0, 0.0]);
        let white = srgb_pixel_to_lab([1.0; 3]);
        assert!((white[0] - 100.0).abs() < 1e-9);
        assert!(white[1].abs() < 1e-9 && white[2].abs() < 1e-9);
    }

    #[test]
    fn neutral_axis_has_no_chroma() {
        for i in 0..=255 {
            let g = i as f64 / 255.0;
            let lab = srgb_pixel_to_lab([g, g, g]);
            assert!(lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9, "{g}: {lab:?}");
            assert!((0.0..=100.0 + 1e-9).contains(&lab[0]));
        }
    }

    #[test]
    fn argmax_single_peak_and_ties() {
        let (h, w) = (60, 50);
        let mut a = vec![0.0; h * w];
        a[42 * w + 17] = 10.0;
        assert_eq!(argmax_a_star(&LabPlanes::from_a_plane(h, w, a), 0), (17, 42));
        let flat = LabPlanes::from_a_plane(h, w, vec![3.0; h * w]);
        assert_eq!(argmax_a_star(&flat, 0), (0, 0));
        assert_eq!(argmax_a_star(&flat, 2), (0, 0));
    }

    #[test]
    fn smoothing_suppresses_isolated_spike() {
        let (h, w) = (30, 30);
        let mut a = vec![0.0; h * w];
        a[3 * w + 3] = 20.0; // single hot pixel
        for y in 18..24 {
            for x in 10..16 {
                a[y * w + x] = 5.0; // broad plateau
            }
        }
        let lab = LabPlanes::from_a_plane(h, w, a);
        assert_eq!(argmax_a_star(&lab, 0), (3, 3));
        let (x, y) = argmax_a_star(&lab, 2);
        assert!((10..16).contains(&x) && (18..24).contains(&y));
    }

    #[test]
    fn box_filter_is_edge_clamped_mean() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64).collect(); // 3x4
        let out = box_filter(&plane, 3, 4, 1);
        // corner (0,0): rows {0,0,1} cols {0,0,1}
        let want = (0.0 + 0.0 + 1.0 + 0.0 + 0.0 + 1.0 + 4.0 + 4.0 + 5.0) / 9.0;
        assert!((out[0] - want).abs() < 1e-12);
    }
}
