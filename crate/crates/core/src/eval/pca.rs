use crate::error::{Error, Result};
use crate::scalar::Scalar;

const TOL: f64 = 1e-9;
const MAX_ITERS: usize = 100_000;

fn normalise(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    c.chunks(v.len()).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Leading eigenvector of the symmetric PSD matrix `c` by power iteration,
/// kept orthogonal to `against`.
fn leading(c: &[f64], d: usize, against: Option<&[f64]>) -> (Vec<f64>, f64) {
    let project = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
    };
    // Deterministic start with no symmetric structure.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    project(&mut v);
    if normalise(&mut v) == 0.0 {
        v = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    }
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let mut w = mat_vec(c, &v);
        project(&mut w);
        lambda = normalise(&mut w);
        if lambda == 0.0 {
            return (v, 0.0);
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < TOL {
            break;
        }
    }
    (v, lambda)
}

fn orient(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Centres the rows, finds the top two principal directions by power
/// iteration with deflation, and projects. Each direction is oriented so
/// that its first non-zero loading is positive.
pub fn pca_2d<T: Scalar>(rows: &[&[T]]) -> Result<Vec<[f64; 2]>> {
    let m = rows.len();
    if m < 2 {
        return Err(Error::Empty("PCA needs at least two rows"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA rows differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (acc, v) in mean.iter_mut().zip(r.iter()) {
            *acc += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(v, mu)| v.as_f64() - mu).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= m as f64);
    let scale = cov.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::RankZero);
    }
    let (mut u1, l1) = leading(&cov, d, None);
    orient(&mut u1);
    let (mut u2, l2) = if d > 1 { leading(&cov, d, Some(&u1)) } else { (vec![0.0], 0.0) };
    if l2 <= l1 * 1e-12 {
        // Rank one: any orthogonal direction gives zero coordinates.
        u2.iter_mut().for_each(|x| *x = 0.0);
    }
    orient(&mut u2);
    Ok(centred
        .iter()
        .map(|r| {
            let a = r.iter().zip(&u1).map(|(x, y)| x * y).sum();
            let b = r.iter().zip(&u2).map(|(x, y)| x * y).sum();
            [a, b]
        })
        .collect())
}
