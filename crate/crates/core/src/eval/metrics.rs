use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

fn sq_dist<T: Scalar>(u: &[T], v: &[T]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum()
}

/// Mean squared distance over positive pairs.
pub fn alignment<T: Scalar>(pairs: &[(&[T], &[T])]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("alignment pairs"));
    }
    Ok(pairs.iter().map(|(u, v)| sq_dist(u, v)).sum::<f64>() / pairs.len() as f64)
}

/// `log mean exp(-2 |u - v|^2)` over unordered distinct pairs.
pub fn uniformity<T: Scalar>(vectors: &[&[T]]) -> Result<f64> {
    let m = vectors.len();
    if m < 2 {
        return Err(Error::Empty("uniformity needs at least two vectors"));
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sum += (-2.0 * sq_dist(vectors[i], vectors[j])).exp();
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Ok((sum / pairs).ln().min(0.0))
}

/// Pairs `(i, j)`, `i < j`, of the same label that are each other's most
/// similar same-label row.
pub fn mutual_nn_pairs<T: Scalar>(vectors: &[&[T]], labels: &[usize]) -> Vec<(usize, usize)> {
    let nn: Vec<Option<usize>> = (0..vectors.len())
        .map(|i| {
            (0..vectors.len())
                .filter(|&j| j != i && labels[j] == labels[i])
                .max_by(|&a, &b| {
                    dot(vectors[i], vectors[a])
                        .as_f64()
                        .total_cmp(&dot(vectors[i], vectors[b]).as_f64())
                        .then(b.cmp(&a))
                })
        })
        .collect();
    (0..vectors.len())
        .filter_map(|i| nn[i].filter(|&j| j > i && nn[j] == Some(i)).map(|j| (i, j)))
        .collect()
}
