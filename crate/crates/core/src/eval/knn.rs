use rayon::prelude::*;

use super::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub tau: f64,
    /// Capped at the train-set size.
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { tau: 0.1, k: 290 }
    }
}

/// Votes of the `k` most similar train rows, each weighted by
/// `exp(s / tau)`. Similarity ties go to the lower row index, class ties to
/// the lower class id.
pub fn weighted_knn<T: Scalar>(train: &LabeledEmbeddingSet<T>, query: &[T], params: KnnParams) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::Empty("kNN train set"));
    }
    if query.len() != train.dim() {
        return Err(Error::Shape(format!("query has dimension {}, train {}", query.len(), train.dim())));
    }
    if params.k == 0 || !(params.tau > 0.0) {
        return Err(Error::config("eval.knn", "k must be positive and tau > 0"));
    }
    let mut sims: Vec<(f64, usize)> = train.rows().enumerate().map(|(i, r)| (dot(r, query).as_f64(), i)).collect();
    let k = params.k.min(sims.len());
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, by_rank);
        sims.truncate(k);
    }
    sims.sort_by(by_rank);
    // Shift by the top similarity so that small tau cannot overflow; the
    // common factor does not change the argmax.
    let top = sims[0].0;
    let mut votes = vec![0.0f64; train.num_classes()];
    for &(s, i) in &sims {
        votes[train.labels()[i]] += ((s - top) / params.tau).exp();
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    Ok(best)
}

/// [`weighted_knn`] for every row of `queries`, in parallel.
pub fn knn_predict_all<T: Scalar>(train: &LabeledEmbeddingSet<T>, queries: &[&[T]], params: KnnParams) -> Result<Vec<usize>> {
    queries.par_iter().map(|q| weighted_knn(train, q, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseArray;

    fn set(rows: &[[f64; 2]], labels: &[usize]) -> LabeledEmbeddingSet<f64> {
        let data = rows.iter().flatten().copied().collect();
        LabeledEmbeddingSet::new(DenseArray::from_vec(&[rows.len(), 2], data).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn nearest_label_with_k_one() {
        let s = set(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], &[2, 0, 1]);
        let p = KnnParams { k: 1, ..Default::default() };
        assert_eq!(weighted_knn(&s, &[0.0, 1.0], p).unwrap(), 0);
        assert_eq!(weighted_knn(&s, &[-1.0, 0.0], p).unwrap(), 1);
    }

    #[test]
    fn equal_votes_go_to_class_zero() {
        let s = set(&[[1.0, 0.0], [1.0, 0.0]], &[1, 0]);
        assert_eq!(weighted_knn(&s, &[0.0, 1.0], KnnParams::default()).unwrap(), 0);
    }

    #[test]
    fn tiny_temperature_does_not_overflow() {
        let s = set(&[[1.0, 0.0], [0.0, 1.0]], &[0, 1]);
        let p = KnnParams { tau: 1e-4, k: 2 };
        assert_eq!(weighted_knn(&s, &[0.0, 1.0], p).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = set(&[[1.0, 0.0]], &[0]);
        assert!(weighted_knn(&s, &[1.0, 0.0, 0.0], KnnParams::default()).is_err());
        assert!(weighted_knn(&s, &[1.0, 0.0], KnnParams { k: 0, tau: 0.1 }).is_err());
    }
}
