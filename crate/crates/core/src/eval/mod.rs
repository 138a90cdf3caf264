//! Evaluation of frozen embeddings: weighted kNN, a two-layer probe,
//! alignment/uniformity and a 2-D PCA for plotting.

mod analysis;
mod knn;
mod metrics;
mod pca;
mod probe;
mod zero_shot;

pub use analysis::{snapshot_pca_csv, snapshot_stats, SnapshotStats, ANALYSIS_HEADER, PCA_HEADER};
pub use knn::{knn_predict_all, weighted_knn, KnnParams};
pub use metrics::{alignment, mutual_nn_pairs, uniformity};
pub use pca::pca_2d;
pub use probe::{linear_probe, ProbeConfig, ProbeReport};
pub use zero_shot::{embed_images, eval_view, report_from_embeddings, zero_shot_eval, ClassStats, EvalConfig, EvalReport};

use crate::error::{Error, Result};
use crate::nn::DenseArray;
use crate::scalar::{norm, Scalar};

/// Unit-norm rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet<T> {
    vectors: DenseArray<T>,
    labels: Vec<usize>,
    ids: Vec<usize>,
}

impl<T: Scalar> LabeledEmbeddingSet<T> {
    /// `vectors` is `[m, d]`; ids default to row numbers.
    pub fn new(vectors: DenseArray<T>, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(vectors, labels, ids)
    }

    pub fn with_ids(vectors: DenseArray<T>, labels: Vec<usize>, ids: Vec<usize>) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::Shape(format!("expected [m, d] vectors, got {:?}", vectors.shape())));
        }
        let (m, d) = (vectors.shape()[0], vectors.shape()[1]);
        if m == 0 {
            return Err(Error::Empty("embedding set"));
        }
        if labels.len() != m || ids.len() != m {
            return Err(Error::Shape(format!("{m} vectors but {} labels and {} ids", labels.len(), ids.len())));
        }
        let tol = T::from_f64_lossy(1e-4);
        for row in vectors.data().chunks(d) {
            if (norm(row) - T::one()).abs() > tol {
                return Err(Error::Shape("embedding rows must be unit norm".into()));
            }
        }
        Ok(Self { vectors, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.vectors.data()[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.vectors.data().chunks(self.dim())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}
