use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{knn_predict_all, KnnParams};
use super::metrics::{alignment, mutual_nn_pairs, uniformity};
use super::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::nn::{DenseArray, Encoder};
use crate::scalar::Scalar;
use crate::views::{locate_prior, prior_view_from_box, SampledTransform, ViewConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub knn_tau: f64,
    pub knn_k: usize,
    pub views: ViewConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let knn = KnnParams::default();
        Self { knn_tau: knn.tau, knn_k: knn.k, views: ViewConfig::default() }
    }
}

impl EvalConfig {
    pub fn knn(&self) -> KnnParams {
        KnnParams { tau: self.knn_tau, k: self.knn_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub support: usize,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// Neighbours actually used after capping at the train-set size.
    pub knn_k: usize,
    pub knn_tau: f64,
    pub per_class: Vec<ClassStats>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Over same-class mutual nearest neighbours of the test set.
    pub alignment: Option<f64>,
    pub alignment_pairs: usize,
    /// Over all test embeddings.
    pub uniformity: Option<f64>,
}

/// The evaluation view: the deterministic prior crop, no augmentation.
pub fn eval_view(img: &RgbImage, views: &ViewConfig) -> Result<RgbImage> {
    let bx = locate_prior(img, views, 0)?;
    Ok(prior_view_from_box(img, &bx, views.view_size, &SampledTransform::identity()))
}

/// `f_θ` embeddings of the evaluation views, `[m, d]`.
pub fn embed_images<T: Scalar>(encoder: &Encoder<T>, images: &[RgbImage], views: &ViewConfig) -> Result<DenseArray<T>> {
    if images.is_empty() {
        return Err(Error::Empty("images to embed"));
    }
    let chunks: Vec<Vec<T>> = images
        .par_chunks(64)
        .map(|chunk| {
            let vs = chunk.iter().map(|img| eval_view(img, views)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&RgbImage> = vs.iter().collect();
            Ok(encoder.embed_prior(&refs)?.data().to_vec())
        })
        .collect::<Result<_>>()?;
    DenseArray::from_vec(&[images.len(), encoder.embedding_dim()], chunks.concat())
}

/// kNN predictions plus confusion, per-class and geometry statistics.
pub fn report_from_embeddings<T: Scalar>(
    train: &LabeledEmbeddingSet<T>,
    test: &LabeledEmbeddingSet<T>,
    params: KnnParams,
) -> Result<EvalReport> {
    let queries: Vec<&[T]> = test.rows().collect();
    let predicted = knn_predict_all(train, &queries, params)?;
    let c = train.num_classes().max(test.num_classes());
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in test.labels().iter().zip(&predicted) {
        confusion[t][p] += 1;
    }
    let hits: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class = (0..c)
        .map(|k| {
            let support: usize = confusion[k].iter().sum();
            let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
            ClassStats {
                class: k,
                support,
                precision: (predicted_k > 0).then(|| confusion[k][k] as f64 / predicted_k as f64),
                recall: (support > 0).then(|| confusion[k][k] as f64 / support as f64),
            }
        })
        .collect();
    let pairs = mutual_nn_pairs(&queries, test.labels());
    let pair_refs: Vec<(&[T], &[T])> = pairs.iter().map(|&(i, j)| (queries[i], queries[j])).collect();
    Ok(EvalReport {
        top1_accuracy: hits as f64 / test.len() as f64,
        n_train: train.len(),
        n_test: test.len(),
        num_classes: c,
        knn_k: params.k.min(train.len()),
        knn_tau: params.tau,
        per_class,
        confusion,
        alignment: alignment(&pair_refs).ok(),
        alignment_pairs: pairs.len(),
        uniformity: uniformity(&queries).ok(),
    })
}

/// Zero-shot classification: embed both corpora with the frozen prior
/// encoder and classify every test image by weighted kNN.
pub fn zero_shot_eval<T: Scalar>(
    encoder: &Encoder<T>,
    train: (&[RgbImage], &[usize]),
    test: (&[RgbImage], &[usize]),
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let train_set = LabeledEmbeddingSet::new(embed_images(encoder, train.0, &cfg.views)?, train.1.to_vec())?;
    let test_set = LabeledEmbeddingSet::new(embed_images(encoder, test.0, &cfg.views)?, test.1.to_vec())?;
    report_from_embeddings(&train_set, &test_set, cfg.knn())
}
