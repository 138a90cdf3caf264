use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{derive, rng_from, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
}

/// fc(d, d) -> ReLU -> fc(d, C).
struct Head {
    d: usize,
    c: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Head {
    fn new(d: usize, c: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut uniform = |n: usize, bound: f64| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<f64>>();
        let b = 1.0 / (d as f64).sqrt();
        Self { d, c, w1: uniform(d * d, b), b1: uniform(d, b), w2: uniform(c * d, b), b2: uniform(c, b) }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden: Vec<f64> = (0..self.d)
            .map(|o| (self.b1[o] + (0..self.d).map(|i| self.w1[o * self.d + i] * x[i]).sum::<f64>()).max(0.0))
            .collect();
        let logits = (0..self.c)
            .map(|o| self.b2[o] + (0..self.d).map(|i| self.w2[o * self.d + i] * hidden[i]).sum::<f64>())
            .collect();
        (hidden, logits)
    }

    fn predict(&self, x: &[f64]) -> usize {
        let (_, logits) = self.forward(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }
}

fn accuracy(head: &Head, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let hits = xs.iter().zip(ys).filter(|(x, &y)| head.predict(x) == y).count();
    hits as f64 / ys.len() as f64
}

/// Trains the two-layer head on frozen embeddings with softmax
/// cross-entropy and momentum SGD; returns the best validation accuracy
/// seen at the end of any epoch.
pub fn linear_probe<T: Scalar>(train: &LabeledEmbeddingSet<T>, val: &LabeledEmbeddingSet<T>, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if train.dim() != val.dim() {
        return Err(Error::Shape("train and validation embeddings differ in dimension".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("eval.probe", "epochs, batch_size and lr must be positive"));
    }
    let c = train.num_classes().max(val.num_classes());
    let mut present = vec![false; c];
    train.labels().iter().for_each(|&l| present[l] = true);
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::ClassAbsent(missing));
    }
    let d = train.dim();
    let xs: Vec<Vec<f64>> = train.rows().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let vx: Vec<Vec<f64>> = val.rows().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let ys = train.labels();
    let mut head = Head::new(d, c, derive(cfg.seed, Stream::Eval, &[0]));
    let mut vel = Head { d, c, w1: vec![0.0; d * d], b1: vec![0.0; d], w2: vec![0.0; c * d], b2: vec![0.0; c] };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0);
    let mut last_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(derive(cfg.seed, Stream::Eval, &[1, epoch as u64])));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Head { d, c, w1: vec![0.0; d * d], b1: vec![0.0; d], w2: vec![0.0; c * d], b2: vec![0.0; c] };
            for &n in batch {
                let x = &xs[n];
                let (hidden, logits) = head.forward(x);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                epoch_loss += z.ln() + max - logits[ys[n]];
                let dlogit: Vec<f64> = exps.iter().enumerate().map(|(k, e)| e / z - f64::from(u8::from(k == ys[n]))).collect();
                let mut dh = vec![0.0; d];
                for o in 0..c {
                    g.b2[o] += dlogit[o];
                    for i in 0..d {
                        g.w2[o * d + i] += dlogit[o] * hidden[i];
                        dh[i] += dlogit[o] * head.w2[o * d + i];
                    }
                }
                for o in 0..d {
                    if hidden[o] <= 0.0 {
                        continue;
                    }
                    g.b1[o] += dh[o];
                    for i in 0..d {
                        g.w1[o * d + i] += dh[o] * x[i];
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (p, (v, gr)) in [
                (&mut head.w1, (&mut vel.w1, &g.w1)),
                (&mut head.b1, (&mut vel.b1, &g.b1)),
                (&mut head.w2, (&mut vel.w2, &g.w2)),
                (&mut head.b2, (&mut vel.b2, &g.b2)),
            ] {
                for ((p, v), gr) in p.iter_mut().zip(v.iter_mut()).zip(gr) {
                    *v = cfg.momentum * *v + gr * scale;
                    *p -= cfg.lr * *v;
                }
            }
        }
        last_loss = epoch_loss / xs.len() as f64;
        if !last_loss.is_finite() {
            return Err(Error::NonFinite(format!("probe loss diverged at epoch {epoch}")));
        }
        let acc = accuracy(&head, &vx, val.labels());
        if acc > best.0 {
            best = (acc, epoch);
        }
    }
    Ok(ProbeReport { best_val_accuracy: best.0, best_epoch: best.1, final_train_loss: last_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseArray;
    use crate::scalar::normalize_in_place;
    use rand_distr::{Distribution, StandardNormal};

    fn random_set(m: usize, d: usize, c: usize, seed: u64, separable: bool) -> LabeledEmbeddingSet<f64> {
        let mut rng = rng_from(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..m {
            let label = i % c;
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            if separable {
                v[label] += 6.0;
            }
            normalize_in_place(&mut v);
            data.extend(v);
            labels.push(if separable { label } else { rng.random_range(0..c) });
        }
        LabeledEmbeddingSet::new(DenseArray::from_vec(&[m, d], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn separable_classes_are_learned() {
        let train = random_set(80, 6, 2, 1, true);
        let val = random_set(40, 6, 2, 2, true);
        let r = linear_probe(&train, &val, &ProbeConfig { epochs: 20, ..Default::default() }).unwrap();
        assert_eq!(r.best_val_accuracy, 1.0);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let train = random_set(400, 8, 4, 10 + seed, false);
            let val = random_set(400, 8, 4, 20 + seed, false);
            let cfg = ProbeConfig { epochs: 10, seed, ..Default::default() };
            let r = linear_probe(&train, &val, &cfg).unwrap();
            accs.push(r.best_val_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.25).abs() <= 0.07, "{accs:?}");
    }

    #[test]
    fn absent_class_is_an_error() {
        let train = LabeledEmbeddingSet::new(DenseArray::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), vec![0, 2]).unwrap();
        assert!(matches!(linear_probe(&train, &train, &ProbeConfig::default()), Err(Error::ClassAbsent(1))));
    }
}
