use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::DenseArray;
use crate::rng::{rng_from, stream_rng, Stream};
use crate::scalar::{normalize_in_place, Scalar};

/// One EMA representation per dataset instance; the source of global negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T> {
    rows: DenseArray<T>,
    momentum: T,
}

impl<T: Scalar> MemoryBank<T> {
    /// Rows drawn uniformly on the unit sphere.
    pub fn random(n: usize, d: usize, momentum: T, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Empty("memory bank"));
        }
        if !(momentum > T::zero() && momentum < T::one()) {
            return Err(Error::config("loss.bank_momentum", "must lie in (0, 1)"));
        }
        let mut rng = stream_rng(seed, Stream::Bank, &[]);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            loop {
                let mut row: Vec<T> = (0..d)
                    .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
                    .collect();
                if normalize_in_place(&mut row) {
                    data.extend(row);
                    break;
                }
            }
        }
        Ok(Self {
            rows: DenseArray::from_vec(&[n, d], data)?,
            momentum,
        })
    }

    pub fn from_rows(rows: DenseArray<T>, momentum: T) -> Result<Self> {
        if rows.shape().len() != 2 || rows.is_empty() {
            return Err(Error::Shape("bank rows must be a non-empty n x d matrix".into()));
        }
        Ok(Self { rows, momentum })
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn rows(&self) -> &DenseArray<T> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.rows.data()[i * d..(i + 1) * d]
    }

    /// `R_i <- normalize(m R_i + (1 - m) z_i)` for every entry; other rows are
    /// untouched. All indices are validated before any row changes.
    pub fn update(&mut self, entries: &[(usize, &[T])]) -> Result<()> {
        let (n, d) = (self.len(), self.dim());
        for &(i, z) in entries {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if z.len() != d {
                return Err(Error::Shape(format!("bank update vector has {} values, bank dim is {d}", z.len())));
            }
        }
        let m = self.momentum;
        let data = self.rows.data_mut();
        for &(i, z) in entries {
            let row = &mut data[i * d..(i + 1) * d];
            let old = row.to_vec();
            for k in 0..d {
                row[k] = m * row[k] + (T::one() - m) * z[k];
            }
            if !normalize_in_place(row) {
                // m R + (1-m) z vanished (z = -R at m = 1/2): keep the old row.
                row.copy_from_slice(&old);
            }
        }
        Ok(())
    }
}

/// `k` distinct row indices drawn uniformly from `{0..n} \ {exclude}`.
pub fn sample_negatives(n: usize, exclude: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let available = n.saturating_sub(1);
    if k > available {
        return Err(Error::TooFewNegatives { k, available });
    }
    if exclude >= n {
        return Err(Error::IndexOutOfRange { index: exclude, len: n });
    }
    let mut rng = rng_from(seed);
    Ok(index::sample(&mut rng, available, k)
        .into_iter()
        .map(|j| if j >= exclude { j + 1 } else { j })
        .collect())
}
