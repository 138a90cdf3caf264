use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Cosine similarity of unit vectors, i.e. their dot product.
pub fn cosine_score<T: Scalar>(u: &[T], v: &[T]) -> T {
    dot(u, v)
}

/// InfoNCE for one anchor: the cross-entropy of picking `positive` among
/// `positive` and `negatives` under logits `s / tau`, evaluated with the
/// max-logit shift.
pub fn info_nce<T: Scalar>(anchor: &[T], positive: &[T], negatives: &[&[T]], tau: T) -> Result<T> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let l0 = cosine_score(anchor, positive) / tau;
    let logits: Vec<T> = negatives.iter().map(|n| cosine_score(anchor, n) / tau).collect();
    let max = logits.iter().fold(l0, |m, &l| m.max(l));
    let rest = logits.iter().map(|&l| (l - max).exp()).sum::<T>();
    Ok(shifted_loss(l0, max, rest))
}

/// `max + ln(e^{l0-max} + rest) - l0`, using `ln_1p` when `l0` is the max.
fn shifted_loss<T: Scalar>(l0: T, max: T, rest: T) -> T {
    if l0 >= max {
        rest.ln_1p()
    } else {
        max + ((l0 - max).exp() + rest).ln() - l0
    }
}

/// InfoNCE value together with its gradients.
#[derive(Debug, Clone)]
pub struct InfoNceGrad<T> {
    pub loss: T,
    pub d_anchor: Vec<T>,
    pub d_positive: Vec<T>,
    /// One gradient per negative, in input order.
    pub d_negatives: Vec<Vec<T>>,
    pub pos_sim: T,
    pub neg_sims: Vec<T>,
}

/// Like [`info_nce`] but also returns the gradients w.r.t. every input
/// vector; callers drop the ones that are constants.
pub fn info_nce_grad<T: Scalar>(anchor: &[T], positive: &[T], negatives: &[&[T]], tau: T) -> Result<InfoNceGrad<T>> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let d = anchor.len();
    let pos_sim = cosine_score(anchor, positive);
    let neg_sims: Vec<T> = negatives.iter().map(|n| cosine_score(anchor, n)).collect();
    let l0 = pos_sim / tau;
    let max = neg_sims.iter().fold(l0, |m, &s| m.max(s / tau));
    let e0 = (l0 - max).exp();
    let es: Vec<T> = neg_sims.iter().map(|&s| (s / tau - max).exp()).collect();
    let rest = es.iter().copied().sum::<T>();
    let sum = e0 + rest;
    let loss = shifted_loss(l0, max, rest);

    let p0 = e0 / sum;
    let c0 = (p0 - T::one()) / tau;
    let mut d_anchor: Vec<T> = positive.iter().map(|&p| c0 * p).collect();
    let d_positive: Vec<T> = anchor.iter().map(|&a| c0 * a).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for (n, &e) in negatives.iter().zip(&es) {
        let c = e / sum / tau;
        for i in 0..d {
            d_anchor[i] += c * n[i];
        }
        d_negatives.push(anchor.iter().map(|&a| c * a).collect());
    }
    Ok(InfoNceGrad {
        loss,
        d_anchor,
        d_positive,
        d_negatives,
        pos_sim,
        neg_sims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cosine_examples() {
        let u = basis(4, 0);
        assert_eq!(cosine_score(&u, &u), 1.0);
        assert_eq!(cosine_score(&u, &basis(4, 2)), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert_eq!(cosine_score(&u, &neg), -1.0);
    }

    #[test]
    fn equal_similarities_give_log_k_plus_one() {
        let a = basis(3, 0);
        let p = basis(3, 1);
        let negs: Vec<Vec<f64>> = (0..200).map(|_| basis(3, 2)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        let l = info_nce(&a, &p, &refs, 0.07).unwrap();
        assert!((l - 201f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_with_orthogonal_negatives() {
        // 50-digit reference: ln(1 + 200 e^{-1/0.07}) = 1.249671814657653848...e-4
        let a = basis(3, 0);
        let negs: Vec<Vec<f64>> = (0..200).map(|i| basis(3, 1 + i % 2)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        let l = info_nce(&a, &a, &refs, 0.07).unwrap();
        assert!((l - 1.249_671_814_657_653_8e-4).abs() < 1e-15, "{l:e}");
    }

    #[test]
    fn lower_bound_is_attained_at_antipodal_negatives() {
        let a = basis(2, 0);
        let neg = vec![-1.0, 0.0];
        let refs: Vec<&[f64]> = (0..10).map(|_| neg.as_slice()).collect();
        let l = info_nce(&a, &a, &refs, 0.07).unwrap();
        let bound = (10.0 * (-2.0f64 / 0.07).exp()).ln_1p();
        assert!((l - bound).abs() < 1e-12 * bound, "{l:e} vs {bound:e}");
    }

    #[test]
    fn empty_negatives_is_an_error() {
        let a = basis(2, 0);
        assert!(matches!(info_nce(&a, &a, &[], 0.1), Err(Error::EmptyNegatives)));
    }

    #[test]
    fn tiny_temperature_does_not_overflow() {
        let a = basis(2, 0);
        let n = vec![0.6, 0.8];
        let l = info_nce(&a, &basis(2, 1), &[n.as_slice()], 1e-3).unwrap();
        assert!(l.is_finite() && (l - 600.0).abs() < 1e-6);
        let g = info_nce_grad(&a, &basis(2, 1), &[n.as_slice()], 1e-3).unwrap();
        assert!(g.d_anchor.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = vec![0.3, -0.5, 0.8];
        let p = vec![0.1, 0.9, -0.2];
        let n1 = vec![-0.4, 0.2, 0.7];
        let n2 = vec![0.6, 0.6, 0.1];
        let tau = 0.2;
        let g = info_nce_grad(&a, &p, &[&n1, &n2], tau).unwrap();
        let f = |a: &[f64], p: &[f64], n1: &[f64], n2: &[f64]| info_nce(a, p, &[n1, n2], tau).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let bump = |v: &[f64], s: f64| {
                let mut w = v.to_vec();
                w[i] += s;
                w
            };
            let fd_a = (f(&bump(&a, h), &p, &n1, &n2) - f(&bump(&a, -h), &p, &n1, &n2)) / (2.0 * h);
            let fd_p = (f(&a, &bump(&p, h), &n1, &n2) - f(&a, &bump(&p, -h), &n1, &n2)) / (2.0 * h);
            let fd_n = (f(&a, &p, &n1, &bump(&n2, h)) - f(&a, &p, &n1, &bump(&n2, -h))) / (2.0 * h);
            assert!((fd_a - g.d_anchor[i]).abs() < 1e-7);
            assert!((fd_p - g.d_positive[i]).abs() < 1e-7);
            assert!((fd_n - g.d_negatives[1][i]).abs() < 1e-7);
        }
    }
}
