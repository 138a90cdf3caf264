use super::bank::{sample_negatives, MemoryBank};
use super::infonce::{cosine_score, info_nce_grad};
use super::{LossConfig, LossMode};
use crate::error::{Error, Result};
use crate::rng::mix;
use crate::scalar::Scalar;

/// One instance of a batch: dataset index plus its two encoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a, T> {
    pub index: usize,
    pub z_p: &'a [T],
    pub z_d: &'a [T],
}

/// Batch loss, its parts, and gradients w.r.t. the encoder outputs.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// Batch means of the two InfoNCE terms.
    pub term_p: T,
    pub term_d: T,
    /// `[B, d]`, row-major in batch order.
    pub grad_zp: Vec<T>,
    pub grad_zd: Vec<T>,
    /// `[B, d]`; all zero for PGCon or when WIN gradients are detached.
    pub grad_zwin: Vec<T>,
    pub mean_pos_sim: T,
    pub mean_neg_sim: T,
    /// Mean `s(z_p^i, z_win^i)` over the batch, when WIN views are present.
    pub mean_win_sim: Option<T>,
}

/// Negative-sampling seed for one (batch slot, instance, term).
fn term_seed(seed: u64, slot: usize, index: usize, term: u64) -> u64 {
    mix(seed, &[slot as u64, index as u64, term])
}

fn combined<T: Scalar>(
    batch: &[BatchEntry<'_, T>],
    wins: &[&[T]],
    bank: &MemoryBank<T>,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossOutput<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let d = bank.dim();
    let b = batch.len();
    let tau = T::from_f64_lossy(cfg.tau);
    let alpha = T::from_f64_lossy(cfg.alpha);
    let beta = T::from_f64_lossy(cfg.beta);
    let inv_b = T::one() / T::from_usize(b).unwrap();
    for e in batch {
        if e.z_p.len() != d || e.z_d.len() != d {
            return Err(Error::Shape(format!("embeddings must have dimension {d}")));
        }
        if e.index >= bank.len() {
            return Err(Error::IndexOutOfRange { index: e.index, len: bank.len() });
        }
    }

    let mut out = LossOutput {
        loss: T::zero(),
        term_p: T::zero(),
        term_d: T::zero(),
        grad_zp: vec![T::zero(); b * d],
        grad_zd: vec![T::zero(); b * d],
        grad_zwin: vec![T::zero(); wins.len() * d],
        mean_pos_sim: T::zero(),
        mean_neg_sim: T::zero(),
        mean_win_sim: None,
    };
    let mut neg_sum = T::zero();
    let mut neg_count = 0usize;
    let mut pos_sum = T::zero();

    for (slot, e) in batch.iter().enumerate() {
        let r_i = bank.row(e.index);
        for (term, positive, weight) in [(0u64, r_i, alpha), (1u64, e.z_d, beta)] {
            let idx = sample_negatives(bank.len(), e.index, cfg.k, term_seed(seed, slot, e.index, term))?;
            let mut negs: Vec<&[T]> = idx.iter().map(|&j| bank.row(j)).collect();
            negs.extend_from_slice(wins);
            let g = info_nce_grad(e.z_p, positive, &negs, tau)?;
            let scale = weight * inv_b;
            let gp = &mut out.grad_zp[slot * d..(slot + 1) * d];
            for (acc, &v) in gp.iter_mut().zip(&g.d_anchor) {
                *acc += scale * v;
            }
            if term == 1 {
                let gd = &mut out.grad_zd[slot * d..(slot + 1) * d];
                for (acc, &v) in gd.iter_mut().zip(&g.d_positive) {
                    *acc += scale * v;
                }
            }
            if !cfg.detach_win {
                for (w, dn) in g.d_negatives[idx.len()..].iter().enumerate() {
                    let gw = &mut out.grad_zwin[w * d..(w + 1) * d];
                    for (acc, &v) in gw.iter_mut().zip(dn) {
                        *acc += scale * v;
                    }
                }
            }
            if term == 0 {
                out.term_p += g.loss * inv_b;
            } else {
                out.term_d += g.loss * inv_b;
            }
            out.loss += weight * g.loss * inv_b;
            pos_sum += g.pos_sim;
            for &s in &g.neg_sims[..idx.len()] {
                neg_sum += s;
                neg_count += 1;
            }
        }
    }
    out.mean_pos_sim = pos_sum / T::from_usize(2 * b).unwrap();
    if neg_count > 0 {
        out.mean_neg_sim = neg_sum / T::from_usize(neg_count).unwrap();
    }
    if wins.len() == b {
        let s: T = batch.iter().zip(wins).map(|(e, w)| cosine_score(e.z_p, w)).sum();
        out.mean_win_sim = Some(s * inv_b);
    }
    Ok(out)
}

/// `alpha * L_p + beta * L_d`, batch-averaged. `L_p` pairs `z_p` with its
/// bank row, `L_d` with `z_d`; each term draws its own `k` bank negatives.
/// Bank rows are constants.
pub fn pgcon_loss<T: Scalar>(batch: &[BatchEntry<'_, T>], bank: &MemoryBank<T>, cfg: &LossConfig, seed: u64) -> Result<LossOutput<T>> {
    combined(batch, &[], bank, cfg, seed)
}

/// PGCon with the batch's WIN embeddings appended to every negative list.
/// Gradients flow into `wins` unless `cfg.detach_win` is set.
pub fn wincon_loss<T: Scalar>(
    batch: &[BatchEntry<'_, T>],
    wins: &[&[T]],
    bank: &MemoryBank<T>,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossOutput<T>> {
    let empty_ok = wins.is_empty() && cfg.allow_empty_win;
    if wins.len() != batch.len() && !empty_ok {
        return Err(Error::MissingWin { batch: batch.len(), win: wins.len() });
    }
    if wins.iter().any(|w| w.len() != bank.dim()) {
        return Err(Error::Shape(format!("WIN embeddings must have dimension {}", bank.dim())));
    }
    combined(batch, wins, bank, cfg, seed)
}

/// Dispatches on `cfg.mode`.
pub fn mode_loss<T: Scalar>(
    batch: &[BatchEntry<'_, T>],
    wins: &[&[T]],
    bank: &MemoryBank<T>,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossOutput<T>> {
    match cfg.mode {
        LossMode::Pgcon => pgcon_loss(batch, bank, cfg, seed),
        LossMode::Wincon => wincon_loss(batch, wins, bank, cfg, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::infonce::info_nce;
    use crate::nn::DenseArray;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    /// Bank whose row 0 is e0 and every other row is orthogonal to e0.
    fn orthogonal_bank(n: usize, d: usize) -> MemoryBank<f64> {
        let mut data = Vec::new();
        for i in 0..n {
            data.extend(basis(d, if i == 0 { 0 } else { 1 + i % (d - 1) }));
        }
        MemoryBank::from_rows(DenseArray::from_vec(&[n, d], data).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn closed_form_batch_of_one() {
        let bank = orthogonal_bank(201, 4);
        let z = basis(4, 0);
        let cfg = LossConfig::default();
        let out = pgcon_loss(&[BatchEntry { index: 0, z_p: &z, z_d: &z }], &bank, &cfg, 3).unwrap();
        assert!((out.loss - 1.249_671_814_657_653_8e-4).abs() < 1e-12);
        assert!((out.term_p - out.term_d).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_keeps_only_the_bank_term() {
        let bank = MemoryBank::<f64>::random(40, 6, 0.5, 2).unwrap();
        let zs: Vec<Vec<f64>> = (0..3).map(|i| bank.row(10 + i).iter().rev().copied().collect()).collect();
        let batch: Vec<BatchEntry<f64>> =
            (0..3).map(|i| BatchEntry { index: i, z_p: bank.row(20 + i), z_d: &zs[i] }).collect();
        let cfg = LossConfig { k: 10, beta: 0.0, ..Default::default() };
        let out = pgcon_loss(&batch, &bank, &cfg, 5).unwrap();
        assert!((out.loss - 0.5 * out.term_p).abs() < 1e-15);
        assert!(out.grad_zd.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn wincon_single_win_closed_form() {
        let bank = orthogonal_bank(5, 4);
        let z = basis(4, 0);
        let win = basis(4, 2);
        let cfg = LossConfig { k: 0, mode: LossMode::Wincon, ..Default::default() };
        let out = wincon_loss(&[BatchEntry { index: 0, z_p: &z, z_d: &z }], &[&win], &bank, &cfg, 0).unwrap();
        // ln(1 + e^{-1/0.07}) from a 40-digit evaluation
        assert!((out.term_p - 6.248_747_557_120_382e-7).abs() < 1e-15, "{:e}", out.term_p);
        assert_eq!(out.mean_win_sim, Some(0.0));
    }

    #[test]
    fn missing_win_is_an_error_unless_allowed() {
        let bank = MemoryBank::<f64>::random(10, 3, 0.5, 1).unwrap();
        let z = bank.row(3).to_vec();
        let batch = [BatchEntry { index: 0, z_p: &z, z_d: &z }];
        let cfg = LossConfig { k: 3, mode: LossMode::Wincon, ..Default::default() };
        assert!(matches!(wincon_loss(&batch, &[], &bank, &cfg, 0), Err(Error::MissingWin { .. })));
        let cfg = LossConfig { allow_empty_win: true, ..cfg };
        let w = wincon_loss(&batch, &[], &bank, &cfg, 0).unwrap();
        let p = pgcon_loss(&batch, &bank, &cfg, 0).unwrap();
        assert_eq!(w.loss.to_bits(), p.loss.to_bits());
    }

    #[test]
    fn wins_never_decrease_a_term() {
        let bank = MemoryBank::<f64>::random(30, 5, 0.5, 8).unwrap();
        let zp: Vec<Vec<f64>> = (0..4).map(|i| bank.row(i + 4).to_vec()).collect();
        let zd: Vec<Vec<f64>> = (0..4).map(|i| bank.row(i + 12).to_vec()).collect();
        let wins: Vec<Vec<f64>> = (0..4).map(|i| bank.row(i + 20).to_vec()).collect();
        let batch: Vec<_> = (0..4).map(|i| BatchEntry { index: i, z_p: &zp[i], z_d: &zd[i] }).collect();
        let win_refs: Vec<&[f64]> = wins.iter().map(|w| w.as_slice()).collect();
        let cfg = LossConfig { k: 6, mode: LossMode::Wincon, ..Default::default() };
        let p = pgcon_loss(&batch, &bank, &cfg, 11).unwrap();
        let w = wincon_loss(&batch, &win_refs, &bank, &cfg, 11).unwrap();
        assert!(w.term_p >= p.term_p && w.term_d >= p.term_d);
    }

    #[test]
    fn batch_loss_matches_direct_recomputation() {
        let bank = MemoryBank::<f64>::random(25, 4, 0.5, 8).unwrap();
        let zp: Vec<Vec<f64>> = (0..2).map(|i| bank.row(i + 5).to_vec()).collect();
        let zd: Vec<Vec<f64>> = (0..2).map(|i| bank.row(i + 9).to_vec()).collect();
        let batch: Vec<_> = (0..2).map(|i| BatchEntry { index: i, z_p: &zp[i], z_d: &zd[i] }).collect();
        let cfg = LossConfig { k: 5, alpha: 0.3, beta: 0.9, ..Default::default() };
        let out = pgcon_loss(&batch, &bank, &cfg, 77).unwrap();
        let mut want = 0.0;
        for (slot, e) in batch.iter().enumerate() {
            for (term, pos, w) in [(0u64, bank.row(e.index), 0.3), (1, e.z_d, 0.9)] {
                let idx = sample_negatives(25, e.index, 5, term_seed(77, slot, e.index, term)).unwrap();
                let negs: Vec<&[f64]> = idx.iter().map(|&j| bank.row(j)).collect();
                want += w * info_nce(e.z_p, pos, &negs, 0.07).unwrap() / 2.0;
            }
        }
        assert!((out.loss - want).abs() < 1e-12);
    }
}
