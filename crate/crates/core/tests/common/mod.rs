#![allow(dead_code)]

use pgcon::contrastive::{wincon_loss, BatchEntry, LossConfig, LossMode, MemoryBank};
use pgcon::imaging::RgbImage;
use pgcon::nn::{Encoder, EncoderConfig, Frozen, Tape};
use pgcon::rng::rng_from;
use rand::Rng as _;

pub struct GradCase {
    pub encoder: Encoder<f64>,
    pub v_p: Vec<RgbImage>,
    pub tiles: Vec<RgbImage>,
    pub v_win: Vec<RgbImage>,
    pub indices: Vec<usize>,
    pub bank: MemoryBank<f64>,
    pub cfg: LossConfig,
    pub seed: u64,
}

fn noise_image(rng: &mut pgcon::rng::Rng, side: usize) -> RgbImage {
    RgbImage::from_fn(side, side, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

/// A small WINCon problem with non-zero conv biases, so that no ReLU sits
/// exactly on its kink.
pub fn grad_case(seed: u64) -> GradCase {
    let cfg = EncoderConfig { channels: vec![4, 8, 8], embedding_dim: 8, share_trunk: false, ..Default::default() };
    let mut encoder = Encoder::<f64>::new(&cfg, seed).unwrap();
    let mut rng = rng_from(seed ^ 0x5eed);
    for (name, t) in encoder.params.tensors_mut() {
        if name.contains("conv") && name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
    let b = 3;
    let v_p = (0..b).map(|_| noise_image(&mut rng, 12)).collect();
    let tiles = (0..9 * b).map(|_| noise_image(&mut rng, 8)).collect();
    let v_win = (0..b).map(|_| noise_image(&mut rng, 12)).collect();
    let bank = MemoryBank::random(20, 8, 0.5, seed).unwrap();
    GradCase {
        encoder,
        v_p,
        tiles,
        v_win,
        indices: vec![2, 7, 11],
        bank,
        cfg: LossConfig { k: 6, mode: LossMode::Wincon, tau: 0.5, ..Default::default() },
        seed,
    }
}

impl GradCase {
    fn refs(v: &[RgbImage]) -> Vec<&RgbImage> {
        v.iter().collect()
    }

    /// Loss value and, when asked, its analytic parameter gradient.
    pub fn loss(&self, encoder: &Encoder<f64>, with_grad: bool) -> (f64, Option<pgcon::nn::EncoderParams<f64>>) {
        let mut tape = Tape::new();
        let (zp, hp) = encoder.forward_prior(&Self::refs(&self.v_p), &mut tape).unwrap();
        let (zd, hd) = encoder.forward_jigsaw(&Self::refs(&self.tiles), &mut tape).unwrap();
        let (zw, hw) = encoder.forward_prior(&Self::refs(&self.v_win), &mut tape).unwrap();
        let d = encoder.embedding_dim();
        let entries: Vec<BatchEntry<f64>> = self
            .indices
            .iter()
            .enumerate()
            .map(|(r, &i)| BatchEntry { index: i, z_p: &zp.data()[r * d..(r + 1) * d], z_d: &zd.data()[r * d..(r + 1) * d] })
            .collect();
        let wins: Vec<&[f64]> = zw.data().chunks(d).collect();
        let out = wincon_loss(&entries, &wins, &self.bank, &self.cfg, self.seed).unwrap();
        let grad = with_grad.then(|| {
            tape.backward(
                encoder,
                &[(hp, &out.grad_zp), (hd, &out.grad_zd), (hw, &out.grad_zwin)],
                Frozen::default(),
            )
            .unwrap()
        });
        (out.loss, grad)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every parameter. Relative errors use
    /// `max(|a|, |n|, floor)` in the denominator.
    pub fn max_relative_error(&self, h: f64, floor: f64) -> (f64, usize) {
        let (_, grad) = self.loss(&self.encoder, true);
        let grad = grad.unwrap();
        let analytic: Vec<f64> = grad.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let mut worst = 0.0f64;
        let mut probe = self.encoder.clone();
        let mut k = 0;
        let count = analytic.len();
        for ti in 0..probe.params.tensors().len() {
            let len = probe.params.tensors()[ti].1.len();
            for j in 0..len {
                let original = probe.params.tensors()[ti].1.data()[j];
                set(&mut probe, ti, j, original + h);
                let (plus, _) = self.loss(&probe, false);
                set(&mut probe, ti, j, original - h);
                let (minus, _) = self.loss(&probe, false);
                set(&mut probe, ti, j, original);
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
                k += 1;
            }
        }
        (worst, count)
    }
}

fn set(enc: &mut Encoder<f64>, tensor: usize, j: usize, v: f64) {
    enc.params.tensors_mut()[tensor].1.data_mut()[j] = v;
}
