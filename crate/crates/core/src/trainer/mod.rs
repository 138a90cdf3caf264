//! The pretraining loop: seeded epoch shuffles, view construction, the
//! PGCon/WINCon objective, SGD with cosine annealing, memory-bank updates,
//! checkpoints and embedding snapshots.

mod snapshot;

pub use snapshot::{read_snapshots_csv, write_snapshots_csv, Role, Snapshot, SnapshotRow, SNAPSHOT_HEADER};

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{mode_loss, BatchEntry, LossConfig, LossMode, MemoryBank};
use crate::error::{Error, Result};
use crate::imaging::{CropBox, RgbImage};
use crate::nn::checkpoint::{self, encoder_from_tensors, encoder_to_tensors, find, params_from_tensors, params_to_tensors, NamedTensor};
use crate::nn::{DenseArray, Encoder, EncoderConfig, Frozen, Sgd, Tape};
use crate::rng::{derive, mix, stream_rng, Stream};
use crate::scalar::Scalar;
use crate::views::{build_view_bundle_with_box, locate_prior, PriorMode, ViewBundle, ViewConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the run; the cosine schedule spans the capped length.
    pub max_steps: Option<u64>,
    pub lr_max: f64,
    pub lr_min: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// Snapshot period in steps; 0 keeps only the first and last.
    pub snapshot_every: u64,
    /// Checkpoint period in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Instances in the fixed snapshot probe subset.
    pub probe_size: usize,
    pub seed: u64,
    /// View-construction threads; results do not depend on it.
    pub workers: usize,
    /// Fill the bank with step-0 encoder embeddings of the eval views
    /// instead of leaving it at its random initialization.
    pub warm_bank: bool,
    /// EMA momentum of the running head centres of a batch-centred encoder.
    pub center_momentum: f64,
    pub views: ViewConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 20,
            max_steps: None,
            lr_max: 0.012,
            lr_min: 1.2e-5,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            snapshot_every: 0,
            checkpoint_every: 0,
            probe_size: 64,
            seed: 0,
            workers: 1,
            warm_bank: false,
            center_momentum: 0.9,
            views: ViewConfig::default(),
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks ranges; `n` is the dataset size.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(self.lr_min > 0.0 && self.lr_max > self.lr_min && self.lr_max.is_finite()) {
            return Err(Error::config("train.lr_max", "need lr_max > lr_min > 0"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::config("train.sgd_momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return Err(Error::config("train.center_momentum", "must lie in [0, 1)"));
        }
        if self.workers == 0 {
            return Err(Error::config("train.workers", "must be at least 1"));
        }
        if self.loss.mode == LossMode::Wincon && !self.views.enable_win && !self.loss.allow_empty_win {
            return Err(Error::config("views.enable_win", "WINCon needs WIN views (or loss.allow_empty_win)"));
        }
        self.views.validate()?;
        self.encoder.validate()?;
        self.loss.validate(Some(n))?;
        if n == 0 {
            return Err(Error::Empty("training dataset"));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        let full = self.epochs as u64 * self.batches_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    fn builds_win(&self) -> bool {
        self.loss.mode == LossMode::Wincon && self.views.enable_win
    }
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange { step, total: total_steps });
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub term_p: f64,
    pub term_d: f64,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
    pub mean_win_sim: Option<f64>,
}

/// Position in the run. Together with the config this is the whole RNG
/// state, since every draw is derived from the root seed and a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub step: u64,
    pub epoch: u64,
    /// Offset of the next batch within the epoch order.
    pub cursor: u64,
}

pub struct Trainer<T: Scalar> {
    cfg: TrainConfig,
    n: usize,
    pub encoder: Encoder<T>,
    pub opt: Sgd<T>,
    pub bank: MemoryBank<T>,
    progress: Progress,
    total_steps: u64,
    order: Option<(u64, Vec<usize>)>,
    boxes: Vec<Option<CropBox>>,
    pool: Option<rayon::ThreadPool>,
}

const COUNTERS: &str = "state.counters";
const BANK: &str = "bank.rows";
const OPT_PREFIX: &str = "opt.";

impl<T: Scalar> Trainer<T> {
    /// Fresh state for a dataset of `n` instances.
    pub fn new(cfg: TrainConfig, n: usize) -> Result<Self> {
        cfg.validate(n)?;
        let encoder = Encoder::new(&cfg.encoder, derive(cfg.seed, Stream::Init, &[]))?;
        let bank = MemoryBank::random(
            n,
            cfg.encoder.embedding_dim,
            T::from_f64_lossy(cfg.loss.bank_momentum),
            derive(cfg.seed, Stream::Bank, &[]),
        )?;
        Self::assemble(cfg, n, encoder, None, bank, Progress { step: 0, epoch: 0, cursor: 0 })
    }

    fn assemble(
        cfg: TrainConfig,
        n: usize,
        encoder: Encoder<T>,
        opt: Option<Sgd<T>>,
        bank: MemoryBank<T>,
        progress: Progress,
    ) -> Result<Self> {
        let opt = opt.unwrap_or_else(|| {
            Sgd::new(&encoder.params, T::from_f64_lossy(cfg.sgd_momentum), T::from_f64_lossy(cfg.weight_decay))
        });
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::config("train.workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            total_steps: cfg.total_steps(n),
            cfg,
            n,
            encoder,
            opt,
            bank,
            progress,
            order: None,
            boxes: vec![None; n],
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.progress.step >= self.total_steps
    }

    /// Instance order of `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, Stream::Shuffle, &[epoch]));
        order
    }

    fn check_images(&self, images: &[RgbImage]) -> Result<()> {
        if images.len() != self.n {
            return Err(Error::Shape(format!("trainer sized for {} images, got {}", self.n, images.len())));
        }
        Ok(())
    }

    /// Fills the redness-box cache for `indices`.
    fn ensure_boxes(&mut self, images: &[RgbImage], indices: &[usize]) -> Result<()> {
        if self.cfg.views.prior_mode != PriorMode::Redness {
            return Ok(());
        }
        let missing: Vec<usize> = indices.iter().copied().filter(|&i| self.boxes[i].is_none()).collect();
        let views = &self.cfg.views;
        let found = self.par_map(&missing, |&i| locate_prior(&images[i], views, 0))?;
        for (i, b) in missing.into_iter().zip(found) {
            self.boxes[i] = Some(b);
        }
        Ok(())
    }

    fn par_map<I: Sync, O: Send>(&self, items: &[I], f: impl Fn(&I) -> Result<O> + Sync + Send) -> Result<Vec<O>> {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    fn prior_box(&self, img: &RgbImage, index: usize, seed: u64) -> Result<CropBox> {
        match self.boxes[index] {
            Some(b) => Ok(b),
            None => locate_prior(img, &self.cfg.views, mix(seed, &[0])),
        }
    }

    /// View bundles for `indices`, each a pure function of its seed.
    fn bundles(&self, images: &[RgbImage], indices: &[usize], seeds: &[u64], with_win: bool) -> Result<Vec<ViewBundle>> {
        let views = ViewConfig { enable_win: with_win, ..self.cfg.views.clone() };
        let jobs: Vec<(usize, u64)> = indices.iter().copied().zip(seeds.iter().copied()).collect();
        self.par_map(&jobs, |&(i, seed)| {
            let bx = self.prior_box(&images[i], i, seed)?;
            build_view_bundle_with_box(&images[i], bx, &views, i, seed)
        })
    }

    /// One optimisation step; `None` once the schedule is exhausted.
    pub fn step(&mut self, images: &[RgbImage]) -> Result<Option<StepMetrics>> {
        self.check_images(images)?;
        if self.is_done() {
            return Ok(None);
        }
        let Progress { step, epoch, cursor } = self.progress;
        if step == 0 && self.cfg.warm_bank {
            let rows = crate::eval::embed_images(&self.encoder, images, &self.cfg.views)?;
            self.bank = MemoryBank::from_rows(rows, self.bank.momentum())?;
        }
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.order = Some((epoch, self.epoch_order(epoch)));
        }
        let order = &self.order.as_ref().expect("set above").1;
        let end = (cursor as usize + self.cfg.batch_size).min(self.n);
        let batch: Vec<usize> = order[cursor as usize..end].to_vec();
        self.ensure_boxes(images, &batch)?;

        let seeds: Vec<u64> = batch.iter().map(|&i| derive(self.cfg.seed, Stream::Views, &[epoch, i as u64])).collect();
        let with_win = self.cfg.builds_win();
        let bundles = self.bundles(images, &batch, &seeds, with_win)?;

        let mut tape = Tape::new();
        let v_p: Vec<&RgbImage> = bundles.iter().map(|b| &b.v_p).collect();
        let (z_p, h_p) = self.encoder.forward_prior(&v_p, &mut tape)?;
        let tiles: Vec<&RgbImage> = bundles.iter().flat_map(|b| b.v_d_tiles.iter()).collect();
        let (z_d, h_d) = self.encoder.forward_jigsaw(&tiles, &mut tape)?;
        let win = if with_win {
            let v_win: Vec<&RgbImage> = bundles.iter().map(|b| b.v_win.as_ref().expect("built with WIN")).collect();
            Some(self.encoder.forward_prior(&v_win, &mut tape)?)
        } else {
            None
        };

        let d = self.encoder.embedding_dim();
        let entries: Vec<BatchEntry<T>> = batch
            .iter()
            .enumerate()
            .map(|(r, &i)| BatchEntry {
                index: i,
                z_p: &z_p.data()[r * d..(r + 1) * d],
                z_d: &z_d.data()[r * d..(r + 1) * d],
            })
            .collect();
        let wins: Vec<&[T]> = match &win {
            Some((z, _)) => z.data().chunks(d).collect(),
            None => Vec::new(),
        };
        let out = mode_loss(&entries, &wins, &self.bank, &self.cfg.loss, derive(self.cfg.seed, Stream::Negatives, &[step]))?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss became {} at step {step}", out.loss)));
        }

        let mut grads_in = vec![(h_p, out.grad_zp.as_slice()), (h_d, out.grad_zd.as_slice())];
        if let Some((_, h_w)) = &win {
            if !self.cfg.loss.detach_win {
                grads_in.push((*h_w, out.grad_zwin.as_slice()));
            }
        }
        let grads = tape.backward(&self.encoder, &grads_in, Frozen::default())?;
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("non-finite gradient at step {step}")));
        }
        let lr = cosine_lr(step, self.total_steps, self.cfg.lr_max, self.cfg.lr_min)?;
        self.opt.step(&mut self.encoder.params, &grads, T::from_f64_lossy(lr));

        if self.encoder.batch_center {
            self.encoder.update_centers(&tape, h_p, h_d, T::from_f64_lossy(self.cfg.center_momentum))?;
        }
        let updates: Vec<(usize, &[T])> = entries.iter().map(|e| (e.index, e.z_p)).collect();
        self.bank.update(&updates)?;

        let next = end as u64;
        self.progress = if next >= self.n as u64 {
            Progress { step: step + 1, epoch: epoch + 1, cursor: 0 }
        } else {
            Progress { step: step + 1, epoch, cursor: next }
        };
        Ok(Some(StepMetrics {
            step,
            epoch,
            lr,
            loss: out.loss.as_f64(),
            term_p: out.term_p.as_f64(),
            term_d: out.term_d.as_f64(),
            mean_pos_sim: out.mean_pos_sim.as_f64(),
            mean_neg_sim: out.mean_neg_sim.as_f64(),
            mean_win_sim: out.mean_win_sim.map(|v| v.as_f64()),
        }))
    }

    /// Runs to the end of the schedule, calling `on_step` after each step.
    pub fn fit(
        &mut self,
        images: &[RgbImage],
        mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>,
    ) -> Result<()> {
        while let Some(m) = self.step(images)? {
            on_step(self, &m)?;
        }
        Ok(())
    }

    /// The fixed probe subset used by snapshots.
    pub fn probe_indices(&self) -> Vec<usize> {
        let k = self.cfg.probe_size.min(self.n);
        let mut idx = rand::seq::index::sample(&mut stream_rng(self.cfg.seed, Stream::Probe, &[]), self.n, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// `z_p`, `z_d`, `z_win` and bank rows of the probe subset. Probe views
    /// use fixed seeds, so successive snapshots differ only through training.
    pub fn snapshot(&mut self, images: &[RgbImage], labels: &[Option<usize>]) -> Result<Snapshot> {
        self.check_images(images)?;
        let probe = self.probe_indices();
        self.ensure_boxes(images, &probe)?;
        let seeds: Vec<u64> = probe.iter().map(|&i| derive(self.cfg.seed, Stream::Probe, &[i as u64])).collect();
        let bundles = self.bundles(images, &probe, &seeds, true)?;
        let v_p: Vec<&RgbImage> = bundles.iter().map(|b| &b.v_p).collect();
        let v_win: Vec<&RgbImage> = bundles.iter().map(|b| b.v_win.as_ref().expect("built with WIN")).collect();
        let tiles: Vec<&RgbImage> = bundles.iter().flat_map(|b| b.v_d_tiles.iter()).collect();
        let z_p = self.encoder.embed_prior(&v_p)?;
        let z_d = self.encoder.embed_jigsaw(&tiles)?;
        let z_w = self.encoder.embed_prior(&v_win)?;
        let d = self.encoder.embedding_dim();
        let mut rows = Vec::with_capacity(4 * probe.len());
        for (role, source) in [(Role::Zp, &z_p), (Role::Zd, &z_d), (Role::Win, &z_w)] {
            for (r, &i) in probe.iter().enumerate() {
                rows.push(SnapshotRow::new(i, labels.get(i).copied().flatten(), role, &source.data()[r * d..(r + 1) * d]));
            }
        }
        for &i in &probe {
            rows.push(SnapshotRow::new(i, labels.get(i).copied().flatten(), Role::Bank, self.bank.row(i)));
        }
        Ok(Snapshot { step: self.progress.step, rows })
    }

    /// Parameters, optimizer buffers, bank and counters.
    pub fn checkpoint_tensors(&self) -> Vec<NamedTensor> {
        let mut out = encoder_to_tensors(&self.encoder);
        out.extend(params_to_tensors(&self.opt.velocity, OPT_PREFIX));
        out.push(NamedTensor::from_array(BANK, self.bank.rows()));
        let Progress { step, epoch, cursor } = self.progress;
        out.push(NamedTensor::from_u64(COUNTERS, vec![self.cfg.seed, step, epoch, cursor, self.total_steps, self.n as u64]));
        out
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_tensors(path, &self.checkpoint_tensors())
    }

    /// Rebuilds a trainer from checkpoint tensors. The config must describe
    /// the same run (seed, dataset size, architecture).
    pub fn from_tensors(cfg: TrainConfig, n: usize, tensors: &[NamedTensor]) -> Result<Self> {
        cfg.validate(n)?;
        let counters = find(tensors, COUNTERS)?.as_u64()?;
        let &[seed, step, epoch, cursor, total, stored_n] = counters else {
            return Err(Error::Checkpoint(format!("`{COUNTERS}` has {} entries, expected 6", counters.len())));
        };
        if seed != cfg.seed || stored_n != n as u64 {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for seed {seed} and {stored_n} images, run has seed {} and {n}",
                cfg.seed
            )));
        }
        if total != cfg.total_steps(n) {
            return Err(Error::Checkpoint(format!("checkpoint schedule spans {total} steps, config gives {}", cfg.total_steps(n))));
        }
        let encoder = encoder_from_tensors::<T>(tensors, &cfg.encoder)?;
        let velocity = params_from_tensors::<T>(tensors, OPT_PREFIX, &cfg.encoder)?;
        let rows: DenseArray<T> = find(tensors, BANK)?.to_array()?;
        if rows.shape() != [n, cfg.encoder.embedding_dim] {
            return Err(Error::Checkpoint(format!("bank has shape {:?}", rows.shape())));
        }
        let bank = MemoryBank::from_rows(rows, T::from_f64_lossy(cfg.loss.bank_momentum))?;
        let opt = Sgd {
            momentum: T::from_f64_lossy(cfg.sgd_momentum),
            weight_decay: T::from_f64_lossy(cfg.weight_decay),
            velocity,
        };
        Self::assemble(cfg, n, encoder, Some(opt), bank, Progress { step, epoch, cursor })
    }

    pub fn load_checkpoint(cfg: TrainConfig, n: usize, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(cfg, n, &checkpoint::load_tensors(path)?)
    }
}
