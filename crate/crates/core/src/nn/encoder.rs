//! The two encoders: `f` (prior and WIN views, parameters θ) and `h`
//! (jigsaw tiles, parameters φ), each a small strided-conv trunk with a
//! projection to the embedding dimension and a final L2 normalisation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use super::layers::{
    col2im, conv_backward, conv_forward, conv_out_len, gap_backward, layer_norm_backward, layer_norm_forward, relu_backward, relu_inplace, NormCache, gap_forward, im2col, l2norm_backward,
    l2norm_forward, linear_backward, linear_forward, KERNEL,
};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::rng::{stream_rng, Rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Output channels of each 3x3 stride-2 convolution.
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
    /// Let `h` reuse the convolutional trunk of `f`.
    pub share_trunk: bool,
    /// Subtract the batch mean from each head output before normalisation
    /// in training passes; inference uses the running centres instead.
    pub batch_center: bool,
    /// Per-sample normalisation over `C x H x W` with a per-channel affine
    /// after each convolution.
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            embedding_dim: 128,
            share_trunk: false,
            batch_center: true,
            layer_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("encoder.channels", "need at least one non-zero layer"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("encoder.embedding_dim", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `[out, in, 3, 3]`
    pub weight: DenseArray<T>,
    /// `[out]`
    pub bias: DenseArray<T>,
    pub norm: Option<Affine<T>>,
}

/// Per-channel scale and shift, `[out]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub gamma: DenseArray<T>,
    pub beta: DenseArray<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: DenseArray<T>,
    /// `[out]`
    pub bias: DenseArray<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trunk<T> {
    pub convs: Vec<Conv<T>>,
}

impl<T: Scalar> Trunk<T> {
    fn out_channels(&self) -> usize {
        self.convs.last().map_or(3, |c| c.weight.shape()[0])
    }
}

/// Which encoder a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Prior,
    Jigsaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub embedding_dim: usize,
    pub prior_trunk: Trunk<T>,
    pub prior_head: Linear<T>,
    /// `None` when the jigsaw path shares `prior_trunk`.
    pub jigsaw_trunk: Option<Trunk<T>>,
    pub tile_head: Linear<T>,
    /// `[d, 9d]` over the concatenated per-tile embeddings.
    pub aggregate: Linear<T>,
}

fn uniform_array<T: Scalar>(shape: &[usize], bound: f64, rng: &mut Rng) -> DenseArray<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    DenseArray::from_vec(shape, data).expect("sized")
}

fn init_trunk<T: Scalar>(channels: &[usize], layer_norm: bool, rng: &mut Rng) -> Trunk<T> {
    let mut c_in = 3;
    let convs = channels
        .iter()
        .map(|&c_out| {
            let fan_in = (c_in * KERNEL * KERNEL) as f64;
            let conv = Conv {
                weight: uniform_array(&[c_out, c_in, KERNEL, KERNEL], (6.0 / fan_in).sqrt(), rng),
                bias: DenseArray::zeros(&[c_out]),
                norm: layer_norm.then(|| Affine {
                    gamma: DenseArray::from_vec(&[c_out], vec![T::one(); c_out]).expect("sized"),
                    beta: DenseArray::zeros(&[c_out]),
                }),
            };
            c_in = c_out;
            conv
        })
        .collect();
    Trunk { convs }
}

fn init_linear<T: Scalar>(d_in: usize, d_out: usize, rng: &mut Rng) -> Linear<T> {
    let fan_in = d_in as f64;
    Linear {
        weight: uniform_array(&[d_out, d_in], (6.0 / fan_in).sqrt(), rng),
        bias: uniform_array(&[d_out], 1.0 / fan_in.sqrt(), rng),
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// Seeded He-style uniform initialisation; conv biases start at zero.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embedding_dim;
        let c_last = *cfg.channels.last().unwrap();
        let mut rng = stream_rng(seed, Stream::Init, &[0]);
        let prior_trunk = init_trunk(&cfg.channels, cfg.layer_norm, &mut rng);
        let prior_head = init_linear(c_last, d, &mut rng);
        let mut rng = stream_rng(seed, Stream::Init, &[1]);
        let jigsaw_trunk = (!cfg.share_trunk).then(|| init_trunk(&cfg.channels, cfg.layer_norm, &mut rng));
        let tile_head = init_linear(c_last, d, &mut rng);
        let aggregate = init_linear(9 * d, d, &mut rng);
        Ok(Self {
            embedding_dim: d,
            prior_trunk,
            prior_head,
            jigsaw_trunk,
            tile_head,
            aggregate,
        })
    }

    /// Same structure, all zeros. Used as a gradient or momentum buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn jigsaw_trunk(&self) -> &Trunk<T> {
        self.jigsaw_trunk.as_ref().unwrap_or(&self.prior_trunk)
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &DenseArray<T>)> {
        let mut out: Vec<(String, &DenseArray<T>)> = Vec::new();
        for (i, c) in self.prior_trunk.convs.iter().enumerate() {
            out.push((format!("f.conv{i}.weight"), &c.weight));
            out.push((format!("f.conv{i}.bias"), &c.bias));
            if let Some(a) = &c.norm {
                out.push((format!("f.conv{i}.gamma"), &a.gamma));
                out.push((format!("f.conv{i}.beta"), &a.beta));
            }
        }
        out.push(("f.head.weight".into(), &self.prior_head.weight));
        out.push(("f.head.bias".into(), &self.prior_head.bias));
        if let Some(t) = &self.jigsaw_trunk {
            for (i, c) in t.convs.iter().enumerate() {
                out.push((format!("h.conv{i}.weight"), &c.weight));
                out.push((format!("h.conv{i}.bias"), &c.bias));
                if let Some(a) = &c.norm {
                    out.push((format!("h.conv{i}.gamma"), &a.gamma));
                    out.push((format!("h.conv{i}.beta"), &a.beta));
                }
            }
        }
        out.push(("h.tile_head.weight".into(), &self.tile_head.weight));
        out.push(("h.tile_head.bias".into(), &self.tile_head.bias));
        out.push(("h.aggregate.weight".into(), &self.aggregate.weight));
        out.push(("h.aggregate.bias".into(), &self.aggregate.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseArray<T>)> {
        let mut out: Vec<(String, &mut DenseArray<T>)> = Vec::new();
        for (i, c) in self.prior_trunk.convs.iter_mut().enumerate() {
            out.push((format!("f.conv{i}.weight"), &mut c.weight));
            out.push((format!("f.conv{i}.bias"), &mut c.bias));
            if let Some(a) = &mut c.norm {
                out.push((format!("f.conv{i}.gamma"), &mut a.gamma));
                out.push((format!("f.conv{i}.beta"), &mut a.beta));
            }
        }
        out.push(("f.head.weight".into(), &mut self.prior_head.weight));
        out.push(("f.head.bias".into(), &mut self.prior_head.bias));
        if let Some(t) = &mut self.jigsaw_trunk {
            for (i, c) in t.convs.iter_mut().enumerate() {
                out.push((format!("h.conv{i}.weight"), &mut c.weight));
                out.push((format!("h.conv{i}.bias"), &mut c.bias));
                if let Some(a) = &mut c.norm {
                    out.push((format!("h.conv{i}.gamma"), &mut a.gamma));
                    out.push((format!("h.conv{i}.beta"), &mut a.beta));
                }
            }
        }
        out.push(("h.tile_head.weight".into(), &mut self.tile_head.weight));
        out.push(("h.tile_head.bias".into(), &mut self.tile_head.bias));
        out.push(("h.aggregate.weight".into(), &mut self.aggregate.weight));
        out.push(("h.aggregate.bias".into(), &mut self.aggregate.bias));
        out
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("f.") {
            ParamGroup::Prior
        } else {
            ParamGroup::Jigsaw
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let trunk = |t: &Trunk<T>| Trunk {
            convs: t
                .convs
                .iter()
                .map(|c| Conv {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                    norm: c.norm.as_ref().map(|a| Affine {
                        gamma: a.gamma.cast(),
                        beta: a.beta.cast(),
                    }),
                })
                .collect(),
        };
        let lin = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        EncoderParams {
            embedding_dim: self.embedding_dim,
            prior_trunk: trunk(&self.prior_trunk),
            prior_head: lin(&self.prior_head),
            jigsaw_trunk: self.jigsaw_trunk.as_ref().map(trunk),
            tile_head: lin(&self.tile_head),
            aggregate: lin(&self.aggregate),
        }
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    /// Normalises `v`; fails on a zero or non-finite vector.
    pub fn new_normalized(mut v: Vec<T>) -> Result<Self> {
        if !crate::scalar::normalize_in_place(&mut v) {
            return Err(Error::NonFinite("cannot normalise a zero or non-finite vector".into()));
        }
        Ok(Self(v))
    }

    /// Wraps a vector that is already unit length.
    pub fn from_unit(v: Vec<T>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

/// Converts same-size images to the `[3, N, H, W]` layout.
fn images_to_tensor<T: Scalar>(imgs: &[&RgbImage]) -> Result<(Vec<T>, usize, usize)> {
    let first = imgs.first().ok_or(Error::Empty("image batch"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = imgs.iter().find(|i| i.height() != h || i.width() != w) {
        return Err(Error::Shape(format!(
            "batch mixes {h}x{w} and {}x{} images",
            bad.height(),
            bad.width()
        )));
    }
    let n = imgs.len();
    let hw = h * w;
    let mut out = vec![T::zero(); 3 * n * hw];
    for (ni, img) in imgs.iter().enumerate() {
        for (p, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[(c * n + ni) * hw + p] = T::from_f32(px[c] - 0.5).unwrap();
            }
        }
    }
    Ok((out, h, w))
}

struct ConvCache<T> {
    cols: Vec<T>,
    out: Vec<T>,
    norm: Option<NormCache<T>>,
    c_in: usize,
    h_in: usize,
    w_in: usize,
}

struct TrunkOutput<T> {
    caches: Vec<ConvCache<T>>,
    features: Vec<T>,
    channels: usize,
    hw: usize,
}

fn trunk_forward<T: Scalar>(trunk: &Trunk<T>, mut x: Vec<T>, n: usize, mut h: usize, mut w: usize, keep: bool) -> TrunkOutput<T> {
    let mut c = 3;
    let mut caches = Vec::new();
    for conv in &trunk.convs {
        let o = conv.weight.shape()[0];
        let cols = im2col(&x, c, n, h, w);
        let (ho, wo) = (conv_out_len(h), conv_out_len(w));
        let mut out = conv_forward(conv.weight.data(), conv.bias.data(), &cols, o, c * KERNEL * KERNEL, n * ho * wo);
        let norm = conv.norm.as_ref().map(|a| layer_norm_forward(&mut out, a.gamma.data(), a.beta.data(), n));
        relu_inplace(&mut out);
        if keep {
            caches.push(ConvCache {
                cols,
                norm,
                out: out.clone(),
                c_in: c,
                h_in: h,
                w_in: w,
            });
        }
        x = out;
        c = o;
        h = ho;
        w = wo;
    }
    let features = gap_forward(&x, c, n, h * w);
    TrunkOutput {
        caches,
        features,
        channels: c,
        hw: h * w,
    }
}

fn trunk_backward<T: Scalar>(
    trunk: &Trunk<T>,
    caches: &[ConvCache<T>],
    d_features: &[T],
    n: usize,
    channels: usize,
    hw: usize,
    grads: Option<&mut Trunk<T>>,
) {
    let mut d_out = gap_backward(d_features, channels, n, hw);
    let mut grads = grads;
    for (li, (conv, cache)) in trunk.convs.iter().zip(caches).enumerate().rev() {
        let o = conv.weight.shape()[0];
        let k = cache.c_in * KERNEL * KERNEL;
        let m = n * conv_out_len(cache.h_in) * conv_out_len(cache.w_in);
        let gw = grads.as_deref_mut().map(|g| {
            let gc = &mut g.convs[li];
            let gn = gc.norm.as_mut().map(|a| (a.gamma.data_mut(), a.beta.data_mut()));
            (gc.weight.data_mut(), gc.bias.data_mut(), gn)
        });
        relu_backward(&cache.out, &mut d_out);
        let (gw, gn) = match gw {
            Some((w, b, a)) => (Some((w, b)), a),
            None => (None, None),
        };
        if let (Some(a), Some(nc)) = (&conv.norm, &cache.norm) {
            d_out = layer_norm_backward(nc, a.gamma.data(), &d_out, n, gn);
        }
        let d_cols = conv_backward(conv.weight.data(), &cache.cols, &d_out, o, k, m, gw, li > 0);
        if let Some(d_cols) = d_cols {
            d_out = col2im(&d_cols, cache.c_in, n, cache.h_in, cache.w_in);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PathKind {
    Prior,
    Jigsaw,
}

struct Record<T> {
    kind: PathKind,
    /// Number of output embeddings.
    n: usize,
    trunk: TrunkOutput<T>,
    /// Head output before aggregation (jigsaw) or before normalisation (prior).
    head_out: Vec<T>,
    /// Batch mean of the uncentred pre-normalisation output.
    y_mean: Vec<T>,
    batch_centered: bool,
    z: Vec<T>,
    norms: Vec<T>,
}

/// Reference to one recorded forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathHandle(usize);

/// Activations recorded during forward passes, consumed by [`Tape::backward`].
pub struct Tape<T> {
    records: Vec<Record<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self { records: Vec::new() }
    }
}

/// Parameter groups excluded from gradient accumulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Frozen {
    pub prior: bool,
    pub jigsaw: bool,
}

/// Running head-output means, subtracted before normalisation in inference
/// passes of a batch-centred encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCenters<T> {
    pub prior: Vec<T>,
    pub jigsaw: Vec<T>,
}

impl<T: Scalar> HeadCenters<T> {
    pub fn zeros(d: usize) -> Self {
        Self { prior: vec![T::zero(); d], jigsaw: vec![T::zero(); d] }
    }
}

/// `f_θ` and `h_φ` together.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub params: EncoderParams<T>,
    pub centers: HeadCenters<T>,
    pub batch_center: bool,
}

fn row_mean<T: Scalar>(y: &[T], d: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); d];
    for row in y.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += *v);
    }
    let inv = T::one() / T::from_usize(y.len() / d).unwrap();
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

fn subtract_rows<T: Scalar>(y: &mut [T], c: &[T]) {
    for row in y.chunks_exact_mut(c.len()) {
        row.iter_mut().zip(c).for_each(|(v, m)| *v -= *m);
    }
}

impl<T: Scalar> Encoder<T> {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut enc = Self::from_params(EncoderParams::init(cfg, seed)?);
        enc.batch_center = cfg.batch_center;
        Ok(enc)
    }

    /// Zero centres, no batch centring.
    pub fn from_params(params: EncoderParams<T>) -> Self {
        let centers = HeadCenters::zeros(params.embedding_dim);
        Self { params, centers, batch_center: false }
    }

    /// Centres `y` in place; returns its uncentred batch mean and whether
    /// the batch mean (rather than `running`) was subtracted.
    fn center(&self, y: &mut [T], running: &[T], train: bool) -> (Vec<T>, bool) {
        let d = running.len();
        let mean = row_mean(y, d);
        if !self.batch_center {
            return (mean, false);
        }
        let batch = train && y.len() > d;
        subtract_rows(y, if batch { &mean } else { running });
        (mean, batch)
    }

    /// Moves each head centre towards the batch mean recorded for `prior`
    /// and `jigsaw`: `c ← m·c + (1 − m)·mean`.
    pub fn update_centers(&mut self, tape: &Tape<T>, prior: PathHandle, jigsaw: PathHandle, momentum: T) -> Result<()> {
        for (handle, center) in [(prior, &mut self.centers.prior), (jigsaw, &mut self.centers.jigsaw)] {
            let r = tape.records.get(handle.0).ok_or(Error::NoForward)?;
            for (c, m) in center.iter_mut().zip(&r.y_mean) {
                *c = momentum * *c + (T::one() - momentum) * *m;
            }
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.params.embedding_dim
    }

    fn prior_path(&self, imgs: &[&RgbImage], keep: bool) -> Result<Record<T>> {
        let (x, h, w) = images_to_tensor::<T>(imgs)?;
        let n = imgs.len();
        let p = &self.params;
        let trunk = trunk_forward(&p.prior_trunk, x, n, h, w, keep);
        let d = p.embedding_dim;
        let mut y = linear_forward(&trunk.features, p.prior_head.weight.data(), p.prior_head.bias.data(), n, trunk.channels, d);
        let (y_mean, batch_centered) = self.center(&mut y, &self.centers.prior, keep);
        let (z, norms) = l2norm_forward(&y, d);
        Ok(Record {
            kind: PathKind::Prior,
            n,
            trunk,
            head_out: Vec::new(),
            y_mean,
            batch_centered,
            z,
            norms,
        })
    }

    fn jigsaw_path(&self, tiles: &[&RgbImage], keep: bool) -> Result<Record<T>> {
        if tiles.is_empty() || tiles.len() % 9 != 0 {
            return Err(Error::TileCount(tiles.len()));
        }
        let (x, h, w) = images_to_tensor::<T>(tiles)?;
        let nt = tiles.len();
        let n = nt / 9;
        let p = &self.params;
        let d = p.embedding_dim;
        let trunk = trunk_forward(p.jigsaw_trunk(), x, nt, h, w, keep);
        let e = linear_forward(&trunk.features, p.tile_head.weight.data(), p.tile_head.bias.data(), nt, trunk.channels, d);
        let mut y = linear_forward(&e, p.aggregate.weight.data(), p.aggregate.bias.data(), n, 9 * d, d);
        let (y_mean, batch_centered) = self.center(&mut y, &self.centers.jigsaw, keep);
        let (z, norms) = l2norm_forward(&y, d);
        Ok(Record {
            kind: PathKind::Jigsaw,
            n,
            trunk,
            head_out: e,
            y_mean,
            batch_centered,
            z,
            norms,
        })
    }

    fn to_embeddings(&self, r: &Record<T>) -> DenseArray<T> {
        DenseArray::from_vec(&[r.n, self.params.embedding_dim], r.z.clone()).expect("finite encoder output")
    }

    /// `f_θ` on a batch of same-size views; rows of the result are unit norm.
    pub fn embed_prior(&self, imgs: &[&RgbImage]) -> Result<DenseArray<T>> {
        let r = self.prior_path(imgs, false)?;
        check_finite(&r.z)?;
        Ok(self.to_embeddings(&r))
    }

    /// `h_φ` on `9 * N` tiles, instance-major.
    pub fn embed_jigsaw(&self, tiles: &[&RgbImage]) -> Result<DenseArray<T>> {
        let r = self.jigsaw_path(tiles, false)?;
        check_finite(&r.z)?;
        Ok(self.to_embeddings(&r))
    }

    pub fn encode_prior(&self, v_p: &RgbImage) -> Result<Embedding<T>> {
        Ok(Embedding(self.embed_prior(&[v_p])?.data().to_vec()))
    }

    /// WIN views go through the same `f_θ` as prior views.
    pub fn encode_win(&self, v_win: &RgbImage) -> Result<Embedding<T>> {
        self.encode_prior(v_win)
    }

    pub fn encode_jigsaw(&self, tiles: &[RgbImage]) -> Result<Embedding<T>> {
        if tiles.len() != 9 {
            return Err(Error::TileCount(tiles.len()));
        }
        let refs: Vec<&RgbImage> = tiles.iter().collect();
        Ok(Embedding(self.embed_jigsaw(&refs)?.data().to_vec()))
    }

    /// Forward through `f_θ`, recording activations on `tape`.
    pub fn forward_prior(&self, imgs: &[&RgbImage], tape: &mut Tape<T>) -> Result<(DenseArray<T>, PathHandle)> {
        let r = self.prior_path(imgs, true)?;
        check_finite(&r.z)?;
        let z = self.to_embeddings(&r);
        tape.records.push(r);
        Ok((z, PathHandle(tape.records.len() - 1)))
    }

    /// Forward through `h_φ`, recording activations on `tape`.
    pub fn forward_jigsaw(&self, tiles: &[&RgbImage], tape: &mut Tape<T>) -> Result<(DenseArray<T>, PathHandle)> {
        let r = self.jigsaw_path(tiles, true)?;
        check_finite(&r.z)?;
        let z = self.to_embeddings(&r);
        tape.records.push(r);
        Ok((z, PathHandle(tape.records.len() - 1)))
    }
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("encoder produced NaN or Inf".into()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Reverse-mode pass. `seeds` pairs each recorded path with the gradient
    /// of the loss w.r.t. its (normalised) output rows. Returns gradients for
    /// every parameter; frozen groups stay zero.
    pub fn backward(&self, encoder: &Encoder<T>, seeds: &[(PathHandle, &[T])], frozen: Frozen) -> Result<EncoderParams<T>> {
        if self.records.is_empty() {
            return Err(Error::NoForward);
        }
        let p = &encoder.params;
        let d = p.embedding_dim;
        let mut grads = p.zeros_like();
        for &(PathHandle(idx), dz) in seeds {
            let r = self.records.get(idx).ok_or(Error::NoForward)?;
            if dz.len() != r.n * d {
                return Err(Error::Shape(format!("gradient has {} values, path has {}x{d}", dz.len(), r.n)));
            }
            let mut dy = l2norm_backward(&r.z, &r.norms, dz, d);
            if r.batch_centered {
                let g = row_mean(&dy, d);
                subtract_rows(&mut dy, &g);
            }
            let c = r.trunk.channels;
            match r.kind {
                PathKind::Prior => {
                    if frozen.prior {
                        continue;
                    }
                    let g = &mut grads.prior_head;
                    let d_feat = linear_backward(
                        &r.trunk.features,
                        p.prior_head.weight.data(),
                        &dy,
                        r.n,
                        c,
                        d,
                        Some((g.weight.data_mut(), g.bias.data_mut())),
                        true,
                    )
                    .unwrap();
                    trunk_backward(&p.prior_trunk, &r.trunk.caches, &d_feat, r.n, c, r.trunk.hw, Some(&mut grads.prior_trunk));
                }
                PathKind::Jigsaw => {
                    if frozen.jigsaw {
                        continue;
                    }
                    let nt = r.n * 9;
                    let g = &mut grads.aggregate;
                    let de = linear_backward(
                        &r.head_out,
                        p.aggregate.weight.data(),
                        &dy,
                        r.n,
                        9 * d,
                        d,
                        Some((g.weight.data_mut(), g.bias.data_mut())),
                        true,
                    )
                    .unwrap();
                    let g = &mut grads.tile_head;
                    let d_feat = linear_backward(
                        &r.trunk.features,
                        p.tile_head.weight.data(),
                        &de,
                        nt,
                        c,
                        d,
                        Some((g.weight.data_mut(), g.bias.data_mut())),
                        true,
                    )
                    .unwrap();
                    let shared = p.jigsaw_trunk.is_none();
                    if shared && frozen.prior {
                        continue;
                    }
                    let gt = match grads.jigsaw_trunk.as_mut() {
                        Some(t) => t,
                        None => &mut grads.prior_trunk,
                    };
                    trunk_backward(p.jigsaw_trunk(), &r.trunk.caches, &d_feat, nt, c, r.trunk.hw, Some(gt));
                }
            }
        }
        Ok(grads)
    }
}

impl<T: Scalar> Trunk<T> {
    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    pub fn channels(&self) -> usize {
        self.out_channels()
    }
}
