//! The `PGCW` tensor container.
//!
//! Layout (little-endian): magic `PGCW`, `u32` version, `u32` tensor count;
//! per tensor a `u16` name length, UTF-8 name, `u8` dtype tag, `u8` rank,
//! `rank` x `u64` extents, then the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::array::DenseArray;
use super::encoder::{Encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"PGCW";
pub const VERSION: u32 = 1;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;
pub const DTYPE_U64: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::F64(_) => DTYPE_F64,
            TensorData::U64(_) => DTYPE_U64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub extents: Vec<u64>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_array<T: Scalar>(name: impl Into<String>, a: &DenseArray<T>) -> Self {
        let data = match T::DTYPE_TAG {
            DTYPE_F32 => TensorData::F32(a.data().iter().map(|v| v.to_f32().unwrap()).collect()),
            _ => TensorData::F64(a.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            extents: a.shape().iter().map(|&e| e as u64).collect(),
            data,
        }
    }

    pub fn from_scalars<T: Scalar>(name: impl Into<String>, shape: &[usize], values: &[T]) -> Self {
        let a = DenseArray::from_vec(shape, values.to_vec()).expect("caller passes matching shape");
        Self::from_array(name, &a)
    }

    pub fn from_u64(name: impl Into<String>, values: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            extents: vec![values.len() as u64],
            data: TensorData::U64(values),
        }
    }

    /// Reads the tensor as `T`; the stored dtype must match `T` exactly.
    pub fn to_array<T: Scalar>(&self) -> Result<DenseArray<T>> {
        let shape: Vec<usize> = self.extents.iter().map(|&e| e as usize).collect();
        let values: Vec<T> = match (&self.data, T::DTYPE_TAG) {
            (TensorData::F32(v), DTYPE_F32) => v.iter().map(|&x| T::from_f32(x).unwrap()).collect(),
            (TensorData::F64(v), DTYPE_F64) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            (d, want) => {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has dtype tag {}, expected {want}",
                    self.name,
                    d.tag()
                )))
            }
        };
        DenseArray::from_vec(&shape, values)
    }

    pub fn as_u64(&self) -> Result<&[u64]> {
        match &self.data {
            TensorData::U64(v) => Ok(v),
            d => Err(Error::Checkpoint(format!("tensor `{}` has dtype tag {}, expected u64", self.name, d.tag()))),
        }
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", t.name)))?;
        let rank = u8::try_from(t.extents.len()).map_err(|_| Error::Checkpoint(format!("rank too large: {}", t.name)))?;
        let count: u64 = t.extents.iter().product();
        if count as usize != t.data.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` extents disagree with payload", t.name)));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.data.tag());
        out.push(rank);
        for e in &t.extents {
            out.extend_from_slice(&e.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a whole container; nothing is returned unless every byte checks out.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let tag = c.u8()?;
        let rank = c.u8()? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(c.u64()?);
        }
        let n = extents
            .iter()
            .try_fold(1u64, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` extents overflow")))? as usize;
        let data = match tag {
            DTYPE_F32 => TensorData::F32(
                c.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DTYPE_F64 => TensorData::F64(
                c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DTYPE_U64 => TensorData::U64(
                c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(8)
                    .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(Error::Checkpoint(format!("tensor `{name}` has unknown dtype tag {other}"))),
        };
        out.push(NamedTensor { name, extents, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

/// Writes through a temporary file and renames, so readers never observe a
/// half-written checkpoint.
pub fn save_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensors(tensors)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    decode_tensors(&fs::read(path)?)
}

/// The tensor called `name`.
pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
}

/// Encoder tensors under `prefix` (e.g. `""` or `"opt."`).
pub fn params_to_tensors<T: Scalar>(params: &EncoderParams<T>, prefix: &str) -> Vec<NamedTensor> {
    params
        .tensors()
        .into_iter()
        .map(|(name, a)| NamedTensor::from_array(format!("{prefix}{name}"), a))
        .collect()
}

pub const CENTER_PRIOR: &str = "center.prior";
pub const CENTER_JIGSAW: &str = "center.jigsaw";

/// Parameters plus, for a batch-centred encoder, its running centres.
pub fn encoder_to_tensors<T: Scalar>(encoder: &Encoder<T>) -> Vec<NamedTensor> {
    let mut out = params_to_tensors(&encoder.params, "");
    if encoder.batch_center {
        let c = &encoder.centers;
        for (name, v) in [(CENTER_PRIOR, &c.prior), (CENTER_JIGSAW, &c.jigsaw)] {
            let a = DenseArray::from_vec(&[v.len()], v.clone()).expect("finite centre");
            out.push(NamedTensor::from_array(name, &a));
        }
    }
    out
}

/// Inverse of [`encoder_to_tensors`] for the architecture `cfg`.
pub fn encoder_from_tensors<T: Scalar>(tensors: &[NamedTensor], cfg: &EncoderConfig) -> Result<Encoder<T>> {
    let mut encoder = Encoder::from_params(params_from_tensors(tensors, "", cfg)?);
    encoder.batch_center = cfg.batch_center;
    if cfg.batch_center {
        let d = cfg.embedding_dim;
        for (name, dst) in [(CENTER_PRIOR, &mut encoder.centers.prior), (CENTER_JIGSAW, &mut encoder.centers.jigsaw)] {
            let v: DenseArray<T> = find(tensors, name)?.to_array()?;
            if v.shape() != [d] {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected [{d}]", v.shape())));
            }
            *dst = v.data().to_vec();
        }
    }
    Ok(encoder)
}

/// Recovers the architecture from tensor shapes.
pub fn infer_encoder_config(tensors: &[NamedTensor], prefix: &str) -> Result<EncoderConfig> {
    let mut channels = Vec::new();
    while let Ok(t) = find(tensors, &format!("{prefix}f.conv{}.weight", channels.len())) {
        channels.push(*t.extents.first().ok_or_else(|| Error::Checkpoint("rank-0 conv weight".into()))? as usize);
    }
    let head = find(tensors, &format!("{prefix}f.head.weight"))?;
    let embedding_dim = *head.extents.first().ok_or_else(|| Error::Checkpoint("rank-0 head weight".into()))? as usize;
    let share_trunk = find(tensors, &format!("{prefix}h.conv0.weight")).is_err();
    let batch_center = find(tensors, CENTER_PRIOR).is_ok();
    let layer_norm = find(tensors, &format!("{prefix}f.conv0.gamma")).is_ok();
    let cfg = EncoderConfig { channels, embedding_dim, share_trunk, batch_center, layer_norm };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("inconsistent encoder tensors: {e}")))?;
    Ok(cfg)
}

/// Loads every encoder tensor under `prefix` into a parameter set shaped by
/// `cfg`, checking names, shapes and dtype.
pub fn params_from_tensors<T: Scalar>(tensors: &[NamedTensor], prefix: &str, cfg: &EncoderConfig) -> Result<EncoderParams<T>> {
    let mut params = EncoderParams::<T>::init(cfg, 0)?;
    for (name, slot) in params.tensors_mut() {
        let full = format!("{prefix}{name}");
        let a = find(tensors, &full)?.to_array::<T>()?;
        if a.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{full}` has shape {:?}, expected {:?}",
                a.shape(),
                slot.shape()
            )));
        }
        *slot = a;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encoder_params_round_trip_with_inferred_config() {
        for share in [false, true] {
            let cfg = EncoderConfig { channels: vec![4, 6], embedding_dim: 5, share_trunk: share, ..Default::default() };
            let p = EncoderParams::<f32>::init(&cfg, 3).unwrap();
            let ts = params_to_tensors(&p, "x.");
            let bytes = encode_tensors(&ts).unwrap();
            let back = decode_tensors(&bytes).unwrap();
            let inferred = infer_encoder_config(&back, "x.").unwrap();
            assert_eq!(inferred, EncoderConfig { batch_center: false, ..cfg.clone() });
            assert_eq!(params_from_tensors::<f32>(&back, "x.", &inferred).unwrap(), p);
            assert!(params_from_tensors::<f64>(&back, "x.", &inferred).is_err());
        }
    }

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor::from_scalars::<f32>("w", &[2, 2], &[1.0, -2.5, 3.25, f32::MIN_POSITIVE]),
            NamedTensor::from_scalars::<f64>("b", &[3], &[0.1, 0.2, 0.3]),
            NamedTensor::from_u64("state", vec![7, u64::MAX]),
        ]
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_tensors(&[NamedTensor::from_scalars::<f32>("ab", &[1], &[1.0])]).unwrap();
        let mut want = b"PGCW".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u16.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.push(0);
        want.push(1);
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn bad_magic_and_version_are_reported() {
        let mut bytes = encode_tensors(&sample()).unwrap();
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        let err = decode_tensors(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
        assert!(err.to_string().contains("999") && err.to_string().contains('1'));
        bytes[0] = b'X';
        assert!(matches!(decode_tensors(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncation_is_a_clean_error() {
        let bytes = encode_tensors(&sample()).unwrap();
        for cut in [0, 3, 9, 15, bytes.len() - 1] {
            assert!(matches!(decode_tensors(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let t = &sample()[0];
        assert!(t.to_array::<f64>().is_err());
        assert!(t.to_array::<f32>().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<u32>(), 1..64), name in "[a-z.]{1,20}") {
            let floats: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).filter(|v| v.is_finite()).collect();
            prop_assume!(!floats.is_empty());
            let t = NamedTensor { name, extents: vec![floats.len() as u64], data: TensorData::F32(floats) };
            let back = decode_tensors(&encode_tensors(std::slice::from_ref(&t)).unwrap()).unwrap();
            match (&back[0].data, &t.data) {
                (TensorData::F32(a), TensorData::F32(b)) => {
                    prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
                _ => prop_assert!(false),
            }
            prop_assert_eq!(&back[0].name, &t.name);
        }
    }
}
