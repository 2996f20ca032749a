//! Versioned, digest-checked checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "UNISSLCK" | version u32 | header_len u64 | header (JSON)
//!                  | payload_len u64 | payload (raw scalars) | sha256 of all preceding bytes
//! ```
//!
//! The header describes every tensor in the payload by name, shape and
//! element offset. Parameters come first, followed by the Adam moments.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unissl_core::model::{Model, ModelConfig};
use unissl_core::optim::AdamState;
use unissl_core::pretrain::{PretrainConfig, SamplerState, Trainer, TrainerSnapshot};
use unissl_core::rng::RngState;
use unissl_core::{DType, Real};

use crate::error::{KitError, Result};

pub const MAGIC: &[u8; 8] = b"UNISSLCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: DType,
    pub spec: String,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub step: u64,
    pub sampler: SamplerState,
    pub dropout_rng: RngState,
    pub plan_rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint: the trainer plus the spec it was trained on.
pub struct Loaded<T> {
    pub header: CheckpointHeader,
    pub trainer: Trainer<T>,
    /// Hex SHA-256 of the file, usable as a checkpoint id.
    pub digest: String,
}

fn scalar_width(dtype: DType) -> usize {
    match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    }
}

fn push_scalars<T: Real>(out: &mut Vec<u8>, data: &[T]) {
    for &x in data {
        match T::DTYPE {
            DType::F32 => out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&x.as_f64().to_le_bytes()),
        }
    }
}

/// Serializes the trainer. Equal trainers give byte-identical output.
pub fn encode<T: Real>(spec: &str, trainer: &Trainer<T>) -> Result<Vec<u8>> {
    let snap = trainer.snapshot();
    let params = &trainer.model.params;
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0u64;
    let mut add = |name: String, shape: &[usize], data: &[T], payload: &mut Vec<u8>| {
        tensors.push(TensorEntry { name, shape: shape.to_vec(), offset });
        offset += data.len() as u64;
        push_scalars(payload, data);
    };
    for p in params.iter() {
        add(p.name.clone(), &p.shape, &p.data, &mut payload);
    }
    for (p, m) in params.iter().zip(&snap.optimizer.m) {
        add(format!("adam.m.{}", p.name), &p.shape, m, &mut payload);
    }
    for (p, v) in params.iter().zip(&snap.optimizer.v) {
        add(format!("adam.v.{}", p.name), &p.shape, v, &mut payload);
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE,
        spec: spec.to_string(),
        model: trainer.model.config.clone(),
        pretrain: trainer.config.clone(),
        step: snap.step,
        sampler: snap.sampler,
        dropout_rng: snap.dropout_rng,
        plan_rng: snap.plan_rng,
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(|e| KitError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(32 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Hex SHA-256 of the encoded bytes (the trailing digest itself excluded).
pub fn digest_of(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(&bytes[..bytes.len().saturating_sub(32)]))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Loaded<T>> {
    let fail = |reason: String| KitError::Checkpoint { path: path.to_path_buf(), reason };
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32().ok_or_else(|| fail("truncated".into()))?;
    if version != FORMAT_VERSION {
        return Err(fail(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    if Sha256::digest(body).as_slice() != stored {
        return Err(fail("digest mismatch (file is corrupt or was modified)".into()));
    }
    let truncated = || fail("truncated".into());
    let hlen = r.u64().ok_or_else(truncated)? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(hlen).ok_or_else(truncated)?).map_err(|e| fail(format!("bad header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(fail(format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
    }
    let plen = r.u64().ok_or_else(truncated)? as usize;
    let payload = r.take(plen).ok_or_else(truncated)?;
    if r.pos != body.len() {
        return Err(fail("trailing bytes".into()));
    }
    let width = scalar_width(header.dtype);
    let tensor = |e: &TensorEntry| -> Result<Vec<T>> {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize * width;
        let raw = payload.get(start..start + n * width).ok_or_else(|| fail(format!("tensor `{}` out of range", e.name)))?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match header.dtype {
                DType::F32 => T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64),
                DType::F64 => T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())),
            })
            .collect())
    };

    let mut model = Model::<T>::new(header.model.clone(), header.pretrain.seed)?;
    let count = model.params.len();
    if header.tensors.len() != 3 * count {
        return Err(fail(format!("{} tensors for {count} parameters", header.tensors.len())));
    }
    let mut values = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        values.push(tensor(e)?);
    }
    let mut v = values.split_off(2 * count);
    let m = values.split_off(count);
    model
        .params
        .load_entries(header.tensors[..count].iter().zip(values).map(|(e, d)| (e.name.as_str(), e.shape.as_slice(), d)))?;
    let names_ok = model.params.iter().enumerate().all(|(i, p)| {
        header.tensors[count + i].name == format!("adam.m.{}", p.name)
            && header.tensors[2 * count + i].name == format!("adam.v.{}", p.name)
    });
    if !names_ok {
        return Err(fail("optimizer moments do not line up with parameters".into()));
    }
    v.truncate(count);
    let snap = TrainerSnapshot {
        step: header.step,
        optimizer: AdamState { step: header.step, m, v },
        sampler: header.sampler.clone(),
        dropout_rng: header.dropout_rng,
        plan_rng: header.plan_rng,
    };
    let trainer = Trainer::restore(model, header.pretrain.clone(), snap)?;
    Ok(Loaded { header, trainer, digest: format!("{:x}", Sha256::digest(body)) })
}

/// Writes atomically (temp file + rename) and returns the digest.
pub fn save<T: Real>(path: &Path, spec: &str, trainer: &Trainer<T>) -> Result<String> {
    let bytes = encode(spec, trainer)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(KitError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(KitError::io(path))?;
    Ok(digest_of(&bytes))
}

pub fn load<T: Real>(path: &Path) -> Result<Loaded<T>> {
    let bytes = std::fs::read(path).map_err(KitError::io(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use unissl_core::datasets::{load_spec, make_synthetic_domain, SyntheticDomainConfig};
    use unissl_core::encoder::EncoderConfig;
    use unissl_core::objectives::{Objective, ObjectiveConfig};

    fn trainer() -> (Trainer<f32>, Vec<unissl_core::datasets::RawExample>) {
        let spec = load_spec("synth_series").unwrap();
        let mc = ModelConfig::for_spec(&spec, EncoderConfig::reduced(1, 16, 2)).unwrap();
        let mut dc = SyntheticDomainConfig::for_spec(&spec, 1);
        dc.num_train = 16;
        dc.num_val = 0;
        let data = make_synthetic_domain(&dc).unwrap().train;
        let oc = ObjectiveConfig { objective: Objective::Shed, ..ObjectiveConfig::default() };
        (Trainer::new(Model::new(mc, 1).unwrap(), PretrainConfig::new(oc, 4, 1)).unwrap(), data)
    }

    #[test]
    fn roundtrip_resumes_bitwise() {
        let (mut t, data) = trainer();
        t.step(&data).unwrap();
        let bytes = encode("synth_series", &t).unwrap();
        let mut back = decode::<f32>(&bytes, Path::new("mem")).unwrap().trainer;
        assert_eq!(encode("synth_series", &back).unwrap(), bytes);
        for _ in 0..2 {
            assert_eq!(t.step(&data).unwrap().to_bits(), back.step(&data).unwrap().to_bits());
        }
        assert_eq!(encode("x", &t).unwrap(), encode("x", &back).unwrap());
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let (t, _) = trainer();
        let bytes = encode("s", &t).unwrap();
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        let err = decode::<f32>(&bad, Path::new("c")).err().unwrap().to_string();
        assert!(err.contains("digest"), "{err}");

        let mut old = bytes.clone();
        old[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = decode::<f32>(&old, Path::new("c")).err().unwrap().to_string();
        assert!(err.contains("version 7"), "{err}");

        assert!(decode::<f64>(&bytes, Path::new("c")).is_err());
        assert!(decode::<f32>(&bytes[..20], Path::new("c")).is_err());
    }
}
