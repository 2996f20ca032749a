//! Embedders + encoder for one dataset layout.

use alloc::format;
use alloc::vec::Vec;

use crate::datasets::{DatasetSpec, Payload, RawExample};
use crate::embedding::{concat_modalities, Embedder, EmbedderConfig, EmbedderInput, EmbeddingSequence};
use crate::encoder::{Encoder, EncoderConfig, Mode};
use crate::params::{Grads, ParamStore};
use crate::rng::{streams, SeededRng};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Embedders in concatenation order.
    pub embedders: Vec<EmbedderConfig>,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn for_spec(spec: &DatasetSpec, encoder: EncoderConfig) -> Result<Self> {
        let embedders = EmbedderConfig::for_spec(spec, encoder.d_model)?;
        Ok(Self { embedders, encoder })
    }

    pub fn sequence_len(&self) -> usize {
        self.embedders.iter().map(EmbedderConfig::sequence_len).sum()
    }
}

/// Model inputs for one batch. Payloads are expected to be preprocessed
/// (already normalized); values are only converted to `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    /// Concatenated dense payloads (empty for text-only models).
    pub dense: Vec<T>,
    pub ids: Vec<u32>,
    pub token_mask: Vec<bool>,
}

impl<T: Real> Batch<T> {
    pub fn from_examples(config: &ModelConfig, examples: &[&RawExample]) -> Result<Self> {
        let dense_len: usize = config.embedders.iter().map(EmbedderConfig::dense_len).sum();
        let token_len: usize = config
            .embedders
            .iter()
            .filter(|e| e.dense_len() == 0)
            .map(EmbedderConfig::sequence_len)
            .sum();
        let mut dense = Vec::with_capacity(examples.len() * dense_len);
        let mut ids = Vec::with_capacity(examples.len() * token_len);
        let mut token_mask = Vec::with_capacity(examples.len() * token_len);
        for (i, ex) in examples.iter().enumerate() {
            let (d, t) = match &ex.payload {
                Payload::Dense { values, .. } => (Some(values.as_slice()), None),
                Payload::Tokens { ids, mask } => (None, Some((ids.as_slice(), mask.as_slice()))),
                Payload::Pair { values, ids, mask, .. } => (Some(values.as_slice()), Some((ids.as_slice(), mask.as_slice()))),
            };
            match d {
                Some(v) if v.len() == dense_len => {
                    dense.extend(v.iter().map(|&x| T::from_f64_lossy(x as f64)));
                }
                None if dense_len == 0 => {}
                _ => return Err(Error::Shape(format!("example {i}: dense payload does not match the model"))),
            }
            match t {
                Some((id, m)) if id.len() == token_len && m.len() == token_len => {
                    ids.extend_from_slice(id);
                    token_mask.extend_from_slice(m);
                }
                None if token_len == 0 => {}
                _ => return Err(Error::Shape(format!("example {i}: token payload does not match the model"))),
            }
        }
        Ok(Self { size: examples.len(), dense, ids, token_mask })
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub embedders: Vec<Embedder>,
    pub encoder: Encoder,
}

impl<T: Real> Model<T> {
    /// Fresh model; all initial values come from the run seed's init stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.embedders.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one embedder".into()));
        }
        let mut rng = SeededRng::with_stream(seed, streams::INIT);
        let mut params = ParamStore::new();
        let mut embedders = Vec::new();
        for (i, ec) in config.embedders.iter().enumerate() {
            if ec.d_model != config.encoder.d_model {
                return Err(Error::Shape(format!(
                    "embedder d_model {} vs encoder {}",
                    ec.d_model, config.encoder.d_model
                )));
            }
            let name = format!("embed{i}.{}", ec.modality);
            embedders.push(Embedder::new(&mut params, &name, ec.clone(), config.encoder.init_std, &mut rng)?);
        }
        let encoder = Encoder::new(&mut params, "encoder", config.encoder.clone(), &mut rng)?;
        Ok(Self { config, params, embedders, encoder })
    }

    fn inputs<'a>(&self, batch: &'a Batch<T>) -> Vec<EmbedderInput<'a, T>> {
        let mut dense_off = 0;
        let mut tok_off = 0;
        self.embedders
            .iter()
            .map(|e| {
                let dl = e.config.dense_len() * batch.size;
                if dl > 0 {
                    let s = &batch.dense[dense_off..dense_off + dl];
                    dense_off += dl;
                    EmbedderInput::Dense(s)
                } else {
                    let tl = e.config.sequence_len() * batch.size;
                    let r = tok_off..tok_off + tl;
                    tok_off += tl;
                    EmbedderInput::Tokens { ids: &batch.ids[r.clone()], mask: &batch.token_mask[r] }
                }
            })
            .collect()
    }

    /// Content embeddings of every modality, concatenated, without positions.
    pub fn embed_content(&self, batch: &Batch<T>) -> Result<EmbeddingSequence<T>> {
        let inputs = self.inputs(batch);
        let seqs = self
            .embedders
            .iter()
            .zip(inputs)
            .map(|(e, input)| e.embed(&self.params, input, batch.size))
            .collect::<Result<Vec<_>>>()?;
        concat_modalities(seqs)
    }

    /// Adds each embedder's position table to its own segment.
    pub fn add_positions(&self, mut seq: EmbeddingSequence<T>) -> Result<EmbeddingSequence<T>> {
        if seq.positions_applied {
            return Err(Error::PositionsAlreadyApplied);
        }
        if seq.segments.len() != self.embedders.len() {
            return Err(Error::Shape("sequence segments do not match embedders".into()));
        }
        for (e, s) in self.embedders.iter().zip(seq.segments.clone()) {
            e.positions.add_range(&self.params, &mut seq, s.start, s.len)?;
        }
        seq.positions_applied = true;
        Ok(seq)
    }

    pub fn positions_backward(&self, grads: &mut Grads<T>, seq: &EmbeddingSequence<T>, d_values: &[T]) {
        for (e, s) in self.embedders.iter().zip(&seq.segments) {
            e.positions.backward_range(grads, &seq.mask, seq.len, s.start, s.len, d_values);
        }
    }

    /// Routes the gradient of the concatenated content embeddings back into
    /// each embedder.
    pub fn embed_backward(&self, grads: &mut Grads<T>, batch: &Batch<T>, seq: &EmbeddingSequence<T>, d_content: &[T]) -> Result<()> {
        let d = seq.d_model;
        let inputs = self.inputs(batch);
        for ((e, s), input) in self.embedders.iter().zip(&seq.segments).zip(inputs) {
            let mut part = Vec::with_capacity(batch.size * s.len * d);
            for b in 0..batch.size {
                let start = (b * seq.len + s.start) * d;
                part.extend_from_slice(&d_content[start..start + s.len * d]);
            }
            e.backward(&self.params, grads, input, batch.size, &part)?;
        }
        Ok(())
    }

    /// Eval-mode pooled features `f(x)` (`batch x proj_dim`).
    pub fn features(&self, batch: &Batch<T>) -> Result<Vec<T>> {
        let seq = self.add_positions(self.embed_content(batch)?)?;
        let (out, _) = self.encoder.encode(&self.params, &seq, Mode::Eval, &mut SeededRng::new(0))?;
        Ok(self.encoder.pool_project(&self.params, &out)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{load_spec, make_synthetic_domain, SyntheticDomainConfig};

    fn tiny(spec: &str) -> (Model<f64>, crate::datasets::SyntheticDomain) {
        let spec = load_spec(spec).unwrap();
        let cfg = ModelConfig::for_spec(&spec, EncoderConfig::reduced(1, 16, 2)).unwrap();
        let mut dc = SyntheticDomainConfig::for_spec(&spec, 1);
        dc.num_train = 4;
        dc.num_val = 0;
        (Model::new(cfg, 3).unwrap(), make_synthetic_domain(&dc).unwrap())
    }

    #[test]
    fn sequence_length_matches_spec_for_every_synthetic_layout() {
        for name in ["synth_image", "synth_series", "synth_tokens", "synth_pair"] {
            let (model, data) = tiny(name);
            let refs: Vec<&RawExample> = data.train.iter().collect();
            let batch = Batch::from_examples(&model.config, &refs).unwrap();
            let seq = model.embed_content(&batch).unwrap();
            assert_eq!(seq.len, load_spec(name).unwrap().sequence_length, "{name}");
            let feats = model.features(&batch).unwrap();
            assert_eq!(feats.len(), 4 * 128);
        }
    }

    #[test]
    fn same_seed_same_initialization() {
        let (a, _) = tiny("synth_image");
        let (b, _) = tiny("synth_image");
        assert_eq!(a.params.checksum(), b.params.checksum());
    }

    #[test]
    fn payload_mismatch_is_reported() {
        let (model, _) = tiny("synth_image");
        let (_, text) = tiny("synth_tokens");
        let refs: Vec<&RawExample> = text.train.iter().collect();
        assert!(matches!(Batch::<f64>::from_examples(&model.config, &refs), Err(Error::Shape(_))));
    }
}
