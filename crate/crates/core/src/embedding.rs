//! Modality-specific embedders: the only part of the model that sees raw
//! payloads. Each one produces an [`EmbeddingSequence`] of `d_model`
//! vectors; everything downstream is shared across domains.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::datasets::{DatasetSpec, Modality, Patch};
use crate::nn::{join, Linear};
use crate::params::{Grads, Init, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::{Error, Real, Result};

/// Contiguous run of positions produced by one embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub modality: Modality,
    pub start: usize,
    pub len: usize,
}

/// Batch of embedding vectors, `batch x len x d_model`, plus validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T> {
    pub batch: usize,
    pub len: usize,
    pub d_model: usize,
    pub values: Vec<T>,
    /// `batch x len`, `true` for real positions.
    pub mask: Vec<bool>,
    pub modality: Modality,
    pub positions_applied: bool,
    pub segments: Vec<Segment>,
}

impl<T: Real> EmbeddingSequence<T> {
    pub fn row(&self, b: usize) -> &[T] {
        let stride = self.len * self.d_model;
        &self.values[b * stride..(b + 1) * stride]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }

    pub fn valid_count(&self, b: usize) -> usize {
        self.mask_row(b).iter().filter(|&&m| m).count()
    }

    /// Indices of valid positions in row `b`.
    pub fn valid_positions(&self, b: usize) -> Vec<usize> {
        self.mask_row(b).iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Zeroes the vectors of masked-out positions.
    pub fn zero_masked(&mut self) {
        let d = self.d_model;
        for (p, &m) in self.mask.iter().enumerate() {
            if !m {
                self.values[p * d..(p + 1) * d].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn check_layout(&self) -> Result<()> {
        if self.len == 0 || self.batch == 0 {
            return Err(Error::Shape("empty embedding sequence".into()));
        }
        if self.values.len() != self.batch * self.len * self.d_model || self.mask.len() != self.batch * self.len {
            return Err(Error::Shape(format!(
                "embedding buffers do not match {}x{}x{}",
                self.batch, self.len, self.d_model
            )));
        }
        Ok(())
    }
}

/// Shape parameters for one embedder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbedderConfig {
    pub modality: Modality,
    pub d_model: usize,
    pub kind: EmbedderKind,
    pub max_positions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EmbedderKind {
    Grid { channels: usize, height: usize, width: usize, patch_h: usize, patch_w: usize },
    Segments { channels: usize, length: usize, segment: usize },
    Tokens { vocab_size: usize, max_len: usize },
}

impl EmbedderConfig {
    /// Embedders for a dataset, in concatenation order (image before text).
    pub fn for_spec(spec: &DatasetSpec, d_model: usize) -> Result<Vec<EmbedderConfig>> {
        spec.validate()?;
        let d = &spec.input_dims;
        let mut out = Vec::new();
        match (spec.modality, spec.patch) {
            (m, Patch::Grid { height, width }) => {
                let kind =
                    EmbedderKind::Grid { channels: d[0], height: d[1], width: d[2], patch_h: height, patch_w: width };
                let modality = if m == Modality::ImageTextPair { Modality::Image2d } else { m };
                let len = (d[1] / height) * (d[2] / width);
                out.push(EmbedderConfig { modality, d_model, kind, max_positions: len });
                if m == Modality::ImageTextPair {
                    let max_len = spec.text_len.unwrap_or(0);
                    out.push(EmbedderConfig {
                        modality: Modality::Tokens,
                        d_model,
                        kind: EmbedderKind::Tokens { vocab_size: spec.vocab_size.unwrap_or(0), max_len },
                        max_positions: max_len,
                    });
                }
            }
            (_, Patch::Segment { len }) => out.push(EmbedderConfig {
                modality: Modality::Series1d,
                d_model,
                kind: EmbedderKind::Segments { channels: d[0], length: d[1], segment: len },
                max_positions: d[1] / len,
            }),
            (_, Patch::Token) => out.push(EmbedderConfig {
                modality: Modality::Tokens,
                d_model,
                kind: EmbedderKind::Tokens { vocab_size: spec.vocab_size.unwrap_or(0), max_len: d[0] },
                max_positions: d[0],
            }),
        }
        Ok(out)
    }

    /// Positions produced for one payload.
    pub fn sequence_len(&self) -> usize {
        match self.kind {
            EmbedderKind::Grid { height, width, patch_h, patch_w, .. } => (height / patch_h) * (width / patch_w),
            EmbedderKind::Segments { length, segment, .. } => length / segment,
            EmbedderKind::Tokens { max_len, .. } => max_len,
        }
    }

    /// Flattened raw values per payload (zero for tokens).
    pub fn dense_len(&self) -> usize {
        match self.kind {
            EmbedderKind::Grid { channels, height, width, .. } => channels * height * width,
            EmbedderKind::Segments { channels, length, .. } => channels * length,
            EmbedderKind::Tokens { .. } => 0,
        }
    }
}

/// A content embedder together with its learned absolute position table.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub config: EmbedderConfig,
    content: Content,
    pub positions: PositionTable,
}

#[derive(Debug, Clone)]
enum Content {
    Affine(Linear),
    Lookup(ParamId),
}

/// Raw input to one embedder.
#[derive(Debug, Clone, Copy)]
pub enum EmbedderInput<'a, T> {
    Dense(&'a [T]),
    Tokens { ids: &'a [u32], mask: &'a [bool] },
}

impl Embedder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        config: EmbedderConfig,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if config.d_model == 0 {
            return Err(Error::InvalidArgument("d_model must be positive".into()));
        }
        if config.max_positions < config.sequence_len() {
            return Err(Error::InvalidArgument(format!(
                "max_positions {} is below sequence length {}",
                config.max_positions,
                config.sequence_len()
            )));
        }
        let content = match config.kind {
            EmbedderKind::Grid { channels, height, width, patch_h, patch_w } => {
                if patch_h == 0 || patch_w == 0 || height % patch_h != 0 || width % patch_w != 0 {
                    return Err(Error::Shape(format!("patch {patch_h}x{patch_w} does not divide {height}x{width}")));
                }
                let fan_in = channels * patch_h * patch_w;
                Content::Affine(Linear::new(store, &join(name, "patch"), fan_in, config.d_model, init_std, rng))
            }
            EmbedderKind::Segments { channels, length, segment } => {
                if segment == 0 || length % segment != 0 {
                    return Err(Error::Shape(format!("segment {segment} does not divide {length}")));
                }
                Content::Affine(Linear::new(
                    store,
                    &join(name, "segment"),
                    channels * segment,
                    config.d_model,
                    init_std,
                    rng,
                ))
            }
            EmbedderKind::Tokens { vocab_size, .. } => {
                if vocab_size == 0 {
                    return Err(Error::InvalidArgument("vocab_size must be positive".into()));
                }
                Content::Lookup(store.register(
                    join(name, "tokens"),
                    &[vocab_size, config.d_model],
                    Init::Normal { std: init_std },
                    rng,
                ))
            }
        };
        let positions = PositionTable::new(store, &join(name, "positions"), config.max_positions, config.d_model, init_std, rng);
        Ok(Self { config, content, positions })
    }

    /// Content embeddings (no positions) for a batch.
    pub fn embed<T: Real>(&self, params: &ParamStore<T>, input: EmbedderInput<'_, T>, batch: usize) -> Result<EmbeddingSequence<T>> {
        let cfg = &self.config;
        let len = cfg.sequence_len();
        let d = cfg.d_model;
        let (values, mask) = match (&self.content, input) {
            (Content::Affine(proj), EmbedderInput::Dense(raw)) => {
                let rows = self.gather(raw, batch)?;
                (proj.forward(params, &rows, batch * len), vec![true; batch * len])
            }
            (Content::Lookup(table), EmbedderInput::Tokens { ids, mask }) => {
                let EmbedderKind::Tokens { vocab_size, max_len } = cfg.kind else { unreachable!() };
                if ids.len() != batch * max_len || mask.len() != ids.len() {
                    return Err(Error::Shape(format!("expected {batch}x{max_len} token ids, got {}", ids.len())));
                }
                let table = params.get(*table);
                let mut values = vec![T::zero(); batch * len * d];
                for (p, (&id, &m)) in ids.iter().zip(mask).enumerate() {
                    if (id as usize) >= vocab_size {
                        return Err(Error::TokenOutOfRange { id, vocab_size });
                    }
                    if m {
                        let row = id as usize * d;
                        values[p * d..(p + 1) * d].copy_from_slice(&table[row..row + d]);
                    }
                }
                (values, mask.to_vec())
            }
            _ => return Err(Error::InvalidArgument(format!("wrong input kind for {} embedder", cfg.modality))),
        };
        Ok(EmbeddingSequence {
            batch,
            len,
            d_model: d,
            values,
            mask,
            modality: cfg.modality,
            positions_applied: false,
            segments: vec![Segment { modality: cfg.modality, start: 0, len }],
        })
    }

    /// Accumulates content-parameter gradients from `d_values` (`batch x len x d`).
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        input: EmbedderInput<'_, T>,
        batch: usize,
        d_values: &[T],
    ) -> Result<()> {
        let len = self.config.sequence_len();
        let d = self.config.d_model;
        match (&self.content, input) {
            (Content::Affine(proj), EmbedderInput::Dense(raw)) => {
                let rows = self.gather(raw, batch)?;
                proj.backward(params, grads, &rows, d_values, batch * len, false);
            }
            (Content::Lookup(table), EmbedderInput::Tokens { ids, mask }) => {
                let g = grads.get_mut(*table);
                for (p, (&id, &m)) in ids.iter().zip(mask).enumerate() {
                    if m {
                        let row = id as usize * d;
                        for (gi, &dv) in g[row..row + d].iter_mut().zip(&d_values[p * d..(p + 1) * d]) {
                            *gi += dv;
                        }
                    }
                }
            }
            _ => return Err(Error::InvalidArgument("wrong input kind".into())),
        }
        Ok(())
    }

    /// Cuts dense payloads into flattened patch / segment rows in raster order.
    pub fn gather<T: Real>(&self, raw: &[T], batch: usize) -> Result<Vec<T>> {
        let per = self.config.dense_len();
        if raw.len() != batch * per {
            return Err(Error::Shape(format!("expected {batch}x{per} raw values, got {}", raw.len())));
        }
        match self.config.kind {
            EmbedderKind::Grid { channels, height, width, patch_h, patch_w } => {
                Ok(patchify(raw, batch, channels, height, width, patch_h, patch_w))
            }
            EmbedderKind::Segments { channels, length, segment } => Ok(segmentize(raw, batch, channels, length, segment)),
            EmbedderKind::Tokens { .. } => Err(Error::InvalidArgument("token embedder takes no dense input".into())),
        }
    }

    pub fn lookup_table(&self) -> Option<ParamId> {
        match self.content {
            Content::Lookup(t) => Some(t),
            Content::Affine(_) => None,
        }
    }

    pub fn affine(&self) -> Option<&Linear> {
        match &self.content {
            Content::Affine(l) => Some(l),
            Content::Lookup(_) => None,
        }
    }
}

/// Non-overlapping raster-order patches, each flattened as `(c, dy, dx)`.
pub fn patchify<T: Copy>(
    raw: &[T],
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    ph: usize,
    pw: usize,
) -> Vec<T> {
    let (gh, gw) = (height / ph, width / pw);
    let per = channels * ph * pw;
    let mut out = Vec::with_capacity(batch * gh * gw * per);
    for b in 0..batch {
        let img = &raw[b * channels * height * width..(b + 1) * channels * height * width];
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..channels {
                    for dy in 0..ph {
                        let start = (c * height + gy * ph + dy) * width + gx * pw;
                        out.extend_from_slice(&img[start..start + pw]);
                    }
                }
            }
        }
    }
    out
}

/// Consecutive time slices across all channels, each flattened as `(c, t)`.
pub fn segmentize<T: Copy>(raw: &[T], batch: usize, channels: usize, length: usize, segment: usize) -> Vec<T> {
    let n = length / segment;
    let mut out = Vec::with_capacity(batch * n * channels * segment);
    for b in 0..batch {
        let s = &raw[b * channels * length..(b + 1) * channels * length];
        for i in 0..n {
            for c in 0..channels {
                let start = c * length + i * segment;
                out.extend_from_slice(&s[start..start + segment]);
            }
        }
    }
    out
}

/// Learned absolute position embeddings shared across the batch.
#[derive(Debug, Clone)]
pub struct PositionTable {
    pub table: ParamId,
    pub max_positions: usize,
    pub d_model: usize,
}

impl PositionTable {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        max_positions: usize,
        d_model: usize,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let table = store.register(name, &[max_positions, d_model], Init::Normal { std: init_std }, rng);
        Self { table, max_positions, d_model }
    }

    /// Adds `p_j` to position `start + j` for `j < len`, valid positions only.
    pub fn add_range<T: Real>(&self, params: &ParamStore<T>, seq: &mut EmbeddingSequence<T>, start: usize, len: usize) -> Result<()> {
        if len > self.max_positions {
            return Err(Error::PositionOverflow { len, max_positions: self.max_positions });
        }
        if seq.d_model != self.d_model {
            return Err(Error::Shape(format!("d_model {} vs position table {}", seq.d_model, self.d_model)));
        }
        let d = self.d_model;
        let table = params.get(self.table);
        for b in 0..seq.batch {
            for j in 0..len {
                let p = b * seq.len + start + j;
                if seq.mask[p] {
                    for (v, &t) in seq.values[p * d..(p + 1) * d].iter_mut().zip(&table[j * d..(j + 1) * d]) {
                        *v += t;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backward_range<T: Real>(&self, grads: &mut Grads<T>, mask: &[bool], seq_len: usize, start: usize, len: usize, d_values: &[T]) {
        let d = self.d_model;
        let g = grads.get_mut(self.table);
        let batch = mask.len() / seq_len;
        for b in 0..batch {
            for j in 0..len {
                let p = b * seq_len + start + j;
                if mask[p] {
                    for (gi, &dv) in g[j * d..(j + 1) * d].iter_mut().zip(&d_values[p * d..(p + 1) * d]) {
                        *gi += dv;
                    }
                }
            }
        }
    }
}

/// Adds a single embedder's position table to a single-segment sequence.
pub fn add_positions<T: Real>(params: &ParamStore<T>, table: &PositionTable, mut seq: EmbeddingSequence<T>) -> Result<EmbeddingSequence<T>> {
    if seq.positions_applied {
        return Err(Error::PositionsAlreadyApplied);
    }
    let len = seq.len;
    table.add_range(params, &mut seq, 0, len)?;
    seq.positions_applied = true;
    Ok(seq)
}

/// Concatenates per-modality sequences along the position axis.
///
/// Dense modalities must precede text; batch size, `d_model` and position
/// state must agree.
pub fn concat_modalities<T: Real>(seqs: Vec<EmbeddingSequence<T>>) -> Result<EmbeddingSequence<T>> {
    let mut iter = seqs.into_iter();
    let first = iter.next().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let rest: Vec<_> = iter.collect();
    if rest.is_empty() {
        return Ok(first);
    }
    let rank = |m: Modality| usize::from(m == Modality::Tokens);
    let mut last_rank = rank(first.segments.last().map_or(first.modality, |s| s.modality));
    let mut total = first.len;
    for s in &rest {
        if s.batch != first.batch || s.d_model != first.d_model {
            return Err(Error::Shape(format!(
                "cannot concatenate {}x_x{} with {}x_x{}",
                first.batch, first.d_model, s.batch, s.d_model
            )));
        }
        if s.positions_applied != first.positions_applied {
            return Err(Error::InvalidArgument("mixed position state in concatenation".into()));
        }
        let r = rank(s.segments.first().map_or(s.modality, |seg| seg.modality));
        if r < last_rank {
            return Err(Error::ModalityOrder(format!("{} cannot follow text", s.modality)));
        }
        last_rank = rank(s.segments.last().map_or(s.modality, |seg| seg.modality));
        total += s.len;
    }
    let (batch, d) = (first.batch, first.d_model);
    let parts: Vec<EmbeddingSequence<T>> = core::iter::once(first).chain(rest).collect();
    let mut values = Vec::with_capacity(batch * total * d);
    let mut mask = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for p in &parts {
            values.extend_from_slice(p.row(b));
            mask.extend_from_slice(p.mask_row(b));
        }
    }
    let mut segments = Vec::new();
    let mut offset = 0;
    for p in &parts {
        for s in &p.segments {
            segments.push(Segment { modality: s.modality, start: offset + s.start, len: s.len });
        }
        offset += p.len;
    }
    let has_text = segments.iter().any(|s| s.modality == Modality::Tokens);
    let has_dense = segments.iter().any(|s| s.modality != Modality::Tokens);
    let modality = if has_text && has_dense { Modality::ImageTextPair } else { parts[0].modality };
    Ok(EmbeddingSequence {
        batch,
        len: total,
        d_model: d,
        values,
        mask,
        modality,
        positions_applied: parts[0].positions_applied,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::load_spec;

    fn grid_embedder(store: &mut ParamStore<f64>, c: usize, hw: usize, p: usize, d: usize) -> Embedder {
        let cfg = EmbedderConfig {
            modality: Modality::Image2d,
            d_model: d,
            kind: EmbedderKind::Grid { channels: c, height: hw, width: hw, patch_h: p, patch_w: p },
            max_positions: (hw / p) * (hw / p),
        };
        Embedder::new(store, "img", cfg, 0.02, &mut SeededRng::new(0)).unwrap()
    }

    #[test]
    fn patch_counts_follow_grid_arithmetic() {
        let mut store = ParamStore::<f32>::new();
        let cfgs = EmbedderConfig::for_spec(&load_spec("chexpert").unwrap(), 256).unwrap();
        let e = Embedder::new(&mut store, "x", cfgs[0].clone(), 0.02, &mut SeededRng::new(0)).unwrap();
        let raw = vec![0.5f32; 2 * 3 * 224 * 224];
        let seq = e.embed(&store, EmbedderInput::Dense(&raw), 2).unwrap();
        assert_eq!((seq.batch, seq.len, seq.d_model), (2, 196, 256));
        assert!(seq.mask.iter().all(|&m| m));

        let mut store = ParamStore::<f64>::new();
        let e = grid_embedder(&mut store, 3, 32, 4, 8);
        let seq = e.embed(&store, EmbedderInput::Dense(&vec![0.0; 3 * 32 * 32]), 1).unwrap();
        assert_eq!(seq.len, 64);
        // zero image + zero bias -> zero embeddings
        assert!(seq.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segments_follow_length_arithmetic_and_scale_linearly() {
        let mut store = ParamStore::<f64>::new();
        let cfgs = EmbedderConfig::for_spec(&load_spec("pamap2").unwrap(), 16).unwrap();
        let e = Embedder::new(&mut store, "s", cfgs[0].clone(), 0.1, &mut SeededRng::new(4)).unwrap();
        let mut rng = SeededRng::new(9);
        let raw: Vec<f64> = (0..52 * 320).map(|_| rng.normal()).collect();
        let a = e.embed(&store, EmbedderInput::Dense(&raw), 1).unwrap();
        assert_eq!(a.len, 64);
        let doubled: Vec<f64> = raw.iter().map(|v| 2.0 * v).collect();
        let b = e.embed(&store, EmbedderInput::Dense(&doubled), 1).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }

        let cfg = EmbedderConfig {
            modality: Modality::Series1d,
            d_model: 4,
            kind: EmbedderKind::Segments { channels: 1, length: 10, segment: 5 },
            max_positions: 2,
        };
        let e = Embedder::new(&mut store, "tiny", cfg, 0.1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(e.embed(&store, EmbedderInput::Dense(&[1.0; 10]), 1).unwrap().len, 2);
    }

    #[test]
    fn indivisible_dims_are_rejected() {
        let mut store = ParamStore::<f64>::new();
        let cfg = EmbedderConfig {
            modality: Modality::Series1d,
            d_model: 4,
            kind: EmbedderKind::Segments { channels: 1, length: 11, segment: 5 },
            max_positions: 4,
        };
        assert!(matches!(Embedder::new(&mut store, "s", cfg, 0.1, &mut SeededRng::new(0)), Err(Error::Shape(_))));
    }

    #[test]
    fn raster_order_is_stable_under_patch_permutation() {
        let mut store = ParamStore::<f64>::new();
        let e = grid_embedder(&mut store, 1, 4, 2, 3);
        let mut rng = SeededRng::new(2);
        let img: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        // swap top-left and bottom-right 2x2 patches
        let mut swapped = img.clone();
        for dy in 0..2 {
            for dx in 0..2 {
                swapped.swap(dy * 4 + dx, (2 + dy) * 4 + 2 + dx);
            }
        }
        let a = e.embed(&store, EmbedderInput::Dense(&img), 1).unwrap();
        let b = e.embed(&store, EmbedderInput::Dense(&swapped), 1).unwrap();
        assert_eq!(&a.values[0..3], &b.values[9..12]);
        assert_eq!(&a.values[9..12], &b.values[0..3]);
        assert_eq!(&a.values[3..9], &b.values[3..9]);
    }

    fn token_embedder(store: &mut ParamStore<f64>, vocab: usize, len: usize, d: usize) -> Embedder {
        let cfg = EmbedderConfig {
            modality: Modality::Tokens,
            d_model: d,
            kind: EmbedderKind::Tokens { vocab_size: vocab, max_len: len },
            max_positions: len,
        };
        Embedder::new(store, "tok", cfg, 0.5, &mut SeededRng::new(1)).unwrap()
    }

    #[test]
    fn token_lookup_respects_mask_and_vocab() {
        let mut store = ParamStore::<f64>::new();
        let e = token_embedder(&mut store, 10, 128, 256);
        let ids: Vec<u32> = (0..128).map(|i| (i % 7) as u32 + 3).collect();
        let mask = vec![true; 128];
        let seq = e.embed(&store, EmbedderInput::Tokens { ids: &ids, mask: &mask }, 1).unwrap();
        assert_eq!(seq.values.len(), 128 * 256);
        // ids 0 and 7 are both token 3
        assert_eq!(&seq.values[0..256], &seq.values[7 * 256..8 * 256]);

        let pad = vec![0u32; 128];
        let none = vec![false; 128];
        let seq = e.embed(&store, EmbedderInput::Tokens { ids: &pad, mask: &none }, 1).unwrap();
        assert!(seq.values.iter().all(|&v| v == 0.0));
        assert!(seq.mask.iter().all(|&m| !m));

        let mut bad = ids.clone();
        bad[5] = 10;
        assert_eq!(
            e.embed(&store, EmbedderInput::Tokens { ids: &bad, mask: &mask }, 1).unwrap_err(),
            Error::TokenOutOfRange { id: 10, vocab_size: 10 }
        );
    }

    #[test]
    fn positions_add_the_shared_table_once() {
        let mut store = ParamStore::<f64>::new();
        let e = grid_embedder(&mut store, 1, 4, 2, 3);
        let zeros = vec![0.0; 2 * 16];
        let seq = e.embed(&store, EmbedderInput::Dense(&zeros), 2).unwrap();
        let seq = add_positions(&store, &e.positions, seq).unwrap();
        let table = store.get(e.positions.table);
        assert_eq!(&seq.values[..12], &table[..12]);
        assert_eq!(seq.row(0), seq.row(1));
        assert_eq!(add_positions(&store, &e.positions, seq).unwrap_err(), Error::PositionsAlreadyApplied);
    }

    #[test]
    fn position_overflow_is_reported() {
        let mut store = ParamStore::<f64>::new();
        let e = token_embedder(&mut store, 10, 8, 4);
        let short = PositionTable::new(&mut store, "short", 4, 4, 0.1, &mut SeededRng::new(0));
        let ids = vec![3u32; 8];
        let mask = vec![true; 8];
        let seq = e.embed(&store, EmbedderInput::Tokens { ids: &ids, mask: &mask }, 1).unwrap();
        assert_eq!(add_positions(&store, &short, seq).unwrap_err(), Error::PositionOverflow { len: 8, max_positions: 4 });
    }

    #[test]
    fn concatenation_keeps_order_and_masks() {
        let mut store = ParamStore::<f64>::new();
        let cfgs = EmbedderConfig::for_spec(&load_spec("coco").unwrap(), 8).unwrap();
        let img = Embedder::new(&mut store, "i", cfgs[0].clone(), 0.1, &mut SeededRng::new(0)).unwrap();
        let txt = Embedder::new(&mut store, "t", cfgs[1].clone(), 0.1, &mut SeededRng::new(0)).unwrap();
        let raw = vec![0.1; 2 * 3 * 224 * 224];
        let a = img.embed(&store, EmbedderInput::Dense(&raw), 2).unwrap();
        let ids = vec![5u32; 64];
        let mask: Vec<bool> = (0..64).map(|i| i % 32 < 20).collect();
        let b = txt.embed(&store, EmbedderInput::Tokens { ids: &ids, mask: &mask }, 2).unwrap();
        let joined = concat_modalities(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(joined.len, 228);
        assert_eq!(joined.modality, Modality::ImageTextPair);
        assert_eq!(joined.segments[1], Segment { modality: Modality::Tokens, start: 196, len: 32 });
        assert_eq!(&joined.mask_row(1)[196..], &mask[32..]);
        assert!(matches!(concat_modalities(vec![b, a.clone()]), Err(Error::ModalityOrder(_))));
        assert_eq!(concat_modalities(vec![a.clone()]).unwrap(), a);
    }
}
