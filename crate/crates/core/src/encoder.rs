//! The shared transformer encoder, its pooled projection and the per-position
//! detection head.
//!
//! Blocks are pre-normalized: `h = x + MHA(LN(x))`, `y = h + FFN(LN(h))`,
//! followed by a final layer norm. The feed-forward uses the exact GELU.
//! Dropout acts on attention probabilities and on feed-forward outputs, and
//! only in [`Mode::Train`]. Masked positions neither attend nor are attended
//! to, and their final states are zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::EmbeddingSequence;
use crate::linalg::{gemm, MatMut, MatRef};
use crate::nn::{dropout_mask, gelu, gelu_grad, join, LayerNorm, LayerNormCache, Linear};
use crate::params::{Grads, ParamStore};
use crate::rng::SeededRng;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub dropout: f64,
    pub ffn_dim: usize,
    pub proj_dim: usize,
    /// Standard deviation of every weight matrix at initialization; the two
    /// residual output projections are further scaled by `1/sqrt(2 * layers)`.
    pub init_std: f64,
}

impl Default for EncoderConfig {
    /// 12 layers, hidden size 256, 8 heads, dropout 0.1, 128-d features.
    fn default() -> Self {
        Self { layers: 12, d_model: 256, heads: 8, dropout: 0.1, ffn_dim: 1024, proj_dim: 128, init_std: 0.02 }
    }
}

impl EncoderConfig {
    /// Smaller encoder with the same shape rules (`ffn_dim = 4 * d_model`).
    pub fn reduced(layers: usize, d_model: usize, heads: usize) -> Self {
        Self { layers, d_model, heads, ffn_dim: 4 * d_model, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 || self.proj_dim == 0 {
            return Err(Error::InvalidArgument("encoder sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Final-layer states plus the mask they were computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub batch: usize,
    pub len: usize,
    pub d_model: usize,
    /// `batch x len x d_model`, zero at masked positions.
    pub states: Vec<T>,
    pub mask: Vec<bool>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    final_ln: LayerNormCache<T>,
    mask: Vec<bool>,
    batch: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct BlockTrace<T> {
    ln1: LayerNormCache<T>,
    u1: Vec<T>,
    qkv: Vec<T>,
    /// Softmax probabilities, `batch x heads x len x len`.
    probs: Vec<T>,
    attn_drop: Option<Vec<T>>,
    attn_cat: Vec<T>,
    ln2: LayerNormCache<T>,
    u2: Vec<T>,
    pre_act: Vec<T>,
    ff_drop: Option<Vec<T>>,
}

impl<T: Real> EncoderTrace<T> {
    /// Attention probabilities of `layer`, laid out `batch x heads x len x len`.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.blocks[layer].probs
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    /// Mean-pooled state to feature vector.
    pub proj: Linear,
    /// Per-position binary detection head.
    pub detect: Linear,
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let std = config.init_std;
        let resid_std = std / libm::sqrt((2 * config.layers) as f64);
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.block{l}");
                Block {
                    ln1: LayerNorm::new(store, &join(&p, "ln1"), d, rng),
                    qkv: Linear::new(store, &join(&p, "qkv"), d, 3 * d, std, rng),
                    out: Linear::new(store, &join(&p, "attn_out"), d, d, resid_std, rng),
                    ln2: LayerNorm::new(store, &join(&p, "ln2"), d, rng),
                    ff1: Linear::new(store, &join(&p, "ff1"), d, config.ffn_dim, std, rng),
                    ff2: Linear::new(store, &join(&p, "ff2"), config.ffn_dim, d, resid_std, rng),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(store, &join(name, "final_ln"), d, rng);
        let proj = Linear::new(store, &join(name, "proj"), d, config.proj_dim, std, rng);
        let detect = Linear::new(store, &join(name, "detect"), d, 1, std, rng);
        Ok(Self { config, blocks, final_ln, proj, detect })
    }

    /// Runs all blocks. `rng` feeds dropout and is untouched in eval mode.
    pub fn encode<T: Real>(
        &self,
        params: &ParamStore<T>,
        seq: &EmbeddingSequence<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(EncoderOutput<T>, EncoderTrace<T>)> {
        seq.check_layout()?;
        if !seq.positions_applied {
            return Err(Error::InvalidArgument("encoder input needs position embeddings".into()));
        }
        if seq.d_model != self.config.d_model {
            return Err(Error::Shape(format!("d_model {} vs encoder {}", seq.d_model, self.config.d_model)));
        }
        let (b, l, d) = (seq.batch, seq.len, seq.d_model);
        let n = b * l;
        let p_drop = if mode == Mode::Train { self.config.dropout } else { 0.0 };
        let mut h = seq.values.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (layer, blk) in self.blocks.iter().enumerate() {
            let (u1, ln1) = blk.ln1.forward(params, &h, n);
            let qkv = blk.qkv.forward(params, &u1, n);
            let (attn_cat, probs, attn_drop) = self.attend(&qkv, &seq.mask, b, l, p_drop, rng);
            let attn_out = blk.out.forward(params, &attn_cat, n);
            h.iter_mut().zip(&attn_out).for_each(|(x, &a)| *x += a);

            let (u2, ln2) = blk.ln2.forward(params, &h, n);
            let pre_act = blk.ff1.forward(params, &u2, n);
            let act: Vec<T> = pre_act.iter().map(|&a| gelu(a)).collect();
            let mut ff = blk.ff2.forward(params, &act, n, );
            let ff_drop = (p_drop > 0.0).then(|| dropout_mask::<T>(ff.len(), p_drop, rng));
            if let Some(m) = &ff_drop {
                ff.iter_mut().zip(m).for_each(|(f, &k)| *f *= k);
            }
            h.iter_mut().zip(&ff).for_each(|(x, &f)| *x += f);

            if !h.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer });
            }
            traces.push(BlockTrace { ln1, u1, qkv, probs, attn_drop, attn_cat, ln2, u2, pre_act, ff_drop });
        }
        let (mut states, final_ln) = self.final_ln.forward(params, &h, n);
        for (p, &m) in seq.mask.iter().enumerate() {
            if !m {
                states[p * d..(p + 1) * d].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let out = EncoderOutput { batch: b, len: l, d_model: d, states, mask: seq.mask.clone() };
        let trace = EncoderTrace { blocks: traces, final_ln, mask: seq.mask.clone(), batch: b, len: l };
        Ok((out, trace))
    }

    /// Masked multi-head attention over packed `[Q | K | V]` rows.
    fn attend<T: Real>(
        &self,
        qkv: &[T],
        mask: &[bool],
        b: usize,
        l: usize,
        p_drop: f64,
        rng: &mut SeededRng,
    ) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut probs = vec![T::zero(); b * heads * l * l];
        let mut attn_cat = vec![T::zero(); b * l * d];
        let drop = (p_drop > 0.0).then(|| dropout_mask::<T>(probs.len(), p_drop, rng));
        let mut scratch = vec![T::zero(); l * l];
        for bi in 0..b {
            let m = &mask[bi * l..(bi + 1) * l];
            let row0 = bi * l * 3 * d;
            for hi in 0..heads {
                let q = MatRef::strided(qkv, row0 + hi * dh, l, dh, 3 * d, 1);
                let k = MatRef::strided(qkv, row0 + d + hi * dh, l, dh, 3 * d, 1);
                let v = MatRef::strided(qkv, row0 + 2 * d + hi * dh, l, dh, 3 * d, 1);
                let base = (bi * heads + hi) * l * l;
                let p = &mut probs[base..base + l * l];
                gemm(scale, q, k.t(), T::zero(), MatMut::new(p, l, l));
                for i in 0..l {
                    let row = &mut p[i * l..(i + 1) * l];
                    if !m[i] {
                        row.iter_mut().for_each(|x| *x = T::zero());
                        continue;
                    }
                    let mut mx = T::neg_infinity();
                    for j in 0..l {
                        if m[j] && row[j] > mx {
                            mx = row[j];
                        }
                    }
                    let mut sum = T::zero();
                    for j in 0..l {
                        row[j] = if m[j] { (row[j] - mx).exp() } else { T::zero() };
                        sum += row[j];
                    }
                    let inv = T::one() / sum;
                    row.iter_mut().for_each(|x| *x *= inv);
                }
                let pd: &[T] = match &drop {
                    Some(keep) => {
                        for ((s, &x), &k) in scratch.iter_mut().zip(p.iter()).zip(&keep[base..base + l * l]) {
                            *s = x * k;
                        }
                        &scratch
                    }
                    None => p,
                };
                gemm(
                    T::one(),
                    MatRef::new(pd, l, l),
                    v,
                    T::zero(),
                    MatMut::strided(&mut attn_cat, bi * l * d + hi * dh, l, dh, d, 1),
                );
            }
        }
        (attn_cat, probs, drop)
    }

    /// Backpropagates `d_states` to the encoder input, accumulating parameter
    /// gradients. Returns `d_input` (`batch x len x d_model`).
    pub fn backward<T: Real>(&self, params: &ParamStore<T>, grads: &mut Grads<T>, trace: &EncoderTrace<T>, d_states: &[T]) -> Vec<T> {
        let (b, l, d) = (trace.batch, trace.len, self.config.d_model);
        let n = b * l;
        let mut ds = d_states.to_vec();
        for (p, &m) in trace.mask.iter().enumerate() {
            if !m {
                ds[p * d..(p + 1) * d].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let mut dh = self.final_ln.backward(params, grads, &trace.final_ln, &ds, n);
        for (blk, tr) in self.blocks.iter().zip(&trace.blocks).rev() {
            // feed-forward branch
            let mut df = dh.clone();
            if let Some(m) = &tr.ff_drop {
                df.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
            }
            let act: Vec<T> = tr.pre_act.iter().map(|&a| gelu(a)).collect();
            let mut dact = blk.ff2.backward(params, grads, &act, &df, n, true).unwrap();
            dact.iter_mut().zip(&tr.pre_act).for_each(|(g, &a)| *g *= gelu_grad(a));
            let du2 = blk.ff1.backward(params, grads, &tr.u2, &dact, n, true).unwrap();
            let dln2 = blk.ln2.backward(params, grads, &tr.ln2, &du2, n);
            dh.iter_mut().zip(&dln2).for_each(|(g, &x)| *g += x);

            // attention branch
            let dcat = blk.out.backward(params, grads, &tr.attn_cat, &dh, n, true).unwrap();
            let dqkv = self.attend_backward(tr, &dcat, b, l);
            let du1 = blk.qkv.backward(params, grads, &tr.u1, &dqkv, n, true).unwrap();
            let dln1 = blk.ln1.backward(params, grads, &tr.ln1, &du1, n);
            dh.iter_mut().zip(&dln1).for_each(|(g, &x)| *g += x);
        }
        dh
    }

    fn attend_backward<T: Real>(&self, tr: &BlockTrace<T>, dcat: &[T], b: usize, l: usize) -> Vec<T> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dqkv = vec![T::zero(); b * l * 3 * d];
        let mut pd = vec![T::zero(); l * l];
        let mut dp = vec![T::zero(); l * l];
        for bi in 0..b {
            let row0 = bi * l * 3 * d;
            for hi in 0..heads {
                let base = (bi * heads + hi) * l * l;
                let p = &tr.probs[base..base + l * l];
                match &tr.attn_drop {
                    Some(keep) => {
                        for ((s, &x), &k) in pd.iter_mut().zip(p).zip(&keep[base..base + l * l]) {
                            *s = x * k;
                        }
                    }
                    None => pd.copy_from_slice(p),
                }
                let q = MatRef::strided(&tr.qkv, row0 + hi * dh, l, dh, 3 * d, 1);
                let k = MatRef::strided(&tr.qkv, row0 + d + hi * dh, l, dh, 3 * d, 1);
                let v = MatRef::strided(&tr.qkv, row0 + 2 * d + hi * dh, l, dh, 3 * d, 1);
                let d_o = MatRef::strided(dcat, bi * l * d + hi * dh, l, dh, d, 1);
                // dV = Pd^T dO
                gemm(
                    T::one(),
                    MatRef::new(&pd, l, l).t(),
                    d_o,
                    T::zero(),
                    MatMut::strided(&mut dqkv, row0 + 2 * d + hi * dh, l, dh, 3 * d, 1),
                );
                // dPd = dO V^T
                gemm(T::one(), d_o, v.t(), T::zero(), MatMut::new(&mut dp, l, l));
                if let Some(keep) = &tr.attn_drop {
                    dp.iter_mut().zip(&keep[base..base + l * l]).for_each(|(g, &k)| *g *= k);
                }
                // softmax backward: dS = P * (dP - sum(dP * P))
                for i in 0..l {
                    let pr = &p[i * l..(i + 1) * l];
                    let gr = &mut dp[i * l..(i + 1) * l];
                    let s: T = pr.iter().zip(gr.iter()).map(|(&a, &g)| a * g).sum();
                    gr.iter_mut().zip(pr).for_each(|(g, &a)| *g = a * (*g - s));
                }
                // dQ = dS K * scale, dK = dS^T Q * scale
                gemm(scale, MatRef::new(&dp, l, l), k, T::zero(), MatMut::strided(&mut dqkv, row0 + hi * dh, l, dh, 3 * d, 1));
                gemm(
                    scale,
                    MatRef::new(&dp, l, l).t(),
                    q,
                    T::zero(),
                    MatMut::strided(&mut dqkv, row0 + d + hi * dh, l, dh, 3 * d, 1),
                );
            }
        }
        dqkv
    }

    /// Masked mean over valid positions (`batch x d_model`).
    pub fn masked_mean<T: Real>(out: &EncoderOutput<T>) -> Result<Vec<T>> {
        let (b, l, d) = (out.batch, out.len, out.d_model);
        let mut mean = vec![T::zero(); b * d];
        for bi in 0..b {
            let count = out.mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::AllMasked { row: bi });
            }
            let inv = T::one() / T::from_usize(count).unwrap();
            let acc = &mut mean[bi * d..(bi + 1) * d];
            for j in 0..l {
                if out.mask[bi * l + j] {
                    let s = &out.states[(bi * l + j) * d..(bi * l + j + 1) * d];
                    acc.iter_mut().zip(s).for_each(|(a, &x)| *a += x);
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        Ok(mean)
    }

    /// Pooled feature `f(x)`: masked mean followed by the learned projection.
    pub fn pool_project<T: Real>(&self, params: &ParamStore<T>, out: &EncoderOutput<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mean = Self::masked_mean(out)?;
        let pooled = self.proj.forward(params, &mean, out.batch);
        Ok((pooled, mean))
    }

    /// Gradient of the states given the gradient of the pooled features.
    pub fn pool_project_backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        out: &EncoderOutput<T>,
        mean: &[T],
        d_pooled: &[T],
    ) -> Vec<T> {
        let (b, l, d) = (out.batch, out.len, out.d_model);
        let dmean = self.proj.backward(params, grads, mean, d_pooled, b, true).unwrap();
        let mut ds = vec![T::zero(); b * l * d];
        for bi in 0..b {
            let count = out.mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m).count();
            let inv = T::one() / T::from_usize(count.max(1)).unwrap();
            for j in 0..l {
                if out.mask[bi * l + j] {
                    let dst = &mut ds[(bi * l + j) * d..(bi * l + j + 1) * d];
                    dst.iter_mut().zip(&dmean[bi * d..(bi + 1) * d]).for_each(|(g, &x)| *g = x * inv);
                }
            }
        }
        ds
    }

    /// Shared affine map `d_model -> 1` at every position (`batch x len`).
    pub fn per_position_logits<T: Real>(&self, params: &ParamStore<T>, out: &EncoderOutput<T>) -> Vec<T> {
        self.detect.forward(params, &out.states, out.batch * out.len)
    }

    pub fn per_position_logits_backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        out: &EncoderOutput<T>,
        d_logits: &[T],
    ) -> Vec<T> {
        self.detect.backward(params, grads, &out.states, d_logits, out.batch * out.len, true).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Modality;
    use crate::embedding::Segment;

    fn setup(layers: usize, d: usize, heads: usize, dropout: f64) -> (ParamStore<f64>, Encoder) {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig { dropout, init_std: 0.2, ..EncoderConfig::reduced(layers, d, heads) };
        let enc = Encoder::new(&mut store, "enc", cfg, &mut SeededRng::new(5)).unwrap();
        (store, enc)
    }

    fn random_seq(b: usize, l: usize, d: usize, seed: u64) -> EmbeddingSequence<f64> {
        let mut rng = SeededRng::new(seed);
        EmbeddingSequence {
            batch: b,
            len: l,
            d_model: d,
            values: (0..b * l * d).map(|_| rng.normal()).collect(),
            mask: vec![true; b * l],
            modality: Modality::Image2d,
            positions_applied: true,
            segments: vec![Segment { modality: Modality::Image2d, start: 0, len: l }],
        }
    }

    #[test]
    fn shapes_and_eval_determinism() {
        let (store, enc) = setup(2, 16, 4, 0.1);
        let seq = random_seq(2, 64, 16, 1);
        let (a, _) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        let (b, _) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(99)).unwrap();
        assert_eq!(a.states.len(), 2 * 64 * 16);
        assert_eq!(a, b);
        let (c, _) = enc.encode(&store, &seq, Mode::Train, &mut SeededRng::new(0)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn batch_rows_are_equivariant() {
        let (store, enc) = setup(2, 16, 2, 0.0);
        let seq = random_seq(2, 10, 16, 3);
        let mut swapped = seq.clone();
        let stride = 10 * 16;
        let (r0, r1) = swapped.values.split_at_mut(stride);
        r0.swap_with_slice(&mut r1[..stride]);
        let (a, _) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        let (b, _) = enc.encode(&store, &swapped, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        for (x, y) in a.states[..stride].iter().zip(&b.states[stride..]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions_over_valid_keys() {
        let (store, enc) = setup(2, 16, 4, 0.0);
        let mut seq = random_seq(2, 12, 16, 7);
        for j in 9..12 {
            seq.mask[12 + j] = false;
        }
        seq.zero_masked();
        let (out, trace) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        for layer in 0..2 {
            let p = trace.attention(layer);
            for bi in 0..2 {
                for h in 0..4 {
                    for i in 0..12 {
                        let row = &p[((bi * 4 + h) * 12 + i) * 12..][..12];
                        let valid_q = seq.mask[bi * 12 + i];
                        let s: f64 = row.iter().sum();
                        if valid_q {
                            assert!((s - 1.0).abs() < 1e-5);
                        } else {
                            assert_eq!(s, 0.0);
                        }
                        for j in 0..12 {
                            if !seq.mask[bi * 12 + j] {
                                assert_eq!(row[j], 0.0);
                            }
                        }
                    }
                }
            }
        }
        assert!(out.states[(12 + 10) * 16..(12 + 11) * 16].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_positions_do_not_influence_valid_states() {
        let (store, enc) = setup(2, 16, 4, 0.0);
        let mut seq = random_seq(1, 8, 16, 11);
        seq.mask[6] = false;
        seq.mask[7] = false;
        let (a, _) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        for v in &mut seq.values[6 * 16..] {
            *v += 5.0;
        }
        let (b, _) = enc.encode(&store, &seq, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn pooling_edge_cases() {
        let (store, enc) = setup(1, 8, 2, 0.0);
        let c: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let out = EncoderOutput { batch: 1, len: 5, d_model: 8, states: c.repeat(5), mask: vec![true; 5] };
        let (pooled, _) = enc.pool_project(&store, &out).unwrap();
        for (a, b) in pooled.iter().zip(enc.proj.forward(&store, &c, 1)) {
            assert!((a - b).abs() < 1e-14);
        }

        let mut states = vec![0.0; 5 * 8];
        states[2 * 8..3 * 8].copy_from_slice(&c);
        let single = EncoderOutput { batch: 1, len: 5, d_model: 8, states, mask: vec![false, false, true, false, false] };
        assert_eq!(enc.pool_project(&store, &single).unwrap().0, enc.proj.forward(&store, &c, 1));

        let empty = EncoderOutput { batch: 1, len: 5, d_model: 8, states: vec![0.0; 40], mask: vec![false; 5] };
        assert_eq!(enc.pool_project(&store, &empty).unwrap_err(), Error::AllMasked { row: 0 });
    }

    #[test]
    fn detection_head_is_a_shared_dot_product() {
        let (mut store, enc) = setup(1, 8, 2, 0.0);
        store.get_mut(enc.detect.bias)[0] = 0.7;
        let s: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let mut states = s.repeat(2);
        states.extend(vec![0.0; 8]);
        let out = EncoderOutput { batch: 1, len: 3, d_model: 8, states, mask: vec![true; 3] };
        let logits = enc.per_position_logits(&store, &out);
        let w = store.get(enc.detect.weight);
        let direct: f64 = s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + 0.7;
        assert!((logits[0] - direct).abs() < 1e-14);
        assert_eq!(logits[0], logits[1]);
        assert_eq!(logits[2], 0.7);
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { heads: 3, ..EncoderConfig::default() }.validate().is_err());
        assert!(EncoderConfig { dropout: 1.0, ..EncoderConfig::default() }.validate().is_err());
        let c = EncoderConfig::default();
        assert_eq!((c.layers, c.d_model, c.heads, c.ffn_dim, c.proj_dim), (12, 256, 8, 1024, 128));
        assert_eq!(c.dropout, 0.1);
    }
}
