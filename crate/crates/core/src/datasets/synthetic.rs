//! Synthetic latent-factor domains.
//!
//! Every example is generated from a latent vector `z ~ N(0, I)` by a frozen
//! random decoder, so the ground-truth generative process is stationary and
//! fully determined by the seed:
//!
//! - dense payloads are latent-weighted sums of smooth periodic basis patterns,
//!   whose frequencies are whole periods over the input so that every basis
//!   pattern averages to zero across patch positions;
//! - token payloads assign each position a vocabulary slot and pick the token
//!   inside the slot by quantizing a random projection of `z`; the valid
//!   length is another projection of `z`;
//! - image-text pairs render both halves from the same `z`.
//!
//! The label is [`category`]: the argmax over the first `num_categories`
//! latent coordinates, which makes categories equiprobable and exactly
//! linearly separable in latent space.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::registry::{DatasetSpec, Modality, SYNTH_VOCAB};
use super::special_tokens::{FIRST_REGULAR, PAD};
use super::{Payload, RawExample, Target};
use crate::rng::{streams, SeededRng};
use crate::{Error, Result};

/// Vocabulary slots used by the token decoder.
pub const TOKEN_SLOTS: usize = 32;
/// Quantization buckets per slot.
pub const TOKEN_BUCKETS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticDomainConfig {
    pub modality: Modality,
    /// Dense dims, `[C, H, W]` or `[C, T]`; empty for pure text.
    pub dims: Vec<usize>,
    /// Token positions (text length or caption length); zero without text.
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub num_categories: usize,
    pub noise_scale: f64,
    pub num_train: usize,
    pub num_val: usize,
    pub seed: u64,
}

impl SyntheticDomainConfig {
    pub const DEFAULT_LATENT_DIM: usize = 8;
    pub const DEFAULT_CATEGORIES: usize = 4;
    pub const DEFAULT_NOISE: f64 = 0.1;

    /// Generator config whose payload shapes match `spec`.
    pub fn for_spec(spec: &DatasetSpec, seed: u64) -> Self {
        let (dims, max_tokens) = match spec.modality {
            Modality::Tokens => (Vec::new(), spec.input_dims[0]),
            Modality::ImageTextPair => (spec.input_dims.clone(), spec.text_len.unwrap_or(0)),
            _ => (spec.input_dims.clone(), 0),
        };
        Self {
            modality: spec.modality,
            dims,
            max_tokens,
            vocab_size: spec.vocab_size.unwrap_or(SYNTH_VOCAB),
            latent_dim: Self::DEFAULT_LATENT_DIM,
            num_categories: Self::DEFAULT_CATEGORIES,
            noise_scale: Self::DEFAULT_NOISE,
            num_train: spec.num_train,
            num_val: spec.num_val,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.latent_dim == 0 || self.num_categories == 0 {
            return bad("latent_dim and num_categories must be positive");
        }
        if self.num_categories > self.latent_dim {
            return bad("num_categories cannot exceed latent_dim");
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be nonnegative");
        }
        let needs_dense = !matches!(self.modality, Modality::Tokens);
        let needs_text = matches!(self.modality, Modality::Tokens | Modality::ImageTextPair);
        if needs_dense {
            let ok = match self.modality {
                Modality::Series1d => self.dims.len() == 2,
                _ => self.dims.len() == 3,
            };
            if !ok || self.dims.iter().any(|&d| d == 0) {
                return bad("dense dims do not fit the modality");
            }
        }
        if needs_text {
            if self.max_tokens < 2 {
                return bad("text needs at least two token positions");
            }
            if self.vocab_size < FIRST_REGULAR as usize + TOKEN_SLOTS * TOKEN_BUCKETS {
                return bad("vocabulary too small for the token decoder");
            }
        }
        Ok(())
    }
}

/// Ground-truth label rule: index of the largest of the first `k` latents.
pub fn category(z: &[f64], k: usize) -> usize {
    let mut best = 0;
    for c in 1..k {
        if z[c] > z[best] {
            best = c;
        }
    }
    best
}

/// Frozen random decoder from latents to payloads.
#[derive(Debug, Clone)]
pub struct SyntheticDecoder {
    config: SyntheticDomainConfig,
    /// One unit-RMS pattern per latent coordinate, laid out like the payload.
    basis: Vec<Vec<f64>>,
    /// Slot of every token position.
    slots: Vec<usize>,
    /// Unit latent-space direction per token position.
    directions: Vec<Vec<f64>>,
    length_direction: Vec<f64>,
}

impl SyntheticDecoder {
    pub fn new(config: &SyntheticDomainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derive(config.seed, streams::SYNTHETIC, u64::MAX);
        let basis = if config.modality == Modality::Tokens {
            Vec::new()
        } else {
            (0..config.latent_dim).map(|_| smooth_pattern(config.modality, &config.dims, &mut rng)).collect()
        };
        let (slots, directions, length_direction) = if config.max_tokens > 0 {
            let slots = (0..config.max_tokens).map(|_| rng.below(TOKEN_SLOTS)).collect();
            let directions = (0..config.max_tokens).map(|_| unit_vector(config.latent_dim, &mut rng)).collect();
            (slots, directions, unit_vector(config.latent_dim, &mut rng))
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        Ok(Self { config: config.clone(), basis, slots, directions, length_direction })
    }

    pub fn config(&self) -> &SyntheticDomainConfig {
        &self.config
    }

    /// Renders one payload; `noise` drives the additive / substitution noise.
    pub fn render(&self, z: &[f64], noise: &mut SeededRng) -> Payload {
        let cfg = &self.config;
        match cfg.modality {
            Modality::Tokens => {
                let (ids, mask) = self.render_tokens(z, noise);
                Payload::Tokens { ids, mask }
            }
            Modality::ImageTextPair => {
                let values = self.render_dense(z, noise);
                let (ids, mask) = self.render_tokens(z, noise);
                Payload::Pair { dims: cfg.dims.clone(), values, ids, mask }
            }
            _ => Payload::Dense { dims: cfg.dims.clone(), values: self.render_dense(z, noise) },
        }
    }

    fn render_dense(&self, z: &[f64], noise: &mut SeededRng) -> Vec<f32> {
        let len = self.basis[0].len();
        let scale = 1.0 / libm::sqrt(self.config.latent_dim as f64);
        let mut out = vec![0.0f64; len];
        for (zk, b) in z.iter().zip(&self.basis) {
            for (o, &v) in out.iter_mut().zip(b) {
                *o += scale * zk * v;
            }
        }
        let sigma = self.config.noise_scale;
        out.iter()
            .map(|&v| if sigma > 0.0 { (v + sigma * noise.normal()) as f32 } else { v as f32 })
            .collect()
    }

    fn render_tokens(&self, z: &[f64], noise: &mut SeededRng) -> (Vec<u32>, Vec<bool>) {
        let max = self.config.max_tokens;
        let min_len = max.div_ceil(2).max(2);
        let u = normal_cdf(dot(z, &self.length_direction));
        let len = (min_len + (u * (max - min_len + 1) as f64) as usize).min(max);
        let mut ids = vec![PAD; max];
        let mut mask = vec![false; max];
        let p = self.config.noise_scale.min(1.0);
        for j in 0..len {
            let q = normal_cdf(dot(z, &self.directions[j]));
            let bucket = ((q * TOKEN_BUCKETS as f64) as usize).min(TOKEN_BUCKETS - 1);
            let mut slot = self.slots[j];
            let mut b = bucket;
            if p > 0.0 && noise.uniform() < p {
                slot = noise.below(TOKEN_SLOTS);
                b = noise.below(TOKEN_BUCKETS);
            }
            ids[j] = FIRST_REGULAR + (slot * TOKEN_BUCKETS + b) as u32;
            mask[j] = true;
        }
        (ids, mask)
    }
}

/// Generated dataset with its latents kept for oracle checks.
#[derive(Debug, Clone)]
pub struct SyntheticDomain {
    pub config: SyntheticDomainConfig,
    pub train: Vec<RawExample>,
    pub val: Vec<RawExample>,
    pub train_latents: Vec<Vec<f64>>,
    pub val_latents: Vec<Vec<f64>>,
}

/// Draws latents, renders payloads and labels for both splits.
pub fn make_synthetic_domain(config: &SyntheticDomainConfig) -> Result<SyntheticDomain> {
    let decoder = SyntheticDecoder::new(config)?;
    let mut gen = |index: usize| {
        let mut rng = SeededRng::derive(config.seed, streams::SYNTHETIC, index as u64);
        let z: Vec<f64> = (0..config.latent_dim).map(|_| rng.normal()).collect();
        let payload = decoder.render(&z, &mut rng);
        let label = Some(Target::Category(category(&z, config.num_categories)));
        (RawExample { payload, label }, z)
    };
    let (train, train_latents) = (0..config.num_train).map(&mut gen).unzip();
    let (val, val_latents) = (config.num_train..config.num_train + config.num_val).map(&mut gen).unzip();
    Ok(SyntheticDomain { config: config.clone(), train, val, train_latents, val_latents })
}

fn smooth_pattern(modality: Modality, dims: &[usize], rng: &mut SeededRng) -> Vec<f64> {
    const WAVES: usize = 4;
    const MAX_FREQ: usize = 3;
    let (channels, height, width) = match modality {
        Modality::Series1d => (dims[0], 1, dims[1]),
        _ => (dims[0], dims[1], dims[2]),
    };
    let mut out = vec![0.0f64; channels * height * width];
    for _ in 0..WAVES {
        // Whole periods only, at least one along some axis.
        let fx = 1 + rng.below(MAX_FREQ);
        let fy = if height > 1 { rng.below(MAX_FREQ + 1) } else { 0 };
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let gains: Vec<f64> = (0..channels).map(|_| rng.normal()).collect();
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let arg = 2.0 * PI * (fx as f64 * x as f64 / width as f64 + fy as f64 * y as f64 / height as f64);
                    out[(c * height + y) * width + x] += gains[c] * libm::cos(arg + phase);
                }
            }
        }
    }
    let rms = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64);
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = libm::sqrt(dot(&v, &v));
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::load_spec;

    fn cfg(name: &str, seed: u64) -> SyntheticDomainConfig {
        let mut c = SyntheticDomainConfig::for_spec(&load_spec(name).unwrap(), seed);
        c.num_train = 64;
        c.num_val = 16;
        c
    }

    #[test]
    fn equal_latents_render_identically_without_noise() {
        let mut c = cfg("synth_image", 3);
        c.noise_scale = 0.0;
        let dec = SyntheticDecoder::new(&c).unwrap();
        let z = [0.3, -1.0, 2.0, 0.1, 0.0, 0.5, -0.2, 1.1];
        let a = dec.render(&z, &mut SeededRng::new(1));
        let b = dec.render(&z, &mut SeededRng::new(2));
        assert_eq!(a, b);
    }

    #[test]
    fn labels_follow_latent_rule() {
        for name in ["synth_image", "synth_series", "synth_tokens", "synth_pair"] {
            let mut c = cfg(name, 11);
            c.noise_scale = 0.0;
            let d = make_synthetic_domain(&c).unwrap();
            for (ex, z) in d.train.iter().zip(&d.train_latents) {
                assert_eq!(ex.label, Some(Target::Category(category(z, c.num_categories))));
            }
        }
    }

    #[test]
    fn seeds_change_the_dataset() {
        let a = make_synthetic_domain(&cfg("synth_series", 1)).unwrap();
        let b = make_synthetic_domain(&cfg("synth_series", 2)).unwrap();
        assert_ne!(a.train[0].payload, b.train[0].payload);
        let a2 = make_synthetic_domain(&cfg("synth_series", 1)).unwrap();
        assert_eq!(a.train, a2.train);
    }

    #[test]
    fn tokens_are_in_vocabulary_and_masked_consistently() {
        let c = cfg("synth_tokens", 5);
        let d = make_synthetic_domain(&c).unwrap();
        for ex in &d.train {
            let (ids, mask) = ex.payload.tokens().unwrap();
            assert_eq!(ids.len(), 128);
            let valid = mask.iter().filter(|&&m| m).count();
            assert!(valid >= 64);
            assert!(mask[..valid].iter().all(|&m| m) && mask[valid..].iter().all(|&m| !m));
            for (&id, &m) in ids.iter().zip(mask) {
                assert!((id as usize) < c.vocab_size);
                assert_eq!(m, id != PAD);
            }
        }
    }

    #[test]
    fn basis_patterns_average_to_zero_over_patch_grid() {
        let c = cfg("synth_image", 9);
        let dec = SyntheticDecoder::new(&c).unwrap();
        for b in &dec.basis {
            // mean over the 8x8 patch grid at every within-patch offset
            for ch in 0..3 {
                for oy in 0..4 {
                    for ox in 0..4 {
                        let mut s = 0.0;
                        for gy in 0..8 {
                            for gx in 0..8 {
                                s += b[(ch * 32 + gy * 4 + oy) * 32 + gx * 4 + ox];
                            }
                        }
                        assert!(s.abs() < 1e-9, "{s}");
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg("synth_image", 0);
        c.num_categories = 9;
        assert!(make_synthetic_domain(&c).is_err());
        let mut c = cfg("synth_tokens", 0);
        c.vocab_size = 10;
        assert!(make_synthetic_domain(&c).is_err());
    }
}
