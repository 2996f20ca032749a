//! Deterministic per-modality preprocessing for real data.
//!
//! Audio lives in the std crate, which has an FFT.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::special_tokens::{PAD, SEP, UNK, FIRST_REGULAR};
use super::{DatasetSpec, Modality};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// An `H x W x C` interleaved pixel buffer.
#[derive(Debug, Clone, Copy)]
pub struct Pixels<'a> {
    pub data: &'a [f32],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Resampling chain applied before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagePipeline {
    /// Inputs already at the target size.
    PassThrough,
    /// Direct bilinear resize to the target size.
    Resize,
    /// Resize to 480x640 (HxW), center-crop 480x480, resize to the target.
    CaptionCrop,
}

impl ImagePipeline {
    pub fn for_spec(spec: &DatasetSpec) -> Self {
        match spec.modality {
            Modality::ImageTextPair => ImagePipeline::CaptionCrop,
            _ if spec.input_dims.get(1) == Some(&32) => ImagePipeline::PassThrough,
            _ => ImagePipeline::Resize,
        }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping, per channel,
/// on a channel-first `C x H x W` buffer.
pub fn resize_bilinear(src: &[f32], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; channels * out_h * out_w];
    let taps = |size_in: usize, size_out: usize, i: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * size_in as f64 / size_out as f64 - 0.5).max(0.0);
        let x0 = (x as usize).min(size_in - 1);
        let x1 = (x0 + 1).min(size_in - 1);
        (x0, x1, x - x0 as f64)
    };
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = taps(h, out_h, oy);
            for ox in 0..out_w {
                let (x0, x1, fx) = taps(w, out_w, ox);
                let p = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[(c * out_h + oy) * out_w + ox] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}

fn center_crop(src: &[f32], channels: usize, h: usize, w: usize, ch: usize, cw: usize) -> Vec<f32> {
    let (top, left) = ((h - ch) / 2, (w - cw) / 2);
    let mut out = Vec::with_capacity(channels * ch * cw);
    for c in 0..channels {
        for y in top..top + ch {
            let row = (c * h + y) * w;
            out.extend_from_slice(&src[row + left..row + left + cw]);
        }
    }
    out
}

/// Image to a normalized channel-first array of the spec's spatial size.
/// The channel count of the input is kept.
pub fn preprocess_image(raw: Pixels<'_>, spec: &DatasetSpec) -> Result<(Vec<usize>, Vec<f32>)> {
    let Pixels { data, height, width, channels } = raw;
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidArgument(format!("images need 1 or 3 channels, got {channels}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("zero-sized image".into()));
    }
    if data.len() != height * width * channels {
        return Err(Error::Shape(format!("{} pixels for {height}x{width}x{channels}", data.len())));
    }
    let (th, tw) = match spec.input_dims.as_slice() {
        [_, h, w] => (*h, *w),
        _ => return Err(Error::InvalidArgument(format!("spec `{}` is not an image spec", spec.name))),
    };
    let mut chw = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                chw[(c * height + y) * width + x] = data[(y * width + x) * channels + c];
            }
        }
    }
    let out = match ImagePipeline::for_spec(spec) {
        ImagePipeline::PassThrough if (height, width) == (th, tw) => chw,
        ImagePipeline::PassThrough | ImagePipeline::Resize => resize_bilinear(&chw, channels, height, width, th, tw),
        ImagePipeline::CaptionCrop => {
            let big = resize_bilinear(&chw, channels, height, width, 480, 640);
            let crop = center_crop(&big, channels, 480, 640, 480, 480);
            resize_bilinear(&crop, channels, 480, 480, th, tw)
        }
    };
    Ok((vec![channels, th, tw], normalize(out, spec)))
}

fn normalize(mut v: Vec<f32>, spec: &DatasetSpec) -> Vec<f32> {
    let inv = 1.0 / spec.std;
    v.iter_mut().for_each(|x| *x = ((*x as f64 - spec.mean) * inv) as f32);
    v
}

/// Maps text to token ids using the shared special ids.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> u32 {
        PAD
    }
    fn sep_id(&self) -> u32 {
        SEP
    }
}

/// Lower-cased whitespace splitting over a fixed word list.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer {
    vocab: BTreeMap<String, u32>,
}

impl WhitespaceTokenizer {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = BTreeMap::new();
        for w in words {
            let next = FIRST_REGULAR + vocab.len() as u32;
            vocab.entry(w.to_lowercase()).or_insert(next);
        }
        Self { vocab }
    }

    pub fn id(&self, word: &str) -> u32 {
        self.vocab.get(&word.to_lowercase()).copied().unwrap_or(UNK)
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    fn vocab_size(&self) -> usize {
        FIRST_REGULAR as usize + self.vocab.len()
    }
}

/// Pads with `pad` or keeps the prefix so the result has exactly `max_len` ids.
pub fn pad_or_truncate(mut ids: Vec<u32>, max_len: usize, pad: u32) -> Result<(Vec<u32>, Vec<bool>)> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, pad);
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok((ids, mask))
}

pub fn preprocess_text(text: &str, tokenizer: &dyn Tokenizer, max_len: usize) -> Result<(Vec<u32>, Vec<bool>)> {
    pad_or_truncate(tokenizer.encode(text), max_len, tokenizer.pad_id())
}

/// A random 320-step window of a channel-major `52 x T` series, normalized.
pub fn preprocess_sensor(series: &[f32], channels: usize, spec: &DatasetSpec, rng: &mut SeededRng) -> Result<Vec<f32>> {
    const CHANNELS: usize = 52;
    const WINDOW: usize = 320;
    if channels != CHANNELS {
        return Err(Error::InvalidArgument(format!("sensor series need {CHANNELS} channels, got {channels}")));
    }
    if series.len() % channels != 0 {
        return Err(Error::Shape(format!("{} values do not split into {channels} channels", series.len())));
    }
    let t = series.len() / channels;
    if t < WINDOW {
        return Err(Error::InvalidArgument(format!("series of length {t} is shorter than {WINDOW}")));
    }
    let start = rng.below(t - WINDOW + 1);
    let mut out = Vec::with_capacity(CHANNELS * WINDOW);
    for c in 0..CHANNELS {
        out.extend_from_slice(&series[c * t + start..c * t + start + WINDOW]);
    }
    Ok(normalize(out, spec))
}

/// Tokenized `question [SEP] answer`, padded or truncated to `max_len`.
pub fn qa_sequence(question: &str, answer: &str, tokenizer: &dyn Tokenizer, max_len: usize) -> Result<(Vec<u32>, Vec<bool>)> {
    let mut ids = tokenizer.encode(question);
    ids.push(tokenizer.sep_id());
    ids.extend(tokenizer.encode(answer));
    pad_or_truncate(ids, max_len, tokenizer.pad_id())
}

/// Keeps the correct answer with probability 1/2, otherwise substitutes a
/// uniformly drawn wrong one. Returns ids, mask and `1` iff kept.
pub fn pair_vqa(
    question: &str,
    correct: &str,
    wrong_pool: &[&str],
    tokenizer: &dyn Tokenizer,
    rng: &mut SeededRng,
) -> Result<(Vec<u32>, Vec<bool>, u8)> {
    if wrong_pool.is_empty() {
        return Err(Error::InvalidArgument("wrong-answer pool is empty".into()));
    }
    let keep = rng.bernoulli(0.5);
    let answer = if keep { correct } else { wrong_pool[rng.below(wrong_pool.len())] };
    let (ids, mask) = qa_sequence(question, answer, tokenizer, 32)?;
    Ok((ids, mask, keep as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::load_spec;

    fn separable_resize(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        fn weights(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
            (0..n_out)
                .map(|o| {
                    let mut row = vec![0.0; n_in];
                    let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let lo = x.floor() as usize;
                    let hi = (lo + 1).min(n_in - 1);
                    row[lo] += 1.0 - (x - lo as f64);
                    row[hi] += x - lo as f64;
                    row
                })
                .collect()
        }
        let (wy, wx) = (weights(h, oh), weights(w, ow));
        // horizontal pass then vertical pass
        let mut tmp = vec![0.0; h * ow];
        for y in 0..h {
            for ox in 0..ow {
                tmp[y * ow + ox] = (0..w).map(|x| wx[ox][x] * src[y * w + x] as f64).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                out[oy * ow + ox] = (0..h).map(|y| wy[oy][y] * tmp[y * ow + ox]).sum();
            }
        }
        out
    }

    #[test]
    fn xray_resize_matches_separable_oracle() {
        let mut rng = SeededRng::new(1);
        let raw: Vec<f32> = (0..320 * 320).map(|_| rng.uniform() as f32).collect();
        let spec = load_spec("chexpert").unwrap();
        let (dims, out) = preprocess_image(Pixels { data: &raw, height: 320, width: 320, channels: 1 }, &spec).unwrap();
        assert_eq!(dims, vec![1, 224, 224]);
        let oracle = separable_resize(&raw, 320, 320, 224, 224);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn caption_images_and_small_images() {
        let raw = vec![0.5f32; 600 * 400 * 3];
        let (dims, out) =
            preprocess_image(Pixels { data: &raw, height: 600, width: 400, channels: 3 }, &load_spec("coco").unwrap()).unwrap();
        assert_eq!(dims, vec![3, 224, 224]);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-6));

        let raw: Vec<f32> = (0..32 * 32 * 3).map(|i| i as f32).collect();
        let (dims, out) =
            preprocess_image(Pixels { data: &raw, height: 32, width: 32, channels: 3 }, &load_spec("cifar10").unwrap()).unwrap();
        assert_eq!(dims, vec![3, 32, 32]);
        assert_eq!(out[1], raw[3]);
        assert_eq!(out[32 * 32], raw[1]);
        let bad = Pixels { data: &raw, height: 32, width: 16, channels: 6 };
        assert!(preprocess_image(bad, &load_spec("cifar10").unwrap()).is_err());
    }

    #[test]
    fn text_padding_and_truncation() {
        let tok = WhitespaceTokenizer::new(["a", "b", "c"]);
        let (ids, mask) = preprocess_text("a b c a zzz", &tok, 128).unwrap();
        assert_eq!(ids.len(), 128);
        assert_eq!(&ids[..5], &[3, 4, 5, 3, UNK]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 5);
        assert!(ids[5..].iter().all(|&i| i == PAD));
        let long = ["b"; 200].join(" ");
        let (ids, mask) = preprocess_text(&long, &tok, 128).unwrap();
        assert!(ids.iter().all(|&i| i == 4) && mask.iter().all(|&m| m));
        assert!(preprocess_text("a", &tok, 0).is_err());
    }

    #[test]
    fn sensor_windows_are_contiguous() {
        let spec = load_spec("pamap2").unwrap();
        let t = 1000;
        let series: Vec<f32> = (0..52 * t).map(|i| i as f32).collect();
        let w = preprocess_sensor(&series, 52, &spec, &mut SeededRng::new(3)).unwrap();
        let start = w[0] as usize;
        for c in 0..52 {
            for i in 0..320 {
                assert_eq!(w[c * 320 + i], series[c * t + start + i]);
            }
        }
        assert_eq!(w, preprocess_sensor(&series, 52, &spec, &mut SeededRng::new(3)).unwrap());
        let exact: Vec<f32> = (0..52 * 320).map(|i| i as f32).collect();
        assert_eq!(preprocess_sensor(&exact, 52, &spec, &mut SeededRng::new(9)).unwrap(), exact);
        assert!(preprocess_sensor(&exact[..52 * 300], 52, &spec, &mut SeededRng::new(9)).is_err());
        assert!(preprocess_sensor(&exact, 51, &spec, &mut SeededRng::new(9)).is_err());
    }

    #[test]
    fn vqa_pairs_keep_half_the_answers() {
        let tok = WhitespaceTokenizer::new(["what", "is", "red", "blue", "green"]);
        let mut rng = SeededRng::new(4);
        let mut corrupt = 0;
        for _ in 0..10_000 {
            let (ids, mask, label) = pair_vqa("what is", "red", &["blue", "green"], &tok, &mut rng).unwrap();
            assert_eq!((ids.len(), mask.len()), (32, 32));
            assert_eq!(ids[2], SEP);
            assert_eq!(label == 1, ids[3] == tok.id("red"));
            corrupt += (label == 0) as usize;
        }
        assert!((corrupt as f64 / 1e4 - 0.5).abs() < 0.02);
        assert!(pair_vqa("q", "a", &[], &tok, &mut rng).is_err());
    }
}
