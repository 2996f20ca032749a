use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::transfer::Metric;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Modality {
    Image2d,
    Spectrogram2d,
    Series1d,
    Tokens,
    ImageTextPair,
}

impl Modality {
    pub const ALL: [Modality; 5] =
        [Modality::Image2d, Modality::Spectrogram2d, Modality::Series1d, Modality::Tokens, Modality::ImageTextPair];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image2d => "image2d",
            Modality::Spectrogram2d => "spectrogram2d",
            Modality::Series1d => "series1d",
            Modality::Tokens => "tokens",
            Modality::ImageTextPair => "image_text_pair",
        }
    }

    /// Grid-patched continuous input (images and spectrograms).
    pub fn is_grid(self) -> bool {
        matches!(self, Modality::Image2d | Modality::Spectrogram2d)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modality `{s}`")))
    }
}

/// How a payload is cut into embedding positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Patch {
    Grid { height: usize, width: usize },
    Segment { len: usize },
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    Pretrain,
    Transfer,
    Both,
}

/// Shape and preprocessing contract for one dataset.
///
/// `input_dims` is `[C, H, W]` for grids and the image half of a pair,
/// `[C, T]` for series and `[max_tokens]` for text.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSpec {
    pub name: String,
    pub domain: String,
    pub modality: Modality,
    pub phase: Phase,
    pub input_dims: Vec<usize>,
    pub patch: Patch,
    /// Caption length for image-text pairs.
    pub text_len: Option<usize>,
    pub vocab_size: Option<usize>,
    pub sequence_length: usize,
    pub batch_size: usize,
    pub num_train: usize,
    pub num_val: usize,
    pub mean: f64,
    pub std: f64,
    pub metric: Option<Metric>,
}

impl DatasetSpec {
    /// Number of embedding positions implied by dims and patching.
    pub fn derived_sequence_length(&self) -> Result<usize> {
        let dims = &self.input_dims;
        let bad = |msg: String| Err(Error::InvalidArgument(format!("spec `{}`: {msg}", self.name)));
        match (self.modality, self.patch) {
            (Modality::Image2d | Modality::Spectrogram2d | Modality::ImageTextPair, Patch::Grid { height, width }) => {
                if dims.len() != 3 {
                    return bad(format!("expected [C, H, W], got {dims:?}"));
                }
                if height == 0 || width == 0 || dims[1] % height != 0 || dims[2] % width != 0 {
                    return bad(format!("patch {height}x{width} does not divide {}x{}", dims[1], dims[2]));
                }
                let grid = (dims[1] / height) * (dims[2] / width);
                if self.modality == Modality::ImageTextPair {
                    match self.text_len {
                        Some(t) if t > 0 => Ok(grid + t),
                        _ => bad("image-text pair needs a positive text_len".to_owned()),
                    }
                } else {
                    Ok(grid)
                }
            }
            (Modality::Series1d, Patch::Segment { len }) => {
                if dims.len() != 2 {
                    return bad(format!("expected [C, T], got {dims:?}"));
                }
                if len == 0 || dims[1] % len != 0 {
                    return bad(format!("segment {len} does not divide length {}", dims[1]));
                }
                Ok(dims[1] / len)
            }
            (Modality::Tokens, Patch::Token) => match dims.as_slice() {
                [t] if *t > 0 => Ok(*t),
                _ => bad(format!("expected [max_tokens], got {dims:?}")),
            },
            (m, p) => bad(format!("patching {p:?} is not valid for modality {m}")),
        }
    }

    /// Checks shape invariants and that the declared sequence length is consistent.
    pub fn validate(&self) -> Result<()> {
        let derived = self.derived_sequence_length()?;
        if derived != self.sequence_length {
            return Err(Error::InvalidArgument(format!(
                "spec `{}`: declared sequence length {} but dims imply {derived}",
                self.name, self.sequence_length
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!("spec `{}`: batch size must be positive", self.name)));
        }
        if !(self.std > 0.0) {
            return Err(Error::InvalidArgument(format!("spec `{}`: std must be positive", self.name)));
        }
        if matches!(self.modality, Modality::Tokens | Modality::ImageTextPair) && self.vocab_size.unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument(format!("spec `{}`: text specs need a vocab size", self.name)));
        }
        Ok(())
    }

    /// Channels of the dense part (`None` for pure text).
    pub fn channels(&self) -> Option<usize> {
        match self.modality {
            Modality::Tokens => None,
            _ => self.input_dims.first().copied(),
        }
    }

    /// Token positions carried by the payload.
    pub fn token_len(&self) -> Option<usize> {
        match self.modality {
            Modality::Tokens => self.input_dims.first().copied(),
            Modality::ImageTextPair => self.text_len,
            _ => None,
        }
    }
}

/// Immutable lookup table of dataset specs.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    specs: Vec<DatasetSpec>,
}

impl Registry {
    /// Every benchmark dataset plus the synthetic desk-scale domains.
    pub fn builtin() -> Self {
        let mut specs = Vec::new();
        for &(name, domain, phase, train, val) in NATURAL_IMAGES {
            specs.push(grid(name, domain, Modality::Image2d, phase, [3, 32, 32], 4, 64, train, val));
        }
        for &(name, domain, phase, train, val) in SPEECH {
            specs.push(grid(name, domain, Modality::Spectrogram2d, phase, [1, 224, 224], 16, 64, train, val));
        }
        for &(name, phase, train, val, metric) in TEXT {
            specs.push(tokens(name, "text", phase, 128, BERT_VOCAB, 128, train, val, metric));
        }
        let mut chexpert =
            grid("chexpert", "medical_imaging", Modality::Image2d, Phase::Both, [3, 224, 224], 16, 64, 223_414, 234);
        chexpert.metric = Some(Metric::MeanAuroc);
        specs.push(chexpert);
        specs.push(DatasetSpec {
            name: "pamap2".into(),
            domain: "sensor".into(),
            modality: Modality::Series1d,
            phase: Phase::Both,
            input_dims: vec![52, 320],
            patch: Patch::Segment { len: 5 },
            text_len: None,
            vocab_size: None,
            sequence_length: 64,
            batch_size: 256,
            num_train: 50_000,
            num_val: 10_000,
            mean: 0.0,
            std: 1.0,
            metric: Some(Metric::Accuracy),
        });
        for &(name, phase, train, val) in &[("coco", Phase::Pretrain, 117_266, 4_952), ("vqa", Phase::Transfer, 248_349, 121_512)] {
            specs.push(pair(name, "image_text", phase, [3, 224, 224], 16, 32, BERT_VOCAB, 64, train, val));
        }

        let mut synth_image =
            grid("synth_image", "synthetic_image", Modality::Image2d, Phase::Both, [3, 32, 32], 4, 32, 2048, 1024);
        synth_image.metric = Some(Metric::Accuracy);
        specs.push(synth_image);
        let mut synth_speech = grid(
            "synth_speech",
            "synthetic_speech",
            Modality::Spectrogram2d,
            Phase::Both,
            [1, 224, 224],
            16,
            32,
            2048,
            1024,
        );
        synth_speech.metric = Some(Metric::Accuracy);
        specs.push(synth_speech);
        specs.push(DatasetSpec {
            name: "synth_series".into(),
            domain: "synthetic_series".into(),
            modality: Modality::Series1d,
            phase: Phase::Both,
            input_dims: vec![52, 320],
            patch: Patch::Segment { len: 5 },
            text_len: None,
            vocab_size: None,
            sequence_length: 64,
            batch_size: 32,
            num_train: 2048,
            num_val: 1024,
            mean: 0.0,
            std: 1.0,
            metric: Some(Metric::Accuracy),
        });
        specs.push(tokens(
            "synth_tokens",
            "synthetic_text",
            Phase::Both,
            128,
            SYNTH_VOCAB,
            32,
            2048,
            1024,
            Some(Metric::Accuracy),
        ));
        let mut synth_pair =
            pair("synth_pair", "synthetic_image_text", Phase::Both, [3, 32, 32], 4, 32, SYNTH_VOCAB, 32, 2048, 1024);
        synth_pair.metric = Some(Metric::Accuracy);
        specs.push(synth_pair);

        Self { specs }
    }

    pub fn from_specs(specs: Vec<DatasetSpec>) -> Result<Self> {
        let mut reg = Self { specs: Vec::new() };
        for s in specs {
            reg.insert(s)?;
        }
        Ok(reg)
    }

    pub fn get(&self, name: &str) -> Result<&DatasetSpec> {
        self.specs.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownSpec {
            name: name.to_string(),
            registered: self.names().join(", "),
        })
    }

    /// Adds or replaces a spec after validating it.
    pub fn insert(&mut self, spec: DatasetSpec) -> Result<()> {
        spec.validate()?;
        match self.specs.iter_mut().find(|s| s.name == spec.name) {
            Some(slot) => *slot = spec,
            None => self.specs.push(spec),
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatasetSpec> {
        self.specs.iter()
    }
}

/// Looks a spec up in the built-in registry.
pub fn load_spec(name: &str) -> Result<DatasetSpec> {
    Registry::builtin().get(name).cloned()
}

/// BERT base uncased vocabulary size.
const BERT_VOCAB: usize = 30_522;
/// Vocabulary of the synthetic text generator (3 reserved + 32 slots x 8 buckets).
pub(crate) const SYNTH_VOCAB: usize = 3 + 32 * 8;

type Row = (&'static str, &'static str, Phase, usize, usize);

const NATURAL_IMAGES: &[Row] = &[
    ("cifar10", "natural_images", Phase::Both, 50_000, 10_000),
    ("textures", "natural_images", Phase::Transfer, 3_760, 1_880),
    ("aircraft", "natural_images", Phase::Transfer, 6_667, 3_333),
    ("birds", "natural_images", Phase::Transfer, 5_994, 5_794),
    ("traffic_signs", "natural_images", Phase::Transfer, 600, 300),
    ("flowers", "natural_images", Phase::Transfer, 6_507, 1_682),
];

const SPEECH: &[Row] = &[
    ("librispeech", "speech", Phase::Both, 145_265, 8_251),
    ("voxceleb", "speech", Phase::Transfer, 2_148, 555),
    ("fluent_speech", "speech", Phase::Transfer, 26_250, 3_793),
    ("google_speech", "speech", Phase::Transfer, 115_816, 11_005),
    ("audio_mnist", "speech", Phase::Transfer, 24_000, 6_000),
];

const TEXT: &[(&str, Phase, usize, usize, Option<Metric>)] = &[
    ("wikitext103", Phase::Pretrain, 1_165_029, 2_461, None),
    ("cola", Phase::Transfer, 8_551, 1_043, Some(Metric::Pearson)),
    ("sst2", Phase::Transfer, 67_349, 872, Some(Metric::Accuracy)),
    ("mrpc", Phase::Transfer, 3_668, 408, Some(Metric::Accuracy)),
    ("qqp", Phase::Transfer, 363_846, 40_430, Some(Metric::Accuracy)),
    ("stsb", Phase::Transfer, 5_749, 1_500, Some(Metric::Spearman)),
    ("mnli", Phase::Transfer, 392_702, 19_647, Some(Metric::Accuracy)),
    ("qnli", Phase::Transfer, 104_743, 5_463, Some(Metric::Accuracy)),
    ("rte", Phase::Transfer, 2_490, 277, Some(Metric::Accuracy)),
    ("wnli", Phase::Transfer, 635, 71, Some(Metric::Accuracy)),
];

#[allow(clippy::too_many_arguments)]
fn grid(
    name: &str,
    domain: &str,
    modality: Modality,
    phase: Phase,
    dims: [usize; 3],
    patch: usize,
    batch: usize,
    train: usize,
    val: usize,
) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        domain: domain.into(),
        modality,
        phase,
        input_dims: dims.to_vec(),
        patch: Patch::Grid { height: patch, width: patch },
        text_len: None,
        vocab_size: None,
        sequence_length: (dims[1] / patch) * (dims[2] / patch),
        batch_size: batch,
        num_train: train,
        num_val: val,
        mean: 0.0,
        std: 1.0,
        metric: if phase == Phase::Pretrain { None } else { Some(Metric::Accuracy) },
    }
}

#[allow(clippy::too_many_arguments)]
fn tokens(
    name: &str,
    domain: &str,
    phase: Phase,
    len: usize,
    vocab: usize,
    batch: usize,
    train: usize,
    val: usize,
    metric: Option<Metric>,
) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        domain: domain.into(),
        modality: Modality::Tokens,
        phase,
        input_dims: vec![len],
        patch: Patch::Token,
        text_len: None,
        vocab_size: Some(vocab),
        sequence_length: len,
        batch_size: batch,
        num_train: train,
        num_val: val,
        mean: 0.0,
        std: 1.0,
        metric,
    }
}

#[allow(clippy::too_many_arguments)]
fn pair(
    name: &str,
    domain: &str,
    phase: Phase,
    dims: [usize; 3],
    patch: usize,
    text_len: usize,
    vocab: usize,
    batch: usize,
    train: usize,
    val: usize,
) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        domain: domain.into(),
        modality: Modality::ImageTextPair,
        phase,
        input_dims: dims.to_vec(),
        patch: Patch::Grid { height: patch, width: patch },
        text_len: Some(text_len),
        vocab_size: Some(vocab),
        sequence_length: (dims[1] / patch) * (dims[2] / patch) + text_len,
        batch_size: batch,
        num_train: train,
        num_val: val,
        mean: 0.0,
        std: 1.0,
        metric: if phase == Phase::Pretrain { None } else { Some(Metric::Accuracy) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_resolve() {
        let c = load_spec("cifar10").unwrap();
        assert_eq!(c.input_dims, vec![3, 32, 32]);
        assert_eq!(c.patch, Patch::Grid { height: 4, width: 4 });
        assert_eq!(c.batch_size, 64);

        let l = load_spec("librispeech").unwrap();
        assert_eq!(l.input_dims, vec![1, 224, 224]);
        assert_eq!(l.patch, Patch::Grid { height: 16, width: 16 });
        assert_eq!(l.batch_size, 64);

        let p = load_spec("pamap2").unwrap();
        assert_eq!(p.input_dims, vec![52, 320]);
        assert_eq!(p.patch, Patch::Segment { len: 5 });
        assert_eq!(p.batch_size, 256);
    }

    #[test]
    fn unknown_name_lists_registered_specs() {
        match load_spec("imagenet") {
            Err(Error::UnknownSpec { name, registered }) => {
                assert_eq!(name, "imagenet");
                assert!(registered.contains("cifar10") && registered.contains("synth_tokens"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_builtin_spec_validates() {
        for s in Registry::builtin().iter() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn indivisible_patch_is_rejected() {
        let mut s = load_spec("cifar10").unwrap();
        s.patch = Patch::Grid { height: 5, width: 5 };
        assert!(s.derived_sequence_length().is_err());
        let mut r = Registry::builtin();
        assert!(r.insert(s).is_err());
    }

    #[test]
    fn declared_length_must_match_dims() {
        let mut s = load_spec("pamap2").unwrap();
        s.sequence_length = 63;
        assert!(s.validate().is_err());
    }
}
