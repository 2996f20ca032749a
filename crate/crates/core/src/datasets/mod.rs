//! Dataset shape registry, preprocessing and synthetic latent-factor domains.

pub mod preprocess;
mod registry;
pub mod synthetic;

use alloc::vec::Vec;

pub use self::registry::{load_spec, DatasetSpec, Modality, Patch, Phase, Registry};
pub use self::synthetic::{make_synthetic_domain, SyntheticDomain, SyntheticDomainConfig};

/// Reserved token ids shared by every tokenizer in the toolkit.
pub mod special_tokens {
    pub const PAD: u32 = 0;
    pub const SEP: u32 = 1;
    pub const UNK: u32 = 2;
    /// First id available to ordinary vocabulary entries.
    pub const FIRST_REGULAR: u32 = 3;
}

/// Raw model input before embedding.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Payload {
    /// Channel-first numeric array (`C x H x W` or `C x T`).
    Dense { dims: Vec<usize>, values: Vec<f32> },
    /// Token ids padded to a fixed length with a validity mask.
    Tokens { ids: Vec<u32>, mask: Vec<bool> },
    /// Image followed by text, always in that order.
    Pair { dims: Vec<usize>, values: Vec<f32>, ids: Vec<u32>, mask: Vec<bool> },
}

impl Payload {
    pub fn dense(&self) -> Option<(&[usize], &[f32])> {
        match self {
            Payload::Dense { dims, values } | Payload::Pair { dims, values, .. } => Some((dims, values)),
            Payload::Tokens { .. } => None,
        }
    }

    pub fn tokens(&self) -> Option<(&[u32], &[bool])> {
        match self {
            Payload::Tokens { ids, mask } | Payload::Pair { ids, mask, .. } => Some((ids, mask)),
            Payload::Dense { .. } => None,
        }
    }
}

/// Downstream task target.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Target {
    Category(usize),
    MultiLabel(Vec<bool>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawExample {
    pub payload: Payload,
    pub label: Option<Target>,
}
