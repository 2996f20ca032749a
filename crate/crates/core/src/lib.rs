#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

//! Domain-agnostic self-supervised pretraining core.
//!
//! Every modality is turned into a sequence of `d_model` vectors by a small
//! modality-specific embedder. From there on the pipeline is shared: one fixed
//! transformer encoder, a mean-pooled 128-d projection, and one of two
//! pretraining objectives that only ever touch embedding sequences:
//!
//! - **e-Mix**: embedding-level mixup with a contrastive loss against virtual
//!   labels ([`objectives::emix`]).
//! - **ShED**: shuffled-embedding detection with a per-position binary head
//!   ([`objectives::shed`]).
//!
//! Transfer is always a linear probe on frozen pooled features
//! ([`transfer`]). The crate is `no_std` + `alloc`; the `std` feature only
//! enables runtime CPU feature detection in the matrix kernels.
//!
//! # Features
//! - `std` (default): runtime SIMD dispatch for GEMM, `std::error::Error` impls.
//! - `serde`: `Serialize`/`Deserialize` on configs and trainer snapshots.

extern crate alloc;

pub mod datasets;
pub mod embedding;
pub mod encoder;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pretrain;
mod real;
pub mod rng;
pub mod transfer;

pub use crate::error::{Error, Result};
pub use crate::real::{DType, Real};
