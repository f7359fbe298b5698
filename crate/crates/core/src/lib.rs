//! Rectified-flow video editing lab and evaluation harness.
//!
//! The crate has three layers:
//!
//! - flow machinery: toy rectified-flow models ([`rf_core`]), inversion-free
//!   editing ([`flowedit`]) and its pyramidal multi-resolution variant
//!   ([`pyramid`]);
//! - evaluation: masked background-preservation metrics, text-video
//!   similarity, NIQE, motion fidelity ([`metrics`]) and the VLM-judged
//!   FiVE-Acc protocol ([`five_acc`]);
//! - harness: the benchmark data model and synthetic generator ([`bench`])
//!   plus end-to-end orchestration ([`harness`]) behind the `five` CLI.
//!
//! Everything is deterministic given seeds; no GPU, no pretrained weights.

pub mod bench;
pub mod error;
pub mod five_acc;
pub mod flowedit;
pub mod harness;
pub mod imgio;
pub mod latent;
pub mod metrics;
pub mod pyramid;
pub mod rf_core;
pub mod util;

pub use error::{Error, Result};
pub use latent::{LatentTensor, Shape};
