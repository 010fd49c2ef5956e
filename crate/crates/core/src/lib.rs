//! Dictionary-based PVC beat detection and beat compression for low-bandwidth
//! ECG telemonitoring.
//!
//! The crate is organised bottom-up:
//!
//! - [`sparse`]: dictionaries, orthogonal matching pursuit and the PRD metric.
//! - [`ksvd`]: per-class dictionary learning.
//! - [`preprocess`]: baseline-wander removal and beat segmentation.
//! - [`classifier`]: sparsity-ratio classification and ROC sweeps.
//! - [`codec`]: quantization, Huffman coding and the encoded stream format.
//! - [`streamer`]: the beat-trio status-flag state machine.
//! - [`bandwidth`]: closed-form bandwidth and cost models.
//! - [`evaluate`]: partitions, the end-to-end pipeline and Monte Carlo cross validation.
//! - [`io`], [`synth`], [`config`]: file formats, the synthetic corpus and run configuration.

pub mod bandwidth;
pub mod beat;
pub mod classifier;
pub mod codec;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod ksvd;
pub mod preprocess;
pub mod sparse;
pub mod streamer;
pub mod synth;

pub use beat::{AnnotationLabel, BeatClass, BeatVector, BEAT_LEN, HALF_WINDOW};
pub use error::{Error, Result};
pub use sparse::{prd, Dictionary, FidelityTarget, SparseCode};
