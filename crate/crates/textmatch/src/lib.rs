//! Image/text matching with a cross-attention scoring head.
//!
//! Given a grayscale image of a single line of text and a candidate
//! transcription, the model scores how well they correspond and a threshold
//! turns the score into a binary match decision. The crate contains the
//! whole desk-scale pipeline:
//!
//! - [`tensor`]: dense f64 tensors, reverse-mode differentiation, SGD.
//! - [`image`]: grayscale rasters, PGM exchange, input preprocessing.
//! - [`embed`]: alphabet handling, text/image encoders, positional embeddings.
//! - [`matcher`]: the cross-attention score, a naive cosine baseline, and
//!   threshold classification.
//! - [`train`]: contrastive-loss training with checkpointing.
//! - [`datagen`]: synthetic datasets — glyph rasterization, date and word
//!   negative-sample generators, manifests, and a word-image corpus loader.
//! - [`eval`]: edit distance, confusion metrics, threshold selection, and
//!   full model evaluation.
//! - [`cli`]: the `textmatch` binary (gen/train/score/eval subcommands).
//!
//! See the crate `examples/` directory for runnable walkthroughs of each
//! capability.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod embed;
pub mod error;
pub mod eval;
pub mod image;
pub mod matcher;
pub mod tensor;
pub mod train;

pub use error::{Result, TmError};
