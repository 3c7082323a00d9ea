//! Two-stage extraction of possibly overlapping entity spans.
//!
//! Stage one, the [localizer], scores every token against five relative
//! positions (inside, outside, start, end, both-start-and-end) and keeps each
//! token whose start or end probability clears a threshold. Every start is
//! then paired with every end at or after it. Stage two, the [span
//! classifier](spanclass), scores each candidate with one sigmoid per
//! category, so the same span can carry several categories and spans can
//! nest. Candidates scoring below the decision threshold in every category
//! are discarded.
//!
//! Training data for stage two can be [augmented](augment) with composite
//! spans (the start of one entity joined to the end of another) labeled as
//! non-entities. The [evaluator] scores predictions by exact span and
//! category match, with overlap and length breakdowns.
//!
//! The encoder is frozen and pluggable: see [`embedder`].
//!
//! ```
//! use picox::corpus::{derive_position_labels, Category, Entity, PositionLabel, Sentence};
//!
//! let tokens = ["adults", "with", "asthma", "receiving", "salbutamol"]
//!     .map(String::from)
//!     .to_vec();
//! let sentence = Sentence::new(
//!     "s0",
//!     tokens,
//!     vec![Entity::new(0, 4, Category::P), Entity::new(4, 4, Category::I)],
//! )?;
//! use PositionLabel::*;
//! assert_eq!(
//!     derive_position_labels(&sentence),
//!     [Start, Inside, Inside, Inside, BothStartAndEnd]
//! );
//! # Ok::<(), picox::Error>(())
//! ```
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod augment;
pub mod corpus;
pub mod embedder;
mod error;
pub mod evaluator;
pub mod iob2;
pub mod localizer;
pub mod pcxe;
pub mod pipeline;
pub mod predictions;
pub mod spanclass;
pub mod synth;
mod train;

pub use error::{Error, Result};
pub use train::{OptimizerKind, TrainConfig, TrainLog};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
}
