//! Boundary detection for texts that start human-written and continue
//! machine-generated.
//!
//! The pipeline prompts a generative decoder for the machine-written tail,
//! aligns that answer back onto the text, marks the predicted boundary with a
//! `<BREAK>` word, lets one or more token-labeling encoders refine it, and
//! averages their answers. Models live behind the [`backends`] traits, so every
//! stage can be driven by deterministic mocks.
//!
//! All boundaries are 0-based indices into the whitespace-delimited words of
//! the original text; an index equal to the word count means "fully human".

pub mod align;
pub mod backends;
pub mod corpus;
pub mod decoder_post;
pub mod encoder_io;
pub mod ensemble;
pub mod folds;
pub mod metrics;
pub mod pipeline;

pub use corpus::{InstanceId, MixedTextInstance, WordSpan};
pub use ensemble::BoundaryPrediction;

// The guide in book/ is compiled into doctests so its snippets cannot rot.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/word-coordinates.md")]
    mod word_coordinates {}
    #[doc = include_str!("../../../book/src/decoder-answers.md")]
    mod decoder_answers {}
    #[doc = include_str!("../../../book/src/break-marker.md")]
    mod break_marker {}
    #[doc = include_str!("../../../book/src/token-labels.md")]
    mod token_labels {}
    #[doc = include_str!("../../../book/src/ensembles-and-scoring.md")]
    mod ensembles_and_scoring {}
    #[doc = include_str!("../../../book/src/cross-labeling.md")]
    mod cross_labeling {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/cli-and-setups.md")]
    mod cli_and_setups {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
