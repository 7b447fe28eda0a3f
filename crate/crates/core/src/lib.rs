//! Caption-model training in two stages: cross-entropy pretraining, then
//! sequence-level reinforcement learning with either self-critical sequence
//! training (SCST) or group relative policy optimization (GRPO), using CIDEr
//! as the reward.
//!
//! Everything runs on a small reverse-mode autodiff core over `f64`
//! ([`numcore`]). The model ([`captioner`]) is a single-stack transformer
//! decoder that attends over a grid of region features; [`decoding`] turns it
//! into captions; [`metrics`] scores them; [`rl`] holds the three training
//! objectives; [`data`] builds a synthetic captioning task and reads external
//! datasets; [`harness`] wires it all into runs and the `caprl` CLI.

pub mod error;
pub mod harness;
pub mod captioner;
pub mod data;
pub mod decoding;
pub mod metrics;
pub mod numcore;
pub mod rl;
pub mod seed;

pub use error::{Error, Result};

// The guide in book/ is compiled here so its snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
}
