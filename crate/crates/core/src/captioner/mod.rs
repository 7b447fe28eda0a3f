//! The caption model: region features in, next-token logits out.

mod config;
mod model;
mod types;

pub use config::DecoderConfig;
pub use model::{Attended, Captioner, INIT_STD};
pub use types::{CausalMask, FeatureGrid, TokenSeq, BOS, EOS, PAD, UNK};
