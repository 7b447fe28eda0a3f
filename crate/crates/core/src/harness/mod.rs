//! Runs: configuration, the stage runners behind the `caprl` CLI, run
//! directories and reports.
//!
//! A run directory holds `config.toml` (fully resolved), `version.txt`,
//! `log.jsonl` (one JSON record per optimizer step or validation reading),
//! `checkpoints/` and, for evaluation, `eval_<split>.json` and `.csv`.

mod config;
mod eval;
mod rundir;
mod train;

pub use config::{RunConfig, Stage, PRESETS};
pub use eval::{
    caption_words, corpus_cider, decode_images, evaluate, load_checkpoint, model_for,
    random_caption_cider, references, run_eval, run_score, score_files, validation_cider,
    DecodeMode, EvalReport, ImageScore, RandomCaptions,
};
pub use rundir::{
    version_string, LogRecord, RunDir, CHECKPOINT_DIR, CONFIG_FILE, LOG_FILE, VERSION_FILE,
};
pub use train::{optimizer_path, run_ce, run_rl, CeSummary, RlSummary, CE_FINAL, RL_BEST, RL_FINAL};

use crate::data::{generate_dataset, SyntheticManifest};
use crate::error::Result;
use crate::metrics::MetricReport;

/// What a stage produced.
#[derive(Debug)]
pub enum Outcome {
    Data(SyntheticManifest),
    Ce(CeSummary),
    Rl(RlSummary),
    Eval(Box<EvalReport>),
    Score(MetricReport),
}

/// Validates `cfg` and runs its stage.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    Ok(match cfg.stage {
        Stage::GenData => Outcome::Data(generate_dataset(&cfg.synthetic(), &cfg.data_dir)?),
        Stage::Ce => Outcome::Ce(run_ce(cfg)?),
        Stage::Scst | Stage::Grpo => Outcome::Rl(run_rl(cfg)?),
        Stage::Eval => Outcome::Eval(Box::new(run_eval(cfg)?)),
        Stage::Score => Outcome::Score(run_score(cfg)?),
    })
}
