use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::{RunConfig, Stage};
use super::eval::{load_checkpoint, model_for, random_caption_cider, validation_cider, RandomCaptions};
use super::rundir::{LogRecord, RunDir};
use crate::captioner::{Captioner, TokenSeq};
use crate::data::{Dataset, ImageRecord, Split};
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::numcore::{lr_schedule, AdamState, ModelParams, Tensor};
use crate::rl::{ce_step, grpo_step, scst_step, CeExample, CiderReward, GrpoState, RlItem};
use crate::seed;

const INIT_STREAM: u64 = 1;
const CE_STREAM: u64 = 2;
const RL_SHUFFLE_STREAM: u64 = 3;
const SCST_STREAM: u64 = 4;
const GRPO_STREAM: u64 = 5;

pub const CE_FINAL: &str = "ce_final.sqrl";
pub const RL_FINAL: &str = "rl_final.sqrl";
pub const RL_BEST: &str = "rl_best.sqrl";

/// Path of the optimizer state saved next to a parameter checkpoint.
pub fn optimizer_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("adam.sqrl")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeSummary {
    pub final_checkpoint: PathBuf,
    /// Validation CIDEr (x100) of random-word captions.
    pub random_baseline: f64,
    /// Validation CIDEr (x100) of captions copied from random training
    /// images; a much stronger chance level on a low-diversity task.
    pub shuffled_baseline: f64,
    /// Validation CIDEr (x100) after each epoch run.
    pub val_cider: Vec<f64>,
    /// Mean training loss of each epoch run.
    pub epoch_loss: Vec<f64>,
    /// Every step's loss, in order.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlSummary {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// `(optimizer step, validation CIDEr x100)`, starting with the initial
    /// checkpoint at step 0.
    pub val_history: Vec<(u64, f64)>,
    pub best_val: f64,
}

fn validation_images<'a>(dataset: &'a Dataset, cfg: &RunConfig) -> Result<Vec<&'a ImageRecord>> {
    let mut val = dataset.split(Split::Val);
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    if cfg.val_images > 0 {
        val.truncate(cfg.val_images);
    }
    Ok(val)
}

fn beam(cfg: &RunConfig) -> DecodeConfig {
    cfg.sampling()
}

fn save_with_optimizer(params: &ModelParams, opt: &AdamState, epoch: usize, path: &Path) -> Result<()> {
    params.save(path)?;
    let mut state = opt.to_params();
    state.insert("run/epoch", Tensor::scalar(epoch as f64))?;
    state.save(&optimizer_path(path))
}

/// Cross-entropy training over every (image, reference caption) pair of the
/// training split, with warm-up plus cosine learning-rate decay.
pub fn run_ce(cfg: &RunConfig) -> Result<CeSummary> {
    let dataset = Dataset::load(&cfg.data_dir)?;
    let model = model_for(cfg, &dataset)?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let val = validation_images(&dataset, cfg)?;
    let mut dir = RunDir::create(cfg)?;

    let (mut params, mut opt, start_epoch) = match (&cfg.checkpoint_in, cfg.resume) {
        (Some(path), true) => {
            let params = load_checkpoint(&model, path)?;
            let saved = ModelParams::load(&optimizer_path(path))?;
            let epoch = saved
                .get("run/epoch")
                .map(|t| t.item() as usize)
                .ok_or_else(|| Error::Config("optimizer file lacks run/epoch".into()))?;
            (params, AdamState::from_params(&saved)?, epoch)
        }
        (Some(path), false) => (load_checkpoint(&model, path)?, AdamState::default(), 0),
        (None, _) => (
            model.init_params(seed::derive_seed(cfg.seed, &[INIT_STREAM])),
            AdamState::default(),
            0,
        ),
    };

    let max_words = cfg.max_len - 1;
    let vocab = &dataset.vocab;
    let examples: Vec<(usize, TokenSeq)> = train
        .iter()
        .enumerate()
        .flat_map(|(i, img)| {
            img.captions
                .iter()
                .map(move |c| (i, vocab.encode_seq(c, max_words)))
        })
        .collect();
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.ce_epochs;

    let baseline = |kind| random_caption_cider(&val, &train, &dataset.vocab, kind, cfg.cider_variant, cfg.seed);
    let random_baseline = baseline(RandomCaptions::Words)?;
    let shuffled_baseline = baseline(RandomCaptions::Shuffled)?;
    for (stage, v) in [("random_baseline", random_baseline), ("shuffled_baseline", shuffled_baseline)] {
        dir.log(LogRecord {
            stage: stage.into(),
            val_cider: Some(v),
            ..LogRecord::default()
        })?;
    }

    let mut summary = CeSummary {
        final_checkpoint: dir.checkpoint(CE_FINAL),
        random_baseline,
        shuffled_baseline,
        val_cider: Vec::new(),
        epoch_loss: Vec::new(),
        losses: Vec::new(),
    };
    let mut step = start_epoch * steps_per_epoch;
    for epoch in start_epoch..cfg.ce_epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seed::stream(cfg.seed, &[CE_STREAM, epoch as u64]));
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CeExample<'_>> = chunk
                .iter()
                .map(|&k| CeExample {
                    features: &train[examples[k].0].features,
                    caption: &examples[k].1,
                })
                .collect();
            let lr = lr_schedule(step, total_steps, cfg.ce_lr, cfg.warmup_frac)?;
            let loss = ce_step(&model, &mut params, &mut opt, &batch, lr)?;
            dir.log(LogRecord {
                step: step as u64,
                stage: "ce".into(),
                loss: Some(loss),
                lr: Some(lr),
                ..LogRecord::default()
            })?;
            summary.losses.push(loss);
            epoch_total += loss;
            step += 1;
        }
        let mean = epoch_total / steps_per_epoch as f64;
        let cider = validation_cider(&model, &params, &dataset.vocab, &val, &beam(cfg), cfg.cider_variant)?;
        dir.log(LogRecord {
            step: step as u64,
            stage: "ce_val".into(),
            loss: Some(mean),
            val_cider: Some(cider),
            ..LogRecord::default()
        })?;
        log::info!("ce epoch {} loss {mean:.4} val CIDEr {cider:.2}", epoch + 1);
        summary.epoch_loss.push(mean);
        summary.val_cider.push(cider);
        save_with_optimizer(&params, &opt, epoch + 1, &dir.checkpoint(&format!("ce_epoch{}.sqrl", epoch + 1)))?;
    }
    params.save(&summary.final_checkpoint)?;
    dir.flush()?;
    Ok(summary)
}

struct RlRun<'a> {
    cfg: &'a RunConfig,
    model: Captioner,
    dataset: &'a Dataset,
    val: Vec<&'a ImageRecord>,
    dir: RunDir,
    history: Vec<(u64, f64)>,
    best: f64,
}

impl RlRun<'_> {
    fn validate(&mut self, step: u64, params: &ModelParams, stage: &str) -> Result<()> {
        let cider = validation_cider(
            &self.model,
            params,
            &self.dataset.vocab,
            &self.val,
            &beam(self.cfg),
            self.cfg.cider_variant,
        )?;
        self.dir.log(LogRecord {
            step,
            stage: format!("{stage}_val"),
            val_cider: Some(cider),
            ..LogRecord::default()
        })?;
        log::info!("{stage} step {step} val CIDEr {cider:.2}");
        self.history.push((step, cider));
        if self.history.len() == 1 || cider > self.best {
            self.best = cider;
            params.save(&self.dir.checkpoint(RL_BEST))?;
        }
        Ok(())
    }
}

/// SCST or GRPO fine-tuning from the CE checkpoint in `checkpoint_in`.
pub fn run_rl(cfg: &RunConfig) -> Result<RlSummary> {
    if !matches!(cfg.stage, Stage::Scst | Stage::Grpo) {
        return Err(Error::Config(format!("run_rl called for stage {}", cfg.stage.as_str())));
    }
    let ckpt = cfg
        .checkpoint_in
        .as_ref()
        .ok_or_else(|| Error::Config("RL stages need checkpoint_in (a CE checkpoint)".into()))?;
    let dataset = Dataset::load(&cfg.data_dir)?;
    let model = model_for(cfg, &dataset)?;
    let mut params = load_checkpoint(&model, ckpt)?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let refs: Vec<Vec<Vec<usize>>> = train
        .iter()
        .map(|img| img.captions.iter().map(|c| dataset.vocab.encode(c)).collect())
        .collect();
    let reward = CiderReward::new(&refs, cfg.cider_variant)?;
    let items: Vec<RlItem<'_>> = train
        .iter()
        .enumerate()
        .map(|(image, img)| RlItem {
            image,
            features: &img.features,
        })
        .collect();
    let sampling = cfg.sampling();
    let stage = cfg.stage.as_str();
    let mut run = RlRun {
        cfg,
        val: validation_images(&dataset, cfg)?,
        dir: RunDir::create(cfg)?,
        model,
        dataset: &dataset,
        history: Vec::new(),
        best: f64::NEG_INFINITY,
    };
    run.validate(0, &params, stage)?;

    match cfg.stage {
        Stage::Scst => {
            let mut opt = AdamState::default();
            let root = seed::derive_seed(cfg.seed, &[SCST_STREAM]);
            let mut step = 0u64;
            for epoch in 0..cfg.scst_epochs {
                for batch in shuffled_batches(&items, cfg, epoch) {
                    let stats = scst_step(
                        &run.model, &mut params, &mut opt, &batch, &reward, &sampling, root, step,
                        cfg.scst_lr,
                    )?;
                    run.dir.log(LogRecord {
                        step,
                        stage: stage.into(),
                        loss: Some(stats.loss),
                        mean_reward: Some(stats.mean_reward),
                        lr: Some(cfg.scst_lr),
                        ..LogRecord::default()
                    })?;
                    step += 1;
                }
                run.validate(step, &params, stage)?;
                params.save(&run.dir.checkpoint(&format!("scst_epoch{}.sqrl", epoch + 1)))?;
            }
        }
        Stage::Grpo => {
            let grpo = cfg.grpo();
            let mut state = GrpoState::new(params);
            let root = seed::derive_seed(cfg.seed, &[GRPO_STREAM]);
            let every = cfg.val_every_steps as u64;
            for epoch in 0..cfg.grpo_epochs {
                for batch in shuffled_batches(&items, cfg, epoch) {
                    let before = state.steps;
                    let stats = grpo_step(
                        &run.model, &mut state, &batch, &reward, &grpo, &sampling, root, cfg.grpo_lr,
                    )?;
                    run.dir.log(LogRecord {
                        step: state.steps,
                        stage: stage.into(),
                        loss: Some(stats.loss),
                        mean_reward: Some(stats.mean_reward),
                        mean_kl: Some(stats.mean_kl),
                        clip_frac: Some(stats.clip_frac),
                        lr: Some(cfg.grpo_lr),
                        ..LogRecord::default()
                    })?;
                    if before / every != state.steps / every {
                        run.validate(state.steps, &state.policy, stage)?;
                    }
                }
                state
                    .policy
                    .save(&run.dir.checkpoint(&format!("grpo_epoch{}.sqrl", epoch + 1)))?;
            }
            if run.history.last().map(|h| h.0) != Some(state.steps) {
                run.validate(state.steps, &state.policy, stage)?;
            }
            params = state.policy;
        }
        _ => unreachable!("checked above"),
    }
    let final_checkpoint = run.dir.checkpoint(RL_FINAL);
    params.save(&final_checkpoint)?;
    run.dir.flush()?;
    Ok(RlSummary {
        final_checkpoint,
        best_checkpoint: run.dir.checkpoint(RL_BEST),
        val_history: run.history,
        best_val: run.best,
    })
}

fn shuffled_batches<'a>(items: &[RlItem<'a>], cfg: &RunConfig, epoch: usize) -> Vec<Vec<RlItem<'a>>> {
    let mut order = items.to_vec();
    order.shuffle(&mut seed::stream(cfg.seed, &[RL_SHUFFLE_STREAM, epoch as u64]));
    order.chunks(cfg.batch_size).map(<[_]>::to_vec).collect()
}
