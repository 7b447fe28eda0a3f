use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::captioner::DecoderConfig;
use crate::data::{Split, SyntheticConfig};
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::metrics::CiderVariant;
use crate::rl::{GrpoConfig, RatioAgg, ScstConfig, SyncMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ce,
    Scst,
    Grpo,
    Eval,
    GenData,
    Score,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ce => "ce",
            Stage::Scst => "scst",
            Stage::Grpo => "grpo",
            Stage::Eval => "eval",
            Stage::GenData => "gen-data",
            Stage::Score => "score",
        }
    }
}

/// Everything a run needs, as one flat table of keys.
///
/// The file format is TOML restricted to top-level `key = value` lines.
/// Unknown keys are rejected. An optional `preset = "<name>"` line picks
/// the base values that the other keys override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stage: Stage,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_in: Option<PathBuf>,
    /// Continue a CE run from `checkpoint_in` and its optimizer file.
    pub resume: bool,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,

    pub batch_size: usize,
    pub ce_epochs: usize,
    pub ce_lr: f64,
    pub warmup_frac: f64,

    pub scst_epochs: usize,
    pub scst_lr: f64,

    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub update_steps: usize,
    pub grpo_epochs: usize,
    pub grpo_lr: f64,
    pub ratio_agg: RatioAgg,
    pub sync: SyncMode,

    pub beam_size: usize,
    pub decode_max_len: usize,
    pub temperature: f64,
    /// GRPO validation period in optimizer steps.
    pub val_every_steps: usize,
    /// Validation images used per reading; 0 means the whole split.
    pub val_images: usize,
    pub eval_split: Split,
    pub cider_variant: CiderVariant,

    pub n_images: usize,
    pub grid_size: usize,
    pub noise: f64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub refs_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cands_path: Option<PathBuf>,

    /// Record real wall-clock times in logs and reports. Off by default so
    /// reruns are byte-identical.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grpo = GrpoConfig::default();
        let scst = ScstConfig::default();
        let synth = SyntheticConfig::default();
        RunConfig {
            stage: Stage::Ce,
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            checkpoint_in: None,
            resume: false,
            d_model: 512,
            n_heads: 8,
            n_layers: 1,
            ffn_dim: 2048,
            max_len: 20,
            batch_size: 32,
            ce_epochs: 20,
            ce_lr: 4e-5,
            warmup_frac: 0.1,
            scst_epochs: scst.epochs,
            scst_lr: scst.lr,
            group_size: grpo.group_size,
            clip_eps: grpo.clip_eps,
            kl_beta: grpo.kl_beta,
            update_steps: grpo.update_steps,
            grpo_epochs: grpo.epochs,
            grpo_lr: grpo.lr,
            ratio_agg: grpo.ratio_agg,
            sync: grpo.sync,
            beam_size: 3,
            decode_max_len: 16,
            temperature: 1.0,
            val_every_steps: 100,
            val_images: 0,
            eval_split: Split::Test,
            cider_variant: CiderVariant::Plain,
            n_images: synth.n_images,
            grid_size: synth.grid_size,
            noise: synth.noise,
            refs_path: None,
            cands_path: None,
            timing: false,
        }
    }
}

pub const PRESETS: [&str; 2] = ["full", "desk"];

impl RunConfig {
    /// Named starting points. `full` is the default; `desk` shrinks the
    /// model and raises learning rates so the whole pipeline fits in
    /// minutes on one CPU core.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(RunConfig::default()),
            "desk" => Ok(RunConfig {
                d_model: 32,
                n_heads: 4,
                ffn_dim: 64,
                ce_lr: 3e-3,
                scst_lr: 1e-4,
                grpo_lr: 1e-4,
                ..RunConfig::default()
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    /// Preset, then file, then `key=value` overrides, then validation.
    pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        let file_preset = match table.remove("preset") {
            Some(toml::Value::String(s)) => Some(s),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => None,
        };
        for kv in overrides {
            let (key, value) = parse_override(kv)?;
            table.insert(key, value);
        }
        let base = RunConfig::preset(preset.or(file_preset.as_deref()).unwrap_or("full"))?;
        let mut merged = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(format!("cannot tabulate preset: {e}")))?;
        merged.extend(table);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn decoder(&self, vocab_size: usize, feat_dim: usize) -> Result<DecoderConfig> {
        let cfg = DecoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            feat_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            update_steps: self.update_steps,
            epochs: self.grpo_epochs,
            lr: self.grpo_lr,
            ratio_agg: self.ratio_agg,
            sync: self.sync,
        }
    }

    pub fn scst(&self) -> ScstConfig {
        ScstConfig {
            epochs: self.scst_epochs,
            lr: self.scst_lr,
        }
    }

    /// Sampling configuration for the RL stages.
    pub fn sampling(&self) -> DecodeConfig {
        DecodeConfig {
            max_len: self.decode_max_len,
            temperature: self.temperature,
            beam_size: self.beam_size,
            seed: self.seed,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            n_images: self.n_images,
            grid_size: self.grid_size,
            noise: self.noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ffn_dim", self.ffn_dim),
            ("batch_size", self.batch_size),
            ("ce_epochs", self.ce_epochs),
            ("val_every_steps", self.val_every_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.decode_max_len > self.max_len {
            return Err(Error::Config(format!(
                "decode_max_len {} exceeds max_len {}",
                self.decode_max_len, self.max_len
            )));
        }
        for (name, lr) in [("ce_lr", self.ce_lr), ("scst_lr", self.scst_lr), ("grpo_lr", self.grpo_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} {lr} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac {} outside [0, 1)", self.warmup_frac)));
        }
        self.scst().validate()?;
        self.grpo().validate()?;
        self.sampling().validate()?;
        if self.stage == Stage::GenData {
            self.synthetic().validate()?;
        }
        if self.resume && self.checkpoint_in.is_none() {
            return Err(Error::Config("resume needs checkpoint_in".into()));
        }
        Ok(())
    }
}

/// `key=value`; the value is read as a TOML literal, falling back to a bare
/// string.
fn parse_override(kv: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}
