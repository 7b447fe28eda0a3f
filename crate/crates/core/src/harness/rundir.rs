use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const VERSION_FILE: &str = "version.txt";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One line of `log.jsonl`. Fields that do not apply to a stage are null.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: u64,
    pub stage: String,
    pub loss: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_kl: Option<f64>,
    pub clip_frac: Option<f64>,
    pub lr: Option<f64>,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_cider: Option<f64>,
}

/// Output directory of one run: resolved config, version, log, checkpoints.
pub struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
    timing: bool,
    start: Instant,
}

pub fn version_string() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

impl RunDir {
    /// Creates the directory, writes config and version files and starts a
    /// fresh log.
    pub fn create(cfg: &RunConfig) -> Result<Self> {
        let root = cfg.out_dir.clone();
        let ckpt = root.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        write_text(&root.join(CONFIG_FILE), &cfg.to_toml())?;
        write_text(
            &root.join(VERSION_FILE),
            &format!("{}\nconfig-sha256 {}\n", version_string(), cfg.hash()),
        )?;
        let log_path = root.join(LOG_FILE);
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        Ok(RunDir {
            root,
            log: BufWriter::new(file),
            timing: cfg.timing,
            start: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(name)
    }

    /// Milliseconds since the run started, or 0 with timing off.
    pub fn wall_ms(&self) -> u64 {
        if self.timing {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    pub fn log(&mut self, mut rec: LogRecord) -> Result<()> {
        rec.wall_ms = self.wall_ms();
        let line = serde_json::to_string(&rec).map_err(|source| Error::Json {
            path: self.root.join(LOG_FILE),
            source,
        })?;
        writeln!(self.log, "{line}").map_err(|e| Error::io(self.root.join(LOG_FILE), e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.log
            .flush()
            .map_err(|e| Error::io(self.root.join(LOG_FILE), e))
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}
