use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use caprl::data::Split;
use caprl::harness::{run, Outcome, RunConfig};
use caprl::metrics::MetricReport;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "caprl", version, about = "Caption model training with CE, SCST and GRPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Base values: `full` (default) or `desk`.
    #[arg(long)]
    preset: Option<String>,
    /// `key=value` override, repeatable. Applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainStage {
    Ce,
    Scst,
    Grpo,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic shapes dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Train one stage.
    Train {
        #[arg(long, value_enum)]
        stage: TrainStage,
        #[command(flatten)]
        common: Common,
        /// Initial (RL) or resumed (CE) checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue CE training from `--checkpoint` and its optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Beam-search a split and report all metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Score candidate captions against references (COCO-style JSON).
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        cands: PathBuf,
    },
}

fn quote(s: &str) -> String {
    format!("{s:?}")
}

fn path_value(p: &std::path::Path) -> String {
    quote(&p.to_string_lossy())
}

fn resolve(common: &Common, stage: &str, mut extra: Vec<String>) -> anyhow::Result<RunConfig> {
    let mut overrides = common.set.clone();
    overrides.push(format!("stage={}", quote(stage)));
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = &common.data {
        overrides.push(format!("data_dir={}", path_value(d)));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("out_dir={}", path_value(o)));
    }
    overrides.append(&mut extra);
    Ok(RunConfig::resolve(
        common.preset.as_deref(),
        common.config.as_deref(),
        &overrides,
    )?)
}

fn config_for(cli: &Cli) -> anyhow::Result<RunConfig> {
    match &cli.command {
        Command::GenData { common, n_images } => {
            let extra = n_images.map(|n| format!("n_images={n}")).into_iter().collect();
            resolve(common, "gen-data", extra)
        }
        Command::Train {
            stage,
            common,
            checkpoint,
            resume,
        } => {
            let name = match stage {
                TrainStage::Ce => "ce",
                TrainStage::Scst => "scst",
                TrainStage::Grpo => "grpo",
            };
            let mut extra: Vec<String> = checkpoint
                .iter()
                .map(|c| format!("checkpoint_in={}", path_value(c)))
                .collect();
            if *resume {
                extra.push("resume=true".into());
            }
            resolve(common, name, extra)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let mut extra: Vec<String> = checkpoint
                .iter()
                .map(|c| format!("checkpoint_in={}", path_value(c)))
                .collect();
            if let Some(s) = split {
                Split::parse(s)?;
                extra.push(format!("eval_split={}", quote(s)));
            }
            resolve(common, "eval", extra)
        }
        Command::Score { common, refs, cands } => resolve(
            common,
            "score",
            vec![
                format!("refs_path={}", path_value(refs)),
                format!("cands_path={}", path_value(cands)),
            ],
        ),
    }
}

fn main_inner(cli: &Cli) -> anyhow::Result<()> {
    let cfg = config_for(cli).context("invalid configuration")?;
    let outcome = run(&cfg).with_context(|| format!("stage {} failed", cfg.stage.as_str()))?;
    match outcome {
        Outcome::Data(m) => println!(
            "wrote {} images ({} train / {} val / {} test), vocabulary {} to {}",
            m.config.n_images,
            m.splits.train.len(),
            m.splits.val.len(),
            m.splits.test.len(),
            m.vocab_size,
            cfg.data_dir.display()
        ),
        Outcome::Ce(s) => println!(
            "random-word CIDEr {:.2}, shuffled-caption CIDEr {:.2}, final val CIDEr {:.2}; checkpoint {}",
            s.random_baseline,
            s.shuffled_baseline,
            s.val_cider.last().copied().unwrap_or(f64::NAN),
            s.final_checkpoint.display()
        ),
        Outcome::Rl(s) => println!(
            "best val CIDEr {:.2}; best {} final {}",
            s.best_val,
            s.best_checkpoint.display(),
            s.final_checkpoint.display()
        ),
        Outcome::Eval(r) => println!("{}\n{}", MetricReport::CSV_HEADER, r.metrics.csv_row()),
        Outcome::Score(m) => println!("{}\n{}", MetricReport::CSV_HEADER, m.csv_row()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<caprl::Error>())
                .map_or(1, caprl::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
