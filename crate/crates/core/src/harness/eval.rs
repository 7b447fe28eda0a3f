use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::rundir::{version_string, write_json, write_text};
use crate::captioner::{Captioner, TokenSeq};
use crate::data::{Dataset, ImageRecord, Split, Vocab, SPECIAL_TOKENS};
use crate::decoding::{beam_decode, greedy_decode, CaptionPolicy, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{score_corpus, tokenize, CiderScorer, CiderVariant, MetricReport};
use crate::numcore::ModelParams;
use crate::seed;

const BASELINE_STREAM: u64 = 0xba5e;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam,
}

/// Decodes one caption per image.
pub fn decode_images(
    model: &Captioner,
    params: &ModelParams,
    images: &[&ImageRecord],
    cfg: &DecodeConfig,
    mode: DecodeMode,
) -> Result<Vec<TokenSeq>> {
    images
        .iter()
        .map(|img| {
            let policy = CaptionPolicy {
                model,
                params,
                features: &img.features,
            };
            match mode {
                DecodeMode::Greedy => greedy_decode(&policy, cfg),
                DecodeMode::Beam => Ok(beam_decode(&policy, cfg)?.seq),
            }
        })
        .collect()
}

/// Tokenized reference captions per image.
pub fn references(images: &[&ImageRecord]) -> Vec<Vec<Vec<String>>> {
    images
        .iter()
        .map(|img| img.captions.iter().map(|c| tokenize(c)).collect())
        .collect()
}

pub fn caption_words(vocab: &Vocab, seq: &TokenSeq) -> Vec<String> {
    let text = vocab.decode(&seq.words());
    text.split_whitespace().map(str::to_string).collect()
}

/// Corpus CIDEr in report scale (x100), document frequencies from `refs`.
pub fn corpus_cider(
    candidates: &[Vec<String>],
    refs: &[Vec<Vec<String>>],
    variant: CiderVariant,
) -> Result<f64> {
    Ok(100.0 * CiderScorer::new(refs, variant)?.corpus_score(candidates)?)
}

/// Beam-search CIDEr (x100) of `params` on `images`.
pub fn validation_cider(
    model: &Captioner,
    params: &ModelParams,
    vocab: &Vocab,
    images: &[&ImageRecord],
    decode: &DecodeConfig,
    variant: CiderVariant,
) -> Result<f64> {
    let seqs = decode_images(model, params, images, decode, DecodeMode::Beam)?;
    let words: Vec<Vec<String>> = seqs.iter().map(|s| caption_words(vocab, s)).collect();
    corpus_cider(&words, &references(images), variant)
}

/// Chance-level caption generators used as learnability baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomCaptions {
    /// Uniformly drawn vocabulary words, with the length of a random
    /// training caption.
    Words,
    /// A whole reference caption copied from a random training image.
    Shuffled,
}

/// CIDEr (x100) of random captions for `images`. `pool` supplies caption
/// lengths or donor captions.
pub fn random_caption_cider(
    images: &[&ImageRecord],
    pool: &[&ImageRecord],
    vocab: &Vocab,
    kind: RandomCaptions,
    variant: CiderVariant,
    seed_root: u64,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Data("random-caption baseline needs training captions".into()));
    }
    let first_word = SPECIAL_TOKENS.len();
    if vocab.len() <= first_word {
        return Err(Error::Data("vocabulary has no words".into()));
    }
    let mut rng = seed::stream(seed_root, &[BASELINE_STREAM, kind as u64]);
    let cands: Vec<Vec<String>> = images
        .iter()
        .map(|_| {
            let donor = pool[rng.random_range(0..pool.len())];
            let caption = tokenize(&donor.captions[rng.random_range(0..donor.captions.len())]);
            match kind {
                RandomCaptions::Shuffled => caption,
                RandomCaptions::Words => (0..caption.len())
                    .map(|_| {
                        let id = rng.random_range(first_word..vocab.len());
                        vocab.word(id).unwrap_or("<unk>").to_string()
                    })
                    .collect(),
            }
        })
        .collect();
    corpus_cider(&cands, &references(images), variant)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: u64,
    pub caption: String,
    /// Per-image CIDEr, x100.
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub checkpoint: String,
    pub version: String,
    pub config_hash: String,
    pub beam_size: usize,
    pub metrics: MetricReport,
    pub per_image: Vec<ImageScore>,
    pub wall_ms: u64,
}

/// Beam-decodes `split` and scores every metric.
pub fn evaluate(
    model: &Captioner,
    params: &ModelParams,
    dataset: &Dataset,
    split: Split,
    cfg: &RunConfig,
) -> Result<(MetricReport, Vec<ImageScore>)> {
    let images = dataset.split(split);
    if images.is_empty() {
        return Err(Error::Data(format!("split {} is empty", split.as_str())));
    }
    let decode = DecodeConfig {
        beam_size: cfg.beam_size,
        ..cfg.sampling()
    };
    let seqs = decode_images(model, params, &images, &decode, DecodeMode::Beam)?;
    let words: Vec<Vec<String>> = seqs.iter().map(|s| caption_words(&dataset.vocab, s)).collect();
    let refs = references(&images);
    let metrics = score_corpus(&words, &refs, cfg.cider_variant)?;
    let scorer = CiderScorer::new(&refs, cfg.cider_variant)?;
    let per_image = images
        .iter()
        .zip(&words)
        .enumerate()
        .map(|(i, (img, w))| {
            Ok(ImageScore {
                id: img.id,
                caption: w.join(" "),
                cider: 100.0 * scorer.score(i, w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((metrics, per_image))
}

/// Loads a checkpoint that must fit `model`.
pub fn load_checkpoint(model: &Captioner, path: &Path) -> Result<ModelParams> {
    let params = ModelParams::load(path)?;
    model.check_params(&params).map_err(|e| {
        Error::Config(format!("checkpoint {} does not fit the model: {e}", path.display()))
    })?;
    Ok(params)
}

pub fn model_for(cfg: &RunConfig, dataset: &Dataset) -> Result<Captioner> {
    Captioner::new(cfg.decoder(dataset.vocab.len(), dataset.feat_dim())?)
}

pub fn report_paths(out: &Path, split: Split) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        out.join(format!("eval_{}.json", split.as_str())),
        out.join(format!("eval_{}.csv", split.as_str())),
    )
}

/// Evaluates `checkpoint_in` on `eval_split`; writes JSON and CSV reports
/// into `out_dir`.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let ckpt = cfg
        .checkpoint_in
        .as_ref()
        .ok_or_else(|| Error::Config("eval needs checkpoint_in".into()))?;
    let dataset = Dataset::load(&cfg.data_dir)?;
    let model = model_for(cfg, &dataset)?;
    let params = load_checkpoint(&model, ckpt)?;
    let (metrics, per_image) = evaluate(&model, &params, &dataset, cfg.eval_split, cfg)?;
    let report = EvalReport {
        split: cfg.eval_split,
        checkpoint: ckpt.display().to_string(),
        version: version_string(),
        config_hash: cfg.hash(),
        beam_size: cfg.beam_size,
        metrics,
        per_image,
        wall_ms: if cfg.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        },
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let (json, csv) = report_paths(&cfg.out_dir, cfg.eval_split);
    write_json(&json, &report)?;
    write_text(
        &csv,
        &format!("{}\n{}\n", MetricReport::CSV_HEADER, report.metrics.csv_row()),
    )?;
    log::info!("{} CIDEr {:.2}", cfg.eval_split.as_str(), report.metrics.cider);
    Ok(report)
}

#[derive(Deserialize)]
struct AnnotationFile {
    annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct Annotation {
    image_id: u64,
    caption: String,
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(file.annotations)
}

/// Scores caption files: references may list many captions per image,
/// candidates exactly one for every referenced image.
pub fn score_files(refs_path: &Path, cands_path: &Path, variant: CiderVariant) -> Result<MetricReport> {
    let mut refs: BTreeMap<u64, Vec<Vec<String>>> = BTreeMap::new();
    for a in read_annotations(refs_path)? {
        refs.entry(a.image_id).or_default().push(tokenize(&a.caption));
    }
    let mut cands: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for a in read_annotations(cands_path)? {
        if cands.insert(a.image_id, tokenize(&a.caption)).is_some() {
            return Err(Error::Data(format!(
                "{}: image {} has more than one candidate",
                cands_path.display(),
                a.image_id
            )));
        }
    }
    let mut c = Vec::with_capacity(refs.len());
    let mut r = Vec::with_capacity(refs.len());
    for (id, set) in refs {
        let cand = cands.remove(&id).ok_or_else(|| {
            Error::Data(format!("{}: no candidate for image {id}", cands_path.display()))
        })?;
        c.push(cand);
        r.push(set);
    }
    if let Some(id) = cands.keys().next() {
        return Err(Error::Data(format!("candidate for image {id} has no references")));
    }
    score_corpus(&c, &r, variant)
}

/// The `score` stage: writes `score.json` and `score.csv` into `out_dir`.
pub fn run_score(cfg: &RunConfig) -> Result<MetricReport> {
    let (refs, cands) = match (&cfg.refs_path, &cfg.cands_path) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::Config("score needs refs_path and cands_path".into())),
    };
    let report = score_files(refs, cands, cfg.cider_variant)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("score.json"), &report)?;
    write_text(
        &cfg.out_dir.join("score.csv"),
        &format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()),
    )?;
    Ok(report)
}
