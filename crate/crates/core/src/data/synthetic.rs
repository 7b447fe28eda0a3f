//! Grid-of-shapes scenes with templated captions.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::captions::{feature_path, write_captions, CaptionSet, Split, SplitManifest, CAPTIONS_FILE, FEATURES_DIR, VOCAB_FILE};
use super::features::write_features;
use super::vocab::Vocab;
use crate::captioner::FeatureGrid;
use crate::error::{Error, Result};
use crate::seed;

const SCENE_STREAM: u64 = 0x5ce9e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
}

impl SceneObject {
    fn phrase(&self) -> String {
        format!("{} {}", self.color.word(), self.shape.word())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_images: usize,
    pub grid_size: usize,
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_images: 2500,
            grid_size: 3,
            noise: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < 10 {
            return Err(Error::Config(format!("n_images {} is below 10", self.n_images)));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and >= 0", self.noise)));
        }
        Ok(())
    }

    /// Width of one region's feature vector: shape (4, slot 0 = empty),
    /// color (4), row (grid) and column (grid) one-hots.
    pub fn feat_dim(&self) -> usize {
        8 + 2 * self.grid_size
    }

    /// Images in (train, val, test). Validation and test take a tenth each.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let held = (self.n_images / 10).max(1);
        (self.n_images - 2 * held, held, held)
    }

    pub fn split_of(&self, id: u64) -> Split {
        let (train, val, _) = self.split_sizes();
        match id as usize {
            i if i < train => Split::Train,
            i if i < train + val => Split::Val,
            _ => Split::Test,
        }
    }
}

/// One or two objects on a `grid_size x grid_size` board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub id: u64,
    pub grid_size: usize,
    pub objects: Vec<SceneObject>,
    #[serde(skip)]
    features: Vec<f64>,
}

fn position_phrase(row: usize, col: usize, grid: usize) -> String {
    let r = ["top", "middle", "bottom"][row * 3 / grid];
    let c = ["left", "center", "right"][col * 3 / grid];
    match (r, c) {
        ("middle", "center") => "center".into(),
        ("middle", c) => c.into(),
        (r, "center") => r.into(),
        (r, c) => format!("{r} {c}"),
    }
}

/// Relation of `a` to `b` and its inverse, vertical offsets first.
fn relation(a: &SceneObject, b: &SceneObject) -> (&'static str, &'static str) {
    use std::cmp::Ordering::*;
    match (a.row.cmp(&b.row), a.col.cmp(&b.col)) {
        (Less, _) => ("above", "below"),
        (Greater, _) => ("below", "above"),
        (Equal, Less) => ("left of", "right of"),
        _ => ("right of", "left of"),
    }
}

impl SyntheticScene {
    /// Deterministic in `(cfg.seed, id)`.
    pub fn generate(cfg: &SyntheticConfig, id: u64) -> Self {
        let mut rng = seed::stream(cfg.seed, &[SCENE_STREAM, id]);
        let g = cfg.grid_size;
        let cells = g * g;
        let n_obj = rng.random_range(1..=2usize);
        let first = rng.random_range(0..cells);
        let mut picks = vec![first];
        if n_obj == 2 {
            let mut second = rng.random_range(0..cells - 1);
            if second >= first {
                second += 1;
            }
            picks.push(second);
        }
        let objects: Vec<SceneObject> = picks
            .into_iter()
            .map(|cell| SceneObject {
                shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
                color: Color::ALL[rng.random_range(0..Color::ALL.len())],
                row: cell / g,
                col: cell % g,
            })
            .collect();

        let dim = cfg.feat_dim();
        let mut features = vec![0.0; cells * dim];
        for cell in 0..cells {
            let row = &mut features[cell * dim..(cell + 1) * dim];
            match objects.iter().find(|o| o.row * g + o.col == cell) {
                Some(o) => {
                    row[1 + o.shape as usize] = 1.0;
                    row[4 + o.color as usize] = 1.0;
                }
                None => row[0] = 1.0,
            }
            row[8 + cell / g] = 1.0;
            row[8 + g + cell % g] = 1.0;
        }
        let normal = Normal::new(0.0, cfg.noise).expect("validated noise");
        for v in &mut features {
            *v = (*v + normal.sample(&mut rng)) as f32 as f64;
        }
        SyntheticScene {
            id,
            grid_size: g,
            objects,
            features,
        }
    }

    /// Regions in row-major cell order, values rounded to `f32`.
    pub fn features(&self) -> FeatureGrid {
        let cells = self.grid_size * self.grid_size;
        FeatureGrid::new(cells, self.features.len() / cells, self.features.clone())
            .expect("finite generated features")
    }

    /// Five distinct paraphrases.
    pub fn captions(&self) -> Vec<String> {
        let a = &self.objects[0];
        let pa = a.phrase();
        match self.objects.get(1) {
            None => {
                let pos = position_phrase(a.row, a.col, self.grid_size);
                vec![
                    format!("a {pa}"),
                    format!("there is a {pa}"),
                    format!("a {pa} in the {pos}"),
                    format!("a single {pa}"),
                    format!("the {pa} is in the {pos}"),
                ]
            }
            Some(b) => {
                let pb = b.phrase();
                let (rel, inv) = relation(a, b);
                vec![
                    format!("a {pa} {rel} a {pb}"),
                    format!("the {pb} is {inv} the {pa}"),
                    format!("there is a {pa} and a {pb}"),
                    format!("a {pb} {inv} a {pa}"),
                    format!("two shapes a {pa} and a {pb}"),
                ]
            }
        }
    }
}

#[derive(Serialize)]
struct ScenesFile<'a> {
    scenes: &'a [SyntheticScene],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub config: SyntheticConfig,
    pub feat_dim: usize,
    pub vocab_size: usize,
    #[serde(flatten)]
    pub splits: SplitManifest,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENES_FILE: &str = "scenes.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes scenes, features, captions, vocabulary and manifest under `out`.
pub fn generate_dataset(cfg: &SyntheticConfig, out: &Path) -> Result<SyntheticManifest> {
    cfg.validate()?;
    let feat_dir = out.join(FEATURES_DIR);
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let scenes: Vec<SyntheticScene> = (0..cfg.n_images as u64)
        .map(|id| SyntheticScene::generate(cfg, id))
        .collect();
    let sets: Vec<CaptionSet> = scenes
        .iter()
        .map(|s| CaptionSet {
            id: s.id,
            split: cfg.split_of(s.id),
            captions: s.captions(),
        })
        .collect();
    for s in &scenes {
        write_features(&feature_path(out, s.id), &s.features())?;
    }
    let vocab = Vocab::build(sets.iter().flat_map(|s| s.captions.iter().map(String::as_str)), 1);
    vocab.save(&out.join(VOCAB_FILE))?;
    write_captions(&out.join(CAPTIONS_FILE), &sets)?;
    write_json(&out.join(SCENES_FILE), &ScenesFile { scenes: &scenes })?;
    let manifest = SyntheticManifest {
        config: cfg.clone(),
        feat_dim: cfg.feat_dim(),
        vocab_size: vocab.len(),
        splits: SplitManifest::from_sets(&sets),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "wrote {} synthetic images ({} words) to {}",
        cfg.n_images,
        vocab.len(),
        out.display()
    );
    Ok(manifest)
}
