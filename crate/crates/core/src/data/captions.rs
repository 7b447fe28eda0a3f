use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::read_features;
use super::vocab::Vocab;
use crate::captioner::FeatureGrid;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// `restval` counts as training data.
    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" | "restval" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        Split::parse(s)
    }
}

/// Reference captions of one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub id: u64,
    pub split: Split,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitManifest {
    pub fn from_sets(sets: &[CaptionSet]) -> Self {
        let mut m = SplitManifest::default();
        for s in sets {
            m.ids_mut(s.split).push(s.id);
        }
        m
    }

    pub fn ids(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn ids_mut(&mut self, split: Split) -> &mut Vec<u64> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<u64> = [&self.train, &self.val, &self.test]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
struct KarpathyFile {
    images: Vec<KarpathyImage>,
}

#[derive(Deserialize)]
struct KarpathyImage {
    split: String,
    sentences: Vec<KarpathySentence>,
    cocoid: Option<u64>,
    imgid: Option<u64>,
    id: Option<u64>,
}

#[derive(Deserialize)]
struct KarpathySentence {
    raw: String,
}

/// Reads a dataset JSON in the Karpathy layout
/// (`images[].split`, `images[].sentences[].raw`). The image id is taken from
/// `cocoid`, `imgid` or `id`, in that order, else the position in the file.
pub fn load_karpathy_json(path: &Path) -> Result<(Vec<CaptionSet>, SplitManifest)> {
    let file: KarpathyFile = read_json(path)?;
    let mut sets = Vec::with_capacity(file.images.len());
    for (pos, img) in file.images.into_iter().enumerate() {
        let split = Split::parse(&img.split)
            .map_err(|e| Error::Data(format!("{}: image {pos}: {e}", path.display())))?;
        sets.push(CaptionSet {
            id: img.cocoid.or(img.imgid).or(img.id).unwrap_or(pos as u64),
            split,
            captions: img.sentences.into_iter().map(|s| s.raw).collect(),
        });
    }
    let manifest = SplitManifest::from_sets(&sets);
    if !manifest.is_disjoint() {
        return Err(Error::Data(format!("{}: duplicate image ids", path.display())));
    }
    Ok((sets, manifest))
}

#[derive(Serialize, Deserialize)]
struct CaptionsFile {
    images: Vec<CaptionSet>,
}

pub fn write_captions(path: &Path, sets: &[CaptionSet]) -> Result<()> {
    let text = serde_json::to_string_pretty(&CaptionsFile {
        images: sets.to_vec(),
    })
    .map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads `{"images": [{"id", "split", "captions"}]}`.
pub fn read_captions(path: &Path) -> Result<Vec<CaptionSet>> {
    let file: CaptionsFile = read_json(path)?;
    Ok(file.images)
}

pub const CAPTIONS_FILE: &str = "captions.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FEATURES_DIR: &str = "features";

pub fn feature_path(root: &Path, id: u64) -> PathBuf {
    root.join(FEATURES_DIR).join(format!("{id:06}.feat"))
}

/// One image with its references and features.
#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub id: u64,
    pub split: Split,
    pub captions: Vec<String>,
    pub features: FeatureGrid,
}

/// A dataset directory loaded into memory: `captions.json`, `vocab.txt`
/// and `features/<id>.feat`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub vocab: Vocab,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("dataset directory {} not found", root.display())));
        }
        let vocab = Vocab::load(&root.join(VOCAB_FILE))?;
        let sets = read_captions(&root.join(CAPTIONS_FILE))?;
        if !SplitManifest::from_sets(&sets).is_disjoint() {
            return Err(Error::Data(format!("{}: duplicate image ids", root.display())));
        }
        let mut images = Vec::with_capacity(sets.len());
        let mut dim = None;
        for s in sets {
            let features = read_features(&feature_path(root, s.id))?;
            if *dim.get_or_insert(features.feat_dim()) != features.feat_dim() {
                return Err(Error::Data(format!(
                    "image {} has feature dim {}, expected {}",
                    s.id,
                    features.feat_dim(),
                    dim.unwrap_or(0)
                )));
            }
            images.push(ImageRecord {
                id: s.id,
                split: s.split,
                captions: s.captions,
                features,
            });
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            vocab,
            images,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&ImageRecord> {
        self.images.iter().filter(|r| r.split == split).collect()
    }

    /// Feature width shared by all images (0 for an empty dataset).
    pub fn feat_dim(&self) -> usize {
        self.images.first().map_or(0, |r| r.features.feat_dim())
    }
}
