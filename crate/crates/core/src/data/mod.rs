//! Datasets: the synthetic shapes task, caption JSON loaders, feature files
//! and the vocabulary.

mod captions;
mod features;
mod synthetic;
mod vocab;

pub use captions::{
    feature_path, load_karpathy_json, read_captions, write_captions, CaptionSet, Dataset,
    ImageRecord, Split, SplitManifest, CAPTIONS_FILE, FEATURES_DIR, VOCAB_FILE,
};
pub use features::{
    decode_features, encode_features, read_features, write_features, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use synthetic::{
    generate_dataset, Color, SceneObject, Shape, SyntheticConfig, SyntheticManifest,
    SyntheticScene, MANIFEST_FILE, SCENES_FILE,
};
pub use vocab::{Vocab, SPECIAL_TOKENS};
