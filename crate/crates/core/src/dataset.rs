//! MNIST IDX ingestion, seeded sampling and model files.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Label, Layer};
use crate::vision::{ArnClassifier, Image, PipelineConfig, VisionError, CLASSES};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Current model file format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Generator used for every seeded draw.
pub const RNG_NAME: &str = "ChaCha8";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{file}: truncated, need {needed} bytes, have {actual}")]
    Truncated {
        file: &'static str,
        needed: usize,
        actual: usize,
    },
    #[error("image file has {images} entries, label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside 0..10")]
    BadLabel(u8),
    #[error("class {class} has {available} images, {requested} requested")]
    InsufficientClass {
        class: u8,
        available: usize,
        requested: usize,
    },
    #[error("model format version {found}, this build reads version {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("model hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Vision(#[from] VisionError),
}

type Result<T> = std::result::Result<T, DatasetError>;

/// Where a set came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub images_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<Label>,
    pub source: SourceInfo,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images of each class, by index into the set.
    pub fn class_indices(&self) -> [Vec<usize>; CLASSES] {
        let mut by_class: [Vec<usize>; CLASSES] = Default::default();
        for (i, l) in self.labels.iter().enumerate() {
            by_class[l.0 as usize].push(i);
        }
        by_class
    }

    fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: SourceInfo {
                count: indices.len(),
                ..self.source.clone()
            },
        }
    }
}

fn inflate(bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn be_u32(bytes: &[u8], at: usize, file: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DatasetError::Truncated {
            file,
            needed: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX image file and label file; gzip input is detected by its header.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledImageSet> {
    let io = |source| DatasetError::Io {
        path: PathBuf::from("<gzip>"),
        source,
    };
    let images = inflate(image_bytes).map_err(io)?;
    let labels = inflate(label_bytes).map_err(io)?;

    let magic = be_u32(&images, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::BadMagic {
            file: "images",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&labels, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic {
            file: "labels",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n_images = be_u32(&images, 4, "images")? as usize;
    let rows = be_u32(&images, 8, "images")? as usize;
    let cols = be_u32(&images, 12, "images")? as usize;
    let n_labels = be_u32(&labels, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(DatasetError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels = rows * cols;
    let needed = 16 + n_images * pixels;
    if images.len() < needed {
        return Err(DatasetError::Truncated {
            file: "images",
            needed,
            actual: images.len(),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(DatasetError::Truncated {
            file: "labels",
            needed: 8 + n_labels,
            actual: labels.len(),
        });
    }

    let label_vec = labels[8..8 + n_labels]
        .iter()
        .map(|&b| {
            if (b as usize) < CLASSES {
                Ok(Label(b))
            } else {
                Err(DatasetError::BadLabel(b))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let image_vec = images[16..needed]
        .chunks_exact(pixels.max(1))
        .take(n_images)
        .map(|chunk| {
            Image::new(rows, cols, chunk.iter().map(|&b| f64::from(b) / 255.0).collect())
                .expect("chunk matches dimensions")
        })
        .collect();
    Ok(LabeledImageSet {
        images: image_vec,
        labels: label_vec,
        source: SourceInfo {
            count: n_images,
            ..Default::default()
        },
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an IDX pair from disk.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledImageSet> {
    let mut set = parse_idx(&read(images)?, &read(labels)?)?;
    set.source.images_path = Some(images.to_path_buf());
    set.source.labels_path = Some(labels.to_path_buf());
    Ok(set)
}

/// Fisher-Yates with rejection-sampled draws from ChaCha8.
fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Uniform integer in `0..n` from 64-bit draws, rejecting the biased tail.
fn uniform_below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v: u64 = rng.gen();
        if v < zone {
            return v % n;
        }
    }
}

fn shuffled_classes(set: &LabeledImageSet, seed: u64) -> [Vec<usize>; CLASSES] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = set.class_indices();
    for members in &mut by_class {
        shuffle(members, &mut rng);
    }
    by_class
}

fn check_population(by_class: &[Vec<usize>; CLASSES], needed: usize) -> Result<()> {
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < needed {
            return Err(DatasetError::InsufficientClass {
                class: c as u8,
                available: members.len(),
                requested: needed,
            });
        }
    }
    Ok(())
}

fn interleave(by_class: &[Vec<usize>; CLASSES], range: std::ops::Range<usize>) -> Vec<usize> {
    range
        .flat_map(|k| by_class.iter().map(move |members| members[k]))
        .collect()
}

/// Draws `n_per_class` images of every digit without replacement; output
/// cycles through the classes in order.
pub fn sample_per_class(set: &LabeledImageSet, n_per_class: usize, seed: u64) -> Result<LabeledImageSet> {
    let by_class = shuffled_classes(set, seed);
    check_population(&by_class, n_per_class)?;
    Ok(set.select(&interleave(&by_class, 0..n_per_class)))
}

/// Disjoint train and test samples drawn from one shuffle. The test sample
/// depends only on `n_test` and the seed, so it stays fixed as `n_train` varies.
pub fn split_per_class(
    set: &LabeledImageSet,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let by_class = shuffled_classes(set, seed);
    check_population(&by_class, n_train + n_test)?;
    Ok((
        set.select(&interleave(&by_class, n_test..n_test + n_train)),
        set.select(&interleave(&by_class, 0..n_test)),
    ))
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    config: PipelineConfig,
    /// Sampling seed the model was trained with, if known.
    seed: Option<u64>,
    rng: String,
    l1: Layer,
    l2: Layer,
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    format_version: u32,
    content_hash: String,
    model: serde_json::Value,
}

fn body_hash(body: &serde_json::Value) -> String {
    let canonical = serde_json::to_vec(body).expect("value serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Serializes a network to self-describing JSON with a content hash.
pub fn model_to_string(network: &ArnClassifier, seed: Option<u64>) -> String {
    let body = ModelBody {
        config: network.config().clone(),
        seed,
        rng: RNG_NAME.to_string(),
        l1: network.l1().clone(),
        l2: network.l2().clone(),
    };
    let model = serde_json::to_value(&body).expect("model serializes");
    let envelope = ModelEnvelope {
        format_version: MODEL_FORMAT_VERSION,
        content_hash: body_hash(&model),
        model,
    };
    serde_json::to_string_pretty(&envelope).expect("envelope serializes")
}

/// Loaded network plus the seed recorded with it.
pub struct LoadedModel {
    pub network: ArnClassifier,
    pub seed: Option<u64>,
}

pub fn model_from_str(text: &str) -> Result<LoadedModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| DatasetError::Malformed("missing format_version".into()))?;
    if found != u64::from(MODEL_FORMAT_VERSION) {
        return Err(DatasetError::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: found as u32,
        });
    }
    let envelope: ModelEnvelope =
        serde_json::from_value(value).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    let computed = body_hash(&envelope.model);
    if computed != envelope.content_hash {
        return Err(DatasetError::HashMismatch {
            recorded: envelope.content_hash,
            computed,
        });
    }
    let body: ModelBody =
        serde_json::from_value(envelope.model).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    if body.rng != RNG_NAME {
        return Err(DatasetError::Malformed(format!("unknown generator {}", body.rng)));
    }
    let network = ArnClassifier::from_parts(body.config, body.l1, body.l2)?;
    Ok(LoadedModel {
        network,
        seed: body.seed,
    })
}

pub fn save_model(network: &ArnClassifier, seed: Option<u64>, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(network, seed)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    model_from_str(&text)
}
