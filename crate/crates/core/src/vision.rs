//! Two-layer image classifier.
//!
//! L1 is a single shared layer that learns image tiles. Every tile of an
//! image is matched against it, and the winning node ids form a spatially
//! ordered [`FeatureList`]. L2 nodes are labeled and connect to L1 nodes:
//! slot `j` of an L2 node is wired to the L1 feature that won tile `j` when
//! the node was grown, and its resonator peaks when that feature responds
//! fully to tile `j` of the image being classified. A node therefore fires
//! for images whose tiles excite the same features in the same places.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{
    GraphError, Label, Layer, LayerConfig, Node, NodeId, Prototype, Recognition, Stimulus, TuningParams,
    TuningPolicy,
};
use crate::resonance::normalized_sigmoid_resonance;

/// Default normalization constant for feature codes.
pub const DEFAULT_K_CAP: u32 = 4096;

/// Feature code for a tile without an L1 winner.
pub const NO_WINNER: f64 = 1.0;

/// Largest perturbation angle accepted, in degrees.
pub const MAX_PERTURBATION_DEGREES: f64 = 15.0;

/// Number of digit classes.
pub const CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("image is {actual_h}x{actual_w}, expected {expected_h}x{expected_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("invalid tiling: {0}")]
    InvalidTiling(String),
    #[error("perturbation angle {0}° outside ±15°")]
    AngleOutOfRange(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("network is untrained")]
    Untrained,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {0} outside 0..10")]
    BadLabel(u8),
    #[error("L1 grew past the feature capacity {0}")]
    CapacityExceeded(u32),
    #[error("trace was recorded against model {recorded}, current model is {current}")]
    StaleTrace { recorded: String, current: String },
    #[error("replay of tile {slot} produced {replayed}, trace recorded {recorded}")]
    ReplayMismatch {
        slot: usize,
        recorded: f64,
        replayed: f64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type Result<T> = std::result::Result<T, VisionError>;

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(VisionError::InvalidConfig(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }
}

/// Grid decomposition of an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingSpec {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    /// Tile emission order; `order[i]` is the row-major index of the i-th tile emitted.
    pub order: Vec<usize>,
}

impl TilingSpec {
    /// Row-major tiling.
    pub fn new(height: usize, width: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::with_order(height, width, rows, cols, (0..rows * cols).collect())
    }

    pub fn with_order(
        height: usize,
        width: usize,
        rows: usize,
        cols: usize,
        order: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            height,
            width,
            rows,
            cols,
            order,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 4×4 grid of 7×7 tiles over a 28×28 image.
    pub fn mnist() -> Self {
        Self::new(28, 28, 4, 4).expect("static tiling is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VisionError::InvalidTiling(m));
        if self.rows == 0 || self.cols == 0 {
            return bad("grid must be non-empty".into());
        }
        if !self.height.is_multiple_of(self.rows) || !self.width.is_multiple_of(self.cols) {
            return bad(format!(
                "{}x{} image does not divide into a {}x{} grid",
                self.height, self.width, self.rows, self.cols
            ));
        }
        let n = self.tile_count();
        let mut seen = vec![false; n];
        if self.order.len() != n {
            return bad(format!("order has {} entries for {n} tiles", self.order.len()));
        }
        for &t in &self.order {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return bad("order is not a permutation".into());
            }
        }
        Ok(())
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tile_height(&self) -> usize {
        self.height / self.rows
    }

    pub fn tile_width(&self) -> usize {
        self.width / self.cols
    }

    pub fn tile_len(&self) -> usize {
        self.tile_height() * self.tile_width()
    }
}

/// Splits an image into flattened tiles, emitted in `spec.order`.
pub fn tile_image(image: &Image, spec: &TilingSpec) -> Result<Vec<Vec<f64>>> {
    if image.height != spec.height || image.width != spec.width {
        return Err(VisionError::DimensionMismatch {
            expected_h: spec.height,
            expected_w: spec.width,
            actual_h: image.height,
            actual_w: image.width,
        });
    }
    let (th, tw) = (spec.tile_height(), spec.tile_width());
    Ok(spec
        .order
        .iter()
        .map(|&t| {
            let (r0, c0) = ((t / spec.cols) * th, (t % spec.cols) * tw);
            let mut tile = Vec::with_capacity(th * tw);
            for r in r0..r0 + th {
                let start = r * spec.width + c0;
                tile.extend_from_slice(&image.pixels[start..start + tw]);
            }
            tile
        })
        .collect())
}

/// Spatially ordered L1 winners, each encoded as `id / k_cap`, with
/// [`NO_WINNER`] for tiles that had none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureList {
    pub rows: usize,
    pub cols: usize,
    pub k_cap: u32,
    pub entries: Vec<f64>,
}

impl FeatureList {
    pub fn from_winners(winners: &[Option<NodeId>], rows: usize, cols: usize, k_cap: u32) -> Result<Self> {
        debug_assert_eq!(winners.len(), rows * cols);
        let entries = winners
            .iter()
            .map(|w| match w {
                Some(id) if id.0 >= k_cap => Err(VisionError::CapacityExceeded(k_cap)),
                Some(id) => Ok(f64::from(id.0) / f64::from(k_cap)),
                None => Ok(NO_WINNER),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            rows,
            cols,
            k_cap,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decodes slot `i` back to an L1 node id.
    pub fn feature(&self, i: usize) -> Option<NodeId> {
        decode_feature(self.entries[i], self.k_cap)
    }
}

fn decode_feature(code: f64, k_cap: u32) -> Option<NodeId> {
    if code >= NO_WINNER {
        None
    } else {
        Some(NodeId((code * f64::from(k_cap)).round() as u32))
    }
}

/// Index permutations over the tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReorderOp {
    Identity,
    /// 180° rotation of the tile order.
    Reverse,
    /// Left-right mirror.
    MirrorH,
    /// Top-bottom mirror.
    MirrorV,
}

pub fn reorder_features(list: &FeatureList, op: ReorderOp) -> FeatureList {
    let (rows, cols) = (list.rows, list.cols);
    let n = list.entries.len();
    let source = |i: usize| match op {
        ReorderOp::Identity => i,
        ReorderOp::Reverse => n - 1 - i,
        ReorderOp::MirrorH => (i / cols) * cols + (cols - 1 - i % cols),
        ReorderOp::MirrorV => (rows - 1 - i / cols) * cols + i % cols,
    };
    FeatureList {
        entries: (0..n).map(|i| list.entries[source(i)]).collect(),
        ..list.clone()
    }
}

/// Rotates about the image center with nearest-neighbor sampling; uncovered
/// pixels become 0.
pub fn perturb_image(image: &Image, angle_degrees: f64) -> Result<Image> {
    if !(angle_degrees.abs() <= MAX_PERTURBATION_DEGREES) {
        return Err(VisionError::AngleOutOfRange(angle_degrees));
    }
    if angle_degrees == 0.0 {
        return Ok(image.clone());
    }
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    let mut out = Image::zeros(image.height, image.width);
    for r in 0..image.height {
        for c in 0..image.width {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            // Inverse rotation finds the source pixel.
            let sy = (cos * dy + sin * dx + cy).round();
            let sx = (-sin * dy + cos * dx + cx).round();
            if sy >= 0.0 && sx >= 0.0 && (sy as usize) < image.height && (sx as usize) < image.width {
                out.set(r, c, image.get(sy as usize, sx as usize));
            }
        }
    }
    Ok(out)
}

/// Tile dimensions above a pixel floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTile {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl MaskedTile {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn mask_tile(tile: &[f64], pixel_floor: f64) -> MaskedTile {
    let (indices, values) = tile
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > pixel_floor)
        .map(|(i, &v)| (i as u32, v))
        .unzip();
    MaskedTile { indices, values }
}

/// A tile presented to a masking L1: new nodes keep only bright pixels.
struct MaskedInput<'a> {
    tile: &'a [f64],
    floor: f64,
}

impl Stimulus for MaskedInput<'_> {
    fn arity(&self) -> usize {
        self.tile.len()
    }

    fn response(&self, node: &Node) -> f64 {
        node.response(self.tile)
    }

    fn dense_input(&self) -> Option<&[f64]> {
        Some(self.tile)
    }

    fn prototype(&self) -> Option<Prototype> {
        let masked = mask_tile(self.tile, self.floor);
        (!masked.is_empty()).then_some(Prototype {
            dims: Some(masked.indices),
            centers: masked.values,
        })
    }

    fn sample(&self) -> &[f64] {
        self.tile
    }
}

/// What an L2 node sees: for each slot, the responses of every L1 node to
/// that tile.
struct SlotResponses<'a> {
    l1_outputs: &'a [Vec<f64>],
    features: &'a FeatureList,
}

impl SlotResponses<'_> {
    fn slot_input(&self, slot: usize, code: f64) -> f64 {
        match decode_feature(code, self.features.k_cap) {
            Some(id) => self.l1_outputs[slot].get(id.index()).copied().unwrap_or(0.0),
            None if self.features.entries[slot] >= NO_WINNER => 1.0,
            None => 0.0,
        }
    }
}

impl Stimulus for SlotResponses<'_> {
    fn arity(&self) -> usize {
        self.features.len()
    }

    fn response(&self, node: &Node) -> f64 {
        let sum: f64 = node
            .centers
            .iter()
            .zip(&node.rhos)
            .enumerate()
            .map(|(slot, (&code, &rho))| {
                normalized_sigmoid_resonance(rho * (self.slot_input(slot, code) - 1.0))
            })
            .sum();
        sum / node.width() as f64
    }

    fn prototype(&self) -> Option<Prototype> {
        Some(Prototype {
            dims: None,
            centers: self.features.entries.clone(),
        })
    }

    fn sample(&self) -> &[f64] {
        &self.features.entries
    }
}

/// Network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tiling: TilingSpec,
    pub l1_threshold: f64,
    pub l1_rho: f64,
    pub l1_tuning: TuningPolicy,
    pub l2_threshold: f64,
    pub l2_rho: f64,
    pub tuning_params: TuningParams,
    pub k_cap: u32,
    /// Pixel floor for input masking; `None` disables masking.
    pub mask_floor: Option<f64>,
    /// Rotated copies of each training image, in degrees.
    pub perturbation_angles: Vec<f64>,
    /// Extra L2 training lists synthesized by reordering the feature list.
    pub feature_reorders: Vec<ReorderOp>,
    /// Upper bound on training passes; training stops early once a pass grows nothing.
    pub max_epochs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tiling: TilingSpec::mnist(),
            l1_threshold: 0.9,
            l1_rho: 2.42,
            l1_tuning: TuningPolicy::Frozen,
            l2_threshold: 0.9,
            l2_rho: 2.42,
            tuning_params: TuningParams::default(),
            k_cap: DEFAULT_K_CAP,
            mask_floor: None,
            perturbation_angles: vec![-10.0, 10.0],
            feature_reorders: Vec::new(),
            max_epochs: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        let bad = |m: &str| Err(VisionError::InvalidConfig(m.to_string()));
        if let Some(f) = self.mask_floor {
            if !(0.0..1.0).contains(&f) {
                return bad("mask floor must lie in [0, 1)");
            }
        }
        if let Some(&a) = self
            .perturbation_angles
            .iter()
            .find(|a| !(a.abs() <= MAX_PERTURBATION_DEGREES))
        {
            return Err(VisionError::AngleOutOfRange(a));
        }
        if self.k_cap == 0 {
            return bad("k_cap must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        self.l1_config().validate()?;
        self.l2_config().validate()?;
        Ok(())
    }

    fn l1_config(&self) -> LayerConfig {
        LayerConfig {
            arity: self.tiling.tile_len(),
            threshold: self.l1_threshold,
            default_rho: self.l1_rho,
            tuning: self.l1_tuning,
            params: self.tuning_params,
        }
    }

    fn l2_config(&self) -> LayerConfig {
        // L2 centers are feature codes, so they never retune.
        LayerConfig {
            arity: self.tiling.tile_count(),
            threshold: self.l2_threshold,
            default_rho: self.l2_rho,
            tuning: TuningPolicy::Frozen,
            params: self.tuning_params,
        }
    }
}

/// One tile's contribution to a recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileStep {
    pub tile: usize,
    pub winner: Option<NodeId>,
    pub output: f64,
}

/// The chain of winners behind one recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePath {
    /// Fingerprint of the model that produced the trace.
    pub model: String,
    pub input: Image,
    pub tiles: Vec<TileStep>,
    pub features: FeatureList,
    pub l2_winner: Option<NodeId>,
    pub l2_output: f64,
    pub predicted: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Correct,
    Wrong,
    Multiple,
    Unrecognized,
}

/// Labels surviving ambiguity resolution, with equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<Label>,
}

impl Prediction {
    pub fn weights(&self) -> BTreeMap<Label, f64> {
        let w = 1.0 / self.labels.len() as f64;
        self.labels.iter().map(|&l| (l, w)).collect()
    }

    pub fn assess(&self, truth: Label) -> ClassificationOutcome {
        let status = match self.labels.as_slice() {
            [] => OutcomeStatus::Unrecognized,
            [l] if *l == truth => OutcomeStatus::Correct,
            [_] => OutcomeStatus::Wrong,
            _ => OutcomeStatus::Multiple,
        };
        ClassificationOutcome {
            status,
            weights: self.weights(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub status: OutcomeStatus,
    pub weights: BTreeMap<Label, f64>,
}

/// Per-pass training counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub presented: usize,
    pub l1_created: usize,
    pub l2_created: usize,
    /// Label conflicts that could not grow a node because an identical one exists.
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub images: usize,
    pub l1_nodes: usize,
    pub l2_nodes: usize,
    pub l1_resonators: usize,
    pub epochs: Vec<EpochStats>,
    pub seconds: f64,
}

/// Denominator for exact fractional confusion counts: lcm(1..=10).
const WEIGHT_UNITS: u64 = 2520;

/// Real-valued confusion matrix (rows = true class).
///
/// Multiple recognitions split one unit equally among their labels; counts
/// are kept in units of 1/2520 so rows sum exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    units: [[u64; CLASSES]; CLASSES],
    unrecognized: [u64; CLASSES],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, prediction: &Prediction) {
        let t = truth.0 as usize;
        if prediction.labels.is_empty() {
            self.unrecognized[t] += 1;
            return;
        }
        let share = WEIGHT_UNITS / prediction.labels.len() as u64;
        for l in &prediction.labels {
            self.units[t][l.0 as usize] += share;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for t in 0..CLASSES {
            self.unrecognized[t] += other.unrecognized[t];
            for p in 0..CLASSES {
                self.units[t][p] += other.units[t][p];
            }
        }
    }

    pub fn cell(&self, truth: usize, predicted: usize) -> f64 {
        self.units[truth][predicted] as f64 / WEIGHT_UNITS as f64
    }

    pub fn unrecognized(&self, truth: usize) -> u64 {
        self.unrecognized[truth]
    }

    /// Recognized weight plus unrecognized count for a class; equals the
    /// number of test images of that class.
    pub fn row_total(&self, truth: usize) -> f64 {
        let units: u64 = self.units[truth].iter().sum::<u64>() + self.unrecognized[truth] * WEIGHT_UNITS;
        units as f64 / WEIGHT_UNITS as f64
    }

    pub fn class_accuracy(&self, truth: usize) -> Option<f64> {
        let total = self.row_total(truth);
        (total > 0.0).then(|| self.cell(truth, truth) / total)
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..CLASSES).map(|c| self.units[c][c]).sum();
        let total: f64 = (0..CLASSES).map(|c| self.row_total(c)).sum();
        if total == 0.0 {
            0.0
        } else {
            diag as f64 / WEIGHT_UNITS as f64 / total
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub correct: usize,
    pub wrong: usize,
    pub multiple: usize,
    pub unrecognized: usize,
}

impl OutcomeCounts {
    fn add(&mut self, status: OutcomeStatus) {
        match status {
            OutcomeStatus::Correct => self.correct += 1,
            OutcomeStatus::Wrong => self.wrong += 1,
            OutcomeStatus::Multiple => self.multiple += 1,
            OutcomeStatus::Unrecognized => self.unrecognized += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub counts: OutcomeCounts,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }
}

/// Intermediate result of pushing one image through both layers.
struct Analysis {
    tiles: Vec<TileStep>,
    features: FeatureList,
    l2: Recognition,
}

/// The L1 + L2 network.
#[derive(Debug, Serialize, Deserialize)]
pub struct ArnClassifier {
    config: PipelineConfig,
    l1: Layer,
    l2: Layer,
    #[serde(skip)]
    fingerprint: OnceLock<String>,
}

impl Clone for ArnClassifier {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            l1: self.l1.clone(),
            l2: self.l2.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for ArnClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.l1 == other.l1 && self.l2 == other.l2
    }
}

impl ArnClassifier {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            l1: Layer::new(config.l1_config())?,
            l2: Layer::new(config.l2_config())?,
            config,
            fingerprint: OnceLock::new(),
        })
    }

    /// Reassembles a network from stored layers.
    pub fn from_parts(config: PipelineConfig, l1: Layer, l2: Layer) -> Result<Self> {
        config.validate()?;
        if *l1.config() != config.l1_config() || *l2.config() != config.l2_config() {
            return Err(VisionError::InvalidConfig(
                "layer configuration disagrees with pipeline configuration".into(),
            ));
        }
        Ok(Self {
            config,
            l1,
            l2,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn l1(&self) -> &Layer {
        &self.l1
    }

    pub fn l2(&self) -> &Layer {
        &self.l2
    }

    pub fn is_trained(&self) -> bool {
        !self.l1.is_empty() && !self.l2.is_empty()
    }

    /// SHA-256 over the configuration and both layers.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut hasher = Sha256::new();
            let body = serde_json::to_vec(&(&self.config, &self.l1, &self.l2)).expect("network serializes");
            hasher.update(&body);
            hex::encode(hasher.finalize())
        })
    }

    fn touch(&mut self) {
        self.fingerprint = OnceLock::new();
    }

    fn tiles(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        tile_image(image, &self.config.tiling)
    }

    /// Whether a tile is entirely masked out and contributes the sentinel.
    fn is_blank(&self, tile: &[f64]) -> bool {
        self.config
            .mask_floor
            .is_some_and(|floor| tile.iter().all(|&v| v <= floor))
    }

    fn analyze(&self, image: &Image) -> Result<Analysis> {
        let tiles = self.tiles(image)?;
        let outputs: Vec<Vec<f64>> = tiles
            .iter()
            .map(|t| self.l1.responses_unchecked(&t[..]))
            .collect();
        let steps: Vec<TileStep> = tiles
            .iter()
            .zip(&outputs)
            .enumerate()
            .map(|(slot, (tile, out))| {
                let rec = if self.is_blank(tile) {
                    Recognition::default()
                } else {
                    self.l1.recognize(out)
                };
                TileStep {
                    tile: self.config.tiling.order[slot],
                    winner: rec.winner,
                    output: rec.output,
                }
            })
            .collect();
        let winners: Vec<Option<NodeId>> = steps.iter().map(|s| s.winner).collect();
        let features = FeatureList::from_winners(
            &winners,
            self.config.tiling.rows,
            self.config.tiling.cols,
            self.config.k_cap,
        )?;
        let stim = SlotResponses {
            l1_outputs: &outputs,
            features: &features,
        };
        let l2 = self.l2.recognize(&self.l2.responses_unchecked(&stim));
        Ok(Analysis {
            tiles: steps,
            features,
            l2,
        })
    }

    fn prediction_of(&self, l2: &Recognition) -> Prediction {
        let eps = self.config.tuning_params.tie_epsilon;
        let mut labels: Vec<Label> = l2
            .candidates
            .iter()
            .take_while(|&&(_, out)| l2.output - out <= eps)
            .filter_map(|&(id, _)| self.l2.nodes()[id.index()].label)
            .collect();
        labels.sort();
        labels.dedup();
        Prediction { labels }
    }

    /// Labels the network assigns to `image`, with the path that produced them.
    pub fn predict(&self, image: &Image) -> Result<(Prediction, TracePath)> {
        if !self.is_trained() {
            return Err(VisionError::Untrained);
        }
        let a = self.analyze(image)?;
        let prediction = self.prediction_of(&a.l2);
        let trace = TracePath {
            model: self.fingerprint().to_string(),
            input: image.clone(),
            tiles: a.tiles,
            features: a.features,
            l2_winner: a.l2.winner,
            l2_output: a.l2.output,
            predicted: prediction.labels.clone(),
        };
        Ok((prediction, trace))
    }

    /// Classifies `image` and grades it against `truth`.
    pub fn classify(&self, image: &Image, truth: Label) -> Result<(ClassificationOutcome, TracePath)> {
        let (prediction, trace) = self.predict(image)?;
        Ok((prediction.assess(truth), trace))
    }

    /// Classifies a labeled set in parallel; results merge in input order.
    pub fn evaluate(&self, images: &[Image], labels: &[Label]) -> Result<Evaluation> {
        if images.is_empty() {
            return Err(VisionError::EmptyDataset);
        }
        if !self.is_trained() {
            return Err(VisionError::Untrained);
        }
        self.fingerprint();
        let outcomes: Vec<(Label, Prediction)> = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(img, &truth)| {
                check_label(truth)?;
                let a = self.analyze(img)?;
                Ok((truth, self.prediction_of(&a.l2)))
            })
            .collect::<Result<_>>()?;
        let mut confusion = ConfusionMatrix::default();
        let mut counts = OutcomeCounts::default();
        for (truth, p) in &outcomes {
            confusion.record(*truth, p);
            counts.add(p.assess(*truth).status);
        }
        Ok(Evaluation { confusion, counts })
    }

    /// Trains on labeled images.
    ///
    /// The first pass presents every image (then its perturbed copies) to L1
    /// tile by tile and the resulting feature list to L2. Further passes
    /// repeat the sequence until one grows no node or `max_epochs` is hit.
    pub fn train(&mut self, images: &[Image], labels: &[Label]) -> Result<TrainingReport> {
        if images.is_empty() {
            return Err(VisionError::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(VisionError::InvalidConfig(
                "images and labels differ in length".into(),
            ));
        }
        labels.iter().try_for_each(|&l| check_label(l))?;
        let start = Instant::now();
        let mut samples: Vec<(Image, Label)> = images.iter().cloned().zip(labels.iter().copied()).collect();
        for &angle in &self.config.perturbation_angles.clone() {
            for (img, &l) in images.iter().zip(labels) {
                samples.push((perturb_image(img, angle)?, l));
            }
        }

        let mut epochs = Vec::new();
        for epoch in 1..=self.config.max_epochs {
            let mut stats = EpochStats {
                epoch,
                ..Default::default()
            };
            for (img, label) in &samples {
                self.learn(img, *label, &mut stats)?;
            }
            let grew = stats.l1_created + stats.l2_created > 0;
            epochs.push(stats);
            if !grew {
                break;
            }
        }
        self.touch();
        Ok(TrainingReport {
            images: images.len(),
            l1_nodes: self.l1.len(),
            l2_nodes: self.l2.len(),
            l1_resonators: self.l1.resonator_count(),
            epochs,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn learn(&mut self, image: &Image, label: Label, stats: &mut EpochStats) -> Result<()> {
        stats.presented += 1;
        let tiles = self.tiles(image)?;
        let mut winners = Vec::with_capacity(tiles.len());
        let mut touched: Vec<NodeId> = Vec::new();
        let retunes = self.config.l1_tuning == TuningPolicy::StatsTuning;
        let mut outputs = Vec::with_capacity(tiles.len());
        for tile in &tiles {
            let out = self.l1.responses_unchecked(&tile[..]);
            if self.is_blank(tile) {
                winners.push(None);
            } else {
                let rec = match self.config.mask_floor {
                    Some(floor) => {
                        let stim = MaskedInput { tile, floor };
                        self.l1.train_with_outputs(&stim, None, &out)?
                    }
                    None => self.l1.train_with_outputs(&tile[..], None, &out)?,
                };
                if rec.created.is_some() {
                    stats.l1_created += 1;
                } else if let Some(w) = rec.winner.filter(|_| rec.relaxed || retunes) {
                    touched.push(w);
                }
                winners.push(rec.created.or(rec.winner));
            }
            outputs.push(out);
        }
        if self.l1.len() > self.config.k_cap as usize {
            return Err(VisionError::CapacityExceeded(self.config.k_cap));
        }
        // Bring every tile's outputs up to date with nodes grown or changed
        // after that tile was scanned.
        let nodes = self.l1.nodes();
        for (tile, out) in tiles.iter().zip(&mut outputs) {
            let seen = out.len();
            out.extend(nodes[seen..].iter().map(|n| self.l1.response_of(n, tile)));
            for id in &touched {
                out[id.index()] = self.l1.response_of(&nodes[id.index()], tile);
            }
        }

        let features = FeatureList::from_winners(
            &winners,
            self.config.tiling.rows,
            self.config.tiling.cols,
            self.config.k_cap,
        )?;
        let mut lists = vec![features.clone()];
        lists.extend(
            self.config
                .feature_reorders
                .iter()
                .filter(|&&op| op != ReorderOp::Identity)
                .map(|&op| reorder_features(&features, op)),
        );
        for list in &lists {
            let stim = SlotResponses {
                l1_outputs: &outputs,
                features: list,
            };
            match self.l2.train_step(&stim, Some(label)) {
                Ok(rec) => {
                    if rec.created.is_some() {
                        stats.l2_created += 1;
                    }
                }
                Err(GraphError::DuplicateNode(_)) => stats.conflicts += 1,
                Err(e) => return Err(e.into()),
            }
        }
        self.touch();
        Ok(())
    }

    /// Renders a trace after replaying it against this model.
    pub fn trace_explain(&self, path: &TracePath) -> Result<String> {
        if path.model != self.fingerprint() {
            return Err(VisionError::StaleTrace {
                recorded: path.model.clone(),
                current: self.fingerprint().to_string(),
            });
        }
        let (_, replay) = self.predict(&path.input)?;
        for (slot, (a, b)) in path.tiles.iter().zip(&replay.tiles).enumerate() {
            if a != b {
                return Err(VisionError::ReplayMismatch {
                    slot,
                    recorded: a.output,
                    replayed: b.output,
                });
            }
        }
        if replay.l2_output != path.l2_output || replay.l2_winner != path.l2_winner {
            return Err(VisionError::ReplayMismatch {
                slot: path.tiles.len(),
                recorded: path.l2_output,
                replayed: replay.l2_output,
            });
        }
        Ok(render_trace(path))
    }
}

fn check_label(l: Label) -> Result<()> {
    if (l.0 as usize) < CLASSES {
        Ok(())
    } else {
        Err(VisionError::BadLabel(l.0))
    }
}

fn render_trace(path: &TracePath) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model {}", &path.model[..16.min(path.model.len())]);
    for (slot, step) in path.tiles.iter().enumerate() {
        match step.winner {
            Some(id) => {
                let _ = writeln!(
                    s,
                    "tile {:>2} (slot {slot:>2}): L1 {id} output {:.6}",
                    step.tile, step.output
                );
            }
            None => {
                let _ = writeln!(s, "tile {:>2} (slot {slot:>2}): no L1 winner", step.tile);
            }
        }
    }
    let labels: Vec<String> = path.predicted.iter().map(|l| l.to_string()).collect();
    match path.l2_winner {
        Some(id) => {
            let _ = writeln!(
                s,
                "decision: L2 {id} output {:.6} -> {}",
                path.l2_output,
                labels.join("/")
            );
        }
        None => {
            let missing: Vec<String> = path
                .tiles
                .iter()
                .filter(|t| t.winner.is_none())
                .map(|t| t.tile.to_string())
                .collect();
            let _ = writeln!(
                s,
                "decision: unrecognized (tiles without L1 winner: [{}])",
                missing.join(", ")
            );
        }
    }
    s
}
