//! Auto Resonance Networks: growing layers of resonator nodes, and a
//! two-layer digit classifier built from them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod graph;
pub mod resonance;
pub mod vision;

pub use dataset::{
    load_idx, load_model, parse_idx, sample_per_class, save_model, split_per_class, DatasetError,
    LabeledImageSet, LoadedModel,
};
pub use graph::{
    GraphError, Label, Layer, LayerConfig, Node, NodeId, Recognition, TuningParams, TuningPolicy,
};
pub use resonance::{CoverageInterval, ResonanceError, ResonatorSpec, Transform};
pub use vision::{
    ArnClassifier, ClassificationOutcome, ConfusionMatrix, Evaluation, FeatureList, Image, OutcomeStatus,
    PipelineConfig, Prediction, ReorderOp, TilingSpec, TracePath, TrainingReport, VisionError,
};
