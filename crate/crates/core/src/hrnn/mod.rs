//! The hierarchical model: Bar, Beat and Note layers, their datasets,
//! training, generation and evaluation.

mod dataset;
mod evaluate;
mod generate;
mod model;
mod spec;

pub use dataset::{
    build_training_examples, encode_sequence, layer_examples, piece_conditions, Codebooks, FeatureConfig,
    LayerDatasets, Piece, WindowConfig,
};
pub use evaluate::{evaluate_model, profile_adherence, rhythm_agreement, Adherence, LayerMetrics};
pub use generate::{
    generate, generate_batch, DecodeMode, Decoder, Generation, GenerationPlan, GenerationTrace, LayerTrace, Primer,
    DEFAULT_BEAM_WIDTH,
};
pub use model::{layer_shape, null_class, train_hrnn, train_layer, HrnnConfig, HrnnModel, LayerModel, BUNDLE_MANIFEST};
pub use spec::{
    lookback_features, step_features, LayerSpec, Level, LookbackConfig, LookbackFeature, StepCondition, Variant,
    CHROMA_DIM, FEATURE_LAYOUT_VERSION,
};
