//! Parameter counts, memory footprint and the offload classifier.

pub mod features;
pub mod params;
pub mod regressor;

pub use features::{build_features, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
pub use params::{estimate_memory, layer_params, memory_for_total, model_memory, model_params, MemoryEstimate, ParamCount, KIB};
pub use regressor::{
    synthetic_offload_dataset, train_regressor, OffloadPrediction, RegressorConfig, RegressorModel,
};
