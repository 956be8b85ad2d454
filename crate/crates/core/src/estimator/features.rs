use super::params::{MemoryEstimate, ParamCount};
use crate::model::ModelSpec;
use crate::planner::topology::NodeProfile;

pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] =
    ["weights", "activations", "biases", "params", "model_bytes", "node_free"];

/// `[W, A, B, P, model bytes, node free bytes]`, all as element or byte counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; FEATURE_DIM] {
        &self.0
    }

    pub fn model_bytes(&self) -> f64 {
        self.0[4]
    }

    pub fn node_free(&self) -> f64 {
        self.0[5]
    }
}

/// Weight and bias element counts summed over the model.
pub fn weight_bias_counts(model: &ModelSpec) -> (u64, u64) {
    model
        .layers()
        .iter()
        .filter_map(|l| l.weight_shape())
        .fold((0, 0), |(w, b), (shape, bias)| {
            (w + shape.iter().product::<usize>() as u64, b + bias as u64)
        })
}

/// Elements of every layer output at batch 1, the input included.
pub fn activation_count(model: &ModelSpec) -> u64 {
    (0..model.len())
        .map(|i| model.output_shape(i).iter().product::<usize>() as u64)
        .sum()
}

pub fn build_features(model: &ModelSpec, params: &ParamCount, mem: &MemoryEstimate, node: &NodeProfile) -> FeatureVector {
    let (w, b) = weight_bias_counts(model);
    FeatureVector([
        w as f64,
        activation_count(model) as f64,
        b as f64,
        params.total as f64,
        mem.model_bytes as f64,
        node.free_memory as f64,
    ])
}
