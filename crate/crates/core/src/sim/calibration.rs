//! The measured latency scenario: a 98 s single-node baseline, a two-node
//! plan and a four-node plan over heterogeneous children.
//!
//! Children run the same nominal speed as the parent scaled by a measured
//! factor. `Calibration::fit` recovers the factors by bisection on simulated
//! makespans; the results are frozen in `CHILD_FACTOR` and `SHARED_FACTOR`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::engine::{apply_calibration, Simulation};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::estimator::{estimate_memory, model_params, MemoryEstimate, KIB};
use crate::inference::range_ops;
use crate::model::{ConvSpec, DenseSpec, LayerSpec, ModelSpec, SoftmaxSpec};
use crate::planner::{plan_partition, select_candidates, CommCostModel, NodeProfile, PartitionPlan, PlannerConfig, Topology};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

pub const BASELINE_SECONDS: f64 = 98.0;
pub const TWO_NODE_SPEEDUP: f64 = 4.0;
pub const FOUR_NODE_SPEEDUP: f64 = 9.8;
pub const SAMPLES: usize = 32;
pub const CONV_LAYERS: usize = 24;
const CHANNELS: usize = 16;
const SIDE: usize = 4;
const HOP_SECONDS: f64 = 1e-3;
const BANDWIDTH: f64 = 1e8;

/// Speed factor of the first child (n1), fitted for the two-node speedup.
pub const CHILD_FACTOR: f64 = 3.854;
/// Speed factor shared by n2 and n3, fitted for the four-node speedup.
pub const SHARED_FACTOR: f64 = 5.118;

/// Input, `CONV_LAYERS` shape-preserving 3x3 convolutions, flatten, dense, softmax.
pub fn calibration_model() -> ModelSpec {
    let mut layers = vec![LayerSpec::Input {
        shape: vec![CHANNELS, SIDE, SIDE],
    }];
    for _ in 0..CONV_LAYERS {
        layers.push(LayerSpec::Conv(ConvSpec {
            width: 3,
            height: 3,
            in_channels: CHANNELS,
            out_channels: CHANNELS,
            stride: 1,
            padding: 1,
            relu: true,
        }));
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Fc(DenseSpec {
        in_units: CHANNELS * SIDE * SIDE,
        out_units: 6,
        relu: false,
    }));
    layers.push(LayerSpec::Softmax(SoftmaxSpec::PassThrough));
    ModelSpec::new("calibration", layers).expect("calibration model is valid")
}

pub fn calibration_memory(model: &ModelSpec) -> MemoryEstimate {
    estimate_memory(model, 1, 1, KIB).expect("small model")
}

/// Nominal speed giving a `BASELINE_SECONDS` single-node run of `SAMPLES` samples.
pub fn base_speed(model: &ModelSpec) -> f64 {
    range_ops(model, 0..model.len()) as f64 * SAMPLES as f64 / BASELINE_SECONDS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub child: f64,
    pub shared: f64,
}

impl Calibration {
    pub fn fitted() -> Self {
        Self {
            child: CHILD_FACTOR,
            shared: SHARED_FACTOR,
        }
    }

    pub fn factors(&self) -> BTreeMap<String, f64> {
        [("n1", self.child), ("n2", self.shared), ("n3", self.shared)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Bisection on each factor in turn; simulated makespan is non-increasing
    /// in child speed because the planner re-optimizes over a fixed split set.
    pub fn fit() -> Result<Self> {
        let model = calibration_model();
        let baseline = CalibratedScenario::build(&model, 1, &Calibration { child: 1.0, shared: 1.0 })?.timing()?;
        let child = bisect(|f| {
            let c = Calibration { child: f, shared: 1.0 };
            Ok(baseline / CalibratedScenario::build(&model, 2, &c)?.timing()?)
        }, TWO_NODE_SPEEDUP)?;
        let shared = bisect(|g| {
            let c = Calibration { child, shared: g };
            Ok(baseline / CalibratedScenario::build(&model, 4, &c)?.timing()?)
        }, FOUR_NODE_SPEEDUP)?;
        Ok(Self { child, shared })
    }
}

/// Smallest factor in [1/64, 64] whose speedup reaches `target`.
fn bisect(mut speedup: impl FnMut(f64) -> Result<f64>, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1.0 / 64.0, 64.0);
    if speedup(hi)? < target {
        return Err(Error::Range(format!("speedup {target} unreachable with factors up to {hi}")));
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if speedup(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Everything needed to run one point of the latency figure.
#[derive(Debug, Clone)]
pub struct CalibratedScenario {
    pub model: ModelSpec,
    pub memory: MemoryEstimate,
    /// Nominal speeds; the simulator applies `config.calibration`.
    pub topology: Topology,
    pub config: SimConfig,
    pub plan: PartitionPlan,
}

impl CalibratedScenario {
    /// `nodes` is 1, 2 or 4. Free memory forces exactly that many nodes.
    pub fn build(model: &ModelSpec, nodes: usize, cal: &Calibration) -> Result<Self> {
        let memory = calibration_memory(model);
        let b = memory.model_bytes;
        let speed = base_speed(model);
        let node = |id: &str, free: u64, x: f64| NodeProfile::new(id, free, speed).at(x, 0.0).with_link(HOP_SECONDS, BANDWIDTH);
        let (parent, children) = match nodes {
            1 => (node("n0", b, 0.0), vec![]),
            2 => (node("n0", b / 20, 0.0), vec![node("n1", b, 1.0)]),
            4 => (
                node("n0", b / 20, 0.0),
                vec![node("n1", b * 2 / 5, 1.0), node("n2", b * 8 / 25, 2.0), node("n3", b * 8 / 25, 3.0)],
            ),
            n => return Err(Error::Range(format!("calibrated scenarios cover 1, 2 or 4 nodes, not {n}"))),
        };
        let topology = Topology::new(parent, children, f64::INFINITY)?;
        let mut config = SimConfig {
            memory: Some(memory),
            planner: PlannerConfig::default(),
            ..SimConfig::default()
        };
        config.calibration = cal
            .factors()
            .into_iter()
            .filter(|(k, _)| topology.node(k).is_some())
            .collect();
        let cost = CommCostModel {
            samples: SAMPLES as u64,
            bytes_per_element: config.bytes_per_element,
            gather_ops_per_element: config.gather_ops_per_element,
        };
        let effective = apply_calibration(&topology, &config.calibration)?;
        let plan = plan_partition(model, &memory, &select_candidates(&effective), &cost, &config.planner)?;
        Ok(Self {
            model: model.clone(),
            memory,
            topology,
            config,
            plan,
        })
    }

    pub fn timing(&self) -> Result<f64> {
        Simulation::timing_only(&self.plan, &self.model, SAMPLES, &self.topology, &self.config)
    }
}

pub fn calibration_weights(model: &ModelSpec) -> WeightStore {
    WeightStore::random(model, 98)
}

/// `SAMPLES` inputs with values in [0, 1).
pub fn calibration_input(model: &ModelSpec, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![SAMPLES];
    shape.extend_from_slice(model.input_shape());
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).expect("consistent shape")
}

/// `n` identical nodes with free links, each able to hold just over `1/n` of the model.
pub fn homogeneous_topology(model: &ModelSpec, memory: &MemoryEstimate, n: usize, speed: f64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::Range("need at least one node".into()));
    }
    let params = model_params(model);
    let largest = params
        .per_layer
        .iter()
        .map(|&(_, p)| memory.bytes_for(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    let b = memory.model_bytes;
    let free = if n == 1 { b } else { b.div_ceil(n as u64) + largest };
    let nodes: Vec<NodeProfile> = (0..n)
        .map(|i| NodeProfile::new(format!("h{i}"), free, speed).at(i as f64, 0.0).with_link(0.0, f64::INFINITY))
        .collect();
    let mut it = nodes.into_iter();
    let parent = it.next().expect("n >= 1");
    Topology::new(parent, it.collect(), f64::INFINITY)
}
