//! Deterministic discrete-event execution of partition plans.

pub mod calibration;
pub mod engine;
pub mod report;

use std::collections::BTreeMap;

pub use calibration::{calibration_model, homogeneous_topology, CalibratedScenario, Calibration};
pub use engine::Simulation;
pub use report::{report, Report};

use crate::error::Result;
use crate::estimator::{MemoryEstimate, KIB};
use crate::model::ModelSpec;
use crate::planner::{PartitionPlan, PlannerConfig, Topology};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Offline,
    Garbage,
}

impl FaultKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "offline" => Some(Self::Offline),
            "garbage" | "garbage-output" => Some(Self::Garbage),
            _ => None,
        }
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Offline => "offline",
            Self::Garbage => "garbage-output",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub time: f64,
    pub node: String,
    pub kind: FaultKind,
}

impl Fault {
    pub fn new(time: f64, node: impl Into<String>, kind: FaultKind) -> Self {
        Self {
            time,
            node: node.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Granularity of times written to the event log.
    pub time_resolution: f64,
    pub faults: Vec<Fault>,
    /// Node id to measured speed factor, applied to the topology's speeds.
    pub calibration: BTreeMap<String, f64>,
    /// A sample is declared lost after this multiple of its expected completion time.
    pub timeout_factor: f64,
    /// Extra bytes held by the parent for coordination and gathering.
    pub parent_overhead_bytes: u64,
    pub bytes_per_element: u64,
    pub gather_ops_per_element: f64,
    pub planner: PlannerConfig,
    /// Memory model for replanning; inferred from the plan when absent.
    pub memory: Option<MemoryEstimate>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            time_resolution: 1e-9,
            faults: Vec::new(),
            calibration: BTreeMap::new(),
            timeout_factor: 3.0,
            parent_overhead_bytes: 256 * KIB,
            bytes_per_element: 8,
            gather_ops_per_element: 1.0,
            planner: PlannerConfig::default(),
            memory: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStats {
    /// Time spent in kernels, including work lost to faults.
    pub compute_seconds: f64,
    /// Compute for children; for the parent, the whole run, since it waits
    /// synchronously on every gather.
    pub busy_seconds: f64,
    pub segments: Vec<(f64, f64)>,
    /// Largest plan assignment the node held.
    pub assigned_bytes: u64,
    /// Assigned bytes plus, on the parent, coordination overhead and gathered outputs.
    pub peak_bytes: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub sent: u64,
    pub received: u64,
    /// Lost to an offline endpoint or cancelled by a replan.
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub node: String,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub output: Tensor,
    pub makespan: f64,
    pub per_node: BTreeMap<String, NodeStats>,
    pub edges: BTreeMap<(String, String), EdgeStats>,
    pub events: Vec<EventRecord>,
    pub replans: usize,
    pub checksum_failures: usize,
    /// Committed executions per layer, summed over samples.
    pub layer_execs: Vec<u64>,
    pub samples: usize,
    pub final_plan: PartitionPlan,
    pub time_resolution: f64,
}

impl SimResult {
    pub fn bytes_sent(&self) -> u64 {
        self.edges.values().map(|e| e.sent).sum()
    }

    pub fn bytes_received(&self) -> u64 {
        self.edges.values().map(|e| e.received).sum()
    }

    pub fn parent(&self) -> &str {
        self.final_plan.parent()
    }

    pub fn event_log_csv(&self) -> String {
        events_csv(&self.events, self.time_resolution)
    }
}

fn decimals(resolution: f64) -> usize {
    if resolution >= 1.0 || resolution <= 0.0 || !resolution.is_finite() {
        0
    } else {
        (-resolution.log10()).ceil() as usize
    }
}

pub fn events_csv(events: &[EventRecord], resolution: f64) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time_s", "node", "event", "detail"]).expect("in-memory write");
    let d = decimals(resolution);
    for e in events {
        let t = if resolution > 0.0 && resolution.is_finite() {
            (e.time / resolution).round() * resolution
        } else {
            e.time
        };
        w.write_record([format!("{t:.d$}"), e.node.clone(), e.event.clone(), e.detail.clone()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Runs `plan` on the simulated nodes of `topology`.
pub fn simulate_inference(
    plan: &PartitionPlan,
    model: &ModelSpec,
    weights: &WeightStore,
    input: &Tensor,
    topology: &Topology,
    config: &SimConfig,
) -> Result<SimResult> {
    Simulation::new(plan, model, weights, input, topology, config)?.run()
}

#[cfg(test)]
mod tests;
