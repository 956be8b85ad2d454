//! Node selection and layer-range placement.

pub mod cost;
pub mod plan;
pub mod topology;

pub use cost::{modeled_latency, stage_times, CommCostModel, StageTimes};
pub use plan::{
    accumulation_count, plan_partition, plan_with_regressor, replan_on_failure, validate_plan, Assignment, CommEdge,
    GatedPlan, PartitionPlan, PlanStatus, PlannerConfig, Violation, ViolationKind,
};
pub use topology::{select_candidates, NodeProfile, Topology};
