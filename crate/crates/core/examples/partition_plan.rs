//! Partition plans for a 4 MiB model over shrinking parents, and a replan.
//!
//! `cargo run --example partition_plan`

use edgepar::estimator::{estimate_memory, KIB};
use edgepar::model::{DenseSpec, LayerSpec, ModelSpec, SoftmaxSpec};
use edgepar::planner::{
    plan_partition, replan_on_failure, select_candidates, validate_plan, CommCostModel, NodeProfile, PlannerConfig,
    Topology,
};

const MIB: u64 = 1 << 20;

fn main() -> edgepar::Result<()> {
    let fc = |i, o| LayerSpec::Fc(DenseSpec { in_units: i, out_units: o, relu: true });
    let model = ModelSpec::new(
        "four-mib",
        vec![LayerSpec::Input { shape: vec![15] }, fc(15, 2), fc(2, 4), fc(4, 4), LayerSpec::Softmax(SoftmaxSpec::PassThrough)],
    )?;
    let mem = estimate_memory(&model, 8, 8, KIB)?;
    println!("model needs {} bytes", mem.model_bytes);
    let cost = CommCostModel::default();
    let cfg = PlannerConfig::default();

    for parent_mib in [8, 2, 1] {
        let topo = Topology::new(
            NodeProfile::new("parent", parent_mib * MIB, 1e6),
            vec![
                NodeProfile::new("near", 2 * MIB, 1e6).at(3.0, 0.0),
                NodeProfile::new("far", 2 * MIB, 2e6).at(9.0, 4.0),
            ],
            20.0,
        )?;
        let cands = select_candidates(&topo);
        match plan_partition(&model, &mem, &cands, &cost, &cfg) {
            Ok(plan) => {
                println!("parent {parent_mib} MiB:\n{}", plan.to_table());
                assert!(validate_plan(&plan, &model, &cands).is_empty());
                if plan.contains("near") {
                    match replan_on_failure(&plan, "near", &topo, &model, &mem, &cost, &cfg) {
                        Ok(again) => println!("without `near`:\n{}", again.to_table()),
                        Err(e) => println!("without `near`: {e}\n"),
                    }
                }
            }
            Err(e) => println!("parent {parent_mib} MiB: {e}"),
        }
    }
    Ok(())
}
