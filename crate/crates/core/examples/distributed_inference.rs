//! Run a distributed plan on simulated nodes and compare with one machine.
//!
//! `cargo run --example distributed_inference`

use edgepar::inference::model_forward;
use edgepar::planner::{plan_partition, select_candidates, CommCostModel, NodeProfile, PlannerConfig, Topology};
use edgepar::sim::calibration::{calibration_input, calibration_memory, calibration_weights};
use edgepar::sim::{calibration_model, report, simulate_inference, SimConfig};

fn main() -> edgepar::Result<()> {
    let model = calibration_model();
    let mem = calibration_memory(&model);
    let b = mem.model_bytes;
    let parent = NodeProfile::new("parent", b / 4, 4e6).with_link(1e-3, 1e7);
    let children = vec![
        NodeProfile::new("c1", b / 2, 2e6).at(2.0, 0.0).with_link(1e-3, 1e7),
        NodeProfile::new("c2", b / 2, 3e6).at(0.0, 3.0).with_link(2e-3, 5e6),
    ];
    let topo = Topology::new(parent.clone(), children, f64::INFINITY)?;
    let weights = calibration_weights(&model);
    let input = calibration_input(&model, 0);
    let samples = input.shape()[0];
    let cost = CommCostModel { samples: samples as u64, ..Default::default() };
    let plan = plan_partition(&model, &mem, &select_candidates(&topo), &cost, &PlannerConfig::default())?;
    print!("{}", plan.to_table());

    let config = SimConfig { memory: Some(mem), ..SimConfig::default() };
    let result = simulate_inference(&plan, &model, &weights, &input, &topo, &config)?;

    let alone = Topology::new(NodeProfile { free_memory: u64::MAX, ..parent }, vec![], f64::INFINITY)?;
    let single = plan_partition(&model, &mem, &select_candidates(&alone), &cost, &PlannerConfig::default())?;
    let baseline = simulate_inference(&single, &model, &weights, &input, &alone, &config)?;

    print!("{}", report(&result, &baseline)?.to_table());
    let same = result.output.bit_eq(&model_forward(&model, &weights, &input)?);
    println!("{samples} samples, bitwise equal to monolith: {same}");
    Ok(())
}
