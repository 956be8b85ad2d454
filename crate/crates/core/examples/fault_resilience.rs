//! Inject a child going offline and a child emitting garbage; both runs recover.
//!
//! `cargo run --example fault_resilience`

use edgepar::planner::{plan_partition, select_candidates, CommCostModel, NodeProfile, PlannerConfig, Topology};
use edgepar::sim::calibration::{calibration_input, calibration_memory, calibration_weights};
use edgepar::sim::{calibration_model, simulate_inference, Fault, FaultKind, SimConfig};

fn main() -> edgepar::Result<()> {
    let model = calibration_model();
    let mem = calibration_memory(&model);
    let b = mem.model_bytes;
    let parent = NodeProfile::new("p", b / 10, 2e6).with_link(1e-3, 1e7);
    let children = (1..=4)
        .map(|i| NodeProfile::new(format!("c{i}"), b / 2, 1e6 * (1.0 + i as f64)).at(i as f64, 0.0).with_link(1e-3, 1e7))
        .collect();
    let topo = Topology::new(parent, children, f64::INFINITY)?;
    let weights = calibration_weights(&model);
    let input = calibration_input(&model, 1);
    let cost = CommCostModel { samples: input.shape()[0] as u64, ..Default::default() };
    let plan = plan_partition(&model, &mem, &select_candidates(&topo), &cost, &PlannerConfig::default())?;
    let config = SimConfig { memory: Some(mem), ..SimConfig::default() };
    let run = |cfg: &SimConfig| simulate_inference(&plan, &model, &weights, &input, &topo, cfg);

    let base = run(&config)?;
    println!("fault-free: makespan {:.3} s over {} nodes", base.makespan, plan.node_count());
    let victim = plan.assignments[1].node.clone();
    let seg = &base.per_node[&victim].segments;
    let mid = (seg[0].0 + seg[seg.len() - 1].1) / 2.0;

    for fault in [Fault::new(mid, &victim, FaultKind::Offline), Fault::new(0.0, &victim, FaultKind::Garbage)] {
        let mut cfg = config.clone();
        cfg.faults.push(fault.clone());
        let r = run(&cfg)?;
        println!(
            "{} {} at {:.3} s: makespan {:.3} s, replans {}, checksum failures {}, output identical {}",
            fault.kind,
            fault.node,
            fault.time,
            r.makespan,
            r.replans,
            r.checksum_failures,
            r.output.bit_eq(&base.output)
        );
        for e in r.events.iter().filter(|e| matches!(e.event.as_str(), "timeout" | "replan" | "checksum-mismatch")) {
            println!("  {:.4} {} {} {}", e.time, e.node, e.event, e.detail);
        }
    }
    Ok(())
}
