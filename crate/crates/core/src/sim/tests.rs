use super::calibration::{base_speed, calibration_input, calibration_memory, calibration_weights, BASELINE_SECONDS, SAMPLES};
use super::report::latency_plot_data;
use super::*;
use crate::error::Error;
use crate::estimator::{estimate_memory, model_params};
use crate::inference::{model_forward, range_ops};
use crate::model::{DenseSpec, LayerSpec, SoftmaxSpec};
use crate::planner::{plan_partition, select_candidates, CommCostModel, NodeProfile, PlanStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIB: u64 = 1 << 20;

fn batch(model: &ModelSpec, m: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![m];
    shape.extend_from_slice(model.input_shape());
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn plan_for(model: &ModelSpec, mem: &MemoryEstimate, topo: &Topology, samples: u64) -> PartitionPlan {
    let cost = CommCostModel {
        samples,
        ..Default::default()
    };
    plan_partition(model, mem, &select_candidates(topo), &cost, &PlannerConfig::default()).unwrap()
}

/// Uniform conv model over a parent holding a tenth of it and four children
/// holding half each, so three nodes are needed and one can be lost.
struct Spare {
    model: ModelSpec,
    weights: WeightStore,
    input: Tensor,
    topo: Topology,
    plan: PartitionPlan,
    config: SimConfig,
}

fn spare() -> Spare {
    let model = calibration_model();
    let mem = calibration_memory(&model);
    let b = mem.model_bytes;
    let parent = NodeProfile::new("p", b / 10, 2e6).with_link(1e-3, 1e7);
    let children = (1..=4)
        .map(|i| NodeProfile::new(format!("c{i}"), b / 2, 1e6 * (1.0 + i as f64)).at(i as f64, 0.0).with_link(1e-3, 1e7))
        .collect();
    let topo = Topology::new(parent, children, f64::INFINITY).unwrap();
    let plan = plan_for(&model, &mem, &topo, 4);
    let config = SimConfig {
        memory: Some(mem),
        ..SimConfig::default()
    };
    Spare {
        weights: WeightStore::random(&model, 5),
        input: batch(&model, 4, 9),
        model,
        topo,
        plan,
        config,
    }
}

impl Spare {
    fn run(&self, config: &SimConfig) -> Result<SimResult> {
        simulate_inference(&self.plan, &self.model, &self.weights, &self.input, &self.topo, config)
    }

    fn mid_busy(&self, base: &SimResult, node: &str) -> f64 {
        let seg = &base.per_node[node].segments;
        (seg.first().unwrap().0 + seg.last().unwrap().1) / 2.0
    }
}

fn check_conservation(r: &SimResult, samples: u64) {
    for (edge, e) in &r.edges {
        assert_eq!(e.sent, e.received + e.dropped, "edge {edge:?}");
    }
    assert!(r.layer_execs.iter().all(|&c| c == samples), "{:?}", r.layer_execs);
    let last = r.per_node.values().flat_map(|s| &s.segments).map(|s| s.1).fold(0.0, f64::max);
    assert!(r.makespan >= last);
}

#[test]
fn single_node_matches_monolith() {
    let model = ModelSpec::example();
    let mem = estimate_memory(&model, 1, 1, KIB).unwrap();
    let topo = Topology::new(NodeProfile::new("p", 8 * MIB, 1000.0), vec![], f64::INFINITY).unwrap();
    let plan = plan_for(&model, &mem, &topo, 1);
    assert_eq!(plan.status, PlanStatus::SingleNode);
    let w = WeightStore::random(&model, 3);
    let x = batch(&model, 1, 1).unstack().unwrap().remove(0);
    let r = simulate_inference(&plan, &model, &w, &x, &topo, &SimConfig::default()).unwrap();
    assert_eq!(r.makespan, range_ops(&model, 0..model.len()) as f64 / 1000.0);
    assert_eq!(r.bytes_sent(), 0);
    assert!(r.output.bit_eq(&model_forward(&model, &w, &x).unwrap()));
    assert_eq!(r.output.shape(), &[6]);
    check_conservation(&r, 1);
}

#[test]
fn two_node_balanced_halves_compute() {
    let model = calibration_model();
    let mem = calibration_memory(&model);
    let topo = homogeneous_topology(&model, &mem, 2, 1e6).unwrap();
    let m = 64;
    let plan = plan_for(&model, &mem, &topo, m as u64);
    assert_eq!(plan.node_count(), 2);
    let w = calibration_weights(&model);
    let x = batch(&model, m, 2);
    let r = simulate_inference(&plan, &model, &w, &x, &topo, &SimConfig::default()).unwrap();
    let single = m as f64 * range_ops(&model, 0..model.len()) as f64 / 1e6;
    let gather = m as f64 * 6.0 / 1e6;
    // One conv layer of imbalance and one sample of pipeline fill at most.
    let slack = single / CONV_LAYERS_F + single / m as f64;
    assert!(r.makespan >= single / 2.0, "{} vs {}", r.makespan, single / 2.0);
    assert!(r.makespan <= single / 2.0 + gather + slack, "{} vs {}", r.makespan, single / 2.0);
    assert!(r.output.bit_eq(&model_forward(&model, &w, &x).unwrap()));
    check_conservation(&r, m as u64);
}

const CONV_LAYERS_F: f64 = calibration::CONV_LAYERS as f64;

#[test]
fn distributed_runs_match_monolith_and_conserve() {
    let s = spare();
    assert_eq!(s.plan.node_count(), 3);
    let r = s.run(&s.config).unwrap();
    assert!(r.output.bit_eq(&model_forward(&s.model, &s.weights, &s.input).unwrap()));
    check_conservation(&r, 4);
    assert_eq!(r.bytes_sent(), r.bytes_received());
    assert_eq!(r.replans, 0);
    let parent = &r.per_node["p"];
    for (id, st) in &r.per_node {
        assert!(parent.busy_seconds >= st.busy_seconds, "{id}");
    }
    assert_eq!(parent.peak_bytes, parent.assigned_bytes + s.config.parent_overhead_bytes + 4 * 6 * 8);
}

#[test]
fn event_log_is_deterministic() {
    let s = spare();
    let a = s.run(&s.config).unwrap();
    let b = s.run(&s.config).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.event_log_csv(), b.event_log_csv());
    assert!(a.event_log_csv().starts_with("time_s,node,event,detail\n"));
}

#[test]
fn offline_unassigned_node_has_no_effect() {
    let s = spare();
    let base = s.run(&s.config).unwrap();
    assert!(!s.plan.contains("c4"));
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(base.makespan / 3.0, "c4", FaultKind::Offline));
    let r = s.run(&cfg).unwrap();
    assert_eq!(r.makespan, base.makespan);
    assert!(r.output.bit_eq(&base.output));
    assert_eq!(r.replans, 0);
}

#[test]
fn offline_child_replans_once() {
    let s = spare();
    let base = s.run(&s.config).unwrap();
    let victim = s.plan.assignments[1].node.clone();
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(s.mid_busy(&base, &victim), &victim, FaultKind::Offline));
    let r = s.run(&cfg).unwrap();
    assert_eq!(r.replans, 1);
    assert!(r.output.bit_eq(&base.output));
    assert!(r.makespan > base.makespan);
    assert!(!r.final_plan.contains(&victim));
    assert!(r.events.iter().any(|e| e.event == "timeout"));
    check_conservation(&r, 4);
}

#[test]
fn garbage_child_is_caught_by_checksum() {
    let s = spare();
    let base = s.run(&s.config).unwrap();
    let victim = s.plan.assignments[1].node.clone();
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(0.0, &victim, FaultKind::Garbage));
    let r = s.run(&cfg).unwrap();
    assert_eq!(r.checksum_failures, 1);
    assert_eq!(r.replans, 1);
    assert!(r.events.iter().any(|e| e.event == "checksum-mismatch"));
    assert!(r.output.bit_eq(&base.output));
    check_conservation(&r, 4);
}

#[test]
fn garbage_parent_retransmits() {
    let s = spare();
    let base = s.run(&s.config).unwrap();
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(0.0, "p", FaultKind::Garbage));
    let r = s.run(&cfg).unwrap();
    assert_eq!(r.checksum_failures, 1);
    assert_eq!(r.replans, 0);
    assert!(r.events.iter().any(|e| e.event == "retransmit"));
    assert!(r.output.bit_eq(&base.output));
}

#[test]
fn parent_offline_aborts_with_partial_log() {
    let s = spare();
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(1e-4, "p", FaultKind::Offline));
    let mut sim = Simulation::new(&s.plan, &s.model, &s.weights, &s.input, &s.topo, &cfg).unwrap();
    assert!(matches!(sim.run(), Err(Error::ParentFailed(_))));
    assert!(sim.events().iter().any(|e| e.event == "offline"));
}

#[test]
fn losing_the_only_child_is_infeasible() {
    let model = ModelSpec::example();
    let mem = estimate_memory(&model, 1, 1, KIB).unwrap();
    let topo = Topology::new(
        NodeProfile::new("p", MIB, 1e6),
        vec![NodeProfile::new("c", 8 * MIB, 1e6).at(1.0, 0.0)],
        f64::INFINITY,
    )
    .unwrap();
    let plan = plan_for(&model, &mem, &topo, 1);
    let w = WeightStore::random(&model, 1);
    let x = batch(&model, 2, 1);
    let base = simulate_inference(&plan, &model, &w, &x, &topo, &SimConfig::default()).unwrap();
    let cfg = SimConfig {
        faults: vec![Fault::new(base.per_node["c"].segments[0].0, "c", FaultKind::Offline)],
        ..SimConfig::default()
    };
    assert!(matches!(
        simulate_inference(&plan, &model, &w, &x, &topo, &cfg),
        Err(Error::Infeasible { .. })
    ));
}

#[test]
fn plan_for_other_model_is_rejected() {
    let s = spare();
    let other = ModelSpec::example();
    let w = WeightStore::random(&other, 0);
    let x = batch(&other, 1, 0);
    assert!(matches!(
        simulate_inference(&s.plan, &other, &w, &x, &s.topo, &s.config),
        Err(Error::Plan(_))
    ));
    let mut cfg = s.config.clone();
    cfg.faults.push(Fault::new(-1.0, "c1", FaultKind::Offline));
    assert!(s.run(&cfg).is_err());
    cfg.faults = vec![Fault::new(1.0, "nope", FaultKind::Offline)];
    assert!(s.run(&cfg).is_err());
}

#[test]
fn calibrated_figure() {
    let model = calibration_model();
    let cal = Calibration::fitted();
    let base = CalibratedScenario::build(&model, 1, &cal).unwrap().timing().unwrap();
    assert!((base - BASELINE_SECONDS).abs() < 1e-9, "{base}");
    let two = CalibratedScenario::build(&model, 2, &cal).unwrap();
    let four = CalibratedScenario::build(&model, 4, &cal).unwrap();
    assert_eq!(two.plan.node_count(), 2);
    assert_eq!(four.plan.node_count(), 4);
    let s2 = base / two.timing().unwrap();
    let s4 = base / four.timing().unwrap();
    assert!((s2 / 4.0 - 1.0).abs() <= 0.1, "{s2}");
    assert!((s4 / 9.8 - 1.0).abs() <= 0.1, "{s4}");
}

#[test]
fn calibrated_run_executes_kernels() {
    let model = calibration_model();
    let sc = CalibratedScenario::build(&model, 4, &Calibration::fitted()).unwrap();
    let w = calibration_weights(&model);
    let x = calibration_input(&model, 0);
    let r = simulate_inference(&sc.plan, &model, &w, &x, &sc.topology, &sc.config).unwrap();
    assert_eq!(r.makespan, sc.timing().unwrap());
    assert!(r.output.bit_eq(&model_forward(&model, &w, &x).unwrap()));
    assert_eq!(r.samples, SAMPLES);
}

#[test]
fn fit_reproduces_frozen_constants() {
    let c = Calibration::fit().unwrap();
    assert!((c.child / calibration::CHILD_FACTOR - 1.0).abs() < 1e-3, "{c:?}");
    assert!((c.shared / calibration::SHARED_FACTOR - 1.0).abs() < 1e-3, "{c:?}");
}

#[test]
fn homogeneous_makespan_non_increasing() {
    let model = calibration_model();
    let mem = calibration_memory(&model);
    let speed = base_speed(&model);
    let mut last = f64::INFINITY;
    let mut points = Vec::new();
    for n in 1..=4 {
        let topo = homogeneous_topology(&model, &mem, n, speed).unwrap();
        let plan = plan_for(&model, &mem, &topo, SAMPLES as u64);
        assert_eq!(plan.node_count(), n);
        let cfg = SimConfig {
            memory: Some(mem),
            ..SimConfig::default()
        };
        let t = Simulation::timing_only(&plan, &model, SAMPLES, &topo, &cfg).unwrap();
        assert!(t <= last, "{n} nodes: {t} > {last}");
        last = t;
        points.push((n, t));
    }
    assert!(latency_plot_data(&points).lines().count() == 5);
}

fn four_mib_model() -> ModelSpec {
    let fc = |i, o| {
        LayerSpec::Fc(DenseSpec {
            in_units: i,
            out_units: o,
            relu: true,
        })
    };
    ModelSpec::new(
        "four-mib",
        vec![
            LayerSpec::Input { shape: vec![15] },
            fc(15, 2),
            fc(2, 4),
            fc(4, 4),
            LayerSpec::Softmax(SoftmaxSpec::PassThrough),
        ],
    )
    .unwrap()
}

#[test]
fn report_speedups_and_memory_bars() {
    let model = four_mib_model();
    let mem = estimate_memory(&model, 8, 8, KIB).unwrap();
    assert_eq!(mem.model_bytes, 4 * MIB);
    assert_eq!(model_params(&model).total * 64 * KIB, 4 * MIB);
    let topo = Topology::new(
        NodeProfile::new("p", 2 * MIB, 100.0),
        vec![NodeProfile::new("c", 2 * MIB, 100.0).at(1.0, 0.0)],
        f64::INFINITY,
    )
    .unwrap();
    let plan = plan_for(&model, &mem, &topo, 1);
    let w = WeightStore::random(&model, 0);
    let x = batch(&model, 1, 0);
    let cfg = SimConfig {
        memory: Some(mem),
        ..SimConfig::default()
    };
    let r = simulate_inference(&plan, &model, &w, &x, &topo, &cfg).unwrap();
    let rep = report(&r, &r).unwrap();
    assert_eq!(rep.speedup, 1.0);
    assert!(rep.output_match);
    let parent = rep.rows.iter().find(|row| row.node == "p").unwrap();
    let child = rep.rows.iter().find(|row| row.node == "c").unwrap();
    assert_eq!(parent.assigned_bytes, 2 * MIB);
    assert_eq!(child.assigned_bytes, 2 * MIB);
    assert!(parent.peak_bytes >= 2 * MIB + cfg.parent_overhead_bytes);
    assert!(parent.peak_bytes > child.peak_bytes);

    let mut base = r.clone();
    base.makespan = 98.0;
    let mut two = r.clone();
    two.makespan = 24.5;
    assert_eq!(report(&two, &base).unwrap().speedup, 4.0);
    let table = rep.to_table();
    assert!(table.contains("speedup 1.000x"));
    assert_eq!(rep.to_csv().lines().count(), 3);
    assert!(rep.plot_data().contains("\n\n# node"));

    let mut other = r.clone();
    other.samples = 2;
    assert!(matches!(report(&other, &r), Err(Error::Report(_))));
}

#[test]
fn results_cross_threads() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<SimResult>();
    let s = spare();
    let r = s.run(&s.config).unwrap();
    let h = std::thread::spawn(move || r.makespan);
    assert!(h.join().unwrap() > 0.0);
}

mod props {
    use super::{batch, SimConfig, WeightStore, simulate_inference, PlannerConfig};
    use crate::estimator::estimate_memory;
    use crate::inference::model_forward;
    use crate::planner::{plan_partition, select_candidates, CommCostModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::model::{random_model, RandomModelConfig};
    use crate::planner::topology::{random_topology, RandomTopologyConfig};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fault_free_runs_are_exact(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, &RandomModelConfig::default());
            let mem = estimate_memory(&model, 1, 1, 8).unwrap();
            let topo = random_topology(&mut rng, &RandomTopologyConfig {
                min_memory: mem.model_bytes / 4 + 1,
                max_memory: mem.model_bytes.max(2),
                ..Default::default()
            });
            let m = rng.gen_range(1..4);
            let cost = CommCostModel { samples: m as u64, ..Default::default() };
            let Ok(plan) = plan_partition(&model, &mem, &select_candidates(&topo), &cost, &PlannerConfig::default()) else {
                return Ok(());
            };
            let w = WeightStore::random(&model, seed);
            let x = batch(&model, m, seed);
            let cfg = SimConfig { memory: Some(mem), seed, ..SimConfig::default() };
            let r = simulate_inference(&plan, &model, &w, &x, &topo, &cfg).unwrap();
            prop_assert!(r.output.bit_eq(&model_forward(&model, &w, &x).unwrap()));
            prop_assert_eq!(r.bytes_sent(), r.bytes_received());
            prop_assert!(r.layer_execs.iter().all(|&c| c == m as u64));
            let parent = &r.per_node[plan.parent()];
            prop_assert!(r.per_node.values().all(|s| parent.busy_seconds >= s.busy_seconds));
        }
    }
}

