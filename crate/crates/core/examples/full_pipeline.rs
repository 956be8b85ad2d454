//! End to end: features, synthetic padding, estimate, plan, simulate.
//!
//! `cargo run --release --example full_pipeline`

use edgepar::estimator::{estimate_memory, KIB};
use edgepar::gan::{generate_samples, train_gan, GanConfig};
use edgepar::imaging::{binary_to_grayscale, ClassLabel, Family};
use edgepar::inference::model_forward;
use edgepar::model::ModelSpec;
use edgepar::planner::{plan_partition, select_candidates, CommCostModel, NodeProfile, PlannerConfig, Topology};
use edgepar::sim::{simulate_inference, SimConfig};
use edgepar::tensor::Tensor;
use edgepar::weights::WeightStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIB: u64 = 1 << 20;

fn main() -> edgepar::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let label = ClassLabel::malware(Family::Worm);
    let real = (0..6)
        .map(|_| {
            let bytes: Vec<u8> = (0..3000).map(|i| if i % 64 < 8 { 0xE8 } else { rng.gen_range(0..40) }).collect();
            binary_to_grayscale(&bytes, 64, 32).map(|i| i.with_label(label))
        })
        .collect::<edgepar::Result<Vec<_>>>()?;
    println!("{} real feature images", real.len());

    let small: Vec<_> = real.iter().map(|i| i.resized(8)).collect::<edgepar::Result<_>>()?;
    let gan = train_gan(&small, &GanConfig { epochs: 100, ..GanConfig::toy(0) })?;
    let synth = generate_samples(&gan.generator, 10, 1)?;
    println!("{} synthetic samples from generator {}", synth.images.len(), &synth.generator_checksum[..12]);

    let model = ModelSpec::example();
    let mem = estimate_memory(&model, 1, 1, KIB)?;
    let topo = Topology::new(
        NodeProfile::new("phone", 2 * MIB, 4e6),
        vec![
            NodeProfile::new("tv", 5 * MIB, 2e6).at(4.0, 1.0).with_link(2e-3, 2e6),
            NodeProfile::new("router", MIB, 1e6).at(8.0, 0.0),
        ],
        30.0,
    )?;
    let images: Vec<&_> = real.iter().collect();
    let cost = CommCostModel { samples: images.len() as u64, ..Default::default() };
    let plan = plan_partition(&model, &mem, &select_candidates(&topo), &cost, &PlannerConfig::default())?;
    println!("model {} bytes > parent {} bytes free", mem.model_bytes, topo.parent.free_memory);
    print!("{}", plan.to_table());

    let weights = WeightStore::random(&model, 0);
    let input = Tensor::stack(&images.iter().map(|i| i.to_unit_tensor()).collect::<Vec<_>>())?;
    let input = input.reshape(vec![images.len(), 1, 32, 32])?;
    let r = simulate_inference(&plan, &model, &weights, &input, &topo, &SimConfig { memory: Some(mem), ..Default::default() })?;
    println!(
        "makespan {:.4} s, {} bytes moved, matches one machine: {}",
        r.makespan,
        r.bytes_sent(),
        r.output.bit_eq(&model_forward(&model, &weights, &input)?)
    );
    Ok(())
}
