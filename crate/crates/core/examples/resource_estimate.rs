//! Parameter counts, memory footprint and the learned fit/offload verdict.
//!
//! `cargo run --example resource_estimate`

use edgepar::estimator::{
    build_features, estimate_memory, layer_params, model_params, synthetic_offload_dataset, train_regressor,
    RegressorConfig, KIB,
};
use edgepar::model::ModelSpec;
use edgepar::planner::NodeProfile;

fn main() -> edgepar::Result<()> {
    let model = ModelSpec::example();
    let params = model_params(&model);
    for (i, layer) in model.layers().iter().enumerate() {
        println!("{i:>2} {:<8} {:>6} params", format!("{:?}", layer.kind()), layer_params(layer));
    }
    let mem = estimate_memory(&model, 1, 1, KIB)?;
    println!("total {} params, {} bytes at 1 KiB per parameter", params.total, mem.model_bytes);

    let data = synthetic_offload_dataset(1000, 0);
    let (train, test) = data.split_at(700);
    let reg = train_regressor(train, &RegressorConfig::default())?;
    let hits = test.iter().filter(|(f, y)| reg.predict(f).map(|p| p.offload == *y).unwrap_or(false)).count();
    println!("regressor held-out accuracy {hits}/{}", test.len());

    for free in [2 << 20, 8 << 20] {
        let node = NodeProfile::new("parent", free, 1e6);
        let p = reg.predict(&build_features(&model, &params, &mem, &node))?;
        let exact = mem.model_bytes > free;
        println!(
            "parent with {} MiB: offload probability {:.3}, regressor {}, exact {}",
            free >> 20,
            p.probability,
            if p.offload { "offload" } else { "fit" },
            if exact { "offload" } else { "fit" }
        );
    }
    Ok(())
}
