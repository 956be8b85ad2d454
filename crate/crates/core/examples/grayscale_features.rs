//! Binaries and HPC traces as grayscale images, plus Pearson event ranking.
//!
//! `cargo run --example grayscale_features -- [FILE]`

use edgepar::hpc::{hpc_to_grayscale, rank_events, select_top_k, Aggregation, HpcTrace};
use edgepar::imaging::{binary_to_grayscale, ClassLabel, Family};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> edgepar::Result<()> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => (0..4096u32).map(|i| (i * 7 % 251) as u8).collect(),
    };
    let img = binary_to_grayscale(&bytes, 256, 32)?;
    println!("binary: {} bytes -> {s}x{s} image, mean {:.2}", bytes.len(), img.mean(), s = img.side());
    let out = std::env::temp_dir().join("edgepar_binary.pgm");
    std::fs::write(&out, img.to_pgm())?;
    println!("wrote {}", out.display());

    // Six applications over three events; only `branch-misses` tracks the class.
    let events: Vec<String> = ["branch-misses", "cache-misses", "cycles"].map(String::from).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let traces: Vec<(HpcTrace, usize)> = (0..6)
        .map(|app| {
            let class = app % 2 * 5;
            let samples = (0..20)
                .map(|_| vec![class as f64 * 10.0 + rng.gen_range(0.0..3.0), rng.gen_range(0.0..50.0), 1e6])
                .collect();
            (HpcTrace::new(events.clone(), samples).unwrap(), class)
        })
        .collect();
    let ranking = rank_events(&traces, Aggregation::Mean)?;
    for e in &ranking.entries {
        match e.rho {
            Some(r) => println!("{:<14} rho {r:+.3}", e.event),
            None => println!("{:<14} rho undefined (constant)", e.event),
        }
    }
    println!("top event: {:?}", select_top_k(&ranking, 1)?);

    let worm = traces[1].0.clone().with_label(ClassLabel::malware(Family::Worm));
    let trace_img = hpc_to_grayscale(&worm, 16)?;
    println!("trace {:?}: {}x{} image", trace_img.label.map(|l| l.to_string()), trace_img.side(), trace_img.side());
    Ok(())
}
