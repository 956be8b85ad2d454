//! Train a small GAN on toy two-blob images and pad a real set with its samples.
//!
//! `cargo run --release --example code_aware_datagen`

use edgepar::gan::{augment, generate_samples, train_gan, two_blob_images, GanConfig};
use edgepar::imaging::{ClassLabel, Family};

fn main() -> edgepar::Result<()> {
    let label = ClassLabel::malware(Family::Trojan);
    let real: Vec<_> = two_blob_images(32, 8, 0).into_iter().map(|i| i.with_label(label)).collect();
    let cfg = GanConfig::toy(0);
    let trained = train_gan(&real, &cfg)?;
    let h = &trained.history;
    println!(
        "{} epochs: D real-loss {:.4} -> {:.4}, last G loss {:.4}",
        cfg.epochs,
        h.initial_d_real_loss,
        h.final_d_real_loss(),
        h.g_loss.last().copied().unwrap_or(f64::NAN)
    );

    let synth = generate_samples(&trained.generator, 40, 7)?.with_label(Some(label));
    let real_mean = real.iter().map(|i| i.mean()).sum::<f64>() / real.len() as f64;
    let synth_mean = synth.images.iter().map(|i| i.mean()).sum::<f64>() / synth.images.len() as f64;
    println!("mean brightness real {real_mean:.1}, synthetic {synth_mean:.1}");

    let split = augment(&real, &synth, 0)?;
    println!("augmented set: {} train, {} test (label {label})", split.train.len(), split.test.len());
    let dir = std::env::temp_dir().join("edgepar_synth");
    synth.write_dir(&dir)?;
    println!("wrote {} samples to {}", synth.images.len(), dir.display());
    Ok(())
}
