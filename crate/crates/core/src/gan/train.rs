//! Adversarial training loop and sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::SyntheticDataset;
use super::mlp::{sigmoid, softplus, Activation, Gradients, MlpNet, NetRole};
use crate::error::{Error, Result};
use crate::imaging::{quantize_pixel, ClassLabel, GrayImage};

pub const DEFAULT_LATENT_DIM: usize = 256;
pub const DEFAULT_OUT_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    /// Train one pair per class label instead of one overall.
    pub per_class: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch: 32,
            lr: 0.01,
            latent_dim: DEFAULT_LATENT_DIM,
            seed: 0,
            generator_hidden: vec![512],
            discriminator_hidden: vec![256],
            per_class: true,
        }
    }
}

impl GanConfig {
    /// Small settings for 8x8 two-blob data: a narrow generator against a wide
    /// discriminator, 300 epochs.
    pub fn toy(seed: u64) -> Self {
        Self {
            epochs: 300,
            batch: 8,
            lr: 0.02,
            latent_dim: 1,
            seed,
            generator_hidden: vec![4],
            discriminator_hidden: vec![128],
            per_class: false,
        }
    }
}

pub fn define_generator(latent_dim: usize, out_side: usize, seed: u64) -> Result<MlpNet> {
    define_generator_with(latent_dim, out_side, &[512], seed)
}

/// Hidden layers use ReLU; the output uses Tanh.
pub fn define_generator_with(latent_dim: usize, out_side: usize, hidden: &[usize], seed: u64) -> Result<MlpNet> {
    let mut widths = vec![latent_dim];
    widths.extend_from_slice(hidden);
    widths.push(out_side * out_side);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Tanh);
    MlpNet::new(NetRole::Generator, &widths, &acts, seed)
}

pub fn define_discriminator(in_side: usize, seed: u64) -> Result<MlpNet> {
    define_discriminator_with(in_side, &[256], seed)
}

/// Hidden layers use Tanh; the output is a single sigmoid unit.
pub fn define_discriminator_with(in_side: usize, hidden: &[usize], seed: u64) -> Result<MlpNet> {
    let mut widths = vec![in_side * in_side];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut acts = vec![Activation::Tanh; hidden.len()];
    acts.push(Activation::Sigmoid);
    MlpNet::new(NetRole::Discriminator, &widths, &acts, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorLoss {
    pub real: f64,
    pub fake: f64,
}

impl DiscriminatorLoss {
    pub fn total(&self) -> f64 {
        self.real + self.fake
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    /// Discriminator loss on the full real set, measured after each epoch.
    pub d_real_loss: Vec<f64>,
    pub initial_d_real_loss: f64,
}

impl LossHistory {
    pub fn final_d_real_loss(&self) -> f64 {
        self.d_real_loss.last().copied().unwrap_or(self.initial_d_real_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: MlpNet,
    pub discriminator: MlpNet,
    pub history: LossHistory,
}

pub fn image_to_signed(img: &GrayImage) -> Vec<f64> {
    img.pixels().iter().map(|&p| p as f64 / 127.5 - 1.0).collect()
}

pub fn sample_latent<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Mean of -log D(x) over `reals`.
pub fn real_loss(d: &MlpNet, reals: &[Vec<f64>]) -> f64 {
    let sum: f64 = reals.iter().map(|x| softplus(-d.forward_trace(x).logits()[0])).sum();
    sum / reals.len() as f64
}

/// Discriminator loss `mean softplus(-l_real) + mean softplus(l_fake)` and its
/// gradient with respect to the discriminator parameters.
pub fn discriminator_step(
    g: &MlpNet,
    d: &MlpNet,
    reals: &[Vec<f64>],
    zs: &[Vec<f64>],
) -> (DiscriminatorLoss, Gradients) {
    let mut grads = Gradients::zeros_like(d);
    let mut loss = DiscriminatorLoss { real: 0.0, fake: 0.0 };
    let nr = reals.len() as f64;
    for x in reals {
        let t = d.forward_trace(x);
        let l = t.logits()[0];
        loss.real += softplus(-l) / nr;
        d.backward_from_logits(&t, &[(sigmoid(l) - 1.0) / nr], Some(&mut grads));
    }
    let nf = zs.len() as f64;
    for z in zs {
        let fake = g.forward(z);
        let t = d.forward_trace(&fake);
        let l = t.logits()[0];
        loss.fake += softplus(l) / nf;
        d.backward_from_logits(&t, &[sigmoid(l) / nf], Some(&mut grads));
    }
    (loss, grads)
}

/// Non-saturating generator loss `mean softplus(-D(G(z)))` and its gradient
/// with respect to the generator parameters.
pub fn generator_step(g: &MlpNet, d: &MlpNet, zs: &[Vec<f64>]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(g);
    let mut loss = 0.0;
    let n = zs.len() as f64;
    for z in zs {
        let gt = g.forward_trace(z);
        let dt = d.forward_trace(gt.output());
        let l = dt.logits()[0];
        loss += softplus(-l) / n;
        let grad_img = d.backward_from_logits(&dt, &[(sigmoid(l) - 1.0) / n], None);
        g.backward(&gt, &grad_img, Some(&mut grads));
    }
    (loss, grads)
}

fn check_images(real: &[GrayImage]) -> Result<usize> {
    let first = real.first().ok_or_else(|| Error::EmptyInput("no real images".into()))?;
    let side = first.side();
    if let Some(bad) = real.iter().find(|i| i.side() != side) {
        return Err(Error::shape(&[side, side], &[bad.side(), bad.side()]));
    }
    Ok(side)
}

/// Alternating minibatch SGD on both nets.
pub fn train_gan(real: &[GrayImage], config: &GanConfig) -> Result<TrainedGan> {
    let side = check_images(real)?;
    if config.batch == 0 || config.latent_dim == 0 {
        return Err(Error::Range("batch and latent_dim must be positive".into()));
    }
    let mut g = define_generator_with(config.latent_dim, side, &config.generator_hidden, config.seed)?;
    let mut d = define_discriminator_with(side, &config.discriminator_hidden, config.seed.wrapping_add(1))?;
    let reals: Vec<Vec<f64>> = real.iter().map(image_to_signed).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6761_6e5f_7472_6169);
    let mut history = LossHistory {
        initial_d_real_loss: real_loss(&d, &reals),
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..reals.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| reals[i].clone()).collect();
            let zs: Vec<Vec<f64>> = (0..batch.len()).map(|_| sample_latent(&mut rng, config.latent_dim)).collect();
            let (dl, dg) = discriminator_step(&g, &d, &batch, &zs);
            if !dl.total().is_finite() || !dg.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "discriminator loss is not finite".into(),
                });
            }
            d.sgd_step(&dg, config.lr);
            let zs: Vec<Vec<f64>> = (0..batch.len()).map(|_| sample_latent(&mut rng, config.latent_dim)).collect();
            let (gl, gg) = generator_step(&g, &d, &zs);
            if !gl.is_finite() || !gg.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "generator loss is not finite".into(),
                });
            }
            g.sgd_step(&gg, config.lr);
            d_sum += dl.total();
            g_sum += gl;
            batches += 1;
        }
        history.d_loss.push(d_sum / batches as f64);
        history.g_loss.push(g_sum / batches as f64);
        history.d_real_loss.push(real_loss(&d, &reals));
        log::debug!(
            "epoch {epoch}: d={:.5} g={:.5}",
            history.d_loss[epoch],
            history.g_loss[epoch]
        );
    }
    Ok(TrainedGan {
        generator: g,
        discriminator: d,
        history,
    })
}

/// Trains one pair per label (unlabeled images form their own group), or a
/// single pair when `config.per_class` is off.
pub fn train_per_class(real: &[GrayImage], config: &GanConfig) -> Result<Vec<(Option<ClassLabel>, TrainedGan)>> {
    if real.is_empty() {
        return Err(Error::EmptyInput("no real images".into()));
    }
    if !config.per_class {
        return Ok(vec![(common_label(real), train_gan(real, config)?)]);
    }
    let mut groups: Vec<(Option<ClassLabel>, Vec<GrayImage>)> = Vec::new();
    for img in real {
        match groups.iter_mut().find(|(l, _)| *l == img.label) {
            Some((_, v)) => v.push(img.clone()),
            None => groups.push((img.label, vec![img.clone()])),
        }
    }
    groups.sort_by_key(|(l, _)| l.map(|l| l.to_string()));
    groups
        .into_iter()
        .map(|(label, imgs)| Ok((label, train_gan(&imgs, config)?)))
        .collect()
}

fn common_label(imgs: &[GrayImage]) -> Option<ClassLabel> {
    let first = imgs[0].label;
    imgs.iter().all(|i| i.label == first).then_some(first).flatten()
}

fn emit_pixel(y: f64, act: Activation) -> u8 {
    match act {
        Activation::Tanh => quantize_pixel((y + 1.0) * 127.5),
        Activation::Sigmoid => quantize_pixel(y * 255.0),
        Activation::Relu => quantize_pixel(y),
    }
}

/// `n` images from fresh uniform latent vectors.
pub fn generate_samples(generator: &MlpNet, n: usize, seed: u64) -> Result<SyntheticDataset> {
    let width = generator.output_dim();
    let side = (width as f64).sqrt().round() as usize;
    if side * side != width {
        return Err(Error::shape(&[side * side], &[width]));
    }
    let act = generator.layers().last().unwrap().activation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n)
        .map(|_| {
            let z = sample_latent(&mut rng, generator.input_dim());
            let px = generator.forward(&z).into_iter().map(|y| emit_pixel(y, act)).collect();
            GrayImage::new(side, px)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        images,
        generator_checksum: generator.checksum(),
        seed,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let g = define_generator(DEFAULT_LATENT_DIM, DEFAULT_OUT_SIDE, 1).unwrap();
        assert_eq!(g.input_dim(), 256);
        assert_eq!(g.output_dim(), 1024);
        let d = define_discriminator(32, 1).unwrap();
        assert_eq!(d.input_dim(), 1024);
        assert_eq!(d.output_dim(), 1);
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let d = define_discriminator(8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = d.forward(&x)[0];
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(define_discriminator(8, 5).unwrap(), define_discriminator(8, 5).unwrap());
        assert_ne!(define_generator(4, 8, 5).unwrap(), define_generator(4, 8, 6).unwrap());
    }

    fn tiny_set() -> Vec<GrayImage> {
        (0..6u8).map(|k| GrayImage::new(4, vec![k * 40; 16]).unwrap()).collect()
    }

    fn tiny_config(epochs: usize) -> GanConfig {
        GanConfig {
            epochs,
            batch: 4,
            latent_dim: 3,
            generator_hidden: vec![5],
            discriminator_hidden: vec![5],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let cfg = tiny_config(0);
        let t = train_gan(&tiny_set(), &cfg).unwrap();
        assert_eq!(t.generator, define_generator_with(3, 4, &[5], 11).unwrap());
        assert_eq!(t.discriminator, define_discriminator_with(4, &[5], 12).unwrap());
        assert!(t.history.d_loss.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(5);
        let a = train_gan(&tiny_set(), &cfg).unwrap();
        let b = train_gan(&tiny_set(), &cfg).unwrap();
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.d_loss.len(), 5);
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut cfg = tiny_config(3);
        cfg.lr = f64::INFINITY;
        match train_gan(&tiny_set(), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch < 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(train_gan(&[], &tiny_config(1)), Err(Error::EmptyInput(_))));
        let mixed = vec![GrayImage::new(4, vec![0; 16]).unwrap(), GrayImage::new(2, vec![0; 4]).unwrap()];
        assert!(matches!(train_gan(&mixed, &tiny_config(1)), Err(Error::Shape { .. })));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    fn central_diff(net: &MlpNet, i: usize, f: impl Fn(&MlpNet) -> f64) -> f64 {
        let h = 1e-5;
        let mut p = net.clone();
        p.set_param(i, net.param(i) + h);
        let mut m = net.clone();
        m.set_param(i, net.param(i) - h);
        (f(&p) - f(&m)) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = define_generator_with(3, 3, &[6], 21).unwrap();
        let d = define_discriminator_with(3, &[5], 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reals: Vec<Vec<f64>> = (0..4).map(|_| sample_latent(&mut rng, 9)).collect();
        let zs: Vec<Vec<f64>> = (0..4).map(|_| sample_latent(&mut rng, 3)).collect();

        let (_, dg) = discriminator_step(&g, &d, &reals, &zs);
        for (i, a) in dg.flatten().into_iter().enumerate() {
            let n = central_diff(&d, i, |dd| discriminator_step(&g, dd, &reals, &zs).0.total());
            assert!(rel_err(a, n) < 1e-4, "D param {i}: {a} vs {n}");
        }
        let (_, gg) = generator_step(&g, &d, &zs);
        for (i, a) in gg.flatten().into_iter().enumerate() {
            let n = central_diff(&g, i, |gg| generator_step(gg, &d, &zs).0);
            assert!(rel_err(a, n) < 1e-4, "G param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn samples_are_deterministic_and_sized() {
        let g = define_generator(6, 5, 2).unwrap();
        let a = generate_samples(&g, 4, 9).unwrap();
        let b = generate_samples(&g, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images.len(), 4);
        assert!(a.images.iter().all(|i| i.side() == 5));
        assert_eq!(a.generator_checksum, g.checksum());
        assert_ne!(a, generate_samples(&g, 4, 10).unwrap());
    }

    #[test]
    fn per_class_groups() {
        use crate::imaging::Family;
        let mut imgs = tiny_set();
        for (i, img) in imgs.iter_mut().enumerate() {
            img.label = Some(if i % 2 == 0 {
                ClassLabel::BENIGN
            } else {
                ClassLabel::malware(Family::Worm)
            });
        }
        let out = train_per_class(&imgs, &tiny_config(1)).unwrap();
        assert_eq!(out.len(), 2);
        let mut cfg = tiny_config(1);
        cfg.per_class = false;
        let one = train_per_class(&imgs, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, None);
    }
}
