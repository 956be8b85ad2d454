//! Logistic fit/offload classifier over [`FeatureVector`]s.
//!
//! Each feature is mapped through `ln(1 + x)` and then standardised with the
//! training mean and deviation before the linear score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureVector, FEATURE_DIM, FEATURE_VERSION};
use super::params::{memory_for_total, model_params, KIB};
use crate::error::{Error, Result};
use crate::gan::mlp::sigmoid;
use crate::model::{random_model, ModelSpec, RandomModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Minibatch size; `None` means full-batch descent.
    pub batch: Option<usize>,
    pub threshold: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 2000,
            seed: 0,
            batch: None,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub threshold: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadPrediction {
    pub offload: bool,
    pub probability: f64,
}

impl RegressorModel {
    /// All-zero model with identity scaling; scores 0.5 everywhere.
    pub fn zeroed(threshold: f64) -> Self {
        Self {
            coefficients: vec![0.0; FEATURE_DIM],
            intercept: 0.0,
            threshold,
            means: vec![0.0; FEATURE_DIM],
            stds: vec![1.0; FEATURE_DIM],
            version: FEATURE_VERSION,
        }
    }

    fn check_dim(&self) -> Result<()> {
        for v in [&self.coefficients, &self.means, &self.stds] {
            if v.len() != FEATURE_DIM {
                return Err(Error::shape(&[FEATURE_DIM], &[v.len()]));
            }
        }
        Ok(())
    }

    pub fn standardize(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        self.check_dim()?;
        Ok(f.0
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x.ln_1p() - m) / s)
            .collect())
    }

    pub fn unstandardize(&self, z: &[f64]) -> Result<FeatureVector> {
        self.check_dim()?;
        if z.len() != FEATURE_DIM {
            return Err(Error::shape(&[FEATURE_DIM], &[z.len()]));
        }
        let mut out = [0.0; FEATURE_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (z[i] * self.stds[i] + self.means[i]).exp_m1();
        }
        Ok(FeatureVector(out))
    }

    pub fn score_standardized(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (b, x) in self.coefficients.iter().zip(z) {
            acc += b * x;
        }
        sigmoid(acc + self.intercept)
    }

    /// Ties at the threshold resolve to offload.
    pub fn predict(&self, f: &FeatureVector) -> Result<OffloadPrediction> {
        let p = self.score_standardized(&self.standardize(f)?);
        Ok(OffloadPrediction {
            offload: p >= self.threshold,
            probability: p,
        })
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "version={}\nthreshold={}\nintercept={}\nbeta={}\nmean={}\nstd={}\n",
            self.version,
            self.threshold,
            self.intercept,
            join(&self.coefficients),
            join(&self.means),
            join(&self.stds)
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::zeroed(0.5);
        let mut seen = 0u8;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = ln + 1;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, format!("expected key=value, got `{line}`")))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::parse(lineno, format!("`{k}`: {e}")));
            let list = |s: &str| s.split(',').map(num).collect::<Result<Vec<f64>>>();
            match k.trim() {
                "version" => {
                    m.version = v.trim().parse().map_err(|e| Error::parse(lineno, format!("version: {e}")))?;
                    if m.version != FEATURE_VERSION {
                        return Err(Error::parse(lineno, format!("unsupported feature version {}", m.version)));
                    }
                }
                "threshold" => m.threshold = num(v)?,
                "intercept" => m.intercept = num(v)?,
                "beta" => {
                    m.coefficients = list(v)?;
                    seen |= 1;
                }
                "mean" => {
                    m.means = list(v)?;
                    seen |= 2;
                }
                "std" => {
                    m.stds = list(v)?;
                    seen |= 4;
                }
                other => return Err(Error::parse(lineno, format!("unknown key `{other}`"))),
            }
        }
        if seen != 7 {
            return Err(Error::parse(0, "regressor file needs beta, mean and std"));
        }
        m.check_dim()?;
        let finite = m
            .coefficients
            .iter()
            .chain(&m.means)
            .chain(&m.stds)
            .chain([&m.intercept, &m.threshold])
            .all(|v| v.is_finite());
        if !finite || !(m.threshold > 0.0 && m.threshold < 1.0) {
            return Err(Error::parse(0, "regressor values must be finite with threshold in (0, 1)"));
        }
        Ok(m)
    }
}

/// Mean binary cross-entropy of `model` on already standardised rows.
fn mean_loss(model: &RegressorModel, rows: &[Vec<f64>], labels: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let mut z = model.intercept;
        for (b, v) in model.coefficients.iter().zip(x) {
            z += b * v;
        }
        // -[y ln s + (1-y) ln(1-s)] = softplus(z) - y z
        sum += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
    }
    sum / rows.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub model: RegressorModel,
    /// Full-data loss before training and after each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_regressor(samples: &[(FeatureVector, bool)], config: &RegressorConfig) -> Result<RegressorModel> {
    Ok(train_regressor_with_history(samples, config)?.model)
}

/// Gradient descent on the mean logistic loss from a zero start.
pub fn train_regressor_with_history(samples: &[(FeatureVector, bool)], config: &RegressorConfig) -> Result<TrainedRegressor> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let positives = samples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::DegenerateLabels("training data holds a single class".into()));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::Range("threshold must lie in (0, 1)".into()));
    }
    if config.batch == Some(0) {
        return Err(Error::Range("batch must be positive".into()));
    }
    let n = samples.len() as f64;
    let logs: Vec<[f64; FEATURE_DIM]> = samples.iter().map(|(f, _)| f.0.map(f64::ln_1p)).collect();
    let mut model = RegressorModel::zeroed(config.threshold);
    for j in 0..FEATURE_DIM {
        let mean = logs.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = logs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        model.means[j] = mean;
        model.stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let rows: Vec<Vec<f64>> = logs
        .iter()
        .map(|r| (0..FEATURE_DIM).map(|j| (r[j] - model.means[j]) / model.stds[j]).collect())
        .collect();
    let labels: Vec<f64> = samples.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let batch = config.batch.unwrap_or(rows.len());
    let mut history = vec![mean_loss(&model, &rows, &labels)];
    for _ in 0..config.epochs {
        if config.batch.is_some() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let mut gw = [0.0; FEATURE_DIM];
            let mut gb = 0.0;
            for &i in chunk {
                let err = model.score_standardized(&rows[i]) - labels[i];
                for (g, x) in gw.iter_mut().zip(&rows[i]) {
                    *g += err * x;
                }
                gb += err;
            }
            let m = chunk.len() as f64;
            for (b, g) in model.coefficients.iter_mut().zip(gw) {
                *b -= config.lr * g / m;
            }
            model.intercept -= config.lr * gb / m;
        }
        let loss = mean_loss(&model, &rows, &labels);
        if !loss.is_finite() {
            return Err(Error::Numeric("regressor loss is not finite".into()));
        }
        history.push(loss);
    }
    Ok(TrainedRegressor {
        model,
        loss_history: history,
    })
}

/// Features of random models against random nodes, labelled offload when the
/// model needs more bytes than the node has free. Node memory is the model
/// size scaled by `2^u`, `u` uniform in `[-3, 3]`.
pub fn synthetic_offload_dataset(n: usize, seed: u64) -> Vec<(FeatureVector, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RandomModelConfig::default();
    (0..n)
        .map(|_| {
            let model = random_model(&mut rng, &cfg);
            let f = features_for_random_node(&mut rng, &model);
            let offload = f.model_bytes() > f.node_free();
            (f, offload)
        })
        .collect()
}

fn features_for_random_node<R: Rng>(rng: &mut R, model: &ModelSpec) -> FeatureVector {
    let params = model_params(model);
    let batch = rng.gen_range(1..=8);
    let batches = rng.gen_range(1..=4);
    let mem = memory_for_total(params.total, batch, batches, KIB).expect("small random models cannot overflow");
    let free = (mem.model_bytes as f64 * 2f64.powf(rng.gen_range(-3.0..=3.0))).round() as u64;
    let node = crate::planner::topology::NodeProfile::new("node", free, 1.0);
    super::features::build_features(model, &params, &mem, &node)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Vec<(FeatureVector, bool)> {
        synthetic_offload_dataset(200, 3)
    }

    #[test]
    fn zero_epochs_scores_half() {
        let cfg = RegressorConfig {
            epochs: 0,
            ..Default::default()
        };
        let m = train_regressor(&data(), &cfg).unwrap();
        for (f, _) in data() {
            let p = m.predict(&f).unwrap();
            assert_eq!(p.probability, 0.5);
            assert!(p.offload);
        }
    }

    #[test]
    fn single_class_rejected() {
        let d: Vec<_> = data().into_iter().map(|(f, _)| (f, true)).collect();
        assert!(matches!(
            train_regressor(&d, &RegressorConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn loss_non_increasing_small_lr() {
        let cfg = RegressorConfig {
            lr: 0.01,
            epochs: 200,
            ..Default::default()
        };
        let h = train_regressor_with_history(&data(), &cfg).unwrap().loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn duplicating_samples_keeps_predictions() {
        let d = data();
        let dd: Vec<_> = d.iter().chain(&d).cloned().collect();
        let cfg = RegressorConfig {
            epochs: 300,
            ..Default::default()
        };
        let a = train_regressor(&d, &cfg).unwrap();
        let b = train_regressor(&dd, &cfg).unwrap();
        for (f, _) in synthetic_offload_dataset(100, 9) {
            assert_eq!(a.predict(&f).unwrap().offload, b.predict(&f).unwrap().offload);
        }
    }

    #[test]
    fn clear_cases() {
        let m = train_regressor(&synthetic_offload_dataset(600, 1), &RegressorConfig::default()).unwrap();
        let model = ModelSpec::example();
        let p = model_params(&model);
        let mem = memory_for_total(p.total, 1, 1, KIB).unwrap();
        let feat = |free| {
            super::super::features::build_features(
                &model,
                &p,
                &mem,
                &crate::planner::topology::NodeProfile::new("n", free, 1.0),
            )
        };
        assert!(m.predict(&feat(mem.model_bytes / 3)).unwrap().offload);
        assert!(!m.predict(&feat(2 << 30)).unwrap().offload);
    }

    #[test]
    fn held_out_accuracy() {
        let d = synthetic_offload_dataset(1000, 0);
        let (train, test) = d.split_at(700);
        let m = train_regressor(train, &RegressorConfig::default()).unwrap();
        let hits = test.iter().filter(|(f, y)| m.predict(f).unwrap().offload == *y).count();
        assert!(hits as f64 / test.len() as f64 >= 0.98, "{hits}/300");
    }

    #[test]
    fn text_round_trip_and_standardize_inverse() {
        let m = train_regressor(&data(), &RegressorConfig::default()).unwrap();
        let back = RegressorModel::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        for (f, _) in data().into_iter().take(20) {
            let z = m.standardize(&f).unwrap();
            let g = m.unstandardize(&z).unwrap();
            for (a, b) in f.0.iter().zip(g.0) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
            assert_eq!(m.predict(&f).unwrap().offload, m.predict(&g).unwrap().offload);
        }
        assert!(RegressorModel::parse("beta=1,2\nmean=0\nstd=1\n").is_err());
    }
}
