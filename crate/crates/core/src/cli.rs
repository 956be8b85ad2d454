//! Subcommands behind the `edgepar` binary: configuration loading, file
//! layout under the output directory, and exit-code mapping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::estimator::{
    build_features, estimate_memory, layer_params, model_params, synthetic_offload_dataset, train_regressor,
    RegressorConfig, RegressorModel,
};
use crate::gan::{generate_samples, train_per_class, GanConfig};
use crate::hpc::{hpc_to_grayscale, HpcTrace};
use crate::imaging::{binary_to_grayscale, ClassLabel, GrayImage};
use crate::inference::model_forward;
use crate::model::ModelSpec;
use crate::planner::{plan_partition, select_candidates, CommCostModel, PartitionPlan, PlannerConfig, Topology};
use crate::sim::calibration::{calibration_input, calibration_weights, CalibratedScenario, Calibration};
use crate::sim::engine::apply_calibration;
use crate::sim::report::latency_plot_data;
use crate::sim::{calibration_model, report, simulate_inference, Fault, FaultKind, SimConfig, SimResult};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SIM_FAILURE: i32 = 4;

pub const FEATURES_DIR: &str = "features";
pub const SYNTH_DIR: &str = "synth";
pub const FEATURE_MANIFEST: &str = "manifest.csv";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(EXIT_BAD_INPUT, message)
    }

    fn sim(e: Error) -> Self {
        Self::new(EXIT_SIM_FAILURE, format!("simulation failed: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Infeasible { .. } => EXIT_INFEASIBLE,
            Error::ParentFailed(_) => EXIT_SIM_FAILURE,
            _ => EXIT_BAD_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::bad(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Human text and the same numbers as JSON.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub json: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Model, topology and faults from the configuration.
    Config,
    /// The calibrated latency scenario over 1, 2 or 4 nodes.
    Calibrated(usize),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub json: bool,

    pub input_dir: Option<PathBuf>,
    pub side: usize,
    pub row_width: usize,

    pub real_dir: Option<PathBuf>,
    pub gan_side: usize,
    pub gan_epochs: usize,
    pub gan_batch: usize,
    pub gan_lr: f64,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub per_class: bool,
    pub synth_per_class: usize,

    pub model: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub weights_seed: u64,
    pub topology: Option<PathBuf>,
    pub parent_memory: Option<u64>,
    pub radius: Option<f64>,
    pub batch_size: u64,
    pub num_batches: u64,
    pub bytes_per_param: u64,
    pub max_nodes: usize,
    pub regressor: Option<PathBuf>,
    pub train_regressor: bool,

    pub scenario: Scenario,
    pub plan: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub samples: usize,
    pub faults: Vec<Fault>,
    pub calibration: BTreeMap<String, f64>,
    pub timeout_factor: f64,
    pub parent_overhead: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            json: false,
            input_dir: None,
            side: crate::imaging::DEFAULT_SIDE,
            row_width: 256,
            real_dir: None,
            gan_side: 16,
            gan_epochs: 200,
            gan_batch: 8,
            gan_lr: 0.02,
            latent_dim: 8,
            generator_hidden: vec![32],
            discriminator_hidden: vec![64],
            per_class: true,
            synth_per_class: 16,
            model: None,
            weights: None,
            weights_seed: 0,
            topology: None,
            parent_memory: None,
            radius: None,
            batch_size: 1,
            num_batches: 1,
            bytes_per_param: crate::estimator::KIB,
            max_nodes: PlannerConfig::default().max_nodes,
            regressor: None,
            train_regressor: false,
            scenario: Scenario::Config,
            plan: None,
            input: None,
            samples: 1,
            faults: Vec::new(),
            calibration: BTreeMap::new(),
            timeout_factor: sim.timeout_factor,
            parent_overhead: sim.parent_overhead_bytes,
        }
    }
}

/// `123`, `4KiB`, `8MiB`, `2MB` (decimal), `1GiB`.
pub fn parse_bytes(s: &str) -> Option<u64> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult = match unit.trim() {
        "" | "B" => 1,
        "KB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        _ => return None,
    };
    n.checked_mul(mult)
}

fn parse_list(v: &str) -> Option<Vec<usize>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    /// Applies `key = value` lines; relative paths resolve against `base`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> CliResult<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::bad(format!("config line {}: expected key = value", ln + 1)))?;
            self.set(k.trim(), v.trim(), base)
                .map_err(|e| CliError::bad(format!("config line {}: {}", ln + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> CliResult<()> {
        let bad = || CliError::bad(format!("invalid value `{v}` for `{key}`"));
        let path = || Some(base.join(v));
        let num_u64 = || v.parse::<u64>().map_err(|_| bad());
        let num_usize = || v.parse::<usize>().map_err(|_| bad());
        let num_f64 = || v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
        if let Some(id) = key.strip_prefix("calibration.") {
            let f = num_f64()?;
            self.calibration.insert(id.to_string(), f);
            return Ok(());
        }
        match key {
            "seed" => self.seed = num_u64()?,
            "out" => self.out = base.join(v),
            "json" => self.json = parse_bool(v).ok_or_else(bad)?,
            "input_dir" => self.input_dir = path(),
            "side" => self.side = num_usize()?,
            "row_width" => self.row_width = num_usize()?,
            "real_dir" => self.real_dir = path(),
            "gan_side" => self.gan_side = num_usize()?,
            "gan_epochs" => self.gan_epochs = num_usize()?,
            "gan_batch" => self.gan_batch = num_usize()?,
            "gan_lr" => self.gan_lr = num_f64()?,
            "latent_dim" => self.latent_dim = num_usize()?,
            "generator_hidden" => self.generator_hidden = parse_list(v).ok_or_else(bad)?,
            "discriminator_hidden" => self.discriminator_hidden = parse_list(v).ok_or_else(bad)?,
            "per_class" => self.per_class = parse_bool(v).ok_or_else(bad)?,
            "synth_per_class" => self.synth_per_class = num_usize()?,
            "model" => self.model = path(),
            "weights" => self.weights = path(),
            "weights_seed" => self.weights_seed = num_u64()?,
            "topology" => self.topology = path(),
            "parent_memory" => self.parent_memory = Some(parse_bytes(v).ok_or_else(bad)?),
            "radius" => self.radius = Some(num_f64()?),
            "batch_size" => self.batch_size = num_u64()?,
            "num_batches" => self.num_batches = num_u64()?,
            "bytes_per_param" => self.bytes_per_param = parse_bytes(v).ok_or_else(bad)?,
            "max_nodes" => self.max_nodes = num_usize()?,
            "regressor" => self.regressor = path(),
            "train_regressor" => self.train_regressor = parse_bool(v).ok_or_else(bad)?,
            "scenario" => {
                self.scenario = match v {
                    "config" => Scenario::Config,
                    "calibrated-1" => Scenario::Calibrated(1),
                    "calibrated-2" => Scenario::Calibrated(2),
                    "calibrated" | "calibrated-4" => Scenario::Calibrated(4),
                    _ => return Err(bad()),
                }
            }
            "plan" => self.plan = path(),
            "input" => self.input = path(),
            "samples" => self.samples = num_usize()?,
            "fault" => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                let [t, node, kind] = parts[..] else { return Err(bad()) };
                let time = t.parse::<f64>().map_err(|_| bad())?;
                let kind = FaultKind::parse(kind).ok_or_else(bad)?;
                self.faults.push(Fault::new(time, node, kind));
            }
            "timeout_factor" => self.timeout_factor = num_f64()?,
            "parent_overhead" => self.parent_overhead = parse_bytes(v).ok_or_else(bad)?,
            _ => return Err(CliError::bad(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Referenced input files must exist before any step runs.
    pub fn check_paths(&self) -> CliResult<()> {
        let files = [&self.model, &self.weights, &self.topology, &self.plan, &self.input];
        for p in files.into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::bad(format!("{} does not exist", p.display())));
            }
        }
        for p in [&self.input_dir, &self.real_dir].into_iter().flatten() {
            if !p.is_dir() {
                return Err(CliError::bad(format!("{} is not a directory", p.display())));
            }
        }
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            faults: self.faults.clone(),
            calibration: self.calibration.clone(),
            timeout_factor: self.timeout_factor,
            parent_overhead_bytes: self.parent_overhead,
            planner: self.planner(),
            ..SimConfig::default()
        }
    }

    fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            max_nodes: self.max_nodes,
            ..PlannerConfig::default()
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- extract

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub source: String,
    pub class: String,
    pub checksum: String,
    pub image: String,
}

pub fn read_feature_manifest(path: &Path) -> CliResult<Vec<ManifestRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
        if rec.len() != 4 {
            return Err(CliError::bad(format!("{}: expected 4 columns", path.display())));
        }
        rows.push(ManifestRow {
            source: rec[0].to_string(),
            class: rec[1].to_string(),
            checksum: rec[2].to_string(),
            image: rec[3].to_string(),
        });
    }
    Ok(rows)
}

fn feature_manifest_text(rows: &[ManifestRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "class", "checksum", "image"]).expect("in-memory write");
    for r in rows {
        w.write_record([&r.source, &r.class, &r.checksum, &r.image]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// `.bin` and `.csv` files directly in `dir` (unlabeled) or one level down,
/// where a subdirectory named after a class labels its files.
fn collect_inputs(dir: &Path) -> CliResult<Vec<(String, PathBuf, Option<ClassLabel>)>> {
    let wanted = |p: &Path| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("bin") || e.eq_ignore_ascii_case("csv"))
    };
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        if p.is_dir() {
            let label = name.parse::<ClassLabel>().ok();
            if label.is_none() {
                log::warn!("skipping directory {name}: not a class name");
                continue;
            }
            let mut inner: Vec<PathBuf> = fs::read_dir(&p)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            inner.sort();
            for q in inner.into_iter().filter(|q| q.is_file() && wanted(q)) {
                let rel = format!("{name}/{}", q.file_name().unwrap().to_string_lossy());
                out.push((rel, q, label));
            }
        } else if wanted(&p) {
            out.push((name, p, None));
        }
    }
    Ok(out)
}

fn convert(path: &Path, bytes: &[u8], label: Option<ClassLabel>, cfg: &RunConfig) -> crate::Result<GrayImage> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut img = if is_csv {
        let trace = HpcTrace::read_csv(bytes)?;
        let mut img = hpc_to_grayscale(&trace, cfg.side)?;
        if img.label.is_none() {
            img.label = label;
        }
        img
    } else {
        let mut img = binary_to_grayscale(bytes, cfg.row_width, cfg.side)?;
        img.label = label;
        img
    };
    if label.is_some() && img.label != label {
        log::warn!("{}: trace label differs from its directory; keeping the trace label", path.display());
    }
    if img.label.is_none() {
        img.label = label;
    }
    Ok(img)
}

pub fn cmd_extract(cfg: &RunConfig) -> CliResult<Outcome> {
    let dir = cfg.input_dir.as_ref().ok_or_else(|| CliError::bad("input_dir is not set"))?;
    let inputs = collect_inputs(dir)?;
    if inputs.is_empty() {
        return Err(CliError::bad("no inputs"));
    }
    let out_dir = cfg.out.join(FEATURES_DIR);
    fs::create_dir_all(&out_dir)?;
    let manifest_path = out_dir.join(FEATURE_MANIFEST);
    let old = read_feature_manifest(&manifest_path)?;
    let mut rows = Vec::new();
    let (mut converted, mut skipped, mut failed) = (0usize, 0usize, 0usize);
    for (source, path, label) in &inputs {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        let checksum = sha256_hex(&bytes);
        if let Some(row) = old.iter().find(|r| r.source == *source && r.checksum == checksum) {
            if out_dir.join(&row.image).exists() {
                rows.push(row.clone());
                skipped += 1;
                continue;
            }
        }
        match convert(path, &bytes, *label, cfg) {
            Ok(img) => {
                let image = format!("{}.pgm", source.replace('/', "__"));
                fs::write(out_dir.join(&image), img.to_pgm())?;
                rows.push(ManifestRow {
                    source: source.clone(),
                    class: img.label.map(|l| l.to_string()).unwrap_or_default(),
                    checksum,
                    image,
                });
                converted += 1;
            }
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if converted + skipped == 0 {
        return Err(CliError::bad(format!("all {failed} input(s) failed")));
    }
    let text = feature_manifest_text(&rows);
    if fs::read_to_string(&manifest_path).ok().as_deref() != Some(text.as_str()) {
        fs::write(&manifest_path, &text)?;
    }
    Ok(Outcome {
        text: format!(
            "extract: {converted} converted, {skipped} unchanged, {failed} failed -> {}\n",
            out_dir.display()
        ),
        json: json!({
            "converted": converted,
            "unchanged": skipped,
            "failed": failed,
            "dir": out_dir.display().to_string(),
        }),
    })
}

// ---------------------------------------------------------------- datagen

/// Images listed in a feature manifest (with labels), or every `.pgm` in `dir`.
pub fn load_images(dir: &Path) -> CliResult<Vec<GrayImage>> {
    let rows = read_feature_manifest(&dir.join(FEATURE_MANIFEST))?;
    let mut out = Vec::new();
    if rows.is_empty() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        files.sort();
        for f in files {
            out.push(GrayImage::read_pgm(fs::File::open(&f)?)?);
        }
    } else {
        for r in rows {
            let mut img = GrayImage::read_pgm(fs::File::open(dir.join(&r.image))?)?;
            img.label = if r.class.is_empty() { None } else { Some(r.class.parse()?) };
            out.push(img);
        }
    }
    Ok(out)
}

fn label_dir(label: Option<ClassLabel>) -> String {
    label.map_or_else(|| "unlabeled".to_string(), |l| l.to_string().replace(':', "_"))
}

pub fn cmd_datagen(cfg: &RunConfig) -> CliResult<Outcome> {
    let dir = cfg.real_dir.clone().unwrap_or_else(|| cfg.out.join(FEATURES_DIR));
    if !dir.is_dir() {
        return Err(CliError::bad(format!("{} is not a directory", dir.display())));
    }
    let real = load_images(&dir)?
        .iter()
        .map(|i| i.resized(cfg.gan_side))
        .collect::<crate::Result<Vec<_>>>()?;
    if real.is_empty() {
        return Err(CliError::bad("no inputs"));
    }
    let gan = GanConfig {
        epochs: cfg.gan_epochs,
        batch: cfg.gan_batch,
        lr: cfg.gan_lr,
        latent_dim: cfg.latent_dim,
        seed: cfg.seed,
        generator_hidden: cfg.generator_hidden.clone(),
        discriminator_hidden: cfg.discriminator_hidden.clone(),
        per_class: cfg.per_class,
    };
    let trained = train_per_class(&real, &gan)?;
    let mut text = String::new();
    let mut classes = Vec::new();
    for (i, (label, t)) in trained.iter().enumerate() {
        let ds = generate_samples(&t.generator, cfg.synth_per_class, cfg.seed.wrapping_add(i as u64))?.with_label(*label);
        let sub = cfg.out.join(SYNTH_DIR).join(label_dir(*label));
        ds.write_dir(&sub)?;
        let _ = writeln!(
            text,
            "{:<12} {} samples, D real-loss {:.4} -> {:.4}, generator {}",
            label_dir(*label),
            ds.images.len(),
            t.history.initial_d_real_loss,
            t.history.final_d_real_loss(),
            &ds.generator_checksum[..16]
        );
        classes.push(json!({
            "class": label.map(|l| l.to_string()),
            "samples": ds.images.len(),
            "generator_checksum": ds.generator_checksum,
            "initial_d_real_loss": t.history.initial_d_real_loss,
            "final_d_real_loss": t.history.final_d_real_loss(),
            "dir": sub.display().to_string(),
        }));
    }
    Ok(Outcome {
        text,
        json: json!({ "classes": classes }),
    })
}

// ---------------------------------------------------------------- estimate

pub fn load_model(cfg: &RunConfig) -> CliResult<ModelSpec> {
    match &cfg.model {
        Some(p) => Ok(ModelSpec::parse(&fs::read_to_string(p)?)?),
        None => Ok(ModelSpec::example()),
    }
}

pub fn load_weights(cfg: &RunConfig, model: &ModelSpec) -> CliResult<WeightStore> {
    let w = match &cfg.weights {
        Some(p) => WeightStore::from_bytes(&fs::read(p)?)?,
        None => WeightStore::random(model, cfg.weights_seed),
    };
    w.validate(model)?;
    Ok(w)
}

/// Topology with the parent-memory and radius overrides applied.
pub fn load_topology(cfg: &RunConfig) -> CliResult<Topology> {
    let p = cfg.topology.as_ref().ok_or_else(|| CliError::bad("topology is not set"))?;
    let mut t = Topology::parse(&fs::read_to_string(p)?)?;
    if let Some(m) = cfg.parent_memory {
        t.parent.free_memory = m;
    }
    if let Some(r) = cfg.radius {
        t.radius = r;
    }
    t.validate()?;
    Ok(t)
}

fn load_regressor(cfg: &RunConfig) -> CliResult<Option<RegressorModel>> {
    if cfg.train_regressor {
        let data = synthetic_offload_dataset(1000, cfg.seed);
        let model = train_regressor(
            &data,
            &RegressorConfig {
                seed: cfg.seed,
                ..RegressorConfig::default()
            },
        )?;
        fs::create_dir_all(&cfg.out)?;
        fs::write(cfg.out.join("regressor.txt"), model.to_text())?;
        return Ok(Some(model));
    }
    let Some(p) = &cfg.regressor else {
        log::warn!("no regressor configured; using the exact memory comparison");
        return Ok(None);
    };
    match fs::read_to_string(p).map_err(Error::from).and_then(|t| RegressorModel::parse(&t)) {
        Ok(m) => Ok(Some(m)),
        Err(e) => {
            log::warn!("regressor {} unusable ({e}); using the exact memory comparison", p.display());
            Ok(None)
        }
    }
}

pub fn cmd_estimate(cfg: &RunConfig) -> CliResult<Outcome> {
    let model = load_model(cfg)?;
    let topo = load_topology(cfg)?;
    let params = model_params(&model);
    let mem = estimate_memory(&model, cfg.batch_size, cfg.num_batches, cfg.bytes_per_param)?;
    let parent = &topo.parent;
    let exact_offload = mem.model_bytes > parent.free_memory;
    let regressor = load_regressor(cfg)?;
    let prediction = match &regressor {
        Some(r) => Some(r.predict(&build_features(&model, &params, &mem, parent))?),
        None => None,
    };
    let offload = prediction.map_or(exact_offload, |p| p.offload);
    let verdict = if offload { "offload" } else { "fit" };

    let mut text = format!("{:<6} {:<10} {:>10} {:>14}\n", "layer", "kind", "params", "bytes");
    let mut layers = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let p = layer_params(layer);
        let bytes = mem.bytes_for(p)?;
        let _ = writeln!(text, "{i:<6} {:<10} {p:>10} {bytes:>14}", format!("{:?}", layer.kind()));
        layers.push(json!({ "index": i, "kind": format!("{:?}", layer.kind()), "params": p, "bytes": bytes }));
    }
    let _ = writeln!(text, "total params {}", params.total);
    let _ = writeln!(
        text,
        "model memory {} bytes (N={} batch={} bytes/param={})",
        mem.model_bytes, cfg.num_batches, cfg.batch_size, cfg.bytes_per_param
    );
    let _ = writeln!(text, "parent {} free {} bytes", parent.id, parent.free_memory);
    match prediction {
        Some(p) => {
            let _ = writeln!(text, "regressor offload probability {:.4}", p.probability);
            if p.offload != exact_offload {
                log::warn!("regressor disagrees with the exact comparison");
            }
        }
        None => text.push_str("regressor unavailable, exact comparison used\n"),
    }
    let _ = writeln!(text, "verdict: {verdict}");
    let est = format!(
        "params={}\nmodel_bytes={}\nparent_free={}\nverdict={verdict}\n",
        params.total, mem.model_bytes, parent.free_memory
    );
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("estimate.txt"), est)?;
    Ok(Outcome {
        text,
        json: json!({
            "layers": layers,
            "params": params.total,
            "model_bytes": mem.model_bytes,
            "parent": parent.id,
            "parent_free": parent.free_memory,
            "probability": prediction.map(|p| p.probability),
            "exact_offload": exact_offload,
            "verdict": verdict,
        }),
    })
}

// ---------------------------------------------------------------- plan

fn make_plan(cfg: &RunConfig, model: &ModelSpec, topo: &Topology) -> CliResult<PartitionPlan> {
    let mem = estimate_memory(model, cfg.batch_size, cfg.num_batches, cfg.bytes_per_param)?;
    let cost = CommCostModel {
        samples: cfg.samples.max(1) as u64,
        ..CommCostModel::default()
    };
    let effective = apply_calibration(topo, &cfg.calibration)?;
    Ok(plan_partition(model, &mem, &select_candidates(&effective), &cost, &cfg.planner())?)
}

fn plan_json(plan: &PartitionPlan) -> Value {
    json!({
        "status": plan.status.to_string(),
        "model_bytes": plan.model_bytes,
        "latency": plan.latency,
        "assignments": plan.assignments.iter().map(|a| json!({
            "node": a.node,
            "start": a.layers.start,
            "end": a.layers.end,
            "bytes": plan.per_node_bytes.get(&a.node).copied().unwrap_or(0),
        })).collect::<Vec<_>>(),
    })
}

pub fn cmd_plan(cfg: &RunConfig) -> CliResult<Outcome> {
    let model = load_model(cfg)?;
    let topo = load_topology(cfg)?;
    let plan = make_plan(cfg, &model, &topo)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("plan.txt"), plan.to_kv())?;
    Ok(Outcome {
        text: plan.to_table(),
        json: plan_json(&plan),
    })
}

// ---------------------------------------------------------------- simulate

struct SimSetup {
    model: ModelSpec,
    weights: WeightStore,
    input: Tensor,
    topology: Topology,
    plan: PartitionPlan,
    config: SimConfig,
}

fn load_input(cfg: &RunConfig, model: &ModelSpec) -> CliResult<Tensor> {
    let in_shape = model.input_shape().to_vec();
    let Some(p) = &cfg.input else {
        let mut shape = vec![cfg.samples.max(1)];
        shape.extend_from_slice(&in_shape);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        let n: usize = shape.iter().product();
        return Ok(Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>()).collect())?);
    };
    let [1, side, w] = in_shape[..] else {
        return Err(CliError::bad(format!("image input needs a [1, s, s] model input, found {in_shape:?}")));
    };
    if side != w {
        return Err(CliError::bad("image input needs a square model input"));
    }
    let imgs = if p.is_dir() {
        load_images(p)?
    } else {
        vec![GrayImage::read_pgm(fs::File::open(p)?)?]
    };
    if imgs.is_empty() {
        return Err(CliError::bad("no inputs"));
    }
    let tensors = imgs
        .iter()
        .map(|i| Ok(i.resized(side)?.to_unit_tensor()))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(Tensor::stack(&tensors)?)
}

fn sim_setup(cfg: &RunConfig) -> CliResult<SimSetup> {
    if let Scenario::Calibrated(n) = cfg.scenario {
        let model = calibration_model();
        let mut cal = Calibration::fitted();
        if let Some(&f) = cfg.calibration.get("n1") {
            cal.child = f;
        }
        if let Some(&f) = cfg.calibration.get("n2") {
            cal.shared = f;
        }
        let sc = CalibratedScenario::build(&model, n, &cal)?;
        let mut config = sc.config.clone();
        config.seed = cfg.seed;
        config.faults = cfg.faults.clone();
        config.timeout_factor = cfg.timeout_factor;
        config.parent_overhead_bytes = cfg.parent_overhead;
        return Ok(SimSetup {
            weights: calibration_weights(&model),
            input: calibration_input(&model, cfg.seed),
            topology: sc.topology,
            plan: sc.plan,
            model,
            config,
        });
    }
    let model = load_model(cfg)?;
    let weights = load_weights(cfg, &model)?;
    let topology = load_topology(cfg)?;
    let input = load_input(cfg, &model)?;
    let samples = crate::inference::samples_of(&model, &input)?.len();
    let mut plan_cfg = cfg.clone();
    plan_cfg.samples = samples;
    let plan = match &cfg.plan {
        Some(p) => PartitionPlan::parse_kv(&fs::read_to_string(p)?)?,
        None => make_plan(&plan_cfg, &model, &topology)?,
    };
    let mut config = cfg.sim_config();
    config.memory = Some(estimate_memory(&model, cfg.batch_size, cfg.num_batches, cfg.bytes_per_param)?);
    Ok(SimSetup {
        model,
        weights,
        input,
        topology,
        plan,
        config,
    })
}

/// The same run on the parent alone, with room for the whole model.
fn baseline_run(s: &SimSetup) -> crate::Result<SimResult> {
    let mut parent = s.topology.parent.clone();
    parent.free_memory = u64::MAX;
    let topo = Topology::new(parent, vec![], f64::INFINITY)?;
    let mut config = s.config.clone();
    config.faults.clear();
    config.calibration.retain(|k, _| *k == topo.parent.id);
    let mem = config
        .memory
        .ok_or_else(|| Error::Plan("baseline needs a memory estimate".into()))?;
    let candidates = select_candidates(&apply_calibration(&topo, &config.calibration)?);
    let plan = plan_partition(&s.model, &mem, &candidates, &CommCostModel::default(), &config.planner)?;
    simulate_inference(&plan, &s.model, &s.weights, &s.input, &topo, &config)
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Outcome> {
    let setup = sim_setup(cfg)?;
    let result = simulate_inference(
        &setup.plan,
        &setup.model,
        &setup.weights,
        &setup.input,
        &setup.topology,
        &setup.config,
    )
    .map_err(CliError::sim)?;
    let baseline = baseline_run(&setup).map_err(CliError::sim)?;
    let rep = report(&result, &baseline)?;
    let monolith = model_forward(&setup.model, &setup.weights, &setup.input)?;
    let output_match = result.output.bit_eq(&monolith);

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("events.csv"), result.event_log_csv())?;
    fs::write(cfg.out.join("result.csv"), rep.to_csv())?;
    fs::write(cfg.out.join("report.txt"), rep.to_table())?;
    fs::write(cfg.out.join("plot.dat"), rep.plot_data())?;
    fs::write(cfg.out.join("final_plan.txt"), result.final_plan.to_kv())?;
    let mut probs = String::from("sample,class,probability\n");
    let classes = setup.model.num_classes();
    for (i, p) in result.output.data().iter().enumerate() {
        let _ = writeln!(probs, "{},{},{p}", i / classes, i % classes);
    }
    fs::write(cfg.out.join("output.csv"), probs)?;

    let mut text = setup.plan.to_table();
    text.push_str(&rep.to_table());
    let _ = writeln!(text, "monolith output-match={output_match}");
    let _ = writeln!(text, "speedup {:.3}", rep.speedup);
    Ok(Outcome {
        text,
        json: json!({
            "plan": plan_json(&setup.plan),
            "makespan": rep.makespan,
            "baseline_makespan": rep.baseline_makespan,
            "speedup": rep.speedup,
            "replans": rep.replans,
            "checksum_failures": rep.checksum_failures,
            "output_match": output_match,
            "samples": result.samples,
            "bytes_sent": result.bytes_sent(),
            "bytes_received": result.bytes_received(),
        }),
    })
}

// ---------------------------------------------------------------- report

/// Latency and resource figure data for the calibrated scenario.
pub fn cmd_report(cfg: &RunConfig) -> CliResult<Outcome> {
    let model = calibration_model();
    let cal = Calibration::fitted();
    let mut points = Vec::new();
    for n in [1, 2, 4] {
        let sc = CalibratedScenario::build(&model, n, &cal)?;
        points.push((n, sc.timing().map_err(CliError::sim)?));
    }
    let sc = CalibratedScenario::build(&model, 4, &cal)?;
    let w = calibration_weights(&model);
    let x = calibration_input(&model, cfg.seed);
    let run = simulate_inference(&sc.plan, &model, &w, &x, &sc.topology, &sc.config).map_err(CliError::sim)?;
    let base_sc = CalibratedScenario::build(&model, 1, &cal)?;
    let base = simulate_inference(&base_sc.plan, &model, &w, &x, &base_sc.topology, &base_sc.config).map_err(CliError::sim)?;
    let rep = report(&run, &base)?;

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("latency.dat"), latency_plot_data(&points))?;
    fs::write(cfg.out.join("resources.dat"), rep.plot_data())?;
    fs::write(cfg.out.join("resources.csv"), rep.to_csv())?;
    let mut text = String::from("nodes  makespan_s  speedup\n");
    for (n, t) in &points {
        let _ = writeln!(text, "{n:<6} {t:>10.3} {:>8.3}", points[0].1 / t);
    }
    text.push_str(&rep.to_table());
    Ok(Outcome {
        text,
        json: json!({
            "latency": points.iter().map(|(n, t)| json!({"nodes": n, "makespan": t, "speedup": points[0].1 / t})).collect::<Vec<_>>(),
            "speedup": rep.speedup,
            "output_match": rep.output_match,
        }),
    })
}
