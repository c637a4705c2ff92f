//! Experiment runner behind the `ris-gnn` binary.
//!
//! Every command reads one JSON [`ExperimentConfig`], applies `--seed` and
//! `--override` on top of it, validates the result and only then starts
//! computing. Each output directory gets a `manifest.json` holding the
//! effective configuration, its hash, the seed and the build, which is enough
//! to repeat the command.
//!
//! CSV schemas (column order is fixed, the version is recorded in the
//! manifest as `csv_schema`):
//!
//! | file           | columns                                          |
//! |----------------|--------------------------------------------------|
//! | `trainlog.csv` | `epoch,loss,eval_sum_rate,grad_norm,seconds`     |
//! | `eval.csv`     | `sample,method,sum_rate`                         |
//! | `sweep.csv`    | `axis,value,method,mean,std,n`                   |

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use ris_gnn::baselines::{BaselineConfig, BaselineKind};
use ris_gnn::channel::{sample_batch, stream_rng, ChannelRealization, ScenarioConfig};
use ris_gnn::gnn::{load_checkpoint, save_checkpoint, Checkpoint, GnnConfig, ModelParams};
use ris_gnn::objective::{PairedComparison, RateReport, Summary};
use ris_gnn::training::{infer_batch, train_with, TrainConfig, TrainLog};
use ris_gnn::Real;

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const GNN_METHOD: &str = "gnn";

/// Offsets separating the random streams of evaluation drops and of the
/// random-phase control from the training streams under one master seed.
const EVAL_STREAM: u64 = 0x6576_616C;
const CONTROL_STREAM: u64 = 0x7268_6F21;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ris_gnn::Error),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// One point set of a sweep: a config key (alias or dotted path) and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; copied into the scenario, model and training seeds.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub model: GnnConfig,
    pub train: TrainConfig,
    /// Scalar type used for training. Evaluation always runs in `f64`.
    pub precision: Precision,
    pub baselines: Vec<BaselineKind>,
    pub baseline: BaselineConfig,
    /// Fresh drops per evaluation point.
    pub eval_samples: usize,
    pub sweep: Option<SweepAxis>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            scenario: ScenarioConfig::default(),
            model: GnnConfig::default(),
            train: TrainConfig::desk(),
            precision: Precision::F64,
            baselines: vec![BaselineKind::MrtAligned, BaselineKind::ZfPhaseOpt],
            baseline: BaselineConfig::default(),
            eval_samples: 300,
            sweep: None,
            out_dir: None,
        }
    }
}

/// Short names accepted by `--override` and sweep axes.
pub const ALIASES: &[(&str, &str)] = &[
    ("K", "scenario.users"),
    ("J", "scenario.ris"),
    ("users", "scenario.users"),
    ("ris", "scenario.ris"),
    ("epochs", "train.epochs"),
    ("B", "train.batch_size"),
    ("batch_size", "train.batch_size"),
    ("steps", "train.steps_per_batch"),
    ("lr", "train.learning_rate"),
    ("T", "model.layers"),
    ("D_m", "model.message_dim"),
    ("samples", "eval_samples"),
];

pub fn resolve_key(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, path)| path)
}

/// Parses `value` as JSON, falling back to a plain string.
pub fn parse_value(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Sets one key (alias or dotted path) and re-validates the structure.
    pub fn set(&self, key: &str, value: Value) -> Result<Self> {
        let path = resolve_key(key);
        let mut tree = serde_json::to_value(self)?;
        let mut node = &mut tree;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("override '{key}': '{part}' is not inside an object")))?;
            if !obj.contains_key(*part) {
                return Err(CliError::Config(format!("override '{key}': unknown key '{part}'")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.get_mut(*part).unwrap();
        }
        serde_json::from_value(tree).map_err(|e| CliError::Config(format!("override '{key}': {e}")))
    }

    /// Applies `key=value` overrides in order.
    pub fn with_overrides(mut self, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not of the form key=value")))?;
            self = self.set(key.trim(), parse_value(value.trim()))?;
        }
        Ok(self)
    }

    /// Copies the master seed into every component seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scenario.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval_samples == 0 {
            return Err(CliError::Config("eval_samples must be at least 1".into()));
        }
        if let Some(axis) = &self.sweep {
            if axis.values.is_empty() {
                return Err(CliError::Config("sweep axis has no values".into()));
            }
            for v in &axis.values {
                self.set(&axis.key, v.clone())?.validate_point()?;
            }
        }
        Ok(())
    }

    fn validate_point(&self) -> Result<()> {
        self.scenario.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of this configuration.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            tx_power_w: self.scenario.tx_power_w(),
            ..self.baseline.clone()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(EVAL_STREAM)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub git_describe: String,
    pub version: String,
    pub csv_schema: u32,
    pub checkpoint: Option<PathBuf>,
    pub args: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, checkpoint: Option<&Path>, args: Vec<String>) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            name: cfg.name.clone(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            git_describe: env!("RIS_GNN_GIT_DESCRIBE").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            csv_schema: CSV_SCHEMA_VERSION,
            checkpoint: checkpoint.map(Path::to_path_buf),
            args,
            config: cfg.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedSummary {
    pub method: String,
    pub baseline: String,
    #[serde(flatten)]
    pub comparison: PairedComparison,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub users: usize,
    pub ris: usize,
    pub samples: usize,
    pub methods: Vec<MethodSummary>,
    /// GNN minus each baseline on the same drops.
    pub paired: Vec<PairedSummary>,
}

/// Per-sample sum rates of every method on the same drops.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub methods: Vec<(String, Vec<f64>)>,
}

impl EvalResult {
    pub fn rates(&self, method: &str) -> Option<&[f64]> {
        self.methods.iter().find(|(m, _)| m == method).map(|(_, r)| r.as_slice())
    }

    pub fn summary(&self, scenario: &ScenarioConfig) -> Result<EvalSummary> {
        let methods = self
            .methods
            .iter()
            .map(|(m, r)| MethodSummary {
                method: m.clone(),
                summary: Summary::of(r),
            })
            .collect();
        let mut paired = Vec::new();
        if let Some(gnn) = self.rates(GNN_METHOD) {
            for (m, r) in self.methods.iter().filter(|(m, _)| m != GNN_METHOD) {
                paired.push(PairedSummary {
                    method: GNN_METHOD.into(),
                    baseline: m.clone(),
                    comparison: PairedComparison::new(gnn, r)?,
                });
            }
        }
        Ok(EvalSummary {
            users: scenario.users,
            ris: scenario.ris,
            samples: self.methods.first().map_or(0, |(_, r)| r.len()),
            methods,
            paired,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample", "method", "sum_rate"])?;
        let n = self.methods.first().map_or(0, |(_, r)| r.len());
        for i in 0..n {
            for (m, r) in &self.methods {
                w.write_record([i.to_string(), m.clone(), r[i].to_string()])?;
            }
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Drops `0..samples` of the evaluation stream for `scenario`.
pub fn eval_drops(scenario: &ScenarioConfig, seed: u64, samples: usize) -> Vec<ChannelRealization<f64>> {
    sample_batch(scenario, seed, 0, samples)
}

/// Evaluates the model (if any) and the baselines on the same `samples` drops.
pub fn evaluate(
    scenario: &ScenarioConfig,
    model: Option<&ModelParams<f64>>,
    baselines: &[BaselineKind],
    baseline_cfg: &BaselineConfig,
    seed: u64,
    samples: usize,
) -> Result<EvalResult> {
    if samples == 0 {
        return Err(CliError::Config("the number of evaluation samples must be at least 1".into()));
    }
    scenario.validate()?;
    let drops = eval_drops(scenario, seed, samples);
    let noise = scenario.noise_power_w();
    let mut methods = Vec::new();
    if let Some(m) = model {
        let out = infer_batch(&drops, m, scenario)?;
        methods.push((GNN_METHOD.to_string(), out.iter().map(|(_, r)| r.sum_rate).collect()));
    }
    for &kind in baselines {
        let rates: Vec<f64> = drops
            .par_iter()
            .enumerate()
            .map(|(i, real)| {
                let mut rng = stream_rng(seed.wrapping_add(CONTROL_STREAM), i as u64);
                let sol = kind.run(real, baseline_cfg, &mut rng)?;
                Ok(RateReport::evaluate(real, &sol, noise)?.sum_rate)
            })
            .collect::<Result<_>>()?;
        methods.push((kind.name().to_string(), rates));
    }
    Ok(EvalResult { methods })
}

/// Widens a model to `f64` through its checkpoint form, which is exact.
fn to_f64_model<T: Real>(model: &ModelParams<T>) -> Result<ModelParams<f64>> {
    Ok(Checkpoint::from_model(model, None).to_model::<f64>()?.0)
}

/// What `train` leaves behind.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub log: TrainLog,
    pub checkpoint: PathBuf,
    pub summary: EvalSummary,
}

/// Trains, then evaluates the result next to the configured baselines.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, args: Vec<String>) -> Result<TrainArtifacts> {
    cfg.validate()?;
    ensure_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    Manifest::new("train", cfg, Some(&checkpoint), args)?.write(out)?;
    let progress = |r: &ris_gnn::training::EpochRecord| {
        log::info!(
            "epoch {:>4}  loss {:>9.5}  eval {:>8.5}  |g| {:.3e}  {:.1}s",
            r.epoch,
            r.loss,
            r.eval_sum_rate,
            r.grad_norm,
            r.seconds
        )
    };
    let train_cfg = TrainConfig {
        checkpoint_path: None,
        ..cfg.train.clone()
    };
    let (model, log) = match cfg.precision {
        Precision::F64 => {
            let m = ModelParams::<f64>::new(&cfg.model, &cfg.scenario)?;
            let o = train_with(&cfg.scenario, m, None, &train_cfg, progress)?;
            save_checkpoint(&checkpoint, &o.model, Some(&o.optimizer))?;
            (o.model, o.log)
        }
        Precision::F32 => {
            let m = ModelParams::<f32>::new(&cfg.model, &cfg.scenario)?;
            let o = train_with(&cfg.scenario, m, None, &train_cfg, progress)?;
            let m64 = to_f64_model(&o.model)?;
            save_checkpoint(&checkpoint, &o.model, Some(&o.optimizer))?;
            (m64, o.log)
        }
    };
    log.write_csv(out.join("trainlog.csv"))?;
    let result = evaluate(&cfg.scenario, Some(&model), &cfg.baselines, &cfg.baseline_config(), cfg.eval_seed(), cfg.eval_samples)?;
    result.write_csv(&out.join("eval.csv"))?;
    let summary = result.summary(&cfg.scenario)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(TrainArtifacts { log, checkpoint, summary })
}

fn load_model(checkpoint: &Path, scenario: &ScenarioConfig) -> Result<ModelParams<f64>> {
    let (model, _) = load_checkpoint::<f64>(checkpoint)?;
    model.check_scenario(scenario)?;
    Ok(model)
}

/// Paired evaluation of a checkpoint (optional) and the configured baselines.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path, args: Vec<String>) -> Result<EvalSummary> {
    cfg.validate()?;
    let model = checkpoint.map(|c| load_model(c, &cfg.scenario)).transpose()?;
    ensure_dir(out)?;
    let command = if checkpoint.is_some() { "eval" } else { "baseline" };
    Manifest::new(command, cfg, checkpoint, args)?.write(out)?;
    let result = evaluate(&cfg.scenario, model.as_ref(), &cfg.baselines, &cfg.baseline_config(), cfg.eval_seed(), cfg.eval_samples)?;
    result.write_csv(&out.join("eval.csv"))?;
    let summary = result.summary(&cfg.scenario)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Evaluates every point of the sweep axis on its own fresh drops, without
/// retraining. Rows are ordered by axis value, then method.
pub fn cmd_sweep(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path, args: Vec<String>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let axis = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs an axis (config 'sweep' or --axis)".into()))?;
    let model = checkpoint.map(|c| load_checkpoint::<f64>(c).map(|m| m.0)).transpose()?;
    ensure_dir(out)?;
    Manifest::new("sweep", cfg, checkpoint, args)?.write(out)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for value in &axis.values {
        let point = cfg.set(&axis.key, value.clone())?;
        if let Some(m) = &model {
            m.check_scenario(&point.scenario)?;
        }
        let result = evaluate(&point.scenario, model.as_ref(), &point.baselines, &point.baseline_config(), point.eval_seed(), point.eval_samples)?;
        let summary = result.summary(&point.scenario)?;
        for ms in &summary.methods {
            rows.push(SweepRow {
                axis: axis.key.clone(),
                value: value_label(value),
                method: ms.method.clone(),
                mean: ms.summary.mean,
                std: ms.summary.std,
                n: ms.summary.n,
            });
        }
        points.push(serde_json::json!({ "value": value, "summary": summary }));
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(&out.join("summary.json"), &points)?;
    Ok(rows)
}

/// Caps the global rayon pool at `RIS_GNN_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RIS_GNN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("RIS_GNN_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Config("RIS_GNN_THREADS must be at least 1".into()));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
