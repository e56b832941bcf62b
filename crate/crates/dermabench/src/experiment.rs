//! End-to-end experiments: load, preprocess, build, train, evaluate, and
//! persist a self-contained run record.

use std::path::{Path, PathBuf};

use candle_core::Device;
use chrono::Utc;
use dermabench_core::dataset::{DatasetKind, Transform};
use dermabench_core::metrics::{confusion_matrix, full_reports, AggregationMode, MetricsMode};
use dermabench_core::preprocess::resize_images;
use dermabench_core::report::{comparison_table, results_table, ComparisonEntry, TableFormat, TableRow};
use dermabench_core::{
    compute_class_weights, stratified_subsample, BackboneKind, ClassWeights, ConfusionMatrix, CountCheck, DatasetBundle,
    DatasetDescriptor, MetricsReport, ModelName, Normalization,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::download::{data_dir, weights_dir};
use crate::error::IoContext;
use crate::ingest::load_dataset;
use crate::model::{build_model, load_backbone, load_checkpoint, ManifestEntry, ModelHandle, WeightsInfo, WeightsSpec};
use crate::plots::{emit_confusion_plot, emit_curves};
use crate::synthetic::{synthetic_bundle, Content, SyntheticSpec};
use crate::trainer::{evaluate, train, AdamParams, TrainConfig, TrainRun};
use crate::{Error, Result};

/// Optional overrides of the training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_cache_mib: Option<usize>,
}

/// A declarative experiment, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// A published dataset name, or a full descriptor.
    pub dataset: DatasetDescriptor,
    pub model: ModelName,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub subsample_fraction: Option<f64>,
    #[serde(default)]
    pub metrics_mode: MetricsMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Drives subsampling, head initialization, shuffling and dropout.
    #[serde(default)]
    pub seed: u64,
    /// Side images are resized to; defaults to the model's own input side.
    #[serde(default)]
    pub input_side: Option<usize>,
    /// Permit `input_side` below the dataset resolution.
    #[serde(default)]
    pub allow_downscale: bool,
    #[serde(default)]
    pub weights: WeightsSpec,
    /// Archive file or directory; defaults to the data cache.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetDescriptor, model: ModelName) -> Self {
        ExperimentSpec {
            dataset,
            model,
            train: TrainOverrides::default(),
            subsample_fraction: None,
            metrics_mode: MetricsMode::default(),
            output_dir: default_output_dir(),
            seed: 0,
            input_side: None,
            allow_downscale: false,
            weights: WeightsSpec::default(),
            data_path: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn input_side(&self) -> usize {
        self.input_side.unwrap_or_else(|| self.model.config().input_side)
    }

    /// Training configuration: defaults, then overrides, then the run seed.
    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let o = &self.train;
        TrainConfig {
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            max_epochs: o.max_epochs.unwrap_or(d.max_epochs),
            patience: o.patience.unwrap_or(d.patience),
            feature_cache_mib: o.feature_cache_mib.unwrap_or(d.feature_cache_mib),
            seed: self.seed,
            ..d
        }
    }

    /// Everything checkable before touching data.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let config = self.model.config();
        config.validate()?;
        self.train_config().validate()?;
        if let Some(f) = self.subsample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Core(dermabench_core::Error::Config(format!(
                    "subsample_fraction must be in (0, 1], got {f}"
                ))));
            }
        }
        let side = self.input_side();
        if side < config.min_input_side() {
            return Err(Error::Build(format!(
                "{} needs inputs of at least {min}×{min} pixels, got {side}",
                config.name,
                min = config.min_input_side()
            )));
        }
        if self.dataset.name == DatasetKind::Synthetic && !matches!(self.dataset.expected_counts, CountCheck::Exact(_)) {
            return Err(Error::Core(dermabench_core::Error::Config(
                "a synthetic dataset needs exact split sizes".into(),
            )));
        }
        Ok(())
    }

    /// Short content hash, used in run identifiers.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..4])
    }
}

/// Loads (or generates) the bundle an experiment describes.
pub fn load_bundle(spec: &ExperimentSpec) -> Result<DatasetBundle> {
    match spec.dataset.name {
        DatasetKind::Synthetic => {
            let counts = match spec.dataset.expected_counts {
                CountCheck::Exact(c) => c,
                _ => unreachable!("checked by validate"),
            };
            synthetic_bundle(&SyntheticSpec {
                side: spec.dataset.resolution,
                counts,
                seed: spec.seed,
                content: Content::Lesions,
            })
        }
        _ => {
            let path = spec.data_path.clone().unwrap_or_else(data_dir);
            load_dataset(&spec.dataset, &path)
        }
    }
}

/// Subsampling and resizing.
pub fn preprocess(spec: &ExperimentSpec, bundle: DatasetBundle) -> Result<DatasetBundle> {
    let mut b = bundle;
    if let Some(f) = spec.subsample_fraction {
        if f < 1.0 {
            b = stratified_subsample(&b, f, spec.seed)?;
        }
    }
    let side = spec.input_side();
    if b.side() != side {
        b = resize_images(&b, side, spec.allow_downscale)?;
    }
    Ok(b)
}

pub fn build(spec: &ExperimentSpec) -> Result<ModelHandle> {
    let config = spec.model.config();
    let backbone = match config.backbone {
        BackboneKind::None => None,
        kind => Some(load_backbone(kind, &spec.weights, &weights_dir(), &Device::Cpu)?),
    };
    build_model(&config, spec.input_side(), spec.seed, backbone)
}

fn class_weights_for(spec: &ExperimentSpec, bundle: &DatasetBundle) -> Result<Option<ClassWeights>> {
    if spec.model.config().use_class_weights {
        Ok(Some(compute_class_weights(bundle.train())?))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub summary: String,
    pub counts: [usize; 3],
    pub side: usize,
    pub transforms: Vec<Transform>,
    pub train_histogram: Vec<usize>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub manifest: Vec<ManifestEntry>,
    pub trainable_params: usize,
    pub total_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package_version: String,
    pub device: String,
    pub seed: u64,
    pub adam: AdamParams,
    pub weights: Option<WeightsInfo>,
    pub frozen_digest: Option<String>,
    pub class_weights: Option<ClassWeights>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

/// Everything a run produced, persisted as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub spec: ExperimentSpec,
    pub dataset: Option<DatasetInfo>,
    pub model: Option<ModelInfo>,
    pub train: Option<TrainRun>,
    pub test_loss: Option<f64>,
    pub reports: Vec<MetricsReport>,
    pub confusion: Option<ConfusionMatrix>,
    pub environment: Environment,
}

impl RunRecord {
    pub fn report(&self, mode: AggregationMode) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.aggregation_mode == mode)
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

pub const RECORD_FILE: &str = "run.json";

pub fn save_record(record: &RunRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let path = dir.join(RECORD_FILE);
    let tmp = dir.join("run.json.partial");
    let text = serde_json::to_string_pretty(record)?;
    std::fs::write(&tmp, text + "\n").at(&tmp)?;
    std::fs::rename(&tmp, &path).at(&path)?;
    Ok(())
}

/// Reads `run.json` from a run directory (or the file itself).
pub fn load_record(path: &Path) -> Result<RunRecord> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).at(&file)?;
    Ok(serde_json::from_str(&text)?)
}

fn new_run_dir(spec: &ExperimentSpec) -> Result<(String, PathBuf)> {
    std::fs::create_dir_all(&spec.output_dir).at(&spec.output_dir)?;
    let base = format!("{}-{}", Utc::now().format("%Y%m%dT%H%M%SZ"), spec.config_hash());
    for n in 0.. {
        let id = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = spec.output_dir.join(&id);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir, e)),
        }
    }
    unreachable!()
}

/// Per-run CSV: one row per aggregation mode, columns in table order.
pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("aggregation_mode,loss,acc,precision,auc,recall\n");
    for r in reports {
        let v = r.values().map(dermabench_core::report::fmt4);
        s.push_str(&format!("{},{}\n", r.aggregation_mode.as_str(), v.join(",")));
    }
    s
}

struct Pipeline {
    record: RunRecord,
    dir: PathBuf,
}

impl Pipeline {
    /// Runs one stage; on failure the record is persisted as failed and the
    /// error is returned tagged with the stage name.
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut RunRecord) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(&mut self.record) {
            Ok(v) => Ok(v),
            Err(e) => {
                self.record.status = RunStatus::Failed {
                    stage: name.to_string(),
                    error: e.to_string(),
                };
                self.record.environment.finished_at = Some(Utc::now().to_rfc3339());
                if let Err(save) = save_record(&self.record, &self.dir) {
                    log::error!("could not persist the failed record: {save}");
                }
                Err(Error::Stage {
                    stage: name,
                    source: Box::new(e),
                })
            }
        }
    }
}

/// Runs the full pipeline and persists the record, plots and checkpoint
/// under `spec.output_dir/<run id>/`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunRecord> {
    let (run_id, dir) = new_run_dir(spec)?;
    log::info!("run {run_id} in {}", dir.display());
    let mut p = Pipeline {
        record: RunRecord {
            run_id,
            status: RunStatus::Failed {
                stage: "start".into(),
                error: "incomplete".into(),
            },
            spec: spec.clone(),
            dataset: None,
            model: None,
            train: None,
            test_loss: None,
            reports: Vec::new(),
            confusion: None,
            environment: Environment {
                package_version: env!("CARGO_PKG_VERSION").to_string(),
                device: "cpu".into(),
                seed: spec.seed,
                adam: AdamParams::default(),
                weights: None,
                frozen_digest: None,
                class_weights: None,
                started_at: Utc::now().to_rfc3339(),
                finished_at: None,
            },
        },
        dir: dir.clone(),
    };

    p.stage("validate", |_| spec.validate())?;
    let raw = p.stage("load", |_| load_bundle(spec))?;
    let bundle = p.stage("preprocess", |rec| {
        let b = preprocess(spec, raw)?;
        rec.dataset = Some(DatasetInfo {
            summary: b.summary(),
            counts: b.counts(),
            side: b.side(),
            transforms: b.transforms().to_vec(),
            train_histogram: b.train().class_histogram().to_vec(),
            normalization: Normalization::for_backbone(spec.model.config().backbone),
        });
        Ok(b)
    })?;
    let mut model = p.stage("build", |rec| {
        let m = build(spec)?;
        rec.model = Some(ModelInfo {
            manifest: m.manifest(),
            trainable_params: m.trainable_params(),
            total_params: m.total_params(),
        });
        rec.environment.weights = m.weights().cloned();
        rec.environment.frozen_digest = m.backbone().map(|_| m.frozen_digest()).transpose()?;
        Ok(m)
    })?;
    let weights = p.stage("train", |rec| {
        let weights = class_weights_for(spec, &bundle)?;
        let mut config = spec.train_config();
        config.class_weights = weights;
        rec.environment.class_weights = weights;
        rec.environment.adam = config.adam;
        let run = train(&mut model, &bundle, &config, &dir.join("checkpoints"))?;
        rec.train = Some(run);
        Ok(weights)
    })?;
    let samples = p.stage("evaluate", |rec| {
        let eval = evaluate(&mut model, bundle.test(), weights.as_ref())?;
        rec.test_loss = Some(eval.loss);
        rec.confusion = Some(confusion_matrix(&eval.samples)?);
        rec.reports = full_reports(&eval.samples, eval.loss, spec.metrics_mode)?;
        Ok(eval.samples)
    })?;
    drop(samples);
    p.stage("persist", |rec| {
        rec.status = RunStatus::Completed;
        rec.environment.finished_at = Some(Utc::now().to_rfc3339());
        save_record(rec, &dir)?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, report_csv(&rec.reports)).at(&csv)?;
        let title = format!("{} on {}", spec.model, spec.dataset.name);
        emit_confusion_plot(rec.confusion.as_ref().expect("evaluated"), &title, &dir.join("confusion.png"))?;
        emit_curves(&rec.train.as_ref().expect("trained").history, &dir.join("curves.png"))?;
        Ok(())
    })?;
    Ok(p.record)
}

/// Rebuilds a persisted run (same data, preprocessing and weights), loads
/// its best checkpoint and re-evaluates the test split. Returns the loss.
pub fn reevaluate(run_dir: &Path) -> Result<(RunRecord, f64)> {
    let record = load_record(run_dir)?;
    let spec = &record.spec;
    let bundle = preprocess(spec, load_bundle(spec)?)?;
    let mut model = build(spec)?;
    load_checkpoint(&mut model, &run_dir.join("checkpoints").join("best.ckpt"))?;
    let weights = class_weights_for(spec, &bundle)?;
    let eval = evaluate(&mut model, bundle.test(), weights.as_ref())?;
    Ok((record, eval.loss))
}

/// Results tables, one per dataset in first-seen order, from completed
/// records, using the reports of `mode`.
pub fn results_document(records: &[RunRecord], format: TableFormat, mode: AggregationMode) -> Result<String> {
    let mut datasets: Vec<DatasetKind> = Vec::new();
    for r in records.iter().filter(|r| r.is_completed()) {
        if !datasets.contains(&r.spec.dataset.name) {
            datasets.push(r.spec.dataset.name);
        }
    }
    if datasets.is_empty() {
        return Err(Error::Core(dermabench_core::Error::Empty("no completed run records")));
    }
    let mut out = String::new();
    for (i, d) in datasets.iter().enumerate() {
        let rows: Vec<TableRow> = records
            .iter()
            .filter(|r| r.is_completed() && r.spec.dataset.name == *d)
            .map(|r| {
                let report = r.report(mode).cloned().ok_or_else(|| {
                    Error::Core(dermabench_core::Error::Config(format!(
                        "run {} has no {} report",
                        r.run_id,
                        mode.as_str()
                    )))
                })?;
                Ok(TableRow {
                    model: r.spec.model.to_string(),
                    dataset: *d,
                    resolution: r.spec.dataset.resolution,
                    report,
                })
            })
            .collect::<Result<_>>()?;
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&results_table(&rows, format)?);
    }
    Ok(out)
}

/// The comparison table with one line per completed record, using the
/// accuracy of `mode`.
pub fn comparison_document(records: &[RunRecord], format: TableFormat, mode: AggregationMode) -> String {
    let entries: Vec<ComparisonEntry> = records
        .iter()
        .filter(|r| r.is_completed())
        .filter_map(|r| {
            let acc = r.report(mode)?.accuracy;
            Some(ComparisonEntry {
                model: r.spec.model.to_string(),
                dataset: r.spec.dataset.name,
                backbone: r.spec.model.config().backbone,
                accuracy: acc,
            })
        })
        .collect();
    comparison_table(&entries, format)
}

/// Run records found directly under `root` (one directory per run) or at
/// `root` itself, in path order.
pub fn discover_records(root: &Path) -> Result<Vec<RunRecord>> {
    if root.join(RECORD_FILE).is_file() || root.is_file() {
        return Ok(vec![load_record(root)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .at(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RECORD_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_record(d)).collect()
}
