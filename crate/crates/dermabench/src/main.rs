use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dermabench::download::{data_dir, download, join_url, weights_dir};
use dermabench::experiment::{
    comparison_document, discover_records, reevaluate, results_document, run_experiment, ExperimentSpec, RunRecord,
};
use dermabench::ingest::archive_file_name;
use dermabench::model::{weights_file_name, WeightsSpec};
use dermabench::{Error, Result};
use dermabench_core::metrics::AggregationMode;
use dermabench_core::report::TableFormat;
use dermabench_core::{BackboneKind, DatasetDescriptor, DatasetKind, ModelName};

/// Split sizes used when `--dataset synthetic` is given without a config.
const SYNTHETIC_COUNTS: [usize; 3] = [700, 100, 200];
const SYNTHETIC_SIDE: usize = 64;

#[derive(Parser)]
#[command(name = "dermabench", version, about = "Frozen-backbone skin-lesion classification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch a dataset archive (or backbone weights) into the local cache.
    DownloadData(DownloadArgs),
    /// Run an experiment end to end and persist its record.
    Train(TrainArgs),
    /// Reload a run's best checkpoint and re-evaluate the test split.
    Evaluate {
        /// Run directory holding run.json.
        run: PathBuf,
    },
    /// Results tables (one per dataset) from persisted runs.
    Report(TableArgs),
    /// Accuracy next to the published baselines.
    Compare(TableArgs),
}

#[derive(Args)]
struct DownloadArgs {
    /// Dataset to fetch.
    #[arg(long)]
    dataset: Option<String>,
    /// Backbone weights to fetch (resnet50 or efficientnetv2l).
    #[arg(long)]
    backbone: Option<String>,
    /// Base URL serving the files and their `.sha256` sidecars.
    #[arg(long, env = "DERMABENCH_BASE_URL")]
    base_url: String,
    /// Expected SHA-256; defaults to the published sidecar.
    #[arg(long)]
    sha256: Option<String>,
    /// Destination directory; defaults to the data or weights cache.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Stratified fraction of every split to keep.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Resize images to this side (downscaling is allowed when given).
    #[arg(long)]
    input_side: Option<usize>,
    /// Use seeded random backbone weights instead of pretrained ones.
    #[arg(long)]
    synthetic_weights: Option<u64>,
}

#[derive(Args)]
struct TableArgs {
    /// Run directories, or directories containing run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// text or csv.
    #[arg(long, default_value = "text")]
    format: String,
    /// Reduction whose numbers are tabulated: threshold_micro or argmax_macro.
    #[arg(long, default_value = "threshold_micro")]
    mode: String,
    /// Write the document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_err(msg: String) -> Error {
    Error::Core(dermabench_core::Error::Config(msg))
}

fn descriptor(name: &str) -> Result<DatasetDescriptor> {
    match DatasetKind::parse(name)? {
        DatasetKind::Synthetic => Ok(DatasetDescriptor::synthetic(SYNTHETIC_SIDE, SYNTHETIC_COUNTS)),
        kind => Ok(DatasetDescriptor::named(kind)?),
    }
}

fn build_spec(args: &TrainArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            ExperimentSpec::from_json(&text)?
        }
        None => {
            let (Some(d), Some(m)) = (&args.dataset, &args.model) else {
                return Err(config_err("give --config, or both --dataset and --model".into()));
            };
            ExperimentSpec::new(descriptor(d)?, ModelName::parse(m)?)
        }
    };
    if args.config.is_some() {
        if let Some(d) = &args.dataset {
            spec.dataset = descriptor(d)?;
        }
        if let Some(m) = &args.model {
            spec.model = ModelName::parse(m)?;
        }
    }
    if let Some(f) = args.subsample {
        spec.subsample_fraction = Some(f);
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(o) = &args.out {
        spec.output_dir = o.clone();
    }
    if let Some(e) = args.max_epochs {
        spec.train.max_epochs = Some(e);
    }
    if let Some(side) = args.input_side {
        spec.input_side = Some(side);
        spec.allow_downscale = true;
    }
    if let Some(seed) = args.synthetic_weights {
        spec.weights = WeightsSpec::Synthetic { seed };
    }
    Ok(spec)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(discover_records(p)?);
    }
    Ok(out)
}

fn write_doc(doc: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, doc).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn aggregation(s: &str) -> Result<AggregationMode> {
    match s {
        "threshold_micro" => Ok(AggregationMode::ThresholdMicro),
        "argmax_macro" => Ok(AggregationMode::ArgmaxMacro),
        other => Err(config_err(format!("unknown aggregation mode `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DownloadData(a) => {
            let (file, dir) = match (&a.dataset, &a.backbone) {
                (Some(d), None) => (archive_file_name(DatasetKind::parse(d)?), data_dir()),
                (None, Some(b)) => {
                    let kind = match b.as_str() {
                        "resnet50" => BackboneKind::ResNet50,
                        "efficientnetv2l" => BackboneKind::EfficientNetV2L,
                        other => return Err(config_err(format!("unknown backbone `{other}`"))),
                    };
                    (weights_file_name(kind).expect("pretrained backbone"), weights_dir())
                }
                _ => return Err(config_err("give exactly one of --dataset and --backbone".into())),
            };
            let dest = a.out.unwrap_or(dir).join(file);
            let digest = download(&join_url(&a.base_url, file), &dest, a.sha256.as_deref())?;
            println!("{}  {}", digest, dest.display());
        }
        Command::Train(a) => {
            let spec = build_spec(&a)?;
            let record = run_experiment(&spec)?;
            let dir = spec.output_dir.join(&record.run_id);
            println!("run {} completed: {}", record.run_id, dir.display());
            for r in &record.reports {
                println!(
                    "  {:<16} loss {:.4}  acc {:.4}  precision {:.4}  auc {:.4}  recall {:.4}",
                    r.aggregation_mode.as_str(),
                    r.loss,
                    r.accuracy,
                    r.precision,
                    r.auc,
                    r.recall
                );
            }
        }
        Command::Evaluate { run } => {
            let (record, loss) = reevaluate(&run)?;
            let stored = record.test_loss.ok_or_else(|| config_err("run has no stored test loss".into()))?;
            println!("stored test loss    {stored:.6}");
            println!("recomputed test loss {loss:.6}");
            println!("difference          {:.2e}", (loss - stored).abs());
        }
        Command::Report(a) => {
            let records = load_all(&a.runs)?;
            let doc = results_document(&records, TableFormat::parse(&a.format)?, aggregation(&a.mode)?)?;
            write_doc(&doc, a.out.as_deref())?;
        }
        Command::Compare(a) => {
            let records = load_all(&a.runs)?;
            let doc = comparison_document(&records, TableFormat::parse(&a.format)?, aggregation(&a.mode)?);
            write_doc(&doc, a.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
