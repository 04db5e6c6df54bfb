//! Subcommand implementations.

use std::path::{Path, PathBuf};

use gditd::data::{load_csv, make_blobs, save_csv, BlobSpec, CsvSchema, DatasetManifest, TabularDataset};
use gditd::metrics::{ConfigEcho, EvalReport};
use gditd::model::{Checkpoint, Method};
use gditd::pipeline::{ablation_variants, cross_validate, evaluate_checkpoint, terms_label, CvOutcome, Experiment, RunReport};
use gditd::trainer::TrainConfig;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::output::{curves_csv, losses_csv, metric_cells, OutputDir, RunManifest, METRIC_COLUMNS};
use crate::{AblateArgs, BenchmarkArgs, BlobsArgs, DataArgs, EvaluateArgs, TrainArgs, EXIT_NUMERIC, EXIT_USAGE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] gditd::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(gditd::Error::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct LoadedData {
    dataset: TabularDataset,
    data_path: PathBuf,
    manifest_path: Option<PathBuf>,
}

fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let (data_path, schema) = match &args.manifest {
        Some(m) => {
            let manifest = DatasetManifest::read(m)?;
            let path = args.data.clone().unwrap_or_else(|| manifest.data_path(m));
            (path, manifest.schema)
        }
        None => {
            let path = args
                .data
                .clone()
                .ok_or_else(|| CliError::Usage("either --data or --manifest is required".into()))?;
            let schema = CsvSchema {
                label_column: args.label_column.clone(),
                ood_class: args.ood_class.clone(),
                minority_class: args.minority_class.clone(),
            };
            (path, schema)
        }
    };
    Ok(LoadedData {
        dataset: load_csv(&data_path, &schema)?,
        data_path,
        manifest_path: args.manifest.clone(),
    })
}

fn check_mdsr(mdsr: Option<f64>) -> Result<()> {
    match mdsr {
        Some(m) if !(m > 0.0 && m <= 1.0) => Err(CliError::Usage(format!("--mdsr must lie in (0, 1], got {m}"))),
        _ => Ok(()),
    }
}

fn check_common(config: &TrainConfig, folds: usize) -> Result<()> {
    if config.max_epochs == 0 {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    if folds < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {folds}")));
    }
    config.validate()?;
    Ok(())
}

fn manifest_for(command: &str, config: serde_json::Value, out: &Path, data: &LoadedData, seed: u64) -> RunManifest {
    let mut m = RunManifest::new(command, config, out);
    m.data = Some(data.data_path.clone());
    m.dataset_manifest = data.manifest_path.clone();
    m.seed = Some(seed);
    m
}

fn write_run_outputs(dir: &mut OutputDir, outcome: &CvOutcome) -> Result<()> {
    dir.write_json("report.json", &outcome.run_report())?;
    let histories: Vec<_> = outcome.folds.iter().map(|f| (f.fold, &f.history)).collect();
    dir.write("losses.csv", losses_csv(&histories).as_bytes())?;
    let first = &outcome.folds[0];
    if let Some((roc, pr)) = curves_csv(&first.samples) {
        dir.write("roc.csv", roc.as_bytes())?;
        dir.write("pr.csv", pr.as_bytes())?;
    }
    dir.write("model.json", first.checkpoint.to_json()?.as_bytes())?;
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    check_mdsr(args.mdsr)?;
    let config = args.config.train_config();
    check_common(&config, args.config.folds)?;
    let data = load_data(&args.data)?;
    let exp = Experiment::new(args.method, config.clone(), args.mdsr, args.config.folds);
    let outcome = cross_validate(&data.dataset, &exp)?;

    let mut dir = OutputDir::create(&args.config.out)?;
    write_run_outputs(&mut dir, &outcome)?;
    let mut table = format!("method,mdsr,status,{}\n", METRIC_COLUMNS.join(","));
    table.push_str(&table_row(args.method, args.mdsr, Some(&outcome.mean)));
    dir.write("table.csv", table.as_bytes())?;
    let snapshot = json!({ "method": args.method, "mdsr": args.mdsr, "folds": args.config.folds, "train": config });
    dir.finish(manifest_for("train", snapshot, &args.config.out, &data, config.seed))?;
    print_summary(&outcome.mean);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "id_accuracy {:.4}  minority_aupr {}  ood_tnr@85tpr {}  ood_auroc {}  ood_aupr {}",
        r.id_accuracy,
        show(r.minority_aupr),
        show(r.ood_tnr_at_85tpr),
        show(r.ood_auroc),
        show(r.ood_aupr)
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    let echo = ConfigEcho {
        method: ckpt.model.method().name().to_string(),
        beta_mode: (ckpt.model.method() == Method::Gditd).then(|| ckpt.config.beta_mode.name().to_string()),
        mdsr: None,
        seed: ckpt.config.seed,
        epochs: ckpt.config.max_epochs,
        folds: None,
        fold: None,
        loss_terms: (ckpt.model.method() == Method::Gditd).then(|| terms_label(&ckpt.config.terms)),
    };
    let (report, samples) = evaluate_checkpoint(&ckpt, &data.dataset, echo)?;
    let mut dir = OutputDir::create(&args.out)?;
    dir.write_json("report.json", &report)?;
    if let Some((roc, pr)) = curves_csv(&samples) {
        dir.write("roc.csv", roc.as_bytes())?;
        dir.write("pr.csv", pr.as_bytes())?;
    }
    let snapshot = json!({ "checkpoint": args.checkpoint });
    dir.finish(manifest_for("evaluate", snapshot, &args.out, &data, ckpt.config.seed))?;
    print_summary(&report);
    Ok(())
}

fn table_row(method: Method, mdsr: Option<f64>, report: Option<&EvalReport>) -> String {
    let mdsr = mdsr.map(|m| m.to_string()).unwrap_or_default();
    match report {
        Some(r) => format!("{method},{mdsr},ok,{}\n", metric_cells(r).join(",")),
        None => format!("{method},{mdsr},failed,,,,,\n"),
    }
}

#[derive(Debug, Serialize)]
struct BenchmarkCell {
    method: Method,
    mdsr: f64,
    status: &'static str,
    error: Option<String>,
    report: Option<RunReport>,
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    if args.methods.is_empty() || args.mdsr.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one method and one MDSR value".into()));
    }
    for &m in &args.mdsr {
        check_mdsr(Some(m))?;
    }
    let config = args.config.train_config();
    check_common(&config, args.config.folds)?;
    let data = load_data(&args.data)?;

    let grid: Vec<(Method, f64)> = args
        .methods
        .iter()
        .flat_map(|&m| args.mdsr.iter().map(move |&r| (m, r)))
        .collect();
    let cells: Vec<BenchmarkCell> = grid
        .par_iter()
        .map(|&(method, mdsr)| {
            let exp = Experiment::new(method, config.clone(), Some(mdsr), args.config.folds);
            match cross_validate(&data.dataset, &exp) {
                Ok(out) => BenchmarkCell {
                    method,
                    mdsr,
                    status: "ok",
                    error: None,
                    report: Some(out.run_report()),
                },
                Err(e) => BenchmarkCell {
                    method,
                    mdsr,
                    status: "failed",
                    error: Some(e.to_string()),
                    report: None,
                },
            }
        })
        .collect();

    let mut table = format!("method,mdsr,status,{}\n", METRIC_COLUMNS.join(","));
    for c in &cells {
        table.push_str(&table_row(c.method, Some(c.mdsr), c.report.as_ref().map(|r| &r.mean)));
        if let Some(e) = &c.error {
            eprintln!("warning: {} at MDSR {} failed: {e}", c.method, c.mdsr);
        }
    }
    let mut dir = OutputDir::create(&args.config.out)?;
    dir.write_json("report.json", &cells)?;
    dir.write("table.csv", table.as_bytes())?;
    let snapshot = json!({ "methods": args.methods, "mdsr": args.mdsr, "folds": args.config.folds, "train": config });
    dir.finish(manifest_for("benchmark", snapshot, &args.config.out, &data, config.seed))?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: String,
    terms: String,
    status: &'static str,
    error: Option<String>,
    report: Option<RunReport>,
}

pub const ABLATION_COLUMNS: [&str; 5] = ["id_accuracy", "ood_aupr", "minority_aupr", "ood_auroc", "ood_tnr_at_85tpr"];

pub fn ablate(args: &AblateArgs) -> Result<()> {
    check_mdsr(args.mdsr)?;
    let base = args.config.train_config();
    check_common(&base, args.config.folds)?;
    let data = load_data(&args.data)?;

    let rows: Vec<AblationRow> = ablation_variants()
        .into_par_iter()
        .map(|(variant, terms)| {
            let config = TrainConfig { terms, ..base.clone() };
            let exp = Experiment::new(Method::Gditd, config, args.mdsr, args.config.folds);
            let (status, error, report) = match cross_validate(&data.dataset, &exp) {
                Ok(out) => ("ok", None, Some(out.run_report())),
                Err(e) => ("failed", Some(e.to_string()), None),
            };
            AblationRow {
                variant,
                terms: terms_label(&terms),
                status,
                error,
                report,
            }
        })
        .collect();

    let mut table = format!("variant,terms,status,{}\n", ABLATION_COLUMNS.join(","));
    for row in &rows {
        let cells = match &row.report {
            Some(r) => {
                let m = &r.mean;
                [Some(m.id_accuracy), m.ood_aupr, m.minority_aupr, m.ood_auroc, m.ood_tnr_at_85tpr]
                    .map(crate::output::cell)
                    .join(",")
            }
            None => ",,,,".to_string(),
        };
        table.push_str(&format!("{},{},{},{cells}\n", row.variant, row.terms, row.status));
        if let Some(e) = &row.error {
            eprintln!("warning: variant {} failed: {e}", row.variant);
        }
    }
    let mut dir = OutputDir::create(&args.config.out)?;
    dir.write_json("report.json", &rows)?;
    dir.write("table.csv", table.as_bytes())?;
    let snapshot = json!({ "mdsr": args.mdsr, "folds": args.config.folds, "train": base });
    dir.finish(manifest_for("ablate", snapshot, &args.config.out, &data, base.seed))?;
    print!("{table}");
    Ok(())
}

pub fn blobs(args: &BlobsArgs) -> Result<()> {
    let spec = BlobSpec {
        minority: args.minority,
        ..BlobSpec::new(args.classes, args.per_class, args.dim, args.separation, args.ood_offset, args.seed)
    };
    let ds = make_blobs(&spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_csv(&ds, &args.out, "label")?;
    let manifest = DatasetManifest {
        data: PathBuf::from(args.out.file_name().expect("output file has a name")),
        schema: CsvSchema {
            label_column: "label".into(),
            ood_class: ds.ood_class.map(|c| ds.class_names[c].clone()),
            minority_class: ds.minority_class.map(|c| ds.class_names[c].clone()),
        },
    };
    let path = args.out.with_extension("json");
    let text = serde_json::to_string_pretty(&manifest).map_err(gditd::Error::from)?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    println!("wrote {} rows to {} ({})", ds.n_rows(), args.out.display(), path.display());
    Ok(())
}
