//! Command-line surface for the pricing pipeline: data generation,
//! labeling, training, prediction, evaluation, constraint projection, and
//! prior lookup.
//!
//! Every command is reproducible from its flags and seed. Failures exit
//! nonzero with a machine-readable JSON object on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use c3po_core::constraints::{clamp_redistribute, violation_report, ConstraintSet};
use c3po_core::datagen::{
    build_dataset_with_family, derive_subseed, read_dataset, write_dataset_csv,
    write_dataset_meta, ChoiceDataset, Family,
};
use c3po_core::metrics::{compute_metrics, EvalRecord, MetricsOptions};
use c3po_core::net::{
    load_checkpoint, save_checkpoint, train, Ablation, C3poConfig, C3poModel, TrainOptions,
};
use c3po_core::price_opt::{foc_residual, solve_logit_refined, solve_nonlinear, Bounds, CostVector, PriceLabel};
use c3po_core::priors::{classify, PriorProvider, PriorTable};
use c3po_core::ChoiceModelSpec;

/// Default output directory when `--out` is omitted.
const OUT_DIR_ENV: &str = "C3PO_OUT_DIR";

#[derive(Error, Debug)]
enum CliError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Choice(#[from] c3po_core::ChoiceError),
    #[error("{0}")]
    PriceOpt(#[from] c3po_core::price_opt::PriceOptError),
    #[error("{0}")]
    Constraint(#[from] c3po_core::constraints::ConstraintError),
    #[error("{0}")]
    Datagen(#[from] c3po_core::datagen::DatagenError),
    #[error("{0}")]
    Metrics(#[from] c3po_core::metrics::MetricsError),
    #[error("{0}")]
    Model(#[from] c3po_core::net::ModelError),
    #[error("{0}")]
    Train(#[from] c3po_core::net::TrainError),
    #[error("{0}")]
    Prior(#[from] c3po_core::priors::PriorError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Choice(_) => "choice_model",
            CliError::PriceOpt(_) => "price_opt",
            CliError::Constraint(_) => "constraint",
            CliError::Datagen(_) => "datagen",
            CliError::Metrics(_) => "metrics",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
            CliError::Prior(_) => "prior",
            CliError::Invalid(_) => "invalid_argument",
        }
    }
}

#[derive(Parser)]
#[command(name = "c3po", version, about = "Discrete-choice pricing pipeline")]
struct Cli {
    /// Write a replay manifest (tool version, command, seeds) to this path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy, Default)]
struct AblationFlags {
    /// Disable in-context conditioning entirely.
    #[arg(long)]
    icl_off: bool,
    /// Train with only the supervised price loss.
    #[arg(long)]
    imitation_only: bool,
    /// Drop the elasticity prior channel and loss.
    #[arg(long)]
    prior_off: bool,
    /// Cap in-context examples at 100.
    #[arg(long)]
    simple_icl: bool,
}

impl From<AblationFlags> for Ablation {
    fn from(f: AblationFlags) -> Ablation {
        Ablation {
            icl_off: f.icl_off,
            imitation_only: f.imitation_only,
            prior_off: f.prior_off,
            simple_icl: f.simple_icl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulated choice datasets (CSV + meta JSON per dataset).
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n_datasets: usize,
        /// Output directory; falls back to $C3PO_OUT_DIR, then "./out".
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to one demand family (mnl, nested_logit, mixed_mnl,
        /// iso_elastic, linear).
        #[arg(long)]
        family: Option<String>,
    },
    /// Compute the optimal-price label for a demand spec JSON.
    Label {
        #[arg(long)]
        spec: PathBuf,
        /// Write the label JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        lower: f64,
        #[arg(long, default_value_t = 5.0)]
        upper: f64,
    },
    /// Check first-order-condition residuals of a label against its spec.
    FocCheck {
        #[arg(long)]
        spec: PathBuf,
        /// Label JSON produced by `label`.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Train the pricing network on a directory of generated datasets.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Passes over the dataset list.
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Model config JSON; defaults to the desk-scale config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Constraint set JSON applied as a soft penalty (CONSTRAINT-ON).
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Write the per-step loss trace to this path as JSON.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Emit price recommendations for one dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV (its meta JSON must sit next to it).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Project predictions onto this constraint set (CONSTRAINT-ON).
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Score evaluation records (JSON array) and print metrics.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Project price vectors onto a constraint set and report violations.
    Project {
        /// JSON array of price vectors.
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Look up the elasticity prior for a category.
    Prior {
        #[arg(long)]
        category: String,
        /// Prior table JSON; defaults to the built-in table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    args: Vec<String>,
}

fn write_manifest(path: &Path) -> Result<(), CliError> {
    let m = Manifest {
        tool: "c3po",
        version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_family(s: &str) -> Result<Family, CliError> {
    match s {
        "mnl" => Ok(Family::Mnl),
        "nested_logit" => Ok(Family::NestedLogit),
        "mixed_mnl" => Ok(Family::MixedMnl),
        "iso_elastic" => Ok(Family::IsoElastic),
        "linear" => Ok(Family::Linear),
        other => Err(CliError::Invalid(format!("unknown family '{other}'"))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Floats are formatted with `{:?}` everywhere prices leave the process, so
/// a round trip through text is bit-exact.
fn write_price_csv(path: &Path, k: usize, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut text = String::new();
    let header: Vec<String> = (1..=k).map(|i| format!("p_{i}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_dataset_next_to(csv: &Path) -> Result<ChoiceDataset, CliError> {
    let meta = csv.with_extension("").with_extension("meta.json");
    Ok(read_dataset(csv, &meta)?)
}

fn cmd_gen_data(
    seed: u64,
    n_datasets: usize,
    out: Option<PathBuf>,
    family: Option<String>,
) -> Result<(), CliError> {
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir)?;
    let family = family.as_deref().map(parse_family).transpose()?;
    for i in 0..n_datasets {
        let ds = build_dataset_with_family(derive_subseed(seed, i as u64), family)?;
        let csv = dir.join(format!("dataset_{i:05}.csv"));
        write_dataset_csv(&ds, &csv)?;
        write_dataset_meta(&ds, &dir.join(format!("dataset_{i:05}.meta.json")))?;
    }
    println!(
        "{}",
        serde_json::json!({ "datasets": n_datasets, "dir": dir })
    );
    Ok(())
}

fn cmd_label(spec: &Path, out: Option<PathBuf>, lower: f64, upper: f64) -> Result<(), CliError> {
    let spec: ChoiceModelSpec = read_json(spec)?;
    let label = match &spec {
        ChoiceModelSpec::Mnl { .. } | ChoiceModelSpec::NestedLogit { .. } => {
            solve_logit_refined(&spec)?
        }
        _ => {
            let k = spec.k();
            let bounds = Bounds {
                lower: vec![lower; k],
                upper: vec![upper; k],
            };
            solve_nonlinear(&spec, &bounds, None)?
        }
    };
    let text = serde_json::to_string_pretty(&label)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_foc_check(spec: &Path, labels: &Path) -> Result<(), CliError> {
    let spec: ChoiceModelSpec = read_json(spec)?;
    let label: PriceLabel = read_json(labels)?;
    let res = foc_residual(&spec, &label.price, &CostVector::zero(spec.k()))?;
    let max = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    println!(
        "{}",
        serde_json::json!({ "max_residual": max, "residuals": res })
    );
    Ok(())
}

fn load_datasets(dir: &Path) -> Result<Vec<ChoiceDataset>, CliError> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(CliError::Invalid(format!(
            "no dataset CSVs found in {}",
            dir.display()
        )));
    }
    csvs.iter().map(|c| load_dataset_next_to(c)).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    out: &Path,
    seed: u64,
    epochs: usize,
    config: Option<PathBuf>,
    constraints: Option<PathBuf>,
    trace_out: Option<PathBuf>,
    ablation: AblationFlags,
) -> Result<(), CliError> {
    let datasets = load_datasets(data)?;
    let mut cfg: C3poConfig = match config {
        Some(p) => read_json(&p)?,
        None => C3poConfig::desk_scale(),
    };
    cfg.seed = seed;
    let constraint: Option<ConstraintSet> = constraints.map(|p| read_json(&p)).transpose()?;
    let opts = TrainOptions {
        ablation: ablation.into(),
        constraint,
        snapshot_dir: out.parent().map(Path::to_path_buf),
    };
    let mut model = C3poModel::new(cfg);
    let mut sequence = Vec::with_capacity(datasets.len() * epochs.max(1));
    for _ in 0..epochs.max(1) {
        sequence.extend(datasets.iter().cloned());
    }
    let report = train(&mut model, &sequence, &opts)?;
    save_checkpoint(&model, out)?;
    if let Some(p) = trace_out {
        std::fs::write(p, serde_json::to_string(&report.loss_trace)?)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "steps": report.steps,
            "loss_first": report.loss_trace.first(),
            "loss_last": report.loss_trace.last(),
            "checkpoint": out,
            "parameters": model.param_count(),
        })
    );
    Ok(())
}

fn cmd_predict(
    model: &Path,
    data: &Path,
    out: Option<PathBuf>,
    constraints: Option<PathBuf>,
    ablation: AblationFlags,
) -> Result<(), CliError> {
    let model = load_checkpoint(model)?;
    let ds = load_dataset_next_to(data)?;
    let prior = ds.meta.elasticity_range;
    let preds = match constraints {
        Some(p) => {
            let cs: ConstraintSet = read_json(&p)?;
            model.predict_projected(&ds, prior, ablation.into(), &cs)?
        }
        None => model.predict(&ds, prior, ablation.into())?,
    };
    match out {
        Some(p) => write_price_csv(&p, ds.meta.k, &preds)?,
        None => {
            for row in &preds {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                println!("{}", cells.join(","));
            }
        }
    }
    Ok(())
}

fn cmd_eval(records: &Path, format: &str) -> Result<(), CliError> {
    let records: Vec<EvalRecord> = read_json(records)?;
    let report = compute_metrics(&records, MetricsOptions::default())?;
    let cell = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&report)?),
        "csv" => {
            println!("mae,pdr,pir,br");
            println!(
                "{:?},{},{},{:?}",
                report.mae,
                report.pdr.map_or("".into(), |x| format!("{x:?}")),
                report.pir.map_or("".into(), |x| format!("{x:?}")),
                report.br
            );
        }
        "table" => {
            println!("{:>8} {:>8} {:>8} {:>8}", "MAE", "PDR", "PIR", "BR");
            println!(
                "{:>8.4} {:>8} {:>8} {:>8.4}",
                report.mae,
                cell(report.pdr),
                cell(report.pir),
                report.br
            );
        }
        other => {
            return Err(CliError::Invalid(format!(
                "unknown format '{other}' (expected json|csv|table)"
            )))
        }
    }
    Ok(())
}

fn cmd_project(prices: &Path, constraints: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let batch: Vec<Vec<f64>> = read_json(prices)?;
    let cs: ConstraintSet = read_json(constraints)?;
    let before = violation_report(&batch, &cs)?;
    let projected: Vec<Vec<f64>> = batch
        .iter()
        .map(|p| clamp_redistribute(p, &cs))
        .collect::<Result<_, _>>()?;
    let after = violation_report(&projected, &cs)?;
    let result = serde_json::json!({
        "projected": projected,
        "violations_before": before,
        "violations_after": after,
    });
    let text = serde_json::to_string_pretty(&result)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_prior(category: &str, table: Option<PathBuf>) -> Result<(), CliError> {
    let table = match table {
        Some(p) => PriorTable::from_json(&std::fs::read_to_string(p)?)?,
        None => PriorTable::builtin(),
    };
    let prior = table.lookup(category);
    println!(
        "{}",
        serde_json::json!({
            "prior": prior,
            "class": classify(prior.low, prior.high),
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(m) = &cli.manifest {
        write_manifest(m)?;
    }
    match cli.command {
        Command::GenData {
            seed,
            n_datasets,
            out,
            family,
        } => cmd_gen_data(seed, n_datasets, out, family),
        Command::Label {
            spec,
            out,
            lower,
            upper,
        } => cmd_label(&spec, out, lower, upper),
        Command::FocCheck { spec, labels } => cmd_foc_check(&spec, &labels),
        Command::Train {
            data,
            out,
            seed,
            epochs,
            config,
            constraints,
            trace_out,
            ablation,
        } => cmd_train(
            &data, &out, seed, epochs, config, constraints, trace_out, ablation,
        ),
        Command::Predict {
            model,
            data,
            out,
            constraints,
            ablation,
        } => cmd_predict(&model, &data, out, constraints, ablation),
        Command::Eval { records, format } => cmd_eval(&records, &format),
        Command::Project {
            prices,
            constraints,
            out,
        } => cmd_project(&prices, &constraints, out),
        Command::Prior { category, table } => cmd_prior(&category, table),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "code": "usage", "message": e.to_string() }
                })
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "code": e.code(), "message": e.to_string() }
                })
            );
            ExitCode::FAILURE
        }
    }
}
