//! `prism` — seeded, idempotent runs of the condensation pipeline.
//!
//! Commands compose through the config's output directory: `gen-data`
//! writes the dataset there, `condense`/`ablate` add condensed videos,
//! `baseline` adds coreset selections, `eval` trains and writes the
//! report CSVs, `report` merges them into one table. Artifact bytes are
//! pure functions of the configuration; wall-clock timestamps are
//! confined to the `run.log` sidecar.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric abort, 4 missing
//! artifact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prism_core::condenser::load_condensed;
use prism_core::config::RunConfig;
use prism_core::error::Error;
use prism_core::eval::{full_report_jobs, EvalReport, MethodArm};
use prism_core::pipeline::{self, MethodDetail};
use prism_core::videogen::{self, VideoDataset};

#[derive(Parser)]
#[command(
    name = "prism",
    about = "Video dataset condensation on the MovingShapes benchmark",
    version
)]
struct Cli {
    /// Run configuration file (omitted: the built-in default run).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Comma-separated method filter for ablate / baseline / eval.
    #[arg(long, global = true, value_name = "METHODS")]
    only: Option<String>,

    /// Override the evaluation repeat count.
    #[arg(long, global = true)]
    repeats: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark dataset (PVDC container).
    GenData,
    /// Condense with the config's settings (the `prism` method).
    Condense,
    /// Run the ablation matrix: base plus single-knob variants.
    Ablate,
    /// Emit the coreset baseline selections.
    Baseline,
    /// Train and score the configured methods; write report CSVs.
    Eval,
    /// Merge the report CSVs into one aligned text table.
    Report,
    /// Print the effective configuration in canonical form.
    ShowConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PRISM_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// The spec'd exit contract. Everything else (I/O trouble past the
/// artifact checks, internal invariants) reports as 1.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ConfigParse { .. } | Error::InvalidConfig(_) => 2,
        Error::NumericAbort { .. } | Error::NonFinite { .. } => 3,
        Error::MissingArtifact(_) => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = effective_config(cli)?;
    match cli.command {
        Command::GenData => gen_data(cli, &cfg),
        Command::Condense => condense(cli, &cfg),
        Command::Ablate => ablate(cli, &cfg),
        Command::Baseline => baseline(cli, &cfg),
        Command::Eval => eval(cli, &cfg),
        Command::Report => report(cli, &cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::MissingArtifact(path.display().to_string()));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default_run(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.condense.seed = seed;
        cfg.eval.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(repeats) = cli.repeats {
        cfg.eval.repeats = repeats;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The `--only` filter applied to `methods`, preserving order. Names
/// must be drawn from `methods`; anything else is a config error.
fn filtered<'a>(only: &Option<String>, methods: &[&'a str]) -> Result<Vec<&'a str>, Error> {
    let Some(only) = only else {
        return Ok(methods.to_vec());
    };
    let wanted: Vec<&str> = only
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    for w in &wanted {
        if !methods.contains(w) {
            return Err(Error::InvalidConfig(format!(
                "--only: '{}' is not one of {}",
                w,
                methods.join(", ")
            )));
        }
    }
    Ok(methods.iter().copied().filter(|m| wanted.contains(m)).collect())
}

/// Wall-clock lines live here and nowhere else.
fn sidecar(out: &Path, line: &str) {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let entry = format!("{secs} {line}\n");
    if std::fs::create_dir_all(out).is_ok() {
        use std::io::Write as _;
        if let Ok(mut f) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out.join("run.log"))
        {
            let _ = f.write_all(entry.as_bytes());
        }
    }
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(pipeline::DATASET_FILE)
}

/// Load the generated dataset, insisting it exists and matches the
/// config's geometry (content staleness is the operator's business;
/// regenerating is one `gen-data` away).
fn load_dataset(cfg: &RunConfig) -> Result<VideoDataset, Error> {
    let path = dataset_path(cfg);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let dataset = videogen::load(&path)?;
    if dataset.geometry != cfg.dataset.geometry {
        return Err(Error::InvalidConfig(format!(
            "dataset {} has geometry {}, config says {}",
            path.display(),
            dataset.geometry,
            cfg.dataset.geometry
        )));
    }
    Ok(dataset)
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let dataset = pipeline::generate_dataset(cfg)?;
    let path = dataset_path(cfg);
    videogen::save(&dataset, &path)?;
    let bytes = std::fs::metadata(&path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .len();
    println!(
        "wrote {} — geometry {}, {} classes x ({} train + {} test), {} bytes",
        path.display(),
        dataset.geometry,
        dataset.classes(),
        dataset.train_per_class(),
        dataset.test_per_class(),
        bytes
    );
    sidecar(&cfg.out, &format!("gen-data seed={} ok", cfg.seed));
    let _ = cli;
    Ok(())
}

/// Condense one method and write its artifacts; returns the summary
/// line printed for it.
fn condense_one(cfg: &RunConfig, dataset: &VideoDataset, method: &str) -> Result<String, Error> {
    let build = pipeline::build_method(cfg, dataset, method)?;
    let dir = pipeline::method_dir(&cfg.out, method);
    pipeline::write_method_artifacts(&dir, &build, dataset)?;
    let storage = &build.arm.storage;
    let events = match &build.detail {
        MethodDetail::Condensed(out) => out.events.len(),
        _ => 0,
    };
    Ok(format!(
        "{method}: {} key frames, {} bytes (+{} index bytes), {} insertions -> {}",
        storage.frames,
        storage.bytes,
        storage.index_bytes,
        events,
        dir.display()
    ))
}

fn condense(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let dataset = load_dataset(cfg)?;
    println!("{}", condense_one(cfg, &dataset, "prism")?);
    sidecar(&cfg.out, &format!("condense seed={} ok", cfg.seed));
    let _ = cli;
    Ok(())
}

fn ablate(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let dataset = load_dataset(cfg)?;
    // Validate the base once up front so a bad config fails before any
    // long condensation starts.
    let matrix = prism_core::baselines::ablation_matrix(&cfg.condense)?;
    let variants: Vec<&str> = matrix
        .iter()
        .map(|(tag, _)| *tag)
        .filter(|t| *t != "base")
        .collect();
    let chosen = filtered(&cli.only, &variants)?;
    // The base always runs: every comparison is against it.
    let mut methods: Vec<&str> = vec!["prism"];
    methods.extend(chosen);
    let lines = prism_core::par::parallel_map(cli.jobs, methods.len(), |i| {
        condense_one(cfg, &dataset, methods[i])
    })?;
    for line in lines {
        println!("{line}");
    }
    sidecar(&cfg.out, &format!("ablate x{} seed={} ok", methods.len(), cfg.seed));
    Ok(())
}

fn baseline(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let dataset = load_dataset(cfg)?;
    let methods = filtered(&cli.only, &["random", "herding", "k-center"])?;
    for method in methods {
        let build = pipeline::build_method(cfg, &dataset, method)?;
        let dir = pipeline::method_dir(&cfg.out, method);
        pipeline::write_method_artifacts(&dir, &build, &dataset)?;
        let MethodDetail::Coreset(sel) = &build.detail else {
            unreachable!("baseline methods are coresets");
        };
        println!(
            "{method}: {} videos/class over '{}' features -> {}",
            cfg.condense.vpc,
            sel.feature_space,
            dir.join(pipeline::SELECTION_FILE).display()
        );
    }
    sidecar(&cfg.out, &format!("baseline seed={} ok", cfg.seed));
    Ok(())
}

/// Assemble the evaluation arm for one method: condensed methods come
/// from their PVSC artifact (exit 4 if absent), data-backed methods are
/// recomputed from the dataset, which they are pure functions of.
fn method_arm(cfg: &RunConfig, dataset: &VideoDataset, method: &str) -> Result<MethodArm, Error> {
    if pipeline::is_condensed_method(method) {
        let path = pipeline::method_dir(&cfg.out, method).join(pipeline::CONDENSED_FILE);
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let (videos, geometry) = load_condensed(&path)?;
        if geometry != dataset.geometry {
            return Err(Error::InvalidConfig(format!(
                "{} has geometry {}, dataset says {}",
                path.display(),
                geometry,
                dataset.geometry
            )));
        }
        return MethodArm::condensed(method, &videos, dataset.classes(), &geometry);
    }
    Ok(pipeline::build_method(cfg, dataset, method)?.arm)
}

fn eval(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let dataset = load_dataset(cfg)?;
    let methods: Vec<&str> = cfg.methods.iter().map(String::as_str).collect();
    let methods = filtered(&cli.only, &methods)?;
    let arms = methods
        .iter()
        .map(|m| method_arm(cfg, &dataset, m))
        .collect::<Result<Vec<_>, _>>()?;
    let report = full_report_jobs(&arms, &dataset, &cfg.eval, cli.jobs)?;
    write_report(cfg, &report)?;
    for cell in &report.cells {
        let runs: Vec<String> = cell.accuracies.iter().map(|a| format!("{a:.4}")).collect();
        println!(
            "{}/{}: runs [{}] mean {:.4} std {:.4}",
            cell.method,
            cell.architecture.id(),
            runs.join(", "),
            cell.mean(),
            cell.std()
        );
    }
    println!(
        "wrote {} and {}",
        cfg.out.join(pipeline::SUMMARY_FILE).display(),
        cfg.out.join(pipeline::CLASS_FRAMES_FILE).display()
    );
    sidecar(
        &cfg.out,
        &format!("eval x{} seed={} ok", cfg.eval.repeats, cfg.seed),
    );
    Ok(())
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<(), Error> {
    write_bytes(
        &cfg.out.join(pipeline::SUMMARY_FILE),
        report.summary_csv.as_bytes(),
    )?;
    write_bytes(
        &cfg.out.join(pipeline::CLASS_FRAMES_FILE),
        report.class_frames_csv.as_bytes(),
    )
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn report(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let mut csvs = Vec::new();
    for rel in [pipeline::SUMMARY_FILE, pipeline::CLASS_FRAMES_FILE] {
        let path = cfg.out.join(rel);
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        csvs.push(
            std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?,
        );
    }
    let report = EvalReport {
        cells: Vec::new(),
        summary_csv: csvs.remove(0),
        class_frames_csv: csvs.remove(0),
    };
    let table = pipeline::merged_table(&report);
    write_bytes(&cfg.out.join(pipeline::TABLE_FILE), table.as_bytes())?;
    print!("{table}");
    println!("wrote {}", cfg.out.join(pipeline::TABLE_FILE).display());
    sidecar(&cfg.out, "report ok");
    let _ = cli;
    Ok(())
}
