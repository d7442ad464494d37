//! One run end to end: a `RunConfig` in, an artifact tree out. Every
//! byte written here is a pure function of the config — wall-clock,
//! host names and other run-local detail belong to the caller's
//! sidecar log, never to these files.
//!
//! Artifact layout under `out/`:
//!
//! ```text
//! run.cfg                      canonical config echo
//! dataset.pvdc                 the generated benchmark
//! methods/<name>/condensed.pvsc    condensed methods
//! methods/<name>/insertions.csv
//! methods/<name>/loss-trace.csv
//! methods/<name>/frames/*.ppm
//! methods/<name>/selection.csv     coreset methods
//! report/summary.csv           one row per method × architecture
//! report/class-frames.csv      retained frames per (method, class)
//! report/table.txt             the summary merged into one text table
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::{self, CoresetSelection};
use crate::bytes;
use crate::condenser::{self, CondenseConfig, CondenseOutput, InsertionEvent};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, MethodArm};
use crate::models::{Architecture, ModelSpec};
use crate::videogen::{self, Video, VideoDataset};

pub const CONFIG_ECHO: &str = "run.cfg";
pub const DATASET_FILE: &str = "dataset.pvdc";
pub const CONDENSED_FILE: &str = "condensed.pvsc";
pub const INSERTIONS_FILE: &str = "insertions.csv";
pub const LOSS_TRACE_FILE: &str = "loss-trace.csv";
pub const FRAMES_DIR: &str = "frames";
pub const SELECTION_FILE: &str = "selection.csv";
pub const SUMMARY_FILE: &str = "report/summary.csv";
pub const CLASS_FRAMES_FILE: &str = "report/class-frames.csv";
pub const TABLE_FILE: &str = "report/table.txt";

pub fn method_dir(out: &Path, method: &str) -> PathBuf {
    out.join("methods").join(method)
}

/// The benchmark a config describes; generation is seeded from the
/// global seed, so this is the same dataset in every command.
pub fn generate_dataset(cfg: &RunConfig) -> Result<VideoDataset> {
    videogen::generate(
        &cfg.dataset.programs,
        cfg.dataset.train_per_class,
        cfg.dataset.test_per_class,
        cfg.dataset.geometry,
        cfg.seed,
    )
}

/// The conv3d-micro matching network the condenser differentiates
/// through (evaluation networks are the eval protocol's business).
pub fn matching_spec(cfg: &RunConfig) -> Result<ModelSpec> {
    ModelSpec::new(
        Architecture::Conv3dMicro,
        cfg.matching_widths,
        cfg.dataset.programs.len(),
        cfg.dataset.geometry,
    )
}

/// Methods that run the condenser, i.e. `prism` or one of its
/// single-knob ablation variants.
pub fn is_condensed_method(method: &str) -> bool {
    method == "prism" || is_ablation_method(method)
}

pub fn is_ablation_method(method: &str) -> bool {
    matches!(
        method,
        "no-insertion"
            | "random-position"
            | "l2-distance"
            | "no-warmup"
            | "no-cooldown"
            | "chain-rule-candidates"
            | "persist-theta"
            | "flip-real"
    )
}

/// The condenser configuration a method runs with: `prism` is the
/// config's own; ablation tags are single-knob variants of it (which
/// requires the config to be full-PRISM shaped).
pub fn condense_recipe(cfg: &RunConfig, method: &str) -> Result<Option<CondenseConfig>> {
    if method == "prism" {
        return Ok(Some(cfg.condense.clone()));
    }
    if !is_ablation_method(method) {
        return Ok(None);
    }
    let matrix = baselines::ablation_matrix(&cfg.condense)?;
    let recipe = matrix
        .into_iter()
        .find(|(tag, _)| *tag == method)
        .map(|(_, recipe)| recipe)
        .expect("every ablation method has a matrix entry");
    Ok(Some(recipe))
}

/// What `build_method` produced besides the evaluation arm: the
/// artifacts specific to how the training set came about.
#[derive(Debug)]
pub enum MethodDetail {
    Condensed(CondenseOutput),
    Coreset(CoresetSelection),
    WholeDataset,
}

#[derive(Debug)]
pub struct MethodBuild {
    pub arm: MethodArm,
    pub detail: MethodDetail,
}

/// Produce one method's training set (and its side artifacts) from the
/// dataset. Pure given (config, dataset).
pub fn build_method(cfg: &RunConfig, dataset: &VideoDataset, method: &str) -> Result<MethodBuild> {
    let classes = dataset.classes();
    let geom = dataset.geometry;
    if let Some(recipe) = condense_recipe(cfg, method)? {
        let spec = matching_spec(cfg)?;
        let output = condenser::condense(&recipe, dataset, &spec)?;
        return Ok(MethodBuild {
            arm: MethodArm::condensed(method, &output.videos, classes, &geom)?,
            detail: MethodDetail::Condensed(output),
        });
    }
    let vpc = cfg.condense.vpc;
    match method {
        "random" => {
            let sel = baselines::random_coreset(dataset, vpc, cfg.seed)?;
            coreset_build(method, sel, dataset)
        }
        "herding" => {
            let features = baselines::selection_features(dataset, cfg.seed)?;
            let sel = baselines::herding_coreset(dataset, vpc, &features)?;
            coreset_build(method, sel, dataset)
        }
        "k-center" => {
            let features = baselines::selection_features(dataset, cfg.seed)?;
            let sel = baselines::kcenter_coreset(dataset, vpc, &features, cfg.seed)?;
            coreset_build(method, sel, dataset)
        }
        "whole-dataset" => {
            let train: Vec<Video> = dataset.train.iter().flatten().cloned().collect();
            Ok(MethodBuild {
                arm: MethodArm::dense(method, train, classes, &geom)?,
                detail: MethodDetail::WholeDataset,
            })
        }
        other => Err(Error::InvalidConfig(format!(
            "methods: unknown method '{other}'"
        ))),
    }
}

fn coreset_build(
    method: &str,
    sel: CoresetSelection,
    dataset: &VideoDataset,
) -> Result<MethodBuild> {
    Ok(MethodBuild {
        arm: MethodArm::dense(
            method,
            sel.videos(dataset)?,
            dataset.classes(),
            &dataset.geometry,
        )?,
        detail: MethodDetail::Coreset(sel),
    })
}

// ───────────────────────────── artifacts ─────────────────────────────

pub fn insertion_csv(events: &[InsertionEvent]) -> String {
    let mut s =
        String::from("iteration,class,video,inserted,left-key,right-key,cos-left,cos-right\n");
    for e in events {
        writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6}",
            e.iteration, e.class, e.video, e.inserted, e.left_key, e.right_key, e.cos_left,
            e.cos_right
        )
        .expect("writing to a String cannot fail");
    }
    s
}

pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,matching-loss\n");
    for (i, loss) in trace.iter().enumerate() {
        // {:?} prints the shortest f64 form that parses back exactly.
        writeln!(s, "{i},{loss:?}").expect("writing to a String cannot fail");
    }
    s
}

/// Write one method's artifact directory.
pub fn write_method_artifacts(
    dir: &Path,
    build: &MethodBuild,
    dataset: &VideoDataset,
) -> Result<()> {
    match &build.detail {
        MethodDetail::Condensed(output) => {
            condenser::save_condensed(
                &output.videos,
                &dataset.geometry,
                dir.join(CONDENSED_FILE),
            )?;
            bytes::write_file(&dir.join(INSERTIONS_FILE), insertion_csv(&output.events).as_bytes())?;
            bytes::write_file(&dir.join(LOSS_TRACE_FILE), loss_trace_csv(&output.loss_trace).as_bytes())?;
            eval::export_frames_ppm(&output.videos, &dataset.geometry, &dir.join(FRAMES_DIR))?;
        }
        MethodDetail::Coreset(sel) => {
            bytes::write_file(&dir.join(SELECTION_FILE), sel.to_csv().as_bytes())?;
        }
        MethodDetail::WholeDataset => {}
    }
    Ok(())
}

/// The summary and histogram CSVs merged into one aligned text table.
pub fn merged_table(report: &EvalReport) -> String {
    let mut out = String::new();
    for (title, csv) in [
        ("evaluation summary", report.summary_csv.as_str()),
        ("retained frames per class", report.class_frames_csv.as_str()),
    ] {
        let rows: Vec<Vec<&str>> = csv
            .lines()
            .map(|line| line.split(',').collect())
            .collect();
        let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
        let width = |c: usize| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.len())
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..columns).map(width).collect();
        writeln!(out, "# {title}").expect("writing to a String cannot fail");
        for row in &rows {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    line.push_str("  ");
                }
                line.push_str(&format!("{cell:>w$}", w = widths[c]));
            }
            writeln!(out, "{}", line.trim_end()).expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub struct RunArtifacts {
    pub dataset: VideoDataset,
    pub arms: Vec<MethodArm>,
    pub report: EvalReport,
}

/// The whole pipeline: generate, condense/select per method, evaluate,
/// and write the artifact tree. `jobs` caps worker threads; outputs are
/// byte-identical at any job count.
pub fn run_all(cfg: &RunConfig, jobs: usize) -> Result<RunArtifacts> {
    cfg.validate()?;
    let out = cfg.out.as_path();
    let dataset = generate_dataset(cfg)?;
    cfg.save(out.join(CONFIG_ECHO))?;
    videogen::save(&dataset, out.join(DATASET_FILE))?;

    let builds = crate::par::parallel_map(jobs, cfg.methods.len(), |i| {
        build_method(cfg, &dataset, &cfg.methods[i])
    })?;
    let mut arms = Vec::with_capacity(builds.len());
    for (method, build) in cfg.methods.iter().zip(&builds) {
        write_method_artifacts(&method_dir(out, method), build, &dataset)?;
    }
    for build in builds {
        arms.push(build.arm);
    }

    let report = eval::full_report_jobs(&arms, &dataset, &cfg.eval, jobs)?;
    bytes::write_file(&out.join(SUMMARY_FILE), report.summary_csv.as_bytes())?;
    bytes::write_file(&out.join(CLASS_FRAMES_FILE), report.class_frames_csv.as_bytes())?;
    bytes::write_file(&out.join(TABLE_FILE), merged_table(&report).as_bytes())?;

    Ok(RunArtifacts {
        dataset,
        arms,
        report,
    })
}
