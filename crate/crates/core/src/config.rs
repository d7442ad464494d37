//! Declarative run configuration: a flat, line-oriented `key = value`
//! text format with `[section]` headers, hand-parsed so the on-disk
//! contract depends on nothing but this file. A run is a pure function
//! of one `RunConfig`; every random choice flows from its single global
//! seed through the documented counter streams, so per-section seeds do
//! not exist.
//!
//! Format rules: text from `#` to end of line is ignored; blank lines
//! are ignored; `[dataset]`, `[condense]`, `[eval]` open sections while
//! `seed`, `out` and `methods` live above the first header; scalar keys
//! may appear once, `program` repeats (one motion class per line).
//! Omitted keys keep the defaults of [`RunConfig::default_run`], except
//! the program list, which a file must state explicitly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::bytes;
use crate::condenser::{CondenseConfig, Criterion, InsertionMode, ThetaMode};
use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::geometry::Geometry;
use crate::models::Architecture;
use crate::videogen::{MotionLaw, MotionProgram, SpriteKind};

/// Every training-set recipe a run may evaluate. `prism` is the full
/// condenser; the next eight are its single-knob ablation variants; the
/// rest are the coreset and upper-bound baselines.
pub const METHODS: [&str; 13] = [
    "prism",
    "no-insertion",
    "random-position",
    "l2-distance",
    "no-warmup",
    "no-cooldown",
    "chain-rule-candidates",
    "persist-theta",
    "flip-real",
    "random",
    "herding",
    "k-center",
    "whole-dataset",
];

pub fn known_method(name: &str) -> bool {
    METHODS.contains(&name)
}

/// The generated benchmark: what to draw and how much of it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub geometry: Geometry,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub programs: Vec<MotionProgram>,
}

/// One complete, serializable run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub methods: Vec<String>,
    pub dataset: DatasetConfig,
    pub condense: CondenseConfig,
    /// Channel widths of the conv3d-micro matching network used inside
    /// the condenser (the evaluation widths live in `eval`).
    pub matching_widths: (usize, usize),
    pub eval: EvalProtocol,
}

impl RunConfig {
    /// The stock desk-scale run: default benchmark, full condenser,
    /// coreset baselines and the whole-dataset upper bound.
    pub fn default_run() -> Self {
        let seed = 2026;
        RunConfig {
            seed,
            out: PathBuf::from("runs/default"),
            methods: ["prism", "random", "herding", "k-center", "whole-dataset"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            dataset: DatasetConfig {
                geometry: Geometry::desk(),
                train_per_class: 64,
                test_per_class: 32,
                programs: crate::videogen::default_programs(),
            },
            condense: CondenseConfig {
                real_batch: 16,
                iterations: 800,
                check_period: 1,
                seed,
                ..CondenseConfig::default()
            },
            matching_widths: (2, 4),
            eval: EvalProtocol {
                repeats: 3,
                seed,
                ..EvalProtocol::default()
            },
        }
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        Parser::new().run(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let raw = bytes::read_file(path.as_ref())?;
        let text = String::from_utf8(raw).map_err(|_| {
            Error::InvalidConfig(format!(
                "config file {} is not UTF-8",
                path.as_ref().display()
            ))
        })?;
        RunConfig::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        bytes::write_file(path.as_ref(), self.to_text().as_bytes())
    }

    /// Semantic checks past line-level parsing. Field names in messages
    /// use the config-file spelling so diagnostics point at the file.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.methods.is_empty() {
            return bad("methods: at least one method is required".into());
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !known_method(m) {
                return bad(format!(
                    "methods: unknown method '{}' (known: {})",
                    m,
                    METHODS.join(", ")
                ));
            }
            if !seen.insert(m.as_str()) {
                return bad(format!("methods: '{}' listed twice", m));
            }
        }

        let ds = &self.dataset;
        ds.geometry.validate()?;
        if ds.train_per_class == 0 || ds.test_per_class == 0 {
            return bad("dataset: train-per-class and test-per-class must be >= 1".into());
        }
        if ds.programs.is_empty() {
            return bad("dataset.program: a run needs at least one motion program".into());
        }
        for (i, p) in ds.programs.iter().enumerate() {
            if p.class != i {
                return bad(format!(
                    "dataset.program: class ids must be 0,1,2,... in order; \
                     entry {} declares class {}",
                    i, p.class
                ));
            }
            if p.name.is_empty() || p.name.contains(|c: char| c.is_whitespace() || c == ',') {
                return bad(format!(
                    "dataset.program: name '{}' must be non-empty without spaces or commas",
                    p.name
                ));
            }
            if ds.programs[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("dataset.program: duplicate name '{}'", p.name));
            }
        }

        self.condense.validate()?;
        if self.matching_widths.0 == 0 || self.matching_widths.1 == 0 {
            return bad("condense.widths: channel widths must be positive".into());
        }
        if self.condense.real_batch > ds.train_per_class {
            return bad(format!(
                "condense.real-batch {} exceeds train-per-class {}",
                self.condense.real_batch, ds.train_per_class
            ));
        }
        let coresets = ["random", "herding", "k-center"];
        if self.methods.iter().any(|m| coresets.contains(&m.as_str()))
            && self.condense.vpc > ds.train_per_class
        {
            return bad(format!(
                "condense.vpc {} exceeds train-per-class {} (coreset methods select \
                 real videos without replacement)",
                self.condense.vpc, ds.train_per_class
            ));
        }
        self.eval.validate()?;

        // One-number reproducibility: the section seeds are not part of
        // the file format and must mirror the global seed.
        if self.condense.seed != self.seed || self.eval.seed != self.seed {
            return bad(format!(
                "section seeds ({}, {}) must equal the global seed {}",
                self.condense.seed, self.eval.seed, self.seed
            ));
        }
        Ok(())
    }

    /// Canonical text form; `parse` inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "out", self.out.display().to_string());
        kv(&mut s, "methods", self.methods.join(","));

        s.push_str("\n[dataset]\n");
        let g = self.dataset.geometry;
        kv(&mut s, "geometry", format!("{}x{}x{}x{}", g.t, g.h, g.w, g.c));
        kv(&mut s, "train-per-class", self.dataset.train_per_class.to_string());
        kv(&mut s, "test-per-class", self.dataset.test_per_class.to_string());
        for p in &self.dataset.programs {
            kv(&mut s, "program", program_text(p));
        }

        s.push_str("\n[condense]\n");
        let c = &self.condense;
        kv(&mut s, "vpc", c.vpc.to_string());
        kv(&mut s, "epsilon", format!("{:?}", c.epsilon));
        kv(&mut s, "learning-rate", format!("{:?}", c.learning_rate));
        kv(&mut s, "momentum", format!("{:?}", c.momentum));
        kv(&mut s, "real-batch", c.real_batch.to_string());
        kv(&mut s, "iterations", c.iterations.to_string());
        let mode = match c.insertion_mode {
            InsertionMode::GradientGuided => "gradient-guided",
            InsertionMode::RandomPosition => "random-position",
            InsertionMode::Disabled => "disabled",
        };
        kv(&mut s, "insertion-mode", mode.to_string());
        let crit = match c.criterion {
            Criterion::Cosine => "cosine",
            Criterion::L2 => "l2",
        };
        kv(&mut s, "criterion", crit.to_string());
        kv(&mut s, "l2-threshold", format!("{:?}", c.l2_threshold));
        let max_keys = if c.max_keys == usize::MAX {
            "unlimited".to_string()
        } else {
            c.max_keys.to_string()
        };
        kv(&mut s, "max-keys", max_keys);
        kv(&mut s, "warmup-fraction", format!("{:?}", c.warmup_fraction));
        kv(&mut s, "cooldown-fraction", format!("{:?}", c.cooldown_fraction));
        kv(&mut s, "check-period", c.check_period.to_string());
        let theta = match c.theta_mode {
            ThetaMode::FreshEachIteration => "fresh".to_string(),
            ThetaMode::PersistWithReset(n) => format!("persist:{n}"),
        };
        kv(&mut s, "theta-mode", theta);
        kv(&mut s, "chain-rule-candidates", c.chain_rule_candidates.to_string());
        kv(&mut s, "flip", c.flip.to_string());
        kv(
            &mut s,
            "widths",
            format!("{},{}", self.matching_widths.0, self.matching_widths.1),
        );

        s.push_str("\n[eval]\n");
        let e = &self.eval;
        kv(&mut s, "epochs", e.epochs.to_string());
        kv(&mut s, "learning-rate", format!("{:?}", e.learning_rate));
        kv(&mut s, "momentum", format!("{:?}", e.momentum));
        kv(&mut s, "batch", e.batch.to_string());
        kv(&mut s, "repeats", e.repeats.to_string());
        kv(&mut s, "flip", e.flip.to_string());
        kv(&mut s, "widths", format!("{},{}", e.widths.0, e.widths.1));
        let archs: Vec<&str> = e.architectures.iter().map(|a| a.id()).collect();
        kv(&mut s, "architectures", archs.join(","));
        s
    }
}

fn program_text(p: &MotionProgram) -> String {
    let sprite = match p.sprite {
        SpriteKind::Square => "square",
        SpriteKind::Disk => "disk",
    };
    let law = match &p.law {
        MotionLaw::LinearTranslate { vx, vy } => format!("linear vx={vx:?} vy={vy:?}"),
        MotionLaw::Bounce { vx, vy } => format!("bounce vx={vx:?} vy={vy:?}"),
        MotionLaw::Zigzag { vx, vy, period } => {
            format!("zigzag vx={vx:?} vy={vy:?} period={period}")
        }
        MotionLaw::CircularOrbit { radius, turns } => {
            format!("orbit radius={radius:?} turns={turns:?}")
        }
        MotionLaw::GrowShrink { swell } => format!("grow swell={swell:?}"),
        MotionLaw::HoldThenJump { hold_fraction } => {
            format!("hold-jump hold-fraction={hold_fraction:?}")
        }
    };
    format!("{} {} {} {}", p.class, p.name, sprite, law)
}

// ───────────────────────────── parsing ─────────────────────────────

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Dataset,
    Condense,
    Eval,
}

struct Parser {
    cfg: RunConfig,
    section: Section,
    seen: HashSet<(u8, String)>,
}

fn fail<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::ConfigParse {
        line,
        message: message.into(),
    })
}

impl Parser {
    fn new() -> Self {
        // Scalar keys default; the program list must be stated by the
        // file itself, so a config never inherits classes silently.
        let mut cfg = RunConfig::default_run();
        cfg.dataset.programs.clear();
        Parser {
            cfg,
            section: Section::Top,
            seen: HashSet::new(),
        }
    }

    fn run(mut self, text: &str) -> Result<RunConfig> {
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let Some(name) = header.strip_suffix(']') else {
                    return fail(n, format!("unterminated section header '{line}'"));
                };
                self.section = match name.trim() {
                    "dataset" => Section::Dataset,
                    "condense" => Section::Condense,
                    "eval" => Section::Eval,
                    other => {
                        return fail(
                            n,
                            format!("unknown section '[{other}]' (dataset | condense | eval)"),
                        )
                    }
                };
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return fail(n, format!("expected 'key = value', got '{line}'"));
            };
            let (key, value) = (key.trim(), value.trim());
            if key != "program" && !self.seen.insert((self.section as u8, key.to_string())) {
                return fail(n, format!("duplicate key '{key}'"));
            }
            match self.section {
                Section::Top => self.top(n, key, value)?,
                Section::Dataset => self.dataset(n, key, value)?,
                Section::Condense => self.condense(n, key, value)?,
                Section::Eval => self.eval(n, key, value)?,
            }
        }
        // The single-seed contract: section seeds mirror the global one.
        self.cfg.condense.seed = self.cfg.seed;
        self.cfg.eval.seed = self.cfg.seed;
        self.cfg.validate()?;
        Ok(self.cfg)
    }

    fn top(&mut self, n: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.cfg.seed = int(n, key, value)?,
            "out" => self.cfg.out = PathBuf::from(value),
            "methods" => self.cfg.methods = list(value),
            _ => {
                return fail(
                    n,
                    format!("unknown key '{key}' above the sections (seed | out | methods)"),
                )
            }
        }
        Ok(())
    }

    fn dataset(&mut self, n: usize, key: &str, value: &str) -> Result<()> {
        let ds = &mut self.cfg.dataset;
        match key {
            "geometry" => ds.geometry = geometry(n, value)?,
            "train-per-class" => ds.train_per_class = int(n, key, value)?,
            "test-per-class" => ds.test_per_class = int(n, key, value)?,
            "program" => ds.programs.push(program(n, value)?),
            _ => return fail(n, format!("unknown [dataset] key '{key}'")),
        }
        Ok(())
    }

    fn condense(&mut self, n: usize, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cfg.condense;
        match key {
            "vpc" => c.vpc = int(n, key, value)?,
            "epsilon" => c.epsilon = float(n, key, value)?,
            "learning-rate" => c.learning_rate = float(n, key, value)?,
            "momentum" => c.momentum = float(n, key, value)?,
            "real-batch" => c.real_batch = int(n, key, value)?,
            "iterations" => c.iterations = int(n, key, value)?,
            "insertion-mode" => {
                c.insertion_mode = match value {
                    "gradient-guided" => InsertionMode::GradientGuided,
                    "random-position" => InsertionMode::RandomPosition,
                    "disabled" => InsertionMode::Disabled,
                    _ => {
                        return fail(
                            n,
                            format!(
                                "insertion-mode '{value}' (gradient-guided | \
                                 random-position | disabled)"
                            ),
                        )
                    }
                }
            }
            "criterion" => {
                c.criterion = match value {
                    "cosine" => Criterion::Cosine,
                    "l2" => Criterion::L2,
                    _ => return fail(n, format!("criterion '{value}' (cosine | l2)")),
                }
            }
            "l2-threshold" => c.l2_threshold = float(n, key, value)?,
            "max-keys" => {
                c.max_keys = if value == "unlimited" {
                    usize::MAX
                } else {
                    int(n, key, value)?
                }
            }
            "warmup-fraction" => c.warmup_fraction = float(n, key, value)?,
            "cooldown-fraction" => c.cooldown_fraction = float(n, key, value)?,
            "check-period" => c.check_period = int(n, key, value)?,
            "theta-mode" => {
                c.theta_mode = if value == "fresh" {
                    ThetaMode::FreshEachIteration
                } else if let Some(period) = value.strip_prefix("persist:") {
                    ThetaMode::PersistWithReset(int(n, key, period)?)
                } else {
                    return fail(n, format!("theta-mode '{value}' (fresh | persist:<N>)"));
                }
            }
            "chain-rule-candidates" => c.chain_rule_candidates = boolean(n, key, value)?,
            "flip" => c.flip = boolean(n, key, value)?,
            "widths" => self.cfg.matching_widths = pair(n, key, value)?,
            _ => return fail(n, format!("unknown [condense] key '{key}'")),
        }
        Ok(())
    }

    fn eval(&mut self, n: usize, key: &str, value: &str) -> Result<()> {
        let e = &mut self.cfg.eval;
        match key {
            "epochs" => e.epochs = int(n, key, value)?,
            "learning-rate" => e.learning_rate = float(n, key, value)?,
            "momentum" => e.momentum = float(n, key, value)?,
            "batch" => e.batch = int(n, key, value)?,
            "repeats" => e.repeats = int(n, key, value)?,
            "flip" => e.flip = boolean(n, key, value)?,
            "widths" => e.widths = pair(n, key, value)?,
            "architectures" => {
                e.architectures = list(value)
                    .iter()
                    .map(|name| {
                        Architecture::parse(name)
                            .map_err(|e| Error::ConfigParse {
                                line: n,
                                message: e.to_string(),
                            })
                    })
                    .collect::<Result<_>>()?
            }
            _ => return fail(n, format!("unknown [eval] key '{key}'")),
        }
        Ok(())
    }
}

// ─────────────────────────── value forms ───────────────────────────

fn int<T>(line: usize, key: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr,
{
    value
        .parse()
        .map_err(|_| Error::ConfigParse {
            line,
            message: format!("{key}: '{value}' is not an unsigned integer"),
        })
}

fn float(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| Error::ConfigParse {
        line,
        message: format!("{key}: '{value}' is not a number"),
    })?;
    if !v.is_finite() {
        return fail(line, format!("{key}: '{value}' must be finite"));
    }
    Ok(v)
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => fail(line, format!("{key}: '{value}' is not true|false")),
    }
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn pair(line: usize, key: &str, value: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return fail(line, format!("{key}: '{value}' is not 'a,b'"));
    }
    Ok((int(line, key, parts[0])?, int(line, key, parts[1])?))
}

fn geometry(line: usize, value: &str) -> Result<Geometry> {
    let parts: Vec<&str> = value.split('x').collect();
    if parts.len() != 4 {
        return fail(line, format!("geometry: '{value}' is not 'TxHxWxC'"));
    }
    let mut dims = [0usize; 4];
    for (d, part) in dims.iter_mut().zip(&parts) {
        *d = int(line, "geometry", part)?;
    }
    Ok(Geometry::new(dims[0], dims[1], dims[2], dims[3]))
}

/// `program = <class> <name> <sprite> <law> key=value...` — the law's
/// parameter set is exact: missing or stray keys are line errors.
fn program(line: usize, value: &str) -> Result<MotionProgram> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    if tokens.len() < 4 {
        return fail(
            line,
            format!("program: '{value}' needs '<class> <name> <sprite> <law> key=value...'"),
        );
    }
    let class: usize = int(line, "program class", tokens[0])?;
    let name = tokens[1].to_string();
    let sprite = match tokens[2] {
        "square" => SpriteKind::Square,
        "disk" => SpriteKind::Disk,
        other => return fail(line, format!("program sprite '{other}' (square | disk)")),
    };

    let mut args: Vec<(&str, &str)> = Vec::new();
    for token in &tokens[4..] {
        let Some((k, v)) = token.split_once('=') else {
            return fail(line, format!("program parameter '{token}' is not key=value"));
        };
        if args.iter().any(|(seen, _)| *seen == k) {
            return fail(line, format!("program parameter '{k}' given twice"));
        }
        args.push((k, v));
    }
    let law_name = tokens[3];
    let law = match law_name {
        "linear" => MotionLaw::LinearTranslate {
            vx: take_f64(line, law_name, &mut args, "vx")?,
            vy: take_f64(line, law_name, &mut args, "vy")?,
        },
        "bounce" => MotionLaw::Bounce {
            vx: take_f64(line, law_name, &mut args, "vx")?,
            vy: take_f64(line, law_name, &mut args, "vy")?,
        },
        "zigzag" => MotionLaw::Zigzag {
            vx: take_f64(line, law_name, &mut args, "vx")?,
            vy: take_f64(line, law_name, &mut args, "vy")?,
            period: int(line, "period", take(line, law_name, &mut args, "period")?)?,
        },
        "orbit" => MotionLaw::CircularOrbit {
            radius: take_f64(line, law_name, &mut args, "radius")?,
            turns: take_f64(line, law_name, &mut args, "turns")?,
        },
        "grow" => MotionLaw::GrowShrink {
            swell: take_f64(line, law_name, &mut args, "swell")?,
        },
        "hold-jump" => MotionLaw::HoldThenJump {
            hold_fraction: take_f64(line, law_name, &mut args, "hold-fraction")?,
        },
        other => {
            return fail(
                line,
                format!(
                    "program law '{other}' (linear | bounce | zigzag | orbit | grow | hold-jump)"
                ),
            )
        }
    };
    if let Some((k, _)) = args.first() {
        return fail(line, format!("program law '{law_name}' does not take '{k}='"));
    }
    Ok(MotionProgram::new(class, name, sprite, law))
}

fn take<'a>(line: usize, law: &str, args: &mut Vec<(&'a str, &'a str)>, k: &str) -> Result<&'a str> {
    match args.iter().position(|(key, _)| *key == k) {
        Some(i) => Ok(args.remove(i).1),
        None => fail(line, format!("program law '{law}' needs '{k}='")),
    }
}

fn take_f64<'a>(
    line: usize,
    law: &str,
    args: &mut Vec<(&'a str, &'a str)>,
    k: &str,
) -> Result<f64> {
    float(line, k, take(line, law, args, k)?)
}
