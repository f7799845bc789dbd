//! INI experiment configuration: parsing, validation and a stable digest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problems::MLP_MAX_HIDDEN;
use crate::rules::{Dropout, DropoutMode, StepSizeSchedule};
use crate::sgm::{RuleOptions, RunConfig, SamplingScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    LeastSquares,
    Sigmoid,
    Mlp,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::LeastSquares => "least_squares",
            Self::Sigmoid => "sigmoid",
            Self::Mlp => "mlp",
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Self::LeastSquares)
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "least_squares" => Ok(Self::LeastSquares),
            "sigmoid" => Ok(Self::Sigmoid),
            "mlp" => Ok(Self::Mlp),
            _ => Err("expected one of logistic, least_squares, sigmoid, mlp".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    InverseT,
    InverseStrong,
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(Self::Constant),
            "inverse_t" => Ok(Self::InverseT),
            "inverse_strong" => Ok(Self::InverseStrong),
            _ => Err("expected one of constant, inverse_t, inverse_strong".into()),
        }
    }
}

fn parse_scheme(s: &str) -> std::result::Result<SamplingScheme, String> {
    match s {
        "uniform" => Ok(SamplingScheme::Uniform),
        "permutation" => Ok(SamplingScheme::Permutation),
        _ => Err("expected uniform or permutation".into()),
    }
}

fn parse_dropout_mode(s: &str) -> std::result::Result<DropoutMode, String> {
    match s {
        "norm_exact" => Ok(DropoutMode::NormExact),
        "inverted" => Ok(DropoutMode::Inverted),
        _ => Err("expected norm_exact or inverted".into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub loss: LossKind,
    pub dim: usize,
    pub feature_bound: f64,
    pub label_bound: f64,
    pub ridge: f64,
    pub radius: Option<f64>,
    pub hidden: usize,
    pub n: usize,
    /// Number of atoms of a finite support; 0 samples the generator directly.
    pub support: usize,
    pub label_noise: f64,
    pub seed: u64,
    /// CSV file whose rows form a uniform finite support.
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub steps: usize,
    pub schedule: ScheduleKind,
    /// Constant step, or `c` of `c/t`.
    pub alpha: f64,
    /// Strong-convexity parameter of `1/(γt)`; defaults to the loss's `γ`.
    pub gamma: Option<f64>,
    pub scheme: SamplingScheme,
    pub fixed_permutation: bool,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub dropout_keep: f64,
    pub dropout_mode: DropoutMode,
    pub clip: Option<f64>,
    pub projection: Option<f64>,
    pub record_every: Option<usize>,
    pub average: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabSpec {
    pub trials: usize,
    pub probe_size: usize,
    pub alphas: Vec<f64>,
    pub steps_list: Vec<usize>,
    pub population_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub run: RunSpec,
    pub lab: LabSpec,
    pub output: OutputSpec,
}

struct Reader {
    values: BTreeMap<(String, String), String>,
    errors: Vec<String>,
}

impl Reader {
    fn take(&mut self, sec: &str, key: &str) -> Option<String> {
        self.values.remove(&(sec.to_string(), key.to_string()))
    }

    fn parse<T>(&mut self, sec: &str, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let raw = self.take(sec, key)?;
        match f(raw.trim()) {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{sec}.{key}: {e} (got `{raw}`)"));
                None
            }
        }
    }

    fn num<T: FromStr>(&mut self, sec: &str, key: &str) -> Option<T> {
        self.parse(sec, key, |s| s.parse::<T>().map_err(|_| "not a valid number".to_string()))
    }

    fn boolean(&mut self, sec: &str, key: &str) -> Option<bool> {
        self.parse(sec, key, |s| match s {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err("expected true or false".into()),
        })
    }

    fn list<T: FromStr>(&mut self, sec: &str, key: &str) -> Option<Vec<T>> {
        self.parse(sec, key, |s| {
            s.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<T>().map_err(|_| format!("`{x}` is not a valid number")))
                .collect()
        })
    }

    fn check(&mut self, ok: bool, key: &str, msg: impl Display) {
        if !ok {
            self.errors.push(format!("{key}: {msg}"));
        }
    }
}

pub const DEFAULT_N: usize = 100;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_PROBES: usize = 256;

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(data) = cfg.problem.data.as_mut() {
            if data.is_relative() {
                if let Some(parent) = path.parent() {
                    *data = parent.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses and validates, reporting every problem found rather than the first.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str_noescape(text).map_err(|e| Error::Config(vec![format!("syntax: {e}")]))?;
        let mut errors = Vec::new();
        let mut values = BTreeMap::new();
        for (sec, props) in ini.iter() {
            let sec = match sec {
                Some(s) if ["problem", "run", "lab", "output"].contains(&s) => s.to_string(),
                Some(s) => {
                    errors.push(format!("unknown section [{s}]"));
                    continue;
                }
                None => {
                    for (k, _) in props.iter() {
                        errors.push(format!("{k}: key outside of any section"));
                    }
                    continue;
                }
            };
            for (k, v) in props.iter() {
                if values.insert((sec.clone(), k.to_string()), v.to_string()).is_some() {
                    errors.push(format!("{sec}.{k}: duplicate key"));
                }
            }
        }
        let mut r = Reader { values, errors };

        let loss = r.parse("problem", "loss", LossKind::from_str).unwrap_or(LossKind::Logistic);
        let problem = ProblemSpec {
            loss,
            dim: r.num("problem", "dim").unwrap_or(5),
            feature_bound: r.num("problem", "feature_bound").unwrap_or(1.0),
            label_bound: r.num("problem", "label_bound").unwrap_or(1.0),
            ridge: r.num("problem", "ridge").unwrap_or(0.0),
            radius: r.num("problem", "radius"),
            hidden: r.num("problem", "hidden").unwrap_or(4),
            n: r.num("problem", "n").unwrap_or(DEFAULT_N),
            support: r.num("problem", "support").unwrap_or(0),
            label_noise: r.num("problem", "label_noise").unwrap_or(0.1),
            seed: r.num("problem", "seed").unwrap_or(1),
            data: r.take("problem", "data").map(|s| PathBuf::from(s.trim())),
        };
        let run = RunSpec {
            steps: r.num("run", "steps").unwrap_or(2 * problem.n),
            schedule: r.parse("run", "schedule", ScheduleKind::from_str).unwrap_or(ScheduleKind::Constant),
            alpha: r.num("run", "alpha").unwrap_or(0.01),
            gamma: r.num("run", "gamma"),
            scheme: r.parse("run", "scheme", parse_scheme).unwrap_or(SamplingScheme::Uniform),
            fixed_permutation: r.boolean("run", "fixed_permutation").unwrap_or(false),
            weight_decay: r.num("run", "weight_decay"),
            dropout: r.num("run", "dropout"),
            dropout_keep: r.num("run", "dropout_keep").unwrap_or(0.5),
            dropout_mode: r.parse("run", "dropout_mode", parse_dropout_mode).unwrap_or(DropoutMode::NormExact),
            clip: r.num("run", "clip"),
            projection: r.num("run", "projection"),
            record_every: r.num("run", "record_every"),
            average: r.boolean("run", "average").unwrap_or(false),
            seed: r.num("run", "seed").unwrap_or(0),
        };
        let lab = LabSpec {
            trials: r.num("lab", "trials").unwrap_or(DEFAULT_TRIALS),
            probe_size: r.num("lab", "probe_size").unwrap_or(DEFAULT_PROBES),
            alphas: r.list("lab", "alphas").unwrap_or_default(),
            steps_list: r.list("lab", "steps_list").unwrap_or_default(),
            population_samples: r.num("lab", "population_samples").unwrap_or(10_000),
        };
        let formats = r.take("output", "formats").unwrap_or_else(|| "json,csv".into());
        let mut output = OutputSpec {
            dir: PathBuf::from(r.take("output", "dir").unwrap_or_else(|| "out".into()).trim()),
            json: false,
            csv: false,
            svg: r.boolean("output", "svg").unwrap_or(false),
        };
        for f in formats.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            match f {
                "json" => output.json = true,
                "csv" => output.csv = true,
                other => r.errors.push(format!("output.formats: unknown format `{other}`")),
            }
        }
        let leftover: Vec<String> = r.values.keys().map(|(s, k)| format!("{s}.{k}: unknown key")).collect();
        r.errors.extend(leftover);

        let p = &problem;
        r.check(p.dim >= 1, "problem.dim", "must be at least 1");
        r.check(p.feature_bound > 0.0, "problem.feature_bound", "must be > 0");
        r.check(p.label_bound > 0.0, "problem.label_bound", "must be > 0");
        r.check(p.ridge >= 0.0, "problem.ridge", "must be >= 0");
        r.check(p.radius.is_none_or(|v| v > 0.0), "problem.radius", "must be > 0");
        r.check((1..=MLP_MAX_HIDDEN).contains(&p.hidden), "problem.hidden", format!("must be in 1..={MLP_MAX_HIDDEN}"));
        r.check(p.n >= 2, "problem.n", "must be at least 2");
        let noise_ok = if p.loss.is_classification() {
            (0.0..=0.5).contains(&p.label_noise)
        } else {
            p.label_noise >= 0.0
        };
        r.check(noise_ok, "problem.label_noise", "must be in [0, 0.5] for classification and >= 0 otherwise");
        let q = &run;
        r.check(q.steps >= 1, "run.steps", "must be at least 1");
        r.check(q.alpha > 0.0 && q.alpha.is_finite(), "run.alpha", "must be > 0");
        r.check(q.gamma.is_none_or(|g| g > 0.0), "run.gamma", "must be > 0");
        r.check(q.weight_decay.is_none_or(|v| v > 0.0), "run.weight_decay", "must be > 0");
        r.check(q.dropout.is_none_or(|v| v > 0.0 && v <= 1.0), "run.dropout", "must be in (0, 1]");
        r.check(q.dropout_keep > 0.0 && q.dropout_keep <= 1.0, "run.dropout_keep", "must be in (0, 1]");
        r.check(q.clip.is_none_or(|v| v > 0.0), "run.clip", "must be > 0");
        r.check(q.projection.is_none_or(|v| v > 0.0), "run.projection", "must be > 0");
        r.check(q.record_every.is_none_or(|v| v >= 1), "run.record_every", "must be at least 1");
        let modifiers = [q.weight_decay.is_some(), q.dropout.is_some(), q.clip.is_some()];
        r.check(
            modifiers.iter().filter(|b| **b).count() <= 1,
            "run",
            "weight_decay, dropout and clip are mutually exclusive",
        );
        if q.schedule == ScheduleKind::InverseStrong {
            let gamma = q.gamma.unwrap_or(p.ridge);
            r.check(gamma > 0.0, "run.gamma", "inverse_strong needs gamma > 0 (or a positive ridge)");
        }
        let domain = p.radius.or(q.projection);
        if p.loss == LossKind::LeastSquares || (p.loss == LossKind::Logistic && p.ridge > 0.0) {
            r.check(domain.is_some(), "problem.radius", "required (or run.projection) to certify constants");
        }
        let l = &lab;
        r.check(l.trials >= crate::lab::MIN_STABILITY_TRIALS, "lab.trials", "must be at least 30");
        r.check(l.alphas.iter().all(|a| *a > 0.0 && a.is_finite()), "lab.alphas", "every step size must be > 0");
        r.check(l.steps_list.iter().all(|t| *t >= 1), "lab.steps_list", "every horizon must be >= 1");
        r.check(l.population_samples >= 1, "lab.population_samples", "must be at least 1");

        if r.errors.is_empty() {
            Ok(Self {
                problem,
                run,
                lab,
                output,
            })
        } else {
            Err(Error::Config(r.errors))
        }
    }

    /// Step-size parameter for `1/(γt)`.
    pub fn gamma(&self) -> f64 {
        self.run.gamma.unwrap_or(self.problem.ridge)
    }

    pub fn schedule_with(&self, alpha: f64) -> StepSizeSchedule {
        match self.run.schedule {
            ScheduleKind::Constant => StepSizeSchedule::Constant { alpha },
            ScheduleKind::InverseT => StepSizeSchedule::InverseT { c: alpha },
            ScheduleKind::InverseStrong => StepSizeSchedule::InverseStrong { gamma: self.gamma() },
        }
    }

    pub fn run_config(&self) -> RunConfig {
        self.run_config_with(self.run.alpha, self.run.steps)
    }

    pub fn run_config_with(&self, alpha: f64, steps: usize) -> RunConfig {
        let q = &self.run;
        RunConfig {
            steps,
            schedule: self.schedule_with(alpha),
            scheme: q.scheme,
            fixed_permutation: q.fixed_permutation,
            seed: q.seed,
            rules: RuleOptions {
                weight_decay: q.weight_decay,
                dropout: q.dropout.map(|rate| Dropout {
                    rate,
                    keep_prob: q.dropout_keep,
                    mode: q.dropout_mode,
                }),
                clip: q.clip,
                projection: q.projection,
            },
            record_every: q.record_every,
            average: q.average,
        }
    }

    /// Every effective setting as sorted `section.key = value` pairs.
    pub fn normalized(&self) -> BTreeMap<String, String> {
        fn opt<T: Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "none".into())
        }
        fn list<T: Display>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let (p, q, l, o) = (&self.problem, &self.run, &self.lab, &self.output);
        let mode = match q.dropout_mode {
            DropoutMode::NormExact => "norm_exact",
            DropoutMode::Inverted => "inverted",
        };
        let schedule = match q.schedule {
            ScheduleKind::Constant => "constant",
            ScheduleKind::InverseT => "inverse_t",
            ScheduleKind::InverseStrong => "inverse_strong",
        };
        let scheme = match q.scheme {
            SamplingScheme::Uniform => "uniform",
            SamplingScheme::Permutation => "permutation",
        };
        let entries: Vec<(&str, String)> = vec![
            ("problem.loss", p.loss.as_str().into()),
            ("problem.dim", p.dim.to_string()),
            ("problem.feature_bound", p.feature_bound.to_string()),
            ("problem.label_bound", p.label_bound.to_string()),
            ("problem.ridge", p.ridge.to_string()),
            ("problem.radius", opt(&p.radius)),
            ("problem.hidden", p.hidden.to_string()),
            ("problem.n", p.n.to_string()),
            ("problem.support", p.support.to_string()),
            ("problem.label_noise", p.label_noise.to_string()),
            ("problem.seed", p.seed.to_string()),
            ("problem.data", opt(&p.data.as_ref().map(|d| d.display().to_string()))),
            ("run.steps", q.steps.to_string()),
            ("run.schedule", schedule.into()),
            ("run.alpha", q.alpha.to_string()),
            ("run.gamma", opt(&q.gamma)),
            ("run.scheme", scheme.into()),
            ("run.fixed_permutation", q.fixed_permutation.to_string()),
            ("run.weight_decay", opt(&q.weight_decay)),
            ("run.dropout", opt(&q.dropout)),
            ("run.dropout_keep", q.dropout_keep.to_string()),
            ("run.dropout_mode", mode.into()),
            ("run.clip", opt(&q.clip)),
            ("run.projection", opt(&q.projection)),
            ("run.record_every", opt(&q.record_every)),
            ("run.average", q.average.to_string()),
            ("run.seed", q.seed.to_string()),
            ("lab.trials", l.trials.to_string()),
            ("lab.probe_size", l.probe_size.to_string()),
            ("lab.alphas", list(&l.alphas)),
            ("lab.steps_list", list(&l.steps_list)),
            ("lab.population_samples", l.population_samples.to_string()),
            ("output.dir", o.dir.display().to_string()),
            ("output.json", o.json.to_string()),
            ("output.csv", o.csv.to_string()),
            ("output.svg", o.svg.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// SHA-256 of the normalized settings, one `key=value` line each. The
    /// output directory is excluded so relocating results keeps the digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.normalized() {
            if k.starts_with("output.") {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}
