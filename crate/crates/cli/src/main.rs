use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use stablab::bounds::{evaluate, BOUND_NAMES};
use stablab::experiment::{self, error_exit_code, ExperimentConfig, Fault, Outcome};
use stablab::Error;

#[derive(Parser)]
#[command(name = "stab", version, about = "Stability experiments for the stochastic gradient method")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// INI experiment configuration.
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write SVG line charts.
    #[arg(long)]
    svg: bool,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Gradient,
}

#[derive(Subcommand)]
enum Command {
    /// Paired-run stability estimates checked against the matching bounds.
    Run(ExperimentArgs),
    /// Stability and generalization gap across the step sizes in `lab.alphas`.
    Sweep(ExperimentArgs),
    /// Measured excess risk of averaged SGM against the multi-pass bound.
    Risk(ExperimentArgs),
    /// Randomized property checks of losses, update rules and estimators.
    Props {
        /// Run only properties whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt every loss so the suite has something to catch.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Evaluate a closed-form bound.
    Bounds {
        #[arg(long)]
        name: String,
        /// `key=value` pairs.
        #[arg(long, num_args = 0..)]
        inputs: Vec<String>,
    },
}

fn load(args: &ExperimentArgs) -> stablab::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if args.svg {
        cfg.output.svg = true;
    }
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Pass => "pass",
        Outcome::Indicative => "indicative",
        Outcome::Violation => "violation",
        Outcome::Diverged => "diverged",
    }
}

fn parse_inputs(pairs: &[String]) -> stablab::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for p in pairs {
        match p.split_once('=') {
            Some((k, v)) => match v.trim().parse::<f64>() {
                Ok(x) => {
                    out.insert(k.trim().to_string(), x);
                }
                Err(_) => errors.push(format!("{k}: `{v}` is not a number")),
            },
            None => errors.push(format!("`{p}` is not of the form key=value")),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errors))
    }
}

fn execute(cmd: Command) -> stablab::Result<i32> {
    match cmd {
        Command::Run(args) => {
            let out = experiment::run(&load(&args)?)?;
            for h in &out.summary.horizons {
                println!("T = {}: stability {:.6e} ± {:.2e}", h.steps, h.estimate.mean, h.estimate.stderr);
                for b in &h.bounds {
                    println!("  {} bound {:.6e}: {:?}", b.name, b.value, b.verdict.expect("compared"));
                }
            }
            report_files(&out.files);
            println!("outcome: {}", outcome_name(out.summary.outcome));
            Ok(out.summary.outcome.exit_code())
        }
        Command::Sweep(args) => {
            let out = experiment::sweep(&load(&args)?)?;
            for p in &out.summary.points {
                println!(
                    "alpha = {}: stability {:.6e}, gap {:.6e} ± {:.2e}",
                    p.alpha, p.stability.mean, p.gap.mean, p.gap.stderr
                );
            }
            report_files(&out.files);
            println!("outcome: {}", outcome_name(out.summary.outcome));
            Ok(out.summary.outcome.exit_code())
        }
        Command::Risk(args) => {
            let out = experiment::risk(&load(&args)?)?;
            let s = &out.summary;
            println!("single-pass bound {:.6e}", s.single_pass_bound);
            println!("multi-pass bound  {:.6e}", s.multipass_bound);
            println!("measured excess   {:.6e} ± {:.2e}", s.excess_mean, s.excess_stderr);
            report_files(&out.files);
            println!("outcome: {}", outcome_name(s.outcome));
            Ok(s.outcome.exit_code())
        }
        Command::Props {
            filter,
            seed,
            inject_fault,
        } => {
            let fault = inject_fault.map(|FaultArg::Gradient| Fault::Gradient);
            let report = experiment::run_properties(filter.as_deref(), fault, seed)?;
            for r in &report.results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:.3e} (limit {:.3e}) {}", r.name, r.metric, r.threshold, r.detail);
            }
            println!("{}", serde_json_line(&report));
            Ok(report.exit_code())
        }
        Command::Bounds { name, inputs } => {
            if !BOUND_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(vec![format!(
                    "unknown bound `{name}`; expected one of {}",
                    BOUND_NAMES.join(", ")
                )]));
            }
            let report = evaluate(&name, &parse_inputs(&inputs)?)?;
            println!("{}", serde_json_line(&report));
            Ok(0)
        }
    }
}

fn serde_json_line(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).expect("reports serialize")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(w) = std::env::var("STAB_WORKERS") {
        match w.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    error!("cannot size worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: STAB_WORKERS must be a positive integer, got `{w}`");
                return ExitCode::from(4);
            }
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let Error::Config(msgs) = &e {
                for m in msgs {
                    eprintln!("error: {m}");
                }
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
