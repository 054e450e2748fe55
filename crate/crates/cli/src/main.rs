use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};
use sparse_sof::admm::run_logged;
use sparse_sof::analysis::{bounds, feasibility_test, sparsest_controller, Verdict};
use sparse_sof::bench::{gen_lattice, gen_spatial_decay, simulate_auto, sweep, write_sweep_csv, DecayParams, SweepRow};
use sparse_sof::model::{load_problem, parse_override, AdmmOptions, ProblemFile, SynthesisProblem};
use sparse_sof::Error;

const SCHEMA: u64 = 1;

#[derive(Parser)]
#[command(name = "sparse-sof", version, about = "Sparse static output-feedback synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a sparse gain.
    Synth {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        knobs: Knobs,
        /// Per-iteration CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Structured stabilizability test.
    Feas {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Lower and upper bounds on the optimal cost.
    Bounds {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Sparsest stabilizing gain within the pattern.
    Sparsest {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// λ/ρ sweep on a generated benchmark instance, written as CSV.
    Bench {
        /// Square lattice with the given side (side² states).
        #[arg(long, conflicts_with = "decay")]
        lattice: Option<usize>,
        /// Spatially decaying system with the given number of states.
        #[arg(long)]
        decay: Option<usize>,
        /// Scalar multiple of the identity used for R.
        #[arg(long, default_value_t = 1.0)]
        r_weight: f64,
        /// Comma-separated λ grid.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        lambda: Vec<f64>,
        /// Comma-separated ρ grid.
        #[arg(long, value_delimiter = ',', default_value = "100")]
        rho: Vec<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        eps_star: Option<f64>,
        /// Option override `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads over the λ grid.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Closed-loop simulation of a gain from a result file.
    Simulate {
        #[command(flatten)]
        io: Io,
        /// Result JSON holding `k_truncated` (or `k`).
        #[arg(long)]
        gain: PathBuf,
    },
}

#[derive(Args)]
struct Io {
    /// Problem JSON.
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Knobs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps_star: Option<f64>,
    /// Option override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Invalid(_) | Error::Io(_) | Error::UnsupportedFeature(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Solver(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Synth { io, knobs, log } => {
            let (problem, opts) = load(&io.input, &knobs)?;
            let mut log_file = match &log {
                Some(p) => Some(fs::File::create(p).map_err(Error::from)?),
                None => None,
            };
            let result = run_logged(&problem, &opts, log_file.as_mut().map(|f| f as &mut dyn Write))?;
            emit(&io.output, "synth", serde_json::to_value(&result).expect("serializable"))
        }
        Command::Feas { io, knobs } => {
            let (problem, opts) = load(&io.input, &knobs)?;
            let report = feasibility_test(&problem.system, &problem.pattern, &opts, knobs.seed);
            let verdict = report.verdict;
            emit(&io.output, "feas", serde_json::to_value(&report).expect("serializable"))?;
            if verdict == Verdict::Infeasible {
                return Err(Failure::Solver("no stabilizing gain in the pattern".into()));
            }
            Ok(())
        }
        Command::Bounds { io, knobs } => {
            let (problem, opts) = load(&io.input, &knobs)?;
            let report = bounds(&problem, &opts)?;
            emit(&io.output, "bounds", serde_json::to_value(report).expect("serializable"))
        }
        Command::Sparsest { io, knobs } => {
            let (problem, opts) = load(&io.input, &knobs)?;
            let r = sparsest_controller(&problem.system, &problem.pattern, &opts, knobs.seed)?;
            emit(&io.output, "sparsest", serde_json::to_value(&r).expect("serializable"))
        }
        Command::Bench {
            lattice,
            decay,
            r_weight,
            lambda,
            rho,
            delta,
            eps_star,
            overrides,
            seed,
            jobs,
            output,
        } => {
            let system = match (lattice, decay) {
                (Some(side), None) => gen_lattice(side, seed),
                (None, Some(n)) => gen_spatial_decay(n, &DecayParams::default(), seed),
                _ => return Err(Failure::Usage("give exactly one of --lattice or --decay".into())),
            };
            let mut template = SynthesisProblem::with_defaults(system);
            template.r_weight *= r_weight;
            let mut opts = AdmmOptions::default();
            apply_knobs(&mut opts, None, delta, eps_star, &overrides)?;
            let rows = parallel_sweep(&template, &lambda, &rho, &opts, jobs.max(1))?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf).map_err(Error::from)?;
            write_out(&output, &buf)
        }
        Command::Simulate { io, gain } => {
            let file = read_problem(&io.input)?;
            let problem = file.problem;
            let text = fs::read_to_string(&gain).map_err(Error::from)?;
            let k = gain_from_json(&text, problem.m(), problem.p())?;
            let x0 = problem
                .input_bound
                .as_ref()
                .map(|b| b.x0.clone())
                .unwrap_or_else(|| DVector::from_element(problem.n(), 1.0));
            let sim = simulate_auto(&problem.system, &k, &problem.q_weight, &problem.r_weight, &x0)?;
            emit(&io.output, "simulate", serde_json::to_value(&sim).expect("serializable"))
        }
    }
}

fn read_problem(path: &Path) -> Result<ProblemFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let file = load_problem(&text)?;
    for w in &file.warnings {
        log::warn!("{w}");
    }
    Ok(file)
}

fn load(path: &Path, knobs: &Knobs) -> Result<(SynthesisProblem, AdmmOptions), Failure> {
    let file = read_problem(path)?;
    let mut problem = file.problem;
    let mut opts = file.options;
    if let Some(l) = knobs.lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Failure::Usage(format!("--lambda must be nonnegative, got {l}")));
        }
        problem.lambda = l;
    }
    apply_knobs(&mut opts, knobs.rho, knobs.delta, knobs.eps_star, &knobs.overrides)?;
    Ok((problem, opts))
}

fn apply_knobs(
    opts: &mut AdmmOptions,
    rho: Option<f64>,
    delta: Option<f64>,
    eps_star: Option<f64>,
    overrides: &[String],
) -> Outcome {
    for (key, v) in [("penalty_rho", rho), ("reweight_delta", delta), ("eps_star", eps_star)] {
        if let Some(v) = v {
            parse_override(opts, key, &v.to_string())?;
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("override `{o}` is not KEY=VALUE")))?;
        parse_override(opts, k.trim(), v.trim())?;
    }
    Ok(())
}

/// Splits the λ grid into contiguous chunks, one per worker, and
/// concatenates the rows in grid order.
fn parallel_sweep(
    template: &SynthesisProblem,
    lambdas: &[f64],
    rhos: &[f64],
    opts: &AdmmOptions,
    jobs: usize,
) -> Result<Vec<SweepRow>, Failure> {
    if jobs == 1 || lambdas.len() <= 1 {
        return Ok(sweep(template, lambdas, rhos, opts)?);
    }
    let chunk = lambdas.len().div_ceil(jobs);
    let parts: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = lambdas
            .chunks(chunk)
            .map(|ls| s.spawn(move || sweep(template, ls, rhos, opts)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

fn gain_from_json(text: &str, m: usize, p: usize) -> Result<DMatrix<f64>, Failure> {
    let v: Value = serde_json::from_str(text).map_err(|e| Failure::Usage(format!("gain file: {e}")))?;
    let rows = ["k_truncated", "k"]
        .iter()
        .find_map(|key| v.get(key))
        .and_then(Value::as_array)
        .ok_or_else(|| Failure::Usage("gain file has no `k_truncated` or `k` matrix".into()))?;
    let bad = || Failure::Usage(format!("gain must be a {m}×{p} matrix of numbers"));
    if rows.len() != m {
        return Err(bad());
    }
    let mut k = DMatrix::zeros(m, p);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|r| r.len() == p).ok_or_else(bad)?;
        for (j, x) in row.iter().enumerate() {
            k[(i, j)] = x.as_f64().ok_or_else(bad)?;
        }
    }
    Ok(k)
}

fn emit(output: &Option<PathBuf>, command: &str, body: Value) -> Outcome {
    let mut obj = Map::new();
    obj.insert("schema".into(), Value::from(SCHEMA));
    obj.insert("command".into(), Value::from(command));
    if let Value::Object(fields) = body {
        obj.extend(fields);
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values always serialize");
    text.push('\n');
    write_out(output, text.as_bytes())
}

fn write_out(output: &Option<PathBuf>, bytes: &[u8]) -> Outcome {
    match output {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::Usage(e.to_string())),
    }
}
