//! Command-line front end: `apor reach|oracle-check|bench|independence`.
//!
//! Exit codes: 0 ok, 1 safety UNKNOWN under `--require-safe`, 2 configuration
//! or I/O error, 3 budget exhausted, 4 soundness violation.

pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use apor_core::config::{ResolvedRun, RunConfig};
use apor_core::oracle::{self, Sample, SoundnessReport};
use apor_core::reach::{check_safety, reach, reach_bounds, reach_prepared, ReachOptions, ReachResult, Verdict};
use apor_core::{discrepancy, IndependenceTable};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "apor", version, about = "Bounded reachability that explores one trace per class of approximately commuting actions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Over-approximate the reach sets and write bounds.csv and report.txt.
    Reach(RunArgs),
    /// Run reach, then audit it against random valid executions.
    OracleCheck(RunArgs),
    /// Time the reduced search against exhaustive enumeration from one state.
    Bench(BenchArgs),
    /// Print the pairwise commutation bounds as CSV.
    Independence(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model: consensus, heating, platoon2, platoon2-60, platoon2-40, platoon2-25, platoon4.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random valid executions for oracle-check and the SVG overlay.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write bounds.svg.
    #[arg(long)]
    pub svg: bool,
    /// Exit with status 1 unless the safety verdict is SAFE.
    #[arg(long)]
    pub require_safe: bool,
    /// Scale every radius before auditing (negative test of the audit).
    #[arg(long, hide = true)]
    pub mutate_radii: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Timed repetitions per mode; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] apor_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("safety verdict {0}")]
    NotSafe(Verdict),
    #[error("soundness audit failed: {0} violations")]
    Unsound(usize),
    #[error("reach stopped early: tuple budget exhausted after {0} steps")]
    Truncated(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotSafe(_) => 1,
            CliError::Engine(apor_core::Error::Budget { .. }) | CliError::Truncated(_) => 3,
            CliError::Unsound(_) => 4,
            CliError::Engine(_) | CliError::Io { .. } => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Merge the config file and command-line overrides.
pub fn load(args: &RunArgs) -> CliResult<ResolvedRun> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            RunConfig::from_toml_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(m) = &args.model {
        cfg.model = Some(m.clone());
    }
    cfg.run.delta0 = args.delta0.or(cfg.run.delta0);
    cfg.run.epsilon = args.epsilon.or(cfg.run.epsilon);
    cfg.run.horizon = args.horizon.or(cfg.run.horizon);
    cfg.run.seed = args.seed.or(cfg.run.seed);
    cfg.run.samples = args.samples.or(cfg.run.samples);
    Ok(cfg.resolve()?)
}

fn options(run: &ResolvedRun) -> ReachOptions {
    ReachOptions {
        max_tuples: run.max_tuples,
        ..ReachOptions::new(run.preset.horizon, run.preset.delta0, run.preset.epsilon)
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| apor_core::Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Reach(args) => cmd_reach(&args),
        Command::OracleCheck(args) => cmd_oracle_check(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Independence(args) => cmd_independence(&args),
    }
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

/// `step,coordinate,lower,upper`
pub fn bounds_csv(result: &ReachResult, dim: usize) -> CliResult<String> {
    let per_coord: Vec<_> = (0..dim).map(|i| reach_bounds(result, i)).collect::<Result<_, _>>()?;
    let mut out = String::from("step,coordinate,lower,upper\n");
    for t in 0..=result.completed_steps() {
        for (i, b) in per_coord.iter().enumerate() {
            let _ = writeln!(out, "{t},{i},{:.9},{:.9}", b[t].0, b[t].1);
        }
    }
    Ok(out)
}

/// `step,cover,trace,radius,x0,x1,…`
pub fn tuples_csv(result: &ReachResult, run: &ResolvedRun) -> String {
    let sys = &run.preset.system;
    let mut out = String::from("step,cover,trace,radius");
    for i in 0..sys.dimension {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (c, cover) in result.covers.iter().enumerate() {
        for (t, tuples) in cover.steps.iter().enumerate() {
            for tuple in tuples {
                let _ = write!(out, "{t},{c},{},{:.9}", tuple.trace().display(sys), tuple.radius());
                for x in tuple.state.continuous.iter() {
                    let _ = write!(out, ",{x:.9}");
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Human-readable run summary. Contains no timing, so identical runs give identical files.
pub fn report(result: &ReachResult, run: &ResolvedRun, verdict: Option<&Verdict>) -> String {
    let p = &run.preset;
    let explored = result.explored_per_cover();
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", p.name);
    let _ = writeln!(out, "norm: {}", p.system.norm);
    let _ = writeln!(out, "delta0: {}", p.delta0);
    let _ = writeln!(out, "epsilon: {}", p.epsilon);
    let _ = writeln!(out, "horizon: {}", p.horizon);
    let _ = writeln!(out, "covers: {}", result.covers.len());
    let _ = writeln!(out, "completed steps: {}", result.completed_steps());
    let _ = writeln!(out, "independent pairs: {}", result.table.independent_pairs().len());
    let _ = writeln!(out, "explored traces: {}", result.explored_total());
    let max_explored = explored.iter().copied().max().unwrap_or(0);
    let min_explored = explored.iter().copied().min().unwrap_or(0);
    if min_explored == max_explored {
        let _ = writeln!(out, "explored traces per cover: {max_explored}");
    } else {
        let _ = writeln!(out, "explored traces per cover: {min_explored}..{max_explored}");
    }
    if let Some(cover) = result.covers.iter().max_by_key(|c| c.nominal.exact().unwrap_or(u64::MAX)) {
        let _ = writeln!(out, "nominal traces per cover: {}", cover.nominal);
        if let (Some(n), true) = (cover.nominal.exact(), max_explored > 0) {
            let _ = writeln!(out, "reduction factor: {:.1}", n as f64 / max_explored as f64);
        }
    }
    let max_radius = result.tuples_at(result.completed_steps()).map(|t| t.radius()).fold(0.0, f64::max);
    let _ = writeln!(out, "final max radius: {max_radius:.9}");
    let _ = writeln!(out, "truncated: {}", if result.truncated { "yes" } else { "no" });
    match verdict {
        Some(v) => {
            let _ = writeln!(out, "safety: {v}");
        }
        None => {
            let _ = writeln!(out, "safety: not configured");
        }
    }
    for a in &p.assumptions {
        let _ = writeln!(out, "assumption: {a}");
    }
    out
}

fn samples_for_plot(run: &ResolvedRun, samples: &[Sample]) -> Vec<Vec<Vec<f64>>> {
    let _ = run;
    samples
        .iter()
        .map(|s| s.execution.states.iter().map(|q| q.continuous.iter().copied().collect()).collect())
        .collect()
}

pub fn cmd_reach(args: &RunArgs) -> CliResult<()> {
    let run = load(args)?;
    prepare_out(&args.out)?;
    let started = Instant::now();
    let result = with_workers(args.workers, || reach(&run.preset.system, &options(&run)))??;
    let elapsed = started.elapsed();
    let verdict = run.preset.safety.as_ref().map(|q| check_safety(&result, q));
    let dim = run.preset.system.dimension;
    write(&args.out.join("bounds.csv"), &bounds_csv(&result, dim)?)?;
    write(&args.out.join("report.txt"), &report(&result, &run, verdict.as_ref()))?;
    if run.full_history {
        write(&args.out.join("tuples.csv"), &tuples_csv(&result, &run))?;
    }
    if args.svg {
        let n = run.samples.min(100);
        let samples = if n > 0 { oracle::random_valid_executions(&run.preset.system, run.preset.horizon, n, run.seed)? } else { vec![] };
        let envelopes: Vec<_> = (0..dim).map(|i| reach_bounds(&result, i)).collect::<Result<_, _>>()?;
        let svg = svg::render(&run.preset.name, &envelopes, &samples_for_plot(&run, &samples));
        write(&args.out.join("bounds.svg"), &svg)?;
    }
    println!(
        "{}: explored {} traces over {} covers in {:.3} ms; safety {}",
        run.preset.name,
        result.explored_total(),
        result.covers.len(),
        elapsed.as_secs_f64() * 1e3,
        verdict.as_ref().map_or("not configured".to_string(), ToString::to_string)
    );
    if result.truncated {
        return Err(CliError::Truncated(result.completed_steps()));
    }
    match verdict {
        Some(v @ Verdict::Unknown { .. }) if args.require_safe => Err(CliError::NotSafe(v)),
        _ => Ok(()),
    }
}

pub fn cmd_oracle_check(args: &RunArgs) -> CliResult<()> {
    let run = load(args)?;
    if run.samples == 0 {
        return Err(apor_core::Error::Config("oracle-check needs at least one sample".into()).into());
    }
    prepare_out(&args.out)?;
    let (result, samples) = with_workers(args.workers, || -> apor_core::Result<_> {
        let result = reach(&run.preset.system, &options(&run))?;
        let samples = oracle::random_valid_executions(&run.preset.system, run.preset.horizon, run.samples, run.seed)?;
        Ok((result, samples))
    })??;
    let audited = match args.mutate_radii {
        Some(f) => result.with_scaled_radii(f),
        None => result,
    };
    let report: SoundnessReport = oracle::validate_soundness(&audited, &samples);
    let mut text = format!("model: {}\nsamples: {}\nseed: {}\n", run.preset.name, samples.len(), run.seed);
    text.push_str(&report.to_string());
    write(&args.out.join("soundness.txt"), &text)?;
    println!(
        "{}: {} states checked, {} violations, min slack {:.3e}",
        run.preset.name,
        report.checked(),
        report.violations(),
        report.min_slack()
    );
    if audited.truncated {
        return Err(CliError::Truncated(audited.completed_steps()));
    }
    if !report.passed() {
        return Err(CliError::Unsound(report.violations()));
    }
    Ok(())
}

/// Median wall time in milliseconds.
fn median_ms(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let run = load(&args.run)?;
    prepare_out(&args.run.out)?;
    let repeats = args.repeats.max(1);
    let sys = &run.preset.system;
    let opts = ReachOptions { parallel: false, ..options(&run) };

    // setup: independence table and discrepancies, inputs of the reduced search
    let setup = || -> CliResult<_> {
        Ok((IndependenceTable::build(sys, opts.epsilon)?, discrepancy::system_discrepancies(sys)?))
    };
    let (table, betas) = setup()?;
    let setup_ms = time_per_run(repeats, || setup().map(|_| ()))?;

    let mut por_traces = 0;
    let por_ms = time_per_run(repeats, || {
        por_traces = reach_prepared(sys, &opts, table.clone(), &betas)?.explored_total();
        Ok(())
    })?;

    let q0 = sys.initial_state(sys.initial_set.center());
    let mut ex_traces: Option<u64> = None;
    let ex_ms = time_per_run(repeats, || {
        match oracle::enumerate_executions(sys, &q0, run.preset.horizon, run.node_budget, |_, _| {}) {
            Ok(n) => ex_traces = Some(n),
            Err(apor_core::Error::Budget { .. }) => ex_traces = None,
            Err(e) => return Err(e.into()),
        }
        Ok(())
    })?;

    let mut csv = String::from("mode,traces,wall_ms\n");
    let _ = writeln!(csv, "setup,0,{setup_ms:.6}");
    let _ = writeln!(csv, "por,{por_traces},{por_ms:.6}");
    match ex_traces {
        Some(n) => {
            let _ = writeln!(csv, "exhaustive,{n},{ex_ms:.6}");
        }
        None => {
            let _ = writeln!(csv, "exhaustive,BUDGET,{ex_ms:.6}");
        }
    }
    write(&args.run.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Median milliseconds per call over `repeats` batches. Batches are sized so
/// one takes at least `BATCH_MS`, which keeps sub-millisecond runs measurable.
fn time_per_run(repeats: usize, mut f: impl FnMut() -> CliResult<()>) -> CliResult<f64> {
    const BATCH_MS: f64 = 20.0;
    let t = Instant::now();
    f()?;
    let once = t.elapsed().as_secs_f64() * 1e3;
    let calls = if once >= BATCH_MS { 1 } else { (BATCH_MS / once.max(1e-6)).ceil().min(1e6) as usize };
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        for _ in 0..calls {
            f()?;
        }
        times.push(t.elapsed().as_secs_f64() * 1e3 / calls as f64);
    }
    Ok(median_ms(times))
}

pub fn cmd_independence(args: &RunArgs) -> CliResult<()> {
    let run = load(args)?;
    prepare_out(&args.out)?;
    let table = IndependenceTable::build(&run.preset.system, run.preset.epsilon)?;
    let csv = table.to_csv(&run.preset.system);
    write(&args.out.join("independence.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
