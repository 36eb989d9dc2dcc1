//! Command-line experiment runner: reads one JSON config, runs the
//! requested analyses, and writes trajectory CSVs, JSON reports, and a text
//! summary into an output directory. Exits nonzero when a hypothesis or
//! soundness check fails, naming the check.

mod config;
mod report;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use delta_consensus::analysis::{
    consensus_value, expected_transition, perturbation_bound, receive_fault_bound,
    send_fault_bound, stationary_vector, BoundReport, TransitionMode,
};
use delta_consensus::switching::{replay, simulate, FaultKind, Trajectory};
use delta_consensus::verify::run_monte_carlo;

use config::{Analysis, Experiment};
use report::{BoundsDocument, MonteCarloDocument, Summary};

/// Environment variable giving the default output directory.
const OUT_ENV: &str = "DELTA_CONSENSUS_OUT";
const MONOTONE_TOL: f64 = 1e-12;
const SOUNDNESS_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "delta-consensus", version, about = "Consensus dynamics over randomly switching networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to the config's `out_dir`, then to
    /// $DELTA_CONSENSUS_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single analysis instead of the configured set.
    #[arg(long, value_enum)]
    only: Option<Analysis>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let exp = config::load(&args.config)?;
    let out_dir = resolve_out_dir(&args, &exp)?;
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let analyses: Vec<Analysis> = match args.only {
        Some(one) => vec![one],
        None => exp.analyses.clone(),
    };

    let mut summary = Summary::new(&exp.config_digest, exp.seed);
    describe_experiment(&mut summary, &exp);

    for analysis in &analyses {
        match analysis {
            Analysis::Simulate => run_simulate(&exp, &out_dir, &mut summary)?,
            Analysis::Bounds => run_bounds(&exp, &out_dir, &mut summary)?,
            Analysis::Montecarlo => run_montecarlo(&exp, &out_dir, &mut summary)?,
        }
    }

    let summary_path = out_dir.join("summary.txt");
    let failures = summary.finish(&summary_path)?;
    println!("wrote {}", summary_path.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("failed checks: {}", failures.join(", ")))
    }
}

fn resolve_out_dir(args: &RunArgs, exp: &Experiment) -> Result<PathBuf> {
    if let Some(dir) = &args.out {
        return Ok(dir.clone());
    }
    if let Some(dir) = &exp.out_dir {
        return Ok(dir.clone());
    }
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        return Ok(PathBuf::from(dir));
    }
    Err(anyhow!(
        "no output directory: pass --out, set out_dir in the config, or set {OUT_ENV}"
    ))
}

fn describe_experiment(summary: &mut Summary, exp: &Experiment) {
    summary.section("experiment");
    summary.line(&format!(
        "agents: {}, graphs in the ensemble: {}",
        exp.ensemble.n(),
        exp.ensemble.len()
    ));
    let probs: Vec<String> = exp.ensemble.probs().iter().map(|p| p.to_string()).collect();
    summary.line(&format!(
        "switching probabilities: [{}], fault-free graph index: {}",
        probs.join(", "),
        exp.ensemble.base_index()
    ));
    if let Some(kind) = exp.scenario_kind {
        let name = match kind {
            FaultKind::Receive => "receive",
            FaultKind::Send => "send",
        };
        summary.line(&format!("scenario: two {name}-faulty agents over one base graph"));
    }
    if exp.scheme.is_continuous() {
        summary.line(&format!(
            "sampling: continuous limit, dwell {}",
            exp.scheme.delta_t()
        ));
    } else {
        summary.line(&format!(
            "sampling: h = {}, samples per dwell = {}, dwell = {} (stability bound 1/d_max = {})",
            exp.scheme.h().unwrap(),
            exp.scheme.k_bar().unwrap(),
            exp.scheme.delta_t(),
            1.0 / exp.ensemble.max_degree()
        ));
    }
    summary.line(&format!(
        "horizon: {} dwell intervals, runs: {}",
        exp.horizon, exp.n_runs
    ));
}

fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trajectory
        .write_csv(BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gaps_monotone(trajectory: &Trajectory) -> bool {
    trajectory
        .gaps()
        .windows(2)
        .all(|w| w[1] <= w[0] + MONOTONE_TOL)
}

fn run_simulate(exp: &Experiment, out_dir: &Path, summary: &mut Summary) -> Result<()> {
    summary.section("simulate");

    let switching = simulate(&exp.ensemble, &exp.scheme, &exp.x0, exp.horizon, exp.seed)?;
    let switching_path = out_dir.join("trajectory_switching.csv");
    write_trajectory(&switching_path, &switching)?;
    summary.wrote(&switching_path);
    println!("wrote {}", switching_path.display());

    let base_signal = vec![exp.ensemble.base_index(); exp.horizon];
    let base = replay(&exp.ensemble, &exp.scheme, &exp.x0, &base_signal)?;
    let base_path = out_dir.join("trajectory_base.csv");
    write_trajectory(&base_path, &base)?;
    summary.wrote(&base_path);
    println!("wrote {}", base_path.display());

    let gaps = switching.gaps();
    summary.line(&format!(
        "switching path: initial gap {}, terminal gap {}",
        gaps.first().unwrap(),
        gaps.last().unwrap()
    ));
    let base_gaps = base.gaps();
    summary.line(&format!(
        "fault-free path: terminal gap {}",
        base_gaps.last().unwrap()
    ));
    summary.check(
        "trajectory gap monotonicity",
        gaps_monotone(&switching) && gaps_monotone(&base),
        "max - min nonincreasing within 1e-12 at every recorded sample",
    );
    Ok(())
}

fn run_bounds(exp: &Experiment, out_dir: &Path, summary: &mut Summary) -> Result<()> {
    summary.section("bounds");

    let expected = expected_transition(&exp.ensemble, &exp.scheme)?;
    let stationary = stationary_vector(&expected)?;
    let predicted = consensus_value(&stationary, &exp.x0)?;

    let mut bounds: Vec<BoundReport> =
        vec![perturbation_bound(&exp.ensemble, &exp.scheme, Some(&exp.x0))?];
    let one_sample_dwell = !exp.scheme.is_continuous() && exp.scheme.k_bar() == Some(1);
    match (exp.scenario_kind, one_sample_dwell) {
        (Some(FaultKind::Receive), true) => {
            bounds.push(receive_fault_bound(&exp.ensemble, &exp.scheme)?);
        }
        (Some(FaultKind::Send), true) => {
            bounds.push(send_fault_bound(&exp.ensemble, &exp.scheme)?);
        }
        (Some(_), false) => summary.line(
            "closed-form fault bound: not applicable (needs one sample per dwell interval)",
        ),
        (None, _) => {
            summary.line("closed-form fault bound: not applicable (explicit graph list)")
        }
    }

    summary.line(&format!("predicted consensus pi' x0: {predicted}"));
    for report in &bounds {
        summary.line(&format!(
            "{}: bound_e = {}, measured_e = {}, lambda_bar = {}",
            report.kind, report.bound_e, report.measured_e, report.lambda_bar
        ));
        summary.check(
            &format!("soundness ({})", report.kind),
            report.measured_e - report.bound_e <= SOUNDNESS_TOL,
            "bound_e dominates the measured stationary deviation",
        );
    }

    let document = BoundsDocument {
        config_digest: exp.config_digest.clone(),
        seed: exp.seed,
        n: exp.ensemble.n(),
        mode: match expected.mode() {
            TransitionMode::Sampled => "sampled",
            TransitionMode::ContinuousLimit => "continuous-limit",
        },
        h: exp.scheme.h(),
        k_bar: exp.scheme.k_bar(),
        dwell: exp.scheme.delta_t(),
        expected_transition: expected
            .w()
            .row_iter()
            .map(|row| row.iter().cloned().collect())
            .collect(),
        stationary: stationary.pi().iter().cloned().collect(),
        stationary_residual: stationary.residual(),
        predicted_consensus: predicted,
        bounds,
    };
    let path = out_dir.join("bounds.json");
    report::write_json(&path, &document)?;
    summary.wrote(&path);
    println!("wrote {}", path.display());
    Ok(())
}

fn run_montecarlo(exp: &Experiment, out_dir: &Path, summary: &mut Summary) -> Result<()> {
    summary.section("montecarlo");

    let stats = run_monte_carlo(
        &exp.ensemble,
        &exp.scheme,
        &exp.x0,
        exp.n_runs,
        exp.horizon,
        exp.seed,
        &exp.epsilons,
        exp.terminal_gap_threshold,
    )?;

    if let (Some(predicted), Some(deviation)) =
        (stats.predicted_consensus, stats.max_mean_deviation)
    {
        let worst_band = stats
            .std_error
            .iter()
            .fold(0.0f64, |a, &se| a.max(4.0 * se));
        summary.line(&format!(
            "mean terminal state vs prediction {predicted}: max deviation {deviation} \
             (4 standard errors: up to {worst_band})"
        ));
    }
    summary.line(&format!(
        "terminal gap: max {} over {} runs; {} runs below threshold {}",
        stats.terminal_gap_max, stats.n_runs, stats.runs_below_threshold,
        stats.terminal_gap_threshold
    ));
    for row in &stats.prob_exceed {
        summary.line(&format!(
            "P(gap >= {}) at interval {}: {}",
            row.epsilon, row.interval, row.probability
        ));
    }
    summary.check(
        "gap monotonicity (monte carlo)",
        stats.monotone_violations == 0,
        "per-run gap nonincreasing at every dwell boundary within 1e-12",
    );

    let document = MonteCarloDocument {
        config_digest: exp.config_digest.clone(),
        seed: exp.seed,
        stats,
    };
    let path = out_dir.join("montecarlo.json");
    report::write_json(&path, &document)?;
    summary.wrote(&path);
    println!("wrote {}", path.display());
    Ok(())
}
