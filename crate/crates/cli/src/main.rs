//! Command-line front end: synthetic simulation, replay of recorded
//! comparison logs, and self-validation checks.
//!
//! Exit codes: 0 on success, 1 on runtime or validation failure, 2 on usage
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use akgrank_core::belief::{
    exact_posterior_moments, mm_update_heterogeneous, mm_update_homogeneous, ComparisonRecord,
    DirichletBelief, HistoryState, OracleMethod, Outcome, WorkerBelief,
};
use akgrank_core::harness::{
    export, run_experiment, CustomWorld, EvalMode, ExperimentConfig, ExperimentReport,
    ExportFormat, ReplaySource, WorldSpec,
};
use akgrank_core::policy::PolicyKind;
use akgrank_core::ranking::{brute_force_max_lop, max_expected_accuracy};
use akgrank_core::specfn::pr_theta_greater;

const SEED_ENV: &str = "AKGRANK_SEED";

#[derive(Parser)]
#[command(
    name = "akgrank",
    version,
    about = "Active ranking from pairwise comparisons under a labeling budget"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic-world experiment and export plot-ready results
    Simulate(SimulateArgs),
    /// Replay a recorded comparison log, restricting policies to its entries
    Replay(ReplayArgs),
    /// Validate the closed-form belief updates against the exact posterior
    OracleCheck(OracleCheckArgs),
    /// Validate sort-based ranking against exhaustive linear ordering
    LopCheck(LopCheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of items K [default: from config; required]
    #[arg(long)]
    items: Option<usize>,
    /// Number of workers M; 0 = homogeneous setting [default: 0]
    #[arg(long)]
    workers: Option<usize>,
    /// Total comparison budget T [default: from config; required]
    #[arg(long)]
    budget: Option<usize>,
    /// Number of independent trials [default: 1]
    #[arg(long)]
    trials: Option<usize>,
    /// Policy: akg, random, distance, or akg-batch:B [default: akg]
    #[arg(long)]
    policy: Option<String>,
    /// Master seed [default: $AKGRANK_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Batch size; shorthand for --policy akg-batch:B
    #[arg(long)]
    batch: Option<usize>,
    /// World: uniform, close-extremes, or a path to a world JSON file
    /// [default: uniform]
    #[arg(long)]
    world: Option<String>,
    /// Accuracy metric: tau or ties [default: tau]
    #[arg(long)]
    eval: Option<String>,
    /// Output directory [default: akgrank-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    /// JSON config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comparison log CSV (header: item_a,item_b,worker,outcome)
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Optional ground-truth levels CSV (header: item,level)
    #[arg(long)]
    levels: Option<PathBuf>,
    /// Total comparison budget T [default: from config; required]
    #[arg(long)]
    budget: Option<usize>,
    /// 0 replays pairs only; any other value enables worker-aware replay
    /// with the worker set taken from the pool [default: 0]
    #[arg(long)]
    workers: Option<usize>,
    /// Number of independent trials [default: 1]
    #[arg(long)]
    trials: Option<usize>,
    /// Policy: akg, random, distance, or akg-batch:B [default: akg]
    #[arg(long)]
    policy: Option<String>,
    /// Master seed [default: $AKGRANK_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: akgrank-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Number of random single-observation cases [default: 50]
    #[arg(long, default_value_t = 50)]
    cases: usize,
    /// Master seed [default: $AKGRANK_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplicative perturbation injected into the projected parameters;
    /// a nonzero value is a negative control and must fail [default: 0]
    #[arg(long, default_value_t = 0.0)]
    perturb_mm: f64,
}

#[derive(Args)]
struct LopCheckArgs {
    /// Number of random parameter vectors [default: 200]
    #[arg(long, default_value_t = 200)]
    cases: usize,
    /// Largest item count to test; above 6 requires --force [default: 6]
    #[arg(long, default_value_t = 6)]
    max_items: usize,
    /// Allow item counts 7..=9 despite the factorial cost
    #[arg(long, default_value_t = false)]
    force: bool,
    /// Master seed [default: $AKGRANK_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
}

/// Usage problems exit with 2, runtime failures with 1.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Replay(args) => replay(args),
        Command::OracleCheck(args) => oracle_check(args),
        Command::LopCheck(args) => lop_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|v| v.parse().ok())
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).or_else(env_seed).unwrap_or(0)
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Optional experiment fields as they appear in a JSON config file.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    items: Option<usize>,
    workers: Option<usize>,
    budget: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    policy: Option<PolicyKind>,
    batch: Option<usize>,
    alpha0: Option<f64>,
    mu0: Option<f64>,
    nu0: Option<f64>,
    world: Option<WorldSpec>,
    eval: Option<EvalMode>,
    checkpoints: Option<Vec<usize>>,
    out: Option<PathBuf>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_policy(
    flag: Option<&str>,
    file: Option<PolicyKind>,
    batch: Option<usize>,
) -> Result<PolicyKind, CliError> {
    let mut policy = match flag {
        Some(s) => s
            .parse::<PolicyKind>()
            .map_err(|e| CliError::Usage(e.to_string()))?,
        None => file.unwrap_or(PolicyKind::Akg),
    };
    if let Some(b) = batch {
        policy = match policy {
            PolicyKind::Akg | PolicyKind::AkgBatch(_) if b > 1 => PolicyKind::AkgBatch(b),
            PolicyKind::Akg | PolicyKind::AkgBatch(_) => PolicyKind::Akg,
            other => {
                return Err(CliError::Usage(format!(
                    "--batch only applies to the akg policy, not {other}"
                )))
            }
        };
    }
    Ok(policy)
}

fn parse_world(flag: Option<&str>, file: Option<WorldSpec>) -> Result<WorldSpec, CliError> {
    match flag {
        None => Ok(file.unwrap_or(WorldSpec::Uniform)),
        Some("uniform") => Ok(WorldSpec::Uniform),
        Some("close-extremes") => Ok(WorldSpec::CloseExtremes),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("world file {path}: {e}")))?;
            let custom: CustomWorld = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("world file {path}: {e}")))?;
            Ok(WorldSpec::Custom(custom))
        }
    }
}

fn parse_eval(flag: Option<&str>, file: Option<EvalMode>) -> Result<EvalMode, CliError> {
    match flag {
        None => Ok(file.unwrap_or(EvalMode::Tau)),
        Some("tau") => Ok(EvalMode::Tau),
        Some("ties") => Ok(EvalMode::Ties),
        Some(other) => Err(CliError::Usage(format!(
            "--eval must be tau or ties, got {other}"
        ))),
    }
}

fn run_and_export(config: &ExperimentConfig, out: &PathBuf) -> Result<(), CliError> {
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match run_experiment(config) {
        Ok(report) => {
            write_report(&report, out)?;
            summarize(&report, out);
            Ok(())
        }
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                let partial_dir = out.join("partial");
                write_report(partial, &partial_dir)?;
                eprintln!(
                    "partial results over {} completed trials saved to {}",
                    partial.trials,
                    partial_dir.display()
                );
            }
            Err(CliError::Runtime(failure.to_string()))
        }
    }
}

fn write_report(report: &ExperimentReport, out: &PathBuf) -> Result<(), CliError> {
    for format in [ExportFormat::Csv, ExportFormat::Json] {
        export(report, out, format).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn summarize(report: &ExperimentReport, out: &PathBuf) {
    println!(
        "policy {} · {} items · {} workers · budget {} · {} trials (seed {})",
        report.policy, report.items, report.workers, report.budget, report.trials, report.seed
    );
    if let (Some(stage), Some(mean), Some(se)) = (
        report.checkpoints.last(),
        report.mean_accuracy.last(),
        report.stderr_accuracy.last(),
    ) {
        println!("accuracy at stage {stage}: {mean:.4} ± {se:.4}");
    } else {
        println!("no ground truth supplied; accuracy not evaluated");
    }
    if report.truncated_trials > 0 {
        println!(
            "{} of {} trials exhausted the action pool before the budget",
            report.truncated_trials, report.trials
        );
    }
    println!("results written to {}", out.display());
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    init_threads(args.threads)?;
    let file = load_file_config(args.config.as_ref())?;
    let items = args
        .items
        .or(file.items)
        .ok_or_else(|| CliError::Usage("--items is required".into()))?;
    let budget = args
        .budget
        .or(file.budget)
        .ok_or_else(|| CliError::Usage("--budget is required".into()))?;
    let config = ExperimentConfig {
        items,
        workers: args.workers.or(file.workers).unwrap_or(0),
        budget,
        trials: args.trials.or(file.trials).unwrap_or(1),
        seed: resolve_seed(args.seed, file.seed),
        policy: parse_policy(args.policy.as_deref(), file.policy, args.batch.or(file.batch))?,
        alpha0: file.alpha0.unwrap_or(1.0),
        mu0: file.mu0.unwrap_or(4.0),
        nu0: file.nu0.unwrap_or(1.0),
        world: parse_world(args.world.as_deref(), file.world)?,
        eval: parse_eval(args.eval.as_deref(), file.eval)?,
        checkpoints: file.checkpoints,
    };
    if config.is_replay() {
        return Err(CliError::Usage(
            "replay worlds belong to the replay subcommand".into(),
        ));
    }
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("akgrank-out"));
    run_and_export(&config, &out)
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    init_threads(args.threads)?;
    let file = load_file_config(args.config.as_ref())?;
    let file_replay = match &file.world {
        Some(WorldSpec::Replay(source)) => Some(source.clone()),
        Some(_) => {
            return Err(CliError::Usage(
                "replay config files must use a replay world".into(),
            ))
        }
        None => None,
    };
    let pool = args
        .pool
        .map(|p| p.display().to_string())
        .or_else(|| file_replay.as_ref().map(|r| r.pool.clone()))
        .ok_or_else(|| CliError::Usage("--pool is required".into()))?;
    let levels = args
        .levels
        .map(|p| p.display().to_string())
        .or_else(|| file_replay.as_ref().and_then(|r| r.levels.clone()));
    let budget = args
        .budget
        .or(file.budget)
        .ok_or_else(|| CliError::Usage("--budget is required".into()))?;
    let config = ExperimentConfig {
        items: 0, // inferred from the pool
        workers: args.workers.or(file.workers).unwrap_or(0),
        budget,
        trials: args.trials.or(file.trials).unwrap_or(1),
        seed: resolve_seed(args.seed, file.seed),
        policy: parse_policy(args.policy.as_deref(), file.policy, file.batch)?,
        alpha0: file.alpha0.unwrap_or(1.0),
        mu0: file.mu0.unwrap_or(4.0),
        nu0: file.nu0.unwrap_or(1.0),
        world: WorldSpec::Replay(ReplaySource { pool, levels }),
        eval: EvalMode::Ties,
        checkpoints: file.checkpoints,
    };
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("akgrank-out"));
    run_and_export(&config, &out)
}

const ORACLE_TOL: f64 = 1e-6;
const CONJUGACY_TOL: f64 = 1e-8;

fn oracle_check(args: OracleCheckArgs) -> Result<(), CliError> {
    if args.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let seed = resolve_seed(args.seed, None);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let run = |e: akgrank_core::Error| CliError::Runtime(e.to_string());

    let mut max_single = 0.0f64;
    let mut worst: Option<String> = None;
    for case in 0..args.cases {
        let k = if rng.gen_bool(0.5) { 2 } else { 3 };
        let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(0.9..4.0)).collect();
        let prior = DirichletBelief::new(alpha.clone()).map_err(run)?;
        let i = rng.gen_range(0..k - 1);
        let j = rng.gen_range(i + 1..k);
        let y = if rng.gen_bool(0.5) { Outcome::FirstWins } else { Outcome::SecondWins };
        let heterogeneous = case % 2 == 1;

        let perturb = |v: f64| v * (1.0 + args.perturb_mm);
        let mut discrepancy = 0.0f64;
        if heterogeneous {
            let wb = WorkerBelief::new(rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0))
                .map_err(run)?;
            let (proj, proj_w) = mm_update_heterogeneous(&prior, &wb, i, j, y).map_err(run)?;
            let mut history = HistoryState::heterogeneous(k, 1).map_err(run)?;
            history
                .record(ComparisonRecord::new(i, j, Some(0), y).map_err(run)?)
                .map_err(run)?;
            let report = exact_posterior_moments(
                &prior,
                &history,
                Some(std::slice::from_ref(&wb)),
                OracleMethod::Quadrature,
                600,
            )
            .map_err(run)?;
            for (got, want) in proj.means().iter().zip(&report.item_means) {
                discrepancy = discrepancy.max((perturb(*got) - want).abs());
            }
            discrepancy = discrepancy
                .max((perturb(proj.sum_second_moments()) - report.sum_second_moments).abs());
            discrepancy = discrepancy.max((perturb(proj_w.mean()) - report.workers[0].rho_mean).abs());
            discrepancy = discrepancy.max(
                (perturb(proj_w.symmetric_second_moment())
                    - report.workers[0].rho_symmetric_second)
                    .abs(),
            );
        } else {
            let proj = mm_update_homogeneous(&prior, i, j, y).map_err(run)?;
            let mut history = HistoryState::homogeneous(k).map_err(run)?;
            history
                .record(ComparisonRecord::new(i, j, None, y).map_err(run)?)
                .map_err(run)?;
            let report =
                exact_posterior_moments(&prior, &history, None, OracleMethod::Quadrature, 600)
                    .map_err(run)?;
            for (got, want) in proj.means().iter().zip(&report.item_means) {
                discrepancy = discrepancy.max((perturb(*got) - want).abs());
            }
            discrepancy = discrepancy
                .max((perturb(proj.sum_second_moments()) - report.sum_second_moments).abs());
        }
        if discrepancy > max_single {
            max_single = discrepancy;
            worst = Some(format!(
                "case {case}: K={k} pair=({i},{j}) outcome={} heterogeneous={heterogeneous} prior={alpha:?}",
                if y == Outcome::FirstWins { 1 } else { -1 },
            ));
        }
    }

    // Iterated two-item updates must reproduce the conjugate posterior.
    let mut max_conjugacy = 0.0f64;
    for _ in 0..100 {
        let a = rng.gen_range(0.5..3.0);
        let b = rng.gen_range(0.5..3.0);
        let mut belief = DirichletBelief::new(vec![a, b]).map_err(run)?;
        let mut wins = [0u32; 2];
        for _ in 0..50 {
            let y = if rng.gen_bool(0.5) { Outcome::FirstWins } else { Outcome::SecondWins };
            wins[if y == Outcome::FirstWins { 0 } else { 1 }] += 1;
            belief = mm_update_homogeneous(&belief, 0, 1, y).map_err(run)?;
        }
        max_conjugacy = max_conjugacy
            .max((belief.alpha()[0] - (a + wins[0] as f64)).abs())
            .max((belief.alpha()[1] - (b + wins[1] as f64)).abs());
    }

    println!(
        "single-observation moment match over {} cases: max discrepancy {max_single:.3e} (tolerance {ORACLE_TOL:.0e})",
        args.cases
    );
    println!(
        "two-item conjugacy over 100 sequences of 50: max parameter error {max_conjugacy:.3e} (tolerance {CONJUGACY_TOL:.0e})"
    );
    if max_single <= ORACLE_TOL && max_conjugacy <= CONJUGACY_TOL {
        println!("oracle-check: OK");
        Ok(())
    } else {
        if let Some(worst) = worst {
            eprintln!("worst case: {worst}");
        }
        Err(CliError::Runtime("oracle-check failed".into()))
    }
}

const LOP_TOL: f64 = 1e-12;
const LOP_FORCE_LIMIT: usize = 9;

fn lop_check(args: LopCheckArgs) -> Result<(), CliError> {
    if args.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    if args.max_items < 3 {
        return Err(CliError::Usage("--max-items must be at least 3".into()));
    }
    if args.max_items > LOP_FORCE_LIMIT {
        return Err(CliError::Usage(format!(
            "item counts above {LOP_FORCE_LIMIT} are not enumerable"
        )));
    }
    if args.max_items > 6 && !args.force {
        return Err(CliError::Usage(format!(
            "item count {} needs --force (factorial enumeration)",
            args.max_items
        )));
    }
    let seed = resolve_seed(args.seed, None);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let run = |e: akgrank_core::Error| CliError::Runtime(e.to_string());

    let mut max_gap = 0.0f64;
    for _ in 0..args.cases {
        let k = rng.gen_range(3..=args.max_items);
        let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..10.0)).collect();
        let belief = DirichletBelief::new(alpha.clone()).map_err(run)?;
        let mut p = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    p[i * k + j] = pr_theta_greater(alpha[i], alpha[j]).map_err(run)?.value();
                }
            }
        }
        let (_, best) = brute_force_max_lop(&p, k).map_err(run)?;
        let sorted = max_expected_accuracy(&belief).map_err(run)?.value();
        let gap = (best - sorted).abs();
        if gap > max_gap {
            max_gap = gap;
        }
        if gap > LOP_TOL {
            eprintln!("sort objective {sorted} misses brute-force optimum {best} for alpha {alpha:?}");
            return Err(CliError::Runtime("lop-check failed".into()));
        }
    }
    println!(
        "sort-based ranking matched the exhaustive optimum on {} cases (max gap {max_gap:.3e})",
        args.cases
    );
    println!("lop-check: OK");
    Ok(())
}
