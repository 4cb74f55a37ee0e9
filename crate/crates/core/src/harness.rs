//! Experiment runner: executes (policy × environment) over a budget of
//! stages and many trials, collects accuracy trajectories, pair-frequency
//! matrices and worker-assignment counts, and persists results.
//!
//! Trials are independent: each derives its own RNG streams from
//! (seed, trial index), so runs are reproducible and two policies compared
//! under the same seed see identical worlds. Trials execute in parallel; the
//! aggregation is a deterministic reduce ordered by trial index.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{
    mm_update_heterogeneous, mm_update_homogeneous, BeliefSnapshot, ComparisonRecord,
    DirichletBelief, HistoryState, Outcome, WorkerBelief,
};
use crate::policy::{
    akg_select_heterogeneous, akg_select_homogeneous, distance_select, random_select, top_b_batch,
    AvailabilitySet, Decision, PolicyKind,
};
use crate::ranking::{kendall_tau, optimal_ranking, tie_tolerant_accuracy, Ranking, ScoreLevels};
use crate::simenv::{
    close_extremes_world, sample_true_world, simulate_label, ReliabilitySpec, ReplayPool,
    TrueWorld,
};
use crate::{Error, Result};

/// Ground-truth source for an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldSpec {
    /// Scores uniform on the simplex; reliabilities Beta(4, 1) when workers
    /// are present.
    Uniform,
    /// The preset with near-tied extremes: the two worst and two best items
    /// sit 1e-3 apart in relative score.
    CloseExtremes,
    /// Fixed scores and/or reliabilities; unset parts are sampled per trial.
    Custom(CustomWorld),
    /// Pre-collected comparisons served from a CSV log.
    Replay(ReplaySource),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CustomWorld {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<Vec<f64>>,
    /// Beta parameters used to draw reliabilities when `rho` is unset.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_beta: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySource {
    pub pool: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub levels: Option<String>,
}

/// How checkpoint accuracies are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Agreement with the true ranking over all pairs.
    Tau,
    /// Agreement with ordinal levels, crediting tied pairs.
    Ties,
}

fn default_trials() -> usize {
    1
}
fn default_alpha0() -> f64 {
    1.0
}
fn default_mu0() -> f64 {
    4.0
}
fn default_nu0() -> f64 {
    1.0
}
fn default_world() -> WorldSpec {
    WorldSpec::Uniform
}
fn default_eval() -> EvalMode {
    EvalMode::Tau
}
fn default_policy() -> PolicyKind {
    PolicyKind::Akg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Number of items K. Ignored (inferred from the pool) in replay mode.
    pub items: usize,
    /// Number of workers M; 0 selects the homogeneous setting. In replay
    /// mode any nonzero value selects worker-aware replay with M inferred
    /// from the pool.
    #[serde(default)]
    pub workers: usize,
    /// Total number of comparisons T.
    pub budget: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Prior fill value for every Dirichlet component.
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_mu0")]
    pub mu0: f64,
    #[serde(default = "default_nu0")]
    pub nu0: f64,
    #[serde(default = "default_world")]
    pub world: WorldSpec,
    #[serde(default = "default_eval")]
    pub eval: EvalMode,
    /// Stages at which accuracy is evaluated; defaults to every stage for
    /// K ≤ 25 and every tenth stage otherwise.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoints: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn is_replay(&self) -> bool {
        matches!(self.world, WorldSpec::Replay(_))
    }

    pub fn is_heterogeneous(&self) -> bool {
        self.workers > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(Error::Config(format!("alpha0 must be > 0, got {}", self.alpha0)));
        }
        if !(self.mu0.is_finite() && self.mu0 > 0.0) || !(self.nu0.is_finite() && self.nu0 > 0.0) {
            return Err(Error::Config("worker priors mu0, nu0 must be > 0".into()));
        }
        if let Some(cps) = &self.checkpoints {
            if cps.iter().any(|&c| c == 0 || c > self.budget) {
                return Err(Error::Config(format!(
                    "checkpoints must lie in 1..={}",
                    self.budget
                )));
            }
        }
        if self.is_heterogeneous() {
            match self.policy {
                PolicyKind::Akg | PolicyKind::Random => {}
                other => {
                    return Err(Error::Config(format!(
                        "policy {other} is supported only in the homogeneous setting"
                    )))
                }
            }
        }

        if !self.is_replay() {
            if self.items < 2 {
                return Err(Error::Config(format!(
                    "items must be at least 2, got {}",
                    self.items
                )));
            }
            let pairs = self.items * (self.items - 1) / 2;
            if self.is_heterogeneous() && self.budget > self.workers * pairs {
                return Err(Error::Config(format!(
                    "budget {} exceeds the {} available (pair, worker) cells",
                    self.budget,
                    self.workers * pairs
                )));
            }
            if let PolicyKind::AkgBatch(b) = self.policy {
                if b > pairs {
                    return Err(Error::Config(format!(
                        "batch size {b} exceeds the {pairs} pairs"
                    )));
                }
            }
            if self.eval == EvalMode::Ties {
                return Err(Error::Config(
                    "tie-tolerant evaluation needs a replay pool with levels".into(),
                ));
            }
            if let WorldSpec::Custom(custom) = &self.world {
                if let Some(theta) = &custom.theta {
                    TrueWorld::new(theta.clone(), None)?;
                    if theta.len() != self.items {
                        return Err(Error::Config(format!(
                            "fixed theta has {} entries for {} items",
                            theta.len(),
                            self.items
                        )));
                    }
                }
                if let Some(rho) = &custom.rho {
                    if rho.len() != self.workers {
                        return Err(Error::Config(format!(
                            "fixed rho has {} entries for {} workers",
                            rho.len(),
                            self.workers
                        )));
                    }
                    if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
                        return Err(Error::Config("rho entries must lie in [0, 1]".into()));
                    }
                }
                if let Some((a, b)) = custom.rho_beta {
                    if a <= 0.0 || b <= 0.0 {
                        return Err(Error::Config("rho_beta parameters must be > 0".into()));
                    }
                }
            }
        } else if self.eval == EvalMode::Tau {
            return Err(Error::Config(
                "replay mode has no true ranking; use tie-tolerant evaluation".into(),
            ));
        }
        Ok(())
    }

    fn resolved_checkpoints(&self, k: usize) -> Vec<usize> {
        let mut cps = match &self.checkpoints {
            Some(explicit) => explicit.clone(),
            None if k <= 25 => (1..=self.budget).collect(),
            None => {
                let mut v: Vec<usize> = (1..=self.budget / 10).map(|i| i * 10).collect();
                v.push(self.budget);
                v
            }
        };
        cps.sort_unstable();
        cps.dedup();
        cps
    }
}

/// Everything observed in one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    /// (stage, accuracy) at each checkpoint reached; empty when the
    /// environment carries no ground truth.
    pub accuracy: Vec<(usize, f64)>,
    pub final_ranking: Ranking,
    /// K×K matrix, upper triangle: comparisons spent on each pair.
    pub pair_counts: Vec<u32>,
    /// Comparisons answered by each worker; empty in the homogeneous
    /// setting.
    pub worker_counts: Vec<u32>,
    /// Wall-clock seconds per executed stage.
    pub stage_seconds: Vec<f64>,
    /// The sampled ground truth; absent in replay mode.
    pub true_world: Option<TrueWorld>,
    pub final_belief: BeliefSnapshot,
    /// Realized number of comparisons; less than the budget if the action
    /// pool ran dry.
    pub realized_budget: usize,
    pub truncated: bool,
}

/// A trial failure, carrying whatever completed before it.
#[derive(Debug)]
pub struct TrialFailure {
    pub trial_index: usize,
    pub error: Error,
    /// Aggregate over the trials that completed, when any did.
    pub partial: Option<ExperimentReport>,
}

impl std::fmt::Display for TrialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "trial {} failed: {}", self.trial_index, self.error)
    }
}

impl std::error::Error for TrialFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

enum Environment {
    Synthetic(Box<TrueWorld>),
    Replay(Box<ReplayPool>),
}

fn make_world(config: &ExperimentConfig, rng: &mut ChaCha12Rng) -> Result<TrueWorld> {
    match &config.world {
        WorldSpec::Uniform => sample_true_world(
            config.items,
            config.workers,
            &ReliabilitySpec::Beta(4.0, 1.0),
            rng,
        ),
        WorldSpec::CloseExtremes => {
            close_extremes_world(config.items, config.workers, None)
        }
        WorldSpec::Custom(custom) => {
            let theta = match &custom.theta {
                Some(t) => t.clone(),
                None => {
                    sample_true_world(config.items, 0, &ReliabilitySpec::Beta(4.0, 1.0), rng)?
                        .theta
                }
            };
            let rho = if config.workers == 0 {
                None
            } else {
                Some(match &custom.rho {
                    Some(r) => r.clone(),
                    None => {
                        let (a, b) = custom.rho_beta.unwrap_or((4.0, 1.0));
                        sample_true_world(2, config.workers, &ReliabilitySpec::Beta(a, b), rng)?
                            .rho
                            .expect("workers requested")
                    }
                })
            };
            TrueWorld::new(theta, rho)
        }
        WorldSpec::Replay(_) => Err(Error::Config(
            "replay environments are resolved from the pool, not sampled".into(),
        )),
    }
}

fn load_pool(source: &ReplaySource) -> Result<ReplayPool> {
    let mut pool = ReplayPool::load_csv(&source.pool)?;
    if let Some(levels) = &source.levels {
        pool.load_levels(levels)?;
    }
    Ok(pool)
}

struct TrialRunner<'a> {
    config: &'a ExperimentConfig,
    env: Environment,
    k: usize,
    workers: usize,
    heterogeneous: bool,
    levels: Option<ScoreLevels>,
    checkpoints: Vec<usize>,
}

impl<'a> TrialRunner<'a> {
    fn new(config: &'a ExperimentConfig, trial_index: usize, pool: Option<&ReplayPool>) -> Result<Self> {
        // Stream 2t draws the world, stream 2t+1 drives labels and random
        // selections, so policies paired on a seed see identical worlds.
        let mut world_rng = trial_rng(config.seed, trial_index, 0);
        let (env, k, workers, levels) = match pool {
            Some(pool) => {
                let pool = pool.clone();
                let workers = if config.is_heterogeneous() { pool.worker_count() } else { 0 };
                let levels = pool.levels().cloned();
                (Environment::Replay(Box::new(pool.clone())), pool.k(), workers, levels)
            }
            None => {
                let world = make_world(config, &mut world_rng)?;
                (
                    Environment::Synthetic(Box::new(world)),
                    config.items,
                    config.workers,
                    None,
                )
            }
        };
        let checkpoints = config.resolved_checkpoints(k);
        Ok(TrialRunner {
            config,
            env,
            k,
            workers,
            heterogeneous: workers > 0,
            levels,
            checkpoints,
        })
    }

    fn availability(&self, history: &HistoryState) -> AvailabilitySet {
        match &self.env {
            Environment::Synthetic(_) => {
                if self.heterogeneous {
                    AvailabilitySet::fresh_triplets(self.k, self.workers, history)
                } else {
                    AvailabilitySet::all_pairs(self.k)
                }
            }
            Environment::Replay(pool) => {
                if self.heterogeneous {
                    pool.available_triplets()
                } else {
                    pool.available_pairs()
                }
            }
        }
    }

    fn observe(&mut self, decision: &Decision, rng: &mut ChaCha12Rng) -> Result<Outcome> {
        match &mut self.env {
            Environment::Synthetic(world) => {
                simulate_label(world, decision.i, decision.j, decision.worker, rng)
            }
            Environment::Replay(pool) => pool.consume(decision),
        }
    }

    fn evaluate(&self, belief: &DirichletBelief) -> Option<f64> {
        let ranking = optimal_ranking(belief);
        match (&self.env, self.config.eval) {
            (Environment::Synthetic(world), EvalMode::Tau) => {
                Some(kendall_tau(&ranking, &world.true_ranking()).ok()?.value())
            }
            (Environment::Replay(_), EvalMode::Ties) => {
                let levels = self.levels.as_ref()?;
                Some(tie_tolerant_accuracy(&ranking, levels).ok()?.value())
            }
            _ => None,
        }
    }

    fn run(mut self, trial_index: usize) -> Result<TrialResult> {
        let config = self.config;
        let mut label_rng = trial_rng(config.seed, trial_index, 1);
        let mut belief = DirichletBelief::filled(self.k, config.alpha0)?;
        let mut worker_beliefs = vec![
            WorkerBelief::new(config.mu0, config.nu0)?;
            if self.heterogeneous { self.workers } else { 0 }
        ];
        let mut history = if self.heterogeneous {
            HistoryState::heterogeneous(self.k, self.workers)?
        } else {
            HistoryState::homogeneous(self.k)?
        };

        let mut pair_counts = vec![0u32; self.k * self.k];
        let mut worker_counts = vec![0u32; worker_beliefs.len()];
        let mut accuracy = Vec::new();
        let mut stage_seconds = Vec::new();
        let mut truncated = false;
        let mut next_checkpoint = 0usize;

        while history.stage() < config.budget {
            let stage_start = Instant::now();
            let avail = self.availability(&history);
            if avail.is_empty() {
                truncated = true;
                break;
            }

            let decisions: Vec<Decision> = match config.policy {
                PolicyKind::Akg => {
                    if self.heterogeneous {
                        vec![akg_select_heterogeneous(&belief, &worker_beliefs, &avail)?]
                    } else {
                        vec![akg_select_homogeneous(&belief, &avail)?]
                    }
                }
                PolicyKind::Random => vec![random_select(&avail, &mut label_rng)?],
                PolicyKind::Distance => vec![distance_select(&belief, &avail)?],
                PolicyKind::AkgBatch(b) => {
                    let take = b.min(config.budget - history.stage()).min(avail.len());
                    top_b_batch(&belief, &avail, take)?
                }
            };
            let batch_len = decisions.len();
            let per_stage = stage_start.elapsed().as_secs_f64() / batch_len as f64;

            for decision in decisions {
                let outcome = self.observe(&decision, &mut label_rng)?;
                history.record(ComparisonRecord::new(
                    decision.i,
                    decision.j,
                    decision.worker,
                    outcome,
                )?)?;
                pair_counts[decision.i * self.k + decision.j] += 1;
                if let Some(w) = decision.worker {
                    worker_counts[w] += 1;
                }
                match decision.worker {
                    Some(w) => {
                        let (b, wb) = mm_update_heterogeneous(
                            &belief,
                            &worker_beliefs[w],
                            decision.i,
                            decision.j,
                            outcome,
                        )?;
                        belief = b;
                        worker_beliefs[w] = wb;
                    }
                    None => {
                        belief = mm_update_homogeneous(&belief, decision.i, decision.j, outcome)?;
                    }
                }
                stage_seconds.push(per_stage);

                let stage = history.stage();
                while next_checkpoint < self.checkpoints.len()
                    && self.checkpoints[next_checkpoint] <= stage
                {
                    if self.checkpoints[next_checkpoint] == stage {
                        if let Some(acc) = self.evaluate(&belief) {
                            accuracy.push((stage, acc));
                        }
                    }
                    next_checkpoint += 1;
                }
            }
        }

        let realized = history.stage();
        Ok(TrialResult {
            accuracy,
            final_ranking: optimal_ranking(&belief),
            pair_counts,
            worker_counts,
            stage_seconds,
            true_world: match &self.env {
                Environment::Synthetic(world) => Some((**world).clone()),
                Environment::Replay(_) => None,
            },
            final_belief: BeliefSnapshot::new(&belief, &worker_beliefs, realized),
            realized_budget: realized,
            truncated,
        })
    }
}

fn trial_rng(seed: u64, trial_index: usize, substream: u64) -> ChaCha12Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(trial_index as u64 * 2 + substream);
    rng
}

/// Runs one trial of the configured experiment. Deterministic in
/// (config, trial_index).
pub fn run_trial(config: &ExperimentConfig, trial_index: usize) -> Result<TrialResult> {
    config.validate()?;
    let pool = match &config.world {
        WorldSpec::Replay(source) => Some(load_pool(source)?),
        _ => None,
    };
    TrialRunner::new(config, trial_index, pool.as_ref())?.run(trial_index)
}

/// Aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub policy: String,
    pub items: usize,
    pub workers: usize,
    pub budget: usize,
    pub trials: usize,
    pub seed: u64,
    /// Expected accuracy of the prior belief before any comparison: a
    /// constant offset shared by every policy.
    pub prior_expected_accuracy: f64,
    /// Checkpoints reached by every trial.
    pub checkpoints: Vec<usize>,
    pub mean_accuracy: Vec<f64>,
    pub stderr_accuracy: Vec<f64>,
    /// K×K upper-triangle matrix of per-pair comparison counts, averaged
    /// over trials.
    pub mean_pair_counts: Vec<f64>,
    /// Per-worker comparison counts averaged over trials; empty in the
    /// homogeneous setting.
    pub mean_worker_counts: Vec<f64>,
    pub trial_final_accuracy: Vec<Option<f64>>,
    pub truncated_trials: usize,
}

fn aggregate(
    config: &ExperimentConfig,
    k: usize,
    workers: usize,
    results: &[TrialResult],
) -> Result<ExperimentReport> {
    let prior = DirichletBelief::filled(k, config.alpha0)?;
    let prior_acc = crate::ranking::max_expected_accuracy(&prior)?.value();

    // Keep the checkpoints every surviving trial reached.
    let mut checkpoints: Vec<usize> = match results.first() {
        Some(first) => first.accuracy.iter().map(|(s, _)| *s).collect(),
        None => Vec::new(),
    };
    for r in results {
        let reached: std::collections::HashSet<usize> =
            r.accuracy.iter().map(|(s, _)| *s).collect();
        checkpoints.retain(|s| reached.contains(s));
    }

    let n = results.len() as f64;
    let mut mean_accuracy = Vec::with_capacity(checkpoints.len());
    let mut stderr_accuracy = Vec::with_capacity(checkpoints.len());
    for &stage in &checkpoints {
        let values: Vec<f64> = results
            .iter()
            .map(|r| {
                r.accuracy
                    .iter()
                    .find(|(s, _)| *s == stage)
                    .map(|(_, a)| *a)
                    .expect("checkpoint present in every trial")
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean_accuracy.push(mean);
        stderr_accuracy.push((var / n).sqrt());
    }

    let mut mean_pair_counts = vec![0.0; k * k];
    for r in results {
        for (acc, c) in mean_pair_counts.iter_mut().zip(&r.pair_counts) {
            *acc += *c as f64;
        }
    }
    for v in mean_pair_counts.iter_mut() {
        *v /= n;
    }

    let mut mean_worker_counts = vec![0.0; workers];
    for r in results {
        for (acc, c) in mean_worker_counts.iter_mut().zip(&r.worker_counts) {
            *acc += *c as f64;
        }
    }
    for v in mean_worker_counts.iter_mut() {
        *v /= n;
    }

    Ok(ExperimentReport {
        policy: config.policy.to_string(),
        items: k,
        workers,
        budget: config.budget,
        trials: results.len(),
        seed: config.seed,
        prior_expected_accuracy: prior_acc,
        checkpoints,
        mean_accuracy,
        stderr_accuracy,
        mean_pair_counts,
        mean_worker_counts,
        trial_final_accuracy: results
            .iter()
            .map(|r| r.accuracy.last().map(|(_, a)| *a))
            .collect(),
        truncated_trials: results.iter().filter(|r| r.truncated).count(),
    })
}

/// Runs all trials (in parallel) and aggregates. On a trial failure the
/// error carries the aggregate of the trials that did complete.
pub fn run_experiment(
    config: &ExperimentConfig,
) -> std::result::Result<ExperimentReport, TrialFailure> {
    let fail = |error: Error| TrialFailure { trial_index: 0, error, partial: None };
    config.validate().map_err(fail)?;
    let pool = match &config.world {
        WorldSpec::Replay(source) => Some(load_pool(source).map_err(fail)?),
        _ => None,
    };

    let outcomes: Vec<Result<TrialResult>> = (0..config.trials)
        .into_par_iter()
        .map(|t| TrialRunner::new(config, t, pool.as_ref())?.run(t))
        .collect();

    let (k, workers) = match &pool {
        Some(p) => (p.k(), if config.is_heterogeneous() { p.worker_count() } else { 0 }),
        None => (config.items, config.workers),
    };

    let mut completed = Vec::with_capacity(outcomes.len());
    let mut failure: Option<(usize, Error)> = None;
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => completed.push(r),
            Err(e) => {
                failure.get_or_insert((idx, e));
            }
        }
    }
    match failure {
        None => aggregate(config, k, workers, &completed).map_err(fail),
        Some((trial_index, error)) => {
            let partial = if completed.is_empty() {
                None
            } else {
                aggregate(config, k, workers, &completed).ok()
            };
            Err(TrialFailure { trial_index, error, partial })
        }
    }
}

/// Run everything and return both the aggregate and the raw trials, for
/// callers that need per-trial detail (budget heat maps, paired analyses).
pub fn run_experiment_with_trials(
    config: &ExperimentConfig,
) -> std::result::Result<(ExperimentReport, Vec<TrialResult>), TrialFailure> {
    let fail = |error: Error| TrialFailure { trial_index: 0, error, partial: None };
    config.validate().map_err(fail)?;
    let pool = match &config.world {
        WorldSpec::Replay(source) => Some(load_pool(source).map_err(fail)?),
        _ => None,
    };
    let outcomes: Vec<Result<TrialResult>> = (0..config.trials)
        .into_par_iter()
        .map(|t| TrialRunner::new(config, t, pool.as_ref())?.run(t))
        .collect();
    let (k, workers) = match &pool {
        Some(p) => (p.k(), if config.is_heterogeneous() { p.worker_count() } else { 0 }),
        None => (config.items, config.workers),
    };
    let mut completed = Vec::with_capacity(outcomes.len());
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => completed.push(r),
            Err(error) => {
                let partial = if completed.is_empty() {
                    None
                } else {
                    aggregate(config, k, workers, &completed).ok()
                };
                return Err(TrialFailure { trial_index: idx, error, partial });
            }
        }
    }
    let report = aggregate(config, k, workers, &completed).map_err(fail)?;
    Ok((report, completed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Writes the report under `dir`: `accuracy.csv` (long form), a
/// `frequency.csv` grid, `worker_counts.csv` when workers exist, and
/// `report.json`. Output is byte-stable for identical reports.
pub fn export(report: &ExperimentReport, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, contents: String| -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    };

    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            let mut acc = String::from("policy,stage,mean,stderr\n");
            for ((stage, mean), se) in report
                .checkpoints
                .iter()
                .zip(&report.mean_accuracy)
                .zip(&report.stderr_accuracy)
            {
                acc.push_str(&format!("{},{},{},{}\n", report.policy, stage, mean, se));
            }
            written.push(write("accuracy.csv", acc)?);

            let k = report.items;
            let mut freq = String::new();
            for i in 0..k {
                let row: Vec<String> = (0..k)
                    .map(|j| format!("{}", report.mean_pair_counts[i * k + j]))
                    .collect();
                freq.push_str(&row.join(","));
                freq.push('\n');
            }
            written.push(write("frequency.csv", freq)?);

            if !report.mean_worker_counts.is_empty() {
                let mut wc = String::from("worker,mean_count\n");
                for (w, c) in report.mean_worker_counts.iter().enumerate() {
                    wc.push_str(&format!("{w},{c}\n"));
                }
                written.push(write("worker_counts.csv", wc)?);
            }
        }
        ExportFormat::Json => {
            let mut json = serde_json::to_string_pretty(report)?;
            json.push('\n');
            written.push(write("report.json", json)?);
        }
    }
    Ok(written)
}
