//! Posterior state over item scores and worker reliability.
//!
//! Item scores carry a Dirichlet belief and each worker's reliability a Beta
//! belief. Observing one comparison does not keep the posterior in either
//! family, so the posterior is projected back by matching moments: per-item
//! means plus the summed second moment on the Dirichlet side, and the mean
//! plus E[ρ² + (1−ρ)²] on the Beta side. Both projections have closed forms.
//!
//! Beliefs are immutable snapshots; updates return new values. The exact
//! (non-projected) posterior is available from [`oracle`] for validation.

mod oracle;

pub use oracle::{
    exact_posterior_moments, MomentReport, MomentStdErrors, OracleMethod, WorkerMoments,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dirichlet parameter vector over K item scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletBelief {
    alpha: Vec<f64>,
}

impl DirichletBelief {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Domain(format!(
                "a Dirichlet belief needs at least 2 items, got {}",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a <= 0.0) {
            return Err(Error::Domain(format!(
                "Dirichlet parameters must be finite and > 0, got {bad}"
            )));
        }
        Ok(DirichletBelief { alpha })
    }

    /// All-ones parameters: the uniform distribution on the simplex.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn filled(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Sum of the parameter vector.
    pub fn alpha0(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Posterior mean of each item score.
    pub fn means(&self) -> Vec<f64> {
        let a0 = self.alpha0();
        self.alpha.iter().map(|a| a / a0).collect()
    }

    /// E[Σ_k θ_k²] under this belief.
    pub fn sum_second_moments(&self) -> f64 {
        let a0 = self.alpha0();
        self.alpha
            .iter()
            .map(|a| a * (a + 1.0) / (a0 * (a0 + 1.0)))
            .sum()
    }
}

impl TryFrom<Vec<f64>> for DirichletBelief {
    type Error = Error;
    fn try_from(alpha: Vec<f64>) -> Result<Self> {
        DirichletBelief::new(alpha)
    }
}

impl From<DirichletBelief> for Vec<f64> {
    fn from(b: DirichletBelief) -> Vec<f64> {
        b.alpha
    }
}

/// Beta parameters for one worker's reliability ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerBelief {
    pub mu: f64,
    pub nu: f64,
}

impl WorkerBelief {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !mu.is_finite() || !nu.is_finite() || mu <= 0.0 || nu <= 0.0 {
            return Err(Error::Domain(format!(
                "worker belief parameters must be finite and > 0, got ({mu}, {nu})"
            )));
        }
        Ok(WorkerBelief { mu, nu })
    }

    /// Posterior mean of ρ.
    pub fn mean(&self) -> f64 {
        self.mu / (self.mu + self.nu)
    }

    /// E[ρ² + (1−ρ)²], the second moment pair tracked by the projection.
    pub fn symmetric_second_moment(&self) -> f64 {
        let s = self.mu + self.nu;
        (self.mu * (self.mu + 1.0) + self.nu * (self.nu + 1.0)) / (s * (s + 1.0))
    }
}

/// Result of one pairwise comparison: which of the two presented items won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Outcome {
    /// The lower-indexed item of the pair was preferred (+1).
    FirstWins,
    /// The higher-indexed item was preferred (−1).
    SecondWins,
}

impl Outcome {
    pub fn sign(self) -> f64 {
        match self {
            Outcome::FirstWins => 1.0,
            Outcome::SecondWins => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::FirstWins => Outcome::SecondWins,
            Outcome::SecondWins => Outcome::FirstWins,
        }
    }
}

impl From<Outcome> for i8 {
    fn from(o: Outcome) -> i8 {
        match o {
            Outcome::FirstWins => 1,
            Outcome::SecondWins => -1,
        }
    }
}

impl TryFrom<i8> for Outcome {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Outcome::FirstWins),
            -1 => Ok(Outcome::SecondWins),
            other => Err(Error::Domain(format!("outcome must be 1 or -1, got {other}"))),
        }
    }
}

/// One observed comparison: pair (i, j) with i < j, the worker that produced
/// it (absent in the homogeneous setting), and who won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub i: usize,
    pub j: usize,
    pub worker: Option<usize>,
    pub outcome: Outcome,
}

impl ComparisonRecord {
    pub fn new(i: usize, j: usize, worker: Option<usize>, outcome: Outcome) -> Result<Self> {
        if i >= j {
            return Err(Error::Domain(format!(
                "comparison records require i < j, got ({i}, {j})"
            )));
        }
        Ok(ComparisonRecord { i, j, worker, outcome })
    }

    /// Index of the preferred item.
    pub fn winner(&self) -> usize {
        match self.outcome {
            Outcome::FirstWins => self.i,
            Outcome::SecondWins => self.j,
        }
    }

    pub fn loser(&self) -> usize {
        match self.outcome {
            Outcome::FirstWins => self.j,
            Outcome::SecondWins => self.i,
        }
    }
}

/// Accumulated comparison outcomes.
///
/// Keeps the aggregated K×K count matrix (entry (i, j) = number of times i
/// was preferred to j), the full record log, and, in the heterogeneous
/// setting, the set of (pair, worker) cells already spent — each worker may
/// compare a given pair at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    k: usize,
    workers: Option<usize>,
    counts: Vec<u32>,
    used: HashSet<(usize, usize, usize)>,
    records: Vec<ComparisonRecord>,
}

impl HistoryState {
    pub fn homogeneous(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("need at least 2 items, got {k}")));
        }
        Ok(HistoryState {
            k,
            workers: None,
            counts: vec![0; k * k],
            used: HashSet::new(),
            records: Vec::new(),
        })
    }

    pub fn heterogeneous(k: usize, workers: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("need at least 2 items, got {k}")));
        }
        if workers == 0 {
            return Err(Error::Domain("need at least 1 worker".into()));
        }
        Ok(HistoryState {
            k,
            workers: Some(workers),
            counts: vec![0; k * k],
            used: HashSet::new(),
            records: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of workers in the heterogeneous setting, `None` otherwise.
    pub fn worker_count(&self) -> Option<usize> {
        self.workers
    }

    pub fn is_heterogeneous(&self) -> bool {
        self.workers.is_some()
    }

    /// Stage index: total number of recorded comparisons.
    pub fn stage(&self) -> usize {
        self.records.len()
    }

    /// Number of times item `winner` was preferred to item `loser`.
    pub fn count(&self, winner: usize, loser: usize) -> u32 {
        self.counts[winner * self.k + loser]
    }

    /// Aggregated K×K count matrix in row-major order.
    pub fn count_matrix(&self) -> &[u32] {
        &self.counts
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    /// Whether worker `w` has already compared the pair (i, j).
    pub fn pair_worker_used(&self, i: usize, j: usize, w: usize) -> bool {
        self.used.contains(&(i, j, w))
    }

    /// Appends one comparison, advancing the stage by one.
    pub fn record(&mut self, rec: ComparisonRecord) -> Result<()> {
        if rec.j >= self.k {
            return Err(Error::Domain(format!(
                "item index {} out of range for {} items",
                rec.j, self.k
            )));
        }
        match (self.workers, rec.worker) {
            (None, None) => {}
            (Some(m), Some(w)) => {
                if w >= m {
                    return Err(Error::Domain(format!(
                        "worker index {w} out of range for {m} workers"
                    )));
                }
                if !self.used.insert((rec.i, rec.j, w)) {
                    return Err(Error::Constraint(format!(
                        "worker {w} already compared pair ({}, {})",
                        rec.i, rec.j
                    )));
                }
            }
            (None, Some(_)) => {
                return Err(Error::Constraint(
                    "homogeneous history cannot store worker-attributed records".into(),
                ))
            }
            (Some(_), None) => {
                return Err(Error::Constraint(
                    "heterogeneous history requires a worker index on every record".into(),
                ))
            }
        }
        self.counts[rec.winner() * self.k + rec.loser()] += 1;
        self.records.push(rec);
        Ok(())
    }

    /// Per-item win counts (row sums of the count matrix).
    pub fn win_counts(&self) -> Vec<u32> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.count(i, j)).sum())
            .collect()
    }
}

/// Serializable snapshot of the full belief state at some stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<WorkerBelief>,
    pub t: usize,
}

impl BeliefSnapshot {
    pub fn new(belief: &DirichletBelief, workers: &[WorkerBelief], t: usize) -> Self {
        BeliefSnapshot {
            alpha: belief.alpha().to_vec(),
            workers: workers.to_vec(),
            t,
        }
    }
}

const SUM_C_TOL: f64 = 1e-10;
const DENOM_TOL: f64 = 1e-14;

/// Solves α'_0 from Σ C_k (C_k α'_0 + 1) = D (α'_0 + 1) given Σ C_k = 1 and
/// returns α'_k = C_k α'_0, rejecting degenerate denominators or
/// non-positive outputs.
fn solve_projection(c: &[f64], d: f64, context: &str) -> Result<DirichletBelief> {
    let sum_c: f64 = c.iter().sum();
    if !sum_c.is_finite() || (sum_c - 1.0).abs() > SUM_C_TOL {
        return Err(Error::Degenerate(format!(
            "{context}: projected means sum to {sum_c}, expected 1"
        )));
    }
    let sum_c2: f64 = c.iter().map(|x| x * x).sum();
    let denom = sum_c2 - d;
    if !denom.is_finite() || denom.abs() < DENOM_TOL {
        return Err(Error::Degenerate(format!(
            "{context}: near-zero denominator {denom}"
        )));
    }
    let a0 = (d - 1.0) / denom;
    if !a0.is_finite() || a0 <= 0.0 {
        return Err(Error::Degenerate(format!(
            "{context}: non-positive concentration {a0}"
        )));
    }
    let alpha: Vec<f64> = c.iter().map(|ck| ck * a0).collect();
    if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(Error::Degenerate(format!(
            "{context}: projection produced a non-positive parameter"
        )));
    }
    DirichletBelief::new(alpha)
}

fn check_pair(belief: &DirichletBelief, i: usize, j: usize) -> Result<()> {
    if i >= j || j >= belief.k() {
        return Err(Error::Domain(format!(
            "need i < j < K, got ({i}, {j}) with K = {}",
            belief.k()
        )));
    }
    Ok(())
}

/// Moment-matched Dirichlet update after observing one comparison on the
/// pair (i, j) under the plain choice model.
pub fn mm_update_homogeneous(
    belief: &DirichletBelief,
    i: usize,
    j: usize,
    y: Outcome,
) -> Result<DirichletBelief> {
    check_pair(belief, i, j)?;
    let alpha = belief.alpha();
    let a0 = belief.alpha0();
    let ai = alpha[i];
    let aj = alpha[j];
    let s = ai + aj;
    let sign = y.sign();
    // Winner-side parameter picks up the observation; loser-side does not.
    let wi = ai + 0.5 * (1.0 + sign);
    let wj = aj + 0.5 * (1.0 - sign);

    let mean_scale = s / (a0 * (s + 1.0));
    let mut c = vec![0.0; belief.k()];
    let mut rest_second = 0.0;
    for (k, ak) in alpha.iter().enumerate() {
        if k == i || k == j {
            continue;
        }
        c[k] = ak / a0;
        rest_second += ak * (ak + 1.0) / (a0 * (a0 + 1.0));
    }
    c[i] = wi * mean_scale;
    c[j] = wj * mean_scale;
    let d = (wi * (wi + 1.0) + wj * (wj + 1.0)) * s / (a0 * (a0 + 1.0) * (s + 2.0)) + rest_second;

    solve_projection(&c, d, "homogeneous update")
}

/// Posterior probability that the observation routes its pseudo-count to
/// item i rather than item j, given the current beliefs. On a win for i this
/// is the reliable branch; on a loss it is the flipped branch.
fn item_i_branch_weight(ai: f64, aj: f64, wb: &WorkerBelief, y: Outcome) -> f64 {
    match y {
        Outcome::FirstWins => wb.mu * ai / (wb.mu * ai + wb.nu * aj),
        Outcome::SecondWins => wb.nu * ai / (wb.nu * ai + wb.mu * aj),
    }
}

/// Moment-matched update after worker `w` compares the pair (i, j):
/// projects the joint posterior back to Dirichlet × Beta.
pub fn mm_update_heterogeneous(
    belief: &DirichletBelief,
    wb: &WorkerBelief,
    i: usize,
    j: usize,
    y: Outcome,
) -> Result<(DirichletBelief, WorkerBelief)> {
    check_pair(belief, i, j)?;
    let alpha = belief.alpha();
    let a0 = belief.alpha0();
    let ai = alpha[i];
    let aj = alpha[j];
    let s = ai + aj;

    // Probability that item i (rather than j) receives the pseudo-count.
    let eta = item_i_branch_weight(ai, aj, wb, y);
    // Probability that the worker's reliable branch produced the outcome.
    let reliable = match y {
        Outcome::FirstWins => eta,
        Outcome::SecondWins => 1.0 - eta,
    };

    let mean_scale = s / (a0 * (s + 1.0));
    let mut c = vec![0.0; belief.k()];
    let mut rest_second = 0.0;
    for (k, ak) in alpha.iter().enumerate() {
        if k == i || k == j {
            continue;
        }
        c[k] = ak / a0;
        rest_second += ak * (ak + 1.0) / (a0 * (a0 + 1.0));
    }
    c[i] = (ai + eta) * mean_scale;
    c[j] = (aj + 1.0 - eta) * mean_scale;
    let d = ((ai + 1.0) * (ai + 2.0 * eta) + (aj + 1.0) * (aj + 2.0 - 2.0 * eta)) * s
        / (a0 * (a0 + 1.0) * (s + 2.0))
        + rest_second;
    let new_alpha = solve_projection(&c, d, "heterogeneous update")?;

    let (mu, nu) = (wb.mu, wb.nu);
    let e = (mu + reliable) / (mu + nu + 1.0);
    let f = ((mu + 1.0) * (mu + 2.0 * reliable) + (nu + 1.0) * (nu + 2.0 - 2.0 * reliable))
        / ((mu + nu + 1.0) * (mu + nu + 2.0));
    let denom = e * e + (1.0 - e) * (1.0 - e) - f;
    if !denom.is_finite() || denom.abs() < DENOM_TOL {
        return Err(Error::Degenerate(format!(
            "worker update: near-zero denominator {denom}"
        )));
    }
    let mu_new = (f - 1.0) * e / denom;
    let nu_new = (f - 1.0) * (1.0 - e) / denom;
    if !mu_new.is_finite() || !nu_new.is_finite() || mu_new <= 0.0 || nu_new <= 0.0 {
        return Err(Error::Degenerate(format!(
            "worker update produced non-positive parameters ({mu_new}, {nu_new})"
        )));
    }

    Ok((new_alpha, WorkerBelief { mu: mu_new, nu: nu_new }))
}
