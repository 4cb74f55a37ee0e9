//! Exact-posterior oracle.
//!
//! Integrates the true (unprojected) posterior numerically and reports the
//! same moments the closed-form projection matches, so the projection can be
//! validated end to end. Quadrature (K ≤ 4) maps the simplex to a unit cube
//! by stick-breaking and uses Gauss-Legendre panels graded toward the
//! boundary, where the integrand can have kinks. Monte Carlo (any K) is
//! self-normalized importance sampling with the prior as proposal, which
//! keeps every weight in (0, 1].
//!
//! With worker reliability in play, each observation is a two-branch mixture
//! (worker followed the choice law, or flipped it). Expanding the product of
//! mixtures makes the reliability integrals closed-form Beta-function ratios
//! per branch; only the score integrals need quadrature.

use rand_distr::{Beta as BetaDist, Distribution, Gamma};

use super::{DirichletBelief, HistoryState, WorkerBelief};
use crate::specfn::log_beta;
use crate::{Error, Result};

/// How the oracle integrates, and the grid/sample budget to spend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    /// Tensor quadrature; `budget` is roughly points per simplex axis.
    Quadrature,
    /// Self-normalized importance sampling; `budget` is the sample count.
    MonteCarlo,
}

/// Posterior moments of one worker's reliability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerMoments {
    pub rho_mean: f64,
    /// E[ρ² + (1−ρ)²].
    pub rho_symmetric_second: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentStdErrors {
    pub item_means: Vec<f64>,
    pub sum_second_moments: f64,
    pub workers: Vec<WorkerMoments>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub item_means: Vec<f64>,
    /// E[Σ_k θ_k²].
    pub sum_second_moments: f64,
    /// One entry per worker in the heterogeneous setting, empty otherwise.
    pub workers: Vec<WorkerMoments>,
    /// Monte Carlo only: standard errors in the same layout as the moments.
    pub std_errors: Option<MomentStdErrors>,
    /// Set when the refinement estimate (quadrature) or standard errors
    /// (Monte Carlo) suggest the budget was too small for the target.
    pub accuracy_warning: bool,
    /// Log of the computed normalization constant of the unnormalized
    /// posterior density (diagnostic).
    pub log_normalizer: f64,
}

const QUADRATURE_TARGET: f64 = 1e-8;
const MC_WARNING_SE: f64 = 1e-4;
const MAX_QUADRATURE_RECORDS: usize = 12;

/// Moments of the exact posterior given a prior and a comparison history.
///
/// `worker_priors` must be supplied exactly when the history is
/// heterogeneous, one belief per worker.
pub fn exact_posterior_moments(
    prior: &DirichletBelief,
    history: &HistoryState,
    worker_priors: Option<&[WorkerBelief]>,
    method: OracleMethod,
    budget: usize,
) -> Result<MomentReport> {
    if history.k() != prior.k() {
        return Err(Error::Domain(format!(
            "prior has {} items but history has {}",
            prior.k(),
            history.k()
        )));
    }
    match (history.worker_count(), worker_priors) {
        (None, None) => {}
        (Some(m), Some(priors)) if priors.len() == m => {}
        (Some(m), Some(priors)) => {
            return Err(Error::Domain(format!(
                "history has {m} workers but {} worker priors were given",
                priors.len()
            )))
        }
        (Some(_), None) => {
            return Err(Error::Domain(
                "heterogeneous history requires worker priors".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Domain(
                "worker priors supplied for a homogeneous history".into(),
            ))
        }
    }

    match method {
        OracleMethod::Quadrature => quadrature_moments(prior, history, worker_priors, budget),
        OracleMethod::MonteCarlo => monte_carlo_moments(prior, history, worker_priors, budget),
    }
}

/// A sensible default budget for the given method and item count.
pub fn default_oracle_budget(method: OracleMethod, k: usize) -> usize {
    match method {
        OracleMethod::Quadrature if k <= 3 => 600,
        OracleMethod::Quadrature => 120,
        OracleMethod::MonteCarlo => 400_000,
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// One abscissa of a tanh-sinh rule on (0, 1). The distance to the far
/// endpoint is carried separately so products like Π(1−x_d) keep full
/// precision arbitrarily close to the boundary.
#[derive(Debug, Clone, Copy)]
struct UnitNode {
    x: f64,
    complement: f64,
    weight: f64,
}

/// Tanh-sinh abscissas on (0, 1) with step `h`. Double-exponential decay of
/// the weights makes the rule accurate for any integrable power singularity
/// at either endpoint.
fn tanh_sinh_unit_grid(h: f64) -> Vec<UnitNode> {
    let mut nodes = Vec::new();
    let kmax = (7.0 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let u = k as f64 * h;
        let sh = std::f64::consts::FRAC_PI_2 * u.sinh();
        let weight = h * std::f64::consts::FRAC_PI_4 * u.cosh() / sh.cosh().powi(2);
        if !weight.is_finite() || weight < 1e-290 {
            continue;
        }
        let x = 1.0 / (1.0 + (-2.0 * sh).exp());
        let complement = 1.0 / (1.0 + (2.0 * sh).exp());
        if x <= 0.0 || complement <= 0.0 {
            continue;
        }
        nodes.push(UnitNode { x, complement, weight });
    }
    nodes
}

/// Visits every tensor grid point of the (K−1)-cube, mapped to the simplex
/// by stick-breaking; the callback receives θ and the quadrature weight
/// including the Jacobian.
fn simplex_pass<F: FnMut(&[f64], f64)>(k: usize, nodes: &[UnitNode], mut f: F) {
    let dims = k - 1;
    let n = nodes.len();
    let mut idx = vec![0usize; dims];
    let mut theta = vec![0.0; k];
    loop {
        let mut remaining = 1.0;
        let mut w = 1.0;
        for d in 0..dims {
            let node = nodes[idx[d]];
            w *= node.weight * remaining;
            theta[d] = remaining * node.x;
            remaining *= node.complement;
        }
        theta[dims] = remaining;
        if theta.iter().all(|t| *t > 0.0) && w > 0.0 {
            f(&theta, w);
        }
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dims {
                return;
            }
        }
    }
}

/// One observation split into its two mixture branches.
struct RecordTerms {
    i: usize,
    j: usize,
    winner: usize,
    loser: usize,
    worker: usize,
}

/// Closed-form reliability factors of one branch assignment.
struct Branch {
    log_rho_weight: f64,
    worker_mean: Vec<f64>,
    worker_sym2: Vec<f64>,
}

fn build_branches(records: &[RecordTerms], priors: &[WorkerBelief]) -> Result<Vec<Branch>> {
    let n = records.len();
    let mut branches = Vec::with_capacity(1 << n);
    for mask in 0u64..(1u64 << n) {
        let mut reliable = vec![0u32; priors.len()];
        let mut flipped = vec![0u32; priors.len()];
        for (r, rec) in records.iter().enumerate() {
            if mask & (1 << r) != 0 {
                reliable[rec.worker] += 1;
            } else {
                flipped[rec.worker] += 1;
            }
        }
        let mut log_w = 0.0;
        let mut worker_mean = Vec::with_capacity(priors.len());
        let mut worker_sym2 = Vec::with_capacity(priors.len());
        for (w, prior) in priors.iter().enumerate() {
            let mu = prior.mu + reliable[w] as f64;
            let nu = prior.nu + flipped[w] as f64;
            log_w += log_beta(mu, nu)? - log_beta(prior.mu, prior.nu)?;
            let s = mu + nu;
            worker_mean.push(mu / s);
            worker_sym2.push((mu * (mu + 1.0) + nu * (nu + 1.0)) / (s * (s + 1.0)));
        }
        branches.push(Branch {
            log_rho_weight: log_w,
            worker_mean,
            worker_sym2,
        });
    }
    Ok(branches)
}

struct ThetaAccum {
    s0: f64,
    s1: Vec<f64>,
    s2: f64,
}

/// Per-branch simplex integrals at one grid resolution. For homogeneous
/// histories there is a single implicit branch.
/// Per-branch simplex integrals of the shifted density at one grid
/// resolution; `shift` is subtracted in log space before exponentiation so
/// the accumulators stay in range.
fn theta_integrals(
    prior: &DirichletBelief,
    history: &HistoryState,
    records: &[RecordTerms],
    branch_count: usize,
    shift: f64,
    step: f64,
) -> Vec<ThetaAccum> {
    let k = prior.k();
    let nodes = tanh_sinh_unit_grid(step);

    // Homogeneous histories fold directly into per-item exponents plus
    // pair-sum penalties; the mixture setting keeps per-record branch terms.
    let heterogeneous = history.is_heterogeneous();
    let mut exps: Vec<f64> = prior.alpha().iter().map(|a| a - 1.0).collect();
    let mut pair_counts: Vec<(usize, usize, f64)> = Vec::new();
    if !heterogeneous {
        for (idx, win) in history.win_counts().iter().enumerate() {
            exps[idx] += *win as f64;
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let n = history.count(i, j) + history.count(j, i);
                if n > 0 {
                    pair_counts.push((i, j, n as f64));
                }
            }
        }
    }

    let mut acc: Vec<ThetaAccum> = (0..branch_count)
        .map(|_| ThetaAccum {
            s0: 0.0,
            s1: vec![0.0; k],
            s2: 0.0,
        })
        .collect();

    let mut log_theta = vec![0.0; k];
    let mut branch_logs = vec![(0.0, 0.0); records.len()];
    simplex_pass(k, &nodes, |theta, w| {
        for (lt, t) in log_theta.iter_mut().zip(theta) {
            *lt = t.ln();
        }
        let mut base: f64 = exps.iter().zip(&log_theta).map(|(e, lt)| e * lt).sum();
        for (i, j, n) in &pair_counts {
            base -= n * (theta[*i] + theta[*j]).ln();
        }
        base -= shift;

        let sum_sq: f64 = theta.iter().map(|t| t * t).sum();
        if heterogeneous {
            for (logs, rec) in branch_logs.iter_mut().zip(records) {
                let pair_ln = (theta[rec.i] + theta[rec.j]).ln();
                *logs = (
                    log_theta[rec.winner] - pair_ln,
                    log_theta[rec.loser] - pair_ln,
                );
            }
            for (mask, a) in acc.iter_mut().enumerate() {
                let mut logf = base;
                for (r, logs) in branch_logs.iter().enumerate() {
                    logf += if mask & (1 << r) != 0 { logs.0 } else { logs.1 };
                }
                let fw = logf.exp() * w;
                a.s0 += fw;
                for (s, t) in a.s1.iter_mut().zip(theta) {
                    *s += fw * t;
                }
                a.s2 += fw * sum_sq;
            }
        } else {
            let fw = base.exp() * w;
            let a = &mut acc[0];
            a.s0 += fw;
            for (s, t) in a.s1.iter_mut().zip(theta) {
                *s += fw * t;
            }
            a.s2 += fw * sum_sq;
        }
    });

    acc
}

/// Log-density at the simplex centroid, used to shift the integrand before
/// exponentiation. The same value is re-added to the reported normalizer.
fn centroid_shift(prior: &DirichletBelief, history: &HistoryState) -> f64 {
    let k = prior.k();
    let c = 1.0 / k as f64;
    let mut shift: f64 = prior.alpha().iter().map(|a| (a - 1.0) * c.ln()).sum();
    if history.is_heterogeneous() {
        // Every branch term is θ_sel/(θ_i+θ_j) = 1/2 at the centroid.
        shift += history.stage() as f64 * 0.5f64.ln();
    } else {
        for win in history.win_counts() {
            shift += win as f64 * c.ln();
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let n = history.count(i, j) + history.count(j, i);
                shift -= n as f64 * (2.0 * c).ln();
            }
        }
    }
    shift
}

fn combine_moments(
    prior: &DirichletBelief,
    branches: &[Branch],
    acc: &[ThetaAccum],
    worker_count: usize,
) -> (Vec<f64>, f64, Vec<WorkerMoments>, f64) {
    let k = prior.k();
    let max_log = branches
        .iter()
        .map(|b| b.log_rho_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut h = 0.0;
    let mut means = vec![0.0; k];
    let mut sum2 = 0.0;
    let mut w_mean = vec![0.0; worker_count];
    let mut w_sym2 = vec![0.0; worker_count];
    for (b, a) in branches.iter().zip(acc) {
        let bw = (b.log_rho_weight - max_log).exp();
        h += bw * a.s0;
        for (m, s) in means.iter_mut().zip(&a.s1) {
            *m += bw * s;
        }
        sum2 += bw * a.s2;
        for w in 0..worker_count {
            w_mean[w] += bw * a.s0 * b.worker_mean[w];
            w_sym2[w] += bw * a.s0 * b.worker_sym2[w];
        }
    }
    for m in means.iter_mut() {
        *m /= h;
    }
    sum2 /= h;
    let workers = (0..worker_count)
        .map(|w| WorkerMoments {
            rho_mean: w_mean[w] / h,
            rho_symmetric_second: w_sym2[w] / h,
        })
        .collect();
    (means, sum2, workers, max_log + h.ln())
}

fn quadrature_moments(
    prior: &DirichletBelief,
    history: &HistoryState,
    worker_priors: Option<&[WorkerBelief]>,
    budget: usize,
) -> Result<MomentReport> {
    let k = prior.k();
    if k > 4 {
        return Err(Error::Domain(format!(
            "quadrature supports up to 4 items, got {k}; use Monte Carlo"
        )));
    }
    if history.is_heterogeneous() && history.stage() > MAX_QUADRATURE_RECORDS {
        return Err(Error::Domain(format!(
            "quadrature expands {} mixture branches per observation; at most \
             {MAX_QUADRATURE_RECORDS} heterogeneous records are supported — use Monte Carlo",
            history.stage()
        )));
    }

    let records: Vec<RecordTerms> = if history.is_heterogeneous() {
        history
            .records()
            .iter()
            .map(|r| RecordTerms {
                i: r.i,
                j: r.j,
                winner: r.winner(),
                loser: r.loser(),
                worker: r.worker.expect("heterogeneous record"),
            })
            .collect()
    } else {
        Vec::new()
    };
    let branches = match worker_priors {
        Some(priors) => build_branches(&records, priors)?,
        None => vec![Branch {
            log_rho_weight: 0.0,
            worker_mean: Vec::new(),
            worker_sym2: Vec::new(),
        }],
    };
    let worker_count = worker_priors.map_or(0, |p| p.len());

    let shift = centroid_shift(prior, history);
    // Budget is roughly points per axis; tanh-sinh spans |u| ≤ 7.
    let step = (14.0 / budget.max(32) as f64).min(0.25);
    let fine = theta_integrals(prior, history, &records, branches.len(), shift, step);
    let coarse = theta_integrals(prior, history, &records, branches.len(), shift, step * 2.0);

    let (means, sum2, workers, log_h_shifted) =
        combine_moments(prior, &branches, &fine, worker_count);
    let (means_c, sum2_c, workers_c, _) = combine_moments(prior, &branches, &coarse, worker_count);

    let mut err: f64 = (sum2 - sum2_c).abs();
    for (a, b) in means.iter().zip(&means_c) {
        err = err.max((a - b).abs());
    }
    for (a, b) in workers.iter().zip(&workers_c) {
        err = err.max((a.rho_mean - b.rho_mean).abs());
        err = err.max((a.rho_symmetric_second - b.rho_symmetric_second).abs());
    }

    Ok(MomentReport {
        item_means: means,
        sum_second_moments: sum2,
        workers,
        std_errors: None,
        accuracy_warning: err > QUADRATURE_TARGET,
        log_normalizer: log_h_shifted + shift,
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

struct WeightedStat {
    sum_wx: f64,
    samples: Vec<(f64, f64)>,
}

impl WeightedStat {
    fn new(cap: usize) -> Self {
        WeightedStat {
            sum_wx: 0.0,
            samples: Vec::with_capacity(cap),
        }
    }
    fn push(&mut self, w: f64, x: f64) {
        self.sum_wx += w * x;
        self.samples.push((w, x));
    }
    /// Self-normalized estimate and its delta-method standard error.
    fn finish(&self, sum_w: f64) -> (f64, f64) {
        let mean = self.sum_wx / sum_w;
        let var: f64 = self
            .samples
            .iter()
            .map(|(w, x)| (w * (x - mean)).powi(2))
            .sum();
        (mean, var.sqrt() / sum_w)
    }
}

fn monte_carlo_moments(
    prior: &DirichletBelief,
    history: &HistoryState,
    worker_priors: Option<&[WorkerBelief]>,
    budget: usize,
) -> Result<MomentReport> {
    use rand::SeedableRng;
    // The oracle itself is deterministic: a fixed internal stream keyed on
    // the problem size keeps repeated calls reproducible.
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(
        0x9e37_79b9_7f4a_7c15 ^ (history.stage() as u64) << 32 ^ prior.k() as u64,
    );
    let samples = budget.max(1000);
    let k = prior.k();
    let worker_count = worker_priors.map_or(0, |p| p.len());

    let gammas: Vec<Gamma<f64>> = prior
        .alpha()
        .iter()
        .map(|a| Gamma::new(*a, 1.0).map_err(|e| Error::Domain(e.to_string())))
        .collect::<Result<_>>()?;
    let betas: Vec<BetaDist<f64>> = match worker_priors {
        Some(priors) => priors
            .iter()
            .map(|p| BetaDist::new(p.mu, p.nu).map_err(|e| Error::Domain(e.to_string())))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut sum_w = 0.0;
    let mut mean_stats: Vec<WeightedStat> = (0..k).map(|_| WeightedStat::new(samples)).collect();
    let mut sum2_stat = WeightedStat::new(samples);
    let mut worker_mean_stats: Vec<WeightedStat> =
        (0..worker_count).map(|_| WeightedStat::new(samples)).collect();
    let mut worker_sym2_stats: Vec<WeightedStat> =
        (0..worker_count).map(|_| WeightedStat::new(samples)).collect();

    let mut theta = vec![0.0; k];
    let mut rho = vec![0.0; worker_count];
    for _ in 0..samples {
        let mut total = 0.0;
        for (t, g) in theta.iter_mut().zip(&gammas) {
            *t = g.sample(&mut rng);
            total += *t;
        }
        if total <= 0.0 {
            continue;
        }
        for t in theta.iter_mut() {
            *t /= total;
        }
        for (r, b) in rho.iter_mut().zip(&betas) {
            *r = b.sample(&mut rng);
        }

        // Importance weight = likelihood of the observed outcomes, ≤ 1.
        let mut log_w = 0.0;
        for rec in history.records() {
            let p_win = theta[rec.winner()] / (theta[rec.i] + theta[rec.j]);
            let p = match rec.worker {
                Some(w) => rho[w] * p_win + (1.0 - rho[w]) * (1.0 - p_win),
                None => p_win,
            };
            log_w += p.max(1e-300).ln();
        }
        let w = log_w.exp();
        sum_w += w;
        for (stat, t) in mean_stats.iter_mut().zip(&theta) {
            stat.push(w, *t);
        }
        sum2_stat.push(w, theta.iter().map(|t| t * t).sum());
        for wk in 0..worker_count {
            let r = rho[wk];
            worker_mean_stats[wk].push(w, r);
            worker_sym2_stats[wk].push(w, r * r + (1.0 - r) * (1.0 - r));
        }
    }

    if sum_w <= 0.0 {
        return Err(Error::Degenerate(
            "all importance weights vanished; posterior too concentrated for this budget".into(),
        ));
    }

    let mut item_means = Vec::with_capacity(k);
    let mut mean_ses = Vec::with_capacity(k);
    for stat in &mean_stats {
        let (m, se) = stat.finish(sum_w);
        item_means.push(m);
        mean_ses.push(se);
    }
    let (sum2, sum2_se) = sum2_stat.finish(sum_w);
    let mut workers = Vec::with_capacity(worker_count);
    let mut worker_ses = Vec::with_capacity(worker_count);
    for (ms, ss) in worker_mean_stats.iter().zip(&worker_sym2_stats) {
        let (m, m_se) = ms.finish(sum_w);
        let (s, s_se) = ss.finish(sum_w);
        workers.push(WorkerMoments {
            rho_mean: m,
            rho_symmetric_second: s,
        });
        worker_ses.push(WorkerMoments {
            rho_mean: m_se,
            rho_symmetric_second: s_se,
        });
    }

    let max_se = mean_ses
        .iter()
        .copied()
        .chain(std::iter::once(sum2_se))
        .chain(worker_ses.iter().flat_map(|w| [w.rho_mean, w.rho_symmetric_second]))
        .fold(0.0f64, f64::max);

    Ok(MomentReport {
        item_means,
        sum_second_moments: sum2,
        workers,
        std_errors: Some(MomentStdErrors {
            item_means: mean_ses,
            sum_second_moments: sum2_se,
            workers: worker_ses,
        }),
        accuracy_warning: max_se > MC_WARNING_SE,
        log_normalizer: (sum_w / samples as f64).ln(),
    })
}
