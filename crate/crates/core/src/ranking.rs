//! Ranking extraction and evaluation.
//!
//! Under a Dirichlet belief, the ranking maximizing expected pairwise
//! agreement is obtained by sorting the parameter vector: the linear
//! ordering objective decomposes over pairs and I_{1/2}(a, b) is monotone in
//! each argument, so any sort-consistent ranking is optimal and all of them
//! attain the same value. [`brute_force_max_lop`] provides the exhaustive
//! check of that claim for small K.

use serde::{Deserialize, Serialize};

use crate::belief::{DirichletBelief, HistoryState};
use crate::specfn::{pr_theta_greater, Probability};
use crate::{Error, Result};

/// A permutation of K items. `rank[i]` is the rank of item `i`, 1-based,
/// larger meaning more preferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ranking {
    rank: Vec<usize>,
}

impl Ranking {
    pub fn from_ranks(rank: Vec<usize>) -> Result<Self> {
        let k = rank.len();
        if k < 2 {
            return Err(Error::Domain(format!("a ranking needs at least 2 items, got {k}")));
        }
        let mut seen = vec![false; k + 1];
        for &r in &rank {
            if r == 0 || r > k || seen[r] {
                return Err(Error::Domain(format!(
                    "rank vector {rank:?} is not a permutation of 1..={k}"
                )));
            }
            seen[r] = true;
        }
        Ok(Ranking { rank })
    }

    pub fn k(&self) -> usize {
        self.rank.len()
    }

    /// Rank of an item: 1..=K, larger = more preferred.
    pub fn rank_of(&self, item: usize) -> usize {
        self.rank[item]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }

    /// Items from most to least preferred.
    pub fn order(&self) -> Vec<usize> {
        let mut items: Vec<usize> = (0..self.k()).collect();
        items.sort_by_key(|&i| std::cmp::Reverse(self.rank[i]));
        items
    }

    pub fn reversed(&self) -> Ranking {
        let k = self.k();
        Ranking {
            rank: self.rank.iter().map(|r| k + 1 - r).collect(),
        }
    }
}

impl TryFrom<Vec<usize>> for Ranking {
    type Error = Error;
    fn try_from(rank: Vec<usize>) -> Result<Self> {
        Ranking::from_ranks(rank)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Vec<usize> {
        r.rank
    }
}

/// Ordinal ground-truth levels; ties allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreLevels(pub Vec<i64>);

impl ScoreLevels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ranks items by score, descending; ties go to the lower item index.
pub fn ranking_from_scores(scores: &[f64]) -> Ranking {
    let k = scores.len();
    let mut items: Vec<usize> = (0..k).collect();
    items.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be comparable")
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; k];
    for (pos, &item) in items.iter().enumerate() {
        rank[item] = k - pos;
    }
    Ranking { rank }
}

/// A ranking maximizing the expected pairwise agreement under `belief`:
/// sort the parameter vector, lower index winning ties.
pub fn optimal_ranking(belief: &DirichletBelief) -> Ranking {
    ranking_from_scores(belief.alpha())
}

fn pairs(k: usize) -> f64 {
    (k * (k - 1) / 2) as f64
}

/// Expected agreement sum evaluated through a caller-supplied dominance
/// probability; lets the policy layer memoize the underlying incomplete-beta
/// calls within a stage.
pub(crate) fn expected_accuracy_eval<F>(alpha: &[f64], ranking: &Ranking, pr: &mut F) -> Result<f64>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let k = alpha.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let (hi, lo) = if ranking.rank_of(i) > ranking.rank_of(j) {
                (i, j)
            } else {
                (j, i)
            };
            total += pr(alpha[hi], alpha[lo])?;
        }
    }
    Ok(total / pairs(k))
}

pub(crate) fn max_expected_accuracy_eval<F>(alpha: &[f64], pr: &mut F) -> Result<f64>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    expected_accuracy_eval(alpha, &ranking_from_scores(alpha), pr)
}

/// Expected fraction of pairs on which `ranking` agrees with the true order,
/// under `belief`.
pub fn expected_accuracy(belief: &DirichletBelief, ranking: &Ranking) -> Result<Probability> {
    if ranking.k() != belief.k() {
        return Err(Error::Domain(format!(
            "ranking has {} items but belief has {}",
            ranking.k(),
            belief.k()
        )));
    }
    let v = expected_accuracy_eval(belief.alpha(), ranking, &mut |a, b| {
        pr_theta_greater(a, b).map(Probability::value)
    })?;
    Probability::new(v.clamp(0.0, 1.0))
}

/// Expected accuracy of the optimal ranking: equivalently the mean over
/// unordered pairs of max(p, 1−p) with p the pairwise dominance probability.
pub fn max_expected_accuracy(belief: &DirichletBelief) -> Result<Probability> {
    expected_accuracy(belief, &optimal_ranking(belief))
}

/// Fraction of unordered pairs ordered identically by the two rankings.
pub fn kendall_tau(ranking: &Ranking, reference: &Ranking) -> Result<Probability> {
    let k = ranking.k();
    if k != reference.k() {
        return Err(Error::Domain(format!(
            "rankings compare {k} vs {} items",
            reference.k()
        )));
    }
    let mut agree = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            let a = ranking.rank_of(i) as i64 - ranking.rank_of(j) as i64;
            let b = reference.rank_of(i) as i64 - reference.rank_of(j) as i64;
            if a * b > 0 {
                agree += 1;
            }
        }
    }
    Probability::new(agree as f64 / pairs(k))
}

/// Accuracy against ordinal levels that may contain ties. Each unordered
/// pair counts once and is credited when the higher-ranked item's level is
/// at least the lower-ranked item's; tied levels are therefore always
/// credited, keeping the metric in [0, 1].
pub fn tie_tolerant_accuracy(ranking: &Ranking, levels: &ScoreLevels) -> Result<Probability> {
    let k = ranking.k();
    if levels.len() != k {
        return Err(Error::Domain(format!(
            "{} levels supplied for {k} items",
            levels.len()
        )));
    }
    let mut credit = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            let (hi, lo) = if ranking.rank_of(i) > ranking.rank_of(j) {
                (i, j)
            } else {
                (j, i)
            };
            if levels.0[hi] >= levels.0[lo] {
                credit += 1;
            }
        }
    }
    Probability::new(credit as f64 / pairs(k))
}

const MAX_LOP_ITEMS: usize = 9;

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Exhaustively maximizes the mean pairwise weight over all rankings.
///
/// `p` is a row-major K×K matrix with `p[i][j] + p[j][i] = 1` off the
/// diagonal. Factorial enumeration; refuses K > 9.
pub fn brute_force_max_lop(p: &[f64], k: usize) -> Result<(Ranking, f64)> {
    if k < 2 || p.len() != k * k {
        return Err(Error::Domain(format!(
            "need a K×K matrix with K ≥ 2, got K = {k} and {} entries",
            p.len()
        )));
    }
    if k > MAX_LOP_ITEMS {
        return Err(Error::Unsupported(format!(
            "exhaustive linear ordering is limited to {MAX_LOP_ITEMS} items, got {k}"
        )));
    }
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let s = p[i * k + j] + p[j * k + i];
                if !s.is_finite() || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "p[{i}][{j}] + p[{j}][{i}] = {s}, expected 1"
                    )));
                }
            }
        }
    }

    // `order` lists items from most to least preferred; lexicographic
    // enumeration makes the returned maximizer deterministic.
    let mut order: Vec<usize> = (0..k).collect();
    let mut best_order = order.clone();
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut total = 0.0;
        for a in 0..k {
            for b in (a + 1)..k {
                total += p[order[a] * k + order[b]];
            }
        }
        if total > best {
            best = total;
            best_order.copy_from_slice(&order);
        }
        if !next_permutation(&mut order) {
            break;
        }
    }

    let mut rank = vec![0usize; k];
    for (pos, &item) in best_order.iter().enumerate() {
        rank[item] = k - pos;
    }
    Ok((Ranking { rank }, best / pairs(k)))
}

/// Result of spectral rank aggregation over a comparison history.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCentrality {
    /// Stationary mass per item.
    pub scores: Vec<f64>,
    pub ranking: Ranking,
    /// Set when the history held no comparisons and the scores are a
    /// uniform placeholder.
    pub empty_history: bool,
}

const CENTRALITY_TOL: f64 = 1e-10;
const CENTRALITY_MAX_ITER: usize = 100_000;

/// Stationary distribution of the comparison-induced random walk.
///
/// The walk moves from i to j with probability proportional to the fraction
/// of (i, j) comparisons won by j, scaled by the maximum opponent count;
/// self-loops absorb the remainder. Disconnected components are ranked as
/// blocks (larger first, then smaller minimum item index), items within a
/// component by stationary mass.
pub fn rank_centrality(history: &HistoryState) -> Result<RankCentrality> {
    let k = history.k();

    let mut opponents = vec![0usize; k];
    for i in 0..k {
        for j in 0..k {
            if i != j && history.count(i, j) + history.count(j, i) > 0 {
                opponents[i] += 1;
            }
        }
    }
    let d_max = opponents.iter().copied().max().unwrap_or(0);
    if d_max == 0 {
        let scores = vec![1.0 / k as f64; k];
        let ranking = ranking_from_scores(&scores);
        return Ok(RankCentrality {
            scores,
            ranking,
            empty_history: true,
        });
    }

    // Row-stochastic transition matrix.
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        let mut out = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let wins_j = history.count(j, i) as f64;
            let total = wins_j + history.count(i, j) as f64;
            if total > 0.0 {
                let pij = wins_j / total / d_max as f64;
                p[i * k + j] = pij;
                out += pij;
            }
        }
        p[i * k + i] = 1.0 - out;
    }

    let mut x = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for _ in 0..CENTRALITY_MAX_ITER {
        next.fill(0.0);
        for i in 0..k {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..k {
                next[j] += xi * p[i * k + j];
            }
        }
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < CENTRALITY_TOL {
            break;
        }
    }

    // Connected components of the comparison graph.
    let mut component = vec![usize::MAX; k];
    let mut comp_count = 0;
    for start in 0..k {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = comp_count;
        while let Some(u) = stack.pop() {
            for v in 0..k {
                if v != u
                    && component[v] == usize::MAX
                    && history.count(u, v) + history.count(v, u) > 0
                {
                    component[v] = comp_count;
                    stack.push(v);
                }
            }
        }
        comp_count += 1;
    }

    let mut comp_size = vec![0usize; comp_count];
    let mut comp_min_item = vec![usize::MAX; comp_count];
    for (item, &c) in component.iter().enumerate() {
        comp_size[c] += 1;
        comp_min_item[c] = comp_min_item[c].min(item);
    }

    let mut items: Vec<usize> = (0..k).collect();
    items.sort_by(|&a, &b| {
        let (ca, cb) = (component[a], component[b]);
        comp_size[cb]
            .cmp(&comp_size[ca])
            .then(comp_min_item[ca].cmp(&comp_min_item[cb]))
            .then(
                x[b].partial_cmp(&x[a])
                    .expect("stationary scores must be comparable"),
            )
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; k];
    for (pos, &item) in items.iter().enumerate() {
        rank[item] = k - pos;
    }

    Ok(RankCentrality {
        scores: x,
        ranking: Ranking { rank },
        empty_history: false,
    })
}
