//! Synthetic ground truth, label oracles, and replay pools.
//!
//! Synthetic worlds hold latent item scores on the open simplex and,
//! optionally, per-worker reliabilities. Labels are drawn from the pairwise
//! choice law, mixed with its flip according to the worker's reliability. A
//! replay pool serves pre-collected comparisons instead: a policy may only
//! pick actions that still have an unconsumed record.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::belief::Outcome;
use crate::policy::{AvailabilitySet, Decision};
use crate::ranking::{ranking_from_scores, Ranking, ScoreLevels};
use crate::{Error, Result};

/// Simulation ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueWorld {
    /// Latent scores; strictly positive and summing to one.
    pub theta: Vec<f64>,
    /// Per-worker reliabilities in [0, 1]; absent in the homogeneous setting.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<Vec<f64>>,
}

impl TrueWorld {
    pub fn new(theta: Vec<f64>, rho: Option<Vec<f64>>) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::Domain("a world needs at least 2 items".into()));
        }
        let total: f64 = theta.iter().sum();
        if theta.iter().any(|t| !t.is_finite() || *t <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "latent scores must be positive and sum to 1 (sum = {total})"
            )));
        }
        if let Some(r) = &rho {
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Domain("reliabilities must lie in [0, 1]".into()));
            }
        }
        Ok(TrueWorld { theta, rho })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn worker_count(&self) -> usize {
        self.rho.as_ref().map_or(0, Vec::len)
    }

    /// The ranking induced by the latent scores.
    pub fn true_ranking(&self) -> Ranking {
        ranking_from_scores(&self.theta)
    }
}

/// How worker reliabilities are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum ReliabilitySpec {
    /// Independent draws from Beta(a, b).
    Beta(f64, f64),
    /// A fixed reliability vector, one entry per worker.
    Fixed(Vec<f64>),
}

/// Samples a world: scores uniform on the simplex (normalized unit-rate
/// exponentials), reliabilities per `reliability` when `workers > 0`.
pub fn sample_true_world<R: Rng + ?Sized>(
    k: usize,
    workers: usize,
    reliability: &ReliabilitySpec,
    rng: &mut R,
) -> Result<TrueWorld> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 items, got {k}")));
    }
    let mut theta: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = theta.iter().sum();
    for t in theta.iter_mut() {
        *t /= total;
    }
    // Renormalize once more: the division can leave the sum an ulp off.
    let total: f64 = theta.iter().sum();
    for t in theta.iter_mut() {
        *t /= total;
    }

    let rho = if workers == 0 {
        None
    } else {
        Some(match reliability {
            ReliabilitySpec::Beta(a, b) => {
                let dist = BetaDist::new(*a, *b).map_err(|e| Error::Domain(e.to_string()))?;
                (0..workers).map(|_| dist.sample(rng)).collect()
            }
            ReliabilitySpec::Fixed(values) => {
                if values.len() != workers {
                    return Err(Error::Domain(format!(
                        "fixed reliability list has {} entries for {workers} workers",
                        values.len()
                    )));
                }
                values.clone()
            }
        })
    };
    TrueWorld::new(theta, rho)
}

/// Deterministic world in which the two worst and two best items sit a
/// 1e-3 relative gap apart while every other gap is wide; scores ascend
/// with the item index.
pub fn close_extremes_world(k: usize, workers: usize, rho: Option<Vec<f64>>) -> Result<TrueWorld> {
    if k < 4 {
        return Err(Error::Domain(format!(
            "the close-extremes preset needs at least 4 items, got {k}"
        )));
    }
    let mut raw = Vec::with_capacity(k);
    raw.push(1.0);
    raw.push(1.0 * (1.0 + 1e-3));
    let mid = k - 4;
    for m in 0..mid {
        let f = (m as f64 + 1.0) / (mid as f64 + 1.0);
        raw.push(1.3 + f * (2.7 - 1.3));
    }
    raw.push(3.0);
    raw.push(3.0 * (1.0 + 1e-3));
    let total: f64 = raw.iter().sum();
    let mut theta: Vec<f64> = raw.into_iter().map(|v| v / total).collect();
    let total: f64 = theta.iter().sum();
    for t in theta.iter_mut() {
        *t /= total;
    }
    if workers == 0 {
        TrueWorld::new(theta, None)
    } else {
        let rho = rho.unwrap_or_else(|| vec![1.0; workers]);
        TrueWorld::new(theta, Some(rho))
    }
}

/// Draws one comparison outcome from the world's choice law.
///
/// Homogeneous (worker = None): the lower-indexed item wins with probability
/// θ_i/(θ_i+θ_j). With a worker, that law holds with probability ρ_w and its
/// flip otherwise, so a ρ of one half labels at random no matter the scores.
pub fn simulate_label<R: Rng + ?Sized>(
    world: &TrueWorld,
    i: usize,
    j: usize,
    worker: Option<usize>,
    rng: &mut R,
) -> Result<Outcome> {
    if i >= j || j >= world.k() {
        return Err(Error::Domain(format!(
            "need i < j < K, got ({i}, {j}) with K = {}",
            world.k()
        )));
    }
    let p_first = world.theta[i] / (world.theta[i] + world.theta[j]);
    let p = match worker {
        None => p_first,
        Some(w) => {
            let rho = world
                .rho
                .as_ref()
                .and_then(|r| r.get(w))
                .copied()
                .ok_or_else(|| Error::Domain(format!("worker index {w} out of range")))?;
            rho * p_first + (1.0 - rho) * (1.0 - p_first)
        }
    };
    Ok(if rng.gen::<f64>() < p {
        Outcome::FirstWins
    } else {
        Outcome::SecondWins
    })
}

/// One replayable comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayRecord {
    pub i: usize,
    pub j: usize,
    pub worker: usize,
    pub outcome: Outcome,
    pub consumed: bool,
}

/// A fixed log of comparisons from which a policy may only pick entries that
/// are still unconsumed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPool {
    records: Vec<ReplayRecord>,
    levels: Option<ScoreLevels>,
    k: usize,
    workers: usize,
}

impl ReplayPool {
    pub fn from_records(records: Vec<(usize, usize, usize, Outcome)>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Replay("pool holds no records".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut k = 0;
        let mut workers = 0;
        let mut out = Vec::with_capacity(records.len());
        for (idx, (i, j, w, y)) in records.into_iter().enumerate() {
            if i >= j {
                return Err(Error::Replay(format!(
                    "record {idx}: item_a must be less than item_b, got ({i}, {j})"
                )));
            }
            if !seen.insert((i, j, w)) {
                return Err(Error::Replay(format!(
                    "record {idx}: duplicate (item_a, item_b, worker) = ({i}, {j}, {w})"
                )));
            }
            k = k.max(j + 1);
            workers = workers.max(w + 1);
            out.push(ReplayRecord { i, j, worker: w, outcome: y, consumed: false });
        }
        Ok(ReplayPool { records: out, levels: None, k, workers })
    }

    /// Parses the pool CSV: header `item_a,item_b,worker,outcome`, 0-based
    /// indices with item_a < item_b, outcome 1 (item_a preferred) or -1.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        {
            let headers = csv
                .headers()
                .map_err(|e| Error::Replay(format!("reading header: {e}")))?;
            let expect = ["item_a", "item_b", "worker", "outcome"];
            let got: Vec<&str> = headers.iter().collect();
            if got != expect {
                return Err(Error::Replay(format!(
                    "header must be {}, got {}",
                    expect.join(","),
                    got.join(",")
                )));
            }
        }
        let mut rows = Vec::new();
        for (idx, row) in csv.records().enumerate() {
            let line = idx + 2;
            let row = row.map_err(|e| Error::Replay(format!("line {line}: {e}")))?;
            let field = |pos: usize, name: &str| -> Result<i64> {
                row.get(pos)
                    .ok_or_else(|| Error::Replay(format!("line {line}: missing {name}")))?
                    .parse::<i64>()
                    .map_err(|_| {
                        Error::Replay(format!("line {line}: {name} is not an integer"))
                    })
            };
            let a = field(0, "item_a")?;
            let b = field(1, "item_b")?;
            let w = field(2, "worker")?;
            let y = field(3, "outcome")?;
            if a < 0 || b < 0 || w < 0 {
                return Err(Error::Replay(format!("line {line}: negative index")));
            }
            if a >= b {
                return Err(Error::Replay(format!(
                    "line {line}: item_a must be less than item_b"
                )));
            }
            let outcome = Outcome::try_from(y as i8)
                .map_err(|_| Error::Replay(format!("line {line}: outcome must be 1 or -1")))?;
            rows.push((a as usize, b as usize, w as usize, outcome));
        }
        Self::from_records(rows).map_err(|e| match e {
            // Re-key record indices as line numbers for load errors.
            Error::Replay(msg) => Error::Replay(rekey_record_to_line(&msg)),
            other => other,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_reader(file)
    }

    /// Parses the optional sidecar levels CSV: header `item,level`, one row
    /// per item.
    pub fn load_levels_reader<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        {
            let headers = csv
                .headers()
                .map_err(|e| Error::Replay(format!("levels: reading header: {e}")))?;
            let got: Vec<&str> = headers.iter().collect();
            if got != ["item", "level"] {
                return Err(Error::Replay(format!(
                    "levels header must be item,level, got {}",
                    got.join(",")
                )));
            }
        }
        let mut levels = vec![None; self.k];
        for (idx, row) in csv.records().enumerate() {
            let line = idx + 2;
            let row = row.map_err(|e| Error::Replay(format!("levels line {line}: {e}")))?;
            let item: usize = row
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Replay(format!("levels line {line}: bad item")))?;
            let level: i64 = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Replay(format!("levels line {line}: bad level")))?;
            if item >= self.k {
                return Err(Error::Replay(format!(
                    "levels line {line}: item {item} outside 0..{}",
                    self.k
                )));
            }
            if levels[item].replace(level).is_some() {
                return Err(Error::Replay(format!(
                    "levels line {line}: duplicate item {item}"
                )));
            }
        }
        let missing: Vec<usize> = levels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Replay(format!(
                "levels missing for items {missing:?}"
            )));
        }
        self.levels = Some(ScoreLevels(levels.into_iter().map(Option::unwrap).collect()));
        Ok(())
    }

    pub fn load_levels(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        self.load_levels_reader(file)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn worker_count(&self) -> usize {
        self.workers
    }

    pub fn levels(&self) -> Option<&ScoreLevels> {
        self.levels.as_ref()
    }

    pub fn remaining(&self) -> usize {
        self.records.iter().filter(|r| !r.consumed).count()
    }

    /// Pairs with at least one unconsumed record.
    pub fn available_pairs(&self) -> AvailabilitySet {
        let mut pairs: Vec<(usize, usize)> = self
            .records
            .iter()
            .filter(|r| !r.consumed)
            .map(|r| (r.i, r.j))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        AvailabilitySet::Pairs(pairs)
    }

    /// Unconsumed (pair, worker) triplets.
    pub fn available_triplets(&self) -> AvailabilitySet {
        let mut triplets: Vec<(usize, usize, usize)> = self
            .records
            .iter()
            .filter(|r| !r.consumed)
            .map(|r| (r.i, r.j, r.worker))
            .collect();
        triplets.sort_unstable();
        AvailabilitySet::Triplets(triplets)
    }

    /// Returns the recorded outcome for the decision and marks the record
    /// consumed. A pair decision without a worker consumes the matching
    /// record with the lowest worker index.
    pub fn consume(&mut self, decision: &Decision) -> Result<Outcome> {
        let found = self
            .records
            .iter_mut()
            .filter(|r| {
                !r.consumed
                    && r.i == decision.i
                    && r.j == decision.j
                    && decision.worker.is_none_or(|w| r.worker == w)
            })
            .min_by_key(|r| r.worker);
        match found {
            Some(rec) => {
                rec.consumed = true;
                Ok(rec.outcome)
            }
            None => Err(Error::Replay(format!(
                "no unconsumed record for pair ({}, {}) worker {:?}",
                decision.i, decision.j, decision.worker
            ))),
        }
    }
}

fn rekey_record_to_line(msg: &str) -> String {
    // from_records reports 0-based record indices; as CSV rows those sit two
    // lines down (header + 1-based).
    if let Some(rest) = msg.strip_prefix("record ") {
        if let Some((num, tail)) = rest.split_once(':') {
            if let Ok(idx) = num.parse::<usize>() {
                return format!("line {}:{tail}", idx + 2);
            }
        }
    }
    msg.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn sampled_worlds_sit_on_the_simplex() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = sample_true_world(5, 0, &ReliabilitySpec::Beta(4.0, 1.0), &mut rng).unwrap();
            let total: f64 = w.theta.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(w.theta.iter().all(|t| *t > 0.0));
            assert!(w.rho.is_none());
        }
    }

    #[test]
    fn uniform_simplex_has_equal_means() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sums = [0.0f64; 3];
        for _ in 0..n {
            let w = sample_true_world(3, 0, &ReliabilitySpec::Beta(4.0, 1.0), &mut rng).unwrap();
            for (s, t) in sums.iter_mut().zip(&w.theta) {
                *s += t;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 0.005);
        }
    }

    #[test]
    fn fixed_reliability_list_is_passed_through() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let grid: Vec<f64> = (0..15).map(|i| 0.4 + i as f64 * 0.6 / 14.0).collect();
        let w = sample_true_world(10, 15, &ReliabilitySpec::Fixed(grid.clone()), &mut rng).unwrap();
        assert_eq!(w.rho.as_deref(), Some(grid.as_slice()));
        // Equal spacing from 0.4 to 1.0.
        let r = w.rho.unwrap();
        assert!((r[0] - 0.4).abs() < 1e-12);
        assert!((r[14] - 1.0).abs() < 1e-12);
        for pair in r.windows(2) {
            assert!((pair[1] - pair[0] - 0.6 / 14.0).abs() < 1e-12);
        }
    }

    #[test]
    fn close_extremes_world_has_tight_extreme_gaps() {
        let w = close_extremes_world(10, 0, None).unwrap();
        let t = &w.theta;
        assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // Scores ascend with the index.
        for pair in t.windows(2) {
            assert!(pair[1] > pair[0]);
        }
        let rel = |a: f64, b: f64| (b - a) / a;
        assert!(rel(t[0], t[1]) < 2e-3);
        assert!(rel(t[8], t[9]) < 2e-3);
        for idx in 1..8 {
            assert!(rel(t[idx], t[idx + 1]) > 0.05, "gap at {idx} too small");
        }
    }

    #[test]
    fn label_law_matches_choice_model() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let world = TrueWorld::new(vec![0.5, 0.3, 0.2], None).unwrap();
        let n = 100_000;
        let mut wins = 0;
        for _ in 0..n {
            if simulate_label(&world, 0, 1, None, &mut rng).unwrap() == Outcome::FirstWins {
                wins += 1;
            }
        }
        let p = 0.5 / 0.8;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((wins as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn equal_scores_label_at_coin_flip_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let world = TrueWorld::new(vec![0.25, 0.25, 0.5], None).unwrap();
        let n = 100_000;
        let mut wins = 0;
        for _ in 0..n {
            if simulate_label(&world, 0, 1, None, &mut rng).unwrap() == Outcome::FirstWins {
                wins += 1;
            }
        }
        assert!((wins as f64 / n as f64 - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt());
    }

    #[test]
    fn fully_reliable_worker_matches_homogeneous_stream() {
        let world_h = TrueWorld::new(vec![0.6, 0.4], None).unwrap();
        let world_w = TrueWorld::new(vec![0.6, 0.4], Some(vec![1.0])).unwrap();
        let mut a = ChaCha12Rng::seed_from_u64(7);
        let mut b = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x = simulate_label(&world_h, 0, 1, None, &mut a).unwrap();
            let y = simulate_label(&world_w, 0, 1, Some(0), &mut b).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn spammer_labels_are_independent_of_scores() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let world = TrueWorld::new(vec![0.9, 0.05, 0.05], Some(vec![0.5])).unwrap();
        let n = 100_000;
        let mut wins = 0;
        for _ in 0..n {
            if simulate_label(&world, 0, 1, Some(0), &mut rng).unwrap() == Outcome::FirstWins {
                wins += 1;
            }
        }
        assert!((wins as f64 / n as f64 - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt());
    }

    #[test]
    fn heterogeneous_label_law_matches_mixture() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let world = TrueWorld::new(vec![0.7, 0.2, 0.1], Some(vec![0.8, 0.3])).unwrap();
        let n = 100_000;
        for (w, rho) in [(0usize, 0.8f64), (1, 0.3)] {
            let mut wins = 0;
            for _ in 0..n {
                if simulate_label(&world, 0, 2, Some(w), &mut rng).unwrap() == Outcome::FirstWins {
                    wins += 1;
                }
            }
            let p_first = 0.7 / 0.8;
            let p = rho * p_first + (1.0 - rho) * (1.0 - p_first);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (wins as f64 / n as f64 - p).abs() < 3.0 * se,
                "worker {w}: {} vs {p}",
                wins as f64 / n as f64
            );
        }
    }

    #[test]
    fn seeded_worlds_and_labels_are_deterministic() {
        let make = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let w = sample_true_world(6, 3, &ReliabilitySpec::Beta(4.0, 1.0), &mut rng).unwrap();
            let labels: Vec<Outcome> = (0..50)
                .map(|_| simulate_label(&w, 1, 4, Some(2), &mut rng).unwrap())
                .collect();
            (w, labels)
        };
        assert_eq!(make(99), make(99));
    }

    const POOL_CSV: &str = "item_a,item_b,worker,outcome\n0,1,0,1\n0,1,1,-1\n1,2,0,-1\n";

    #[test]
    fn replay_pool_loads_and_serves() {
        let mut pool = ReplayPool::from_csv_reader(POOL_CSV.as_bytes()).unwrap();
        assert_eq!(pool.k(), 3);
        assert_eq!(pool.worker_count(), 2);
        assert_eq!(pool.remaining(), 3);
        assert_eq!(pool.available_pairs().len(), 2);
        assert_eq!(pool.available_triplets().len(), 3);

        // Pair decision consumes the lowest-worker record.
        let y = pool.consume(&Decision::pair(0, 1)).unwrap();
        assert_eq!(y, Outcome::FirstWins);
        assert_eq!(pool.remaining(), 2);
        let y = pool.consume(&Decision::pair(0, 1)).unwrap();
        assert_eq!(y, Outcome::SecondWins);
        assert!(pool.consume(&Decision::pair(0, 1)).is_err());

        let y = pool.consume(&Decision::triplet(1, 2, 0)).unwrap();
        assert_eq!(y, Outcome::SecondWins);
        assert_eq!(pool.remaining(), 0);
        assert!(pool.available_pairs().is_empty());
    }

    #[test]
    fn replay_pool_rejects_duplicates_and_bad_rows() {
        let dup = "item_a,item_b,worker,outcome\n0,1,0,1\n0,1,0,-1\n";
        let err = ReplayPool::from_csv_reader(dup.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        let unsorted = "item_a,item_b,worker,outcome\n1,0,0,1\n";
        assert!(ReplayPool::from_csv_reader(unsorted.as_bytes()).is_err());

        let bad_outcome = "item_a,item_b,worker,outcome\n0,1,0,2\n";
        assert!(ReplayPool::from_csv_reader(bad_outcome.as_bytes()).is_err());

        let bad_header = "a,b,w,y\n0,1,0,1\n";
        assert!(ReplayPool::from_csv_reader(bad_header.as_bytes()).is_err());
    }

    #[test]
    fn mismatched_consume_is_an_error() {
        let mut pool = ReplayPool::from_csv_reader(POOL_CSV.as_bytes()).unwrap();
        assert!(pool.consume(&Decision::pair(0, 2)).is_err());
        assert!(pool.consume(&Decision::triplet(0, 1, 5)).is_err());
    }

    #[test]
    fn levels_sidecar_must_cover_every_item() {
        let mut pool = ReplayPool::from_csv_reader(POOL_CSV.as_bytes()).unwrap();
        let levels = "item,level\n0,3\n1,1\n2,3\n";
        pool.load_levels_reader(levels.as_bytes()).unwrap();
        assert_eq!(pool.levels().unwrap().0, vec![3, 1, 3]);

        let mut pool = ReplayPool::from_csv_reader(POOL_CSV.as_bytes()).unwrap();
        let incomplete = "item,level\n0,3\n1,1\n";
        assert!(pool.load_levels_reader(incomplete.as_bytes()).is_err());
    }
}
