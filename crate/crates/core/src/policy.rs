//! Query-selection policies.
//!
//! The knowledge-gradient rule scores every available action by the expected
//! one-step change in maximum expected ranking accuracy and picks the
//! maximizer; random and distance-based selection are the baselines. All
//! tie-breaking is lexicographic so runs are reproducible.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    mm_update_heterogeneous, mm_update_homogeneous, DirichletBelief, HistoryState, Outcome,
    WorkerBelief,
};
use crate::ranking::max_expected_accuracy_eval;
use crate::specfn::pr_theta_greater;
use crate::{Error, Result};

/// One selected action: a pair, plus the worker to ask in the
/// heterogeneous setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub i: usize,
    pub j: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub worker: Option<usize>,
}

impl Decision {
    pub fn pair(i: usize, j: usize) -> Self {
        Decision { i, j, worker: None }
    }

    pub fn triplet(i: usize, j: usize, worker: usize) -> Self {
        Decision { i, j, worker: Some(worker) }
    }
}

/// The actions a policy may currently choose from, kept sorted for
/// deterministic iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AvailabilitySet {
    Pairs(Vec<(usize, usize)>),
    Triplets(Vec<(usize, usize, usize)>),
}

impl AvailabilitySet {
    /// Every pair (i, j) with i < j < k.
    pub fn all_pairs(k: usize) -> Self {
        let mut v = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in (i + 1)..k {
                v.push((i, j));
            }
        }
        AvailabilitySet::Pairs(v)
    }

    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.iter().any(|(i, j)| i >= j) {
            return Err(Error::Domain("availability pairs require i < j".into()));
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(AvailabilitySet::Pairs(pairs))
    }

    pub fn from_triplets(mut triplets: Vec<(usize, usize, usize)>) -> Result<Self> {
        if triplets.iter().any(|(i, j, _)| i >= j) {
            return Err(Error::Domain("availability triplets require i < j".into()));
        }
        triplets.sort_unstable();
        triplets.dedup();
        Ok(AvailabilitySet::Triplets(triplets))
    }

    /// Every (pair, worker) cell not yet spent in `history`.
    pub fn fresh_triplets(k: usize, workers: usize, history: &HistoryState) -> Self {
        let mut v = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                for w in 0..workers {
                    if !history.pair_worker_used(i, j, w) {
                        v.push((i, j, w));
                    }
                }
            }
        }
        AvailabilitySet::Triplets(v)
    }

    pub fn len(&self) -> usize {
        match self {
            AvailabilitySet::Pairs(v) => v.len(),
            AvailabilitySet::Triplets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pairs(&self) -> Result<&[(usize, usize)]> {
        match self {
            AvailabilitySet::Pairs(v) => Ok(v),
            AvailabilitySet::Triplets(_) => Err(Error::Unsupported(
                "this policy selects pairs but the availability holds (pair, worker) triplets"
                    .into(),
            )),
        }
    }

    fn triplets(&self) -> Result<&[(usize, usize, usize)]> {
        match self {
            AvailabilitySet::Triplets(v) => Ok(v),
            AvailabilitySet::Pairs(_) => Err(Error::Unsupported(
                "this policy selects (pair, worker) triplets but the availability holds pairs"
                    .into(),
            )),
        }
    }
}

/// Policy selector, parsed from its identifier string: `akg`, `random`,
/// `distance`, or `akg-batch:B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Akg,
    Random,
    Distance,
    AkgBatch(usize),
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "akg" => Ok(PolicyKind::Akg),
            "random" => Ok(PolicyKind::Random),
            "distance" => Ok(PolicyKind::Distance),
            other => {
                if let Some(b) = other.strip_prefix("akg-batch:") {
                    let size: usize = b.parse().map_err(|_| {
                        Error::Config(format!("bad batch size in policy id '{other}'"))
                    })?;
                    if size == 0 {
                        return Err(Error::Config("batch size must be at least 1".into()));
                    }
                    Ok(PolicyKind::AkgBatch(size))
                } else {
                    Err(Error::Config(format!(
                        "unknown policy '{other}' (expected akg, random, distance, or akg-batch:B)"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Akg => write!(f, "akg"),
            PolicyKind::Random => write!(f, "random"),
            PolicyKind::Distance => write!(f, "distance"),
            PolicyKind::AkgBatch(b) => write!(f, "akg-batch:{b}"),
        }
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> String {
        p.to_string()
    }
}

/// Per-stage cache: dominance probabilities keyed on exact parameter bits.
/// A projection update rescales every component, so candidates cannot share
/// pairwise terms with each other, but repeated parameter values (common
/// early on) and the current-belief baseline are shared.
struct StageCache {
    memo: HashMap<(u64, u64), f64>,
}

impl StageCache {
    fn new() -> Self {
        StageCache { memo: HashMap::new() }
    }

    fn pr(&mut self, hi: f64, lo: f64) -> Result<f64> {
        let key = (hi.to_bits(), lo.to_bits());
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let v = pr_theta_greater(hi, lo)?.value();
        self.memo.insert(key, v);
        Ok(v)
    }
}

/// One-step change in maximum expected accuracy if outcome `y` were observed
/// on the pair (i, j). Can be negative.
pub fn approx_stage_reward(belief: &DirichletBelief, i: usize, j: usize, y: Outcome) -> Result<f64> {
    let mut cache = StageCache::new();
    let base = max_expected_accuracy_eval(belief.alpha(), &mut |a, b| cache.pr(a, b))?;
    stage_reward_cached(belief, i, j, y, base, &mut cache)
}

fn stage_reward_cached(
    belief: &DirichletBelief,
    i: usize,
    j: usize,
    y: Outcome,
    base: f64,
    cache: &mut StageCache,
) -> Result<f64> {
    let updated = mm_update_homogeneous(belief, i, j, y)?;
    let after = max_expected_accuracy_eval(updated.alpha(), &mut |a, b| cache.pr(a, b))?;
    Ok(after - base)
}

fn het_stage_reward_cached(
    belief: &DirichletBelief,
    wb: &WorkerBelief,
    i: usize,
    j: usize,
    y: Outcome,
    base: f64,
    cache: &mut StageCache,
) -> Result<f64> {
    let (updated, _) = mm_update_heterogeneous(belief, wb, i, j, y)?;
    let after = max_expected_accuracy_eval(updated.alpha(), &mut |a, b| cache.pr(a, b))?;
    Ok(after - base)
}

/// Expected one-step reward of querying the pair (i, j): outcome
/// probabilities are the posterior means of the two choice directions, and
/// the two weights sum to one exactly.
fn pair_score(
    belief: &DirichletBelief,
    i: usize,
    j: usize,
    base: f64,
    cache: &mut StageCache,
) -> Result<f64> {
    let alpha = belief.alpha();
    let w_plus = alpha[i] / (alpha[i] + alpha[j]);
    let w_minus = 1.0 - w_plus;
    let r_plus = stage_reward_cached(belief, i, j, Outcome::FirstWins, base, cache)?;
    let r_minus = stage_reward_cached(belief, i, j, Outcome::SecondWins, base, cache)?;
    Ok(w_plus * r_plus + w_minus * r_minus)
}

fn triplet_score(
    belief: &DirichletBelief,
    wb: &WorkerBelief,
    i: usize,
    j: usize,
    base: f64,
    cache: &mut StageCache,
) -> Result<f64> {
    let alpha = belief.alpha();
    let (ai, aj) = (alpha[i], alpha[j]);
    let w_plus = (wb.mu * ai + wb.nu * aj) / ((wb.mu + wb.nu) * (ai + aj));
    let w_minus = 1.0 - w_plus;
    let r_plus = het_stage_reward_cached(belief, wb, i, j, Outcome::FirstWins, base, cache)?;
    let r_minus = het_stage_reward_cached(belief, wb, i, j, Outcome::SecondWins, base, cache)?;
    Ok(w_plus * r_plus + w_minus * r_minus)
}

fn scored_pairs(
    belief: &DirichletBelief,
    avail: &AvailabilitySet,
) -> Result<Vec<((usize, usize), f64)>> {
    let pairs = avail.pairs()?;
    if pairs.is_empty() {
        return Err(Error::Exhausted);
    }
    let mut cache = StageCache::new();
    let base = max_expected_accuracy_eval(belief.alpha(), &mut |a, b| cache.pr(a, b))?;
    pairs
        .iter()
        .map(|&(i, j)| Ok(((i, j), pair_score(belief, i, j, base, &mut cache)?)))
        .collect()
}

/// Knowledge-gradient selection over pairs: the available pair with the
/// greatest expected one-step accuracy improvement, lexicographically
/// smallest on ties.
pub fn akg_select_homogeneous(
    belief: &DirichletBelief,
    avail: &AvailabilitySet,
) -> Result<Decision> {
    let scored = scored_pairs(belief, avail)?;
    let mut best = &scored[0];
    for cand in &scored[1..] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(Decision::pair(best.0 .0, best.0 .1))
}

/// Knowledge-gradient selection over (pair, worker) triplets.
pub fn akg_select_heterogeneous(
    belief: &DirichletBelief,
    workers: &[WorkerBelief],
    avail: &AvailabilitySet,
) -> Result<Decision> {
    let triplets = avail.triplets()?;
    if triplets.is_empty() {
        return Err(Error::Exhausted);
    }
    let mut cache = StageCache::new();
    let base = max_expected_accuracy_eval(belief.alpha(), &mut |a, b| cache.pr(a, b))?;
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for &(i, j, w) in triplets {
        let wb = workers.get(w).ok_or_else(|| {
            Error::Domain(format!("worker index {w} out of range for {} workers", workers.len()))
        })?;
        let score = triplet_score(belief, wb, i, j, base, &mut cache)?;
        match &best {
            Some((_, s)) if score <= *s => {}
            _ => best = Some(((i, j, w), score)),
        }
    }
    let ((i, j, w), _) = best.expect("nonempty triplet set");
    Ok(Decision::triplet(i, j, w))
}

/// Uniform selection over the available actions.
pub fn random_select<R: Rng + ?Sized>(avail: &AvailabilitySet, rng: &mut R) -> Result<Decision> {
    if avail.is_empty() {
        return Err(Error::Exhausted);
    }
    Ok(match avail {
        AvailabilitySet::Pairs(v) => {
            let (i, j) = v[rng.gen_range(0..v.len())];
            Decision::pair(i, j)
        }
        AvailabilitySet::Triplets(v) => {
            let (i, j, w) = v[rng.gen_range(0..v.len())];
            Decision::triplet(i, j, w)
        }
    })
}

/// The available pair with the closest belief parameters.
pub fn distance_select(belief: &DirichletBelief, avail: &AvailabilitySet) -> Result<Decision> {
    let pairs = avail.pairs()?;
    if pairs.is_empty() {
        return Err(Error::Exhausted);
    }
    let alpha = belief.alpha();
    let mut best = pairs[0];
    let mut best_gap = (alpha[best.0] - alpha[best.1]).abs();
    for &(i, j) in &pairs[1..] {
        let gap = (alpha[i] - alpha[j]).abs();
        if gap < best_gap {
            best = (i, j);
            best_gap = gap;
        }
    }
    Ok(Decision::pair(best.0, best.1))
}

/// The `batch` highest-scoring pairs under the knowledge-gradient score,
/// in descending score order; pair index breaks ties.
pub fn top_b_batch(
    belief: &DirichletBelief,
    avail: &AvailabilitySet,
    batch: usize,
) -> Result<Vec<Decision>> {
    if batch == 0 || batch > avail.len() {
        return Err(Error::Domain(format!(
            "batch size {batch} must lie in 1..={}",
            avail.len()
        )));
    }
    let mut scored = scored_pairs(belief, avail)?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("comparable scores").then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(batch)
        .map(|((i, j), _)| Decision::pair(i, j))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn belief(alpha: &[f64]) -> DirichletBelief {
        DirichletBelief::new(alpha.to_vec()).unwrap()
    }

    #[test]
    fn stage_reward_reference_values() {
        let b = belief(&[1.0, 1.0]);
        let r = approx_stage_reward(&b, 0, 1, Outcome::FirstWins).unwrap();
        assert!((r - 0.25).abs() < 1e-12);

        let b = belief(&[2.0, 1.0]);
        let r = approx_stage_reward(&b, 0, 1, Outcome::SecondWins).unwrap();
        assert!((r + 0.25).abs() < 1e-12, "confirming outcomes can lose value: {r}");
        let r = approx_stage_reward(&b, 0, 1, Outcome::FirstWins).unwrap();
        assert!((r - 0.125).abs() < 1e-12);
    }

    #[test]
    fn akg_selects_the_only_candidate() {
        let b = belief(&[1.4, 0.7]);
        let avail = AvailabilitySet::all_pairs(2);
        assert_eq!(akg_select_homogeneous(&b, &avail).unwrap(), Decision::pair(0, 1));
    }

    #[test]
    fn akg_breaks_symmetric_ties_lexicographically() {
        let b = belief(&[1.0, 1.0, 1.0]);
        let avail = AvailabilitySet::all_pairs(3);
        assert_eq!(akg_select_homogeneous(&b, &avail).unwrap(), Decision::pair(0, 1));
    }

    #[test]
    fn akg_prefers_the_ambiguous_pair() {
        let b = belief(&[5.0, 5.0, 1.0]);
        let avail = AvailabilitySet::all_pairs(3);
        let choice = akg_select_homogeneous(&b, &avail).unwrap();
        assert_eq!(choice, Decision::pair(0, 1));

        // Confirm by enumerating the three candidate scores directly.
        let score = |i, j| {
            let a = b.alpha();
            let w = a[i] / (a[i] + a[j]);
            w * approx_stage_reward(&b, i, j, Outcome::FirstWins).unwrap()
                + (1.0 - w) * approx_stage_reward(&b, i, j, Outcome::SecondWins).unwrap()
        };
        let s01 = score(0, 1);
        assert!(s01 > score(0, 2));
        assert!(s01 > score(1, 2));
    }

    #[test]
    fn akg_heterogeneous_tie_prefers_lower_worker() {
        let b = belief(&[2.0, 1.0, 1.5]);
        let workers = vec![WorkerBelief::new(4.0, 1.0).unwrap(); 2];
        let h = HistoryState::heterogeneous(3, 2).unwrap();
        let avail = AvailabilitySet::fresh_triplets(3, 2, &h);
        let d = akg_select_heterogeneous(&b, &workers, &avail).unwrap();
        assert_eq!(d.worker, Some(0));
    }

    #[test]
    fn akg_heterogeneous_prefers_informative_worker() {
        // A Beta(1,1) worker on a symmetric pair moves nothing; the sharper
        // worker is chosen whenever its expected reward is positive.
        let b = belief(&[1.0, 1.0]);
        let workers =
            vec![WorkerBelief::new(1.0, 1.0).unwrap(), WorkerBelief::new(8.0, 2.0).unwrap()];
        let h = HistoryState::heterogeneous(2, 2).unwrap();
        let avail = AvailabilitySet::fresh_triplets(2, 2, &h);
        let d = akg_select_heterogeneous(&b, &workers, &avail).unwrap();
        assert_eq!(d, Decision::triplet(0, 1, 1));
    }

    #[test]
    fn akg_heterogeneous_forced_singleton() {
        let b = belief(&[1.0, 2.0, 0.5]);
        let workers = vec![WorkerBelief::new(4.0, 1.0).unwrap()];
        let avail = AvailabilitySet::from_triplets(vec![(1, 2, 0)]).unwrap();
        let d = akg_select_heterogeneous(&b, &workers, &avail).unwrap();
        assert_eq!(d, Decision::triplet(1, 2, 0));
    }

    #[test]
    fn random_select_is_uniform_and_reproducible() {
        let avail = AvailabilitySet::all_pairs(3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut counts = HashMap::new();
        let draws = 300_000;
        for _ in 0..draws {
            let d = random_select(&avail, &mut rng).unwrap();
            *counts.entry((d.i, d.j)).or_insert(0usize) += 1;
        }
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.01, "frequency {freq}");
        }

        let singleton = AvailabilitySet::from_pairs(vec![(2, 4)]).unwrap();
        let d = random_select(&singleton, &mut rng).unwrap();
        assert_eq!(d, Decision::pair(2, 4));

        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(
                random_select(&avail, &mut a).unwrap(),
                random_select(&avail, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn distance_select_reference_values() {
        let avail = AvailabilitySet::all_pairs(3);
        let d = distance_select(&belief(&[1.0, 5.0, 5.2]), &avail).unwrap();
        assert_eq!(d, Decision::pair(1, 2));
        let d = distance_select(&belief(&[1.0, 1.0, 1.0]), &avail).unwrap();
        assert_eq!(d, Decision::pair(0, 1));
        let d = distance_select(&belief(&[2.0, 9.0, 2.5]), &avail).unwrap();
        assert_eq!(d, Decision::pair(0, 2));
    }

    #[test]
    fn selection_errors_on_exhaustion() {
        let b = belief(&[1.0, 1.0]);
        let empty = AvailabilitySet::Pairs(Vec::new());
        assert!(matches!(akg_select_homogeneous(&b, &empty), Err(Error::Exhausted)));
        assert!(matches!(distance_select(&b, &empty), Err(Error::Exhausted)));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(random_select(&empty, &mut rng), Err(Error::Exhausted)));
    }

    #[test]
    fn batch_covers_all_pairs_in_score_order() {
        let b = belief(&[5.0, 5.0, 1.0]);
        let avail = AvailabilitySet::all_pairs(3);
        let all = top_b_batch(&b, &avail, 3).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0], Decision::pair(0, 1));
        assert!(top_b_batch(&b, &avail, 4).is_err());
        assert!(top_b_batch(&b, &avail, 0).is_err());

        let two = top_b_batch(&b, &avail, 2).unwrap();
        assert_eq!(two[0], Decision::pair(0, 1));
        assert!(two[1] == Decision::pair(0, 2) || two[1] == Decision::pair(1, 2));
    }

    #[test]
    fn batch_of_one_matches_single_selection() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..100 {
            let k = rng.gen_range(2..6usize);
            let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(0.4..6.0)).collect();
            let b = belief(&alpha);
            let avail = AvailabilitySet::all_pairs(k);
            let single = akg_select_homogeneous(&b, &avail).unwrap();
            let batch = top_b_batch(&b, &avail, 1).unwrap();
            assert_eq!(batch[0], single);
        }
    }

    #[test]
    fn selection_is_equivariant_under_item_relabeling() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let k = 4;
            // Distinct parameters so the argmax is unique.
            let mut alpha: Vec<f64> = (0..k).map(|i| 0.5 + i as f64 * 0.6).collect();
            for a in alpha.iter_mut() {
                *a += rng.gen_range(0.0..0.3);
            }
            let b = belief(&alpha);
            let avail = AvailabilitySet::all_pairs(k);
            let d = akg_select_homogeneous(&b, &avail).unwrap();

            // Relabel by a rotation.
            let sigma = |x: usize| (x + 1) % k;
            let mut permuted = vec![0.0; k];
            for (idx, a) in alpha.iter().enumerate() {
                permuted[sigma(idx)] = *a;
            }
            let bp = belief(&permuted);
            let dp = akg_select_homogeneous(&bp, &avail).unwrap();
            let (mi, mj) = (sigma(d.i), sigma(d.j));
            let expect = if mi < mj { (mi, mj) } else { (mj, mi) };
            assert_eq!((dp.i, dp.j), expect, "alpha {alpha:?}");
        }
    }

    #[test]
    fn policy_ids_round_trip() {
        for s in ["akg", "random", "distance", "akg-batch:5"] {
            let p: PolicyKind = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("akg-batch:0".parse::<PolicyKind>().is_err());
        assert!("akg-batch:x".parse::<PolicyKind>().is_err());
        assert!("greedy".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn pair_policies_reject_triplet_availability() {
        let b = belief(&[1.0, 1.0]);
        let avail = AvailabilitySet::from_triplets(vec![(0, 1, 0)]).unwrap();
        assert!(matches!(
            akg_select_homogeneous(&b, &avail),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(distance_select(&b, &avail), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn two_item_score_is_nonnegative(
            a in 0.1f64..100.0,
            b in 0.1f64..100.0,
        ) {
            // With two items the one-step mean of the dominance probability
            // is preserved and max(p, 1−p) is convex, so information never
            // hurts in expectation.
            let bel = belief(&[a, b]);
            let alpha = bel.alpha();
            let w = alpha[0] / (alpha[0] + alpha[1]);
            let score = w * approx_stage_reward(&bel, 0, 1, Outcome::FirstWins).unwrap()
                + (1.0 - w) * approx_stage_reward(&bel, 0, 1, Outcome::SecondWins).unwrap();
            prop_assert!(score >= -1e-12, "score {score} for ({a}, {b})");
        }

        #[test]
        fn outcome_weights_sum_to_one_exactly(
            ai in 0.1f64..50.0,
            aj in 0.1f64..50.0,
            mu in 0.5f64..20.0,
            nu in 0.5f64..20.0,
        ) {
            let w_plus = ai / (ai + aj);
            let w_minus = 1.0 - w_plus;
            prop_assert_eq!(w_plus + w_minus, 1.0);
            let h_plus = (mu * ai + nu * aj) / ((mu + nu) * (ai + aj));
            let h_minus = 1.0 - h_plus;
            prop_assert_eq!(h_plus + h_minus, 1.0);
        }
    }
}
