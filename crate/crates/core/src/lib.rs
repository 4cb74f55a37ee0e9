//! Budget-constrained active ranking from noisy pairwise comparisons.
//!
//! The engine keeps a Dirichlet belief over latent item scores and, when
//! workers have unknown reliability, a Beta belief per worker. Each observed
//! comparison is folded into the belief with a closed-form moment-matching
//! update, queries are chosen by a one-step-look-ahead knowledge-gradient
//! rule, and the ranking read out of a belief is the one that maximizes the
//! expected fraction of correctly ordered pairs.
//!
//! Module map:
//! - [`specfn`]: log-gamma / incomplete-beta kernel and pairwise dominance
//!   probabilities.
//! - [`belief`]: posterior state, moment-matching updates, and an
//!   exact-posterior oracle used for validation.
//! - [`ranking`]: ranking extraction, accuracy metrics, brute-force linear
//!   ordering, and the rank-centrality aggregator.
//! - [`policy`]: query-selection policies (knowledge gradient, random,
//!   distance, batch).
//! - [`simenv`]: synthetic ground truth, label oracles, and replay pools.
//! - [`harness`]: multi-trial experiment runner with CSV/JSON export.

pub mod belief;
pub mod harness;
pub mod policy;
pub mod ranking;
pub mod simenv;
pub mod specfn;

mod error;

pub use error::{Error, Result};
pub use specfn::Probability;
