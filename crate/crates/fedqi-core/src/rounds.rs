//! The aggregate-only view of a training round.
//!
//! Under secure aggregation the server observes, per round, exactly three
//! things: which participants were selected, the aggregated model, and how
//! the aggregate performed. `RoundObservation` is that surface — the only
//! round data the scoring and estimator modules are allowed to consume.

/// One round as visible outside the aggregation boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundObservation {
    /// 1-based round index.
    pub round: usize,
    /// Selected participant ids (1-based, sorted, distinct).
    pub selected: Vec<usize>,
    /// Test accuracy improvement over the previous round.
    pub improvement: f64,
}
