//! Rank construction and rank-correlation metrics.
//!
//! Inferred quality orderings are compared to the ground truth with the
//! Spearman coefficient. Score vectors tie constantly (scores move in ±1
//! steps), so ranks are fractional: tied entries share the average of the
//! rank span they occupy, and the coefficient falls back from the exact
//! squared-distance form to the Pearson correlation of the two rank vectors,
//! which coincides with it in the tie-free case.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Tied entries share the average of the ranks they span.
    #[default]
    Average,
    /// Tied entries all take the lowest rank of their span.
    Min,
}

/// Ascending ranks of `scores`, 0-based: rank 0 is the lowest score. With
/// `TiePolicy::Average` the ranks always sum to N(N−1)/2.
pub fn ranks(scores: &[f64], policy: TiePolicy) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::domain("ranking needs at least two entries"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut out = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let rank = match policy {
            TiePolicy::Average => (start + end - 1) as f64 / 2.0,
            TiePolicy::Min => start as f64,
        };
        for &idx in &order[start..end] {
            out[idx] = rank;
        }
        start = end;
    }
    Ok(out)
}

/// Ground-truth rank vector when participant ids order quality: participant
/// n (1-based) has rank n−1.
pub fn identity_ranks(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

/// Outcome of a rank correlation. A constant input carries no ordering
/// signal and is reported as such rather than coerced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spearman {
    Coefficient(f64),
    Degenerate,
}

impl Spearman {
    pub fn coefficient(self) -> Option<f64> {
        match self {
            Spearman::Coefficient(c) => Some(c),
            Spearman::Degenerate => None,
        }
    }

    /// Degenerate outcomes as 0.0, the no-signal baseline; used when
    /// averaging across folds.
    pub fn or_zero(self) -> f64 {
        self.coefficient().unwrap_or(0.0)
    }
}

fn is_tie_free(values: &[f64]) -> bool {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ranks"));
    sorted.windows(2).all(|w| w[0] != w[1])
}

/// Exact squared-distance form: 1 − 6·Σ d² / (N(N²−1)) with
/// d = |inferred − truth| per entry. Valid when both rank vectors are
/// tie-free.
pub fn spearman_squared_distance(inferred: &[f64], truth: &[f64]) -> f64 {
    let n = inferred.len() as f64;
    let sum_sq: f64 = inferred
        .iter()
        .zip(truth)
        .map(|(&q, &t)| {
            let d = (q - t).abs();
            d * d
        })
        .sum();
    1.0 - 6.0 * sum_sq / (n * (n * n - 1.0))
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mean_x) * (b - mean_y);
        var_x += (a - mean_x) * (a - mean_x);
        var_y += (b - mean_y) * (b - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

/// Spearman coefficient between two rank vectors. Uses the exact
/// squared-distance form when both vectors are tie-free and Pearson on the
/// rank vectors otherwise.
pub fn spearman(inferred: &[f64], truth: &[f64]) -> Result<Spearman> {
    if inferred.len() != truth.len() || inferred.len() < 2 {
        return Err(Error::domain(
            "rank vectors must have equal length of at least two",
        ));
    }
    if is_tie_free(inferred) && is_tie_free(truth) {
        return Ok(Spearman::Coefficient(spearman_squared_distance(
            inferred, truth,
        )));
    }
    Ok(match pearson(inferred, truth) {
        Some(c) => Spearman::Coefficient(c),
        None => Spearman::Degenerate,
    })
}

/// Convenience: rank `scores` fractionally and correlate against the
/// identity ground truth.
pub fn score_spearman(scores: &[f64]) -> Result<Spearman> {
    let q = ranks(scores, TiePolicy::Average)?;
    spearman(&q, &identity_ranks(scores.len()))
}

/// Positions and group means for a known cheater set.
#[derive(Debug, Clone, PartialEq)]
pub struct CheaterReport {
    /// `(participant id, fractional rank)` per cheater; rank 0 = lowest
    /// score.
    pub positions: Vec<(usize, f64)>,
    pub honest_mean: f64,
    pub cheater_mean: f64,
}

impl CheaterReport {
    pub fn score_gap(&self) -> f64 {
        self.honest_mean - self.cheater_mean
    }
}

/// Rank each cheater within the score vector and compare group means.
/// `cheaters` holds 1-based participant ids and must be a non-empty proper
/// subset.
pub fn cheater_metrics(scores: &[f64], cheaters: &[usize]) -> Result<CheaterReport> {
    if cheaters.is_empty() {
        return Err(Error::domain("cheater set is empty"));
    }
    if cheaters.len() >= scores.len() {
        return Err(Error::domain("cheater set must be a proper subset"));
    }
    if let Some(&bad) = cheaters
        .iter()
        .find(|&&c| c < 1 || c > scores.len())
    {
        return Err(Error::domain(format!(
            "cheater id {bad} outside 1..={}",
            scores.len()
        )));
    }
    let q = ranks(scores, TiePolicy::Average)?;
    let is_cheater = |idx: usize| cheaters.contains(&(idx + 1));
    let positions = cheaters.iter().map(|&c| (c, q[c - 1])).collect();
    let mut honest_sum = 0.0;
    let mut cheater_sum = 0.0;
    for (idx, &phi) in scores.iter().enumerate() {
        if is_cheater(idx) {
            cheater_sum += phi;
        } else {
            honest_sum += phi;
        }
    }
    Ok(CheaterReport {
        positions,
        honest_mean: honest_sum / (scores.len() - cheaters.len()) as f64,
        cheater_mean: cheater_sum / cheaters.len() as f64,
    })
}
