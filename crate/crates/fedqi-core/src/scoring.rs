//! Quality scoring rules over the aggregate-only round stream.
//!
//! Three heuristics attribute per-round aggregate quality to the selected
//! participants, consuming nothing but round improvements and selection
//! sets:
//!
//! * **The Good** — a round that improves the model more than the previous
//!   one rewards everyone selected in it.
//! * **The Bad** — a round that improves less than the following one
//!   punishes everyone selected in it. Applied retrospectively: when round
//!   `i` beats round `i−1`, the members of `S_{i−1}` are punished at round
//!   `i`, which is causally equivalent.
//! * **The Ugly** — a round with negative improvement punishes everyone
//!   selected in it.
//!
//! The variants used for fine-tuning (per-rule thresholds, actual
//! improvement magnitudes instead of ±1, skipping early rounds, rule
//! subsets) are all expressed by [`RuleConfig`]; the defaults reproduce the
//! plain rules.

use crate::error::{Error, Result};
use crate::metrics;
use crate::rounds::RoundObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Good,
    Bad,
    Ugly,
}

/// Which of the three rules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleSet {
    pub good: bool,
    pub bad: bool,
    pub ugly: bool,
}

impl RuleSet {
    pub const ALL: RuleSet = RuleSet {
        good: true,
        bad: true,
        ugly: true,
    };

    pub fn any(&self) -> bool {
        self.good || self.bad || self.ugly
    }

    /// Bitmask (good=1, bad=2, ugly=4); doubles as the lexicographic key.
    pub fn mask(&self) -> u8 {
        (self.good as u8) | (self.bad as u8) << 1 | (self.ugly as u8) << 2
    }

    pub fn from_mask(mask: u8) -> Self {
        RuleSet {
            good: mask & 1 != 0,
            bad: mask & 2 != 0,
            ugly: mask & 4 != 0,
        }
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.good {
            parts.push("good");
        }
        if self.bad {
            parts.push("bad");
        }
        if self.ugly {
            parts.push("ugly");
        }
        parts.join("+")
    }
}

/// Scoring configuration: enabled rules, per-rule thresholds, magnitude
/// mode, and the number of initial rounds to skip.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleConfig {
    pub rules: RuleSet,
    pub tau_good: f64,
    pub tau_bad: f64,
    pub tau_ugly: f64,
    /// When set, events carry the actual improvement magnitudes instead of
    /// ±1.
    pub value_based: bool,
    /// Rounds `1..=skip_rounds` record no events (they still provide the
    /// previous-improvement context for the first scored round).
    pub skip_rounds: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            rules: RuleSet::ALL,
            tau_good: 0.0,
            tau_bad: 0.0,
            tau_ugly: 0.0,
            value_based: false,
            skip_rounds: 0,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self, total_rounds: usize) -> Result<()> {
        if !self.rules.any() {
            return Err(Error::config("at least one scoring rule must be enabled"));
        }
        if self.tau_good < 0.0 || self.tau_bad < 0.0 || self.tau_ugly < 0.0 {
            return Err(Error::config("thresholds must be non-negative"));
        }
        if total_rounds > 0 && self.skip_rounds >= total_rounds {
            return Err(Error::config(format!(
                "skip_rounds {} must be below the round count {total_rounds}",
                self.skip_rounds
            )));
        }
        Ok(())
    }

    /// Lexicographic tie-break key for grid search.
    fn sort_key(&self) -> (u8, u64, u64, u64, bool, usize) {
        (
            self.rules.mask(),
            self.tau_good.to_bits(),
            self.tau_bad.to_bits(),
            self.tau_ugly.to_bits(),
            self.value_based,
            self.skip_rounds,
        )
    }
}

/// Accumulated scores, one per participant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    phi: Vec<f64>,
    last_round: usize,
}

impl ScoreVector {
    pub fn new(participants: usize) -> Self {
        Self {
            phi: vec![0.0; participants],
            last_round: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn last_round(&self) -> usize {
        self.last_round
    }
}

/// One rule firing: the affected participants and the signed score delta.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleEvent {
    pub rule: Rule,
    pub participants: Vec<usize>,
    /// `true` rewards (+delta), `false` punishes (−delta).
    pub reward: bool,
    /// Magnitude: 1 in counting mode, the relevant improvement magnitude in
    /// value-based mode.
    pub magnitude: f64,
}

/// Evaluate the rules for round `i` given the aggregate-only view:
/// `improvement` = ω_i, `previous` = (ω_{i−1}, S_{i−1}) when i > 1.
pub fn rule_events(
    round: usize,
    improvement: f64,
    previous: Option<(f64, &[usize])>,
    selected: &[usize],
    cfg: &RuleConfig,
) -> Vec<RuleEvent> {
    let mut events = Vec::new();
    if round <= cfg.skip_rounds {
        return events;
    }
    if let Some((prev_improvement, prev_selected)) = previous {
        let delta = improvement - prev_improvement;
        if cfg.rules.good && delta > cfg.tau_good {
            events.push(RuleEvent {
                rule: Rule::Good,
                participants: selected.to_vec(),
                reward: true,
                magnitude: if cfg.value_based { delta.abs() } else { 1.0 },
            });
        }
        if cfg.rules.bad && delta > cfg.tau_bad {
            events.push(RuleEvent {
                rule: Rule::Bad,
                participants: prev_selected.to_vec(),
                reward: false,
                magnitude: if cfg.value_based { delta.abs() } else { 1.0 },
            });
        }
    }
    if cfg.rules.ugly && improvement < -cfg.tau_ugly {
        events.push(RuleEvent {
            rule: Rule::Ugly,
            participants: selected.to_vec(),
            reward: false,
            magnitude: if cfg.value_based {
                improvement.abs()
            } else {
                1.0
            },
        });
    }
    events
}

/// Apply one round of rule events to the score vector.
pub fn score_round(
    scores: &mut ScoreVector,
    round: usize,
    improvement: f64,
    previous: Option<(f64, &[usize])>,
    selected: &[usize],
    cfg: &RuleConfig,
) {
    for event in rule_events(round, improvement, previous, selected, cfg) {
        let delta = if event.reward {
            event.magnitude
        } else {
            -event.magnitude
        };
        for &n in &event.participants {
            scores.phi[n - 1] += delta;
        }
    }
    scores.last_round = round;
}

/// Replay scoring over a stored observation stream.
pub fn replay_scores(
    observations: &[RoundObservation],
    participants: usize,
    cfg: &RuleConfig,
) -> ScoreVector {
    let mut scores = ScoreVector::new(participants);
    let mut previous: Option<(f64, Vec<usize>)> = None;
    for obs in observations {
        score_round(
            &mut scores,
            obs.round,
            obs.improvement,
            previous.as_ref().map(|(w, s)| (*w, s.as_slice())),
            &obs.selected,
            cfg,
        );
        previous = Some((obs.improvement, obs.selected.clone()));
    }
    scores
}

/// The sweep evaluated by grid search.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rule_subsets: Vec<RuleSet>,
    /// Shared threshold values; each is applied to all three rules at once.
    pub taus: Vec<f64>,
    pub value_modes: Vec<bool>,
    pub skips: Vec<usize>,
}

impl Default for GridSpec {
    /// The full fine-tuning sweep: every non-empty rule subset, shared
    /// thresholds {0, 0.01, 0.02, ..., 2.56}, both magnitude modes, skips
    /// 0..=10.
    fn default() -> Self {
        Self {
            rule_subsets: (1..=7).map(RuleSet::from_mask).collect(),
            taus: vec![0.0, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28, 2.56],
            value_modes: vec![false, true],
            skips: (0..=10).collect(),
        }
    }
}

impl GridSpec {
    pub fn singleton(cfg: &RuleConfig) -> Self {
        Self {
            rule_subsets: vec![cfg.rules],
            // Singleton grids assume the shared-threshold convention.
            taus: vec![cfg.tau_good],
            value_modes: vec![cfg.value_based],
            skips: vec![cfg.skip_rounds],
        }
    }

    fn configs(&self) -> Vec<RuleConfig> {
        let mut out = Vec::new();
        for subset in &self.rule_subsets {
            for &tau in &self.taus {
                for &value_based in &self.value_modes {
                    for &skip in &self.skips {
                        out.push(RuleConfig {
                            rules: *subset,
                            tau_good: tau,
                            tau_bad: tau,
                            tau_ugly: tau,
                            value_based,
                            skip_rounds: skip,
                        });
                    }
                }
            }
        }
        out.sort_by_key(|c| c.sort_key());
        out
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub config: RuleConfig,
    /// Spearman coefficient of the final scores vs the ground truth, meaned
    /// over folds (degenerate folds contribute 0).
    pub mean_spearman: f64,
}

/// Re-score stored fold logs under every grid configuration and return the
/// best config plus the full table. Ties take the lexicographically smaller
/// config (rule mask, thresholds, magnitude mode, skip).
pub fn run_grid_search(
    folds: &[Vec<RoundObservation>],
    participants: usize,
    grid: &GridSpec,
) -> Result<(RuleConfig, Vec<GridPoint>)> {
    if folds.is_empty() || folds.iter().any(|f| f.is_empty()) {
        return Err(Error::domain("grid search needs non-empty fold logs"));
    }
    let mut table = Vec::new();
    let mut best: Option<GridPoint> = None;
    for config in grid.configs() {
        let mut total = 0.0;
        for fold in folds {
            let scores = replay_scores(fold, participants, &config);
            total += metrics::score_spearman(scores.values())?.or_zero();
        }
        let point = GridPoint {
            config,
            mean_spearman: total / folds.len() as f64,
        };
        let better = match &best {
            None => true,
            Some(b) => point.mean_spearman > b.mean_spearman,
        };
        if better {
            best = Some(point.clone());
        }
        table.push(point);
    }
    Ok((best.expect("non-empty grid").config, table))
}
