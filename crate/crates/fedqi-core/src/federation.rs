//! Federated training rounds behind an aggregation boundary.
//!
//! Each round selects `b` participants uniformly, trains their local copies
//! in parallel, and replaces the global model with the average of their
//! (possibly misbehaving) updates. Consumers outside this module see only
//! the per-round [`RoundLog`] — selection set, aggregate accuracy,
//! improvement — never an individual update. The one sanctioned exception is
//! [`privileged::RoundTap`], which must be requested explicitly with a
//! [`privileged::PrivilegedAccess`] token.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, TrainSettings};
use crate::rng::{self, tag};
use crate::rounds::RoundObservation;
use crate::scoring::{self, RuleConfig, RuleEvent};

/// How a participant responds to a training request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Behaviour {
    #[default]
    Honest,
    /// Submits the additive inverse of its honest gradient.
    Attacker,
    /// Submits a zero gradient, i.e. returns the previous model.
    FreeRider,
}

/// Aggregate-side record of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Selected participant ids, 1-based and sorted.
    pub selected: Vec<usize>,
    /// Test-shard accuracy of the aggregated model.
    pub accuracy: f64,
    /// `accuracy` minus the previous round's accuracy.
    pub improvement: f64,
}

impl RoundLog {
    pub fn observation(&self) -> RoundObservation {
        RoundObservation {
            round: self.round,
            selected: self.selected.clone(),
            improvement: self.improvement,
        }
    }
}

/// Multiplicative-weight boosting of the aggregate update.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    /// Weight update rate; each rule event multiplies affected weights by
    /// (1±kappa).
    pub kappa: f64,
    /// Rule variant driving the weight events.
    pub rules: RuleConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// Participants selected per round (`b`).
    pub select_count: usize,
    /// Local-training hyperparameters. The seed field is ignored; per-round
    /// per-participant seeds are derived from `seed`.
    pub train: TrainSettings,
    pub boost: Option<BoostConfig>,
    pub seed: u64,
}

/// Uniform sample of `b` distinct participant ids (1-based, sorted).
pub fn select_participants(
    participants: usize,
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<usize>> {
    if count < 1 || count > participants {
        return Err(Error::domain(format!(
            "cannot select {count} of {participants} participants"
        )));
    }
    let mut ids: Vec<usize> = rand::seq::index::sample(rng, participants, count)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Transform an honest update according to the participant's behaviour.
/// Attackers reflect the update through the previous model
/// (`previous − (update − previous)`); free-riders return the previous model.
pub fn apply_behaviour(
    update: ModelParams,
    previous: &ModelParams,
    behaviour: Behaviour,
) -> Result<ModelParams> {
    match behaviour {
        Behaviour::Honest => Ok(update),
        Behaviour::FreeRider => {
            if update.architecture() != previous.architecture() {
                return Err(Error::config("architecture mismatch"));
            }
            Ok(previous.clone())
        }
        Behaviour::Attacker => {
            if update.architecture() != previous.architecture() {
                return Err(Error::config("architecture mismatch"));
            }
            let prev = previous.flat();
            let upd = update.flat();
            let flipped: Vec<f64> = prev
                .iter()
                .zip(&upd)
                .map(|(&p, &u)| p - (u - p))
                .collect();
            ModelParams::from_flat(previous.architecture().clone(), &flipped)
        }
    }
}

/// Arithmetic mean of the selected participants' weights; scales the
/// aggregate update delta for the round.
pub fn boost_scale(weights: &[f64], selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::domain("empty selection set"));
    }
    let sum: f64 = selected.iter().map(|&n| weights[n - 1]).sum();
    Ok(sum / selected.len() as f64)
}

/// Apply one round's rule events to the boosting weights: rewards multiply
/// by (1+kappa), punishments by (1−kappa), composing across events.
pub fn update_boost_weights(
    weights: &mut [f64],
    events: &[RuleEvent],
    kappa: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::domain(
            "kappa must be in [0, 1) to keep weights positive",
        ));
    }
    for event in events {
        let factor = if event.reward { 1.0 + kappa } else { 1.0 - kappa };
        for &n in &event.participants {
            weights[n - 1] *= factor;
        }
    }
    Ok(())
}

/// Demonstration of pairwise masking: every ordered pair (m < n) shares a
/// seeded noise vector added to m's update and subtracted from n's, so
/// individual updates are hidden while the sum is preserved.
pub fn pairwise_mask_demo(
    updates: &[ModelParams],
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<ModelParams>> {
    if updates.len() < 2 {
        return Ok(updates.to_vec());
    }
    let arch = updates[0].architecture().clone();
    let mut flats: Vec<Vec<f64>> = Vec::with_capacity(updates.len());
    for u in updates {
        if u.architecture() != &arch {
            return Err(Error::config("architecture mismatch"));
        }
        flats.push(u.flat());
    }
    for m in 0..updates.len() {
        for n in (m + 1)..updates.len() {
            let mut rng = rng::derive(seed, &[tag::MASK_DEMO, m as u64, n as u64]);
            let (head, tail) = flats.split_at_mut(n);
            for (a, b) in head[m].iter_mut().zip(tail[0].iter_mut()) {
                let noise = (rng.random::<f64>() * 2.0 - 1.0) * noise_scale;
                *a += noise;
                *b -= noise;
            }
        }
    }
    flats
        .into_iter()
        .map(|f| ModelParams::from_flat(arch.clone(), &f))
        .collect()
}

/// Privileged, boundary-crossing views. Audit note: everything here exposes
/// individual updates and is off limits to the scoring/metrics/estimator
/// consumers except the explicitly flagged leave-one-out baseline.
pub mod privileged {
    use super::*;

    /// Capability token acknowledging that the holder reads individual
    /// updates and therefore operates outside the aggregation boundary.
    #[derive(Debug)]
    pub struct PrivilegedAccess(());

    impl PrivilegedAccess {
        pub fn acknowledge_boundary_bypass() -> Self {
            PrivilegedAccess(())
        }
    }

    /// Per-round individual updates plus the context needed to re-aggregate
    /// subsets of them.
    #[derive(Debug, Clone)]
    pub struct RoundTap {
        pub round: usize,
        pub selected: Vec<usize>,
        /// One update per selected participant, same order as `selected`.
        pub updates: Vec<ModelParams>,
        pub previous_model: ModelParams,
        pub aggregate_accuracy: f64,
        pub previous_accuracy: f64,
    }
}

/// Round-based federated training over fixed shards.
pub struct Federation {
    config: FederationConfig,
    model: ModelParams,
    shards: Vec<Shard>,
    test_shard: Shard,
    behaviours: Vec<Behaviour>,
    weights: Vec<f64>,
    history: Vec<RoundLog>,
    baseline_accuracy: f64,
}

impl Federation {
    /// `shards` holds one shard per participant (index = id − 1). The round
    /// counter starts at zero with the baseline accuracy measured on
    /// `initial_model`.
    pub fn new(
        initial_model: ModelParams,
        shards: Vec<Shard>,
        test_shard: Shard,
        behaviours: Vec<Behaviour>,
        config: FederationConfig,
    ) -> Result<Self> {
        let participants = shards.len();
        if participants == 0 {
            return Err(Error::domain("no participant shards"));
        }
        if behaviours.len() != participants {
            return Err(Error::domain(format!(
                "behaviour map covers {} of {participants} participants",
                behaviours.len()
            )));
        }
        if config.select_count < 1 || config.select_count > participants {
            return Err(Error::domain(format!(
                "cannot select {} of {participants} participants",
                config.select_count
            )));
        }
        if let Some(boost) = &config.boost {
            if !(0.0..1.0).contains(&boost.kappa) {
                return Err(Error::domain("kappa must be in [0, 1)"));
            }
            boost.rules.validate(0)?;
        }
        if test_shard.is_empty() {
            return Err(Error::domain("test shard is empty"));
        }
        let baseline_accuracy = model::accuracy(&initial_model, &test_shard.data)?;
        Ok(Self {
            model: initial_model,
            weights: vec![1.0; participants],
            behaviours,
            shards,
            test_shard,
            history: Vec::new(),
            baseline_accuracy,
            config,
        })
    }

    pub fn participants(&self) -> usize {
        self.shards.len()
    }

    /// Completed rounds; equals the history length.
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[RoundLog] {
        &self.history
    }

    pub fn observations(&self) -> Vec<RoundObservation> {
        self.history.iter().map(RoundLog::observation).collect()
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline_accuracy
    }

    pub fn boost_weights(&self) -> &[f64] {
        &self.weights
    }

    fn previous_accuracy(&self) -> f64 {
        self.history
            .last()
            .map(|l| l.accuracy)
            .unwrap_or(self.baseline_accuracy)
    }

    fn train_selected(&self, round: usize, selected: &[usize]) -> Result<Vec<ModelParams>> {
        selected
            .par_iter()
            .map(|&n| {
                let settings = TrainSettings {
                    seed: rng::derive_seed(
                        self.config.seed,
                        &[tag::LOCAL_TRAIN, round as u64, n as u64],
                    ),
                    ..self.config.train.clone()
                };
                let update = model::local_train(&self.model, &self.shards[n - 1], &settings)?;
                apply_behaviour(update, &self.model, self.behaviours[n - 1])
            })
            .collect()
    }

    fn finish_round(
        &mut self,
        round: usize,
        selected: Vec<usize>,
        updates: &[ModelParams],
    ) -> Result<RoundLog> {
        let aggregate = model::average_params(updates)?;
        let next_model = match &self.config.boost {
            None => aggregate,
            Some(_) => {
                let scale = boost_scale(&self.weights, &selected)?;
                if scale == 1.0 {
                    aggregate
                } else {
                    // Scale the update delta, not the raw parameters.
                    self.model.interpolate(&aggregate, scale)?
                }
            }
        };
        let accuracy = model::accuracy(&next_model, &self.test_shard.data)?;
        let improvement = accuracy - self.previous_accuracy();
        let log = RoundLog {
            round,
            selected,
            accuracy,
            improvement,
        };
        if let Some(boost) = &self.config.boost {
            let previous = self
                .history
                .last()
                .map(|l| (l.improvement, l.selected.clone()));
            let events = scoring::rule_events(
                round,
                improvement,
                previous.as_ref().map(|(w, s)| (*w, s.as_slice())),
                &log.selected,
                &boost.rules,
            );
            let kappa = boost.kappa;
            update_boost_weights(&mut self.weights, &events, kappa)?;
        }
        self.model = next_model;
        self.history.push(log.clone());
        Ok(log)
    }

    /// Run one round: select, train, aggregate, evaluate.
    pub fn run_round(&mut self) -> Result<RoundLog> {
        let round = self.round() + 1;
        let mut rng = rng::derive(self.config.seed, &[tag::SELECT, round as u64]);
        let selected =
            select_participants(self.participants(), self.config.select_count, &mut rng)?;
        let updates = self.train_selected(round, &selected)?;
        self.finish_round(round, selected, &updates)
    }

    /// Run one round and also hand back the individual updates. Only valid
    /// without boosting, where the applied model is exactly the update mean.
    pub fn run_round_privileged(
        &mut self,
        _access: &privileged::PrivilegedAccess,
    ) -> Result<(RoundLog, privileged::RoundTap)> {
        if self.config.boost.is_some() {
            return Err(Error::domain(
                "individual-update taps require plain averaging (no boosting)",
            ));
        }
        let round = self.round() + 1;
        let mut rng = rng::derive(self.config.seed, &[tag::SELECT, round as u64]);
        let selected =
            select_participants(self.participants(), self.config.select_count, &mut rng)?;
        let updates = self.train_selected(round, &selected)?;
        let previous_model = self.model.clone();
        let previous_accuracy = self.previous_accuracy();
        let log = self.finish_round(round, selected.clone(), &updates)?;
        let tap = privileged::RoundTap {
            round,
            selected,
            updates,
            previous_model,
            aggregate_accuracy: log.accuracy,
            previous_accuracy,
        };
        Ok((log, tap))
    }
}
