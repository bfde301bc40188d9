//! Federated leave-one-out contribution baseline.
//!
//! BOUNDARY EXCEPTION: this is the one estimator that reads individual
//! updates. It exists as a privileged comparison point for the
//! aggregate-only scoring rules and requires a
//! [`PrivilegedAccess`](crate::federation::privileged::PrivilegedAccess)
//! token at construction.
//!
//! Per round, each selected participant's contribution increment is the
//! test accuracy of the full aggregate minus the test accuracy of the
//! aggregate with that participant's update removed; increments accumulate
//! raw (unnormalized) across rounds. Rounds with a single participant
//! contribute the accuracy improvement over the previous model.

use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::federation::privileged::{PrivilegedAccess, RoundTap};
use crate::model::{accuracy, average_params};

/// Streaming accumulator over privileged round taps.
#[derive(Debug)]
pub struct LeaveOneOut {
    contributions: Vec<f64>,
}

impl LeaveOneOut {
    pub fn new(participants: usize, _access: &PrivilegedAccess) -> Self {
        Self {
            contributions: vec![0.0; participants],
        }
    }

    /// Fold one round's individual updates into the running contributions.
    pub fn observe_round(&mut self, tap: &RoundTap, test: &LabeledDataset) -> Result<()> {
        if tap.updates.is_empty() || tap.updates.len() != tap.selected.len() {
            return Err(Error::Capability(format!(
                "round {} tap carries {} updates for {} selected participants",
                tap.round,
                tap.updates.len(),
                tap.selected.len()
            )));
        }
        if let Some(&bad) = tap
            .selected
            .iter()
            .find(|&&n| n < 1 || n > self.contributions.len())
        {
            return Err(Error::domain(format!(
                "participant {bad} outside 1..={}",
                self.contributions.len()
            )));
        }
        if tap.selected.len() == 1 {
            self.contributions[tap.selected[0] - 1] +=
                tap.aggregate_accuracy - tap.previous_accuracy;
            return Ok(());
        }
        let full = tap.aggregate_accuracy;
        let increments: Result<Vec<f64>> = (0..tap.selected.len())
            .into_par_iter()
            .map(|skip| {
                let rest: Vec<_> = tap
                    .updates
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .map(|(_, u)| u.clone())
                    .collect();
                let without = accuracy(&average_params(&rest)?, test)?;
                Ok(full - without)
            })
            .collect();
        for (&n, inc) in tap.selected.iter().zip(increments?) {
            self.contributions[n - 1] += inc;
        }
        Ok(())
    }

    /// Accumulated raw contribution per participant.
    pub fn contributions(&self) -> &[f64] {
        &self.contributions
    }
}

/// Run the accumulator over a full tap stream.
pub fn leave_one_out<'a>(
    taps: impl IntoIterator<Item = &'a RoundTap>,
    participants: usize,
    test: &LabeledDataset,
    access: &PrivilegedAccess,
) -> Result<Vec<f64>> {
    let mut acc = LeaveOneOut::new(participants, access);
    for tap in taps {
        acc.observe_round(tap, test)?;
    }
    Ok(acc.contributions().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelParams};
    use ndarray::Array2;

    fn token() -> PrivilegedAccess {
        PrivilegedAccess::acknowledge_boundary_bypass()
    }

    fn test_set() -> LabeledDataset {
        // Four separable points in 2D, two classes.
        let features = Array2::from_shape_vec(
            (4, 2),
            vec![0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8],
        )
        .unwrap();
        LabeledDataset::from_features(features, vec![0, 0, 1, 1], 2).unwrap()
    }

    fn linear_model(flat: &[f64]) -> ModelParams {
        ModelParams::from_flat(Architecture::new(2, vec![], 2), flat).unwrap()
    }

    fn tap(
        selected: Vec<usize>,
        updates: Vec<ModelParams>,
        previous: ModelParams,
        test: &LabeledDataset,
    ) -> RoundTap {
        let aggregate_accuracy = accuracy(&average_params(&updates).unwrap(), test).unwrap();
        let previous_accuracy = accuracy(&previous, test).unwrap();
        RoundTap {
            round: 1,
            selected,
            updates,
            previous_model: previous,
            aggregate_accuracy,
            previous_accuracy,
        }
    }

    #[test]
    fn identical_updates_contribute_nothing() {
        let test = test_set();
        let good = linear_model(&[1.0, -1.0, -1.0, 1.0, 0.0, 0.0]);
        let tap = tap(
            vec![1, 2, 3],
            vec![good.clone(), good.clone(), good.clone()],
            linear_model(&[0.0; 6]),
            &test,
        );
        let mut lo = LeaveOneOut::new(3, &token());
        lo.observe_round(&tap, &test).unwrap();
        assert_eq!(lo.contributions(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn free_rider_increment_is_definitional() {
        let test = test_set();
        let previous = linear_model(&[0.0; 6]);
        // Participant 1 trains honestly; participant 2 free-rides by
        // returning the previous model.
        let honest = linear_model(&[1.0, -1.0, -1.0, 1.0, 0.0, 0.0]);
        let tap = tap(
            vec![1, 2],
            vec![honest.clone(), previous.clone()],
            previous,
            &test,
        );
        let mut lo = LeaveOneOut::new(2, &token());
        lo.observe_round(&tap, &test).unwrap();
        let full = tap.aggregate_accuracy;
        let honest_solo = accuracy(&honest, &test).unwrap();
        assert_eq!(lo.contributions()[1], full - honest_solo);
    }

    #[test]
    fn single_selection_uses_previous_accuracy() {
        let test = test_set();
        let previous = linear_model(&[0.0; 6]);
        let update = linear_model(&[1.0, -1.0, -1.0, 1.0, 0.0, 0.0]);
        let t = tap(vec![2], vec![update.clone()], previous, &test);
        let mut lo = LeaveOneOut::new(3, &token());
        lo.observe_round(&t, &test).unwrap();
        assert_eq!(
            lo.contributions()[1],
            t.aggregate_accuracy - t.previous_accuracy
        );
    }

    #[test]
    fn missing_updates_are_a_capability_violation() {
        let test = test_set();
        let previous = linear_model(&[0.0; 6]);
        let mut bad_tap = tap(
            vec![1, 2],
            vec![previous.clone(), previous.clone()],
            previous,
            &test,
        );
        bad_tap.updates.pop();
        let mut lo = LeaveOneOut::new(2, &token());
        match lo.observe_round(&bad_tap, &test) {
            Err(Error::Capability(_)) => {}
            other => panic!("expected capability error, got {other:?}"),
        }
    }
}
