//! Multi-fold experiment execution.
//!
//! A run executes `folds` independent federated simulations (fold seed =
//! master seed XOR fold index), each producing the aggregate round stream,
//! score trajectories, and per-mode extras. Folds run in parallel on a
//! worker pool; results are deterministic for a fixed config and seed
//! regardless of worker count.

use anyhow::{Context, Result};
use rayon::prelude::*;

use fedqi_core::data::{load_cifar10, load_mnist, quality_split, split_iid, LabeledDataset, Shard};
use fedqi_core::estimator::leave_one_out::LeaveOneOut;
use fedqi_core::estimator::{
    residual_error, solve_overdetermined, solve_underdetermined, Aggregate, DVector,
    ParticipationMatrix,
};
use fedqi_core::federation::privileged::PrivilegedAccess;
use fedqi_core::federation::{Behaviour, BoostConfig, Federation, FederationConfig, RoundLog};
use fedqi_core::metrics::{cheater_metrics, ranks, score_spearman, CheaterReport, TiePolicy};
use fedqi_core::model::{Architecture, ModelParams, TrainSettings};
use fedqi_core::rng;
use fedqi_core::rounds::RoundObservation;
use fedqi_core::scoring::{self, GridPoint, GridSpec, RuleConfig, ScoreVector};

use crate::config::{DatasetKind, ExperimentConfig, Mode};

/// Leave-one-out extras for one fold.
#[derive(Debug, Clone)]
pub struct LooResult {
    pub contributions: Vec<f64>,
    pub spearman_loo: Option<f64>,
    pub spearman_qi: Option<f64>,
}

/// Least-squares recovery extras for one fold.
#[derive(Debug, Clone)]
pub struct EstimatorResult {
    pub qualities: Option<Vec<f64>>,
    pub spearman: Option<f64>,
    /// Residual of the least-squares fit; absent on the minimum-norm path.
    pub residual: Option<f64>,
    /// Failure note when the system was rank deficient.
    pub failure: Option<String>,
    pub matrix: ParticipationMatrix,
    pub observations: Vec<f64>,
}

/// Everything recorded for one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub fold_seed: u64,
    pub baseline_accuracy: f64,
    pub logs: Vec<RoundLog>,
    /// Score vector snapshot after each round.
    pub phi_rounds: Vec<Vec<f64>>,
    /// Running Spearman coefficient after each round (None = degenerate).
    pub spearman_rounds: Vec<Option<f64>>,
    pub final_scores: Vec<f64>,
    pub final_ranks: Vec<f64>,
    pub final_spearman: Option<f64>,
    pub cheater: Option<CheaterReport>,
    /// Boost-mode weight snapshot after each round.
    pub weight_rounds: Option<Vec<Vec<f64>>>,
    pub loo: Option<LooResult>,
    pub estimator: Option<EstimatorResult>,
}

impl FoldResult {
    pub fn final_accuracy(&self) -> f64 {
        self.logs
            .last()
            .map(|l| l.accuracy)
            .unwrap_or(self.baseline_accuracy)
    }

    pub fn observations(&self) -> Vec<RoundObservation> {
        self.logs.iter().map(RoundLog::observation).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: RuleConfig,
    pub best_mean_spearman: f64,
    pub table: Vec<GridPoint>,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub folds: Vec<FoldResult>,
    pub grid: Option<GridOutcome>,
}

impl ResultBundle {
    /// Final per-fold Spearman coefficients, degenerate folds as 0.
    pub fn final_spearmans(&self) -> Vec<f64> {
        self.folds
            .iter()
            .map(|f| f.final_spearman.unwrap_or(0.0))
            .collect()
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let dataset = match cfg.dataset {
        DatasetKind::Mnist => load_mnist(&cfg.data_dir),
        DatasetKind::Cifar10 => load_cifar10(&cfg.data_dir),
    };
    dataset.with_context(|| {
        format!(
            "loading {} from {}",
            cfg.dataset.name(),
            cfg.data_dir.display()
        )
    })
}

/// Run all folds of the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let dataset = load_dataset(cfg)?;
    run_experiment_on(cfg, &dataset)
}

/// Run on an already loaded dataset (shared across experiments in tests and
/// sweeps).
pub fn run_experiment_on(cfg: &ExperimentConfig, dataset: &LabeledDataset) -> Result<ResultBundle> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    let folds: Result<Vec<FoldResult>> = pool.install(|| {
        (0..cfg.folds)
            .into_par_iter()
            .map(|fold| run_fold(cfg, dataset, fold))
            .collect()
    });
    let folds = folds?;
    let grid = match cfg.mode {
        Mode::Grid => {
            let observations: Vec<Vec<RoundObservation>> =
                folds.iter().map(|f| f.observations()).collect();
            let (best, table) =
                scoring::run_grid_search(&observations, cfg.participants, &GridSpec::default())?;
            let best_mean_spearman = table
                .iter()
                .find(|p| p.config == best)
                .map(|p| p.mean_spearman)
                .unwrap_or(0.0);
            Some(GridOutcome {
                best,
                best_mean_spearman,
                table,
            })
        }
        _ => None,
    };
    Ok(ResultBundle {
        config: cfg.clone(),
        folds,
        grid,
    })
}

fn behaviours(cfg: &ExperimentConfig) -> Vec<Behaviour> {
    let mut map = vec![Behaviour::Honest; cfg.participants];
    let cheat_as = match cfg.mode {
        Mode::Attack => Behaviour::Attacker,
        Mode::Freeride => Behaviour::FreeRider,
        _ => return map,
    };
    for &c in &cfg.cheaters {
        map[c - 1] = cheat_as;
    }
    map
}

fn split_for_mode(
    cfg: &ExperimentConfig,
    dataset: &LabeledDataset,
    fold_seed: u64,
) -> Result<(Vec<Shard>, Shard)> {
    let mut shards = if cfg.mode.perturbs_labels() {
        quality_split(dataset, cfg.participants, fold_seed)?
    } else {
        split_iid(dataset, cfg.participants, fold_seed)?
    };
    let test = shards.pop().expect("split returns N+1 shards");
    Ok((shards, test))
}

fn run_fold(cfg: &ExperimentConfig, dataset: &LabeledDataset, fold: usize) -> Result<FoldResult> {
    let fold_seed = cfg.fold_seed(fold);
    let (shards, test_shard) = split_for_mode(cfg, dataset, fold_seed)?;
    let model = ModelParams::init(
        Architecture::mlp(dataset.feature_dim(), dataset.classes()),
        &mut rng::derive(fold_seed, &[rng::tag::MODEL_INIT]),
    );
    let boost = match cfg.mode {
        Mode::Boost => Some(BoostConfig {
            kappa: cfg.kappa.expect("validated"),
            rules: cfg.rules.clone(),
        }),
        _ => None,
    };
    let train = TrainSettings::default();
    train.validate()?;
    let mut federation = Federation::new(
        model,
        shards,
        test_shard.clone(),
        behaviours(cfg),
        FederationConfig {
            select_count: cfg.select_count,
            train,
            boost,
            seed: fold_seed,
        },
    )?;

    let mut scores = ScoreVector::new(cfg.participants);
    let mut phi_rounds = Vec::with_capacity(cfg.rounds);
    let mut spearman_rounds = Vec::with_capacity(cfg.rounds);
    let mut weight_rounds = (cfg.mode == Mode::Boost).then(Vec::new);
    let mut previous: Option<(f64, Vec<usize>)> = None;

    let access = PrivilegedAccess::acknowledge_boundary_bypass();
    let mut loo_acc = (cfg.mode == Mode::Loo).then(|| LeaveOneOut::new(cfg.participants, &access));

    for _ in 0..cfg.rounds {
        let log = match &mut loo_acc {
            Some(acc) => {
                let (log, tap) = federation.run_round_privileged(&access)?;
                acc.observe_round(&tap, &test_shard.data)?;
                log
            }
            None => federation.run_round()?,
        };
        scoring::score_round(
            &mut scores,
            log.round,
            log.improvement,
            previous.as_ref().map(|(w, s)| (*w, s.as_slice())),
            &log.selected,
            &cfg.rules,
        );
        phi_rounds.push(scores.values().to_vec());
        spearman_rounds.push(score_spearman(scores.values())?.coefficient());
        if let Some(w) = &mut weight_rounds {
            w.push(federation.boost_weights().to_vec());
        }
        previous = Some((log.improvement, log.selected.clone()));
    }

    let final_scores = scores.values().to_vec();
    let final_ranks = ranks(&final_scores, TiePolicy::Average)?;
    let final_spearman = score_spearman(&final_scores)?.coefficient();
    let cheater = cfg
        .mode
        .uses_cheaters()
        .then(|| cheater_metrics(&final_scores, &cfg.cheaters))
        .transpose()?;
    let loo = match loo_acc {
        None => None,
        Some(acc) => {
            let contributions = acc.contributions().to_vec();
            let spearman_loo = score_spearman(&contributions)?.coefficient();
            Some(LooResult {
                contributions,
                spearman_loo,
                spearman_qi: final_spearman,
            })
        }
    };
    let estimator = (cfg.mode == Mode::Estimator)
        .then(|| recover_qualities(federation.history(), cfg.participants))
        .transpose()?;

    Ok(FoldResult {
        fold,
        fold_seed,
        baseline_accuracy: federation.baseline_accuracy(),
        logs: federation.history().to_vec(),
        phi_rounds,
        spearman_rounds,
        final_scores,
        final_ranks,
        final_spearman,
        cheater,
        weight_rounds,
        loo,
        estimator,
    })
}

/// Solve the participation system with the round improvements as the
/// observed aggregate qualities.
fn recover_qualities(logs: &[RoundLog], participants: usize) -> Result<EstimatorResult> {
    let observations: Vec<RoundObservation> = logs.iter().map(RoundLog::observation).collect();
    let matrix = ParticipationMatrix::from_observations(&observations, participants)?;
    let v: Vec<f64> = logs.iter().map(|l| l.improvement).collect();
    let design = matrix.design(Aggregate::Sum);
    let rhs = DVector::from_row_slice(&v);
    let overdetermined = matrix.rounds() >= participants;
    let solved = if overdetermined {
        solve_overdetermined(&design, &rhs)
    } else {
        solve_underdetermined(&design, &rhs)
    };
    Ok(match solved {
        Ok(u) => {
            let qualities: Vec<f64> = u.iter().cloned().collect();
            let spearman = score_spearman(&qualities)?.coefficient();
            let residual = overdetermined
                .then(|| residual_error(&design, &rhs))
                .transpose()?;
            EstimatorResult {
                qualities: Some(qualities),
                spearman,
                residual,
                failure: None,
                matrix,
                observations: v,
            }
        }
        Err(e) => EstimatorResult {
            qualities: None,
            spearman: None,
            residual: None,
            failure: Some(e.to_string()),
            matrix,
            observations: v,
        },
    })
}
