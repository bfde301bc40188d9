//! Experiment configuration.
//!
//! Configuration layers, later layers winning: built-in defaults, a named
//! preset, a flat key-value config file (`key = value`, one per line, `#`
//! comments), and command-line flags. Validation is exhaustive: every
//! violation is reported at once, each naming the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedqi_core::scoring::{RuleConfig, RuleSet};

use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    fn default_dir(&self) -> PathBuf {
        PathBuf::from("data").join(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain quality inference over graded shards.
    Qi,
    /// Sign-flipping attackers among unperturbed participants.
    Attack,
    /// Zero-gradient free-riders among unperturbed participants.
    Freeride,
    /// Multiplicative-weight boosting of the aggregate update.
    Boost,
    /// Leave-one-out contribution baseline next to quality inference.
    Loo,
    /// Least-squares quality recovery from the participation system.
    Estimator,
    /// Scoring-rule grid search over the recorded rounds.
    Grid,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Qi => "qi",
            Mode::Attack => "attack",
            Mode::Freeride => "freeride",
            Mode::Boost => "boost",
            Mode::Loo => "loo",
            Mode::Estimator => "estimator",
            Mode::Grid => "grid",
        }
    }

    pub fn uses_cheaters(&self) -> bool {
        matches!(self, Mode::Attack | Mode::Freeride)
    }

    /// Cheater runs keep every label unperturbed; all other modes grade
    /// shard quality by label noise.
    pub fn perturbs_labels(&self) -> bool {
        !self.uses_cheaters()
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub mode: Mode,
    pub participants: usize,
    pub select_count: usize,
    pub rounds: usize,
    pub folds: usize,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub cheaters: Vec<usize>,
    pub rules: RuleConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Seed for one fold: master seed XOR fold index.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed ^ fold as u64
    }
}

/// All violations found during validation, each naming its key.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problems):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Layered, partially specified configuration.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    pub dataset: Option<String>,
    pub model: Option<String>,
    pub mode: Option<String>,
    pub participants: Option<String>,
    pub select: Option<String>,
    pub rounds: Option<String>,
    pub folds: Option<String>,
    pub seed: Option<String>,
    pub kappa: Option<String>,
    pub cheaters: Option<String>,
    pub rules: Option<String>,
    pub tau: Option<String>,
    pub tau_good: Option<String>,
    pub tau_bad: Option<String>,
    pub tau_ugly: Option<String>,
    pub value_based: Option<String>,
    pub skip_rounds: Option<String>,
    pub data_dir: Option<String>,
    pub out: Option<String>,
    pub workers: Option<String>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "dataset",
    "model",
    "mode",
    "participants",
    "select",
    "rounds",
    "folds",
    "seed",
    "kappa",
    "cheaters",
    "rules",
    "tau",
    "tau_good",
    "tau_bad",
    "tau_ugly",
    "value_based",
    "skip_rounds",
    "data_dir",
    "out",
    "workers",
];

impl ConfigBuilder {
    /// Apply one `key = value` assignment. `preset` expands immediately so
    /// later keys can override it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "preset" => {
                let preset = presets::find(value)
                    .ok_or_else(|| format!("preset: unknown name {value:?}"))?;
                preset.apply(self);
            }
            "dataset" => self.dataset = Some(value.into()),
            "model" => self.model = Some(value.into()),
            "mode" => self.mode = Some(value.into()),
            "participants" => self.participants = Some(value.into()),
            "select" => self.select = Some(value.into()),
            "rounds" => self.rounds = Some(value.into()),
            "folds" => self.folds = Some(value.into()),
            "seed" => self.seed = Some(value.into()),
            "kappa" => self.kappa = Some(value.into()),
            "cheaters" => self.cheaters = Some(value.into()),
            "rules" => self.rules = Some(value.into()),
            "tau" => self.tau = Some(value.into()),
            "tau_good" => self.tau_good = Some(value.into()),
            "tau_bad" => self.tau_bad = Some(value.into()),
            "tau_ugly" => self.tau_ugly = Some(value.into()),
            "value_based" => self.value_based = Some(value.into()),
            "skip_rounds" => self.skip_rounds = Some(value.into()),
            "data_dir" => self.data_dir = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "workers" => self.workers = Some(value.into()),
            other => return Err(format!("unknown configuration key {other:?}")),
        }
        Ok(())
    }

    /// Parse a flat config file: one `key = value` per line, `#` comments,
    /// blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            violations: vec![format!("config file {path:?}: {e}")],
        })?;
        let mut violations = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(e) = self.set(key.trim(), value) {
                        violations.push(format!("line {}: {e}", lineno + 1));
                    }
                }
                None => violations.push(format!(
                    "line {}: expected `key = value`, found {line:?}",
                    lineno + 1
                )),
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }

    /// Resolve and validate. Every violation is collected and reported.
    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut violations = Vec::new();

        let dataset = match self.dataset.as_deref().unwrap_or("mnist") {
            "mnist" => DatasetKind::Mnist,
            "cifar10" => DatasetKind::Cifar10,
            other => {
                violations.push(format!("dataset: expected mnist or cifar10, found {other:?}"));
                DatasetKind::Mnist
            }
        };
        let model = match self.model.as_deref().unwrap_or("mlp") {
            "mlp" => ModelKind::Mlp,
            other => {
                violations.push(format!("model: expected mlp, found {other:?}"));
                ModelKind::Mlp
            }
        };
        let mode = match self.mode.as_deref().unwrap_or("qi") {
            "qi" => Mode::Qi,
            "attack" => Mode::Attack,
            "freeride" => Mode::Freeride,
            "boost" => Mode::Boost,
            "loo" => Mode::Loo,
            "estimator" => Mode::Estimator,
            "grid" => Mode::Grid,
            other => {
                violations.push(format!(
                    "mode: expected qi|attack|freeride|boost|loo|estimator|grid, found {other:?}"
                ));
                Mode::Qi
            }
        };

        let participants =
            parse_or(&self.participants, 25usize, "participants", &mut violations);
        let select_count = parse_or(&self.select, 5usize, "select", &mut violations);
        let rounds = parse_or(&self.rounds, 100usize, "rounds", &mut violations);
        let folds = parse_or(&self.folds, 10usize, "folds", &mut violations);
        let seed = parse_or(&self.seed, 42u64, "seed", &mut violations);
        let workers = parse_or(
            &self.workers,
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            "workers",
            &mut violations,
        );

        let kappa = match &self.kappa {
            None => None,
            Some(raw) => match raw.parse::<f64>() {
                Ok(k) => Some(k),
                Err(_) => {
                    violations.push(format!("kappa: expected a real number, found {raw:?}"));
                    None
                }
            },
        };

        let cheaters = match &self.cheaters {
            None => Vec::new(),
            Some(raw) => {
                let mut ids = Vec::new();
                for part in raw.split(',').filter(|p| !p.trim().is_empty()) {
                    match part.trim().parse::<usize>() {
                        Ok(id) => ids.push(id),
                        Err(_) => violations
                            .push(format!("cheaters: expected comma-separated ids, found {part:?}")),
                    }
                }
                ids
            }
        };

        let rules = self.build_rules(&mut violations);

        // Structural checks. Ranking needs at least two participants.
        if participants < 2 {
            violations.push("participants: must be at least 2".into());
        }
        if select_count < 1 || select_count > participants {
            violations.push(format!(
                "select: must be in 1..={participants}, found {select_count}"
            ));
        }
        if rounds < 1 {
            violations.push("rounds: must be at least 1".into());
        }
        if folds < 1 {
            violations.push("folds: must be at least 1".into());
        }
        if workers < 1 {
            violations.push("workers: must be at least 1".into());
        }
        if !rules.rules.any() {
            violations.push("rules: at least one of good, bad, ugly must be enabled".into());
        }
        if rules.tau_good < 0.0 || rules.tau_bad < 0.0 || rules.tau_ugly < 0.0 {
            violations.push("tau: thresholds must be non-negative".into());
        }
        if rounds > 0 && rules.skip_rounds >= rounds {
            violations.push(format!(
                "skip_rounds: must be below rounds ({rounds}), found {}",
                rules.skip_rounds
            ));
        }

        // Mode-specific fields must be present exactly when required.
        match (mode, kappa) {
            (Mode::Boost, None) => violations.push("kappa: required in boost mode".into()),
            (Mode::Boost, Some(k)) if !(0.0..1.0).contains(&k) => {
                violations.push(format!("kappa: must be in [0, 1), found {k}"))
            }
            (m, Some(_)) if m != Mode::Boost => {
                violations.push(format!("kappa: only valid in boost mode, not {}", m.name()))
            }
            _ => {}
        }
        if mode.uses_cheaters() {
            if cheaters.is_empty() {
                violations.push(format!("cheaters: required in {} mode", mode.name()));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &c in &cheaters {
                if c < 1 || c > participants {
                    violations.push(format!("cheaters: id {c} outside 1..={participants}"));
                } else if !seen.insert(c) {
                    violations.push(format!("cheaters: id {c} listed twice"));
                }
            }
            if !cheaters.is_empty() && cheaters.len() >= participants {
                violations.push("cheaters: must be a proper subset of participants".into());
            }
        } else if !cheaters.is_empty() {
            violations.push(format!(
                "cheaters: only valid in attack/freeride modes, not {}",
                mode.name()
            ));
        }

        if !violations.is_empty() {
            return Err(ConfigError { violations });
        }

        Ok(ExperimentConfig {
            dataset,
            model,
            mode,
            participants,
            select_count,
            rounds,
            folds,
            seed,
            kappa,
            cheaters,
            rules,
            data_dir: self
                .data_dir
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(|| dataset.default_dir()),
            out_dir: self
                .out
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("results")),
            workers,
        })
    }

    fn build_rules(&self, violations: &mut Vec<String>) -> RuleConfig {
        let mut rules = RuleConfig::default();
        if let Some(raw) = &self.rules {
            let mut set = RuleSet {
                good: false,
                bad: false,
                ugly: false,
            };
            for part in raw.split(',').filter(|p| !p.trim().is_empty()) {
                match part.trim() {
                    "good" => set.good = true,
                    "bad" => set.bad = true,
                    "ugly" => set.ugly = true,
                    other => violations.push(format!(
                        "rules: expected a comma-separated subset of good,bad,ugly; found {other:?}"
                    )),
                }
            }
            rules.rules = set;
        }
        if let Some(raw) = &self.tau {
            match raw.parse::<f64>() {
                Ok(t) => {
                    rules.tau_good = t;
                    rules.tau_bad = t;
                    rules.tau_ugly = t;
                }
                Err(_) => violations.push(format!("tau: expected a real number, found {raw:?}")),
            }
        }
        for (key, raw, slot) in [
            ("tau_good", &self.tau_good, &mut rules.tau_good),
            ("tau_bad", &self.tau_bad, &mut rules.tau_bad),
            ("tau_ugly", &self.tau_ugly, &mut rules.tau_ugly),
        ] {
            if let Some(raw) = raw {
                match raw.parse::<f64>() {
                    Ok(t) => *slot = t,
                    Err(_) => {
                        violations.push(format!("{key}: expected a real number, found {raw:?}"))
                    }
                }
            }
        }
        if let Some(raw) = &self.value_based {
            match raw.parse::<bool>() {
                Ok(v) => rules.value_based = v,
                Err(_) => {
                    violations.push(format!("value_based: expected true or false, found {raw:?}"))
                }
            }
        }
        if let Some(raw) = &self.skip_rounds {
            match raw.parse::<usize>() {
                Ok(v) => rules.skip_rounds = v,
                Err(_) => violations.push(format!(
                    "skip_rounds: expected a non-negative integer, found {raw:?}"
                )),
            }
        }
        rules
    }
}

fn parse_or<T: std::str::FromStr + Copy>(
    raw: &Option<String>,
    default: T,
    key: &str,
    violations: &mut Vec<String>,
) -> T {
    match raw {
        None => default,
        Some(raw) => match raw.parse::<T>() {
            Ok(v) => v,
            Err(_) => {
                violations.push(format!("{key}: could not parse {raw:?}"));
                default
            }
        },
    }
}

/// Key-value echo of a resolved config, used for the summary and for tests.
pub fn config_echo(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("dataset".into(), cfg.dataset.name().into());
    map.insert("model".into(), "mlp".into());
    map.insert("mode".into(), cfg.mode.name().into());
    map.insert("participants".into(), cfg.participants.to_string());
    map.insert("select".into(), cfg.select_count.to_string());
    map.insert("rounds".into(), cfg.rounds.to_string());
    map.insert("folds".into(), cfg.folds.to_string());
    map.insert("seed".into(), cfg.seed.to_string());
    if let Some(k) = cfg.kappa {
        map.insert("kappa".into(), k.to_string());
    }
    if !cfg.cheaters.is_empty() {
        map.insert(
            "cheaters".into(),
            cfg.cheaters
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    map.insert("rules".into(), cfg.rules.rules.label());
    map.insert("tau_good".into(), cfg.rules.tau_good.to_string());
    map.insert("tau_bad".into(), cfg.rules.tau_bad.to_string());
    map.insert("tau_ugly".into(), cfg.rules.tau_ugly.to_string());
    map.insert("value_based".into(), cfg.rules.value_based.to_string());
    map.insert("skip_rounds".into(), cfg.rules.skip_rounds.to_string());
    map.insert("data_dir".into(), cfg.data_dir.display().to_string());
    map.insert("out".into(), cfg.out_dir.display().to_string());
    map.insert("workers".into(), cfg.workers.to_string());
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ConfigBuilder {
        let mut b = ConfigBuilder::default();
        b.set("participants", "5").unwrap();
        b.set("select", "2").unwrap();
        b.set("rounds", "10").unwrap();
        b.set("folds", "2").unwrap();
        b
    }

    #[test]
    fn defaults_build_cleanly() {
        let cfg = ConfigBuilder::default().build().unwrap();
        assert_eq!(cfg.mode, Mode::Qi);
        assert_eq!(cfg.participants, 25);
        assert_eq!(cfg.select_count, 5);
        assert_eq!(cfg.data_dir, PathBuf::from("data/mnist"));
    }

    #[test]
    fn preset_expands_and_overrides_apply() {
        let mut b = ConfigBuilder::default();
        b.set("preset", "mm5").unwrap();
        b.set("rounds", "7").unwrap();
        let cfg = b.build().unwrap();
        assert_eq!(cfg.participants, 5);
        assert_eq!(cfg.select_count, 2);
        assert_eq!(cfg.rounds, 7);
    }

    type Setup = fn(&mut ConfigBuilder);

    #[test]
    fn every_injected_violation_names_its_key() {
        // (key, bad value, extra setup) — each must fail and mention the key.
        let cases: Vec<(&str, &str, Setup)> = vec![
            ("participants", "0", |_| {}),
            ("participants", "1", |_| {}),
            ("participants", "abc", |_| {}),
            ("select", "9", |_| {}),
            ("rounds", "0", |_| {}),
            ("folds", "0", |_| {}),
            ("seed", "xyz", |_| {}),
            ("workers", "0", |_| {}),
            ("dataset", "imagenet", |_| {}),
            ("model", "cnn", |_| {}),
            ("mode", "nonsense", |_| {}),
            ("kappa", "0.1", |_| {}), // kappa outside boost mode
            ("kappa", "1.5", |b| {
                b.set("mode", "boost").unwrap();
            }),
            ("cheaters", "3", |_| {}), // cheaters outside attack/freeride
            ("cheaters", "9", |b| {
                b.set("mode", "attack").unwrap();
            }),
            ("rules", "good,evil", |_| {}),
            ("tau", "-0.5", |_| {}),
            ("value_based", "maybe", |_| {}),
            ("skip_rounds", "10", |_| {}), // equal to rounds
        ];
        for (key, value, setup) in cases {
            let mut b = base();
            setup(&mut b);
            b.set(key, value).unwrap();
            let err = b.build().expect_err(&format!("{key}={value} must fail"));
            assert!(
                err.violations.iter().any(|v| v.contains(key)),
                "{key}={value}: violations {:?} do not name the key",
                err.violations
            );
        }
    }

    #[test]
    fn violations_accumulate() {
        let mut b = ConfigBuilder::default();
        b.set("participants", "0").unwrap();
        b.set("rounds", "0").unwrap();
        b.set("kappa", "2.0").unwrap();
        let err = b.build().unwrap_err();
        assert!(err.violations.len() >= 3, "{:?}", err.violations);
    }

    #[test]
    fn boost_mode_requires_kappa() {
        let mut b = base();
        b.set("mode", "boost").unwrap();
        let err = b.build().unwrap_err();
        assert!(err.violations.iter().any(|v| v.contains("kappa")));
        b.set("kappa", "0.1").unwrap();
        let cfg = b.build().unwrap();
        assert_eq!(cfg.kappa, Some(0.1));
    }

    #[test]
    fn attack_mode_requires_cheaters() {
        let mut b = base();
        b.set("mode", "attack").unwrap();
        assert!(b.build().is_err());
        b.set("cheaters", "1,3").unwrap();
        let cfg = b.build().unwrap();
        assert_eq!(cfg.cheaters, vec![1, 3]);
        assert!(!cfg.mode.perturbs_labels());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(
            &path,
            "# comment\nmode = qi\nparticipants = 5\nselect = 2\nrounds=20\nfolds = 1\ntau = 0.01\n",
        )
        .unwrap();
        let mut b = ConfigBuilder::default();
        b.apply_file(&path).unwrap();
        let cfg = b.build().unwrap();
        assert_eq!(cfg.participants, 5);
        assert_eq!(cfg.rules.tau_good, 0.01);
        assert_eq!(cfg.rules.tau_bad, 0.01);
    }

    #[test]
    fn malformed_config_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "mode = qi\nnot a line\nbogus_key = 3\n").unwrap();
        let mut b = ConfigBuilder::default();
        let err = b.apply_file(&path).unwrap_err();
        assert_eq!(err.violations.len(), 2);
        assert!(err.violations[0].contains("line 2"));
        assert!(err.violations[1].contains("line 3"));
    }

    #[test]
    fn fold_seeds_xor_fold_index() {
        let cfg = ConfigBuilder::default().build().unwrap();
        assert_eq!(cfg.fold_seed(0), 42);
        assert_eq!(cfg.fold_seed(3), 42 ^ 3);
    }
}
