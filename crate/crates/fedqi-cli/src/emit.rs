//! Result emission: round/score CSVs and a JSON summary.
//!
//! All reals are printed with 9 significant digits. Output is byte-stable:
//! the same bundle always produces the same files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::ser::Serializer;
use serde::Serialize;

use fedqi_core::estimator::write_vector_csv;
use fedqi_core::scoring::RuleConfig;

use crate::config::{config_echo, Mode};
use crate::experiment::{FoldResult, ResultBundle};

/// Round to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("own formatting")
}

/// Render with exactly 9 significant digits: positional for moderate
/// magnitudes, scientific otherwise. Non-finite values print as `nan`/`inf`.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp10 = x.abs().log10().floor() as i32;
    if (-4..=8).contains(&exp10) {
        format!("{x:.*}", (8 - exp10).max(0) as usize)
    } else {
        format!("{x:.8e}")
    }
}

/// JSON float wrapper carrying the 9-significant-digit convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sig9(pub f64);

impl Serialize for Sig9 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(round_sig9(self.0))
    }
}

fn sig9_vec(values: &[f64]) -> Vec<Sig9> {
    values.iter().map(|&v| Sig9(v)).collect()
}

#[derive(Serialize)]
struct SpearmanStats {
    mean: Sig9,
    std: Sig9,
    min: Sig9,
    max: Sig9,
    per_fold: Vec<Option<Sig9>>,
    degenerate_folds: usize,
}

#[derive(Serialize)]
struct CheaterJson {
    positions: Vec<(usize, Sig9)>,
    honest_mean: Sig9,
    cheater_mean: Sig9,
}

#[derive(Serialize)]
struct LooJson {
    contributions: Vec<Sig9>,
    spearman_loo: Option<Sig9>,
    spearman_qi: Option<Sig9>,
}

#[derive(Serialize)]
struct EstimatorJson {
    qualities: Option<Vec<Sig9>>,
    spearman: Option<Sig9>,
    residual: Option<Sig9>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

#[derive(Serialize)]
struct FoldJson {
    fold: usize,
    seed: u64,
    baseline_accuracy: Sig9,
    final_accuracy: Sig9,
    final_spearman: Option<Sig9>,
    final_scores: Vec<Sig9>,
    final_ranks: Vec<Sig9>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cheater: Option<CheaterJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loo: Option<LooJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimator: Option<EstimatorJson>,
}

#[derive(Serialize)]
struct RuleConfigJson {
    rules: String,
    tau_good: Sig9,
    tau_bad: Sig9,
    tau_ugly: Sig9,
    value_based: bool,
    skip_rounds: usize,
}

impl RuleConfigJson {
    fn from(cfg: &RuleConfig) -> Self {
        Self {
            rules: cfg.rules.label(),
            tau_good: Sig9(cfg.tau_good),
            tau_bad: Sig9(cfg.tau_bad),
            tau_ugly: Sig9(cfg.tau_ugly),
            value_based: cfg.value_based,
            skip_rounds: cfg.skip_rounds,
        }
    }
}

#[derive(Serialize)]
struct GridJson {
    best: RuleConfigJson,
    best_mean_spearman: Sig9,
    evaluated_configs: usize,
}

#[derive(Serialize)]
struct CheaterSummaryJson {
    honest_mean: Sig9,
    cheater_mean: Sig9,
    mean_gap: Sig9,
}

#[derive(Serialize)]
struct LooSummaryJson {
    mean_spearman_loo: Sig9,
    mean_spearman_qi: Sig9,
}

#[derive(Serialize)]
struct SummaryJson {
    config: std::collections::BTreeMap<String, String>,
    final_spearman: SpearmanStats,
    folds: Vec<FoldJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cheater_summary: Option<CheaterSummaryJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loo_summary: Option<LooSummaryJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_trajectories: Option<Vec<Vec<Vec<Sig9>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridJson>,
}

fn spearman_stats(folds: &[FoldResult]) -> SpearmanStats {
    // Degenerate (all-tied) folds carry no ordering signal and enter the
    // statistics as the 0 baseline.
    let values: Vec<f64> = folds
        .iter()
        .map(|f| f.final_spearman.unwrap_or(0.0))
        .collect();
    let (mean, std, min, max) = if values.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    };
    SpearmanStats {
        mean: Sig9(mean),
        std: Sig9(std),
        min: Sig9(min),
        max: Sig9(max),
        per_fold: folds
            .iter()
            .map(|f| f.final_spearman.map(Sig9))
            .collect(),
        degenerate_folds: folds.iter().filter(|f| f.final_spearman.is_none()).count(),
    }
}

fn fold_json(fold: &FoldResult) -> FoldJson {
    FoldJson {
        fold: fold.fold,
        seed: fold.fold_seed,
        baseline_accuracy: Sig9(fold.baseline_accuracy),
        final_accuracy: Sig9(fold.final_accuracy()),
        final_spearman: fold.final_spearman.map(Sig9),
        final_scores: sig9_vec(&fold.final_scores),
        final_ranks: sig9_vec(&fold.final_ranks),
        cheater: fold.cheater.as_ref().map(|c| CheaterJson {
            positions: c.positions.iter().map(|&(id, r)| (id, Sig9(r))).collect(),
            honest_mean: Sig9(c.honest_mean),
            cheater_mean: Sig9(c.cheater_mean),
        }),
        loo: fold.loo.as_ref().map(|l| LooJson {
            contributions: sig9_vec(&l.contributions),
            spearman_loo: l.spearman_loo.map(Sig9),
            spearman_qi: l.spearman_qi.map(Sig9),
        }),
        estimator: fold.estimator.as_ref().map(|e| EstimatorJson {
            qualities: e.qualities.as_deref().map(sig9_vec),
            spearman: e.spearman.map(Sig9),
            residual: e.residual.map(Sig9),
            failure: e.failure.clone(),
        }),
    }
}

fn summary(bundle: &ResultBundle) -> SummaryJson {
    let folds = &bundle.folds;
    let cheater_summary = (bundle.config.mode.uses_cheaters() && !folds.is_empty()).then(|| {
        let n = folds.len() as f64;
        let honest = folds
            .iter()
            .filter_map(|f| f.cheater.as_ref())
            .map(|c| c.honest_mean)
            .sum::<f64>()
            / n;
        let cheater = folds
            .iter()
            .filter_map(|f| f.cheater.as_ref())
            .map(|c| c.cheater_mean)
            .sum::<f64>()
            / n;
        CheaterSummaryJson {
            honest_mean: Sig9(honest),
            cheater_mean: Sig9(cheater),
            mean_gap: Sig9(honest - cheater),
        }
    });
    let loo_summary = (bundle.config.mode == Mode::Loo && !folds.is_empty()).then(|| {
        let n = folds.len() as f64;
        let loo = folds
            .iter()
            .filter_map(|f| f.loo.as_ref())
            .map(|l| l.spearman_loo.unwrap_or(0.0))
            .sum::<f64>()
            / n;
        let qi = folds
            .iter()
            .filter_map(|f| f.loo.as_ref())
            .map(|l| l.spearman_qi.unwrap_or(0.0))
            .sum::<f64>()
            / n;
        LooSummaryJson {
            mean_spearman_loo: Sig9(loo),
            mean_spearman_qi: Sig9(qi),
        }
    });
    let weight_trajectories = (bundle.config.mode == Mode::Boost).then(|| {
        folds
            .iter()
            .map(|f| {
                f.weight_rounds
                    .as_deref()
                    .unwrap_or(&[])
                    .iter()
                    .map(|w| sig9_vec(w))
                    .collect()
            })
            .collect()
    });
    SummaryJson {
        config: config_echo(&bundle.config),
        final_spearman: spearman_stats(folds),
        folds: folds.iter().map(fold_json).collect(),
        cheater_summary,
        loo_summary,
        weight_trajectories,
        grid: bundle.grid.as_ref().map(|g| GridJson {
            best: RuleConfigJson::from(&g.best),
            best_mean_spearman: Sig9(g.best_mean_spearman),
            evaluated_configs: g.table.len(),
        }),
    }
}

fn write_rounds_csv(bundle: &ResultBundle, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "fold,round,omega,accuracy,selected_ids,r_s")?;
    for fold in &bundle.folds {
        for (log, rs) in fold.logs.iter().zip(&fold.spearman_rounds) {
            let ids: Vec<String> = log.selected.iter().map(|id| id.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fold.fold,
                log.round,
                fmt_sig9(log.improvement),
                fmt_sig9(log.accuracy),
                ids.join(";"),
                rs.map(fmt_sig9).unwrap_or_else(|| "nan".into()),
            )?;
        }
    }
    Ok(())
}

fn write_scores_csv(bundle: &ResultBundle, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "fold,round,participant,phi")?;
    for fold in &bundle.folds {
        for (log, phi) in fold.logs.iter().zip(&fold.phi_rounds) {
            for (idx, &score) in phi.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    fold.fold,
                    log.round,
                    idx + 1,
                    fmt_sig9(score)
                )?;
            }
        }
    }
    Ok(())
}

fn write_grid_csv(bundle: &ResultBundle, path: &Path) -> Result<()> {
    let grid = bundle.grid.as_ref().expect("grid outcome");
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "rules,tau,value_based,skip_rounds,mean_spearman")?;
    for point in &grid.table {
        writeln!(
            out,
            "{},{},{},{},{}",
            point.config.rules.label(),
            fmt_sig9(point.config.tau_good),
            point.config.value_based,
            point.config.skip_rounds,
            fmt_sig9(point.mean_spearman),
        )?;
    }
    Ok(())
}

/// Write rounds.csv, scores.csv, summary.json, and per-mode extras into
/// `out_dir`; returns the written paths.
pub fn emit_results(bundle: &ResultBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();

    let rounds = out_dir.join("rounds.csv");
    write_rounds_csv(bundle, &rounds).with_context(|| format!("writing {}", rounds.display()))?;
    written.push(rounds);

    let scores = out_dir.join("scores.csv");
    write_scores_csv(bundle, &scores).with_context(|| format!("writing {}", scores.display()))?;
    written.push(scores);

    if bundle.grid.is_some() {
        let grid = out_dir.join("grid.csv");
        write_grid_csv(bundle, &grid).with_context(|| format!("writing {}", grid.display()))?;
        written.push(grid);
    }

    if bundle.config.mode == Mode::Estimator {
        for fold in &bundle.folds {
            if let Some(est) = &fold.estimator {
                let a_path = out_dir.join(format!("fold_{}_participation.csv", fold.fold));
                est.matrix.write_csv(&a_path)?;
                written.push(a_path);
                let v_path = out_dir.join(format!("fold_{}_observations.csv", fold.fold));
                write_vector_csv(&est.observations, &v_path)?;
                written.push(v_path);
                if let Some(q) = &est.qualities {
                    let u_path = out_dir.join(format!("fold_{}_qualities.csv", fold.fold));
                    write_vector_csv(q, &u_path)?;
                    written.push(u_path);
                }
            }
        }
    }

    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary(bundle)).context("serializing summary")?;
    fs::write(&summary_path, json.as_bytes())
        .with_context(|| format!("writing {}", summary_path.display()))?;
    written.push(summary_path);

    Ok(written)
}
