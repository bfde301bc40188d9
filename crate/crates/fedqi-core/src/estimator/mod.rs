//! Linear-system view of quality recovery.
//!
//! Treating each round's aggregate quality as the (noisy) sum of the
//! selected participants' dataset qualities yields `A·u = v`, where `A` is
//! the binary rounds-by-participants participation matrix. Overdetermined
//! systems take the least-squares solution `u = (AᵀA)⁻¹Aᵀv`;
//! underdetermined ones the minimum-norm solution `u = Aᵀ(AAᵀ)⁻¹v`. Normal
//! equations are solved by Cholesky after a singular-value gate with a
//! relative pivot tolerance of 1e-10; rank-deficient systems fail with their
//! condition number unless the pseudo-inverse path is requested explicitly.

pub mod leave_one_out;

pub use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::select_participants;
use crate::rng::{self, tag};
use crate::rounds::RoundObservation;

/// Relative singular-value threshold below which a normal-equation system is
/// treated as rank deficient.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Convention tying per-round observations to the selected qualities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    /// `v_i` is the mean of the selected qualities (matches federated
    /// averaging).
    #[default]
    Mean,
    /// `v_i` is the plain sum, the literal equation-system form.
    Sum,
}

/// Binary rounds-by-participants selection matrix; every row sums to the
/// per-round selection count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationMatrix {
    rounds: usize,
    participants: usize,
    entries: Vec<u8>,
}

impl ParticipationMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let rounds = rows.len();
        if rounds == 0 {
            return Err(Error::domain("participation matrix needs rows"));
        }
        let participants = rows[0].len();
        if participants == 0 {
            return Err(Error::domain("participation matrix needs columns"));
        }
        let mut entries = Vec::with_capacity(rounds * participants);
        for row in rows {
            if row.len() != participants {
                return Err(Error::domain("ragged participation rows"));
            }
            if row.iter().any(|&e| e > 1) {
                return Err(Error::domain("entries must be 0 or 1"));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self {
            rounds,
            participants,
            entries,
        })
    }

    /// Build from an observation stream; selection sets must share one size.
    pub fn from_observations(
        observations: &[RoundObservation],
        participants: usize,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::domain("no observations"));
        }
        let select_count = observations[0].selected.len();
        let mut entries = vec![0u8; observations.len() * participants];
        for (i, obs) in observations.iter().enumerate() {
            if obs.selected.len() != select_count {
                return Err(Error::domain("selection size varies across rounds"));
            }
            for &n in &obs.selected {
                if n < 1 || n > participants {
                    return Err(Error::domain(format!(
                        "participant {n} outside 1..={participants}"
                    )));
                }
                entries[i * participants + n - 1] = 1;
            }
        }
        Ok(Self {
            rounds: observations.len(),
            participants,
            entries,
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    pub fn entry(&self, round: usize, participant: usize) -> u8 {
        self.entries[round * self.participants + participant]
    }

    /// Per-round selection count; rows are validated to agree.
    pub fn row_sum(&self) -> usize {
        self.entries[..self.participants]
            .iter()
            .map(|&e| e as usize)
            .sum()
    }

    /// Dense design matrix under the given aggregate convention (`Mean`
    /// divides by the row sum).
    pub fn design(&self, aggregate: Aggregate) -> DMatrix<f64> {
        let scale = match aggregate {
            Aggregate::Sum => 1.0,
            Aggregate::Mean => 1.0 / self.row_sum() as f64,
        };
        DMatrix::from_fn(self.rounds, self.participants, |i, j| {
            f64::from(self.entries[i * self.participants + j]) * scale
        })
    }

    /// Plain CSV: one row per round, comma-separated 0/1 entries.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.rounds {
            let row: Vec<String> = (0..self.participants)
                .map(|j| self.entry(i, j).to_string())
                .collect();
            writeln!(file, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut rows = Vec::new();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<u8>, _> =
                line.split(',').map(|f| f.trim().parse::<u8>()).collect();
            rows.push(row.map_err(|e| Error::Format {
                expected: "comma-separated 0/1 entries".into(),
                found: format!("{line:?} ({e})"),
            })?);
        }
        Self::from_rows(&rows)
    }
}

/// Plain CSV vector: one value per line.
pub fn write_vector_csv(values: &[f64], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        writeln!(file, "{v}")?;
    }
    Ok(())
}

pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.trim().parse::<f64>().map_err(|e| Error::Format {
            expected: "one real per line".into(),
            found: format!("{line:?} ({e})"),
        })?);
    }
    Ok(out)
}

fn gram_condition(gram: &DMatrix<f64>) -> (f64, f64, f64) {
    let sv = gram.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min, max / min)
}

fn solve_gram(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let (sv_max, sv_min, condition) = gram_condition(&gram);
    log::debug!("normal-equation gram condition number: {condition:.3e}");
    if sv_min.is_nan() || sv_min <= PIVOT_TOLERANCE * sv_max {
        return Err(Error::Singular { condition });
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular { condition })?;
    Ok(chol.solve(&rhs))
}

/// Least-squares solution `u = (AᵀA)⁻¹Aᵀv` of an overdetermined system
/// (rows ≥ columns), minimizing ‖v − Au‖².
pub fn solve_overdetermined(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != v.len() {
        return Err(Error::domain("matrix rows and observation length differ"));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::domain(
            "fewer rounds than participants; use the minimum-norm path",
        ));
    }
    solve_gram(a.tr_mul(a), a.tr_mul(v))
}

/// Minimum-norm solution `u = Aᵀ(AAᵀ)⁻¹v` of an underdetermined system
/// (rows ≤ columns), satisfying `Au = v` exactly.
pub fn solve_underdetermined(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != v.len() {
        return Err(Error::domain("matrix rows and observation length differ"));
    }
    if a.nrows() > a.ncols() {
        return Err(Error::domain(
            "more rounds than participants; use the least-squares path",
        ));
    }
    let w = solve_gram(a * a.transpose(), v.clone())?;
    Ok(a.tr_mul(&w))
}

/// Explicit rank-deficient fallback via the SVD pseudo-inverse.
pub fn solve_pseudoinverse(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != v.len() {
        return Err(Error::domain("matrix rows and observation length differ"));
    }
    let pinv = a
        .clone()
        .pseudo_inverse(PIVOT_TOLERANCE)
        .map_err(|e| Error::domain(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * v)
}

/// Quadratic-form residual `vᵀ(I − A(AᵀA)⁻¹Aᵀ)v` of the least-squares fit,
/// computed as `v·v − (Aᵀv)·u`.
pub fn residual_error(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let u = solve_overdetermined(a, v)?;
    Ok(v.dot(v) - a.tr_mul(v).dot(&u))
}

/// A synthesized stochastic run: uniform selections and noisy per-round
/// observations of a known quality vector.
#[derive(Debug, Clone)]
pub struct SynthesizedRounds {
    pub matrix: ParticipationMatrix,
    pub observations: Vec<f64>,
    pub aggregate: Aggregate,
}

impl SynthesizedRounds {
    pub fn design(&self) -> DMatrix<f64> {
        self.matrix.design(self.aggregate)
    }
}

/// Generate `rounds` uniform selections of `select_count` participants and
/// observe `v_i` = aggregate of the selected qualities, each perturbed by
/// i.i.d. zero-mean Gaussian noise of standard deviation `noise_sigma`.
pub fn synthesize_rounds(
    qualities: &[f64],
    select_count: usize,
    rounds: usize,
    noise_sigma: f64,
    aggregate: Aggregate,
    seed: u64,
) -> Result<SynthesizedRounds> {
    let participants = qualities.len();
    if select_count < 1 || select_count > participants {
        return Err(Error::domain(format!(
            "cannot select {select_count} of {participants}"
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::domain("noise sigma must be non-negative"));
    }
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).expect("valid sigma"))
    } else {
        None
    };
    let mut observations = Vec::with_capacity(rounds);
    let mut obs_rows = Vec::with_capacity(rounds);
    for i in 1..=rounds {
        let mut select_rng = rng::derive(seed, &[tag::SYNTH_SELECT, i as u64]);
        let selected = select_participants(participants, select_count, &mut select_rng)?;
        let mut noise_rng = rng::derive(seed, &[tag::SYNTH_NOISE, i as u64]);
        let mut total = 0.0;
        for &n in &selected {
            let e = match &noise {
                Some(dist) => dist.sample(&mut noise_rng),
                None => 0.0,
            };
            total += qualities[n - 1] + e;
        }
        let v = match aggregate {
            Aggregate::Sum => total,
            Aggregate::Mean => total / select_count as f64,
        };
        observations.push(v);
        obs_rows.push(RoundObservation {
            round: i,
            selected,
            improvement: v,
        });
    }
    Ok(SynthesizedRounds {
        matrix: ParticipationMatrix::from_observations(&obs_rows, participants)?,
        observations,
        aggregate,
    })
}
