//! Residual classifiers and the iterative rank-and-remove loop.
//!
//! Each round runs inference on the current gallery, scores every unranked
//! subject by a reconstruction residual, commits the argmin, removes that
//! subject's columns and warm-starts the next round from a state snapshot
//! taken at a fraction `zeta` of the sweep budget, which itself decays
//! geometrically by `tau` per round.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{Gallery, ProbeSet, SubjectId};
use crate::inference::{
    run_inference_with_snapshot, Hyperparams, InferenceConfig, PosteriorState,
};

/// Residual definition used to score subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResidualKind {
    /// Sum over frames of `||Y_i - mu_e_i - A sel_c(mu_x_i)||_2`; uses the
    /// outlier estimate and aggregates all frames.
    #[default]
    #[serde(rename = "srid")]
    Srid,
    /// Best single frame: `min_i ||Y_i - A sel_c(mu_x_i)||_2`, no outlier
    /// subtraction.
    #[serde(rename = "isr-min")]
    IsrMin,
}

/// Settings for the rank-and-remove loop.
#[derive(Debug, Clone)]
pub struct RankingConfig {
    /// Fraction of the sweep budget at which to snapshot state for the next
    /// round's warm start.
    pub zeta: f64,
    /// Geometric decay of the sweep budget per round.
    pub tau: f64,
    pub residual_kind: ResidualKind,
    /// Number of ranks to produce; `None` ranks every subject.
    pub max_ranks: Option<usize>,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig { zeta: 1.0, tau: 1.0, residual_kind: ResidualKind::Srid, max_ranks: None }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("zeta", self.zeta), ("tau", self.tau)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Ranking output: the subject permutation, per-round residuals over the
/// still-unranked set, and the sweeps spent per round.
#[derive(Debug, Clone)]
pub struct RankingResult {
    pub psi: Vec<SubjectId>,
    pub residual_trace: Vec<BTreeMap<SubjectId, f64>>,
    pub iterations_used: Vec<usize>,
}

impl RankingResult {
    /// Serializable report with subjects mapped back to their original
    /// labels.
    pub fn to_report(&self, gallery: &Gallery, probe_id: &str) -> RankingReport {
        let label = |c: SubjectId| gallery.original_label(c).unwrap_or(c.0 as i64);
        RankingReport {
            probe_id: probe_id.to_string(),
            psi: self.psi.iter().map(|&c| label(c)).collect(),
            residuals: self
                .residual_trace
                .iter()
                .enumerate()
                .flat_map(|(r, map)| {
                    map.iter().map(move |(&c, &value)| ResidualEntry { rank: r + 1, subject: label(c), value })
                })
                .collect(),
            iterations: self.iterations_used.clone(),
        }
    }
}

/// JSON form of a [`RankingResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub probe_id: String,
    pub psi: Vec<i64>,
    pub residuals: Vec<ResidualEntry>,
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub rank: usize,
    pub subject: i64,
    pub value: f64,
}

/// Frame-summed residual with the outlier estimate removed:
/// `sum_i ||Y_i - mu_e_i - A sel_c(mu_x_i)||_2`.
pub fn residual_srid(
    gallery: &Gallery,
    probe: &ProbeSet,
    mu_x: &nalgebra::DMatrix<f64>,
    mu_e: &nalgebra::DMatrix<f64>,
    c: SubjectId,
) -> Result<f64> {
    let l = probe.num_frames();
    let mut total = 0.0;
    for i in 0..l {
        let x_col: DVector<f64> = mu_x.column(i).into_owned();
        let recon = gallery.reconstruct_subject(&x_col, c)?;
        let diff = probe.matrix().column(i) - mu_e.column(i) - recon;
        total += diff.norm();
    }
    Ok(total)
}

/// Best-frame residual without outlier subtraction:
/// `min_i ||Y_i - A sel_c(mu_x_i)||_2`.
pub fn residual_isr(
    gallery: &Gallery,
    probe: &ProbeSet,
    mu_x: &nalgebra::DMatrix<f64>,
    c: SubjectId,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..probe.num_frames() {
        let x_col: DVector<f64> = mu_x.column(i).into_owned();
        let recon = gallery.reconstruct_subject(&x_col, c)?;
        let diff = probe.matrix().column(i) - recon;
        best = best.min(diff.norm());
    }
    Ok(best)
}

/// Score every subject currently in the gallery with the chosen residual.
pub fn residual_map(
    gallery: &Gallery,
    probe: &ProbeSet,
    state: &PosteriorState,
    kind: ResidualKind,
) -> Result<BTreeMap<SubjectId, f64>> {
    gallery
        .subjects()
        .map(|c| {
            let r = match kind {
                ResidualKind::Srid => residual_srid(gallery, probe, &state.mu_x, &state.mu_e, c)?,
                ResidualKind::IsrMin => residual_isr(gallery, probe, &state.mu_x, c)?,
            };
            Ok((c, r))
        })
        .collect()
}

/// Smallest residual wins; ties go to the smaller subject id.
pub fn argmin_residual(residuals: &BTreeMap<SubjectId, f64>) -> Option<SubjectId> {
    let mut best: Option<(SubjectId, f64)> = None;
    for (&c, &r) in residuals {
        match best {
            Some((_, b)) if r >= b => {}
            _ => best = Some((c, r)),
        }
    }
    best.map(|(c, _)| c)
}

/// Iterative ranking with warm starts.
///
/// Round `r` (1-based) runs `max(1, floor(tau^(r-1) T))` sweeps, snapshots
/// state after sweep `ceil(zeta * tau^(r-1) T)` (or at the end if the run
/// stops first), commits the residual argmin, then removes the committed
/// subject from both the gallery and the snapshot before the next round.
pub fn rank_subjects(
    gallery: &Gallery,
    probe: &ProbeSet,
    hyper: &Hyperparams,
    inf_config: &InferenceConfig,
    rank_config: &RankingConfig,
) -> Result<RankingResult> {
    rank_config.validate()?;
    inf_config.validate()?;
    probe.check_dims(gallery)?;

    let total_subjects = gallery.num_subjects();
    let max_ranks = rank_config.max_ranks.unwrap_or(total_subjects);
    if max_ranks > total_subjects {
        return Err(Error::InvalidConfig(format!(
            "max_ranks {max_ranks} exceeds the number of subjects {total_subjects}"
        )));
    }

    let base_budget = inf_config.max_iters as f64;
    let mut current = gallery.clone();
    let mut warm: Option<PosteriorState> = None;

    let mut psi = Vec::with_capacity(max_ranks);
    let mut residual_trace = Vec::with_capacity(max_ranks);
    let mut iterations_used = Vec::with_capacity(max_ranks);

    for round in 0..max_ranks {
        if current.num_subjects() == 0 {
            return Err(Error::EmptyInput(format!(
                "gallery exhausted after {round} ranks, {max_ranks} requested"
            )));
        }

        let budget = rank_config.tau.powi(round as i32) * base_budget;
        let sweeps = (budget.floor() as usize).max(1);
        let snapshot_at = ((rank_config.zeta * budget).ceil() as usize).clamp(1, sweeps);

        let round_config = InferenceConfig { max_iters: sweeps, ..inf_config.clone() };
        let outcome = run_inference_with_snapshot(
            &current,
            probe,
            hyper,
            &round_config,
            warm.take(),
            Some(snapshot_at),
        )?;

        let residuals = residual_map(&current, probe, &outcome.state, rank_config.residual_kind)?;
        let winner = argmin_residual(&residuals)
            .ok_or_else(|| Error::EmptyInput("no subjects left to rank".into()))?;

        psi.push(winner);
        residual_trace.push(residuals);
        iterations_used.push(outcome.iterations);

        if round + 1 == max_ranks {
            break;
        }

        let (reduced, index_map) = current.remove_subject(winner)?;
        let snapshot = outcome.snapshot.expect("snapshot requested for every round");
        warm = Some(shrink_state(snapshot, winner, &index_map));
        current = reduced;
    }

    Ok(RankingResult { psi, residual_trace, iterations_used })
}

/// Drop the removed subject from a saved state: its coefficient rows and
/// block scale disappear, the coefficient covariance is discarded (the next
/// sweep rebuilds it), and the outlier-side quantities are untouched since
/// they are indexed by observation entry, not gallery column.
fn shrink_state(state: PosteriorState, removed: SubjectId, index_map: &[usize]) -> PosteriorState {
    let mu_x = state.mu_x.select_rows(index_map.iter());
    let mut inv_gamma_mean = state.inv_gamma_mean;
    inv_gamma_mean.remove(&removed);
    PosteriorState {
        mu_x,
        sigma_x: None,
        mu_e: state.mu_e,
        sigma_e_diag: state.sigma_e_diag,
        inv_gamma_mean,
        inv_d_mean: state.inv_d_mean,
    }
}

/// Single-frame residual ranking: subjects sorted by
/// `||y - A sel_c(x_hat)||_2` ascending, ties to the smaller id.
pub fn classify_src(
    gallery: &Gallery,
    probe_column: &DVector<f64>,
    x_hat: &DVector<f64>,
) -> Result<Vec<(SubjectId, f64)>> {
    if probe_column.len() != gallery.dim() {
        return Err(Error::DimensionMismatch(format!(
            "probe column has {} entries, gallery dimension is {}",
            probe_column.len(),
            gallery.dim()
        )));
    }
    let mut scored: Vec<(SubjectId, f64)> = gallery
        .subjects()
        .map(|c| {
            let recon = gallery.reconstruct_subject(x_hat, c)?;
            Ok((c, (probe_column - recon).norm()))
        })
        .collect::<Result<_>>()?;
    // stable sort keeps ascending-id order among ties
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("residuals are finite"));
    Ok(scored)
}
