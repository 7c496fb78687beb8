//! Deterministic `l1` comparison solvers.
//!
//! `solve_l1` minimizes `||y - A x||_2^2 + lambda ||x||_1` by accelerated
//! proximal gradient with soft-thresholding; `solve_reweighted_l1` wraps it
//! with the diagonal reweighting `w_j = 1 / (|x_j| + eps)` per round; and
//! `rank_isr` builds the iterative per-frame ranking on top, scoring
//! subjects with the best-frame residual and removing the winner's columns
//! each round.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gallery::{Gallery, ProbeSet, SubjectId};
use crate::ranking::{argmin_residual, residual_isr, RankingResult};

/// Settings for the `l1` solvers.
#[derive(Debug, Clone)]
pub struct L1Config {
    /// Regularization weight; must be positive.
    pub lambda_l1: f64,
    /// Inner proximal-gradient iteration cap.
    pub max_iters: usize,
    /// Relative objective-change stopping threshold.
    pub tol: f64,
    /// Reweighting offset `eps`.
    pub epsilon: f64,
    /// Number of reweighted rounds.
    pub reweight_rounds: usize,
}

impl Default for L1Config {
    fn default() -> Self {
        L1Config { lambda_l1: 1e-2, max_iters: 400, tol: 1e-8, epsilon: 1e-2, reweight_rounds: 4 }
    }
}

impl L1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 > 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_l1 must be positive, got {}", self.lambda_l1)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 || self.reweight_rounds == 0 {
            return Err(Error::InvalidConfig("max_iters and reweight_rounds must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Largest eigenvalue of `A'A`, estimated by 50 power iterations from a
/// deterministic start vector.
pub fn gram_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut eig = 0.0;
    for _ in 0..50 {
        let w = a.transpose() * (a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        eig = v.dot(&w);
        v = w / norm;
    }
    eig.max(0.0)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn objective(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, weights: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let fit = (y - a * x).norm_squared();
    let penalty: f64 = x.iter().zip(weights.iter()).map(|(xi, wi)| wi * xi.abs()).sum();
    fit + lambda * penalty
}

/// Accelerated proximal gradient for
/// `min ||y - A x||_2^2 + lambda sum_j w_j |x_j|`.
///
/// Step size `1 / (2 sigma_max(A'A))`; momentum restarts whenever the
/// objective rises and the best iterate seen is returned, so the reported
/// objective never exceeds the starting one.
fn fista_weighted(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    weights: &DVector<f64>,
    x0: DVector<f64>,
    cfg: &L1Config,
) -> DVector<f64> {
    let lipschitz = 2.0 * gram_spectral_norm(a);
    if lipschitz <= 0.0 {
        // zero dictionary: penalty alone drives every coordinate to zero
        return DVector::zeros(a.ncols());
    }
    let step = 1.0 / lipschitz;

    let mut x = x0;
    let mut momentum = x.clone();
    let mut theta = 1.0f64;
    let mut prev_obj = objective(a, y, lambda, weights, &x);
    let mut best = x.clone();
    let mut best_obj = prev_obj;

    for _ in 0..cfg.max_iters {
        let grad = a.transpose() * (a * &momentum - y) * 2.0;
        let candidate = &momentum - &grad * step;
        let x_new = DVector::from_fn(x.len(), |j, _| soft_threshold(candidate[j], step * lambda * weights[j]));

        let obj = objective(a, y, lambda, weights, &x_new);
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        if obj > prev_obj {
            // restart momentum
            momentum = x_new.clone();
            theta = 1.0;
        } else {
            let beta = (theta - 1.0) / theta_new;
            momentum = &x_new + (&x_new - &x) * beta;
            theta = theta_new;
        }

        if obj < best_obj {
            best_obj = obj;
            best = x_new.clone();
        }

        let rel_change = (prev_obj - obj).abs() / prev_obj.abs().max(1.0);
        x = x_new;
        prev_obj = obj;
        if rel_change < cfg.tol {
            break;
        }
    }
    best
}

/// Sparse encoding of a single observation under the gallery dictionary.
pub fn solve_l1(gallery: &Gallery, y: &DVector<f64>, cfg: &L1Config) -> Result<DVector<f64>> {
    cfg.validate()?;
    if y.len() != gallery.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} entries, gallery dimension is {}",
            y.len(),
            gallery.dim()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("observation vector".into()));
    }
    let weights = DVector::from_element(gallery.num_columns(), 1.0);
    Ok(fista_weighted(
        gallery.matrix(),
        y,
        cfg.lambda_l1,
        &weights,
        DVector::zeros(gallery.num_columns()),
        cfg,
    ))
}

/// Reweighting diagonal `w_j = 1 / (|x_j| + eps)`.
pub fn reweight_diagonal(x_prev: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    x_prev.map(|v| 1.0 / (v.abs() + epsilon))
}

/// Iteratively reweighted encoding: each round solves the weighted problem
/// with weights from the previous round's solution, starting from all-ones
/// pseudo-coefficients (so round one is near-uniformly weighted).
pub fn solve_reweighted_l1(gallery: &Gallery, y: &DVector<f64>, cfg: &L1Config) -> Result<DVector<f64>> {
    cfg.validate()?;
    if y.len() != gallery.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} entries, gallery dimension is {}",
            y.len(),
            gallery.dim()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("observation vector".into()));
    }
    let n = gallery.num_columns();
    let mut x = DVector::from_element(n, 1.0);
    for _ in 0..cfg.reweight_rounds {
        let weights = reweight_diagonal(&x, cfg.epsilon);
        x = fista_weighted(gallery.matrix(), y, cfg.lambda_l1, &weights, DVector::zeros(n), cfg);
    }
    Ok(x)
}

/// Iterative per-frame ranking: every round encodes each probe frame
/// independently on the current gallery, scores the unranked subjects with
/// the best-frame residual, commits the argmin and removes its columns.
pub fn rank_isr(
    gallery: &Gallery,
    probe: &ProbeSet,
    cfg: &L1Config,
    max_ranks: Option<usize>,
) -> Result<RankingResult> {
    cfg.validate()?;
    probe.check_dims(gallery)?;
    let total = gallery.num_subjects();
    let depth = max_ranks.unwrap_or(total);
    if depth > total {
        return Err(Error::InvalidConfig(format!(
            "max_ranks {depth} exceeds the number of subjects {total}"
        )));
    }

    let mut current = gallery.clone();
    let mut psi = Vec::with_capacity(depth);
    let mut residual_trace = Vec::with_capacity(depth);
    let mut iterations_used = Vec::with_capacity(depth);

    for _ in 0..depth {
        let l = probe.num_frames();
        let columns: Vec<DVector<f64>> = (0..l).map(|i| probe.matrix().column(i).into_owned()).collect();
        let encodings: Vec<DVector<f64>> = columns
            .par_iter()
            .map(|y| solve_reweighted_l1(&current, y, cfg))
            .collect::<Result<_>>()?;
        let mu_x = DMatrix::from_columns(&encodings);

        let residuals: BTreeMap<SubjectId, f64> = current
            .subjects()
            .map(|c| Ok((c, residual_isr(&current, probe, &mu_x, c)?)))
            .collect::<Result<_>>()?;
        let winner = argmin_residual(&residuals)
            .ok_or_else(|| Error::EmptyInput("no subjects left to rank".into()))?;

        psi.push(winner);
        residual_trace.push(residuals);
        iterations_used.push(cfg.reweight_rounds);

        if psi.len() == depth {
            break;
        }
        let (reduced, _) = current.remove_subject(winner)?;
        current = reduced;
    }

    Ok(RankingResult { psi, residual_trace, iterations_used })
}
