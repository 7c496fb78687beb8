//! Variational posterior updates for the robust joint-block-sparse model.
//!
//! The observation model is `Y = A X + V + E` with `V ~ N(0, lambda I)`
//! entrywise, a per-block Gaussian scale-mixture prior on the rows of `X`
//! (one scale `gamma_c` shared by block `g_c` across all `L` columns) and an
//! entrywise scale-mixture prior on the outlier field `E`. Mean-field
//! inference alternates closed-form updates:
//!
//! ```text
//! Sigma_x = (A'A / lambda + diag<1/gamma>)^-1          shared by all columns
//! mu_x[:,i] = Sigma_x A' (Y[:,i] - mu_e[:,i]) / lambda
//! sigma_e[j,i] = 1 / (1/lambda + <1/D[j,i]>)
//! mu_e[j,i] = sigma_e[j,i] (Y - A mu_x)[j,i] / lambda
//! <1/gamma_c> = (L |g_c| / 2 + alpha_g) / (<||X[g_c,:]||_F^2> / 2 + beta_g)
//! <1/D[j,i]>  = (1/2 + alpha_d) / (<E[j,i]^2> / 2 + beta_d)
//! ```
//!
//! with moments `<E[j,i]^2> = mu_e[j,i]^2 + sigma_e[j,i]` and
//! `<||X[g_c,:]||_F^2> = ||mu_x[g_c,:]||_F^2 + L tr(Sigma_x[g_c, g_c])`.
//!
//! The coefficient mean solves the weighted ridge problem
//! `min ||Y_i - mu_e_i - A x||^2 + lambda ||diag<1/gamma>^{1/2} x||^2`,
//! which the test suite checks against an independent least-squares solve.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::config::WoodburyMode;
use crate::error::{Error, Result};
use crate::gallery::{Gallery, ProbeSet, SubjectId};

/// Noise variance and Inverse-Gamma prior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Dense-noise variance; must be positive.
    pub lambda: f64,
    pub alpha_gamma: f64,
    pub beta_gamma: f64,
    pub alpha_delta: f64,
    pub beta_delta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        // Non-informative scale priors; lambda is problem-specific.
        Hyperparams { lambda: 1.0, alpha_gamma: 0.0, beta_gamma: 0.0, alpha_delta: 0.0, beta_delta: 0.0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        for (name, v) in [
            ("alpha_gamma", self.alpha_gamma),
            ("beta_gamma", self.beta_gamma),
            ("alpha_delta", self.alpha_delta),
            ("beta_delta", self.beta_delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sweep budget and numerical guards for one inference run.
#[derive(Debug, Clone)]
pub struct InferenceConfig {
    /// Number of sweeps `T`.
    pub max_iters: usize,
    /// Early-stop threshold on the max relative change of `mu_x`; 0 runs the
    /// full budget.
    pub tol: f64,
    /// Relative denominator guard; scaled by the observation magnitude at
    /// run start.
    pub precision_floor: f64,
    pub use_woodbury: WoodburyMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { max_iters: 30, tol: 0.0, precision_floor: 1e-12, use_woodbury: WoodburyMode::Auto }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be non-negative, got {}", self.tol)));
        }
        if !(self.precision_floor > 0.0 && self.precision_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "precision_floor must be positive, got {}",
                self.precision_floor
            )));
        }
        Ok(())
    }
}

/// Absolute guards derived from the observation scale: variance-moment
/// denominators are floored and the resulting precision moments capped so a
/// collapsed block or outlier entry cannot overflow the next sweep.
#[derive(Debug, Clone, Copy)]
pub struct MomentGuards {
    pub denom_floor: f64,
    pub moment_cap: f64,
}

impl MomentGuards {
    /// `floor = precision_floor * s`, `cap = 1 / (precision_floor * s^2)`
    /// where `s` is the largest observation magnitude (1 for an all-zero
    /// probe).
    pub fn from_observation(precision_floor: f64, observations: &DMatrix<f64>) -> Self {
        let s = observations.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let s = if s > 0.0 && s.is_finite() { s } else { 1.0 };
        MomentGuards { denom_floor: precision_floor * s, moment_cap: 1.0 / (precision_floor * s * s) }
    }

    fn guard(&self, numer: f64, denom: f64) -> f64 {
        (numer / denom.max(self.denom_floor)).min(self.moment_cap)
    }
}

/// All variational factor parameters and moments for one probe.
///
/// `sigma_x` and `sigma_e_diag` stay unset until the first sweep computes
/// them; `mu_x` rows follow the gallery's column order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    /// Coefficient means, `N x L`.
    pub mu_x: DMatrix<f64>,
    /// Shared coefficient covariance, `N x N`.
    pub sigma_x: Option<DMatrix<f64>>,
    /// Outlier means, `d x L`.
    pub mu_e: DMatrix<f64>,
    /// Per-column outlier variances (diagonals only), `d x L`.
    pub sigma_e_diag: Option<DMatrix<f64>>,
    /// `<1/gamma_c>` per subject block.
    pub inv_gamma_mean: BTreeMap<SubjectId, f64>,
    /// `<1/D[j,i]>`, `d x L`.
    pub inv_d_mean: DMatrix<f64>,
}

impl PosteriorState {
    /// Flat-start state: unit scale moments, all-ones coefficient means and
    /// a zero outlier mean so the first sweep sees the raw observations.
    pub fn init(gallery: &Gallery, num_frames: usize) -> Result<Self> {
        if gallery.num_columns() == 0 || gallery.num_subjects() == 0 {
            return Err(Error::EmptyInput("cannot initialize state for an empty gallery".into()));
        }
        if num_frames == 0 {
            return Err(Error::EmptyInput("probe must have at least one frame".into()));
        }
        Ok(PosteriorState {
            mu_x: DMatrix::from_element(gallery.num_columns(), num_frames, 1.0),
            sigma_x: None,
            mu_e: DMatrix::zeros(gallery.dim(), num_frames),
            sigma_e_diag: None,
            inv_gamma_mean: gallery.subjects().map(|c| (c, 1.0)).collect(),
            inv_d_mean: DMatrix::from_element(gallery.dim(), num_frames, 1.0),
        })
    }

    fn check_dims(&self, gallery: &Gallery, probe: &ProbeSet) -> Result<()> {
        let (n, d, l) = (gallery.num_columns(), gallery.dim(), probe.num_frames());
        if self.mu_x.nrows() != n || self.mu_x.ncols() != l {
            return Err(Error::DimensionMismatch(format!(
                "state mu_x is {}x{}, expected {n}x{l}",
                self.mu_x.nrows(),
                self.mu_x.ncols()
            )));
        }
        if self.mu_e.nrows() != d || self.mu_e.ncols() != l {
            return Err(Error::DimensionMismatch(format!(
                "state mu_e is {}x{}, expected {d}x{l}",
                self.mu_e.nrows(),
                self.mu_e.ncols()
            )));
        }
        if self.inv_d_mean.nrows() != d || self.inv_d_mean.ncols() != l {
            return Err(Error::DimensionMismatch(format!(
                "state inv_d_mean is {}x{}, expected {d}x{l}",
                self.inv_d_mean.nrows(),
                self.inv_d_mean.ncols()
            )));
        }
        for c in gallery.subjects() {
            if !self.inv_gamma_mean.contains_key(&c) {
                return Err(Error::DimensionMismatch(format!("state is missing <1/gamma> for subject {c}")));
            }
        }
        if self.inv_gamma_mean.len() != gallery.num_subjects() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} block scales, gallery has {} subjects",
                self.inv_gamma_mean.len(),
                gallery.num_subjects()
            )));
        }
        Ok(())
    }

    /// Expand `<1/gamma_c>` to one entry per gallery column.
    pub fn gamma_diag(&self, gallery: &Gallery) -> DVector<f64> {
        let mut diag = DVector::zeros(gallery.num_columns());
        for (c, cols) in gallery.blocks() {
            let g = self.inv_gamma_mean[c];
            for &j in cols {
                diag[j] = g;
            }
        }
        diag
    }
}

/// Coefficient-factor update.
///
/// Rebuilds the shared covariance `Sigma_x = (A'A/lambda + diag<1/gamma>)^-1`
/// and the means `mu_x[:,i] = Sigma_x A'(Y[:,i] - mu_e[:,i]) / lambda`. The
/// covariance is computed either directly from the `N x N` precision matrix
/// or through the low-rank identity
/// `G - G A'(lambda I + A G A')^-1 A G` with `G = diag<1/gamma>^-1`,
/// whichever the mode selects.
pub fn update_qx(
    state: &mut PosteriorState,
    gallery: &Gallery,
    probe: &ProbeSet,
    hyper: &Hyperparams,
    mode: WoodburyMode,
) -> Result<()> {
    let a = gallery.matrix();
    let lambda = hyper.lambda;
    let gamma_diag = state.gamma_diag(gallery);
    if !gamma_diag.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::Numerical {
            iteration: 0,
            message: "non-finite or non-positive block precision moment".into(),
        });
    }

    let use_woodbury = match mode {
        WoodburyMode::Always => true,
        WoodburyMode::Never => false,
        WoodburyMode::Auto => gallery.dim() < gallery.num_columns(),
    };

    let sigma_x = if use_woodbury {
        sigma_x_woodbury(a, &gamma_diag, lambda)?
    } else {
        sigma_x_direct(a, &gamma_diag, lambda)?
    };

    let residual = probe.matrix() - &state.mu_e;
    let mu_x = (&sigma_x * (a.transpose() * residual)) / lambda;

    state.sigma_x = Some(sigma_x);
    state.mu_x = mu_x;
    Ok(())
}

fn sigma_x_direct(a: &DMatrix<f64>, gamma_diag: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    let mut precision = (a.transpose() * a) / lambda;
    for j in 0..n {
        precision[(j, j)] += gamma_diag[j];
    }
    let chol = Cholesky::new(precision).ok_or_else(|| Error::Numerical {
        iteration: 0,
        message: "coefficient precision matrix is not positive definite".into(),
    })?;
    Ok(symmetrize(chol.inverse()))
}

fn sigma_x_woodbury(a: &DMatrix<f64>, gamma_diag: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let (d, n) = (a.nrows(), a.ncols());
    let prior_var: DVector<f64> = gamma_diag.map(|g| 1.0 / g);

    // lambda I + A G A', assembled from sqrt-scaled columns so it stays
    // symmetric.
    let mut half = a.clone();
    for j in 0..n {
        let s = prior_var[j].sqrt();
        half.column_mut(j).scale_mut(s);
    }
    let mut inner = &half * half.transpose();
    for i in 0..d {
        inner[(i, i)] += lambda;
    }
    let chol = Cholesky::new(inner).ok_or_else(|| Error::Numerical {
        iteration: 0,
        message: "observation-space system is not positive definite".into(),
    })?;

    // Sigma_x = G - (A G)' inner^-1 (A G)
    let mut scaled = a.clone();
    for j in 0..n {
        scaled.column_mut(j).scale_mut(prior_var[j]);
    }
    let solved = chol.solve(&scaled);
    let mut sigma = -(scaled.transpose() * solved);
    for j in 0..n {
        sigma[(j, j)] += prior_var[j];
    }
    Ok(symmetrize(sigma))
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Outlier-factor update; diagonal, so elementwise:
/// `sigma_e[j,i] = 1/(1/lambda + <1/D[j,i]>)` and
/// `mu_e[j,i] = sigma_e[j,i] (Y - A mu_x)[j,i] / lambda`.
pub fn update_qe(state: &mut PosteriorState, gallery: &Gallery, probe: &ProbeSet, hyper: &Hyperparams) {
    let lambda = hyper.lambda;
    let residual = probe.matrix() - gallery.matrix() * &state.mu_x;
    let sigma_e = state.inv_d_mean.map(|inv_d| 1.0 / (1.0 / lambda + inv_d));
    let mu_e = residual.zip_map(&sigma_e, |r, s| s * r / lambda);
    state.sigma_e_diag = Some(sigma_e);
    state.mu_e = mu_e;
}

/// Per-block coefficient energy
/// `<||X[g_c,:]||_F^2> = ||mu_x[g_c,:]||_F^2 + L tr(Sigma_x[g_c,g_c])`.
pub fn block_second_moment(
    mu_x: &DMatrix<f64>,
    sigma_x: &DMatrix<f64>,
    blocks: &BTreeMap<SubjectId, Vec<usize>>,
) -> BTreeMap<SubjectId, f64> {
    let l = mu_x.ncols() as f64;
    blocks
        .iter()
        .map(|(c, cols)| {
            let mean_energy: f64 = cols
                .iter()
                .map(|&j| mu_x.row(j).iter().map(|v| v * v).sum::<f64>())
                .sum();
            let trace: f64 = cols.iter().map(|&j| sigma_x[(j, j)]).sum();
            (*c, mean_energy + l * trace)
        })
        .collect()
}

/// Block-scale moment update
/// `<1/gamma_c> = (L |g_c|/2 + alpha_g) / (<||X[g_c,:]||_F^2>/2 + beta_g)`,
/// with the denominator floored and the result capped by the guards.
pub fn update_gamma_moment(
    state: &mut PosteriorState,
    gallery: &Gallery,
    hyper: &Hyperparams,
    guards: &MomentGuards,
) -> Result<()> {
    let sigma_x = state.sigma_x.as_ref().ok_or_else(|| Error::Numerical {
        iteration: 0,
        message: "block-scale update requires the coefficient covariance".into(),
    })?;
    let l = state.mu_x.ncols() as f64;
    let energies = block_second_moment(&state.mu_x, sigma_x, gallery.blocks());
    for (c, cols) in gallery.blocks() {
        let numer = l * cols.len() as f64 / 2.0 + hyper.alpha_gamma;
        let denom = energies[c] / 2.0 + hyper.beta_gamma;
        state.inv_gamma_mean.insert(*c, guards.guard(numer, denom));
    }
    Ok(())
}

/// Outlier-scale moment update
/// `<1/D[j,i]> = (1/2 + alpha_d) / (<E[j,i]^2>/2 + beta_d)` with
/// `<E[j,i]^2> = mu_e[j,i]^2 + sigma_e[j,i]`.
pub fn update_d_moment(state: &mut PosteriorState, hyper: &Hyperparams, guards: &MomentGuards) -> Result<()> {
    let sigma_e = state.sigma_e_diag.as_ref().ok_or_else(|| Error::Numerical {
        iteration: 0,
        message: "outlier-scale update requires the outlier variances".into(),
    })?;
    let numer = 0.5 + hyper.alpha_delta;
    state.inv_d_mean = state.mu_e.zip_map(sigma_e, |mu, s| {
        let second_moment = mu * mu + s;
        guards.guard(numer, second_moment / 2.0 + hyper.beta_delta)
    });
    Ok(())
}

/// Result of an inference run: the final state, the per-sweep trace of the
/// max relative coefficient change, the number of sweeps executed, and the
/// mid-run snapshot when one was requested.
#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    pub state: PosteriorState,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub snapshot: Option<PosteriorState>,
}

/// Run `T` sweeps of `[q(X); q(gamma); q(E); q(D)]` from a fresh or
/// warm-started state.
pub fn run_inference(
    gallery: &Gallery,
    probe: &ProbeSet,
    hyper: &Hyperparams,
    config: &InferenceConfig,
    warm_start: Option<PosteriorState>,
) -> Result<InferenceOutcome> {
    run_inference_with_snapshot(gallery, probe, hyper, config, warm_start, None)
}

/// As [`run_inference`], additionally cloning the state after sweep
/// `snapshot_at` (1-based). A snapshot index past the last executed sweep,
/// or an early stop before it, yields the final state as the snapshot.
pub fn run_inference_with_snapshot(
    gallery: &Gallery,
    probe: &ProbeSet,
    hyper: &Hyperparams,
    config: &InferenceConfig,
    warm_start: Option<PosteriorState>,
    snapshot_at: Option<usize>,
) -> Result<InferenceOutcome> {
    hyper.validate()?;
    config.validate()?;
    probe.check_dims(gallery)?;

    let mut state = match warm_start {
        Some(s) => {
            s.check_dims(gallery, probe)?;
            s
        }
        None => PosteriorState::init(gallery, probe.num_frames())?,
    };

    let guards = MomentGuards::from_observation(config.precision_floor, probe.matrix());
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut snapshot = None;

    let mut iterations = 0;
    for t in 1..=config.max_iters {
        let mu_prev = state.mu_x.clone();

        update_qx(&mut state, gallery, probe, hyper, config.use_woodbury)
            .map_err(|e| tag_iteration(e, t))?;
        update_gamma_moment(&mut state, gallery, hyper, &guards).map_err(|e| tag_iteration(e, t))?;
        update_qe(&mut state, gallery, probe, hyper);
        update_d_moment(&mut state, hyper, &guards).map_err(|e| tag_iteration(e, t))?;

        if !state.mu_x.iter().all(|v| v.is_finite()) || !state.mu_e.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical { iteration: t, message: "posterior means became non-finite".into() });
        }

        let change = max_relative_change(&mu_prev, &state.mu_x, guards.denom_floor);
        trace.push(change);
        iterations = t;

        if snapshot_at == Some(t) {
            snapshot = Some(state.clone());
        }
        if config.tol > 0.0 && change < config.tol {
            break;
        }
    }

    if snapshot_at.is_some() && snapshot.is_none() {
        snapshot = Some(state.clone());
    }

    Ok(InferenceOutcome { state, trace, iterations, snapshot })
}

fn tag_iteration(e: Error, t: usize) -> Error {
    match e {
        Error::Numerical { message, .. } => Error::Numerical { iteration: t, message },
        other => other,
    }
}

fn max_relative_change(prev: &DMatrix<f64>, next: &DMatrix<f64>, floor: f64) -> f64 {
    prev.iter()
        .zip(next.iter())
        .map(|(p, n)| (n - p).abs() / (n.abs() + floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WoodburyMode;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::prelude::*;
    use rand_distr::StandardNormal;
    use rand_xoshiro::Xoshiro256StarStar;

    fn singleton_gallery(a: DMatrix<f64>) -> Gallery {
        let labels: Vec<i64> = (1..=a.ncols() as i64).collect();
        Gallery::build(a, &labels).unwrap()
    }

    fn random_matrix(rng: &mut Xoshiro256StarStar, nrows: usize, ncols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(nrows, ncols, |_, _| rng.sample(StandardNormal))
    }

    fn loose_guards() -> MomentGuards {
        MomentGuards { denom_floor: 1e-12, moment_cap: 1e12 }
    }

    #[test]
    fn init_follows_flat_start() {
        let gallery = Gallery::build(DMatrix::from_element(4, 6, 1.0), &[1, 1, 2, 2, 3, 3]).unwrap();
        let state = PosteriorState::init(&gallery, 2).unwrap();
        assert_eq!(state.mu_x, DMatrix::from_element(6, 2, 1.0));
        assert_eq!(state.mu_e, DMatrix::zeros(4, 2));
        assert!(state.inv_gamma_mean.values().all(|&v| v == 1.0));
        assert_eq!(state.inv_gamma_mean.len(), 3);
        assert_eq!(state.inv_d_mean, DMatrix::from_element(4, 2, 1.0));
        assert!(state.sigma_x.is_none());
        assert!(state.sigma_e_diag.is_none());

        let single = PosteriorState::init(&gallery, 1).unwrap();
        assert_eq!(single.mu_x.ncols(), 1);
    }

    #[test]
    fn init_rejects_empty_gallery() {
        let gallery = singleton_gallery(DMatrix::identity(2, 2));
        let (gallery, _) = gallery.remove_subject(SubjectId(1)).unwrap();
        let (gallery, _) = gallery.remove_subject(SubjectId(2)).unwrap();
        assert!(matches!(PosteriorState::init(&gallery, 1), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn qx_identity_dictionary_closed_form() {
        let gallery = singleton_gallery(DMatrix::identity(2, 2));
        let probe = ProbeSet::new(dmatrix![2.0; 0.0]).unwrap();
        let hyper = Hyperparams::default();
        let mut state = PosteriorState::init(&gallery, 1).unwrap();

        update_qx(&mut state, &gallery, &probe, &hyper, WoodburyMode::Never).unwrap();
        let sigma = state.sigma_x.as_ref().unwrap();
        assert_relative_eq!(sigma, &(DMatrix::identity(2, 2) * 0.5), epsilon = 1e-14);
        assert_relative_eq!(state.mu_x, dmatrix![1.0; 0.0], epsilon = 1e-14);

        // subtracting a known outlier mean shifts the estimate
        state.mu_e = dmatrix![1.0; 0.0];
        update_qx(&mut state, &gallery, &probe, &hyper, WoodburyMode::Never).unwrap();
        assert_relative_eq!(state.mu_x, dmatrix![0.5; 0.0], epsilon = 1e-14);
    }

    #[test]
    fn qx_woodbury_matches_direct() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        for (d, n) in [(3usize, 5usize), (5, 3), (8, 8)] {
            let a = random_matrix(&mut rng, d, n);
            let labels: Vec<i64> = (1..=n as i64).collect();
            let gallery = Gallery::build(a, &labels).unwrap();
            let probe = ProbeSet::new(random_matrix(&mut rng, d, 2)).unwrap();
            let hyper = Hyperparams { lambda: 0.7, ..Default::default() };

            let mut state = PosteriorState::init(&gallery, 2).unwrap();
            for c in gallery.subjects() {
                state.inv_gamma_mean.insert(c, rng.random::<f64>() + 0.5);
            }

            let mut direct = state.clone();
            update_qx(&mut direct, &gallery, &probe, &hyper, WoodburyMode::Never).unwrap();
            let mut wood = state.clone();
            update_qx(&mut wood, &gallery, &probe, &hyper, WoodburyMode::Always).unwrap();

            let sd = direct.sigma_x.unwrap();
            let sw = wood.sigma_x.unwrap();
            let rel = (&sd - &sw).norm() / sd.norm();
            assert!(rel < 1e-10, "sigma mismatch {rel} for d={d} n={n}");
            let rel_mu = (&direct.mu_x - &wood.mu_x).norm() / direct.mu_x.norm();
            assert!(rel_mu < 1e-10, "mu mismatch {rel_mu} for d={d} n={n}");
        }
    }

    #[test]
    fn qe_scalar_arithmetic() {
        // lambda=1, <1/D>=1, residual 2 -> sigma 0.5, mu 1
        let gallery = singleton_gallery(DMatrix::identity(1, 1));
        let probe = ProbeSet::new(dmatrix![2.0]).unwrap();
        let hyper = Hyperparams::default();
        let mut state = PosteriorState::init(&gallery, 1).unwrap();
        state.mu_x = dmatrix![0.0];
        update_qe(&mut state, &gallery, &probe, &hyper);
        assert_relative_eq!(state.sigma_e_diag.as_ref().unwrap()[(0, 0)], 0.5);
        assert_relative_eq!(state.mu_e[(0, 0)], 1.0);

        // huge <1/D> suppresses the outlier estimate
        state.inv_d_mean = dmatrix![1e12];
        update_qe(&mut state, &gallery, &probe, &hyper);
        assert!(state.mu_e[(0, 0)].abs() < 1e-11);

        // zero residual keeps mu_e at zero regardless of moments
        state.inv_d_mean = dmatrix![0.3];
        state.mu_x = dmatrix![2.0];
        update_qe(&mut state, &gallery, &probe, &hyper);
        assert_eq!(state.mu_e[(0, 0)], 0.0);
    }

    #[test]
    fn gamma_moment_formula() {
        let guards = loose_guards();
        // L=2, |g|=3, zero hyperparams, energy 6 -> 1.0
        let gallery = Gallery::build(DMatrix::from_element(2, 3, 1.0), &[1, 1, 1]).unwrap();
        let hyper = Hyperparams::default();
        let mut state = PosteriorState::init(&gallery, 2).unwrap();
        state.mu_x = DMatrix::from_element(3, 2, 1.0);
        state.sigma_x = Some(DMatrix::zeros(3, 3));
        update_gamma_moment(&mut state, &gallery, &hyper, &guards).unwrap();
        assert_relative_eq!(state.inv_gamma_mean[&SubjectId(1)], 1.0);

        // L=1, |g|=2, alpha=1, beta=2, energy 4 -> 0.5
        let gallery = Gallery::build(DMatrix::from_element(2, 2, 1.0), &[1, 1]).unwrap();
        let hyper = Hyperparams { alpha_gamma: 1.0, beta_gamma: 2.0, ..Default::default() };
        let mut state = PosteriorState::init(&gallery, 1).unwrap();
        state.mu_x = DMatrix::from_element(2, 1, (2.0f64).sqrt());
        state.sigma_x = Some(DMatrix::zeros(2, 2));
        update_gamma_moment(&mut state, &gallery, &hyper, &guards).unwrap();
        assert_relative_eq!(state.inv_gamma_mean[&SubjectId(1)], 0.5);
    }

    #[test]
    fn gamma_moment_floors_degenerate_denominator() {
        let guards = MomentGuards { denom_floor: 1e-12, moment_cap: f64::INFINITY };
        let gallery = Gallery::build(DMatrix::from_element(2, 2, 1.0), &[1, 1]).unwrap();
        let hyper = Hyperparams::default();
        let mut state = PosteriorState::init(&gallery, 1).unwrap();
        state.mu_x = DMatrix::zeros(2, 1);
        state.sigma_x = Some(DMatrix::zeros(2, 2));
        update_gamma_moment(&mut state, &gallery, &hyper, &guards).unwrap();
        // (L |g| / 2) / floor
        assert_relative_eq!(state.inv_gamma_mean[&SubjectId(1)], 1.0 / 1e-12);
        assert!(state.inv_gamma_mean[&SubjectId(1)].is_finite());
    }

    #[test]
    fn d_moment_formula() {
        let guards = loose_guards();
        let gallery = singleton_gallery(DMatrix::identity(1, 1));
        let hyper = Hyperparams::default();
        let mut state = PosteriorState::init(&gallery, 1).unwrap();

        // mu=1, sigma=0.5 -> <E^2>=1.5 -> 0.5/0.75 = 2/3
        state.mu_e = dmatrix![1.0];
        state.sigma_e_diag = Some(dmatrix![0.5]);
        update_d_moment(&mut state, &hyper, &guards).unwrap();
        assert_relative_eq!(state.inv_d_mean[(0, 0)], 2.0 / 3.0);

        // mu=0, sigma=1 -> <E^2>=1 -> 0.5/0.5 = 1
        state.mu_e = dmatrix![0.0];
        state.sigma_e_diag = Some(dmatrix![1.0]);
        update_d_moment(&mut state, &hyper, &guards).unwrap();
        assert_relative_eq!(state.inv_d_mean[(0, 0)], 1.0);

        // alpha=3, beta=1, <E^2>=2 -> 3.5/2
        let hyper = Hyperparams { alpha_delta: 3.0, beta_delta: 1.0, ..Default::default() };
        state.mu_e = dmatrix![1.0];
        state.sigma_e_diag = Some(dmatrix![1.0]);
        update_d_moment(&mut state, &hyper, &guards).unwrap();
        assert_relative_eq!(state.inv_d_mean[(0, 0)], 1.75);
    }

    #[test]
    fn block_energy_matches_elementwise_oracle() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let gallery = Gallery::build(random_matrix(&mut rng, 3, 4), &[1, 1, 2, 2]).unwrap();
        let mu = random_matrix(&mut rng, 4, 2);
        let half = random_matrix(&mut rng, 4, 4);
        let sigma = &half * half.transpose();

        let fast = block_second_moment(&mu, &sigma, gallery.blocks());

        let l = mu.ncols();
        for (c, cols) in gallery.blocks() {
            // oracle: expand <x_j x_j> entrywise and sum over the block
            let mut expected = 0.0;
            for &j in cols {
                for i in 0..l {
                    expected += mu[(j, i)] * mu[(j, i)] + sigma[(j, j)];
                }
            }
            assert_relative_eq!(fast[c], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn block_energy_examples() {
        let gallery = Gallery::build(DMatrix::from_element(2, 2, 1.0), &[1, 1]).unwrap();
        let mu = DMatrix::from_element(2, 2, 1.0);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5]));
        let got = block_second_moment(&mu, &sigma, gallery.blocks());
        assert_relative_eq!(got[&SubjectId(1)], 6.0);

        let gallery = Gallery::build(DMatrix::from_element(2, 3, 1.0), &[1, 1, 1]).unwrap();
        let got = block_second_moment(&DMatrix::zeros(3, 2), &DMatrix::identity(3, 3), gallery.blocks());
        assert_relative_eq!(got[&SubjectId(1)], 6.0);
    }

    #[test]
    fn run_trace_has_exactly_t_entries() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let gallery = Gallery::build(random_matrix(&mut rng, 4, 6), &[1, 1, 2, 2, 3, 3]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 4, 2)).unwrap();
        let config = InferenceConfig { max_iters: 7, tol: 0.0, ..Default::default() };
        let out = run_inference(&gallery, &probe, &Hyperparams::default(), &config, None).unwrap();
        assert_eq!(out.trace.len(), 7);
        assert_eq!(out.iterations, 7);
        assert!(out.snapshot.is_none());
    }

    #[test]
    fn early_stop_truncates_trace() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(6);
        let gallery = Gallery::build(random_matrix(&mut rng, 6, 4), &[1, 1, 2, 2]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 6, 1)).unwrap();
        let tol = 0.5;
        let config = InferenceConfig { max_iters: 500, tol, ..Default::default() };
        let out = run_inference(&gallery, &probe, &Hyperparams::default(), &config, None).unwrap();
        assert!(out.iterations < 500, "expected an early stop, ran {}", out.iterations);
        assert_eq!(out.trace.len(), out.iterations);
        assert!(*out.trace.last().unwrap() < tol);
        // every earlier sweep was above the threshold
        for &change in &out.trace[..out.iterations - 1] {
            assert!(change >= tol);
        }
    }

    #[test]
    fn warm_start_is_deterministic() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let gallery = Gallery::build(random_matrix(&mut rng, 4, 6), &[1, 1, 2, 2, 3, 3]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 4, 2)).unwrap();
        let hyper = Hyperparams::default();
        let config = InferenceConfig { max_iters: 5, ..Default::default() };

        let base = run_inference_with_snapshot(&gallery, &probe, &hyper, &config, None, Some(5)).unwrap();
        let snap = base.snapshot.unwrap();
        // snapshot at the final sweep is the final state
        assert_eq!(snap, base.state);

        let a = run_inference(&gallery, &probe, &hyper, &config, Some(snap.clone())).unwrap();
        let b = run_inference(&gallery, &probe, &hyper, &config, Some(snap)).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn snapshot_past_early_stop_is_final_state() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(8);
        let gallery = Gallery::build(random_matrix(&mut rng, 6, 4), &[1, 1, 2, 2]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 6, 1)).unwrap();
        let config = InferenceConfig { max_iters: 400, tol: 0.5, ..Default::default() };
        let out =
            run_inference_with_snapshot(&gallery, &probe, &Hyperparams::default(), &config, None, Some(399))
                .unwrap();
        assert!(out.iterations < 399);
        assert_eq!(out.snapshot.unwrap(), out.state);
    }

    #[test]
    fn rejects_mismatched_probe() {
        let gallery = singleton_gallery(DMatrix::identity(3, 3));
        let probe = ProbeSet::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let err = run_inference(&gallery, &probe, &Hyperparams::default(), &InferenceConfig::default(), None);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn non_finite_precision_moment_is_a_numerical_error() {
        let gallery = singleton_gallery(DMatrix::identity(2, 2));
        let probe = ProbeSet::new(dmatrix![1.0; 0.0]).unwrap();
        let mut state = PosteriorState::init(&gallery, 1).unwrap();
        state.inv_gamma_mean.insert(SubjectId(1), f64::NAN);

        let err = update_qx(&mut state, &gallery, &probe, &Hyperparams::default(), WoodburyMode::Never);
        assert!(matches!(err, Err(Error::Numerical { .. })));

        // a poisoned warm start is reported with the failing sweep index
        let mut warm = PosteriorState::init(&gallery, 1).unwrap();
        warm.inv_gamma_mean.insert(SubjectId(2), f64::NAN);
        let err = run_inference(
            &gallery,
            &probe,
            &Hyperparams::default(),
            &InferenceConfig::default(),
            Some(warm),
        );
        match err {
            Err(Error::Numerical { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("expected a numerical error, got {other:?}"),
        }
    }

    #[test]
    fn disabled_outlier_channel_reduces_to_plain_updates() {
        // With <1/D> pinned to +inf the outlier mean collapses to zero and
        // the coefficient update matches the non-robust formula.
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let a = random_matrix(&mut rng, 5, 3);
        let gallery = singleton_gallery(a.clone());
        let probe = ProbeSet::new(random_matrix(&mut rng, 5, 1)).unwrap();
        let hyper = Hyperparams { lambda: 0.4, ..Default::default() };
        let guards = loose_guards();

        let mut state = PosteriorState::init(&gallery, 1).unwrap();
        for _ in 0..3 {
            state.inv_d_mean = DMatrix::from_element(5, 1, f64::INFINITY);
            // the coefficient update consumes the pre-sweep block scales
            let gamma = state.gamma_diag(&gallery);
            update_qx(&mut state, &gallery, &probe, &hyper, WoodburyMode::Never).unwrap();
            update_gamma_moment(&mut state, &gallery, &hyper, &guards).unwrap();
            update_qe(&mut state, &gallery, &probe, &hyper);
            assert_eq!(state.mu_e, DMatrix::zeros(5, 1));

            // non-robust reference: (A'A + lambda diag<1/gamma>)^-1 A' y
            let mut sys = a.transpose() * &a;
            for j in 0..3 {
                sys[(j, j)] += hyper.lambda * gamma[j];
            }
            let rhs = a.transpose() * probe.matrix();
            let reference = sys.lu().solve(&rhs).unwrap();
            let rel = (&state.mu_x - &reference).norm() / reference.norm();
            assert!(rel < 1e-10, "relative deviation {rel}");
        }
    }

    #[test]
    fn gamma_moment_is_monotone_in_block_energy() {
        // smaller block energy with zero hyperparams gives a strictly larger
        // precision moment
        let guards = loose_guards();
        let gallery = Gallery::build(DMatrix::from_element(2, 2, 1.0), &[1, 1]).unwrap();
        let hyper = Hyperparams::default();

        let mut lo = PosteriorState::init(&gallery, 1).unwrap();
        lo.mu_x = DMatrix::from_element(2, 1, 0.5);
        lo.sigma_x = Some(DMatrix::zeros(2, 2));
        update_gamma_moment(&mut lo, &gallery, &hyper, &guards).unwrap();

        let mut hi = PosteriorState::init(&gallery, 1).unwrap();
        hi.mu_x = DMatrix::from_element(2, 1, 2.0);
        hi.sigma_x = Some(DMatrix::zeros(2, 2));
        update_gamma_moment(&mut hi, &gallery, &hyper, &guards).unwrap();

        assert!(lo.inv_gamma_mean[&SubjectId(1)] > hi.inv_gamma_mean[&SubjectId(1)]);
    }

    #[test]
    fn covariance_is_shared_and_positive_definite() {
        // one covariance object serves every probe column, and its spectrum
        // stays positive on a small instance
        let mut rng = Xoshiro256StarStar::seed_from_u64(12);
        let gallery = Gallery::build(random_matrix(&mut rng, 4, 6), &[1, 1, 2, 2, 3, 3]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 4, 3)).unwrap();
        let config = InferenceConfig { max_iters: 4, ..Default::default() };
        let out = run_inference(&gallery, &probe, &Hyperparams::default(), &config, None).unwrap();

        let sigma = out.state.sigma_x.as_ref().unwrap();
        assert_eq!((sigma.nrows(), sigma.ncols()), (6, 6));
        assert_eq!(out.state.mu_x.ncols(), 3);
        let sym_err = (sigma - sigma.transpose()).norm();
        assert!(sym_err < 1e-14, "asymmetry {sym_err}");
        let eigen = sigma.clone().symmetric_eigen();
        for ev in eigen.eigenvalues.iter() {
            assert!(*ev > 0.0, "non-positive eigenvalue {ev}");
        }
    }

    #[test]
    fn posterior_variances_positive_after_each_sweep() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(10);
        let gallery = Gallery::build(random_matrix(&mut rng, 4, 8), &[1, 1, 2, 2, 3, 3, 4, 4]).unwrap();
        let probe = ProbeSet::new(random_matrix(&mut rng, 4, 3)).unwrap();
        let hyper = Hyperparams { lambda: 0.5, ..Default::default() };
        let config = InferenceConfig::default();
        let guards = MomentGuards::from_observation(config.precision_floor, probe.matrix());

        let mut state = PosteriorState::init(&gallery, 3).unwrap();
        for _ in 0..6 {
            update_qx(&mut state, &gallery, &probe, &hyper, WoodburyMode::Auto).unwrap();
            update_gamma_moment(&mut state, &gallery, &hyper, &guards).unwrap();
            update_qe(&mut state, &gallery, &probe, &hyper);
            update_d_moment(&mut state, &hyper, &guards).unwrap();

            let sigma_x = state.sigma_x.as_ref().unwrap();
            for j in 0..8 {
                assert!(sigma_x[(j, j)] > 0.0);
            }
            assert!(state.sigma_e_diag.as_ref().unwrap().iter().all(|&v| v > 0.0));
            assert!(state.inv_gamma_mean.values().all(|&v| v > 0.0 && v.is_finite()));
            assert!(state.inv_d_mean.iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }
}
