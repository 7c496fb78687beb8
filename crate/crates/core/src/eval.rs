//! Identification experiments on synthetic instances: CMC curves, repeated
//! seeded trials, L-sweeps and a lambda grid sweep.
//!
//! Trials are independent and embarrassingly parallel; per-trial seeds are
//! `base seed + trial index` and aggregation runs in trial order so repeated
//! runs of the same plan are byte-identical.

use nalgebra::DVector;
use rand::prelude::*;
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, rank_isr};
use crate::config::BaselineEnvelope;
use crate::error::{Error, Result};
use crate::gallery::{Gallery, ProbeSet, SubjectId};
use crate::inference::{Hyperparams, InferenceConfig};
use crate::ranking::{classify_src, rank_subjects, RankingConfig, RankingResult};
use crate::synth::{generate_instance, GeneratorConfig, RNG_ALGORITHM, RNG_SEEDING};

/// Ranking method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rsm,
    Isr,
    Src,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Rsm => "rsm",
            Method::Isr => "isr",
            Method::Src => "src",
        };
        f.write_str(s)
    }
}

/// Cumulative matching characteristic: `accuracy[r-1]` is the fraction of
/// probes whose true subject appears within the first `r` ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub accuracy: Vec<f64>,
}

impl CmcCurve {
    pub fn rank1(&self) -> f64 {
        self.accuracy.first().copied().unwrap_or(0.0)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.accuracy.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Build a CMC curve from `(ranking, true subject)` pairs. The curve depth
/// is the longest ranking; probes whose truth never appears contribute zero
/// at every rank.
pub fn compute_cmc(items: &[(&[SubjectId], SubjectId)]) -> Result<CmcCurve> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no rankings to score".into()));
    }
    let depth = items.iter().map(|(psi, _)| psi.len()).max().unwrap_or(0);
    if depth == 0 {
        return Err(Error::EmptyInput("rankings are empty".into()));
    }
    let mut found_at = vec![0usize; depth];
    for (psi, truth) in items {
        if let Some(pos) = psi.iter().position(|c| c == truth) {
            found_at[pos] += 1;
        }
    }
    let n = items.len() as f64;
    let mut cumulative = 0usize;
    let accuracy = found_at
        .iter()
        .map(|&hits| {
            cumulative += hits;
            cumulative as f64 / n
        })
        .collect();
    Ok(CmcCurve { accuracy })
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub generator: GeneratorConfig,
    pub hyper: Hyperparams,
    pub inference: InferenceConfig,
    pub ranking: RankingConfig,
    pub baseline: BaselineEnvelope,
    pub methods: Vec<Method>,
    pub trials: usize,
    /// Scale gallery columns to unit norm before ranking.
    pub normalize_columns: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.hyper.validate()?;
        self.inference.validate()?;
        self.ranking.validate()?;
        self.baseline.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if let Some(r) = self.ranking.max_ranks {
            if r > self.generator.subjects {
                return Err(Error::InvalidConfig(format!(
                    "max_ranks {r} exceeds the number of generated subjects {}",
                    self.generator.subjects
                )));
            }
        }
        Ok(())
    }
}

/// One probe's outcome inside a trial, reported with original labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe_id: String,
    pub true_subject: i64,
    pub psi: Vec<i64>,
    /// 1-based rank at which the true subject appeared, if it did.
    pub rank_of_truth: Option<usize>,
}

/// One (trial, method) cell of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub cmc: Vec<f64>,
    pub probes: Vec<ProbeRecord>,
}

/// Mean and per-rank sample standard deviation across trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub mean_cmc: Vec<f64>,
    pub std_cmc: Vec<f64>,
}

/// Generator provenance recorded next to every result set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngMetadata {
    pub algorithm: String,
    pub seeding: String,
}

impl Default for RngMetadata {
    fn default() -> Self {
        RngMetadata { algorithm: RNG_ALGORITHM.to_string(), seeding: RNG_SEEDING.to_string() }
    }
}

/// Full experiment output: per-(trial, method) records plus per-method
/// aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub rng: RngMetadata,
    pub trials: usize,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<MethodAggregate>,
}

/// Rank one probe with the requested method.
pub fn rank_probe(
    method: Method,
    gallery: &Gallery,
    probe: &ProbeSet,
    hyper: &Hyperparams,
    inference: &InferenceConfig,
    ranking: &RankingConfig,
    baseline: &BaselineEnvelope,
) -> Result<RankingResult> {
    match method {
        Method::Rsm => rank_subjects(gallery, probe, hyper, inference, ranking),
        Method::Isr => {
            let cfg = baseline.resolve(gallery, probe.matrix());
            rank_isr(gallery, probe, &cfg, ranking.max_ranks)
        }
        Method::Src => {
            let y: DVector<f64> = probe.matrix().column(0).into_owned();
            let observations = nalgebra::DMatrix::from_columns(std::slice::from_ref(&y));
            let cfg = baseline.resolve(gallery, &observations);
            let x_hat = baselines::solve_l1(gallery, &y, &cfg)?;
            let scored = classify_src(gallery, &y, &x_hat)?;
            let depth = ranking.max_ranks.unwrap_or(scored.len()).min(scored.len());
            // one solve yields the whole ordering; synthesize per-rank maps
            // over the not-yet-ranked subjects
            let psi: Vec<SubjectId> = scored.iter().take(depth).map(|(c, _)| *c).collect();
            let residual_trace = (0..depth)
                .map(|r| scored.iter().skip(r).map(|&(c, v)| (c, v)).collect())
                .collect();
            let mut iterations_used = vec![0; depth];
            if let Some(first) = iterations_used.first_mut() {
                *first = 1;
            }
            Ok(RankingResult { psi, residual_trace, iterations_used })
        }
    }
}

fn run_trial(plan: &ExperimentPlan, trial: usize) -> Result<Vec<TrialRecord>> {
    let seed = plan.generator.seed.wrapping_add(trial as u64);
    let instance = generate_instance(&plan.generator.with_seed(seed))?;
    let gallery =
        if plan.normalize_columns { instance.gallery.normalized_columns() } else { instance.gallery };

    let mut records = Vec::with_capacity(plan.methods.len());
    for &method in &plan.methods {
        let rankings: Vec<(RankingResult, SubjectId)> = instance
            .probes
            .par_iter()
            .map(|probe| {
                let truth = probe.true_subject.expect("generated probes carry their subject");
                let result = rank_probe(
                    method,
                    &gallery,
                    probe,
                    &plan.hyper,
                    &plan.inference,
                    &plan.ranking,
                    &plan.baseline,
                )?;
                Ok((result, truth))
            })
            .collect::<Result<_>>()?;

        let pairs: Vec<(&[SubjectId], SubjectId)> =
            rankings.iter().map(|(r, t)| (r.psi.as_slice(), *t)).collect();
        let cmc = compute_cmc(&pairs)?;

        let probes = rankings
            .iter()
            .map(|(result, truth)| {
                let label = |c: SubjectId| gallery.original_label(c).unwrap_or(c.0 as i64);
                ProbeRecord {
                    probe_id: format!("t{trial}_s{}", label(*truth)),
                    true_subject: label(*truth),
                    psi: result.psi.iter().map(|&c| label(c)).collect(),
                    rank_of_truth: result.psi.iter().position(|c| c == truth).map(|p| p + 1),
                }
            })
            .collect();

        records.push(TrialRecord { trial, method, seed, cmc: cmc.accuracy, probes });
    }
    Ok(records)
}

/// Run `trials` independent seeded trials for every method in the plan.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;

    let per_trial: Vec<Vec<TrialRecord>> =
        (0..plan.trials).into_par_iter().map(|t| run_trial(plan, t)).collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();

    let aggregates = plan
        .methods
        .iter()
        .map(|&method| {
            let curves: Vec<&Vec<f64>> =
                records.iter().filter(|r| r.method == method).map(|r| &r.cmc).collect();
            let depth = curves.iter().map(|c| c.len()).max().unwrap_or(0);
            let n = curves.len() as f64;
            let mut mean_cmc = vec![0.0; depth];
            for curve in &curves {
                for (r, slot) in mean_cmc.iter_mut().enumerate() {
                    // a shorter curve is flat beyond its last rank
                    let v = curve.get(r).copied().or_else(|| curve.last().copied()).unwrap_or(0.0);
                    *slot += v;
                }
            }
            for slot in mean_cmc.iter_mut() {
                *slot /= n;
            }
            let mut std_cmc = vec![0.0; depth];
            if curves.len() > 1 {
                for curve in &curves {
                    for (r, slot) in std_cmc.iter_mut().enumerate() {
                        let v = curve.get(r).copied().or_else(|| curve.last().copied()).unwrap_or(0.0);
                        *slot += (v - mean_cmc[r]).powi(2);
                    }
                }
                for slot in std_cmc.iter_mut() {
                    *slot = (*slot / (n - 1.0)).sqrt();
                }
            }
            MethodAggregate { method, mean_cmc, std_cmc }
        })
        .collect();

    Ok(ExperimentOutcome { rng: RngMetadata::default(), trials: plan.trials, records, aggregates })
}

/// One `(L, method)` cell of a probe-length sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub l: usize,
    pub method: Method,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

/// Rank-1 accuracy as a function of the probe length. Rankings are cut to
/// depth 1 since only rank-1 enters the table.
pub fn sweep_l(plan: &ExperimentPlan, l_values: &[usize]) -> Result<Vec<SweepRow>> {
    if l_values.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one L value".into()));
    }
    let mut rows = Vec::with_capacity(l_values.len() * plan.methods.len());
    for &l in l_values {
        let mut sub = plan.clone();
        sub.generator = plan.generator.with_frames(l);
        sub.ranking.max_ranks = Some(1);
        let outcome = run_experiment(&sub)?;
        for agg in &outcome.aggregates {
            rows.push(SweepRow {
                l,
                method: agg.method,
                rank1_mean: agg.mean_cmc.first().copied().unwrap_or(0.0),
                rank1_std: agg.std_cmc.first().copied().unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}

/// One lambda cell of the noise-variance grid sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

/// Rank-1 accuracy of the Bayesian solver over a lambda grid, for selecting
/// the noise variance by cross-validation.
pub fn sweep_lambda(plan: &ExperimentPlan, lambdas: &[f64]) -> Result<Vec<LambdaRow>> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput("lambda sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut sub = plan.clone();
        sub.hyper.lambda = lambda;
        sub.methods = vec![Method::Rsm];
        sub.ranking.max_ranks = Some(1);
        let outcome = run_experiment(&sub)?;
        let agg = &outcome.aggregates[0];
        rows.push(LambdaRow {
            lambda,
            rank1_mean: agg.mean_cmc.first().copied().unwrap_or(0.0),
            rank1_std: agg.std_cmc.first().copied().unwrap_or(0.0),
        });
    }
    Ok(rows)
}

/// Percentile bootstrap confidence interval for the mean of paired
/// differences `a - b`.
pub fn paired_bootstrap_mean_diff_ci(
    pairs: &[(f64, f64)],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("bootstrap needs at least one pair".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence must be in (0, 1), got {confidence}")));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let sum: f64 = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("bootstrap means are finite"));
    let alpha = 1.0 - confidence;
    let lo_idx = ((alpha / 2.0) * resamples as f64).floor() as usize;
    let hi_idx = (((1.0 - alpha / 2.0) * resamples as f64).ceil() as usize).saturating_sub(1);
    Ok((means[lo_idx.min(resamples - 1)], means[hi_idx.min(resamples - 1)]))
}

/// Render a per-method aggregate as `rank,mean,std` CSV.
pub fn cmc_csv(aggregate: &MethodAggregate) -> String {
    let mut out = String::from("rank,mean,std\n");
    for (r, (mean, std)) in aggregate.mean_cmc.iter().zip(&aggregate.std_cmc).enumerate() {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", r + 1, mean, std));
    }
    out
}

/// Render sweep rows as `L,method,rank1_mean,rank1_std` CSV.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("L,method,rank1_mean,rank1_std\n");
    for row in rows {
        out.push_str(&format!("{},{},{:.16e},{:.16e}\n", row.l, row.method, row.rank1_mean, row.rank1_std));
    }
    out
}

/// Render lambda grid rows as `lambda,rank1_mean,rank1_std` CSV.
pub fn lambda_csv(rows: &[LambdaRow]) -> String {
    let mut out = String::from("lambda,rank1_mean,rank1_std\n");
    for row in rows {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", row.lambda, row.rank1_mean, row.rank1_std));
    }
    out
}

fn split_csv_line<'a>(line: &'a str, expected: usize, what: &str) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::Parse(format!("{what}: expected {expected} fields, found {}", fields.len())));
    }
    Ok(fields)
}

/// Parse a `rank,mean,std` document back into per-rank `(mean, std)` pairs.
pub fn parse_cmc_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("rank,mean,std") => {}
        other => return Err(Error::Parse(format!("bad cmc header: {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields = split_csv_line(line, 3, "cmc row")?;
        let rank: usize =
            fields[0].parse().map_err(|e| Error::Parse(format!("cmc rank: {e}")))?;
        if rank != i + 1 {
            return Err(Error::Parse(format!("cmc ranks out of order at row {}", i + 1)));
        }
        let mean: f64 = fields[1].parse().map_err(|e| Error::Parse(format!("cmc mean: {e}")))?;
        let std: f64 = fields[2].parse().map_err(|e| Error::Parse(format!("cmc std: {e}")))?;
        out.push((mean, std));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("cmc document has no rows".into()));
    }
    Ok(out)
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "rsm" => Ok(Method::Rsm),
        "isr" => Ok(Method::Isr),
        "src" => Ok(Method::Src),
        other => Err(Error::Parse(format!("unknown method {other:?}"))),
    }
}

/// Parse an `L,method,rank1_mean,rank1_std` document.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("L,method,rank1_mean,rank1_std") => {}
        other => return Err(Error::Parse(format!("bad sweep header: {other:?}"))),
    }
    let mut out = Vec::new();
    for line in lines {
        let fields = split_csv_line(line, 4, "sweep row")?;
        out.push(SweepRow {
            l: fields[0].parse().map_err(|e| Error::Parse(format!("sweep L: {e}")))?,
            method: parse_method(fields[1])?,
            rank1_mean: fields[2].parse().map_err(|e| Error::Parse(format!("sweep mean: {e}")))?,
            rank1_std: fields[3].parse().map_err(|e| Error::Parse(format!("sweep std: {e}")))?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("sweep document has no rows".into()));
    }
    Ok(out)
}
