//! Replicated simulation experiments: the distribution of ensemble
//! predictions, coverage of confidence intervals and the rejection rate of the
//! feature-significance test under the null.
//!
//! An experiment is fully determined by its [`ExperimentSpec`]; every
//! replicate draws its data and ensembles from streams keyed by the spec's
//! seed and the replicate index, so reports are bit-identical across runs and
//! worker counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate, Dataset, GeneratorSpec, PredictionPoint};
use crate::ensemble::{build_with, Arm, EnsembleConfig};
use crate::error::{Error, Result};
use crate::inference::{
    self, compare_arms, normal_quantile, ConfidenceInterval, SignificanceConfig,
};
use crate::kernel::{FeatureSet, Kernel, MeanKernel, TreeKernel};
use crate::rng::{self, label};
use crate::subsampling::SubsamplePlan;
use crate::tree::TreeConfig;
use crate::variance::{
    ensemble_variance, estimate_external, estimate_internal, VarianceEstimate, VarianceMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Distribution,
    Coverage,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub k: usize,
    /// Number of uniform subsamples; defaults to `n`. Ignored under internal estimation.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub tree: TreeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum Estimation {
    /// Uniform ensemble plus auxiliary fixed-point and uniform trees.
    External {
        n_z: usize,
        n_mc: usize,
        #[serde(default = "default_n_kk")]
        n_kk: usize,
    },
    /// The ensemble is itself the `n_z x n_mc` fixed-point design.
    Internal { n_z: usize, n_mc: usize },
}

fn default_n_kk() -> usize {
    500
}

/// Test points drawn uniformly from `[low, high]^d`, fixed for the whole experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralPoints {
    pub count: usize,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
}

fn default_low() -> f64 {
    0.25
}

fn default_high() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelChoice {
    Tree,
    /// Subsample-mean kernel with a linear feature contrast; see [`MeanKernel`].
    MeanContrast {
        center: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    /// Features kept by the reduced ensemble.
    pub reduced: Vec<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_level() -> f64 {
    0.95
}

/// Where the coverage target comes from: a supplied number or `"estimate"`,
/// the mean prediction of `reference_runs` independent ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceValue {
    Fixed(f64),
    Keyword(ReferenceKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKeyword {
    Estimate,
}

impl Default for ReferenceValue {
    fn default() -> Self {
        ReferenceValue::Keyword(ReferenceKeyword::Estimate)
    }
}

/// Smallest number of reference ensembles accepted for an estimated reference.
pub const MIN_REFERENCE_RUNS: usize = 100;

fn default_reference_runs() -> usize {
    100
}

fn default_bins() -> usize {
    20
}

fn default_kernel() -> KernelChoice {
    KernelChoice::Tree
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replicates: usize,
    /// `generator.seed` is replaced by a per-replicate seed.
    pub generator: GeneratorSpec,
    pub ensemble: EnsembleSettings,
    #[serde(default)]
    pub estimation: Option<Estimation>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub central_points: Option<CentralPoints>,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Expected prediction used for coverage.
    #[serde(default)]
    pub reference_value: ReferenceValue,
    #[serde(default = "default_reference_runs")]
    pub reference_runs: usize,
    #[serde(default)]
    pub test: Option<TestSpec>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelChoice,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

impl ExperimentSpec {
    pub fn new(
        kind: ExperimentKind,
        generator: GeneratorSpec,
        k: usize,
        replicates: usize,
        seed: u64,
    ) -> Self {
        ExperimentSpec {
            kind,
            seed,
            replicates,
            generator,
            ensemble: EnsembleSettings {
                k,
                m: None,
                tree: TreeConfig::default(),
            },
            estimation: None,
            points: Vec::new(),
            central_points: None,
            level: default_level(),
            reference_value: ReferenceValue::default(),
            reference_runs: default_reference_runs(),
            test: None,
            kernel: KernelChoice::Tree,
            histogram_bins: default_bins(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        let n = self.generator.n;
        if self.replicates < 1 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.ensemble.k < 1 || self.ensemble.k > n {
            return Err(Error::invalid(format!(
                "k={} must lie in [1, n={n}]",
                self.ensemble.k
            )));
        }
        if self.ensemble.k == n {
            return Err(Error::Unsupported(
                "subsamples as large as the training set (bootstrap-style ensembles) have no variance estimate"
                    .into(),
            ));
        }
        self.ensemble.tree.validate(self.generator.d())?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level must lie in (0, 1)"));
        }
        if self.histogram_bins < 1 {
            return Err(Error::invalid("histogram_bins must be at least 1"));
        }
        match (self.points.is_empty(), &self.central_points) {
            (false, Some(_)) => {
                return Err(Error::invalid(
                    "give either points or central_points, not both",
                ))
            }
            (true, None) => return Err(Error::invalid("no test points configured")),
            (_, Some(c)) if c.count < 1 || !(c.low <= c.high) => {
                return Err(Error::invalid(
                    "central_points needs count >= 1 and low <= high",
                ))
            }
            _ => {}
        }
        for p in &self.points {
            PredictionPoint::new(p.clone())?.check_dim(self.generator.d())?;
        }
        match self.estimation {
            Some(Estimation::External { n_z, n_mc, n_kk }) => {
                if n_z < 2 || n_z > n || n_mc < 1 || n_kk < 2 {
                    return Err(Error::invalid(
                        "external estimation needs 2 <= n_z <= n, n_mc >= 1, n_kk >= 2",
                    ));
                }
            }
            Some(Estimation::Internal { n_z, n_mc }) => {
                if n_z < 2 || n_z > n || n_mc < 1 {
                    return Err(Error::invalid(
                        "internal estimation needs 2 <= n_z <= n, n_mc >= 1",
                    ));
                }
            }
            None => {}
        }
        if self.ensemble.m == Some(0) {
            return Err(Error::invalid("m must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Distribution => self.single_point()?,
            ExperimentKind::Coverage => {
                self.single_point()?;
                if self.estimation.is_none() {
                    return Err(Error::invalid(
                        "coverage experiments need an estimation method",
                    ));
                }
                if self.reference_value == ReferenceValue::default()
                    && self.reference_runs < MIN_REFERENCE_RUNS
                {
                    return Err(Error::invalid(format!(
                        "an estimated reference needs reference_runs >= {MIN_REFERENCE_RUNS}"
                    )));
                }
            }
            ExperimentKind::Alpha => {
                if self.estimation.is_none() {
                    return Err(Error::invalid(
                        "alpha experiments need an estimation method",
                    ));
                }
                let test = self
                    .test
                    .as_ref()
                    .ok_or_else(|| Error::invalid("alpha experiments need a [test] section"))?;
                if !(test.alpha > 0.0 && test.alpha < 1.0) {
                    return Err(Error::invalid("test.alpha must lie in (0, 1)"));
                }
                let names = self.generator.feature_names();
                for r in &test.reduced {
                    if !names.contains(r) {
                        return Err(Error::UnknownFeature(r.clone()));
                    }
                }
                if test.reduced.is_empty() {
                    return Err(Error::invalid("test.reduced must not be empty"));
                }
                if self.generator.extra_noise_features == 0 {
                    log::warn!(
                        "alpha experiment without pure-noise features: the null may not hold"
                    );
                }
            }
        }
        Ok(())
    }

    fn single_point(&self) -> Result<()> {
        let count = self.central_points.map_or(self.points.len(), |c| c.count);
        if count != 1 {
            return Err(Error::invalid(format!(
                "{:?} experiments evaluate a single point, got {count}",
                self.kind
            )));
        }
        Ok(())
    }

    /// The experiment's fixed test points.
    pub fn resolve_points(&self) -> Result<Vec<PredictionPoint>> {
        if let Some(c) = self.central_points {
            use rand::Rng;
            let mut rng = rng::stream(self.seed, &[label::POINTS]);
            let d = self.generator.d();
            return (0..c.count)
                .map(|_| {
                    let coords = (0..d)
                        .map(|_| {
                            if c.low < c.high {
                                rng.random_range(c.low..c.high)
                            } else {
                                c.low
                            }
                        })
                        .collect();
                    PredictionPoint::new(coords)
                })
                .collect();
        }
        self.points
            .iter()
            .map(|p| PredictionPoint::new(p.clone()))
            .collect()
    }

    fn kernel(&self) -> Box<dyn Kernel> {
        match self.kernel {
            KernelChoice::Tree => Box::new(TreeKernel(self.ensemble.tree)),
            KernelChoice::MeanContrast { center } => Box::new(MeanKernel {
                contrast_center: Some(center),
            }),
        }
    }

    fn data_for(&self, stream: &[u64]) -> Result<Dataset> {
        let mut g = self.generator.clone();
        g.seed = rng::derive(self.seed, stream);
        generate(&g)
    }

    /// Ensemble configuration and matching variance method for one replicate.
    fn ensemble_for(&self, stream: &[u64]) -> (EnsembleConfig, Option<VarianceMethod>) {
        let n = self.generator.n;
        let k = self.ensemble.k;
        let mut path = stream.to_vec();
        path.push(label::SUBSAMPLE);
        let plan_seed = rng::derive(self.seed, &path);
        path.pop();
        path.push(label::OMEGA);
        let tree_seed = rng::derive(self.seed, &path);
        let uniform = || SubsamplePlan::uniform(n, k, self.ensemble.m.unwrap_or(n), plan_seed);
        let (plan, method) = match self.estimation {
            None => (uniform(), None),
            Some(Estimation::External { n_z, n_mc, n_kk }) => (
                uniform(),
                Some(VarianceMethod::External { n_z, n_mc, n_kk }),
            ),
            Some(Estimation::Internal { n_z, n_mc }) => (
                SubsamplePlan::fixed_point(n, k, n_z, n_mc, plan_seed),
                Some(VarianceMethod::Internal),
            ),
        };
        (
            EnsembleConfig {
                plan,
                tree: self.ensemble.tree,
                seed: tree_seed,
            },
            method,
        )
    }
}

/// Full record of a run: the resolved spec, per-replicate rows and a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport<R, S> {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub points: Vec<PredictionPoint>,
    pub per_replicate: Vec<R>,
    pub summary: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub replicate: usize,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub mean: f64,
    pub empirical_variance: f64,
    /// Variance predicted by the estimated limiting normal, when estimation is configured.
    pub predicted_variance: Option<f64>,
    pub predicted_estimate: Option<VarianceEstimate>,
    /// Correlation of the sorted predictions with normal scores; absent when
    /// the predictions are (numerically) constant.
    pub qq_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub replicate: usize,
    pub estimate: VarianceEstimate,
    pub interval: ConfidenceInterval,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub reference_value: f64,
    /// True when the reference came from reference ensembles rather than the spec.
    pub reference_estimated: bool,
    pub coverage: f64,
    /// `sqrt(p (1 - p) / replicates)`.
    pub coverage_se: f64,
    pub mean_theta_hat: f64,
    pub empirical_variance: f64,
    pub mean_variance_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub replicate: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub df: usize,
    pub critical_value: f64,
    pub rejection_rate: f64,
    pub rejection_se: f64,
    pub mean_statistic: f64,
}

pub type DistributionReport = ExperimentReport<DistributionRecord, DistributionSummary>;
pub type CoverageReport = ExperimentReport<CoverageRecord, CoverageSummary>;
pub type AlphaReport = ExperimentReport<AlphaRecord, AlphaSummary>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentOutput {
    Distribution(DistributionReport),
    Coverage(CoverageReport),
    Alpha(AlphaReport),
}

impl ExperimentOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// Histogram of the per-replicate predictions (distribution, coverage)
    /// or test statistics (alpha).
    pub fn histogram(&self) -> Histogram {
        let (values, bins): (Vec<f64>, usize) = match self {
            ExperimentOutput::Distribution(r) => (
                r.per_replicate.iter().map(|x| x.prediction).collect(),
                r.spec.histogram_bins,
            ),
            ExperimentOutput::Coverage(r) => (
                r.per_replicate
                    .iter()
                    .map(|x| x.interval.theta_hat)
                    .collect(),
                r.spec.histogram_bins,
            ),
            ExperimentOutput::Alpha(r) => (
                r.per_replicate.iter().map(|x| x.statistic).collect(),
                r.spec.histogram_bins,
            ),
        };
        Histogram::from_values(&values, bins)
    }

    /// One-line human summary.
    pub fn describe(&self) -> String {
        match self {
            ExperimentOutput::Distribution(r) => format!(
                "distribution: {} replicates, mean {:.4}, variance {:.4}, qq correlation {}",
                r.per_replicate.len(),
                r.summary.mean,
                r.summary.empirical_variance,
                r.summary
                    .qq_correlation
                    .map_or("n/a".to_string(), |q| format!("{q:.4}"))
            ),
            ExperimentOutput::Coverage(r) => format!(
                "coverage: {:.3} (se {:.3}) over {} intervals, reference {:.4}",
                r.summary.coverage,
                r.summary.coverage_se,
                r.per_replicate.len(),
                r.summary.reference_value
            ),
            ExperimentOutput::Alpha(r) => format!(
                "alpha: rejection rate {:.3} (se {:.3}), mean statistic {:.2} on {} df, critical value {:.3}",
                r.summary.rejection_rate,
                r.summary.rejection_se,
                r.summary.mean_statistic,
                r.summary.df,
                r.summary.critical_value
            ),
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    Ok(match spec.kind {
        ExperimentKind::Distribution => ExperimentOutput::Distribution(run_distribution(spec)?),
        ExperimentKind::Coverage => ExperimentOutput::Coverage(run_coverage(spec)?),
        ExperimentKind::Alpha => ExperimentOutput::Alpha(run_alpha(spec)?),
    })
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

/// Pearson correlation between the sorted sample and Blom normal scores.
pub fn qq_correlation(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            normal_quantile((i as f64 + 1.0 - 0.375) / (n as f64 + 0.25))
                .expect("interior probability")
        })
        .collect();
    let (mx, vx) = mean_and_variance(&sorted);
    if !(vx.sqrt() > 1e-12 * mx.abs().max(1.0)) {
        return None;
    }
    let (my, _) = mean_and_variance(&scores);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in sorted.iter().zip(&scores) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn replicate_path(r: usize) -> [u64; 2] {
    [label::REPLICATE, r as u64]
}

pub fn run_distribution(spec: &ExperimentSpec) -> Result<DistributionReport> {
    spec.validate()?;
    let points = spec.resolve_points()?;
    let kernel = spec.kernel();
    let features = FeatureSet::all(spec.generator.d());
    let per_replicate = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let path = replicate_path(r);
            let data = spec.data_for(&[path[0], path[1], label::DATA])?;
            let (cfg, _) = spec.ensemble_for(&path);
            let pred = build_with(&data, &cfg, kernel.as_ref(), &features, &points)?;
            Ok(DistributionRecord {
                replicate: r,
                prediction: pred.theta_hat[0],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Variance components are estimated once, on the first replicate's data.
    let predicted_estimate = match spec.estimation {
        None => None,
        Some(_) => {
            let path = replicate_path(0);
            let data = spec.data_for(&[path[0], path[1], label::DATA])?;
            let (cfg, method) = spec.ensemble_for(&path);
            Some(
                estimate_for(
                    &data,
                    &cfg,
                    method.expect("estimation"),
                    kernel.as_ref(),
                    &features,
                    &points,
                )?[0],
            )
        }
    };

    let values: Vec<f64> = per_replicate.iter().map(|r| r.prediction).collect();
    let (mean, empirical_variance) = mean_and_variance(&values);
    Ok(ExperimentReport {
        spec: spec.clone(),
        seed: spec.seed,
        points,
        summary: DistributionSummary {
            mean,
            empirical_variance,
            predicted_variance: predicted_estimate.as_ref().map(ensemble_variance),
            predicted_estimate,
            qq_correlation: qq_correlation(&values),
        },
        per_replicate,
    })
}

fn estimate_for(
    data: &Dataset,
    cfg: &EnsembleConfig,
    method: VarianceMethod,
    kernel: &dyn Kernel,
    features: &FeatureSet,
    points: &[PredictionPoint],
) -> Result<Vec<VarianceEstimate>> {
    match method {
        VarianceMethod::External { n_z, n_mc, n_kk } => {
            estimate_external(data, cfg, kernel, features, points, n_z, n_mc, n_kk)
        }
        VarianceMethod::Internal => {
            let pred = build_with(data, cfg, kernel, features, points)?;
            estimate_internal(&pred, data.n(), cfg.k())
        }
    }
}

/// Mean prediction over `runs` independent datasets and ensembles.
fn reference_value(
    spec: &ExperimentSpec,
    points: &[PredictionPoint],
    kernel: &dyn Kernel,
) -> Result<f64> {
    let features = FeatureSet::all(spec.generator.d());
    let predictions = (0..spec.reference_runs)
        .into_par_iter()
        .map(|i| {
            let path = [label::REFERENCE, i as u64];
            let data = spec.data_for(&[path[0], path[1], label::DATA])?;
            let (cfg, _) = spec.ensemble_for(&path);
            Ok(build_with(&data, &cfg, kernel, &features, points)?.theta_hat[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_variance(&predictions).0)
}

pub fn run_coverage(spec: &ExperimentSpec) -> Result<CoverageReport> {
    spec.validate()?;
    let points = spec.resolve_points()?;
    let kernel = spec.kernel();
    let features = FeatureSet::all(spec.generator.d());
    let (reference, reference_estimated) = match spec.reference_value {
        ReferenceValue::Fixed(v) => (v, false),
        ReferenceValue::Keyword(_) => (reference_value(spec, &points, kernel.as_ref())?, true),
    };
    let per_replicate = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let path = replicate_path(r);
            let data = spec.data_for(&[path[0], path[1], label::DATA])?;
            let (cfg, method) = spec.ensemble_for(&path);
            let method = method.expect("coverage needs estimation");
            let pred = build_with(&data, &cfg, kernel.as_ref(), &features, &points)?;
            let estimate = match method {
                VarianceMethod::Internal => estimate_internal(&pred, data.n(), cfg.k())?[0],
                VarianceMethod::External { n_z, n_mc, n_kk } => estimate_external(
                    &data,
                    &cfg,
                    kernel.as_ref(),
                    &features,
                    &points,
                    n_z,
                    n_mc,
                    n_kk,
                )?[0],
            };
            let interval =
                inference::confidence_interval(pred.theta_hat[0], &estimate, spec.level)?;
            Ok(CoverageRecord {
                replicate: r,
                estimate,
                covered: interval.contains(reference),
                interval,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = per_replicate.len() as f64;
    let coverage = per_replicate.iter().filter(|r| r.covered).count() as f64 / reps;
    let thetas: Vec<f64> = per_replicate.iter().map(|r| r.interval.theta_hat).collect();
    let (mean_theta_hat, empirical_variance) = mean_and_variance(&thetas);
    let mean_variance_estimate = per_replicate
        .iter()
        .map(|r| r.interval.variance_used)
        .sum::<f64>()
        / reps;
    Ok(ExperimentReport {
        spec: spec.clone(),
        seed: spec.seed,
        points,
        summary: CoverageSummary {
            reference_value: reference,
            reference_estimated,
            coverage,
            coverage_se: (coverage * (1.0 - coverage) / reps).sqrt(),
            mean_theta_hat,
            empirical_variance,
            mean_variance_estimate,
        },
        per_replicate,
    })
}

pub fn run_alpha(spec: &ExperimentSpec) -> Result<AlphaReport> {
    spec.validate()?;
    let points = spec.resolve_points()?;
    let kernel = spec.kernel();
    let test = spec.test.as_ref().expect("validated");
    let per_replicate = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let path = replicate_path(r);
            let data = spec.data_for(&[path[0], path[1], label::DATA])?;
            let (ensemble, method) = spec.ensemble_for(&path);
            let cfg = SignificanceConfig {
                ensemble,
                method: method.expect("alpha needs estimation"),
                alpha: test.alpha,
            };
            let full = FeatureSet::all(data.d());
            let reduced = FeatureSet::from_names(&data, &test.reduced)?;
            let cmp = compare_arms(
                Arm {
                    data: &data,
                    features: &full,
                },
                Arm {
                    data: &data,
                    features: &reduced,
                },
                &points,
                &cfg,
                kernel.as_ref(),
            )?;
            Ok(AlphaRecord {
                replicate: r,
                statistic: cmp.result.statistic,
                p_value: cmp.result.p_value,
                reject: cmp.result.reject,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = per_replicate.len() as f64;
    let rate = per_replicate.iter().filter(|r| r.reject).count() as f64 / reps;
    let df = points.len();
    Ok(ExperimentReport {
        spec: spec.clone(),
        seed: spec.seed,
        summary: AlphaSummary {
            df,
            critical_value: inference::chisq_quantile(1.0 - test.alpha, df as f64)?,
            rejection_rate: rate,
            rejection_se: (rate * (1.0 - rate) / reps).sqrt(),
            mean_statistic: per_replicate.iter().map(|r| r.statistic).sum::<f64>() / reps,
        },
        points,
        per_replicate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`; the last bin is closed.
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        if values.is_empty() {
            return Histogram { bins: Vec::new() };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Histogram {
                bins: vec![HistogramBin {
                    bin_left: lo,
                    bin_right: hi,
                    count: values.len(),
                }],
            };
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram {
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(b, count)| HistogramBin {
                    bin_left: lo + b as f64 * width,
                    bin_right: if b + 1 == bins {
                        hi
                    } else {
                        lo + (b + 1) as f64 * width
                    },
                    count,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.bin_left, b.bin_right, b.count));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GeneratorKind;

    fn slr_spec(kind: ExperimentKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(
            kind,
            GeneratorSpec::new(GeneratorKind::Slr, 60, 0),
            10,
            4,
            5,
        );
        s.points = vec![vec![10.0]];
        s.ensemble.m = Some(30);
        s
    }

    #[test]
    fn histogram_bins_cover_all_values() {
        let h = Histogram::from_values(&[0.0, 0.5, 1.0, 1.0, 2.0], 4);
        assert_eq!(h.bins.len(), 4);
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h.bins[3].count, 1);
        assert_eq!(h.bins[3].bin_right, 2.0);
        let flat = Histogram::from_values(&[3.0, 3.0], 5);
        assert_eq!(flat.bins.len(), 1);
        assert!(flat.to_csv().starts_with("bin_left,bin_right,count\n3,3,2"));
    }

    #[test]
    fn qq_correlation_of_normal_scores_is_one() {
        let scores: Vec<f64> = (0..50)
            .map(|i| normal_quantile((i as f64 + 0.625) / 50.25).unwrap() * 3.0 + 1.0)
            .collect();
        assert!((qq_correlation(&scores).unwrap() - 1.0).abs() < 1e-12);
        assert!(qq_correlation(&[2.0; 10]).is_none());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = slr_spec(ExperimentKind::Coverage);
        assert!(s.validate().is_err(), "coverage without estimation");
        s.estimation = Some(Estimation::External {
            n_z: 5,
            n_mc: 5,
            n_kk: 10,
        });
        assert!(s.validate().is_ok());
        s.points.push(vec![5.0]);
        assert!(s.validate().is_err(), "two points");

        let mut s = slr_spec(ExperimentKind::Distribution);
        s.ensemble.k = 60;
        assert!(matches!(s.validate(), Err(Error::Unsupported(_))));

        let mut s = slr_spec(ExperimentKind::Alpha);
        s.estimation = Some(Estimation::Internal { n_z: 5, n_mc: 5 });
        assert!(s.validate().is_err(), "alpha without test section");
        s.test = Some(TestSpec {
            reduced: vec!["x9".into()],
            alpha: 0.05,
        });
        assert!(matches!(s.validate(), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn central_points_are_fixed_by_seed() {
        let mut s = slr_spec(ExperimentKind::Alpha);
        s.points.clear();
        s.central_points = Some(CentralPoints {
            count: 3,
            low: 0.25,
            high: 0.75,
        });
        let a = s.resolve_points().unwrap();
        assert_eq!(a, s.resolve_points().unwrap());
        assert_eq!(a.len(), 3);
        assert!(a
            .iter()
            .all(|p| p.coords().iter().all(|&v| (0.25..0.75).contains(&v))));
    }

    #[test]
    fn coverage_report_is_reproducible() {
        let mut s = slr_spec(ExperimentKind::Coverage);
        s.estimation = Some(Estimation::External {
            n_z: 5,
            n_mc: 5,
            n_kk: 10,
        });
        s.reference_value = ReferenceValue::Fixed(20.0);
        let a = run_coverage(&s).unwrap();
        assert_eq!(a.per_replicate.len(), 4);
        assert!(!a.summary.reference_estimated);
        assert_eq!(a, run_coverage(&s).unwrap());
        for r in &a.per_replicate {
            assert!(
                r.interval.lower <= r.interval.theta_hat
                    && r.interval.theta_hat <= r.interval.upper
            );
        }
    }

    #[test]
    fn alpha_report_counts_rejections() {
        let mut s = slr_spec(ExperimentKind::Alpha);
        s.generator.extra_noise_features = 1;
        s.points = vec![vec![10.0, 0.5]];
        s.estimation = Some(Estimation::Internal { n_z: 5, n_mc: 6 });
        s.test = Some(TestSpec {
            reduced: vec!["x1".into()],
            alpha: 0.05,
        });
        let r = run_alpha(&s).unwrap();
        let rejected = r.per_replicate.iter().filter(|x| x.reject).count();
        assert_eq!(r.summary.rejection_rate, rejected as f64 / 4.0);
        assert_eq!(r.summary.df, 1);
        assert!(r.per_replicate.iter().all(|x| x.statistic >= 0.0));
    }
}
