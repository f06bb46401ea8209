use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use usforest::ensemble::default_k;
use usforest::inference::{BatteryEntry, BatteryTest};
use usforest::simharness::{run_experiment, ExperimentSpec};
use usforest::variance::fit_with_variance;
use usforest::{
    confidence_interval, ensemble_variance, load_csv, load_points, randomization_battery,
    significance_test, ConfidenceInterval, Dataset, EnsembleConfig, Error, FeatureSet,
    PredictionPoint, SignificanceConfig, SubsamplePlan, TreeConfig, TreeKernel, VarianceEstimate,
    VarianceMethod,
};

use crate::args::{DataArgs, EnsembleArgs, ExperimentArgs, PredictArgs, TestArgs};
use crate::output::{emit, to_json, Staged};
use crate::Failure;

const DEFAULT_NZ: usize = 50;
const DEFAULT_NMC: usize = 500;
const DEFAULT_NKK: usize = 500;

#[derive(Debug, Serialize)]
struct DataInfo {
    path: String,
    response: String,
    n: usize,
    d: usize,
    dropped_rows: usize,
    features: Vec<String>,
}

fn load(args: &DataArgs) -> Result<(Dataset, DataInfo), Failure> {
    let loaded = load_csv(&args.data, &args.response).map_err(|e| match e {
        Error::MissingColumn(_) => Failure::usage(format!("--response: {e}")),
        other => other.into(),
    })?;
    if loaded.dropped_rows > 0 {
        log::warn!(
            "dropped {} rows with missing or non-numeric values",
            loaded.dropped_rows
        );
    }
    let data = loaded.data;
    let info = DataInfo {
        path: args.data.display().to_string(),
        response: args.response.clone(),
        n: data.n(),
        d: data.d(),
        dropped_rows: loaded.dropped_rows,
        features: data.feature_names().to_vec(),
    };
    Ok((data, info))
}

/// Turns the ensemble flags into a validated configuration and variance method.
fn resolve_ensemble(
    a: &EnsembleArgs,
    data: &Dataset,
) -> Result<(EnsembleConfig, VarianceMethod), Failure> {
    let n = data.n();
    let k = a.k.unwrap_or_else(|| default_k(n));
    let n_z = a.nz.unwrap_or(DEFAULT_NZ.min(n));
    let tree = TreeConfig {
        min_split: a.min_split,
        min_leaf: a.min_leaf,
        max_depth: a.max_depth,
        mtry: a.mtry,
    };
    let (plan, method) = if a.external {
        let method = VarianceMethod::External {
            n_z,
            n_mc: a.nmc.unwrap_or(DEFAULT_NMC),
            n_kk: a.nkk.unwrap_or(DEFAULT_NKK),
        };
        (
            SubsamplePlan::uniform(n, k, a.m.unwrap_or(n), a.seed),
            method,
        )
    } else {
        if a.nkk.is_some() {
            return Err(Failure::usage("--nkk only applies with --external"));
        }
        if n_z == 0 {
            return Err(Failure::usage("--nz must be at least 1"));
        }
        let n_mc = match (a.m, a.nmc) {
            (Some(m), Some(c)) if m != n_z * c => {
                return Err(Failure::usage(format!(
                    "--m {m} must equal --nz {n_z} times --nmc {c} with internal estimation"
                )))
            }
            (Some(m), None) if m % n_z != 0 => {
                return Err(Failure::usage(format!(
                    "--m {m} is not a multiple of --nz {n_z}"
                )))
            }
            (Some(m), None) => m / n_z,
            (_, Some(c)) => c,
            (None, None) => DEFAULT_NMC,
        };
        (
            SubsamplePlan::fixed_point(n, k, n_z, n_mc, a.seed),
            VarianceMethod::Internal,
        )
    };
    let cfg = EnsembleConfig {
        plan,
        tree,
        seed: a.seed,
    };
    cfg.validate(data)?;
    method.validate(&cfg.plan)?;
    Ok((cfg, method))
}

fn parse_point(text: &str, d: usize) -> Result<PredictionPoint, Failure> {
    let coords = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::usage(format!("--point `{text}` is not a list of numbers")))?;
    let point = PredictionPoint::new(coords)?;
    point
        .check_dim(d)
        .map_err(|e| Failure::usage(format!("--point `{text}`: {e}")))?;
    Ok(point)
}

fn check_unit(flag: &str, v: f64) -> Result<(), Failure> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Failure::usage(format!(
            "{flag} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictConfig {
    data: DataInfo,
    ensemble: EnsembleConfig,
    variance: VarianceMethod,
    level: f64,
}

#[derive(Debug, Serialize)]
struct PointReport {
    point: PredictionPoint,
    theta_hat: f64,
    zeta1: f64,
    zetakk: f64,
    variance: f64,
    interval: ConfidenceInterval,
    estimate: VarianceEstimate,
}

#[derive(Debug, Serialize)]
struct PredictReport {
    command: &'static str,
    seed: u64,
    config: PredictConfig,
    predictions: Vec<PointReport>,
}

pub fn predict(a: &PredictArgs) -> Result<(), Failure> {
    check_unit("--level", a.level)?;
    let (data, info) = load(&a.data)?;
    let points = a
        .points
        .iter()
        .map(|p| parse_point(p, data.d()))
        .collect::<Result<Vec<_>, _>>()?;
    let (cfg, method) = resolve_ensemble(&a.ensemble, &data)?;
    let (pred, estimates) = fit_with_variance(&data, &cfg, &TreeKernel(cfg.tree), &points, method)?;

    let mut summary = String::new();
    let mut predictions = Vec::with_capacity(points.len());
    for (i, (point, est)) in points.into_iter().zip(estimates).enumerate() {
        let theta_hat = pred.theta_hat[i];
        let interval = confidence_interval(theta_hat, &est, a.level)?;
        let _ = writeln!(
            summary,
            "point {:?}: prediction {:.4}, {:.0}% interval [{:.4}, {:.4}]",
            point.coords(),
            theta_hat,
            100.0 * a.level,
            interval.lower,
            interval.upper
        );
        predictions.push(PointReport {
            point,
            theta_hat,
            zeta1: est.zeta1,
            zetakk: est.zetakk,
            variance: ensemble_variance(&est),
            interval,
            estimate: est,
        });
    }
    let report = PredictReport {
        command: "predict",
        seed: a.ensemble.seed,
        config: PredictConfig {
            data: info,
            ensemble: cfg,
            variance: method,
            level: a.level,
        },
        predictions,
    };
    emit(&to_json(&report), a.output.output.as_deref(), &summary)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum PointSource {
    File(String),
    Sampled(usize),
}

#[derive(Debug, Serialize)]
struct TestConfig {
    data: DataInfo,
    reduced: Vec<String>,
    point_source: PointSource,
    ensemble: EnsembleConfig,
    variance: VarianceMethod,
    alpha: f64,
    battery: bool,
}

#[derive(Debug, Serialize)]
struct TestReport {
    command: &'static str,
    seed: u64,
    config: TestConfig,
    points: Vec<PredictionPoint>,
    results: Vec<BatteryEntry>,
}

fn explain_singular(e: Error) -> Failure {
    match e {
        Error::SingularCovariance { .. } => {
            Failure::Runtime(anyhow::Error::new(e).context(
                "the test is degenerate; use fewer test points or more fixed points (--nz)",
            ))
        }
        other => other.into(),
    }
}

pub fn test(a: &TestArgs) -> Result<(), Failure> {
    check_unit("--alpha", a.alpha)?;
    let (data, info) = load(&a.data)?;
    let reduced = FeatureSet::from_names(&data, &a.reduced)?;
    let (points, point_source) = match (&a.points_file, a.sample_points) {
        (Some(path), _) => (
            load_points(path, data.d())?,
            PointSource::File(path.display().to_string()),
        ),
        (None, Some(count)) => (
            data.sample_points(count, a.ensemble.seed)?,
            PointSource::Sampled(count),
        ),
        (None, None) => return Err(Failure::usage("give --points-file or --sample-points")),
    };
    let (ensemble, method) = resolve_ensemble(&a.ensemble, &data)?;
    let cfg = SignificanceConfig {
        ensemble,
        method,
        alpha: a.alpha,
    };

    let results = if a.battery {
        randomization_battery(&data, &reduced, &points, &cfg, a.ensemble.seed)
            .map_err(explain_singular)?
    } else {
        let comparison =
            significance_test(&data, &reduced, &points, &cfg).map_err(explain_singular)?;
        vec![BatteryEntry {
            test: BatteryTest::FullVsReduced,
            label: BatteryTest::FullVsReduced.label().to_string(),
            comparison,
        }]
    };

    let mut summary = String::new();
    for r in &results {
        let t = &r.comparison.result;
        let _ = writeln!(
            summary,
            "{}: statistic {:.4} on {} df, critical value {:.4}, p-value {:.4} -> {}",
            r.label,
            t.statistic,
            t.df,
            t.critical_value,
            t.p_value,
            if t.reject { "reject" } else { "fail to reject" }
        );
    }
    let report = TestReport {
        command: "test",
        seed: a.ensemble.seed,
        config: TestConfig {
            data: info,
            reduced: reduced
                .indices()
                .iter()
                .map(|&j| data.feature_names()[j].clone())
                .collect(),
            point_source,
            ensemble: cfg.ensemble,
            variance: cfg.method,
            alpha: a.alpha,
            battery: a.battery,
        },
        points,
        results,
    };
    emit(&to_json(&report), a.output.output.as_deref(), &summary)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputPaths {
    results: Option<PathBuf>,
    histogram: Option<PathBuf>,
}

/// Layout of an experiment file: an optional `[output]` table and the
/// `[experiment]` description.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    #[serde(default)]
    output: OutputPaths,
    experiment: ExperimentSpec,
}

/// Relative paths in a config file are taken relative to the file itself.
fn relative_to(config: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path;
    }
    match config.parent() {
        Some(dir) => dir.join(path),
        None => path,
    }
}

pub fn experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("cannot read {}", a.config.display()))
        .map_err(Failure::Usage)?;
    let file: ExperimentFile = toml::from_str(&text)
        .with_context(|| format!("invalid experiment file {}", a.config.display()))
        .map_err(Failure::Usage)?;
    let spec = file.experiment;
    spec.validate()?;

    let results = a
        .output
        .clone()
        .or_else(|| file.output.results.map(|p| relative_to(&a.config, p)));
    let histogram = a
        .histogram
        .clone()
        .or_else(|| file.output.histogram.map(|p| relative_to(&a.config, p)));

    let report = run_experiment(&spec)?;
    let json = report.to_json();
    let summary = report.describe() + "\n";
    match (&results, &histogram) {
        (None, None) => emit(&json, None, &summary),
        _ => {
            let mut staged = Staged::default();
            if let Some(path) = &histogram {
                staged.add(path, &report.histogram().to_csv())?;
            }
            match &results {
                Some(path) => {
                    staged.add(path, &json)?;
                    staged.commit()?;
                    print!("{summary}");
                }
                None => {
                    staged.commit()?;
                    print!("{json}");
                    eprint!("{summary}");
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_covariance_is_a_runtime_failure_with_advice() {
        match explain_singular(Error::SingularCovariance { points: vec![1] }) {
            Failure::Runtime(e) => assert!(format!("{e:#}").contains("--nz")),
            Failure::Usage(e) => panic!("expected a runtime failure, got {e:#}"),
        }
        assert!(matches!(
            explain_singular(Error::InvalidParameter("bad".into())),
            Failure::Usage(_)
        ));
    }

    #[test]
    fn config_paths_are_relative_to_the_file() {
        let config = Path::new("runs/exp.toml");
        assert_eq!(
            relative_to(config, "a.json".into()),
            Path::new("runs/a.json")
        );
        assert_eq!(
            relative_to(config, "/tmp/a.json".into()),
            Path::new("/tmp/a.json")
        );
    }
}
