//! Chi-square tests on the difference between two paired ensembles.
//!
//! Both ensembles are grown on the same index sets with the same per-tree
//! seeds, so the per-tree differences form a U-statistic whose mean vector and
//! covariance are estimated exactly like a single ensemble's prediction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{chisq_quantile, chisq_sf, TestKind, TestResult};
use crate::dataset::{Dataset, PredictionPoint};
use crate::ensemble::{build_paired, Arm, EnsembleConfig, EnsemblePrediction};
use crate::error::{Error, Result};
use crate::kernel::{FeatureSet, Kernel, TreeKernel};
use crate::linalg::{cholesky, quadratic_form, Matrix};
use crate::rng::{self, label};
use crate::variance::{
    auxiliary_configs, estimate_sigma, CovarianceEstimate, SamplingParams, VarianceMethod,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceConfig {
    pub ensemble: EnsembleConfig,
    pub method: VarianceMethod,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub result: TestResult,
    /// Mean difference (first minus second) at every test point.
    pub mu_hat: Vec<f64>,
    #[serde(skip)]
    pub covariance: Option<CovarianceEstimate>,
}

fn differences(a: &EnsemblePrediction, b: &EnsemblePrediction) -> Matrix {
    let (m, p) = (a.per_tree.rows(), a.per_tree.cols());
    let data = a
        .per_tree
        .as_slice()
        .iter()
        .zip(b.per_tree.as_slice())
        .map(|(x, y)| x - y)
        .collect();
    Matrix::from_vec(m, p, data)
}

fn group_blocks(diffs: &Matrix, n_z: usize, n_mc: usize) -> Vec<Matrix> {
    (0..n_z)
        .map(|g| diffs.row_block(g * n_mc, (g + 1) * n_mc))
        .collect()
}

/// Test points in lexicographic coordinate order, so the statistic does not
/// depend on the order the caller listed them in.
fn canonical_order(points: &[PredictionPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .coords()
            .iter()
            .zip(points[b].coords())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// `mu^T sigma^{-1} mu`, retrying once with a small ridge.
fn chi_square_statistic(mu: &[f64], sigma: &Matrix, points: &[PredictionPoint]) -> Result<f64> {
    if mu.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let degenerate: Vec<usize> = (0..mu.len())
        .filter(|&i| !(sigma.get(i, i) > 0.0) && mu[i] != 0.0)
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::SingularCovariance { points: degenerate });
    }
    let order = canonical_order(points);
    let sigma = sigma.permuted(&order);
    let mu: Vec<f64> = order.iter().map(|&i| mu[i]).collect();
    let factor = cholesky(&sigma).or_else(|_| {
        let p = sigma.rows();
        let ridge = 1e-8 * sigma.trace() / p as f64;
        let mut ridged = sigma.clone();
        for i in 0..p {
            ridged.set(i, i, ridged.get(i, i) + ridge);
        }
        cholesky(&ridged)
    });
    match factor {
        Ok(l) => Ok(quadratic_form(&l, &mu)),
        Err(pivot) => {
            let mut offending: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|&(a, _)| !(sigma.get(a, a) > 0.0))
                .map(|(_, &i)| i)
                .collect();
            if offending.is_empty() {
                offending.push(order[pivot]);
            }
            Err(Error::SingularCovariance { points: offending })
        }
    }
}

/// Tests whether two arms have equal expected predictions at every point.
pub fn compare_arms(
    first: Arm<'_>,
    second: Arm<'_>,
    points: &[PredictionPoint],
    cfg: &SignificanceConfig,
    kernel: &dyn Kernel,
) -> Result<Comparison> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    let ens = &cfg.ensemble;
    cfg.method.validate(&ens.plan)?;
    let params = SamplingParams {
        n: ens.plan.n,
        k: ens.plan.k,
        m: ens.m(),
    };
    let n_points = points.len();

    let (mu_hat, covariance) = match cfg.method {
        VarianceMethod::Internal => {
            let (a, b) = build_paired(first, second, ens, kernel, points)?;
            let g = a.groups.clone().expect("fixed-point plan");
            warn_if_many_points(n_points, g.n_z);
            let diffs = differences(&a, &b);
            let blocks = group_blocks(&diffs, g.n_z, g.n_mc);
            (
                diffs.column_means(),
                estimate_sigma(&blocks, &diffs, params)?,
            )
        }
        VarianceMethod::External { n_z, n_mc, n_kk } => {
            warn_if_many_points(n_points, n_z);
            let (a, b) = build_paired(first, second, ens, kernel, points)?;
            let mu = differences(&a, &b).column_means();
            let (zeta1_cfg, zetakk_cfg) = auxiliary_configs(ens, n_z, n_mc, n_kk);
            let (a1, b1) = build_paired(first, second, &zeta1_cfg, kernel, points)?;
            let blocks = group_blocks(&differences(&a1, &b1), n_z, n_mc);
            let (akk, bkk) = build_paired(first, second, &zetakk_cfg, kernel, points)?;
            (
                mu,
                estimate_sigma(&blocks, &differences(&akk, &bkk), params)?,
            )
        }
    };

    let statistic = chi_square_statistic(&mu_hat, &covariance.combined, points)?;
    let df = n_points as f64;
    let critical_value = chisq_quantile(1.0 - cfg.alpha, df)?;
    Ok(Comparison {
        result: TestResult {
            kind: TestKind::ChiSqDifference,
            statistic,
            df: n_points,
            critical_value,
            p_value: chisq_sf(statistic, df),
            reject: statistic > critical_value,
        },
        mu_hat,
        covariance: Some(covariance),
    })
}

fn warn_if_many_points(n_points: usize, n_z: usize) {
    if 2 * n_points > n_z {
        log::warn!("{n_points} test points against only {n_z} fixed points; the covariance estimate will be noisy");
    }
}

/// Full-feature versus reduced-feature tree ensembles.
pub fn significance_test(
    data: &Dataset,
    reduced: &FeatureSet,
    points: &[PredictionPoint],
    cfg: &SignificanceConfig,
) -> Result<Comparison> {
    let full = FeatureSet::all(data.d());
    if reduced.indices().last().is_some_and(|&j| j >= data.d()) {
        return Err(Error::invalid("reduced feature index out of range"));
    }
    compare_arms(
        Arm {
            data,
            features: &full,
        },
        Arm {
            data,
            features: reduced,
        },
        points,
        cfg,
        &TreeKernel(cfg.ensemble.tree),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryTest {
    /// (a) original data versus the reduced feature set.
    FullVsReduced,
    /// (b) original data versus data with the dropped features randomized.
    FullVsRandomized,
    /// (c) randomized data versus the reduced feature set.
    RandomizedVsReduced,
    /// (d) two independent randomizations against each other.
    RandomizedVsRandomized,
}

impl BatteryTest {
    pub const ALL: [BatteryTest; 4] = [
        BatteryTest::FullVsReduced,
        BatteryTest::FullVsRandomized,
        BatteryTest::RandomizedVsReduced,
        BatteryTest::RandomizedVsRandomized,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BatteryTest::FullVsReduced => "a: full vs reduced",
            BatteryTest::FullVsRandomized => "b: full vs randomized",
            BatteryTest::RandomizedVsReduced => "c: randomized vs reduced",
            BatteryTest::RandomizedVsRandomized => "d: randomized vs re-randomized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub test: BatteryTest,
    pub label: String,
    #[serde(flatten)]
    pub comparison: Comparison,
}

fn randomize(data: &Dataset, features: &[usize], seed: u64) -> Result<Dataset> {
    let mut out = data.clone();
    for &j in features {
        let name = data.feature_names()[j].clone();
        out = out.randomize_feature(&name, seed)?;
    }
    Ok(out)
}

/// The four-way battery: the significance test plus three comparisons that
/// separate a real contribution of the dropped features from the effect of
/// merely offering the trees extra random columns.
pub fn randomization_battery(
    data: &Dataset,
    reduced: &FeatureSet,
    points: &[PredictionPoint],
    cfg: &SignificanceConfig,
    seed: u64,
) -> Result<Vec<BatteryEntry>> {
    let dropped = reduced.complement(data.d());
    let first_random = randomize(data, &dropped, rng::derive(seed, &[label::PERMUTE, 1]))?;
    let second_random = randomize(data, &dropped, rng::derive(seed, &[label::PERMUTE, 2]))?;
    let all = FeatureSet::all(data.d());
    let full = Arm {
        data,
        features: &all,
    };
    let reduced_arm = Arm {
        data,
        features: reduced,
    };
    let random1 = Arm {
        data: &first_random,
        features: &all,
    };
    let random2 = Arm {
        data: &second_random,
        features: &all,
    };
    let kernel = TreeKernel(cfg.ensemble.tree);
    BatteryTest::ALL
        .iter()
        .map(|&test| {
            let (a, b) = match test {
                BatteryTest::FullVsReduced => (full, reduced_arm),
                BatteryTest::FullVsRandomized => (full, random1),
                BatteryTest::RandomizedVsReduced => (random1, reduced_arm),
                BatteryTest::RandomizedVsRandomized => (random1, random2),
            };
            Ok(BatteryEntry {
                test,
                label: test.label().to_string(),
                comparison: compare_arms(a, b, points, cfg, &kernel)?,
            })
        })
        .collect()
}
