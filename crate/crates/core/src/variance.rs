//! Variance components of an incomplete, infinite-order U-statistic.
//!
//! `zeta1` is the covariance between kernel outputs on two subsamples sharing
//! one observation; it is estimated as the variance, across fixed points, of
//! Monte Carlo averages over subsamples forced to contain that point.
//! `zetakk` is the variance of a single kernel output. The variance of the
//! ensemble prediction is `(k^2 / n) zeta1 + zetakk / m`.
//!
//! Estimation is "external" when the components come from extra trees grown
//! for the purpose, and "internal" when the ensemble itself is built from a
//! fixed-point plan and its own trees supply everything.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionPoint};
use crate::ensemble::{build_with, EnsembleConfig, EnsemblePrediction};
use crate::error::{Error, Result};
use crate::kernel::{FeatureSet, Kernel};
use crate::linalg::{self, Matrix};
use crate::rng::{self, label};
use crate::subsampling::{SubsamplePlan, SubsampleScheme};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub zeta1: f64,
    pub zetakk: f64,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub n_z: usize,
    pub n_mc: usize,
    /// `n / m`.
    pub alpha_hat: f64,
}

impl VarianceEstimate {
    pub fn new(zeta1: f64, zetakk: f64, params: SamplingParams, n_z: usize, n_mc: usize) -> Self {
        VarianceEstimate {
            zeta1,
            zetakk,
            n: params.n,
            k: params.k,
            m: params.m,
            n_z,
            n_mc,
            alpha_hat: params.n as f64 / params.m as f64,
        }
    }
}

/// Sizes of the ensemble whose prediction variance is being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
}

impl SamplingParams {
    fn zeta1_weight(&self) -> f64 {
        let k = self.k as f64;
        k * k / self.n as f64
    }

    fn zetakk_weight(&self) -> f64 {
        1.0 / self.m as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub sigma1: Matrix,
    pub sigmakk: Matrix,
    /// `(k^2 / n) sigma1 + sigmakk / m`.
    pub combined: Matrix,
}

/// Variance of the group means (denominator `n_z - 1`).
pub fn estimate_zeta1<G: AsRef<[f64]>>(groups: &[G]) -> Result<f64> {
    if groups.len() < 2 {
        return Err(Error::invalid(
            "zeta1 needs at least two fixed-point groups",
        ));
    }
    let means = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            if g.is_empty() {
                Err(Error::invalid("empty fixed-point group"))
            } else {
                Ok(linalg::mean(g))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(linalg::sample_variance(&means))
}

/// Sample variance of individual kernel outputs.
pub fn estimate_zetakk(predictions: &[f64]) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::invalid("zetakk needs at least two predictions"));
    }
    Ok(linalg::sample_variance(predictions))
}

/// Multivariate analogue of the two estimators: `grouped` holds one
/// `n_mc x N` block per fixed point, `all` is `m' x N`.
pub fn estimate_sigma(
    grouped: &[Matrix],
    all: &Matrix,
    params: SamplingParams,
) -> Result<CovarianceEstimate> {
    if grouped.len() < 2 {
        return Err(Error::invalid(
            "sigma1 needs at least two fixed-point groups",
        ));
    }
    if all.rows() < 2 {
        return Err(Error::invalid("sigmakk needs at least two rows"));
    }
    let width = all.cols();
    if width == 0 {
        return Err(Error::invalid("difference rows must be non-empty"));
    }
    let mut means = Vec::with_capacity(grouped.len());
    for g in grouped {
        if g.cols() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: g.cols(),
            });
        }
        if g.rows() == 0 {
            return Err(Error::invalid("empty fixed-point group"));
        }
        means.push(g.column_means());
    }
    let sigma1 = Matrix::from_rows(&means).covariance();
    let sigmakk = all.covariance();
    let combined = sigma1
        .scaled(params.zeta1_weight())
        .add(&sigmakk.scaled(params.zetakk_weight()));
    Ok(CovarianceEstimate {
        sigma1,
        sigmakk,
        combined,
    })
}

/// Variance of the ensemble prediction: `(k^2 / n) zeta1 + zetakk / m`.
pub fn ensemble_variance(est: &VarianceEstimate) -> f64 {
    let params = SamplingParams {
        n: est.n,
        k: est.k,
        m: est.m,
    };
    params.zeta1_weight() * est.zeta1 + params.zetakk_weight() * est.zetakk
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum VarianceMethod {
    /// Extra trees: `n_z x n_mc` fixed-point trees for `zeta1` and `n_kk`
    /// uniform trees for `zetakk`. The ensemble plan must be uniform.
    External {
        n_z: usize,
        n_mc: usize,
        n_kk: usize,
    },
    /// The ensemble's own fixed-point plan supplies every estimate.
    Internal,
}

impl VarianceMethod {
    pub fn validate(&self, plan: &SubsamplePlan) -> Result<()> {
        match (self, &plan.scheme) {
            (VarianceMethod::External { n_z, n_mc, n_kk }, SubsampleScheme::Uniform { .. }) => {
                if *n_z < 2 || *n_mc < 1 || *n_kk < 2 {
                    return Err(Error::invalid(
                        "external estimation needs n_z >= 2, n_mc >= 1, n_kk >= 2",
                    ));
                }
                if *n_z > plan.n {
                    return Err(Error::invalid("n_z exceeds the number of observations"));
                }
                Ok(())
            }
            (VarianceMethod::Internal, SubsampleScheme::FixedPoint { .. }) => Ok(()),
            (VarianceMethod::External { .. }, _) => Err(Error::invalid(
                "external estimation requires a uniform ensemble plan",
            )),
            (VarianceMethod::Internal, _) => Err(Error::invalid(
                "internal estimation requires a fixed-point ensemble plan",
            )),
        }
    }
}

/// Configurations of the auxiliary ensembles used by external estimation.
/// Their streams are derived from, but independent of, the main ensemble's.
pub(crate) fn auxiliary_configs(
    cfg: &EnsembleConfig,
    n_z: usize,
    n_mc: usize,
    n_kk: usize,
) -> (EnsembleConfig, EnsembleConfig) {
    let plan = &cfg.plan;
    let zeta1 = EnsembleConfig {
        plan: SubsamplePlan::fixed_point(
            plan.n,
            plan.k,
            n_z,
            n_mc,
            rng::derive(plan.seed, &[label::ZETA1]),
        ),
        tree: cfg.tree,
        seed: rng::derive(cfg.seed, &[label::ZETA1]),
    };
    let zetakk = EnsembleConfig {
        plan: SubsamplePlan::uniform(
            plan.n,
            plan.k,
            n_kk,
            rng::derive(plan.seed, &[label::ZETAKK]),
        ),
        tree: cfg.tree,
        seed: rng::derive(cfg.seed, &[label::ZETAKK]),
    };
    (zeta1, zetakk)
}

/// Per-point estimates from a grouped (fixed-point) ensemble.
pub fn estimate_internal(
    pred: &EnsemblePrediction,
    n: usize,
    k: usize,
) -> Result<Vec<VarianceEstimate>> {
    let g = pred
        .groups
        .as_ref()
        .ok_or_else(|| Error::invalid("internal estimation needs a grouped ensemble"))?;
    let params = SamplingParams { n, k, m: pred.m() };
    (0..pred.points.len())
        .map(|i| {
            let zeta1 = estimate_zeta1(&pred.grouped_predictions(i).expect("grouped"))?;
            let zetakk = estimate_zetakk(&pred.tree_predictions(i))?;
            Ok(VarianceEstimate::new(zeta1, zetakk, params, g.n_z, g.n_mc))
        })
        .collect()
}

/// Per-point estimates from auxiliary ensembles, for the ensemble described by `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_external(
    data: &Dataset,
    cfg: &EnsembleConfig,
    kernel: &dyn Kernel,
    features: &FeatureSet,
    points: &[PredictionPoint],
    n_z: usize,
    n_mc: usize,
    n_kk: usize,
) -> Result<Vec<VarianceEstimate>> {
    let (zeta1_cfg, zetakk_cfg) = auxiliary_configs(cfg, n_z, n_mc, n_kk);
    let grouped = build_with(data, &zeta1_cfg, kernel, features, points)?;
    let single = build_with(data, &zetakk_cfg, kernel, features, points)?;
    let params = SamplingParams {
        n: cfg.plan.n,
        k: cfg.plan.k,
        m: cfg.m(),
    };
    (0..points.len())
        .map(|i| {
            let zeta1 = estimate_zeta1(&grouped.grouped_predictions(i).expect("grouped"))?;
            let zetakk = estimate_zetakk(&single.tree_predictions(i))?;
            Ok(VarianceEstimate::new(zeta1, zetakk, params, n_z, n_mc))
        })
        .collect()
}

/// Builds the ensemble and estimates the variance of its prediction at every point.
pub fn fit_with_variance(
    data: &Dataset,
    cfg: &EnsembleConfig,
    kernel: &dyn Kernel,
    points: &[PredictionPoint],
    method: VarianceMethod,
) -> Result<(EnsemblePrediction, Vec<VarianceEstimate>)> {
    method.validate(&cfg.plan)?;
    let features = FeatureSet::all(data.d());
    let pred = build_with(data, cfg, kernel, &features, points)?;
    let estimates = match method {
        VarianceMethod::Internal => estimate_internal(&pred, data.n(), cfg.k())?,
        VarianceMethod::External { n_z, n_mc, n_kk } => {
            estimate_external(data, cfg, kernel, &features, points, n_z, n_mc, n_kk)?
        }
    };
    Ok((pred, estimates))
}
