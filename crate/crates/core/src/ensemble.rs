//! Subsampled ensembles: one kernel evaluation per index set, averaged.
//!
//! Subbagging and the subsampled random forest share this pipeline; the forest
//! is simply a tree kernel with `mtry` below the number of features. With a
//! fixed-point plan the per-tree predictions keep their group structure, so the
//! same trees yield the prediction and both variance components.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionPoint};
use crate::error::{Error, Result};
use crate::kernel::{FeatureSet, Kernel, TreeKernel};
use crate::linalg::Matrix;
use crate::rng::{self, label};
use crate::subsampling::{SubsamplePlan, SubsampleScheme};
use crate::tree::TreeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub plan: SubsamplePlan,
    pub tree: TreeConfig,
    /// Root of the per-tree randomization streams.
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn k(&self) -> usize {
        self.plan.k
    }

    pub fn m(&self) -> usize {
        self.plan.m()
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.plan.n != data.n() {
            return Err(Error::invalid(format!(
                "plan is for n={} but the data has {} rows",
                self.plan.n,
                data.n()
            )));
        }
        self.plan.validate()?;
        self.tree.validate(data.d())?;
        let n = data.n() as f64;
        if self.plan.k as f64 > 3.0 * n.sqrt() {
            log::warn!(
                "subsample size k={} is large relative to sqrt(n)={:.1}; normal limits may not apply",
                self.plan.k,
                n.sqrt()
            );
        }
        Ok(())
    }

    /// Seed of tree `j`'s randomization stream.
    pub fn omega_seed(&self, j: usize) -> u64 {
        rng::derive(self.seed, &[label::OMEGA, j as u64])
    }
}

/// Default subsample size: a little above `sqrt(n)`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize + 10).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub n_z: usize,
    pub n_mc: usize,
    pub fixed_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub points: Vec<PredictionPoint>,
    /// Mean prediction per point.
    pub theta_hat: Vec<f64>,
    /// `m x N`: row `j` holds tree `j`'s predictions at every point.
    pub per_tree: Matrix,
    /// Present iff the ensemble was built from a fixed-point plan; rows
    /// `g * n_mc .. (g + 1) * n_mc` belong to group `g`.
    pub groups: Option<Grouping>,
}

impl EnsemblePrediction {
    fn from_matrix(points: Vec<PredictionPoint>, per_tree: Matrix, plan: &SubsamplePlan) -> Self {
        let groups = match plan.scheme {
            SubsampleScheme::FixedPoint { n_z, n_mc } => Some(Grouping {
                n_z,
                n_mc,
                fixed_points: plan.fixed_points().expect("fixed-point plan"),
            }),
            _ => None,
        };
        EnsemblePrediction {
            points,
            theta_hat: per_tree.column_means(),
            per_tree,
            groups,
        }
    }

    pub fn m(&self) -> usize {
        self.per_tree.rows()
    }

    /// Tree predictions at point `i`.
    pub fn tree_predictions(&self, i: usize) -> Vec<f64> {
        self.per_tree.column(i)
    }

    /// Per-group predictions at point `i`, when grouped.
    pub fn grouped_predictions(&self, i: usize) -> Option<Vec<Vec<f64>>> {
        let g = self.groups.as_ref()?;
        Some(
            (0..g.n_z)
                .map(|z| {
                    (0..g.n_mc)
                        .map(|t| self.per_tree.get(z * g.n_mc + t, i))
                        .collect()
                })
                .collect(),
        )
    }
}

fn check_points(data: &Dataset, points: &[PredictionPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("at least one prediction point is required"));
    }
    points.iter().try_for_each(|p| p.check_dim(data.d()))
}

/// Builds a tree ensemble on all features.
pub fn build(
    data: &Dataset,
    cfg: &EnsembleConfig,
    points: &[PredictionPoint],
) -> Result<EnsemblePrediction> {
    build_with(
        data,
        cfg,
        &TreeKernel(cfg.tree),
        &FeatureSet::all(data.d()),
        points,
    )
}

/// Builds an ensemble of an arbitrary kernel restricted to `features`.
pub fn build_with(
    data: &Dataset,
    cfg: &EnsembleConfig,
    kernel: &dyn Kernel,
    features: &FeatureSet,
    points: &[PredictionPoint],
) -> Result<EnsemblePrediction> {
    cfg.validate(data)?;
    check_points(data, points)?;
    let sampler = cfg.plan.sampler()?;
    let n_points = points.len();
    let mut per_tree = Matrix::zeros(sampler.m(), n_points);
    per_tree
        .as_mut_slice()
        .par_chunks_mut(n_points)
        .enumerate()
        .try_for_each(|(j, out)| {
            let rows = sampler.set(j);
            kernel.evaluate(data, &rows, features, cfg.omega_seed(j), points, out)
        })?;
    Ok(EnsemblePrediction::from_matrix(
        points.to_vec(),
        per_tree,
        &cfg.plan,
    ))
}

/// One side of a paired comparison: a training set and the features its
/// kernels may use.
#[derive(Debug, Clone, Copy)]
pub struct Arm<'a> {
    pub data: &'a Dataset,
    pub features: &'a FeatureSet,
}

/// Builds two ensembles over byte-identical index sets and randomization seeds.
pub fn build_paired(
    first: Arm<'_>,
    second: Arm<'_>,
    cfg: &EnsembleConfig,
    kernel: &dyn Kernel,
    points: &[PredictionPoint],
) -> Result<(EnsemblePrediction, EnsemblePrediction)> {
    if first.data.n() != second.data.n() || first.data.d() != second.data.d() {
        return Err(Error::invalid(
            "paired ensembles need datasets of identical shape",
        ));
    }
    cfg.validate(first.data)?;
    check_points(first.data, points)?;
    let sampler = cfg.plan.sampler()?;
    let n_points = points.len();
    let m = sampler.m();
    let mut a = Matrix::zeros(m, n_points);
    let mut b = Matrix::zeros(m, n_points);
    a.as_mut_slice()
        .par_chunks_mut(n_points)
        .zip(b.as_mut_slice().par_chunks_mut(n_points))
        .enumerate()
        .try_for_each(|(j, (out_a, out_b))| {
            let rows = sampler.set(j);
            let omega = cfg.omega_seed(j);
            kernel.evaluate(first.data, &rows, first.features, omega, points, out_a)?;
            kernel.evaluate(second.data, &rows, second.features, omega, points, out_b)
        })?;
    Ok((
        EnsemblePrediction::from_matrix(points.to_vec(), a, &cfg.plan),
        EnsemblePrediction::from_matrix(points.to_vec(), b, &cfg.plan),
    ))
}

/// Full-feature and reduced-feature tree ensembles sharing their subsamples.
pub fn predict_full_and_reduced(
    data: &Dataset,
    cfg: &EnsembleConfig,
    reduced: &FeatureSet,
    points: &[PredictionPoint],
) -> Result<(EnsemblePrediction, EnsemblePrediction)> {
    if reduced.indices().last().is_some_and(|&j| j >= data.d()) {
        return Err(Error::invalid("reduced feature index out of range"));
    }
    let full = FeatureSet::all(data.d());
    build_paired(
        Arm {
            data,
            features: &full,
        },
        Arm {
            data,
            features: reduced,
        },
        cfg,
        &TreeKernel(cfg.tree),
        points,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GeneratorKind, GeneratorSpec};

    fn cfg(n: usize, k: usize, m: usize) -> EnsembleConfig {
        EnsembleConfig {
            plan: SubsamplePlan::uniform(n, k, m, 1),
            tree: TreeConfig::default(),
            seed: 2,
        }
    }

    #[test]
    fn constant_response_gives_constant_predictions() {
        let rows = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let data = Dataset::new(rows, vec![7.0; 40], vec!["a".into(), "b".into()]).unwrap();
        let pts = vec![
            PredictionPoint(vec![3.0, 1.0]),
            PredictionPoint(vec![30.0, 0.0]),
        ];
        let pred = build(&data, &cfg(40, 8, 25), &pts).unwrap();
        assert_eq!(pred.theta_hat, vec![7.0, 7.0]);
        assert!(pred.per_tree.as_slice().iter().all(|&v| v == 7.0));
        assert!(pred.groups.is_none());
    }

    #[test]
    fn theta_hat_is_column_mean() {
        let data = generate(&GeneratorSpec::new(GeneratorKind::Mars, 100, 4)).unwrap();
        let pts = vec![PredictionPoint(vec![0.5; 5]), PredictionPoint(vec![0.2; 5])];
        let pred = build(&data, &cfg(100, 20, 50), &pts).unwrap();
        for i in 0..2 {
            let col = pred.tree_predictions(i);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!((mean - pred.theta_hat[i]).abs() <= 1e-12 * mean.abs());
        }
    }

    #[test]
    fn grouping_present_for_fixed_point_plans() {
        let data = generate(&GeneratorSpec::new(GeneratorKind::Slr, 60, 4)).unwrap();
        let c = EnsembleConfig {
            plan: SubsamplePlan::fixed_point(60, 10, 4, 5, 3),
            tree: TreeConfig::default(),
            seed: 1,
        };
        let pred = build(&data, &c, &[PredictionPoint(vec![10.0])]).unwrap();
        let g = pred.groups.as_ref().unwrap();
        assert_eq!((g.n_z, g.n_mc, g.fixed_points.len()), (4, 5, 4));
        assert_eq!(pred.m(), 20);
        let grouped = pred.grouped_predictions(0).unwrap();
        assert_eq!(grouped.len(), 4);
        assert_eq!(grouped[1][2], pred.per_tree.get(7, 0));
    }

    #[test]
    fn full_equals_reduced_when_nothing_dropped() {
        let data = generate(&GeneratorSpec::new(GeneratorKind::Mars, 80, 4)).unwrap();
        let pts = vec![PredictionPoint(vec![0.5; 5])];
        let mut c = cfg(80, 15, 30);
        c.tree.mtry = Some(3);
        let (full, reduced) =
            predict_full_and_reduced(&data, &c, &FeatureSet::all(5), &pts).unwrap();
        assert_eq!(full, reduced);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = generate(&GeneratorSpec::new(GeneratorKind::Slr, 20, 4)).unwrap();
        assert!(build(&data, &cfg(20, 5, 3), &[]).is_err());
        assert!(build(&data, &cfg(20, 5, 3), &[PredictionPoint(vec![1.0, 2.0])]).is_err());
        assert!(build(&data, &cfg(21, 5, 3), &[PredictionPoint(vec![1.0])]).is_err());
        assert!(build(&data, &cfg(20, 21, 3), &[PredictionPoint(vec![1.0])]).is_err());
    }

    #[test]
    fn default_k_is_a_bit_above_sqrt_n() {
        assert_eq!(default_k(200), 25);
        assert_eq!(default_k(1000), 42);
        assert_eq!(default_k(4), 4);
    }
}
