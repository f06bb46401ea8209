//! The per-subsample estimator averaged by an ensemble.
//!
//! [`TreeKernel`] is the regression tree used everywhere in practice.
//! [`MeanKernel`] replaces the tree by a subsample mean whose variance
//! components are known in closed form; it is used to check the variance
//! estimators and the test statistics against exact answers.

use crate::dataset::{Dataset, PredictionPoint};
use crate::error::{Error, Result};
use crate::tree::{fit_rows, TreeConfig};

/// Ascending, distinct column indices a kernel may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet(Vec<usize>);

impl FeatureSet {
    pub fn all(d: usize) -> Self {
        FeatureSet((0..d).collect())
    }

    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::invalid("feature set must not be empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= d) {
            return Err(Error::invalid(format!("feature index {bad} out of range")));
        }
        Ok(FeatureSet(indices))
    }

    pub fn from_names<S: AsRef<str>>(data: &Dataset, names: &[S]) -> Result<Self> {
        let indices = names
            .iter()
            .map(|n| data.feature_index(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(indices, data.d())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    /// Features of `0..d` not in this set.
    pub fn complement(&self, d: usize) -> Vec<usize> {
        (0..d).filter(|&j| !self.contains(j)).collect()
    }
}

pub trait Kernel: Sync {
    /// Writes the kernel's prediction at every point into `out`.
    fn evaluate(
        &self,
        data: &Dataset,
        rows: &[usize],
        features: &FeatureSet,
        omega_seed: u64,
        points: &[PredictionPoint],
        out: &mut [f64],
    ) -> Result<()>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TreeKernel(pub TreeConfig);

impl Kernel for TreeKernel {
    fn evaluate(
        &self,
        data: &Dataset,
        rows: &[usize],
        features: &FeatureSet,
        omega_seed: u64,
        points: &[PredictionPoint],
        out: &mut [f64],
    ) -> Result<()> {
        let mut config = self.0;
        config.mtry = config.mtry.map(|m| m.min(features.len()));
        let tree = fit_rows(data, rows, features.indices(), &config, omega_seed)?;
        for (o, p) in out.iter_mut().zip(points) {
            *o = tree.predict_unchecked(p.coords());
        }
        Ok(())
    }
}

/// Subsample mean of the response, optionally weighted by a linear feature
/// contrast.
///
/// With `contrast_center = Some(c)` the prediction at `x` is
/// `mean_i y_i * (1 + sum_{j in features} (x_ij - c) * x_j)`, which makes the
/// kernel depend on the allowed features while staying a symmetric function of
/// the subsample. When a dropped feature is independent of the response and
/// has mean `c`, full and reduced kernels have identical expectations.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanKernel {
    pub contrast_center: Option<f64>,
}

impl Kernel for MeanKernel {
    fn evaluate(
        &self,
        data: &Dataset,
        rows: &[usize],
        features: &FeatureSet,
        _omega_seed: u64,
        points: &[PredictionPoint],
        out: &mut [f64],
    ) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::EmptySample);
        }
        let y = data.response();
        let k = rows.len() as f64;
        for (o, p) in out.iter_mut().zip(points) {
            let x = p.coords();
            let total: f64 = rows
                .iter()
                .map(|&r| match self.contrast_center {
                    None => y[r],
                    Some(c) => {
                        let weight: f64 = features
                            .indices()
                            .iter()
                            .map(|&j| (data.value(r, j) - c) * x[j])
                            .sum();
                        y[r] * (1.0 + weight)
                    }
                })
                .sum();
            *o = total / k;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_normalizes() {
        let fs = FeatureSet::new(vec![2, 0, 2], 3).unwrap();
        assert_eq!(fs.indices(), &[0, 2]);
        assert_eq!(fs.complement(4), vec![1, 3]);
        assert!(FeatureSet::new(vec![], 3).is_err());
        assert!(FeatureSet::new(vec![3], 3).is_err());
    }

    #[test]
    fn mean_kernel_without_contrast_is_subsample_mean() {
        let data = Dataset::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0, 2.0, 6.0],
            vec!["x".into()],
        )
        .unwrap();
        let mut out = [0.0; 2];
        let pts = [PredictionPoint(vec![0.0]), PredictionPoint(vec![5.0])];
        MeanKernel::default()
            .evaluate(&data, &[0, 2], &FeatureSet::all(1), 0, &pts, &mut out)
            .unwrap();
        assert_eq!(out, [3.5, 3.5]);
    }
}
