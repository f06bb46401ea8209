//! Training data: the feature matrix, the response, CSV ingestion and the two
//! synthetic regression generators used by the simulation harness.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};

/// A numeric feature matrix (row-major, `n x d`) with a real response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    response: Vec<f64>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        response: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if rows.len() != response.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: response.len(),
            });
        }
        let mut features = Vec::with_capacity(rows.len() * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(features, response, feature_names)
    }

    /// Builds a dataset from a row-major feature buffer.
    pub fn from_flat(
        features: Vec<f64>,
        response: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        let n = response.len();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if d == 0 {
            return Err(Error::invalid("dataset needs at least one feature"));
        }
        if features.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: features.len(),
            });
        }
        if features.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset values must be finite"));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name `{name}`")));
            }
        }
        Ok(Dataset {
            features,
            response,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.features[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.d() + feature]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.value(i, feature)).collect()
    }

    /// The rows at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.d());
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            response: rows.iter().map(|&r| self.response[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Returns a copy with `f` applied to every response value.
    pub fn map_response(&self, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        let response = self.response.iter().map(|&y| f(y)).collect();
        Dataset::from_flat(self.features.clone(), response, self.feature_names.clone())
    }

    /// Returns a copy in which the named column is uniformly permuted.
    pub fn randomize_feature(&self, feature: &str, seed: u64) -> Result<Dataset> {
        let j = self.feature_index(feature)?;
        let mut column = self.column(j);
        column.shuffle(&mut rng::stream(seed, &[label::PERMUTE, j as u64]));
        let mut out = self.clone();
        let d = self.d();
        for (i, v) in column.into_iter().enumerate() {
            out.features[i * d + j] = v;
        }
        Ok(out)
    }

    /// `count` distinct training rows, in row order, chosen by `seed`.
    pub fn sample_points(&self, count: usize, seed: u64) -> Result<Vec<PredictionPoint>> {
        if count < 1 || count > self.n() {
            return Err(Error::invalid(format!(
                "cannot sample {count} points from {} rows",
                self.n()
            )));
        }
        let mut rows =
            rand::seq::index::sample(&mut rng::stream(seed, &[label::POINTS]), self.n(), count)
                .into_vec();
        rows.sort_unstable();
        Ok(rows.into_iter().map(|i| self.point(i)).collect())
    }

    /// Training row `i` as a prediction point.
    pub fn point(&self, i: usize) -> PredictionPoint {
        PredictionPoint(self.row(i).to_vec())
    }
}

/// A feature vector at which ensembles are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionPoint(pub Vec<f64>);

impl PredictionPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "prediction point must be non-empty and finite",
            ));
        }
        Ok(PredictionPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Reads test points, one per line, with coordinates in feature order. A
/// first line that does not parse as numbers is treated as a header. Unlike
/// [`load_csv`], malformed lines are errors rather than dropped.
pub fn load_points(path: impl AsRef<Path>, d: usize) -> Result<Vec<PredictionPoint>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(coords) => {
                let point = PredictionPoint::new(coords)?;
                point.check_dim(d)?;
                points.push(point);
            }
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::invalid(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    if points.is_empty() {
        return Err(Error::invalid(format!(
            "{} holds no points",
            path.display()
        )));
    }
    Ok(points)
}

/// Result of [`load_csv`]: the parsed data and how many rows were discarded.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub data: Dataset,
    pub dropped_rows: usize,
}

/// Reads a headered, comma-separated numeric file. Rows with an empty or
/// non-numeric cell (or the wrong number of cells) are dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let y_col = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut features = Vec::new();
    let mut response = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let parsed: Option<Vec<f64>> = if record.len() == header.len() {
            record
                .iter()
                .map(|cell| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        } else {
            None
        };
        match parsed {
            Some(values) => {
                for (i, v) in values.into_iter().enumerate() {
                    if i == y_col {
                        response.push(v);
                    } else {
                        features.push(v);
                    }
                }
            }
            None => dropped += 1,
        }
    }
    if response.is_empty() {
        return Err(Error::NoUsableRows { dropped });
    }
    Ok(CsvLoad {
        data: Dataset::from_flat(features, response, feature_names)?,
        dropped_rows: dropped,
    })
}

/// The two regression surfaces of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// `g(x1) = 2 x1` on `[0, 20]`.
    Slr,
    /// Friedman's surface `10 sin(pi x1 x2) + 20 (x3 - 0.05)^2 + 10 x4 + 5 x5` on `[0, 1]^5`.
    Mars,
}

impl GeneratorKind {
    /// Number of features the regression function depends on.
    pub fn signal_dim(self) -> usize {
        match self {
            GeneratorKind::Slr => 1,
            GeneratorKind::Mars => 5,
        }
    }

    fn domain(self) -> (f64, f64) {
        match self {
            GeneratorKind::Slr => (0.0, 20.0),
            GeneratorKind::Mars => (0.0, 1.0),
        }
    }

    /// Noiseless regression function; `x` must hold at least `signal_dim` values.
    pub fn evaluate(self, x: &[f64]) -> f64 {
        match self {
            GeneratorKind::Slr => 2.0 * x[0],
            GeneratorKind::Mars => {
                10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.05).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
        }
    }
}

pub fn default_noise_sd() -> f64 {
    10f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub extra_noise_features: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind,
            n,
            noise_sd: default_noise_sd(),
            extra_noise_features: 0,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.kind.signal_dim() + self.extra_noise_features
    }

    pub fn feature_names(&self) -> Vec<String> {
        (1..=self.d()).map(|j| format!("x{j}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("generator needs n >= 1"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Draws `spec.n` observations `y = g(x) + eps`, `eps ~ N(0, noise_sd^2)`.
/// Extra noise columns are `Uniform[0, 1]` and do not enter `g`.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &[label::DATA]);
    let signal = spec.kind.signal_dim();
    let (lo, hi) = spec.kind.domain();
    let d = spec.d();
    let mut features = Vec::with_capacity(spec.n * d);
    let mut response = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; d];
    for _ in 0..spec.n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j < signal {
                rng.random_range(lo..hi)
            } else {
                rng.random::<f64>()
            };
        }
        let eps: f64 = rng.sample(StandardNormal);
        response.push(spec.kind.evaluate(&row) + spec.noise_sd * eps);
        features.extend_from_slice(&row);
    }
    Dataset::from_flat(features, response, spec.feature_names())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_all_numeric_rows() {
        let f = write_csv("a,b,y\n1,2,1\n3,4,2\n5,6,3\n");
        let load = load_csv(f.path(), "y").unwrap();
        assert_eq!(load.data.n(), 3);
        assert_eq!(load.data.d(), 2);
        assert_eq!(load.dropped_rows, 0);
        assert_eq!(load.data.response(), &[1.0, 2.0, 3.0]);
        assert_eq!(
            load.data.feature_names(),
            &["a".to_string(), "b".to_string()]
        );
        assert_eq!(load.data.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn drops_rows_with_missing_or_bad_cells() {
        let f = write_csv("a,y\n1,1\n,2\n3,3\n");
        let load = load_csv(f.path(), "y").unwrap();
        assert_eq!(load.data.n(), 2);
        assert_eq!(load.dropped_rows, 1);

        let f = write_csv("a,y\n1,1\nx,2\n3\n");
        let load = load_csv(f.path(), "y").unwrap();
        assert_eq!(load.data.n(), 1);
        assert_eq!(load.dropped_rows, 2);
    }

    #[test]
    fn response_column_may_be_anywhere() {
        let f = write_csv("y,a\n1,10\n2,20\n3,30\n");
        let load = load_csv(f.path(), "y").unwrap();
        assert_eq!(load.data.response(), &[1.0, 2.0, 3.0]);
        assert_eq!(load.data.column(0), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn csv_errors() {
        let f = write_csv("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(Error::MissingColumn(_))
        ));
        let f = write_csv("a,y\n,1\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(Error::NoUsableRows { dropped: 1 })
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn sampled_points_are_distinct_training_rows() {
        let data = generate(&GeneratorSpec::new(GeneratorKind::Mars, 40, 3)).unwrap();
        let pts = data.sample_points(10, 8).unwrap();
        assert_eq!(pts, data.sample_points(10, 8).unwrap());
        let rows: Vec<usize> = pts
            .iter()
            .map(|p| (0..40).find(|&i| data.row(i) == p.coords()).unwrap())
            .collect();
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert!(data.sample_points(41, 8).is_err());
        assert!(data.sample_points(0, 8).is_err());
    }

    #[test]
    fn points_file_with_and_without_header() {
        let f = write_csv("x1,x2\n0.5,1\n2,3\n");
        let pts = load_points(f.path(), 2).unwrap();
        assert_eq!(
            pts,
            vec![
                PredictionPoint(vec![0.5, 1.0]),
                PredictionPoint(vec![2.0, 3.0])
            ]
        );
        let f = write_csv("1,2\n");
        assert_eq!(load_points(f.path(), 2).unwrap().len(), 1);
        assert!(matches!(
            load_points(f.path(), 3),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
        let f = write_csv("1,2\n3,oops\n");
        assert!(load_points(f.path(), 2).is_err());
        let f = write_csv("a,b\n");
        assert!(load_points(f.path(), 2).is_err());
    }

    #[test]
    fn rejects_duplicate_names_and_non_finite_values() {
        let names = vec!["a".to_string(), "a".to_string()];
        assert!(Dataset::new(vec![vec![1.0, 2.0]], vec![0.0], names).is_err());
        let names = vec!["a".to_string()];
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0.0], names).is_err());
    }

    #[test]
    fn slr_noiseless_at_ten_is_twenty() {
        assert_eq!(GeneratorKind::Slr.evaluate(&[10.0]), 20.0);
    }

    #[test]
    fn mars_closed_form_values() {
        let centre = GeneratorKind::Mars.evaluate(&[0.5; 5]);
        // 10 sin(pi/4) + 20 * 0.45^2 + 5 + 2.5
        assert!((centre - 18.6211).abs() < 1e-4);
        assert_eq!(
            GeneratorKind::Mars.evaluate(&[0.0, 0.0, 0.05, 0.0, 0.0]),
            0.0
        );
    }

    #[test]
    fn noiseless_generator_matches_g() {
        for kind in [GeneratorKind::Slr, GeneratorKind::Mars] {
            let mut spec = GeneratorSpec::new(kind, 200, 9);
            spec.noise_sd = 0.0;
            spec.extra_noise_features = 2;
            let data = generate(&spec).unwrap();
            assert_eq!(data.d(), kind.signal_dim() + 2);
            for i in 0..data.n() {
                let g = kind.evaluate(data.row(i));
                let y = data.response()[i];
                assert!((y - g).abs() <= 1e-12 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn generator_respects_domains_and_seed() {
        let mut spec = GeneratorSpec::new(GeneratorKind::Slr, 500, 3);
        spec.extra_noise_features = 1;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.column(0).iter().all(|&x| (0.0..20.0).contains(&x)));
        assert!(a.column(1).iter().all(|&x| (0.0..1.0).contains(&x)));
        spec.seed = 4;
        assert_ne!(a, generate(&spec).unwrap());
    }

    #[test]
    fn generator_noise_has_requested_variance() {
        let spec = GeneratorSpec::new(GeneratorKind::Slr, 20_000, 11);
        let data = generate(&spec).unwrap();
        let resid: Vec<f64> = (0..data.n())
            .map(|i| data.response()[i] - 2.0 * data.value(i, 0))
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var - 10.0).abs() < 0.4, "variance {var}");
    }

    #[test]
    fn randomize_feature_contracts() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let data = Dataset::new(rows, vec![0.0, 1.0, 2.0], names).unwrap();

        let constant = data.randomize_feature("b", 1).unwrap();
        assert_eq!(constant, data);

        let shuffled = data.randomize_feature("a", 42).unwrap();
        let mut col = shuffled.column(0);
        col.sort_by(f64::total_cmp);
        assert_eq!(col, vec![1.0, 2.0, 3.0]);
        assert_eq!(shuffled.column(1), data.column(1));
        assert_eq!(shuffled.response(), data.response());
        assert_eq!(shuffled, data.randomize_feature("a", 42).unwrap());
        assert_eq!(data.column(0), vec![1.0, 2.0, 3.0]);

        assert!(matches!(
            data.randomize_feature("zzz", 1),
            Err(Error::UnknownFeature(_))
        ));
    }
}
