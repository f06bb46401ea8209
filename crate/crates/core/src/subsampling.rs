//! Index-set generation for the two sampling regimes.
//!
//! Index sets are drawn without replacement inside a set, and sets are drawn
//! independently of each other (so a set may repeat). Set `j` is generated
//! from its own keyed stream, which lets ensembles materialize sets lazily and
//! in any order.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubsampleScheme {
    /// `m` uniform draws.
    Uniform { m: usize },
    /// `n_z` groups of `n_mc` draws, each forced to contain the group's fixed point.
    FixedPoint { n_z: usize, n_mc: usize },
    /// Caller-supplied index sets, used as given.
    Explicit { sets: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePlan {
    #[serde(flatten)]
    pub scheme: SubsampleScheme,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

impl SubsamplePlan {
    pub fn uniform(n: usize, k: usize, m: usize, seed: u64) -> Self {
        SubsamplePlan {
            scheme: SubsampleScheme::Uniform { m },
            k,
            n,
            seed,
        }
    }

    pub fn fixed_point(n: usize, k: usize, n_z: usize, n_mc: usize, seed: u64) -> Self {
        SubsamplePlan {
            scheme: SubsampleScheme::FixedPoint { n_z, n_mc },
            k,
            n,
            seed,
        }
    }

    /// Every size-`k` subset of `0..n` once, in lexicographic order.
    pub fn all_subsets(n: usize, k: usize) -> Self {
        SubsamplePlan {
            scheme: SubsampleScheme::Explicit {
                sets: combinations(n, k),
            },
            k,
            n,
            seed: 0,
        }
    }

    /// Total number of index sets (`m`).
    pub fn m(&self) -> usize {
        match &self.scheme {
            SubsampleScheme::Uniform { m } => *m,
            SubsampleScheme::FixedPoint { n_z, n_mc } => n_z * n_mc,
            SubsampleScheme::Explicit { sets } => sets.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k > self.n {
            return Err(Error::invalid(format!(
                "subsample size k={} must lie in [1, n={}]",
                self.k, self.n
            )));
        }
        match &self.scheme {
            SubsampleScheme::Uniform { m } => {
                if *m < 1 {
                    return Err(Error::invalid("m must be at least 1"));
                }
            }
            SubsampleScheme::FixedPoint { n_z, n_mc } => {
                if *n_z < 2 {
                    return Err(Error::invalid("n_z must be at least 2"));
                }
                if *n_z > self.n {
                    return Err(Error::invalid(format!(
                        "n_z={} exceeds the number of observations n={}",
                        n_z, self.n
                    )));
                }
                if *n_mc < 1 {
                    return Err(Error::invalid("n_mc must be at least 1"));
                }
            }
            SubsampleScheme::Explicit { sets } => {
                if sets.is_empty() {
                    return Err(Error::invalid("explicit plan has no index sets"));
                }
                for set in sets {
                    let mut s = set.clone();
                    s.sort_unstable();
                    s.dedup();
                    if s.len() != self.k || s.last().is_some_and(|&i| i >= self.n) {
                        return Err(Error::invalid(
                            "explicit index sets must hold k distinct indices below n",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// The conditioning observations of a fixed-point plan, in group order.
    pub fn fixed_points(&self) -> Option<Vec<usize>> {
        match self.scheme {
            SubsampleScheme::FixedPoint { n_z, .. } => {
                let mut rng = rng::stream(self.seed, &[label::FIXED_POINTS]);
                Some(index::sample(&mut rng, self.n, n_z).into_vec())
            }
            _ => None,
        }
    }

    pub fn sampler(&self) -> Result<Sampler<'_>> {
        self.validate()?;
        Ok(Sampler {
            fixed: self.fixed_points(),
            plan: self,
        })
    }
}

/// Materializes the index sets of a validated plan.
pub struct Sampler<'a> {
    plan: &'a SubsamplePlan,
    fixed: Option<Vec<usize>>,
}

impl Sampler<'_> {
    pub fn m(&self) -> usize {
        self.plan.m()
    }

    /// Index set `j` (sorted ascending).
    pub fn set(&self, j: usize) -> Vec<usize> {
        let plan = self.plan;
        let mut set = match &plan.scheme {
            SubsampleScheme::Uniform { .. } => {
                let mut rng = rng::stream(plan.seed, &[label::SUBSAMPLE, j as u64]);
                index::sample(&mut rng, plan.n, plan.k).into_vec()
            }
            SubsampleScheme::FixedPoint { n_mc, .. } => {
                let z = self.fixed.as_ref().expect("fixed points")[j / n_mc];
                let mut rng = rng::stream(plan.seed, &[label::SUBSAMPLE, j as u64]);
                let mut set: Vec<usize> = index::sample(&mut rng, plan.n - 1, plan.k - 1)
                    .into_iter()
                    .map(|i| if i >= z { i + 1 } else { i })
                    .collect();
                set.push(z);
                set
            }
            SubsampleScheme::Explicit { sets } => sets[j].clone(),
        };
        set.sort_unstable();
        set
    }
}

/// `m` independent size-`k` subsets of `0..n`.
pub fn draw_uniform(plan: &SubsamplePlan) -> Result<Vec<Vec<usize>>> {
    if !matches!(plan.scheme, SubsampleScheme::Uniform { .. }) {
        return Err(Error::invalid("draw_uniform needs a uniform plan"));
    }
    let sampler = plan.sampler()?;
    Ok((0..sampler.m()).map(|j| sampler.set(j)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointGroup {
    pub fixed: usize,
    pub sets: Vec<Vec<usize>>,
}

/// `n_z` groups; every set in group `i` contains that group's fixed point.
pub fn draw_fixed_point(plan: &SubsamplePlan) -> Result<Vec<FixedPointGroup>> {
    let SubsampleScheme::FixedPoint { n_z, n_mc } = plan.scheme else {
        return Err(Error::invalid("draw_fixed_point needs a fixed-point plan"));
    };
    let sampler = plan.sampler()?;
    let fixed = sampler.fixed.clone().expect("fixed points");
    Ok((0..n_z)
        .map(|g| FixedPointGroup {
            fixed: fixed[g],
            sets: (0..n_mc).map(|t| sampler.set(g * n_mc + t)).collect(),
        })
        .collect())
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(pos) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return out;
        };
        current[pos] += 1;
        for i in pos + 1..k {
            current[i] = current[i - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn k_equals_n_takes_everything() {
        let sets = draw_uniform(&SubsamplePlan::uniform(5, 5, 7, 1)).unwrap();
        assert_eq!(sets.len(), 7);
        assert!(sets.iter().all(|s| s == &vec![0, 1, 2, 3, 4]));
    }

    #[test]
    fn uniform_sets_have_distinct_members() {
        let sets = draw_uniform(&SubsamplePlan::uniform(4, 2, 10, 3)).unwrap();
        assert_eq!(sets.len(), 10);
        for s in &sets {
            assert_eq!(s.len(), 2);
            assert!(s[0] < s[1] && s[1] < 4);
        }
    }

    #[test]
    fn uniform_pair_frequencies() {
        let sets = draw_uniform(&SubsamplePlan::uniform(5, 2, 100_000, 5)).unwrap();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for s in sets {
            *counts.entry(s).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        for (pair, c) in counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.1).abs() < 0.01, "{pair:?}: {freq}");
        }
    }

    #[test]
    fn fixed_point_groups_contain_their_point() {
        let plan = SubsamplePlan::fixed_point(30, 6, 10, 20, 8);
        let groups = draw_fixed_point(&plan).unwrap();
        assert_eq!(groups.len(), 10);
        let mut fixed: Vec<usize> = groups.iter().map(|g| g.fixed).collect();
        fixed.sort_unstable();
        fixed.dedup();
        assert_eq!(fixed.len(), 10, "fixed points are distinct");
        for g in &groups {
            assert_eq!(g.sets.len(), 20);
            for s in &g.sets {
                assert!(s.contains(&g.fixed));
                let mut u = s.clone();
                u.dedup();
                assert_eq!(u.len(), 6);
                assert!(u.iter().all(|&i| i < 30));
            }
        }
    }

    #[test]
    fn fixed_point_edge_sizes() {
        let groups = draw_fixed_point(&SubsamplePlan::fixed_point(10, 1, 3, 4, 2)).unwrap();
        for g in groups {
            assert!(g.sets.iter().all(|s| s == &vec![g.fixed]));
        }
        let groups = draw_fixed_point(&SubsamplePlan::fixed_point(3, 3, 2, 4, 2)).unwrap();
        for g in groups {
            assert!(g.sets.iter().all(|s| s == &vec![0, 1, 2]));
        }
    }

    #[test]
    fn invalid_plans() {
        assert!(draw_uniform(&SubsamplePlan::uniform(3, 4, 1, 0)).is_err());
        assert!(draw_fixed_point(&SubsamplePlan::fixed_point(3, 2, 4, 1, 0)).is_err());
        assert!(draw_fixed_point(&SubsamplePlan::fixed_point(3, 2, 1, 1, 0)).is_err());
        assert!(draw_fixed_point(&SubsamplePlan::uniform(3, 2, 1, 0)).is_err());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(4, 2)[0], vec![0, 1]);
        assert_eq!(combinations(4, 2)[5], vec![2, 3]);
    }

    #[test]
    fn deterministic_under_seed() {
        let plan = SubsamplePlan::fixed_point(50, 7, 5, 5, 99);
        assert_eq!(
            draw_fixed_point(&plan).unwrap(),
            draw_fixed_point(&plan).unwrap()
        );
    }
}
