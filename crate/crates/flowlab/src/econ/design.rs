//! Regression design: response, named regressors, fixed-effect and cluster
//! factors, and the (entity, time) observation index.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::collections::HashMap;

/// A categorical dimension over the observations, with dense level ids.
#[derive(Debug, Clone)]
pub struct Factor {
    pub name: String,
    /// Per-observation level in 0..n_levels.
    pub levels: Vec<u32>,
    pub n_levels: usize,
}

impl Factor {
    /// Intern arbitrary hashable keys into dense levels, first-seen order.
    pub fn from_keys<K: std::hash::Hash + Eq, I: IntoIterator<Item = K>>(
        name: &str,
        keys: I,
    ) -> Self {
        let mut map: HashMap<K, u32> = HashMap::new();
        let mut levels = Vec::new();
        for k in keys {
            let next = map.len() as u32;
            let id = *map.entry(k).or_insert(next);
            levels.push(id);
        }
        Factor {
            name: name.to_string(),
            levels,
            n_levels: map.len(),
        }
    }

    /// Interaction of two factors: one level per observed (a, b) pair.
    pub fn interact(name: &str, a: &Factor, b: &Factor) -> Self {
        assert_eq!(a.levels.len(), b.levels.len());
        Factor::from_keys(
            name,
            a.levels.iter().zip(&b.levels).map(|(&x, &y)| (x, y)),
        )
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_levels];
        for &l in &self.levels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// A fully assembled regression problem. Observations are expected in
/// canonical (entity, time) sort order; `validate` enforces shape and
/// finiteness, the estimators enforce rank.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    /// N x K regressor matrix.
    pub x: Array2<f64>,
    pub names: Vec<String>,
    /// 0, 1, or 2 fixed-effect dimensions to absorb.
    pub fe: Vec<Factor>,
    /// 0, 1, or 2 cluster dimensions for the covariance.
    pub clusters: Vec<Factor>,
}

impl Design {
    pub fn new(y: Vec<f64>, x: Array2<f64>, names: Vec<String>) -> Self {
        Design {
            y,
            x,
            names,
            fe: Vec::new(),
            clusters: Vec::new(),
        }
    }

    pub fn with_fe(mut self, f: Factor) -> Self {
        self.fe.push(f);
        self
    }

    pub fn with_cluster(mut self, f: Factor) -> Self {
        self.clusters.push(f);
        self
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Estimation("design has no observations".into()));
        }
        if self.x.nrows() != n {
            return Err(Error::Estimation(format!(
                "regressor matrix has {} rows for {} observations",
                self.x.nrows(),
                n
            )));
        }
        if self.names.len() != self.x.ncols() {
            return Err(Error::Estimation(format!(
                "{} column names for {} regressors",
                self.names.len(),
                self.x.ncols()
            )));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for name in &self.names {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Estimation(format!(
                        "duplicate regressor name `{name}`"
                    )));
                }
            }
        }
        if self.fe.len() > 2 {
            return Err(Error::Estimation(
                "at most two fixed-effect dimensions are supported".into(),
            ));
        }
        if self.clusters.len() > 2 {
            return Err(Error::Estimation(
                "at most two cluster dimensions are supported".into(),
            ));
        }
        for v in self.y.iter().chain(self.x.iter()) {
            if !v.is_finite() {
                return Err(Error::Estimation(
                    "design contains non-finite values".into(),
                ));
            }
        }
        for f in self.fe.iter().chain(self.clusters.iter()) {
            if f.levels.len() != n {
                return Err(Error::Estimation(format!(
                    "factor `{}` has {} labels for {} observations",
                    f.name,
                    f.levels.len(),
                    n
                )));
            }
        }
        for c in &self.clusters {
            if c.n_levels < 2 {
                return Err(Error::Estimation(format!(
                    "cluster dimension `{}` has fewer than 2 groups",
                    c.name
                )));
            }
        }
        Ok(())
    }
}
