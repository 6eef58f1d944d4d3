//! Distributed-lag regression over per-entity contiguous runs.

use crate::econ::design::{Design, Factor};
use crate::econ::ols::{ols_clustered, RegressionFit};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Minimum observations beyond the lag window for a run to enter a fit.
pub const MIN_RUN_TAIL: usize = 30;

/// One contiguous stretch of an entity's series: the driver `x` is fully
/// present; the response may have holes (those rows are dropped, the run is
/// not split). `time[t]` is the global day index used for time effects and
/// clustering.
#[derive(Debug, Clone)]
pub struct Run {
    pub entity: u32,
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
    pub time: Vec<u32>,
}

impl Run {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LagOptions {
    pub max_lag: usize,
    /// Absorb day fixed effects instead of a constant column.
    pub time_fe: bool,
    pub cluster_day: bool,
    pub cluster_entity: bool,
}

/// Regress y_t on x_t .. x_{t-S}. Observations need a complete lag window;
/// runs shorter than S + MIN_RUN_TAIL are excluded entirely. Returns the fit
/// and the column range of the lag block (lag 0 first).
pub fn distributed_lag(runs: &[Run], opts: LagOptions) -> Result<(RegressionFit, std::ops::Range<usize>)> {
    let s = opts.max_lag;
    let usable: Vec<&Run> = runs.iter().filter(|r| r.len() >= s + MIN_RUN_TAIL).collect();

    let mut rows: Vec<(usize, usize)> = Vec::new(); // (run index in usable, t)
    for (ri, run) in usable.iter().enumerate() {
        for t in s..run.len() {
            if run.y[t].is_some() {
                rows.push((ri, t));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Estimation(
            "distributed lag: no observations with a complete lag window".into(),
        ));
    }

    let n = rows.len();
    let k = s + 1 + if opts.time_fe { 0 } else { 1 };
    let mut x = Array2::<f64>::zeros((n, k));
    let mut y = Vec::with_capacity(n);
    let mut days = Vec::with_capacity(n);
    let mut entities = Vec::with_capacity(n);
    for (i, &(ri, t)) in rows.iter().enumerate() {
        let run = usable[ri];
        for lag in 0..=s {
            x[[i, lag]] = run.x[t - lag];
        }
        if !opts.time_fe {
            x[[i, s + 1]] = 1.0;
        }
        y.push(run.y[t].expect("filtered"));
        days.push(run.time[t]);
        entities.push(run.entity);
    }

    let mut names: Vec<String> = (0..=s).map(|l| format!("x_lag{l}")).collect();
    if !opts.time_fe {
        names.push("const".into());
    }
    let mut design = Design::new(y, x, names);
    if opts.time_fe {
        design = design.with_fe(Factor::from_keys("day", days.clone()));
    }
    if opts.cluster_day {
        design = design.with_cluster(Factor::from_keys("day", days.clone()));
    }
    if opts.cluster_entity {
        design = design.with_cluster(Factor::from_keys("entity", entities));
    }
    let fit = ols_clustered(design)?;
    Ok((fit, 0..s + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn kernel_runs(n_entities: usize, len: usize, noise: f64, seed: u64) -> Vec<Run> {
        // y_t = 0.664 x_t - 0.087 sum_{s=1..40} e^{-0.323(s-1)} x_{t-s} + eps
        let mut runs = Vec::new();
        for e in 0..n_entities {
            let mut rng = stream(seed, Purpose::FundFlowNoise, e as u64);
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = Vec::with_capacity(len);
            for t in 0..len {
                let mut v = 0.664 * x[t];
                for s in 1..=40usize.min(t) {
                    v += -0.087 * (-0.323 * (s as f64 - 1.0)).exp() * x[t - s];
                }
                v += noise * rng.random_range(-1.0..1.0);
                y.push(Some(v));
            }
            runs.push(Run {
                entity: e as u32,
                x,
                y,
                time: (0..len as u32).collect(),
            });
        }
        runs
    }

    #[test]
    fn noiseless_kernel_recovered_exactly() {
        let runs = kernel_runs(3, 400, 0.0, 1);
        let (fit, block) = distributed_lag(
            &runs,
            LagOptions {
                max_lag: 40,
                time_fe: false,
                cluster_day: false,
                cluster_entity: false,
            },
        )
        .unwrap();
        assert!((fit.coef[0] - 0.664).abs() < 1e-8);
        assert!((fit.coef[1] + 0.087).abs() < 1e-8);
        assert!((fit.coef[2] + 0.087 * (-0.323f64).exp()).abs() < 1e-8);
        let cums = crate::econ::cumulative_coefficients(&fit, block);
        let truth_40: f64 = 0.664
            + (1..=40)
                .map(|s| -0.087 * (-0.323 * (s as f64 - 1.0)).exp())
                .sum::<f64>();
        assert!((cums[40].0 - truth_40).abs() < 1e-7);
    }

    #[test]
    fn zero_lags_reduces_to_plain_ols() {
        let runs = kernel_runs(2, 100, 0.05, 2);
        let (fit, block) = distributed_lag(
            &runs,
            LagOptions {
                max_lag: 0,
                time_fe: false,
                cluster_day: true,
                cluster_entity: false,
            },
        )
        .unwrap();
        assert_eq!(block, 0..1);
        assert_eq!(fit.names[0], "x_lag0");
        assert_eq!(fit.names[1], "const");
        assert_eq!(fit.n_obs, 200);
    }

    #[test]
    fn short_runs_are_excluded() {
        let mut runs = kernel_runs(1, 400, 0.0, 3);
        runs.push(Run {
            entity: 9,
            x: vec![1.0; 50], // < 40 + 30
            y: vec![Some(1.0); 50],
            time: (0..50).collect(),
        });
        let (fit, _) = distributed_lag(
            &runs,
            LagOptions {
                max_lag: 40,
                time_fe: false,
                cluster_day: false,
                cluster_entity: false,
            },
        )
        .unwrap();
        assert_eq!(fit.n_obs, 400 - 40);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let runs = vec![Run {
            entity: 0,
            x: vec![1.0; 10],
            y: vec![Some(0.0); 10],
            time: (0..10).collect(),
        }];
        let err = distributed_lag(
            &runs,
            LagOptions {
                max_lag: 40,
                time_fe: false,
                cluster_day: false,
                cluster_entity: false,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("no observations"));
    }
}
