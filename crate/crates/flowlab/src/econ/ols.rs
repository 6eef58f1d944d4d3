//! Least squares with absorbed fixed effects and (up to two-way) clustered
//! covariance, plus cumulative-coefficient inference and the variance-share
//! ratio.

use crate::econ::absorb::{absorb_fixed_effects, AbsorbInfo};
use crate::econ::design::{Design, Factor};
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, Array2};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Clustered (or heteroskedasticity-robust) covariance of the
    /// coefficients, after any PSD repair.
    pub cov: Array2<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub n_obs: usize,
    /// Explicit regressors plus absorbed fixed-effect parameters.
    pub k_params: usize,
    pub r2: f64,
    pub within_r2: f64,
    pub absorb: AbsorbInfo,
    /// True when the assembled sandwich needed eigenvalue clipping beyond
    /// the -1e-12 (relative) tolerance.
    pub cov_clipped: bool,
    /// Number of groups per declared cluster dimension.
    pub cluster_groups: Vec<usize>,
    pub residuals: Vec<f64>,
}

impl RegressionFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// (estimate, se, t) for a named coefficient.
    pub fn coef_by_name(&self, name: &str) -> Option<(f64, f64, f64)> {
        let i = self.index_of(name)?;
        Some((self.coef[i], self.se[i], self.t[i]))
    }
}

// ============================================================
// Sandwich pieces
// ============================================================

/// Sum over groups g of s_g s_g' with s_g = sum_{i in g} e_i x_i.
fn cluster_meat(x: &Array2<f64>, e: &[f64], factor: &Factor) -> Array2<f64> {
    let k = x.ncols();
    let mut scores = Array2::<f64>::zeros((factor.n_levels, k));
    for (i, &l) in factor.levels.iter().enumerate() {
        let ei = e[i];
        let mut row = scores.row_mut(l as usize);
        for (r, &xij) in row.iter_mut().zip(x.row(i)) {
            *r += ei * xij;
        }
    }
    scores.t().dot(&scores)
}

/// Sum over observations of e_i^2 x_i x_i'.
fn hetero_meat(x: &Array2<f64>, e: &[f64]) -> Array2<f64> {
    let k = x.ncols();
    let mut meat = Array2::<f64>::zeros((k, k));
    for (i, &ei) in e.iter().enumerate() {
        let w = ei * ei;
        let xi = x.row(i);
        for a in 0..k {
            let wa = w * xi[a];
            for b in 0..k {
                meat[[a, b]] += wa * xi[b];
            }
        }
    }
    meat
}

fn small_sample(g: usize, n: usize, k: usize) -> f64 {
    (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / ((n - k) as f64))
}

// ============================================================
// Main estimator
// ============================================================

/// Least-squares fit with fixed effects absorbed and covariance clustered on
/// the design's declared dimensions (robust-HC when none declared).
pub fn ols_clustered(mut design: Design) -> Result<RegressionFit> {
    design.validate()?;
    let y_orig = design.y.clone();
    let absorb = absorb_fixed_effects(&mut design)?;

    let n = design.n_obs();
    let k_x = design.n_regressors();
    let k_params = k_x + absorb.absorbed_df;
    if n <= k_params {
        return Err(Error::Estimation(format!(
            "{n} observations for {k_params} parameters"
        )));
    }

    let x = &design.x;
    let xtx = x.t().dot(x);
    let xty = {
        let yv = Array1::from_vec(design.y.clone());
        x.t().dot(&yv)
    };
    let chol = linalg::cholesky_checked(&xtx, &design.names, "ols_clustered")?;
    let coef = linalg::chol_solve(&chol, &xty).to_vec();
    let bread = linalg::chol_inverse(&chol);

    let mut residuals = vec![0.0f64; n];
    let mut ssr = 0.0f64;
    for i in 0..n {
        let mut fit = 0.0;
        for j in 0..k_x {
            fit += x[[i, j]] * coef[j];
        }
        let e = design.y[i] - fit;
        residuals[i] = e;
        ssr += e * e;
    }

    // R^2 against the original response, within-R^2 against the demeaned one.
    let tss = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>()
    };
    let tss_orig = tss(&y_orig);
    let tss_within = tss(&design.y);
    let r2 = if tss_orig > 0.0 { 1.0 - ssr / tss_orig } else { 0.0 };
    let within_r2 = if tss_within > 0.0 {
        1.0 - ssr / tss_within
    } else {
        0.0
    };

    // Covariance sandwich.
    let meat = match design.clusters.len() {
        0 => {
            // HC1
            let c = n as f64 / (n - k_params) as f64;
            hetero_meat(x, &residuals) * c
        }
        1 => {
            let f = &design.clusters[0];
            cluster_meat(x, &residuals, f) * small_sample(f.n_levels, n, k_params)
        }
        2 => {
            let fa = &design.clusters[0];
            let fb = &design.clusters[1];
            let fab = Factor::interact("intersection", fa, fb);
            let ca = small_sample(fa.n_levels, n, k_params);
            let cb = small_sample(fb.n_levels, n, k_params);
            // df correction for the joint term follows the smaller dimension
            let cab = small_sample(fa.n_levels.min(fb.n_levels), n, k_params);
            let ma = cluster_meat(x, &residuals, fa) * ca;
            let mb = cluster_meat(x, &residuals, fb) * cb;
            let mab = cluster_meat(x, &residuals, &fab) * cab;
            ma + mb - mab
        }
        _ => unreachable!("validated"),
    };
    let mut cov = bread.dot(&meat).dot(&bread);

    // Two-way differencing can leave the sandwich indefinite.
    let mut cov_clipped = false;
    if !linalg::cholesky_is_pd(&cov) {
        let (repaired, flagged) = linalg::clip_to_psd(&cov);
        cov = repaired;
        cov_clipped = flagged;
    }

    let se: Vec<f64> = (0..k_x).map(|i| cov[[i, i]].max(0.0).sqrt()).collect();
    let t: Vec<f64> = coef.iter().zip(&se).map(|(&b, &s)| b / s).collect();
    let cluster_groups = design.clusters.iter().map(|c| c.n_levels).collect();

    Ok(RegressionFit {
        names: design.names,
        coef,
        cov,
        se,
        t,
        n_obs: n,
        k_params,
        r2,
        within_r2,
        absorb,
        cov_clipped,
        cluster_groups,
        residuals,
    })
}

// ============================================================
// Post-fit inference
// ============================================================

/// Partial sums of a contiguous coefficient block with standard errors
/// sqrt(1' Omega_t 1) over the growing block.
pub fn cumulative_coefficients(
    fit: &RegressionFit,
    block: std::ops::Range<usize>,
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(block.len());
    let mut sum = 0.0;
    for (t, i) in block.clone().enumerate() {
        sum += fit.coef[i];
        let mut var = 0.0;
        for a in block.clone().take(t + 1) {
            for b in block.clone().take(t + 1) {
                var += fit.cov[[a, b]];
            }
        }
        out.push((sum, var.max(0.0).sqrt()));
    }
    out
}

/// Wald test of coefficient equality b1 = b2; returns (statistic, p-value)
/// against chi-squared with one degree of freedom.
pub fn wald_equality(fit: &RegressionFit, name1: &str, name2: &str) -> Result<(f64, f64)> {
    let i = fit
        .index_of(name1)
        .ok_or_else(|| Error::Estimation(format!("no coefficient named `{name1}`")))?;
    let j = fit
        .index_of(name2)
        .ok_or_else(|| Error::Estimation(format!("no coefficient named `{name2}`")))?;
    let diff = fit.coef[i] - fit.coef[j];
    let var = fit.cov[[i, i]] + fit.cov[[j, j]] - 2.0 * fit.cov[[i, j]];
    if var <= 0.0 {
        return Err(Error::Estimation(format!(
            "degenerate variance for contrast `{name1}` - `{name2}`"
        )));
    }
    let stat = diff * diff / var;
    let chi = ChiSquared::new(1.0).expect("df 1");
    Ok((stat, 1.0 - chi.cdf(stat)))
}

/// Share of return variation explained by an impact component:
/// cov(r_component, r) / var(r). Needs at least 30 pairs and nonzero
/// variance; otherwise None.
pub fn variance_share(r_component: &[f64], r: &[f64]) -> Option<f64> {
    if r_component.len() != r.len() || r.len() < 30 {
        return None;
    }
    let var = crate::util::sample_cov(r, r);
    if !(var > 0.0) {
        return None;
    }
    Some(crate::util::sample_cov(r_component, r) / var)
}

// ============================================================
// Tests
// ============================================================
