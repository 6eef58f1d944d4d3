//! Nonlinear least squares for exponential-decay kernels, via Gauss-Newton
//! with step halving and best-of-grid initialization in lambda.
//!
//! Two model shapes share the machinery:
//!   impact reversal   y_t = theta0 x_t + theta1 sum_{s=1..L} e^{-lambda(s-1)} x_{t-s}
//!   return chasing    y_t = beta sum_{s=0..L} e^{-lambda s} x_{t-s}
//! with optional intercept or time-fixed-effect partialling applied to both
//! sides. Kernel sums are evaluated by a streaming per-run recursion, so no
//! observation-by-lag matrix is ever materialized.

use crate::econ::lags::{Run, MIN_RUN_TAIL};
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, Array2};

pub const LAMBDA_GRID: [f64; 7] = [0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0];
pub const LAMBDA_MIN: f64 = 1e-8;
const MAX_GN_ITER: usize = 100;
const MAX_HALVINGS: usize = 50;
const SSR_REL_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    ImpactReversal,
    ReturnChasing,
}

/// Nuisance terms partialled out of both the response and the kernel
/// regressors before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelControls {
    None,
    Intercept,
    TimeFe,
}

#[derive(Debug, Clone)]
pub struct KernelFit {
    pub kind: KernelKind,
    pub names: Vec<String>,
    /// [theta0, theta1, lambda_theta] or [beta, lambda_beta].
    pub params: Vec<f64>,
    pub se: Vec<f64>,
    pub cov: Array2<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// max |J'r| at the solution.
    pub grad_norm: f64,
    pub n_obs: usize,
}

impl KernelFit {
    pub fn lambda(&self) -> f64 {
        *self.params.last().expect("kernel has parameters")
    }
}

// ============================================================
// Streaming truncated exponential convolution
// ============================================================

/// Returns (z, u) with z_t = sum_{s=0..m} a^s x_{t-s} and
/// u_t = sum_{s=0..m} s a^s x_{t-s}, a = e^{-lambda}; entries for t < m are
/// NaN. The derivative of z_t in lambda is -u_t.
fn exp_conv(x: &[f64], lambda: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let a = (-lambda).exp();
    let mut z = vec![f64::NAN; n];
    let mut u = vec![f64::NAN; n];
    if n <= m {
        return (z, u);
    }
    // direct sums at t = m
    let mut z0 = 0.0;
    let mut u0 = 0.0;
    let mut pow = 1.0;
    for s in 0..=m {
        z0 += pow * x[m - s];
        u0 += s as f64 * pow * x[m - s];
        pow *= a;
    }
    z[m] = z0;
    u[m] = u0;
    let tail = a.powi(m as i32 + 1);
    for t in m + 1..n {
        let dropped = x[t - m - 1];
        let zt = a * z[t - 1] + x[t] - tail * dropped;
        let ut = a * (u[t - 1] + z[t - 1]) - (m as f64 + 1.0) * tail * dropped;
        z[t] = zt;
        u[t] = ut;
    }
    (z, u)
}

// ============================================================
// Problem assembly
// ============================================================

struct Problem<'a> {
    kind: KernelKind,
    runs: Vec<&'a Run>,
    /// (run index, t) per observation, complete windows only.
    obs: Vec<(usize, usize)>,
    max_lag: usize,
    y: Vec<f64>,
    /// Group label per observation for partialling, with group count;
    /// None means no partialling.
    groups: Option<(Vec<u32>, usize)>,
    /// x_t per observation, partialled (reversal only).
    z0: Vec<f64>,
}

fn partial_out(v: &mut [f64], groups: &Option<(Vec<u32>, usize)>) {
    let Some((labels, n_groups)) = groups else {
        return;
    };
    let mut sums = vec![0.0f64; *n_groups];
    let mut counts = vec![0usize; *n_groups];
    for (x, &g) in v.iter().zip(labels) {
        sums[g as usize] += x;
        counts[g as usize] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            *s /= c as f64;
        }
    }
    for (x, &g) in v.iter_mut().zip(labels) {
        *x -= sums[g as usize];
    }
}

impl<'a> Problem<'a> {
    fn assemble(
        kind: KernelKind,
        runs: &'a [Run],
        max_lag: usize,
        controls: KernelControls,
    ) -> Result<Self> {
        let usable: Vec<&Run> = runs
            .iter()
            .filter(|r| r.len() >= max_lag + MIN_RUN_TAIL)
            .collect();
        let mut obs = Vec::new();
        for (ri, run) in usable.iter().enumerate() {
            for t in max_lag..run.len() {
                if run.y[t].is_some() {
                    obs.push((ri, t));
                }
            }
        }
        if obs.is_empty() {
            return Err(Error::Estimation(
                "kernel fit: no observations with a complete lag window".into(),
            ));
        }
        let mut y: Vec<f64> = obs
            .iter()
            .map(|&(ri, t)| usable[ri].y[t].expect("filtered"))
            .collect();
        let groups = match controls {
            KernelControls::None => None,
            KernelControls::Intercept => Some((vec![0u32; obs.len()], 1)),
            KernelControls::TimeFe => {
                let mut map = std::collections::HashMap::new();
                let mut labels = Vec::with_capacity(obs.len());
                for &(ri, t) in &obs {
                    let day = usable[ri].time[t];
                    let next = map.len() as u32;
                    labels.push(*map.entry(day).or_insert(next));
                }
                let n = map.len();
                Some((labels, n))
            }
        };
        partial_out(&mut y, &groups);
        let mut z0: Vec<f64> = obs.iter().map(|&(ri, t)| usable[ri].x[t]).collect();
        partial_out(&mut z0, &groups);
        Ok(Problem {
            kind,
            runs: usable,
            obs,
            max_lag,
            y,
            groups,
            z0,
        })
    }

    fn n_partialled(&self) -> usize {
        self.groups.as_ref().map(|(_, n)| *n).unwrap_or(0)
    }

    /// Kernel column and its lambda-derivative at `lambda`, partialled.
    /// Reversal: sum starts at lag 1 with decay referenced to (s - 1);
    /// chasing: sum starts at lag 0.
    fn kernel_column(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let (m, shift) = match self.kind {
            KernelKind::ImpactReversal => (self.max_lag - 1, 1usize),
            KernelKind::ReturnChasing => (self.max_lag, 0usize),
        };
        let per_run: Vec<(Vec<f64>, Vec<f64>)> = self
            .runs
            .iter()
            .map(|r| exp_conv(&r.x, lambda, m))
            .collect();
        let mut z = Vec::with_capacity(self.obs.len());
        let mut dz = Vec::with_capacity(self.obs.len());
        for &(ri, t) in &self.obs {
            let (zr, ur) = &per_run[ri];
            z.push(zr[t - shift]);
            dz.push(-ur[t - shift]);
        }
        partial_out(&mut z, &self.groups);
        partial_out(&mut dz, &self.groups);
        (z, dz)
    }

    /// Profile out the linear coefficients at fixed lambda; returns
    /// (linear params, SSR).
    fn profile(&self, lambda: f64) -> Option<(Vec<f64>, f64)> {
        let (z, _) = self.kernel_column(lambda);
        let cols: Vec<&[f64]> = match self.kind {
            KernelKind::ImpactReversal => vec![&self.z0, &z],
            KernelKind::ReturnChasing => vec![&z],
        };
        let k = cols.len();
        let mut xtx = Array2::<f64>::zeros((k, k));
        let mut xty = Array1::<f64>::zeros(k);
        for a in 0..k {
            for b in 0..k {
                xtx[[a, b]] = dot(cols[a], cols[b]);
            }
            xty[a] = dot(cols[a], &self.y);
        }
        let names: Vec<String> = (0..k).map(|i| format!("z{i}")).collect();
        let chol = linalg::cholesky_checked(&xtx, &names, "kernel profile").ok()?;
        let beta = linalg::chol_solve(&chol, &xty);
        let mut ssr = 0.0;
        for i in 0..self.y.len() {
            let mut fit = 0.0;
            for (j, col) in cols.iter().enumerate() {
                fit += beta[j] * col[i];
            }
            let e = self.y[i] - fit;
            ssr += e * e;
        }
        Some((beta.to_vec(), ssr))
    }

    /// Residuals, SSR, and Jacobian columns at a parameter vector.
    /// params: [linear..., lambda].
    fn eval(&self, params: &[f64]) -> (Vec<f64>, f64, Vec<Vec<f64>>) {
        let lambda = *params.last().expect("params");
        let (z, dz) = self.kernel_column(lambda);
        let n = self.y.len();
        let mut resid = Vec::with_capacity(n);
        let mut ssr = 0.0;
        match self.kind {
            KernelKind::ImpactReversal => {
                let (t0, t1) = (params[0], params[1]);
                for i in 0..n {
                    let e = self.y[i] - t0 * self.z0[i] - t1 * z[i];
                    resid.push(e);
                    ssr += e * e;
                }
                let jl: Vec<f64> = dz.iter().map(|&d| t1 * d).collect();
                (resid, ssr, vec![self.z0.clone(), z, jl])
            }
            KernelKind::ReturnChasing => {
                let b = params[0];
                for i in 0..n {
                    let e = self.y[i] - b * z[i];
                    resid.push(e);
                    ssr += e * e;
                }
                let jl: Vec<f64> = dz.iter().map(|&d| b * d).collect();
                (resid, ssr, vec![z, jl])
            }
        }
    }

    fn ssr_only(&self, params: &[f64]) -> f64 {
        self.eval(params).1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ============================================================
// Gauss-Newton
// ============================================================

enum StartOutcome {
    Converged {
        params: Vec<f64>,
        rss: f64,
        iterations: usize,
        grad_norm: f64,
        jacobian: Vec<Vec<f64>>,
    },
    Failed(String),
}

fn gauss_newton(problem: &Problem, start: Vec<f64>) -> StartOutcome {
    let mut params = start;
    let p = params.len();
    for iter in 1..=MAX_GN_ITER {
        let (resid, ssr, jac) = problem.eval(&params);
        // gradient of SSR/2 wrt params is -J'r with our sign convention
        let grad: Vec<f64> = jac.iter().map(|col| dot(col, &resid)).collect();
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < GRAD_TOL {
            return StartOutcome::Converged {
                params,
                rss: ssr,
                iterations: iter,
                grad_norm,
                jacobian: jac,
            };
        }
        let mut jtj = Array2::<f64>::zeros((p, p));
        for a in 0..p {
            for b in 0..p {
                jtj[[a, b]] = dot(&jac[a], &jac[b]);
            }
        }
        let names: Vec<String> = (0..p).map(|i| format!("p{i}")).collect();
        let chol = match linalg::cholesky_checked(&jtj, &names, "gauss-newton") {
            Ok(c) => c,
            Err(e) => return StartOutcome::Failed(format!("singular J'J at iteration {iter}: {e}")),
        };
        let delta = linalg::chol_solve(&chol, &Array1::from_vec(grad.clone()));

        let mut accepted = None;
        let mut scale = 1.0f64;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = params
                .iter()
                .zip(delta.iter())
                .map(|(v, d)| v + scale * d)
                .collect();
            let last = trial.len() - 1;
            trial[last] = trial[last].max(LAMBDA_MIN);
            let trial_ssr = problem.ssr_only(&trial);
            if trial_ssr < ssr {
                accepted = Some((trial, trial_ssr));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ssr)) = accepted else {
            return StartOutcome::Failed(format!(
                "no descent direction after {MAX_HALVINGS} halvings at iteration {iter} \
                 (SSR {ssr:.6e}, gradient {grad_norm:.3e})"
            ));
        };
        params = next;
        let rel = (ssr - next_ssr) / ssr.max(f64::MIN_POSITIVE);
        if rel < SSR_REL_TOL {
            let (resid, rss, jac) = problem.eval(&params);
            let gn = jac
                .iter()
                .map(|col| dot(col, &resid).abs())
                .fold(0.0f64, f64::max);
            return StartOutcome::Converged {
                params,
                rss,
                iterations: iter,
                grad_norm: gn,
                jacobian: jac,
            };
        }
    }
    StartOutcome::Failed(format!("no convergence in {MAX_GN_ITER} iterations"))
}

// ============================================================
// Public entry point
// ============================================================

/// Fit an exponential-decay kernel by NLLS over per-entity runs. `max_lag`
/// truncates the kernel; sample filters match [`distributed_lag`].
///
/// [`distributed_lag`]: crate::econ::lags::distributed_lag
pub fn nlls_exp_decay(
    kind: KernelKind,
    runs: &[Run],
    max_lag: usize,
    controls: KernelControls,
) -> Result<KernelFit> {
    if max_lag == 0 {
        return Err(Error::Estimation("kernel fit needs max_lag >= 1".into()));
    }
    let problem = Problem::assemble(kind, runs, max_lag, controls)?;

    // Rank grid starts by profiled SSR, best first.
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::new();
    for &lambda in &LAMBDA_GRID {
        if let Some((mut linear, ssr)) = problem.profile(lambda) {
            // a near-singular profiled solve can return a non-finite SSR;
            // such a start is useless, not fatal
            if ssr.is_finite() && linear.iter().all(|v| v.is_finite()) {
                linear.push(lambda);
                starts.push((linear, ssr));
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::Estimation(
            "kernel fit: every grid initialization was rank-deficient".into(),
        ));
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut failures = Vec::new();
    for (start, _) in starts {
        let lambda0 = *start.last().expect("start");
        match gauss_newton(&problem, start) {
            StartOutcome::Converged {
                params,
                rss,
                iterations,
                grad_norm,
                jacobian,
            } => {
                let p = params.len();
                let n = problem.y.len();
                let dof = n.saturating_sub(p + problem.n_partialled()).max(1);
                let sigma2 = rss / dof as f64;
                let mut jtj = Array2::<f64>::zeros((p, p));
                for a in 0..p {
                    for b in 0..p {
                        jtj[[a, b]] = dot(&jacobian[a], &jacobian[b]);
                    }
                }
                let names: Vec<String> = match kind {
                    KernelKind::ImpactReversal => {
                        vec!["theta0".into(), "theta1".into(), "lambda_theta".into()]
                    }
                    KernelKind::ReturnChasing => vec!["beta".into(), "lambda_beta".into()],
                };
                let cov = match linalg::cholesky_checked(&jtj, &names, "kernel covariance") {
                    Ok(chol) => linalg::chol_inverse(&chol) * sigma2,
                    Err(_) => {
                        // singular information matrix (e.g. theta1 = 0):
                        // pseudo-inverse over the non-null eigenspace
                        let (w, v) = linalg::jacobi_eigen(&jtj);
                        let scale = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                        let mut inv = Array2::<f64>::zeros((p, p));
                        for (k, &wk) in w.iter().enumerate() {
                            if wk > 1e-12 * scale {
                                for a in 0..p {
                                    for b in 0..p {
                                        inv[[a, b]] += v[[a, k]] * v[[b, k]] / wk;
                                    }
                                }
                            }
                        }
                        inv * sigma2
                    }
                };
                let se: Vec<f64> = (0..p).map(|i| cov[[i, i]].max(0.0).sqrt()).collect();
                return Ok(KernelFit {
                    kind,
                    names,
                    params,
                    se,
                    cov,
                    rss,
                    iterations,
                    converged: true,
                    grad_norm,
                    n_obs: n,
                });
            }
            StartOutcome::Failed(why) => {
                failures.push(format!("lambda start {lambda0}: {why}"));
            }
        }
    }
    Err(Error::NoConvergence(format!(
        "kernel fit failed from every grid start: {}",
        failures.join("; ")
    )))
}

// ============================================================
// Tests
// ============================================================
