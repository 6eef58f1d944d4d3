//! Dense symmetric linear algebra for the regression engine.
//!
//! Design matrices here are modest (a few hundred columns at most), so the
//! solvers are plain Cholesky and cyclic Jacobi. Everything is single-pass
//! deterministic: no pivoting heuristics that could reorder results.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Cholesky factor (lower triangular) of a symmetric positive-definite
/// matrix. Fails with the offending column names when a pivot collapses,
/// which is how collinear regressors surface to the caller.
pub fn cholesky_checked(
    a: &Array2<f64>,
    names: &[String],
    context: &str,
) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    let mut dropped: Vec<String> = Vec::new();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // Relative pivot test against the original diagonal entry.
        let tol = 1e-12 * a[(j, j)].abs().max(1e-300);
        if d <= tol {
            let name = names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("col{}", j));
            dropped.push(name);
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    if !dropped.is_empty() {
        return Err(Error::RankDeficient {
            context: context.to_string(),
            columns: dropped,
        });
    }
    Ok(l)
}

/// Plain Cholesky that simply reports success. Used as a fast PSD probe.
pub fn cholesky_is_pd(a: &Array2<f64>) -> bool {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    true
}

/// Solve L L' x = b given the lower Cholesky factor.
pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of the SPD matrix with lower Cholesky factor `l`.
pub fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    // Enforce exact symmetry against accumulated rounding.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns (values, vectors) with `vectors` column-major per
/// eigenvalue: a = V diag(w) V'.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let scale: f64 = (0..n).map(|i| m[(i, i)].abs()).fold(1e-300, f64::max);
        if off.sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    (w, v)
}

/// Clip negative eigenvalues of a symmetric matrix to zero.
/// Returns the repaired matrix and whether any eigenvalue fell below the
/// -1e-12 (relative) reporting threshold.
pub fn clip_to_psd(a: &Array2<f64>) -> (Array2<f64>, bool) {
    let (w, v) = jacobi_eigen(a);
    let scale = w.iter().fold(1.0_f64, |acc, &x| acc.max(x.abs()));
    let reportable = w.iter().any(|&x| x < -1e-12 * scale);
    let n = a.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for (k, &wk) in w.iter().enumerate() {
        let wk = wk.max(0.0);
        if wk == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = v[(i, k)];
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += wk * vik * v[(j, k)];
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let x = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = x;
            out[(j, i)] = x;
        }
    }
    (out, reportable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let names = vec!["a".into(), "b".into(), "c".into()];
        let l = cholesky_checked(&a, &names, "test").unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = chol_solve(&l, &b);
        let back = a.dot(&x);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-12);
        }
        let inv = chol_inverse(&l);
        let eye = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(eye[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_names_collinear_columns() {
        // Third column is the sum of the first two.
        let a = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]];
        let names = vec!["x1".into(), "x2".into(), "x1_plus_x2".into()];
        match cholesky_checked(&a, &names, "test") {
            Err(crate::Error::RankDeficient { columns, .. }) => {
                assert_eq!(columns, vec!["x1_plus_x2".to_string()]);
            }
            other => panic!("expected rank deficiency, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (mut w, _) = jacobi_eigen(&a);
        w.sort_by(|x, y| x.total_cmp(y));
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(w[1], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn clip_repairs_indefinite_matrix() {
        let a = array![[1.0, 0.0], [0.0, -0.5]];
        let (fixed, reported) = clip_to_psd(&a);
        assert!(reported);
        assert!(cholesky_is_pd(&(&fixed + Array2::<f64>::eye(2) * 1e-12)));
        assert_relative_eq!(fixed[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fixed[(1, 1)], 0.0, epsilon = 1e-10);
    }
}
