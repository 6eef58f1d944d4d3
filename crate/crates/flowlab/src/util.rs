//! Small numeric helpers shared across modules.

/// Sign-preserving power: sign(x) * |x|^eta, with 0 mapped to 0.
///
/// This is the odd extension of x^eta used everywhere flows or trades enter
/// an impact formula, so that outflows produce negative impact.
pub fn signed_power(x: f64, eta: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(eta)
    }
}

/// Fixed 17-significant-digit scientific format. Round-trips any finite f64.
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Linear-interpolation quantile (the "type 7" convention) on a sorted slice.
/// `q` is clamped to [0, 1]. Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Quantile of an unsorted slice (copies and sorts).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator). NaN for fewer than 2 values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Sample covariance (n - 1 denominator) of paired slices.
pub fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return f64::NAN;
    }
    let ma = mean(a);
    let mb = mean(b);
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / (n - 1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    quantile(values, 0.5)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        // average ranks over ties
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let sa = sample_std(&ra);
    let sb = sample_std(&rb);
    if !(sa > 0.0) || !(sb > 0.0) {
        return f64::NAN;
    }
    sample_cov(&ra, &rb) / (sa * sb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn signed_power_is_odd_and_zero_at_zero() {
        assert_eq!(signed_power(0.0, 0.5), 0.0);
        assert_relative_eq!(signed_power(0.04, 0.5), 0.2, max_relative = 1e-12);
        assert_relative_eq!(signed_power(-0.04, 0.5), -0.2, max_relative = 1e-12);
        assert_relative_eq!(signed_power(2.0, 1.0), 2.0);
    }

    #[test]
    fn g17_round_trips() {
        for &x in &[0.78, -0.087, 1.0 / 3.0, 6.02e23, -4.9e-324, 0.0] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{} -> {}", x, s);
        }
    }

    #[test]
    fn quantile_interpolates_rank_values() {
        // 101 points 0.00..=1.00: the 1% and 99% quantiles are the 1st and
        // 99th rank values under linear interpolation.
        let v: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert_relative_eq!(quantile(&v, 0.01), 0.01, epsilon = 1e-12);
        assert_relative_eq!(quantile(&v, 0.99), 0.99, epsilon = 1e-12);
        assert_relative_eq!(quantile(&v, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spearman_detects_monotonicity() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 9.0, 16.0, 25.0];
        assert_relative_eq!(spearman(&a, &b), 1.0, epsilon = 1e-12);
        let c = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_relative_eq!(spearman(&a, &c), -1.0, epsilon = 1e-12);
    }
}
