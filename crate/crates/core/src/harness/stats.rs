//! Summary statistics for experiment reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("correlation inputs must be finite"));
    }
    Ok(())
}

/// Sample Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Kendall's tau-b; `None` when either input has all values tied.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_pair(x, y)?;
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tie_x, mut tie_y) = (0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let sx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i8;
            let sy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i8;
            match (sx, sy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if sx == sy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + tie_x) as f64;
    let n2 = (concordant + discordant + tie_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(None);
    }
    Ok(Some((concordant - discordant) as f64 / (n1 * n2).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares line through `(ln n, ln bias)`.
pub fn fit_loglog_slope(ns: &[f64], biases: &[f64]) -> Result<SlopeFit> {
    if ns.len() != biases.len() {
        return Err(Error::DimensionMismatch {
            expected: ns.len(),
            actual: biases.len(),
        });
    }
    if ns.len() < 3 {
        return Err(Error::invalid("slope fit needs at least 3 points"));
    }
    if let Some(v) = ns.iter().chain(biases).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("log-log fit needs positive values, got {v}")));
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = biases.iter().map(|v| v.ln()).collect();
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct n"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        stderr: (rss / (m - 2.0) / sxx).sqrt(),
        intercept,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_abs_diff_eq!(pearson(&x, &lin).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(kendall_tau(&x, &lin).unwrap(), Some(1.0));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap().unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(kendall_tau(&x, &neg).unwrap(), Some(-1.0));
        let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert_abs_diff_eq!(tau, 0.666667, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_correlations_are_undefined() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), None);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_tau_b_with_ties() {
        // x has one tied pair; tau-b = (C - D) / sqrt((n0 - n1)(n0 - n2)).
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        let expect = 5.0 / (5.0f64 * 6.0).sqrt();
        assert_abs_diff_eq!(kendall_tau(&x, &y).unwrap().unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn slope_examples() {
        let ns = [500.0, 1000.0, 5000.0, 1e4, 5e4];
        for rate in [-1.0 / 3.0, -0.2, 0.0] {
            let b: Vec<f64> = ns.iter().map(|n: &f64| 0.7 * n.powf(rate)).collect();
            let fit = fit_loglog_slope(&ns, &b).unwrap();
            assert_abs_diff_eq!(fit.slope, rate, epsilon = 1e-9);
            assert!(fit.stderr < 1e-9);
        }
        assert!(fit_loglog_slope(&ns, &[0.1, 0.1, 0.0, 0.1, 0.1]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
