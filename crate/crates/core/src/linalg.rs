//! Small dense least-squares helpers shared by the fitting modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below `RANK_RTOL * s_max` count as zero.
pub(crate) const RANK_RTOL: f64 = 1e-10;

/// Ordinary least squares with an intercept column.
///
/// `design` is `n × p` without the intercept. Returns `(coefficients, intercept)`.
pub fn ols_with_intercept(design: &DMatrix<f64>, y: &[f64]) -> Result<(DVector<f64>, f64)> {
    let (n, p) = design.shape();
    if n != y.len() {
        return Err(Error::validation(format!(
            "design has {n} rows but response has {} values",
            y.len()
        )));
    }
    if n < p + 1 {
        return Err(Error::RankDeficient(format!(
            "{n} observations for {} parameters",
            p + 1
        )));
    }
    let mut x = DMatrix::<f64>::from_element(n, p + 1, 1.0);
    x.view_mut((0, 0), (n, p)).copy_from(design);
    let beta = lstsq(&x, &DVector::from_column_slice(y))?;
    let coef = beta.rows(0, p).into_owned();
    Ok((coef, beta[p]))
}

/// Full-rank least squares through the thin SVD; rank deficiency is an error.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= RANK_RTOL * s_max {
        return Err(Error::RankDeficient(format!(
            "design matrix {}×{} has condition number above {:e}",
            x.nrows(),
            x.ncols(),
            1.0 / RANK_RTOL
        )));
    }
    svd.solve(y, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Closed-form simple linear regression of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} points cannot define a line")));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n as f64 {
        return Err(Error::Degenerate("predictor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let fitted: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
    Ok(LineFit {
        slope,
        intercept,
        r2: r_squared(y, &fitted),
    })
}

/// Coefficient of determination. A constant response counts as perfectly
/// explained when the fit reproduces it, and unexplained otherwise.
pub fn r_squared(actual: &[f64], fitted: &[f64]) -> f64 {
    let m = mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - m) * (a - m)).sum();
    let ss_res: f64 = actual.iter().zip(fitted).map(|(a, f)| (a - f) * (a - f)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn mse(predicted: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    mean(
        &predicted
            .iter()
            .zip(actual)
            .map(|(p, a)| (p - a) * (p - a))
            .collect::<Vec<_>>(),
    )
}

/// Thin SVD with singular triplets sorted by decreasing singular value.
///
/// Returns `(u, s, v_t)` with `u: m × r`, `v_t: r × n`, `r = min(m, n)`.
pub(crate) fn sorted_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
    let s_sorted = order.iter().map(|&i| s[i]).collect();
    (u_sorted, s_sorted, vt_sorted)
}
