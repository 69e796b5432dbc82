//! Ordinary and two-stage least squares, differentiation instruments and the
//! control-function first stage.

mod control;
mod instruments;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use control::{control_function_stage1, declared_instruments, FirstStage};
pub use instruments::{build_differentiation_instruments, InstrumentMatrix};

/// Relative pivot size below which a design column counts as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub intercept: bool,
    pub used_instruments: Vec<String>,
}

impl LinearModelFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

struct QrSolution {
    beta: DVector<f64>,
    /// `(X'X)^{-1}`.
    xtx_inv: DMatrix<f64>,
}

fn with_intercept(x: &DMatrix<f64>, names: &[String], intercept: bool) -> (DMatrix<f64>, Vec<String>) {
    if !intercept {
        return (x.clone(), names.to_vec());
    }
    let x = x.clone().insert_column(0, 1.0);
    let mut n = Vec::with_capacity(names.len() + 1);
    n.push("intercept".to_string());
    n.extend_from_slice(names);
    (x, n)
}

/// Names of columns whose QR pivot is negligible relative to the column norm.
fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let r = x.clone().qr().r();
    (0..x.ncols())
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * norm
        })
        .map(|j| names[j].clone())
        .collect()
}

fn least_squares(y: &DVector<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<QrSolution> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::Precondition(format!(
            "least squares needs more rows ({n}) than columns ({k})"
        )));
    }
    let dependent = dependent_columns(x, names);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok(QrSolution { beta, xtx_inv })
}

fn r_squared(y: &DVector<f64>, residuals: &DVector<f64>, intercept: bool) -> f64 {
    let rss = residuals.norm_squared();
    let tss = if intercept {
        let mean = y.mean();
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    if tss == 0.0 {
        if rss == 0.0 { 1.0 } else { 0.0 }
    } else {
        1.0 - rss / tss
    }
}

/// OLS by Householder QR with classical standard errors.
pub fn ols_fit(y: &[f64], x: &DMatrix<f64>, names: &[String], intercept: bool) -> Result<LinearModelFit> {
    if x.nrows() != y.len() || names.len() != x.ncols() {
        return Err(Error::Precondition("ols_fit: inconsistent dimensions".into()));
    }
    let (x, names) = with_intercept(x, names, intercept);
    let yv = DVector::from_column_slice(y);
    let sol = least_squares(&yv, &x, &names)?;
    let residuals = &yv - &x * &sol.beta;
    let dof = (x.nrows() - x.ncols()) as f64;
    let sigma2 = residuals.norm_squared() / dof;
    Ok(LinearModelFit {
        standard_errors: (0..x.ncols()).map(|i| (sigma2 * sol.xtx_inv[(i, i)]).sqrt()).collect(),
        coefficients: sol.beta.iter().copied().collect(),
        r_squared: r_squared(&yv, &residuals, intercept),
        residuals: residuals.iter().copied().collect(),
        n_obs: x.nrows(),
        names,
        intercept,
        used_instruments: Vec::new(),
    })
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Textbook 2SLS: project each endogenous column on `[exog, instruments]`,
/// regress `y` on `[exog, fitted]`, and compute residuals with the actual
/// endogenous values.
#[allow(clippy::too_many_arguments)]
pub fn tsls_fit(
    y: &[f64],
    x_exog: &DMatrix<f64>,
    exog_names: &[String],
    x_endog: &DMatrix<f64>,
    endog_names: &[String],
    instruments: &DMatrix<f64>,
    instrument_names: &[String],
    intercept: bool,
) -> Result<LinearModelFit> {
    let n = y.len();
    if x_exog.nrows() != n || x_endog.nrows() != n || instruments.nrows() != n {
        return Err(Error::Precondition("tsls_fit: inconsistent row counts".into()));
    }
    if exog_names.len() != x_exog.ncols()
        || endog_names.len() != x_endog.ncols()
        || instrument_names.len() != instruments.ncols()
    {
        return Err(Error::Precondition("tsls_fit: names do not match columns".into()));
    }
    if instruments.ncols() < x_endog.ncols() {
        return Err(Error::UnderIdentified {
            instruments: instruments.ncols(),
            endogenous: x_endog.ncols(),
        });
    }
    let (exog, exog_names) = with_intercept(x_exog, exog_names, intercept);
    let z = hcat(&exog, instruments);
    let mut z_names = exog_names.clone();
    z_names.extend_from_slice(instrument_names);

    let mut fitted = DMatrix::zeros(n, x_endog.ncols());
    for c in 0..x_endog.ncols() {
        let col: DVector<f64> = x_endog.column(c).into_owned();
        let sol = least_squares(&col, &z, &z_names)?;
        fitted.set_column(c, &(&z * sol.beta));
    }

    let mut names = exog_names;
    names.extend_from_slice(endog_names);
    let x_hat = hcat(&exog, &fitted);
    let x_actual = hcat(&exog, x_endog);
    let yv = DVector::from_column_slice(y);
    let sol = least_squares(&yv, &x_hat, &names)?;
    let residuals = &yv - &x_actual * &sol.beta;
    let dof = (n - x_hat.ncols()) as f64;
    let sigma2 = residuals.norm_squared() / dof;
    Ok(LinearModelFit {
        standard_errors: (0..x_hat.ncols()).map(|i| (sigma2 * sol.xtx_inv[(i, i)]).sqrt()).collect(),
        coefficients: sol.beta.iter().copied().collect(),
        r_squared: r_squared(&yv, &residuals, intercept),
        residuals: residuals.iter().copied().collect(),
        n_obs: n,
        names,
        intercept,
        used_instruments: instrument_names.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let fit = ols_fit(&[2.0, 4.0, 6.0, 8.0], &x, &names(&["x"]), false).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-13));
    }

    /// Normal equations solved by Cholesky, independent of the QR path.
    fn normal_equations(y: &[f64], x: &DMatrix<f64>) -> DVector<f64> {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * DVector::from_column_slice(y);
        xtx.cholesky().unwrap().solve(&xty)
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 3.0 * x + 0.3 * normal(&mut rng)).collect();
        let x = DMatrix::from_column_slice(n, 1, &xs);
        let fit = ols_fit(&y, &x, &names(&["x"]), true).unwrap();
        let design = x.clone().insert_column(0, 1.0);
        let oracle = normal_equations(&y, &design);
        for i in 0..2 {
            assert!((fit.coefficients[i] - oracle[i]).abs() < 1e-10);
        }
        let mean_resid = fit.residuals.iter().sum::<f64>() / n as f64;
        assert!(mean_resid.abs() < 1e-8);
        let orth: f64 = fit.residuals.iter().zip(&xs).map(|(r, x)| r * x).sum();
        assert!(orth.abs() < 1e-8);
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let c = [1.0, 2.0, 3.0, 5.0, 8.0];
        let mut data = c.to_vec();
        data.extend_from_slice(&c);
        let x = DMatrix::from_column_slice(5, 2, &data);
        let err = ols_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &x, &names(&["a", "b"]), false).unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["b".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn tsls_collapses_to_ols_when_instruments_are_the_regressors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let w: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let p: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.5 + w[i] - 2.0 * p[i] + normal(&mut rng)).collect();
        let xw = DMatrix::from_column_slice(n, 1, &w);
        let xp = DMatrix::from_column_slice(n, 1, &p);
        let iv = tsls_fit(&y, &xw, &names(&["w"]), &xp, &names(&["p"]), &xp, &names(&["z"]), true).unwrap();
        let both = hcat(&xw, &xp);
        let ols = ols_fit(&y, &both, &names(&["w", "p"]), true).unwrap();
        for i in 0..3 {
            assert!((iv.coefficients[i] - ols.coefficients[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn tsls_recovers_endogenous_price_where_ols_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 6000;
        let mut y = Vec::new();
        let (mut w, mut p, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let zi = normal(&mut rng);
            let wi = normal(&mut rng);
            let v = normal(&mut rng);
            let u = 0.8 * v + 0.6 * normal(&mut rng);
            let pi = 1.0 + zi + 0.5 * wi + v;
            y.push(1.0 + 2.0 * wi - 1.5 * pi + u);
            w.push(wi);
            p.push(pi);
            z.push(zi);
        }
        let xw = DMatrix::from_column_slice(n, 1, &w);
        let xp = DMatrix::from_column_slice(n, 1, &p);
        let xz = DMatrix::from_column_slice(n, 1, &z);
        let iv = tsls_fit(&y, &xw, &names(&["w"]), &xp, &names(&["p"]), &xz, &names(&["z"]), true).unwrap();
        let ols = ols_fit(&y, &hcat(&xw, &xp), &names(&["w", "p"]), true).unwrap();
        let truth = -1.5;
        assert!((iv.coefficients[2] - truth).abs() < 3.0 * iv.standard_errors[2]);
        assert!((ols.coefficients[2] - truth).abs() > 3.0 * ols.standard_errors[2]);
        assert_eq!(iv.used_instruments, vec!["z".to_string()]);
    }

    #[test]
    fn tsls_errors() {
        let n = 10;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let xw = DMatrix::from_fn(n, 1, |i, _| (i * i) as f64);
        let xp = DMatrix::from_fn(n, 1, |i, _| (i as f64).sin());
        let empty = DMatrix::zeros(n, 0);
        assert!(matches!(
            tsls_fit(&y, &xw, &names(&["w"]), &xp, &names(&["p"]), &empty, &[], true),
            Err(Error::UnderIdentified { .. })
        ));
        let constant = DMatrix::from_element(n, 1, 3.0);
        assert!(matches!(
            tsls_fit(&y, &xw, &names(&["w"]), &xp, &names(&["p"]), &constant, &names(&["z"]), true),
            Err(Error::RankDeficient { .. })
        ));
    }
}
