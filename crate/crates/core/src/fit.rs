//! Small dense least-squares solvers used by calibration and reconstruction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Weighted linear least squares `min Σ w_i (y_i - X_i·β)²`.
pub(crate) struct LinearFit {
    pub coef: Vec<f64>,
    /// `(XᵀWX)⁻¹`.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

pub(crate) fn weighted_linear(design: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<LinearFit> {
    let (n, p) = design.shape();
    let mut a = design.clone();
    let mut b = DVector::from_column_slice(y);
    for i in 0..n {
        let s = w[i].sqrt();
        a.row_mut(i).scale_mut(s);
        b[i] *= s;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if p > n || !(smin > smax * 1e-12) {
        return Err(Error::RankDeficient(format!(
            "{n} points for {p} coefficients, singular values {smin:e}..{smax:e}"
        )));
    }
    let coef = svd.solve(&b, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let ata = a.transpose() * &a;
    let covariance = ata
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal matrix not invertible".into()))?;
    let fitted = design * &coef;
    let residuals = (0..n).map(|i| y[i] - fitted[i]).collect();
    Ok(LinearFit {
        coef: coef.iter().copied().collect(),
        covariance,
        residuals,
    })
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `(JᵀWJ)⁻¹` at the solution, when invertible.
    pub covariance: Option<DMatrix<f64>>,
}

/// Levenberg–Marquardt with central-difference Jacobians.
///
/// `steps` holds the absolute finite-difference step of each parameter.
/// `project` may clamp parameters back into their domain after every update.
#[allow(clippy::too_many_arguments)]
pub(crate) fn levenberg_marquardt<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p0: &[f64],
    steps: &[f64],
    max_iter: usize,
    project: impl Fn(&mut [f64]),
) -> LmOutcome
where
    F: Fn(f64, &[f64]) -> f64,
{
    let n = x.len();
    let np = p0.len();
    let chi2_of = |p: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((&xi, &yi), &wi)| {
                let r = yi - model(xi, p);
                wi * r * r
            })
            .sum()
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(n, np);
        let mut pp = p.to_vec();
        for j in 0..np {
            let h = steps[j];
            pp[j] = p[j] + h;
            let up: Vec<f64> = x.iter().map(|&xi| model(xi, &pp)).collect();
            pp[j] = p[j] - h;
            for (i, &xi) in x.iter().enumerate() {
                jac[(i, j)] = (up[i] - model(xi, &pp)) / (2.0 * h);
            }
            pp[j] = p[j];
        }
        jac
    };
    let normal = |jac: &DMatrix<f64>| -> DMatrix<f64> {
        let mut jw = jac.clone();
        for (i, &wi) in w.iter().enumerate() {
            jw.row_mut(i).scale_mut(wi);
        }
        jac.transpose() * jw
    };

    let mut p = p0.to_vec();
    project(&mut p);
    let mut chi2 = chi2_of(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let jac = jacobian(&p);
        let jtj = normal(&jac);
        let resid = DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - model(x[i], &p))));
        let grad = jac.transpose() * resid;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for j in 0..np {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-30);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let trial_chi2 = chi2_of(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let small_step = delta.iter().zip(steps).all(|(d, s)| d.abs() < 1e-3 * s);
                let rel = (chi2 - trial_chi2) / chi2.max(1e-300);
                p = trial;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let covariance = normal(&jacobian(&p)).try_inverse();
    LmOutcome {
        params: p,
        chi2,
        converged,
        iterations,
        covariance,
    }
}
