//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when every relative parameter change falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, ftol: 1e-15, xtol: 1e-14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// 1σ from the covariance at the optimum scaled by the reduced χ².
    pub sigma: f64,
}

/// Parameters with uncertainties and convergence state. When `converged`
/// is false the estimates are unreliable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the weighted residuals.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.sigma)
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn jacobian<F: Fn(&[f64], &mut [f64])>(f: &F, p: &[f64], r0: &[f64], jac: &mut DMatrix<f64>) {
    let m = r0.len();
    let mut pp = p.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1e-6);
        pp[k] = p[k] + h;
        f(&pp, &mut rp);
        pp[k] = p[k] - h;
        f(&pp, &mut rm);
        pp[k] = p[k];
        for i in 0..m {
            jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
}

/// Minimizes `Σ r_i(p)²` where `residuals(p, r)` fills `r` (length `m`).
pub fn levenberg_marquardt<F>(residuals: F, names: &[&str], p0: &[f64], m: usize, opts: LmOptions) -> Result<FitReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = p0.len();
    if n != names.len() {
        return Err(Error::validation("parameter names and initial values differ in length"));
    }
    if m < n {
        return Err(Error::validation(format!("{m} observations cannot determine {n} parameters")));
    }
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    residuals(&p, &mut r);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Fit("residuals are not finite at the initial guess".into()));
    }
    let mut c = cost(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = -1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut rt = vec![0.0; m];

    while iterations < opts.max_iterations {
        iterations += 1;
        jacobian(&residuals, &p, &r, &mut jac);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        if c == 0.0 || g.amax() <= 1e-300 {
            converged = true;
            break;
        }
        if lambda < 0.0 {
            lambda = 1e-3 * jtj.diagonal().max().max(1e-300);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * jtj.diagonal().max());
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            for k in 0..n {
                trial[k] = p[k] + delta[k];
            }
            residuals(&trial, &mut rt);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let small_step = (0..n).all(|k| delta[k].abs() <= opts.xtol * (p[k].abs() + opts.xtol));
                let small_drop = c - ct <= opts.ftol * c;
                p.copy_from_slice(&trial);
                r.copy_from_slice(&rt);
                c = ct;
                lambda = (lambda / 3.0).max(1e-300);
                accepted = true;
                if small_step || small_drop {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point to working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    jacobian(&residuals, &p, &r, &mut jac);
    let jtj = jac.transpose() * &jac;
    let dof = (m - n).max(1) as f64;
    let s2 = c / dof;
    let cov = jtj.clone().try_inverse().or_else(|| jtj.pseudo_inverse(1e-14).ok());
    let mut warnings = Vec::new();
    let sigma: Vec<f64> = match &cov {
        Some(cov) => (0..n).map(|k| (cov[(k, k)].max(0.0) * s2).sqrt()).collect(),
        None => {
            warnings.push("singular normal matrix; uncertainties unavailable".into());
            vec![f64::NAN; n]
        }
    };
    Ok(FitReport {
        parameters: names
            .iter()
            .zip(&p)
            .zip(&sigma)
            .map(|((name, &value), &sigma)| FitParameter { name: name.to_string(), value, sigma })
            .collect(),
        residual_norm: c.sqrt(),
        converged,
        iterations,
        warnings,
    })
}

/// Sorts `(x, y)` samples so that fits do not depend on input order.
pub(crate) fn canonical<T: Copy>(mut pts: Vec<T>, key: impl Fn(&T) -> (f64, f64)) -> Vec<T> {
    pts.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-t / 1.7).exp() + 0.1).collect();
        let rep = levenberg_marquardt(
            |p, r| {
                for i in 0..t.len() {
                    r[i] = p[0] * (-t[i] / p[1]).exp() + p[2] - y[i];
                }
            },
            &["a", "tau", "c"],
            &[1.0, 1.0, 0.0],
            t.len(),
            LmOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!((rep.value("a").unwrap() - 2.5).abs() < 1e-9);
        assert!((rep.value("tau").unwrap() - 1.7).abs() < 1e-9);
        assert!((rep.value("c").unwrap() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn linear_fit_sigma_matches_textbook() {
        // y = a + b x with residuals ±e alternating: sigma_b = s / sqrt(Sxx)
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> =
            x.iter().enumerate().map(|(i, x)| 1.0 + 2.0 * x + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let rep = levenberg_marquardt(
            |p, r| {
                for i in 0..x.len() {
                    r[i] = p[0] + p[1] * x[i] - y[i];
                }
            },
            &["a", "b"],
            &[0.0, 0.0],
            x.len(),
            LmOptions::default(),
        )
        .unwrap();
        let n = x.len() as f64;
        let xm = x.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|x| (x - xm).powi(2)).sum();
        let ssr: f64 =
            x.iter().zip(&y).map(|(x, y)| (y - rep.value("a").unwrap() - rep.value("b").unwrap() * x).powi(2)).sum();
        let s = (ssr / (n - 2.0)).sqrt();
        assert!((rep.sigma("b").unwrap() - s / sxx.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn too_few_observations() {
        assert!(levenberg_marquardt(|_, _| {}, &["a", "b"], &[0.0, 0.0], 1, LmOptions::default()).is_err());
    }
}
