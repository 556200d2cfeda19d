//! Exponential survival fits `A e^{-t/τ}`.

use serde::Serialize;

use super::lm::{canonical, levenberg_marquardt, FitReport, LmOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeFit {
    pub report: FitReport,
    /// 1/e time, s. Infinite when no decay is resolvable.
    pub tau_s: f64,
    pub tau_sigma_s: f64,
    pub decay_resolved: bool,
    /// Loss `1 − e^{-w/τ}` over the requested window.
    pub window_loss: Option<f64>,
}

/// Fraction lost over `window` for a 1/e time `tau`.
pub fn window_loss(tau: f64, window: f64) -> f64 {
    if tau.is_infinite() {
        0.0
    } else {
        -(-window / tau).exp_m1()
    }
}

/// Fits `(duration_s, survival)` samples. The rate `k = 1/τ` is the fit
/// parameter so that a flat series converges to `k = 0`.
pub fn fit_lifetime(series: &[(f64, f64)], window_s: Option<f64>) -> Result<LifetimeFit> {
    if series.len() < 3 {
        return Err(Error::validation("lifetime fit needs at least 3 points"));
    }
    if series.iter().any(|&(t, _)| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::validation("durations must be positive"));
    }
    if series.iter().any(|&(_, y)| !(0.0..=1.0).contains(&y)) {
        return Err(Error::validation("survival fractions must lie in [0, 1]"));
    }
    if window_s.is_some_and(|w| !(w >= 0.0)) {
        return Err(Error::validation("loss window must be >= 0"));
    }
    let pts = canonical(series.to_vec(), |p| *p);
    // log-linear seed over strictly positive fractions
    let logs: Vec<(f64, f64)> = pts.iter().filter(|p| p.1 > 0.0).map(|&(t, y)| (t, y.ln())).collect();
    let (a0, k0) = if logs.len() >= 2 {
        let n = logs.len() as f64;
        let tm = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let lm = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = logs.iter().map(|p| (p.0 - tm).powi(2)).sum();
        let slope = if sxx > 0.0 { logs.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum::<f64>() / sxx } else { 0.0 };
        ((lm - slope * tm).exp(), (-slope).max(0.0))
    } else {
        (pts.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-3), 1.0 / pts.last().unwrap().0)
    };
    let t_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let report = levenberg_marquardt(
        |p, r| {
            for (ri, &(t, y)) in r.iter_mut().zip(&pts) {
                *ri = p[0] * (-p[1] * t).exp() - y;
            }
        },
        &["amplitude", "rate_per_s"],
        &[a0, if k0 > 0.0 { k0 } else { 1e-3 / t_max }],
        pts.len(),
        LmOptions::default(),
    )?;
    let k = report.value("rate_per_s").unwrap();
    let sk = report.sigma("rate_per_s").unwrap();
    let decay_resolved = k * t_max > 1e-9 && k > sk;
    let (tau_s, tau_sigma_s) = if decay_resolved { (1.0 / k, sk / (k * k)) } else { (f64::INFINITY, f64::INFINITY) };
    let mut report = report;
    if !decay_resolved {
        report.warnings.push("no decay resolvable; τ reported as infinite".into());
    }
    Ok(LifetimeFit { report, tau_s, tau_sigma_s, decay_resolved, window_loss: window_s.map(|w| window_loss(tau_s, w)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_decay() {
        let s: Vec<(f64, f64)> = (1..=12).map(|i| (i as f64 * 5.0, 0.97 * (-(i as f64 * 5.0) / 42.0).exp())).collect();
        let fit = fit_lifetime(&s, Some(0.2)).unwrap();
        assert!((fit.tau_s - 42.0).abs() < 42.0 * 1e-6);
        assert!((fit.report.value("amplitude").unwrap() - 0.97).abs() < 1e-6);
    }

    #[test]
    fn loss_over_window() {
        let loss = window_loss(43.0, 0.2);
        assert!((loss - 0.0046404).abs() < 1e-6);
    }

    #[test]
    fn flat_series_has_no_decay() {
        let s = [(1.0, 0.9), (2.0, 0.9), (5.0, 0.9), (9.0, 0.9)];
        let fit = fit_lifetime(&s, Some(1.0)).unwrap();
        assert!(!fit.decay_resolved);
        assert!(fit.tau_s.is_infinite());
        assert_eq!(fit.window_loss, Some(0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_lifetime(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)], None).unwrap_err().is_config());
        assert!(fit_lifetime(&[(1.0, 1.2), (2.0, 0.5), (3.0, 0.2)], None).is_err());
        assert!(fit_lifetime(&[(1.0, 1.0), (2.0, 0.5)], None).is_err());
    }
}
