//! Time-of-flight temperature: `w(t)² = w0² + (4 k_B T / M) t²`.

use serde::Serialize;

use super::lm::{canonical, levenberg_marquardt, FitReport, LmOptions};
use crate::atom::{ATOMIC_MASS_UNIT, BOLTZMANN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TofFit {
    pub report: FitReport,
    pub w0_m: f64,
    pub temperature_k: f64,
    pub temperature_sigma_k: f64,
}

/// Cloud radius after free expansion for `t` seconds.
pub fn tof_radius(w0: f64, temperature: f64, mass_kg: f64, t: f64) -> f64 {
    (w0 * w0 + 4.0 * BOLTZMANN * temperature * t * t / mass_kg).sqrt()
}

/// Fits `(time_s, radius_m)` samples for an atom of `mass_amu`.
pub fn fit_tof(series: &[(f64, f64)], mass_amu: f64) -> Result<TofFit> {
    if series.len() < 3 {
        return Err(Error::validation("time-of-flight fit needs at least 3 points"));
    }
    if series.iter().any(|&(t, w)| !t.is_finite() || !(w > 0.0) || !w.is_finite()) {
        return Err(Error::validation("radii must be positive and times finite"));
    }
    if !(mass_amu > 0.0) {
        return Err(Error::validation("mass must be positive"));
    }
    let pts = canonical(series.to_vec(), |p| *p);
    let t2: Vec<f64> = pts.iter().map(|p| p.0 * p.0).collect();
    let distinct = {
        let mut v = t2.clone();
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-30));
        v.len()
    };
    if distinct < 2 {
        return Err(Error::validation("time grid is degenerate: need at least two distinct |t|"));
    }
    let mass = mass_amu * ATOMIC_MASS_UNIT;
    // seed from the straight line w² = a + b t²
    let n = pts.len() as f64;
    let xm = t2.iter().sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1 * p.1).sum::<f64>() / n;
    let sxx: f64 = t2.iter().map(|x| (x - xm).powi(2)).sum();
    let b = t2.iter().zip(&pts).map(|(x, p)| (x - xm) * (p.1 * p.1 - ym)).sum::<f64>() / sxx;
    let a = (ym - b * xm).max(1e-3 * ym);
    let w_scale = a.sqrt();
    let t_scale = b.max(0.0) * mass / (4.0 * BOLTZMANN);
    // fit in scaled units so both parameters are O(1)
    let temp_unit = if t_scale > 0.0 { t_scale } else { 1e-6 };
    let report = levenberg_marquardt(
        |p, r| {
            for (ri, &(t, w)) in r.iter_mut().zip(&pts) {
                *ri = tof_radius(p[0] * w_scale, p[1] * temp_unit, mass, t) - w;
            }
        },
        &["w0_scaled", "temperature_scaled"],
        &[1.0, if t_scale > 0.0 { 1.0 } else { 0.0 }],
        pts.len(),
        LmOptions::default(),
    )?;
    let scale = [w_scale, temp_unit];
    let mut report = report;
    for (p, s) in report.parameters.iter_mut().zip(scale) {
        p.value *= s;
        p.sigma *= s;
    }
    report.parameters[0].name = "w0_m".into();
    report.parameters[1].name = "temperature_k".into();
    let w0_m = report.parameters[0].value.abs();
    let temperature_k = report.parameters[1].value;
    let temperature_sigma_k = report.parameters[1].sigma;
    Ok(TofFit { report, w0_m, temperature_k, temperature_sigma_k })
}
