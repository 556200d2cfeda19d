//! Ramsey fringes `n(φ) = ½[1 + A cos(φ + φ_t)]` per delay, then the
//! contrast envelope `A(t) = A₀ e^{-t/T₂*}`.

use std::f64::consts::PI;

use serde::Serialize;

use super::lm::{canonical, levenberg_marquardt, FitReport, LmOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeFit {
    pub delay_s: f64,
    pub contrast: f64,
    pub contrast_sigma: f64,
    pub phase_rad: f64,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamseyFit {
    pub fringes: Vec<FringeFit>,
    /// Delays excluded from the envelope, with the reason.
    pub excluded: Vec<(f64, String)>,
    pub envelope: Option<FitReport>,
    pub t2_s: Option<f64>,
    pub t2_sigma_s: Option<f64>,
    pub identifiable: bool,
}

fn wrap(phi: f64) -> f64 {
    let x = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x + 2.0 * PI
    } else {
        x
    }
}

/// Fits one delay's `(phase, population)` points.
pub fn fit_fringe(delay_s: f64, points: &[(f64, f64)]) -> Result<FringeFit> {
    if points.len() < 4 {
        return Err(Error::validation(format!("delay {delay_s:e}: need at least 4 phase points")));
    }
    let pts = canonical(points.to_vec(), |p| *p);
    let span = pts.last().unwrap().0 - pts[0].0;
    if !(span >= PI) {
        return Err(Error::validation(format!("delay {delay_s:e}: phases span less than half a period")));
    }
    // linear seed: 2n − 1 = a cos φ − b sin φ with a = A cos φ_t, b = A sin φ_t
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(phi, n) in &pts {
        let (s, c) = phi.sin_cos();
        let y = 2.0 * n - 1.0;
        scc += c * c;
        sss += s * s;
        scs += c * s;
        syc += y * c;
        sys -= y * s;
    }
    let det = scc * sss - scs * scs;
    let (a, b) =
        if det.abs() > 1e-12 { ((syc * sss - sys * scs) / det, (sys * scc - syc * scs) / det) } else { (0.0, 0.0) };
    let seed = [(a * a + b * b).sqrt(), b.atan2(a)];
    let mut report = levenberg_marquardt(
        |p, r| {
            for (ri, &(phi, n)) in r.iter_mut().zip(&pts) {
                *ri = 0.5 * (1.0 + p[0] * (phi + p[1]).cos()) - n;
            }
        },
        &["contrast", "phase_rad"],
        &seed,
        pts.len(),
        LmOptions::default(),
    )?;
    let (mut amp, mut phase) = (report.parameters[0].value, report.parameters[1].value);
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    phase = wrap(phase);
    report.parameters[0].value = amp;
    report.parameters[1].value = phase;
    let contrast_sigma = report.parameters[0].sigma;
    Ok(FringeFit { delay_s, contrast: amp, contrast_sigma, phase_rad: phase, report })
}

/// Fits `(delay_s, phase_rad, population)` samples grouped by delay.
pub fn fit_ramsey(samples: &[(f64, f64, f64)]) -> Result<RamseyFit> {
    if samples.iter().any(|s| !s.0.is_finite() || !s.1.is_finite() || !s.2.is_finite()) {
        return Err(Error::validation("Ramsey samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let mut fringes = Vec::new();
    let mut excluded = Vec::new();
    for group in sorted.chunk_by(|a, b| a.0 == b.0) {
        let delay = group[0].0;
        let pts: Vec<(f64, f64)> = group.iter().map(|s| (s.1, s.2)).collect();
        match fit_fringe(delay, &pts) {
            Ok(f) => fringes.push(f),
            Err(e) => excluded.push((delay, e.to_string())),
        }
    }
    if fringes.is_empty() {
        return Err(Error::Fit("no delay has usable phase coverage".into()));
    }
    let max_c = fringes.iter().map(|f| f.contrast).fold(0.0, f64::max);
    let unidentifiable = RamseyFit {
        fringes: fringes.clone(),
        excluded: excluded.clone(),
        envelope: None,
        t2_s: None,
        t2_sigma_s: None,
        identifiable: false,
    };
    if fringes.len() < 2 || max_c < 1e-6 {
        return Ok(unidentifiable);
    }
    // envelope seed from the first and last usable contrasts
    let (f0, f1) = (&fringes[0], fringes.last().unwrap());
    let k0 = if f0.contrast > 0.0 && f1.contrast > 0.0 && f1.delay_s > f0.delay_s {
        ((f0.contrast / f1.contrast).ln() / (f1.delay_s - f0.delay_s)).max(1e-12)
    } else {
        1.0 / f1.delay_s.max(1e-12)
    };
    let a0 = f0.contrast * (k0 * f0.delay_s).exp();
    let t_span = f1.delay_s.max(1e-12);
    let envelope = levenberg_marquardt(
        |p, r| {
            for (ri, f) in r.iter_mut().zip(&fringes) {
                *ri = p[0] * (-p[1] * f.delay_s / t_span).exp() - f.contrast;
            }
        },
        &["contrast_at_zero", "rate_scaled"],
        &[a0, k0 * t_span],
        fringes.len(),
        LmOptions::default(),
    )?;
    let k = envelope.parameters[1].value / t_span;
    let sk = envelope.parameters[1].sigma / t_span;
    if !(k > 0.0) || !k.is_finite() {
        return Ok(RamseyFit { envelope: Some(envelope), ..unidentifiable });
    }
    Ok(RamseyFit {
        fringes,
        excluded,
        envelope: Some(envelope),
        t2_s: Some(1.0 / k),
        t2_sigma_s: Some(sk / (k * k)),
        identifiable: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fringe(delay: f64, a: f64, phi_t: f64) -> Vec<(f64, f64, f64)> {
        (0..16).map(|k| k as f64 * 2.0 * PI / 16.0).map(|p| (delay, p, 0.5 * (1.0 + a * (p + phi_t).cos()))).collect()
    }

    #[test]
    fn single_delay_exact() {
        let pts: Vec<(f64, f64)> = fringe(1e-3, 0.5, 1.0).iter().map(|s| (s.1, s.2)).collect();
        let f = fit_fringe(1e-3, &pts).unwrap();
        assert!((f.contrast - 0.5).abs() < 1e-9);
        assert!((f.phase_rad - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_t2() {
        let s: Vec<_> = (0..8)
            .flat_map(|i| {
                let t = i as f64 * 2e-3;
                fringe(t, 0.95 * (-t / 7.6e-3).exp(), 0.3 * i as f64)
            })
            .collect();
        let fit = fit_ramsey(&s).unwrap();
        assert!(fit.identifiable);
        assert!((fit.t2_s.unwrap() - 7.6e-3).abs() < 7.6e-9);
    }

    #[test]
    fn zero_contrast_is_unidentifiable() {
        let s: Vec<_> = (0..4).flat_map(|i| fringe(i as f64 * 1e-3, 0.0, 0.0)).collect();
        let fit = fit_ramsey(&s).unwrap();
        assert!(!fit.identifiable);
        assert!(fit.fringes.iter().all(|f| f.contrast < 1e-9));
    }

    #[test]
    fn narrow_phase_coverage_is_excluded() {
        let mut s: Vec<_> = (0..4).flat_map(|i| fringe(i as f64 * 1e-3, 0.8 * (-(i as f64)).exp(), 0.0)).collect();
        s.extend([(9e-3, 0.0, 0.5), (9e-3, 0.1, 0.5), (9e-3, 0.2, 0.5), (9e-3, 0.3, 0.5)]);
        let fit = fit_ramsey(&s).unwrap();
        assert_eq!(fit.excluded.len(), 1);
        assert_eq!(fit.fringes.len(), 4);
    }
}
