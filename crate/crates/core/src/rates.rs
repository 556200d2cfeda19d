//! Closed-form rate models: saturated scattering, saturation intensities,
//! the photons-per-Raman-event figure of merit, depumping, detection
//! budgets and the Poisson threshold classifier.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::angular::HalfInt;
use crate::atom::{branching_ratio, AtomicConstants, Transition, TransitionKind, PLANCK, SPEED_OF_LIGHT};
use crate::coupling::effective_rabi;
use crate::error::{Error, Result};

/// Two-level scattering rate `(Γ/2) s / (1 + 4Δ²/Γ² + s)`, photons/s.
pub fn scattering_rate(s: f64, detuning: f64, gamma: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let x = 2.0 * detuning / gamma;
    0.5 * gamma * s / (1.0 + x * x + s)
}

fn line_levels(c: &AtomicConstants, t: &Transition) -> (HalfInt, HalfInt, f64) {
    (c.levels[t.lower].j, c.levels[t.upper].j, c.levels[t.upper].linewidth)
}

/// Polarization- and Zeeman-averaged coupling weight of a manifold pair.
fn pair_weight(c: &AtomicConstants, t: &Transition, f_upper: HalfInt, f_lower: HalfInt) -> f64 {
    let (jl, ju, _) = line_levels(c, t);
    effective_rabi(f_upper, f_lower, t.kind, ju, jl, c.nuclear_spin)
}

/// Saturation intensity of `f_lower -> f_upper` on the line from the ground
/// level of the given kind, W/cm².
///
/// E1 values follow from the linewidth and wavelength for isotropic light.
/// E2 values scale the shipped anchor by the ratio of effective couplings.
pub fn saturation_intensity(
    c: &AtomicConstants,
    kind: TransitionKind,
    f_upper: HalfInt,
    f_lower: HalfInt,
) -> Result<f64> {
    match kind {
        TransitionKind::E1 => {
            let t = c.dipole_line()?;
            let w = pair_weight(c, t, f_upper, f_lower);
            if w == 0.0 {
                return Err(Error::validation(format!("f={f_lower} -> f'={f_upper} is not dipole allowed")));
            }
            let (_, ju, gamma) = line_levels(c, t);
            let gamma_partial = gamma * t.decay_fraction;
            let i_si =
                PI * PLANCK * SPEED_OF_LIGHT * gamma_partial / (t.wavelength.powi(3) * ju.multiplicity() as f64 * w);
            Ok(i_si * 1e-4)
        }
        TransitionKind::E2 => {
            let t = c.quadrupole_line()?;
            let anchor = c
                .e2_anchor
                .ok_or_else(|| Error::config(format!("{}: no E2 saturation anchor in constants", c.species)))?;
            let w_anchor = pair_weight(c, t, anchor.upper_f, anchor.lower_f);
            let w = pair_weight(c, t, f_upper, f_lower);
            if w == 0.0 {
                return Err(Error::validation(format!("f={f_lower} -> f''={f_upper} is not quadrupole allowed")));
            }
            Ok(anchor.intensity * w_anchor / w)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pathway {
    /// Direct dipole excitation from the ground level.
    D2,
    /// Quadrupole excitation followed by the two-step dipole cascade.
    QuadrupoleCascade,
}

/// Cycling and Raman rates for one pathway, plus their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NGamma {
    pub cycling_rate: f64,
    pub raman_rate: f64,
    pub n_gamma: f64,
}

struct Channel {
    /// Detuning of this upper manifold from the cycling one, rad/s.
    offset: f64,
    /// Coupling weight relative to the cycling manifold.
    weight: f64,
    /// Probability of returning to the bright / dark ground manifold.
    to_bright: f64,
    to_dark: f64,
}

fn channels(c: &AtomicConstants, pathway: Pathway) -> Result<(Vec<Channel>, f64)> {
    let i = c.nuclear_spin;
    let (dark, bright) = c.ground_manifolds();
    let g = &c.levels[c.ground_level()];
    let excite = match pathway {
        Pathway::D2 => c.dipole_line()?,
        Pathway::QuadrupoleCascade => c.quadrupole_line()?,
    };
    let up = &c.levels[excite.upper];
    let f_cycle = up.manifolds(i).last().unwrap();
    let w_cycle = pair_weight(c, excite, f_cycle, bright);
    let e_cycle = up.hyperfine_energy(i, f_cycle);

    let returns = |f_up: HalfInt, f_g: HalfInt| -> Result<f64> {
        match pathway {
            Pathway::D2 => Ok(branching_ratio(f_up, up.j, f_g, g.j, i)),
            Pathway::QuadrupoleCascade => {
                let step = c.cascade_line()?;
                let mid = &c.levels[step.lower];
                Ok(mid
                    .manifolds(i)
                    .map(|fm| branching_ratio(f_up, up.j, fm, mid.j, i) * branching_ratio(fm, mid.j, f_g, g.j, i))
                    .sum())
            }
        }
    };
    let mut out = Vec::new();
    for f_up in up.manifolds(i) {
        let w = pair_weight(c, excite, f_up, bright);
        if w == 0.0 {
            continue;
        }
        out.push(Channel {
            offset: up.hyperfine_energy(i, f_up) - e_cycle,
            weight: w / w_cycle,
            to_bright: returns(f_up, bright)?,
            to_dark: returns(f_up, dark)?,
        });
    }
    Ok((out, up.linewidth))
}

/// Ratio of bright-to-bright to bright-to-dark scattering rates.
///
/// `s` is the saturation parameter of the cycling manifold pair and
/// `detuning` is measured from the cycling resonance. `s = 0` gives the
/// low-saturation limit, where the ratio no longer depends on intensity.
pub fn n_gamma(c: &AtomicConstants, pathway: Pathway, s: f64, detuning: f64) -> Result<NGamma> {
    if !(s >= 0.0) || !s.is_finite() || !detuning.is_finite() {
        return Err(Error::validation("saturation parameter must be finite and >= 0"));
    }
    let (chs, gamma) = channels(c, pathway)?;
    let (mut cyc, mut ram) = (0.0, 0.0);
    for ch in &chs {
        let d = detuning - ch.offset;
        let r = if s == 0.0 {
            // slope ds of the scattering rate at s = 0
            let x = 2.0 * d / gamma;
            0.5 * gamma * ch.weight / (1.0 + x * x)
        } else {
            scattering_rate(s * ch.weight, d, gamma)
        };
        cyc += r * ch.to_bright;
        ram += r * ch.to_dark;
    }
    Ok(NGamma { cycling_rate: cyc, raman_rate: ram, n_gamma: cyc / ram })
}

/// One excitation/decay path contributing to depumping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepumpPath {
    pub f_upper: HalfInt,
    pub f_intermediate: HalfInt,
    /// Scattering rate into `f_upper`, photons/s.
    pub excitation_rate: f64,
    pub branching: f64,
    /// Contribution to the depump rate, 1/s.
    pub rate: f64,
}

/// Every path `bright -> f'' -> f' -> dark` for quadrupole excitation at
/// intensity `intensity` (W/cm²) and detuning from the cycling resonance.
pub fn depump_paths(c: &AtomicConstants, intensity: f64, detuning: f64) -> Result<Vec<DepumpPath>> {
    if !(intensity >= 0.0) {
        return Err(Error::validation("intensity must be >= 0"));
    }
    let i = c.nuclear_spin;
    let (dark, bright) = c.ground_manifolds();
    let e2 = c.quadrupole_line()?;
    let step = c.cascade_line()?;
    let up = &c.levels[e2.upper];
    let mid = &c.levels[step.lower];
    let g = &c.levels[c.ground_level()];
    let f_cycle = up.manifolds(i).last().unwrap();
    let e_cycle = up.hyperfine_energy(i, f_cycle);
    let mut out = Vec::new();
    for f_up in up.manifolds(i) {
        if pair_weight(c, e2, f_up, bright) == 0.0 {
            continue;
        }
        let isat = saturation_intensity(c, TransitionKind::E2, f_up, bright)?;
        let d = detuning - (up.hyperfine_energy(i, f_up) - e_cycle);
        let r = scattering_rate(intensity / isat, d, up.linewidth);
        for fm in mid.manifolds(i) {
            let b = branching_ratio(f_up, up.j, fm, mid.j, i) * branching_ratio(fm, mid.j, dark, g.j, i);
            if b > 0.0 {
                out.push(DepumpPath {
                    f_upper: f_up,
                    f_intermediate: fm,
                    excitation_rate: r,
                    branching: b,
                    rate: r * b,
                });
            }
        }
    }
    Ok(out)
}

/// Depumping rate out of the bright ground manifold, 1/s.
pub fn depump_rate(c: &AtomicConstants, intensity: f64, detuning: f64) -> Result<f64> {
    Ok(depump_paths(c, intensity, detuning)?.iter().map(|p| p.rate).sum())
}

/// Probability of at least one depumping event in `duration` seconds.
pub fn depump_probability(rate: f64, duration: f64) -> f64 {
    -(-rate * duration).exp_m1()
}

/// Collection, optics and detector efficiencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    eta_na: f64,
    eta_optics: f64,
    eta_det: f64,
}

impl DetectionChain {
    pub fn new(eta_na: f64, eta_optics: f64, eta_det: f64) -> Result<Self> {
        for (name, v) in [("eta_na", eta_na), ("eta_optics", eta_optics), ("eta_det", eta_det)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { eta_na, eta_optics, eta_det })
    }

    pub fn factors(&self) -> [f64; 3] {
        [self.eta_na, self.eta_optics, self.eta_det]
    }

    pub fn eta(&self) -> f64 {
        self.eta_na * self.eta_optics * self.eta_det
    }
}

/// Expected photoelectrons from `photons` scattered photons.
pub fn detection_budget(chain: &DetectionChain, photons: f64) -> f64 {
    chain.eta() * photons
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    /// Counts `>= threshold` are called bright.
    pub threshold: u64,
    pub error: f64,
    pub dark_error: f64,
    pub bright_error: f64,
}

fn ln_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)
}

/// `P(X < t)` for `t = 0..=n` and `P(X >= t)` for the same range, each summed
/// directly from the mass function to keep small tails accurate.
fn tails(lambda: f64, n: u64) -> (Vec<f64>, Vec<f64>) {
    let kmax = n.max((lambda + 40.0 * lambda.sqrt() + 50.0).ceil() as u64);
    let pmf: Vec<f64> = (0..=kmax).map(|k| ln_pmf(lambda, k).exp()).collect();
    let mut below = vec![0.0; n as usize + 1];
    for t in 1..=n as usize {
        below[t] = below[t - 1] + pmf[t - 1];
    }
    let mut above_all = vec![0.0; kmax as usize + 2];
    for k in (0..=kmax as usize).rev() {
        above_all[k] = above_all[k + 1] + pmf[k];
    }
    (below, above_all[..=n as usize].to_vec())
}

/// Threshold minimizing the prior-weighted misclassification error between
/// Poisson count distributions. Priors default to equal.
pub fn poisson_classifier(lambda_dark: f64, lambda_bright: f64, priors: Option<(f64, f64)>) -> Result<Classification> {
    if !(lambda_dark >= 0.0) || !lambda_bright.is_finite() || lambda_bright <= lambda_dark {
        return Err(Error::validation(format!(
            "need 0 <= lambda_dark < lambda_bright, got {lambda_dark} and {lambda_bright}"
        )));
    }
    let (wd, wb) = priors.unwrap_or((0.5, 0.5));
    if !(wd >= 0.0 && wb >= 0.0) || ((wd + wb) - 1.0).abs() > 1e-12 {
        return Err(Error::validation("priors must be non-negative and sum to 1"));
    }
    let n = (10.0 * lambda_bright).ceil() as u64;
    let (_, dark_above) = tails(lambda_dark, n);
    let (bright_below, _) = tails(lambda_bright, n);
    let mut best: Option<Classification> = None;
    for t in 0..=n {
        let de = dark_above[t as usize];
        let be = bright_below[t as usize];
        let err = wd * de + wb * be;
        if best.is_none_or(|b| err < b.error) {
            best = Some(Classification { threshold: t, error: err, dark_error: de, bright_error: be });
        }
    }
    Ok(best.expect("non-empty threshold range"))
}
