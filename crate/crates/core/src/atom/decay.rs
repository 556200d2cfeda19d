use serde::Serialize;

use super::basis::LevelBasis;
use super::constants::TransitionKind;
use crate::angular::{clebsch_gordan, wigner6j, HalfInt};

/// Spontaneous decay from basis state `upper` to `lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayChannel {
    pub upper: usize,
    pub lower: usize,
    /// rad/s.
    pub rate: f64,
}

/// Dipole branching ratio from upper manifold `f_upper` (of a level with
/// angular momentum `j_upper`) to lower manifold `f_lower`.
pub fn branching_ratio(
    f_upper: HalfInt,
    j_upper: HalfInt,
    f_lower: HalfInt,
    j_lower: HalfInt,
    nuclear_spin: HalfInt,
) -> f64 {
    let w = wigner6j(j_lower, nuclear_spin, f_lower, f_upper, HalfInt::ONE, j_upper);
    (j_upper.multiplicity() * f_lower.multiplicity()) as f64 * w * w
}

/// Zeeman-resolved decay table for every E1 line with a nonzero decay
/// fraction whose two levels are both in the basis.
pub fn decay_channels(basis: &LevelBasis) -> Vec<DecayChannel> {
    let c = basis.constants();
    let i = c.nuclear_spin;
    let mut out = Vec::new();
    for t in &c.transitions {
        if t.kind != TransitionKind::E1 || t.decay_fraction == 0.0 {
            continue;
        }
        if !basis.levels().contains(&t.upper) || !basis.levels().contains(&t.lower) {
            continue;
        }
        let up = &c.levels[t.upper];
        let lo = &c.levels[t.lower];
        let gamma = up.linewidth * t.decay_fraction;
        for u in basis.states().iter().filter(|s| s.level == t.upper) {
            for l in basis.states().iter().filter(|s| s.level == t.lower) {
                let q = u.m - l.m;
                if q.abs().twice() > 2 {
                    continue;
                }
                let cg = clebsch_gordan(l.f, l.m, HalfInt::ONE, q, u.f, u.m);
                if cg == 0.0 {
                    continue;
                }
                let b = branching_ratio(u.f, up.j, l.f, lo.j, i);
                let rate = gamma * b * cg * cg;
                if rate > 0.0 {
                    out.push(DecayChannel { upper: u.index, lower: l.index, rate });
                }
            }
        }
    }
    out
}

/// Total decay rate out of each basis state, rad/s.
pub fn total_decay_rates(basis: &LevelBasis, channels: &[DecayChannel]) -> Vec<f64> {
    let mut total = vec![0.0; basis.len()];
    for ch in channels {
        total[ch.upper] += ch.rate;
    }
    total
}
