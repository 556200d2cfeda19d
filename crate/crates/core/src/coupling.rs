//! E1/E2 interaction matrix elements and the rotating-frame Hamiltonian.
//!
//! Absolute strengths never come from radial integrals. Each beam carries a
//! Rabi frequency defined on a named reference transition, and every other
//! coupling is that value times a pure angular ratio.

use std::collections::{BTreeMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::angular::{clebsch_gordan, to_spherical, wigner6j, HalfInt, SphericalVector};
use crate::atom::{HyperfineState, LevelBasis, TransitionKind};
use crate::error::{Error, Result};

/// Default cutoff on the manifold-level detuning of a coupling, rad/s.
pub const DEFAULT_COUPLING_CUTOFF: f64 = 2.0 * std::f64::consts::PI * 2.0e9;

const FREQ_TOLERANCE: f64 = 2.0 * std::f64::consts::PI * 1.0;

/// A named Zeeman state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRef {
    pub level: String,
    pub f: HalfInt,
    pub m: HalfInt,
}

/// The transition on which a beam's Rabi frequency is defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTransition {
    pub lower: StateRef,
    pub upper: StateRef,
}

/// How beam phases are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Each beam's coupling on its reference transition is `Ω_ref e^{iφ}`.
    Reference,
    /// Physical field phase at the origin; amplitudes scaled by the modulus of
    /// the reference geometric factor only.
    #[default]
    Origin,
}

/// What a beam detuning is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetuningReference {
    /// Zero-field resonance between the reference manifolds.
    #[default]
    ZeroField,
    /// Resonance with the lowest Zeeman state of the upper reference manifold.
    LowestZeeman,
}

/// One laser beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpec {
    pub name: String,
    pub kind: TransitionKind,
    pub lower_level: String,
    pub upper_level: String,
    direction: [f64; 3],
    polarization: [Complex64; 3],
    /// Ω on the reference transition, rad/s.
    pub rabi: f64,
    /// Detuning from the reference resonance, rad/s.
    pub detuning: f64,
    /// Extra phase, rad.
    pub phase: f64,
    pub reference: Option<ReferenceTransition>,
}

impl BeamSpec {
    /// Normalizes direction and polarization and checks transversality.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        kind: TransitionKind,
        levels: (&str, &str),
        direction: [f64; 3],
        polarization: [Complex64; 3],
        rabi: f64,
        detuning: f64,
    ) -> Result<Self> {
        let name = name.into();
        let kn = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(kn > 0.0) || !kn.is_finite() {
            return Err(Error::validation(format!("beam {name}: zero or non-finite direction")));
        }
        let en = polarization.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(en > 0.0) || !en.is_finite() {
            return Err(Error::validation(format!("beam {name}: zero or non-finite polarization")));
        }
        let direction = direction.map(|x| x / kn);
        let polarization = polarization.map(|z| z / en);
        let dot: Complex64 = direction.iter().zip(&polarization).map(|(k, e)| e * k).sum();
        if dot.norm() > 1e-10 {
            return Err(Error::validation(format!(
                "beam {name}: polarization not transverse to propagation (|k.e| = {:.3e})",
                dot.norm()
            )));
        }
        if !(rabi >= 0.0) || !rabi.is_finite() || !detuning.is_finite() {
            return Err(Error::validation(format!("beam {name}: Rabi frequency must be finite and >= 0")));
        }
        Ok(Self {
            name,
            kind,
            lower_level: levels.0.to_string(),
            upper_level: levels.1.to_string(),
            direction,
            polarization,
            rabi,
            detuning,
            phase: 0.0,
            reference: None,
        })
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_reference(mut self, reference: ReferenceTransition) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn direction(&self) -> [f64; 3] {
        self.direction
    }

    pub fn polarization(&self) -> [Complex64; 3] {
        self.polarization
    }

    /// Same beam with direction and polarization rotated about z by `angle`.
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let k = self.direction;
        let e = self.polarization;
        let mut out = self.clone();
        out.direction = [c * k[0] - s * k[1], s * k[0] + c * k[1], k[2]];
        out.polarization = [e[0] * c - e[1] * s, e[0] * s + e[1] * c, e[2]];
        out
    }

    fn spherical_polarization(&self) -> SphericalVector {
        to_spherical(self.polarization)
    }

    /// Weight of the rank-k spherical tensor component driving `Δm = Q`,
    /// indexed by `Q + 2`.
    fn tensor_weights(&self) -> [Complex64; 5] {
        match self.kind {
            TransitionKind::E1 => {
                let v = self.spherical_polarization();
                [Complex64::default(), v.q_minus1, v.q_0, v.q_plus1, Complex64::default()]
            }
            TransitionKind::E2 => {
                let c = cq_unchecked(self);
                std::array::from_fn(|k| if (k as i32 - 2) % 2 == 0 { c[k] } else { -c[k] })
            }
        }
    }
}

fn cq_unchecked(beam: &BeamSpec) -> [Complex64; 5] {
    let k = to_spherical(beam.direction.map(|x| Complex64::new(x, 0.0)));
    let e = beam.spherical_polarization();
    let pref = (2.0f64 / 3.0).sqrt();
    std::array::from_fn(|idx| {
        let q = idx as i32 - 2;
        let mut sum = Complex64::default();
        for mu in -1..=1 {
            let nu = q - mu;
            if nu.abs() > 1 {
                continue;
            }
            let cg = clebsch_gordan(
                HalfInt::ONE,
                HalfInt::int(mu),
                HalfInt::ONE,
                HalfInt::int(nu),
                HalfInt::int(2),
                HalfInt::int(q),
            );
            sum += cg * k.component(mu) * e.component(nu);
        }
        let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
        sum * sign * pref
    })
}

/// Quadrupole geometry coefficients `c_q`, indexed by `q + 2`, with
/// `(ε·r)(k·r) = r² Σ_q (-1)^q c_q C_{2,q}(r̂)`.
pub fn quadrupole_cq(beam: &BeamSpec) -> Result<[Complex64; 5]> {
    if beam.kind != TransitionKind::E2 {
        return Err(Error::validation(format!("beam {} is not an E2 beam", beam.name)));
    }
    let dot: Complex64 = beam.direction.iter().zip(&beam.polarization).map(|(k, e)| e * k).sum();
    if dot.norm() > 1e-10 {
        return Err(Error::validation(format!("beam {}: non-transverse polarization", beam.name)));
    }
    Ok(cq_unchecked(beam))
}

/// Reduced matrix element `<j_u f_u || T_k || j_l f_l>` in units of
/// `<j_u || T_k || j_l>`, for a tensor acting on the electron only.
pub fn hyperfine_reduced_factor(
    rank: i32,
    j_lower: HalfInt,
    f_lower: HalfInt,
    j_upper: HalfInt,
    f_upper: HalfInt,
    nuclear_spin: HalfInt,
) -> f64 {
    let k = HalfInt::int(rank);
    let six = wigner6j(j_upper, f_upper, nuclear_spin, f_lower, j_lower, k);
    if six == 0.0 {
        return 0.0;
    }
    let phase = (j_upper + nuclear_spin + f_lower + k).phase();
    phase * ((f_lower.multiplicity() * f_upper.multiplicity()) as f64).sqrt() * six
}

/// Zeeman- and polarization-averaged squared coupling
/// `(1/(2f+1)) Σ_{q,m} |<f_u m+q| T_q |f_l m>|²`, in units of the squared
/// fine-structure reduced element. Evaluated by direct summation.
pub fn effective_rabi(
    f_upper: HalfInt,
    f_lower: HalfInt,
    kind: TransitionKind,
    j_upper: HalfInt,
    j_lower: HalfInt,
    nuclear_spin: HalfInt,
) -> f64 {
    let rank = kind.rank();
    let red = hyperfine_reduced_factor(rank, j_lower, f_lower, j_upper, f_upper, nuclear_spin);
    if red == 0.0 {
        return 0.0;
    }
    let norm = (f_upper.multiplicity() as f64).sqrt();
    let mut sum = 0.0;
    for m in f_lower.projections() {
        for q in -rank..=rank {
            let mu = m + HalfInt::int(q);
            if !mu.is_projection_of(f_upper) {
                continue;
            }
            let amp = clebsch_gordan(f_lower, m, HalfInt::int(rank), HalfInt::int(q), f_upper, mu) / norm * red;
            sum += amp * amp;
        }
    }
    sum / f_lower.multiplicity() as f64
}

/// Unnormalized absorption amplitude `lower -> upper` for a beam.
fn geometry(
    beam_w: &[Complex64; 5],
    rank: i32,
    basis: &LevelBasis,
    lower: &HyperfineState,
    upper: &HyperfineState,
) -> Complex64 {
    let q = upper.m - lower.m;
    if !q.is_integer() || q.abs() > HalfInt::int(rank) {
        return Complex64::default();
    }
    let qi = q.twice() / 2;
    let w = beam_w[(qi + 2) as usize];
    if w == Complex64::default() {
        return w;
    }
    let i = basis.constants().nuclear_spin;
    let jl = basis.fine_level(lower).j;
    let ju = basis.fine_level(upper).j;
    let red = hyperfine_reduced_factor(rank, jl, lower.f, ju, upper.f, i);
    if red == 0.0 {
        return Complex64::default();
    }
    let cg = clebsch_gordan(lower.f, lower.m, HalfInt::int(rank), q, upper.f, upper.m);
    w * (cg / (upper.f.multiplicity() as f64).sqrt() * red)
}

/// Sparse couplings `Ω_{upper, lower}` (rad/s) produced by one beam.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingMatrix {
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl CouplingMatrix {
    pub fn get(&self, upper: usize, lower: usize) -> Complex64 {
        self.entries.iter().find(|(u, l, _)| *u == upper && *l == lower).map(|e| e.2).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct ResolvedBeam {
    lower_level: usize,
    upper_level: usize,
    rank: i32,
    weights: [Complex64; 5],
    ref_lower: usize,
    ref_upper: usize,
    ref_geometry: Complex64,
}

fn resolve(basis: &LevelBasis, beam: &BeamSpec) -> Result<ResolvedBeam> {
    let c = basis.constants();
    let lower_level = c.level_index(&beam.lower_level)?;
    let upper_level = c.level_index(&beam.upper_level)?;
    let t = c.transition_between(lower_level, upper_level).ok_or_else(|| {
        Error::config(format!("beam {}: no transition {}-{}", beam.name, beam.lower_level, beam.upper_level))
    })?;
    if t.kind != beam.kind {
        return Err(Error::config(format!(
            "beam {}: {}-{} is an {:?} line, beam is {:?}",
            beam.name, beam.lower_level, beam.upper_level, t.kind, beam.kind
        )));
    }
    for l in [lower_level, upper_level] {
        if !basis.levels().contains(&l) {
            return Err(Error::config(format!("beam {}: level {} not in basis", beam.name, c.levels[l].name)));
        }
    }
    let rank = beam.kind.rank();
    let weights = beam.tensor_weights();
    let (ref_lower, ref_upper) = match &beam.reference {
        Some(r) => {
            let lo = basis.find(&r.lower.level, r.lower.f, r.lower.m)?;
            let up = basis.find(&r.upper.level, r.upper.f, r.upper.m)?;
            if basis.state(lo).level != lower_level || basis.state(up).level != upper_level {
                return Err(Error::config(format!(
                    "beam {}: reference transition is not on the beam's line",
                    beam.name
                )));
            }
            (lo, up)
        }
        None => default_reference(basis, beam, lower_level, upper_level, rank, &weights)?,
    };
    let ref_geometry = geometry(&weights, rank, basis, basis.state(ref_lower), basis.state(ref_upper));
    if ref_geometry.norm() < 1e-14 {
        return Err(Error::config(format!(
            "beam {}: zero coupling on reference transition {} -> {}",
            beam.name,
            basis.label(ref_lower),
            basis.label(ref_upper)
        )));
    }
    Ok(ResolvedBeam { lower_level, upper_level, rank, weights, ref_lower, ref_upper, ref_geometry })
}

/// Largest lower manifold, `m = 0`, to the largest upper manifold, trying
/// `Δm = +1, -1, 0, +2, -2` in turn.
fn default_reference(
    basis: &LevelBasis,
    beam: &BeamSpec,
    lower_level: usize,
    upper_level: usize,
    rank: i32,
    weights: &[Complex64; 5],
) -> Result<(usize, usize)> {
    let c = basis.constants();
    let fl = basis.manifolds(lower_level).into_iter().max();
    let fu = basis.manifolds(upper_level).into_iter().max();
    let (Some(fl), Some(fu)) = (fl, fu) else {
        return Err(Error::config(format!("beam {}: empty manifolds", beam.name)));
    };
    let ml = if fl.is_integer() { HalfInt::ZERO } else { HalfInt::HALF };
    let lo = basis
        .index_of(lower_level, fl, ml)
        .ok_or_else(|| Error::config(format!("beam {}: reference lower state missing", beam.name)))?;
    for q in [1i32, -1, 0, 2, -2] {
        if q.abs() > rank {
            continue;
        }
        let mu = ml + HalfInt::int(q);
        if let Some(up) = basis.index_of(upper_level, fu, mu) {
            if geometry(weights, rank, basis, basis.state(lo), basis.state(up)).norm() > 1e-14 {
                return Ok((lo, up));
            }
        }
    }
    Err(Error::config(format!(
        "beam {}: no default reference transition {} f={} -> {} f={} is driven",
        beam.name, c.levels[lower_level].name, fl, c.levels[upper_level].name, fu
    )))
}

fn beam_couplings(basis: &LevelBasis, beam: &BeamSpec, r: &ResolvedBeam, mode: PhaseMode) -> CouplingMatrix {
    let scale = match mode {
        PhaseMode::Reference => beam.rabi / r.ref_geometry,
        PhaseMode::Origin => Complex64::new(beam.rabi / r.ref_geometry.norm(), 0.0),
    } * Complex64::from_polar(1.0, beam.phase);
    let mut entries = Vec::new();
    let lowers: Vec<&HyperfineState> = basis.states().iter().filter(|s| s.level == r.lower_level).collect();
    for up in basis.states().iter().filter(|s| s.level == r.upper_level) {
        for lo in &lowers {
            let g = geometry(&r.weights, r.rank, basis, lo, up);
            if g.norm() > 1e-15 {
                entries.push((up.index, lo.index, g * scale));
            }
        }
    }
    CouplingMatrix { entries }
}

fn check_kind(beam: &BeamSpec, kind: TransitionKind) -> Result<()> {
    if beam.kind != kind {
        return Err(Error::validation(format!("beam {} is {:?}, expected {kind:?}", beam.name, beam.kind)));
    }
    Ok(())
}

/// All quadrupole couplings of one beam, scaled to its reference transition.
pub fn e2_matrix_elements(basis: &LevelBasis, beam: &BeamSpec, mode: PhaseMode) -> Result<CouplingMatrix> {
    check_kind(beam, TransitionKind::E2)?;
    let r = resolve(basis, beam)?;
    Ok(beam_couplings(basis, beam, &r, mode))
}

/// All dipole couplings of one beam, scaled to its reference transition.
pub fn e1_matrix_elements(basis: &LevelBasis, beam: &BeamSpec, mode: PhaseMode) -> Result<CouplingMatrix> {
    check_kind(beam, TransitionKind::E1)?;
    let r = resolve(basis, beam)?;
    Ok(beam_couplings(basis, beam, &r, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianOptions {
    pub b_field_tesla: f64,
    pub phase_mode: PhaseMode,
    pub detuning_reference: DetuningReference,
    /// Manifold pairs further than this from resonance are not coupled, rad/s.
    pub coupling_cutoff: f64,
}

impl Default for HamiltonianOptions {
    fn default() -> Self {
        Self {
            b_field_tesla: 0.0,
            phase_mode: PhaseMode::default(),
            detuning_reference: DetuningReference::default(),
            coupling_cutoff: DEFAULT_COUPLING_CUTOFF,
        }
    }
}

/// Time-independent Hamiltonian in the frame rotating with the beams, rad/s.
#[derive(Debug, Clone)]
pub struct RotatingHamiltonian {
    pub diagonal: Vec<f64>,
    /// `H_{upper, lower}` entries; the Hermitian partner is implied.
    pub couplings: Vec<(usize, usize, Complex64)>,
    /// Frame offset of each fine level (`None` if no beam touches it),
    /// indexed like `AtomicConstants::levels`.
    pub level_offsets: Vec<Option<f64>>,
}

impl RotatingHamiltonian {
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            return Complex64::new(self.diagonal[i], 0.0);
        }
        for &(u, l, h) in &self.couplings {
            if u == i && l == j {
                return h;
            }
            if u == j && l == i {
                return h.conj();
            }
        }
        Complex64::default()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::from_element(n, n, Complex64::default());
        for (i, d) in self.diagonal.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        for &(u, l, h) in &self.couplings {
            m[(u, l)] += h;
            m[(l, u)] += h.conj();
        }
        m
    }
}

/// Assembles diagonal detunings and summed off-diagonal couplings.
pub fn build_hamiltonian(
    basis: &LevelBasis,
    beams: &[BeamSpec],
    opts: &HamiltonianOptions,
) -> Result<RotatingHamiltonian> {
    let c = basis.constants();
    let i = c.nuclear_spin;
    let resolved: Vec<ResolvedBeam> = beams.iter().map(|b| resolve(basis, b)).collect::<Result<_>>()?;

    // Offset r_U - r_L implied by each beam: hf_l - hf_u - Δ - z.
    let mut steps = Vec::with_capacity(beams.len());
    for (beam, r) in beams.iter().zip(&resolved) {
        let lo = basis.state(r.ref_lower);
        let up = basis.state(r.ref_upper);
        let hf_l = c.levels[lo.level].hyperfine_energy(i, lo.f);
        let hf_u = c.levels[up.level].hyperfine_energy(i, up.f);
        let z = match opts.detuning_reference {
            DetuningReference::ZeroField => 0.0,
            DetuningReference::LowestZeeman => basis
                .states()
                .iter()
                .filter(|s| s.level == up.level && s.f == up.f)
                .map(|s| basis.zeeman_shift(s.index, opts.b_field_tesla))
                .fold(f64::INFINITY, f64::min),
        };
        steps.push((r.lower_level, r.upper_level, hf_l - hf_u - beam.detuning - z, lo.f));
    }

    let mut offsets: Vec<Option<f64>> = vec![None; c.levels.len()];
    for &seed in basis.levels() {
        if offsets[seed].is_some() {
            continue;
        }
        let Some(&(_, _, _, f_ref)) = steps.iter().find(|s| s.0 == seed) else {
            continue;
        };
        offsets[seed] = Some(-c.levels[seed].hyperfine_energy(i, f_ref));
        let mut queue = VecDeque::from([seed]);
        while let Some(a) = queue.pop_front() {
            let ra = offsets[a].unwrap();
            for (k, &(lo, up, d, _)) in steps.iter().enumerate() {
                let (b, rb) = if lo == a {
                    (up, ra + d)
                } else if up == a {
                    (lo, ra - d)
                } else {
                    continue;
                };
                match offsets[b] {
                    None => {
                        offsets[b] = Some(rb);
                        queue.push_back(b);
                    }
                    Some(prev) if (prev - rb).abs() > FREQ_TOLERANCE => {
                        return Err(Error::config(format!(
                            "beam {} is inconsistent with the rotating frame of level {} (offset mismatch {:.3} MHz)",
                            beams[k].name,
                            c.levels[b].name,
                            (prev - rb) / (2.0 * std::f64::consts::PI * 1e6)
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
    }

    let diagonal: Vec<f64> = basis
        .states()
        .iter()
        .map(|s| basis.state_energy(s.index, opts.b_field_tesla) + offsets[s.level].unwrap_or(0.0))
        .collect();

    let mut summed: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    for (beam, r) in beams.iter().zip(&resolved) {
        let m = beam_couplings(basis, beam, r, opts.phase_mode);
        let (ru, rl) = (offsets[r.upper_level].unwrap_or(0.0), offsets[r.lower_level].unwrap_or(0.0));
        for (u, l, omega) in m.entries {
            let detuning = basis.hyperfine_energy(u) + ru - basis.hyperfine_energy(l) - rl;
            if detuning.abs() > opts.coupling_cutoff {
                continue;
            }
            *summed.entry((u, l)).or_default() += -0.5 * omega;
        }
    }
    let couplings = summed.into_iter().filter(|(_, h)| h.norm() > 0.0).map(|((u, l), h)| (u, l, h)).collect();
    Ok(RotatingHamiltonian { diagonal, couplings, level_offsets: offsets })
}
