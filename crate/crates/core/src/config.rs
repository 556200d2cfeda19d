//! Run configuration: a strict JSON format with unit-suffixed keys.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angular::HalfInt;
use crate::atom::{build_basis, mhz_to_rad, AtomicConstants, ConstantsLibrary, Exclusion, LevelBasis, TransitionKind};
use crate::coupling::{
    build_hamiltonian, BeamSpec, DetuningReference, HamiltonianOptions, PhaseMode, ReferenceTransition,
    DEFAULT_COUPLING_CUTOFF,
};
use crate::error::{Error, Result};
use crate::lindblad::ode::Tolerances;
use crate::lindblad::{
    assemble, simulate_readout, AssemblyOptions, HorizonPolicy, IntegrateOptions, MasterEquationSystem, Pruning,
    Readout,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub description: String,
    /// Constants file; the embedded table (or the environment override) when absent.
    #[serde(default)]
    pub constants_path: Option<PathBuf>,
    pub basis: BasisConfig,
    pub beams: Vec<BeamConfig>,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub species: String,
    pub levels: Vec<String>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
    pub b_field_tesla: f64,
}

/// Named polarizations. `sigma_plus`/`sigma_minus` are `(x ± iy)/√2` in
/// the lab frame; `helicity_plus`/`helicity_minus` are `(e1 ± i e2)/√2`
/// with `e1 × e2 = k`, `e1 = x` for beams along ±z and `e1 ∝ z × k`
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPolarization {
    X,
    Y,
    Z,
    SigmaPlus,
    SigmaMinus,
    HelicityPlus,
    HelicityMinus,
}

/// Cartesian components as `[re, im]` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationComponents {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Polarization {
    Named(NamedPolarization),
    Components(PolarizationComponents),
}

impl Polarization {
    pub fn vector(&self, direction: [f64; 3]) -> Result<[Complex64; 3]> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let s = FRAC_1_SQRT_2;
        Ok(match *self {
            Polarization::Named(n) => match n {
                NamedPolarization::X => [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
                NamedPolarization::Y => [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
                NamedPolarization::Z => [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
                NamedPolarization::SigmaPlus => [c(s, 0.0), c(0.0, s), c(0.0, 0.0)],
                NamedPolarization::SigmaMinus => [c(s, 0.0), c(0.0, -s), c(0.0, 0.0)],
                NamedPolarization::HelicityPlus | NamedPolarization::HelicityMinus => {
                    let (e1, e2) = transverse_frame(direction)?;
                    let sign = if n == NamedPolarization::HelicityPlus { 1.0 } else { -1.0 };
                    std::array::from_fn(|i| c(s * e1[i], sign * s * e2[i]))
                }
            },
            Polarization::Components(p) => [c(p.x[0], p.x[1]), c(p.y[0], p.y[1]), c(p.z[0], p.z[1])],
        })
    }
}

fn transverse_frame(k: [f64; 3]) -> Result<([f64; 3], [f64; 3])> {
    let n = k.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::config("beam direction must be a non-zero finite vector"));
    }
    let k = k.map(|x| x / n);
    let cross =
        |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let e1 = if k[0].abs() < 1e-12 && k[1].abs() < 1e-12 {
        [1.0, 0.0, 0.0]
    } else {
        let v = cross([0.0, 0.0, 1.0], k);
        let m = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.map(|x| x / m)
    };
    Ok((e1, cross(k, e1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub name: String,
    /// Scan axes address beams by group; defaults to the beam name.
    #[serde(default)]
    pub group: Option<String>,
    pub kind: TransitionKind,
    pub lower: String,
    pub upper: String,
    pub direction: [f64; 3],
    pub polarization: Polarization,
    /// Ω/2π on the reference transition.
    pub rabi_mhz: f64,
    /// Δ/2π, positive to the blue.
    pub detuning_mhz: f64,
    #[serde(default)]
    pub phase_rad: f64,
    #[serde(default)]
    pub reference: Option<ReferenceTransition>,
}

impl BeamConfig {
    pub fn group(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.name)
    }

    pub fn to_spec(&self) -> Result<BeamSpec> {
        let pol = self.polarization.vector(self.direction)?;
        let spec = BeamSpec::new(
            self.name.clone(),
            self.kind,
            (&self.lower, &self.upper),
            self.direction,
            pol,
            mhz_to_rad(self.rabi_mhz),
            mhz_to_rad(self.detuning_mhz),
        )
        .map_err(as_config)?
        .with_phase(self.phase_rad);
        Ok(match &self.reference {
            Some(r) => spec.with_reference(r.clone()),
            None => spec,
        })
    }
}

fn default_cutoff_mhz() -> f64 {
    DEFAULT_COUPLING_CUTOFF / std::f64::consts::TAU / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default)]
    pub phase_mode: PhaseMode,
    #[serde(default)]
    pub detuning_reference: DetuningReference,
    #[serde(default = "default_cutoff_mhz")]
    pub coupling_cutoff_mhz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            phase_mode: PhaseMode::default(),
            detuning_reference: DetuningReference::default(),
            coupling_cutoff_mhz: default_cutoff_mhz(),
        }
    }
}

/// Start state; with no `m` the population is spread evenly over the manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub level: String,
    pub f: HalfInt,
    #[serde(default)]
    pub m: Option<HalfInt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_initial")]
    pub initial_state: InitialState,
    #[serde(default = "default_target")]
    pub photon_target: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_horizon_initial")]
    pub horizon_initial_us: f64,
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
    #[serde(default = "default_horizon_cap")]
    pub horizon_cap_ms: f64,
    #[serde(default)]
    pub pruning: Pruning,
    #[serde(default)]
    pub photon_level: Option<String>,
    /// Spacing of the per-state population grid in the trajectory output.
    #[serde(default)]
    pub grid_step_us: Option<f64>,
}

fn default_initial() -> InitialState {
    InitialState { level: "6s1/2".into(), f: HalfInt::int(4), m: Some(HalfInt::ZERO) }
}
fn default_target() -> f64 {
    100.0
}
fn default_rtol() -> f64 {
    Tolerances::default().rtol
}
fn default_atol() -> f64 {
    Tolerances::default().atol
}
fn default_max_steps() -> u64 {
    Tolerances::default().max_steps
}
fn default_horizon_initial() -> f64 {
    HorizonPolicy::default().initial_s * 1e6
}
fn default_horizon_factor() -> f64 {
    HorizonPolicy::default().factor
}
fn default_horizon_cap() -> f64 {
    HorizonPolicy::default().cap_s * 1e3
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            initial_state: default_initial(),
            photon_target: default_target(),
            rtol: default_rtol(),
            atol: default_atol(),
            max_steps: default_max_steps(),
            horizon_initial_us: default_horizon_initial(),
            horizon_factor: default_horizon_factor(),
            horizon_cap_ms: default_horizon_cap(),
            pruning: Pruning::default(),
            photon_level: None,
            grid_step_us: None,
        }
    }
}

/// Which beams a scan expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Dipole beams on the ground line only.
    D2,
    /// Quadrupole beams only.
    E2Only,
    /// Quadrupole beams plus dipole beams on an excited-state line.
    E2Quench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinInfidelity,
    MinTimeAtInfidelityCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    /// `<group>.rabi_mhz`, `<group>.detuning_mhz` or `b_field_tesla`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub mode: ScanMode,
    pub axes: Vec<AxisConfig>,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub infidelity_cap: Option<f64>,
}

fn default_objective() -> Objective {
    Objective::MinInfidelity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    /// Basename for simulation outputs (`.json` summary, `.csv` trajectory).
    #[serde(default = "default_stem")]
    pub stem: String,
    #[serde(default = "default_rows")]
    pub max_trajectory_rows: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_stem() -> String {
    "run".into()
}
fn default_rows() -> usize {
    2000
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_dir(), stem: default_stem(), max_trajectory_rows: default_rows() }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Validation(m) | Error::Assembly(m) => Error::Config(m),
        other => other,
    }
}

/// A parsed config together with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
    pub path: Option<PathBuf>,
}

/// Everything needed to integrate one readout.
pub struct Prepared {
    pub basis: LevelBasis,
    pub system: MasterEquationSystem,
    pub initial: Vec<f64>,
    pub target: f64,
    pub horizon: HorizonPolicy,
    pub options: IntegrateOptions,
}

impl Prepared {
    pub fn run(&self) -> Result<Readout> {
        simulate_readout(&self.system, self.initial.clone(), self.target, &self.horizon, &self.options)
    }
}

impl LoadedConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Self { config, sha256, path: None })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut loaded = Self::parse(&text)?;
        loaded.path = Some(path.to_path_buf());
        Ok(loaded)
    }

    /// Constants path resolved against the config file's directory.
    fn constants_path(&self) -> Option<PathBuf> {
        let p = self.config.constants_path.as_ref()?;
        Some(match (&self.path, p.is_relative()) {
            (Some(cfg), true) => cfg.parent().unwrap_or(Path::new(".")).join(p),
            _ => p.clone(),
        })
    }

    pub fn library(&self) -> Result<ConstantsLibrary> {
        ConstantsLibrary::load(self.constants_path().as_deref())
    }
}

impl RunConfig {
    pub fn hamiltonian_options(&self) -> HamiltonianOptions {
        HamiltonianOptions {
            b_field_tesla: self.basis.b_field_tesla,
            phase_mode: self.frame.phase_mode,
            detuning_reference: self.frame.detuning_reference,
            coupling_cutoff: mhz_to_rad(self.frame.coupling_cutoff_mhz),
        }
    }

    pub fn basis(&self, constants: Arc<AtomicConstants>) -> Result<LevelBasis> {
        if !self.basis.b_field_tesla.is_finite() {
            return Err(Error::config("b_field_tesla must be finite"));
        }
        let levels: Vec<&str> = self.basis.levels.iter().map(String::as_str).collect();
        build_basis(constants, &levels, &self.basis.exclusions).map_err(as_config)
    }

    pub fn beam_specs(&self) -> Result<Vec<BeamSpec>> {
        self.beams.iter().map(BeamConfig::to_spec).collect()
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.simulation.rtol,
            atol: self.simulation.atol,
            max_steps: self.simulation.max_steps,
            ..Tolerances::default()
        }
    }

    fn horizon(&self) -> HorizonPolicy {
        HorizonPolicy {
            initial_s: self.simulation.horizon_initial_us * 1e-6,
            factor: self.simulation.horizon_factor,
            cap_s: self.simulation.horizon_cap_ms * 1e-3,
        }
    }

    fn check_numbers(&self) -> Result<()> {
        let s = &self.simulation;
        let ok = s.photon_target > 0.0
            && s.photon_target.is_finite()
            && s.rtol > 0.0
            && s.atol > 0.0
            && s.horizon_initial_us > 0.0
            && s.horizon_factor > 1.0
            && s.horizon_cap_ms * 1e3 >= s.horizon_initial_us
            && s.grid_step_us.is_none_or(|g| g > 0.0)
            && self.frame.coupling_cutoff_mhz > 0.0;
        if !ok {
            return Err(Error::config(
                "simulation needs photon_target > 0, rtol/atol > 0, horizon_factor > 1, \
                 0 < horizon_initial_us <= horizon_cap_ms, grid_step_us > 0, coupling_cutoff_mhz > 0",
            ));
        }
        if self.beams.iter().any(|b| !b.rabi_mhz.is_finite() || !b.detuning_mhz.is_finite() || !b.phase_rad.is_finite())
        {
            return Err(Error::config("beam parameters must be finite"));
        }
        Ok(())
    }

    fn initial_populations(&self, basis: &LevelBasis) -> Result<Vec<f64>> {
        let s = &self.simulation.initial_state;
        let states: Vec<usize> = match s.m {
            Some(m) => vec![basis.find(&s.level, s.f, m).map_err(as_config)?],
            None => basis
                .states()
                .iter()
                .filter(|st| basis.level_name(st) == s.level && st.f == s.f)
                .map(|st| st.index)
                .collect(),
        };
        if states.is_empty() {
            return Err(Error::config(format!("initial manifold {} f={} not in basis", s.level, s.f)));
        }
        let mut p = vec![0.0; basis.len()];
        let w = 1.0 / states.len() as f64;
        states.iter().for_each(|&i| p[i] = w);
        Ok(p)
    }

    /// Checks the scan section against the beams.
    pub fn check_scan(&self, constants: &AtomicConstants) -> Result<()> {
        let Some(scan) = &self.scan else { return Ok(()) };
        if scan.axes.is_empty() {
            return Err(Error::config("scan needs at least one axis"));
        }
        for a in &scan.axes {
            if a.values.is_empty() {
                return Err(Error::config(format!("scan axis {} has no values", a.parameter)));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("scan axis {} has non-finite values", a.parameter)));
            }
            parse_parameter(&a.parameter, &self.beams)?;
        }
        if scan.objective == Objective::MinTimeAtInfidelityCap && scan.infidelity_cap.is_none_or(|c| !(c > 0.0)) {
            return Err(Error::config("objective min_time_at_infidelity_cap needs a positive infidelity_cap"));
        }
        let ground = constants.ground_level();
        let on_ground = |b: &BeamConfig| constants.level_index(&b.lower).is_ok_and(|l| l == ground);
        let fits = match scan.mode {
            ScanMode::D2 => self.beams.iter().all(|b| b.kind == TransitionKind::E1 && on_ground(b)),
            ScanMode::E2Only => self.beams.iter().all(|b| b.kind == TransitionKind::E2),
            ScanMode::E2Quench => {
                self.beams.iter().any(|b| b.kind == TransitionKind::E2)
                    && self.beams.iter().any(|b| b.kind == TransitionKind::E1)
                    && self.beams.iter().all(|b| b.kind == TransitionKind::E2 || !on_ground(b))
            }
        };
        if !fits {
            return Err(Error::config(format!("beams do not match scan mode {:?}", scan.mode)));
        }
        Ok(())
    }

    /// Builds and assembles everything without integrating. Errors here are
    /// configuration errors.
    pub fn prepare(&self, constants: Arc<AtomicConstants>) -> Result<Prepared> {
        self.check_numbers()?;
        self.check_scan(&constants)?;
        let basis = self.basis(constants)?;
        let beams = self.beam_specs()?;
        let hopts = self.hamiltonian_options();
        build_hamiltonian(&basis, &beams, &hopts).map_err(as_config)?;
        let aopts =
            AssemblyOptions { pruning: self.simulation.pruning, photon_level: self.simulation.photon_level.clone() };
        let system = assemble(&basis, &beams, &hopts, &aopts).map_err(as_config)?;
        let initial = system.initial_state(&self.initial_populations(&basis)?)?;
        let options = IntegrateOptions {
            tolerances: self.tolerances(),
            grid_step: self.simulation.grid_step_us.map(|g| g * 1e-6),
            stop_at_photons: None,
        };
        Ok(Prepared { basis, system, initial, target: self.simulation.photon_target, horizon: self.horizon(), options })
    }

    /// Copy with one scan parameter set.
    pub fn with_parameter(&self, parameter: &str, value: f64) -> Result<RunConfig> {
        let mut out = self.clone();
        match parse_parameter(parameter, &self.beams)? {
            Parameter::BField => out.basis.b_field_tesla = value,
            Parameter::Rabi(g) => out.beams.iter_mut().filter(|b| b.group() == g).for_each(|b| b.rabi_mhz = value),
            Parameter::Detuning(g) => {
                out.beams.iter_mut().filter(|b| b.group() == g).for_each(|b| b.detuning_mhz = value)
            }
        }
        Ok(out)
    }
}

enum Parameter<'a> {
    BField,
    Rabi(&'a str),
    Detuning(&'a str),
}

fn parse_parameter<'a>(p: &'a str, beams: &[BeamConfig]) -> Result<Parameter<'a>> {
    if p == "b_field_tesla" {
        return Ok(Parameter::BField);
    }
    let (group, field) = p.rsplit_once('.').ok_or_else(|| {
        Error::config(format!("scan parameter {p:?}: expected <group>.rabi_mhz or <group>.detuning_mhz"))
    })?;
    if !beams.iter().any(|b| b.group() == group) {
        return Err(Error::config(format!("scan parameter {p:?}: no beam in group {group:?}")));
    }
    match field {
        "rabi_mhz" => Ok(Parameter::Rabi(group)),
        "detuning_mhz" => Ok(Parameter::Detuning(group)),
        _ => Err(Error::config(format!("scan parameter {p:?}: unknown field {field:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "basis": { "species": "cs", "levels": ["6s1/2", "6p3/2"], "b_field_tesla": 1e-4 },
        "beams": [
            { "name": "a", "kind": "E1", "lower": "6s1/2", "upper": "6p3/2",
              "direction": [0, 0, 1], "polarization": "sigma_plus", "rabi_mhz": 2.0, "detuning_mhz": -2.6 }
        ]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = LoadedConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.config.simulation.photon_target, 100.0);
        assert_eq!(c.config.frame.phase_mode, PhaseMode::Origin);
        assert_eq!(c.sha256.len(), 64);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = MINIMAL.replace("\"rabi_mhz\"", "\"rabi\": 1, \"rabi_mhz\"");
        assert!(LoadedConfig::parse(&bad).unwrap_err().is_config());
    }

    #[test]
    fn round_trip_is_identity() {
        let c = LoadedConfig::parse(MINIMAL).unwrap().config;
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn helicity_frames_are_transverse_and_right_handed() {
        for k in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, 2.0, -0.5]] {
            let (e1, e2) = transverse_frame(k).unwrap();
            let n = k.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
            assert!(dot(e1, k).abs() < 1e-12 && dot(e2, k).abs() < 1e-12 && dot(e1, e2).abs() < 1e-12);
            let z = e1[0] * e2[1] - e1[1] * e2[0];
            assert!((z - k[2] / n).abs() < 1e-12);
        }
        let minus_z = Polarization::Named(NamedPolarization::HelicityPlus).vector([0.0, 0.0, -1.0]).unwrap();
        let lab_minus = Polarization::Named(NamedPolarization::SigmaMinus).vector([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(minus_z, lab_minus);
    }

    #[test]
    fn scan_parameters_address_groups() {
        let mut c = LoadedConfig::parse(MINIMAL).unwrap().config;
        c.beams[0].group = Some("d2".into());
        let d = c.with_parameter("d2.detuning_mhz", -5.0).unwrap();
        assert_eq!(d.beams[0].detuning_mhz, -5.0);
        assert!(c.with_parameter("a.rabi_mhz", 1.0).unwrap_err().is_config());
        assert!(c.with_parameter("d2.power_mw", 1.0).unwrap_err().is_config());
    }

    #[test]
    fn prepare_builds_d2_system() {
        let c = LoadedConfig::parse(MINIMAL).unwrap();
        let cs = Arc::new(c.library().unwrap().species(&c.config.basis.species).unwrap());
        let p = c.config.prepare(cs).unwrap();
        assert_eq!(p.basis.len(), 48);
        assert!(p.system.equation_count() > 48);
    }

    #[test]
    fn mixture_initial_state_is_uniform() {
        let mut c = LoadedConfig::parse(MINIMAL).unwrap().config;
        c.simulation.initial_state.m = None;
        let cs = Arc::new(AtomicConstants::cesium());
        let b = c.basis(cs).unwrap();
        let p = c.initial_populations(&b).unwrap();
        assert_eq!(p.iter().filter(|&&x| x > 0.0).count(), 9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
