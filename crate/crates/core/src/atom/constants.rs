use std::collections::{HashMap, VecDeque};
use std::f64::consts::TAU;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angular::HalfInt;
use crate::error::{Error, Result};

/// Environment variable naming a constants file that replaces the embedded one.
pub const CONSTANTS_ENV: &str = "QREADOUT_CONSTANTS";

const EMBEDDED: &str = include_str!("../../data/constants.json");

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const HBAR: f64 = PLANCK / TAU;
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Converts a linear frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_rad(mhz: f64) -> f64 {
    mhz * 1e6 * TAU
}

pub fn rad_to_mhz(rad_per_s: f64) -> f64 {
    rad_per_s / TAU / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    E1,
    E2,
}

impl TransitionKind {
    pub fn rank(self) -> i32 {
        match self {
            TransitionKind::E1 => 1,
            TransitionKind::E2 => 2,
        }
    }
}

impl FromStr for TransitionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(TransitionKind::E1),
            "E2" => Ok(TransitionKind::E2),
            other => Err(Error::config(format!("unknown transition kind {other:?}"))),
        }
    }
}

// On-disk schema. Units live in the key names.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    schema_version: u32,
    #[serde(default)]
    #[allow(dead_code)]
    description: String,
    species: Vec<FileSpecies>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpecies {
    tag: String,
    #[serde(default)]
    aliases: Vec<String>,
    nuclear_spin: HalfInt,
    mass_amu: f64,
    ground_splitting_hz: f64,
    levels: Vec<FileLevel>,
    transitions: Vec<FileTransition>,
    #[serde(default)]
    e2_saturation_anchor: Option<FileAnchor>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLevel {
    name: String,
    linewidth_mhz: f64,
    a_hfs_mhz: f64,
    b_hfs_mhz: f64,
    g_j: f64,
    #[serde(default)]
    source: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTransition {
    lower: String,
    upper: String,
    kind: TransitionKind,
    wavelength_nm: f64,
    decay_fraction: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAnchor {
    lower_f: HalfInt,
    upper_f: HalfInt,
    intensity_w_per_cm2: f64,
}

/// A fine-structure level `n l_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineLevel {
    pub name: String,
    pub n: u32,
    pub l: u32,
    pub j: HalfInt,
    /// Radiative linewidth, rad/s.
    pub linewidth: f64,
    /// Magnetic-dipole hyperfine constant, rad/s.
    pub a_hfs: f64,
    /// Electric-quadrupole hyperfine constant, rad/s.
    pub b_hfs: f64,
    pub g_j: f64,
    /// Fine-structure energy above the lowest level, rad/s.
    pub energy: f64,
    pub source: String,
}

impl FineLevel {
    /// Hyperfine energy of manifold `f` relative to the level centroid, rad/s.
    pub fn hyperfine_energy(&self, nuclear_spin: HalfInt, f: HalfInt) -> f64 {
        let (i, j) = (nuclear_spin, self.j);
        let k = f.casimir() - i.casimir() - j.casimir();
        let mut e = 0.5 * self.a_hfs * k;
        if i.twice() >= 2 && j.twice() >= 2 && self.b_hfs != 0.0 {
            let (iv, jv) = (i.value(), j.value());
            let num = 1.5 * k * (k + 1.0) - 2.0 * i.casimir() * j.casimir();
            let den = 4.0 * iv * (2.0 * iv - 1.0) * jv * (2.0 * jv - 1.0);
            e += self.b_hfs * num / den;
        }
        e
    }

    /// Landé factor of manifold `f`, nuclear g-factor neglected.
    pub fn g_f(&self, nuclear_spin: HalfInt, f: HalfInt) -> f64 {
        if f == HalfInt::ZERO {
            return 0.0;
        }
        let num = f.casimir() + self.j.casimir() - nuclear_spin.casimir();
        self.g_j * num / (2.0 * f.casimir())
    }

    /// Allowed hyperfine manifolds `|I-j| ..= I+j`.
    pub fn manifolds(&self, nuclear_spin: HalfInt) -> impl Iterator<Item = HalfInt> {
        HalfInt::coupled_range(nuclear_spin, self.j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub kind: TransitionKind,
    /// Vacuum wavelength, m.
    pub wavelength: f64,
    /// Fraction of the upper level's linewidth decaying along this transition.
    pub decay_fraction: f64,
}

impl Transition {
    /// Angular wavenumber, 1/m.
    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationAnchor {
    pub lower_f: HalfInt,
    pub upper_f: HalfInt,
    /// W/cm^2.
    pub intensity: f64,
}

/// Constants for one species, in SI/angular units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicConstants {
    pub species: String,
    pub nuclear_spin: HalfInt,
    /// kg.
    pub mass: f64,
    /// Ground hyperfine splitting, rad/s.
    pub ground_splitting: f64,
    pub levels: Vec<FineLevel>,
    pub transitions: Vec<Transition>,
    pub e2_anchor: Option<SaturationAnchor>,
    /// sha256 of the constants file the values came from.
    pub checksum: String,
}

impl AtomicConstants {
    /// Cs-133 from the embedded constants file.
    pub fn cesium() -> Self {
        ConstantsLibrary::embedded().species("cs133").expect("embedded cs133")
    }

    /// Rb-87 from the embedded constants file.
    pub fn rubidium87() -> Self {
        ConstantsLibrary::embedded().species("rb87").expect("embedded rb87")
    }

    pub fn level_index(&self, name: &str) -> Result<usize> {
        let want = normalize_level(name);
        self.levels
            .iter()
            .position(|l| normalize_level(&l.name) == want)
            .ok_or_else(|| Error::config(format!("level {name:?} not defined for {}", self.species)))
    }

    pub fn level(&self, name: &str) -> Result<&FineLevel> {
        Ok(&self.levels[self.level_index(name)?])
    }

    /// The lowest-energy level.
    pub fn ground_level(&self) -> usize {
        self.levels.iter().enumerate().min_by(|a, b| a.1.energy.total_cmp(&b.1.energy)).map(|(k, _)| k).unwrap_or(0)
    }

    pub fn transition_between(&self, a: usize, b: usize) -> Option<&Transition> {
        self.transitions.iter().find(|t| (t.lower == a && t.upper == b) || (t.lower == b && t.upper == a))
    }

    /// The E1 line from the ground level (the D2-like cycling line).
    pub fn dipole_line(&self) -> Result<&Transition> {
        let g = self.ground_level();
        self.transitions
            .iter()
            .find(|t| t.lower == g && t.kind == TransitionKind::E1)
            .ok_or_else(|| Error::config(format!("{}: no E1 line from the ground level", self.species)))
    }

    /// The E2 line from the ground level.
    pub fn quadrupole_line(&self) -> Result<&Transition> {
        let g = self.ground_level();
        self.transitions
            .iter()
            .find(|t| t.lower == g && t.kind == TransitionKind::E2)
            .ok_or_else(|| Error::config(format!("{}: no E2 line from the ground level", self.species)))
    }

    /// The E1 line the quadrupole upper level decays along.
    pub fn cascade_line(&self) -> Result<&Transition> {
        let upper = self.quadrupole_line()?.upper;
        self.transitions
            .iter()
            .find(|t| t.upper == upper && t.kind == TransitionKind::E1)
            .ok_or_else(|| Error::config(format!("{}: no E1 decay from the E2 upper level", self.species)))
    }

    /// Ground manifolds `(lower, upper)` in energy order.
    pub fn ground_manifolds(&self) -> (HalfInt, HalfInt) {
        let g = &self.levels[self.ground_level()];
        let mut fs: Vec<HalfInt> = g.manifolds(self.nuclear_spin).collect();
        fs.sort_by(|a, b| {
            g.hyperfine_energy(self.nuclear_spin, *a).total_cmp(&g.hyperfine_energy(self.nuclear_spin, *b))
        });
        (fs[0], *fs.last().unwrap())
    }
}

fn normalize_level(name: &str) -> String {
    name.chars().filter(|c| !c.is_whitespace() && *c != '_').collect::<String>().to_ascii_lowercase()
}

/// Parses `"6p3/2"` into `(n, l, j)`.
fn parse_level_name(name: &str) -> Result<(u32, u32, HalfInt)> {
    let bad = || Error::config(format!("cannot parse level name {name:?} (expected e.g. 6p3/2)"));
    let digits: String = name.chars().take_while(|c| c.is_ascii_digit()).collect();
    let n: u32 = digits.parse().map_err(|_| bad())?;
    let rest = &name[digits.len()..];
    let mut chars = rest.chars();
    let l = match chars.next().map(|c| c.to_ascii_lowercase()) {
        Some('s') => 0,
        Some('p') => 1,
        Some('d') => 2,
        Some('f') => 3,
        _ => return Err(bad()),
    };
    let j: HalfInt = chars.as_str().parse().map_err(|_| bad())?;
    if (2 * l as i32 - j.twice()).abs() != 1 {
        return Err(bad());
    }
    Ok((n, l, j))
}

/// All species from one constants file.
#[derive(Debug, Clone)]
pub struct ConstantsLibrary {
    species: Vec<(Vec<String>, AtomicConstants)>,
    checksum: String,
}

impl ConstantsLibrary {
    pub fn embedded() -> Self {
        Self::parse(EMBEDDED).expect("embedded constants file is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    /// Explicit path, else the environment override, else the embedded file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_path(p),
            None => match std::env::var_os(CONSTANTS_ENV) {
                Some(p) if !p.is_empty() => Self::from_path(p),
                _ => Ok(Self::embedded()),
            },
        }
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn species(&self, tag: &str) -> Result<AtomicConstants> {
        let want = tag.to_ascii_lowercase();
        self.species
            .iter()
            .find(|(names, _)| names.contains(&want))
            .map(|(_, c)| c.clone())
            .ok_or_else(|| Error::config(format!("unknown species {tag:?}")))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.species.iter().map(|(_, c)| c.species.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let checksum = hex::encode(Sha256::digest(text.as_bytes()));
        let root: FileRoot = serde_json::from_str(text).map_err(|e| Error::config(format!("constants file: {e}")))?;
        if root.schema_version != 1 {
            return Err(Error::config(format!("constants file schema_version {} not supported", root.schema_version)));
        }
        let species = root
            .species
            .into_iter()
            .map(|s| {
                let mut names: Vec<String> = s.aliases.iter().map(|a| a.to_ascii_lowercase()).collect();
                names.push(s.tag.to_ascii_lowercase());
                convert_species(s, &checksum).map(|c| (names, c))
            })
            .collect::<Result<_>>()?;
        Ok(Self { species, checksum })
    }
}

fn convert_species(s: FileSpecies, checksum: &str) -> Result<AtomicConstants> {
    let tag = s.tag.clone();
    let bad = |msg: String| Error::config(format!("{tag}: {msg}"));
    if s.nuclear_spin.twice() < 0 {
        return Err(bad("negative nuclear spin".into()));
    }
    if !(s.mass_amu > 0.0) || !(s.ground_splitting_hz > 0.0) {
        return Err(bad("mass and ground splitting must be positive".into()));
    }
    let mut levels = Vec::with_capacity(s.levels.len());
    for l in &s.levels {
        let (n, ll, j) = parse_level_name(&l.name)?;
        if !(l.linewidth_mhz >= 0.0) || !l.a_hfs_mhz.is_finite() || !l.b_hfs_mhz.is_finite() {
            return Err(bad(format!("level {}: invalid linewidth or hyperfine constants", l.name)));
        }
        levels.push(FineLevel {
            name: l.name.clone(),
            n,
            l: ll,
            j,
            linewidth: mhz_to_rad(l.linewidth_mhz),
            a_hfs: mhz_to_rad(l.a_hfs_mhz),
            b_hfs: mhz_to_rad(l.b_hfs_mhz),
            g_j: l.g_j,
            energy: 0.0,
            source: l.source.clone(),
        });
    }
    let find = |name: &str| {
        let want = normalize_level(name);
        levels
            .iter()
            .position(|l| normalize_level(&l.name) == want)
            .ok_or_else(|| bad(format!("transition references unknown level {name:?}")))
    };
    let mut transitions = Vec::with_capacity(s.transitions.len());
    for t in &s.transitions {
        let (lower, upper) = (find(&t.lower)?, find(&t.upper)?);
        if !(t.wavelength_nm > 0.0) || !(0.0..=1.0).contains(&t.decay_fraction) {
            return Err(bad(format!("transition {}-{}: invalid wavelength or decay fraction", t.lower, t.upper)));
        }
        transitions.push(Transition {
            lower,
            upper,
            kind: t.kind,
            wavelength: t.wavelength_nm * 1e-9,
            decay_fraction: t.decay_fraction,
        });
    }
    for (k, l) in levels.iter().enumerate() {
        let decays = transitions.iter().any(|t| t.upper == k && t.decay_fraction > 0.0);
        if decays && !(l.linewidth > 0.0) {
            return Err(bad(format!("level {} decays but has zero linewidth", l.name)));
        }
    }

    // Fine-structure energies along a spanning tree of the transition graph,
    // rooted at the first level. Only used for ordering.
    let mut energy: Vec<Option<f64>> = vec![None; levels.len()];
    if !levels.is_empty() {
        energy[0] = Some(0.0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            let ea = energy[a].unwrap();
            for t in &transitions {
                let w = TAU * SPEED_OF_LIGHT / t.wavelength;
                let (b, eb) = if t.lower == a {
                    (t.upper, ea + w)
                } else if t.upper == a {
                    (t.lower, ea - w)
                } else {
                    continue;
                };
                if energy[b].is_none() {
                    energy[b] = Some(eb);
                    queue.push_back(b);
                }
            }
        }
    }
    let min = energy.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    for (l, e) in levels.iter_mut().zip(&energy) {
        l.energy = e.ok_or_else(|| bad(format!("level {} not connected by any transition", l.name)))? - min;
    }

    let e2_anchor = s.e2_saturation_anchor.map(|a| SaturationAnchor {
        lower_f: a.lower_f,
        upper_f: a.upper_f,
        intensity: a.intensity_w_per_cm2,
    });
    Ok(AtomicConstants {
        species: s.tag,
        nuclear_spin: s.nuclear_spin,
        mass: s.mass_amu * ATOMIC_MASS_UNIT,
        ground_splitting: s.ground_splitting_hz * TAU,
        levels,
        transitions,
        e2_anchor,
        checksum: checksum.to_string(),
    })
}

/// Summary of the hyperfine data actually used, for output metadata.
pub fn hyperfine_summary(c: &AtomicConstants) -> HashMap<String, [f64; 3]> {
    c.levels
        .iter()
        .map(|l| (l.name.clone(), [rad_to_mhz(l.a_hfs), rad_to_mhz(l.b_hfs), rad_to_mhz(l.linewidth)]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_file_loads() {
        let lib = ConstantsLibrary::embedded();
        assert_eq!(lib.checksum().len(), 64);
        let cs = lib.species("Cs").unwrap();
        assert_eq!(cs.nuclear_spin, HalfInt::from_twice(7));
        let rb = lib.species("87Rb").unwrap();
        assert_eq!(rb.nuclear_spin, HalfInt::from_twice(3));
        assert!(lib.species("k40").is_err());
    }

    #[test]
    fn cesium_linewidths() {
        let cs = AtomicConstants::cesium();
        let d = cs.level("5d5/2").unwrap();
        assert!((d.linewidth - TAU * 118e3).abs() < 1e-6);
        let p = cs.level("6p3/2").unwrap();
        assert!((p.linewidth - TAU * 5.23e6).abs() < 1e-3);
    }

    #[test]
    fn level_ordering_from_wavelengths() {
        let cs = AtomicConstants::cesium();
        let s = cs.level("6s1/2").unwrap().energy;
        let p = cs.level("6p3/2").unwrap().energy;
        let d = cs.level("5d5/2").unwrap().energy;
        assert_eq!(s, 0.0);
        assert!(s < p && p < d);
        assert_eq!(cs.ground_level(), cs.level_index("6s1/2").unwrap());
    }

    #[test]
    fn ground_splitting_matches_hyperfine_formula() {
        let cs = AtomicConstants::cesium();
        let g = cs.level("6s1/2").unwrap();
        let i = cs.nuclear_spin;
        let split = g.hyperfine_energy(i, HalfInt::int(4)) - g.hyperfine_energy(i, HalfInt::int(3));
        assert!((split / TAU - 9_192_631_770.0).abs() < 1.0, "{}", split / TAU);
        assert!((cs.ground_splitting / TAU - 9_192_631_770.0).abs() < 1e-3);
    }

    #[test]
    fn landé_factors() {
        let cs = AtomicConstants::cesium();
        let d = cs.level("5d5/2").unwrap();
        assert!((d.g_f(cs.nuclear_spin, HalfInt::int(6)) - 0.5).abs() < 1e-12);
        let g = cs.level("6s1/2").unwrap();
        let g4 = g.g_f(cs.nuclear_spin, HalfInt::int(4));
        let g3 = g.g_f(cs.nuclear_spin, HalfInt::int(3));
        assert!((g4 + g3).abs() < 1e-12 && (g4 - g.g_j / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ConstantsLibrary::parse("{}").is_err());
        let text = EMBEDDED.replace("\"g_j\": 1.3340", "\"g_j\": 1.3340, \"extra\": 1");
        assert!(ConstantsLibrary::parse(&text).is_err());
        let text = EMBEDDED.replace("\"upper\": \"6p3/2\"", "\"upper\": \"7p3/2\"");
        assert!(ConstantsLibrary::parse(&text).is_err());
    }

    #[test]
    fn level_names() {
        assert_eq!(parse_level_name("5d5/2").unwrap(), (5, 2, HalfInt::from_twice(5)));
        assert!(parse_level_name("5d1/2").is_err());
        assert!(parse_level_name("d5/2").is_err());
    }
}
