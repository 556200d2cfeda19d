use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::constants::{AtomicConstants, FineLevel, BOHR_MAGNETON, HBAR};
use crate::angular::HalfInt;
use crate::error::{Error, Result};

/// One `|level, f, m_f>` state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HyperfineState {
    /// Index into `AtomicConstants::levels`.
    pub level: usize,
    pub f: HalfInt,
    pub m: HalfInt,
    /// Position in the basis.
    pub index: usize,
}

/// A hyperfine manifold excluded from the basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    pub level: String,
    pub f: HalfInt,
}

/// Ordered Zeeman basis. Ordering is fixed at zero field.
#[derive(Debug, Clone)]
pub struct LevelBasis {
    constants: Arc<AtomicConstants>,
    levels: Vec<usize>,
    states: Vec<HyperfineState>,
    lookup: HashMap<(usize, HalfInt, HalfInt), usize>,
    hyperfine: Vec<f64>,
    g_f: Vec<f64>,
}

impl LevelBasis {
    pub fn constants(&self) -> &AtomicConstants {
        &self.constants
    }

    pub fn shared_constants(&self) -> Arc<AtomicConstants> {
        Arc::clone(&self.constants)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[HyperfineState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &HyperfineState {
        &self.states[index]
    }

    /// Level indices present in the basis, in energy order.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn fine_level(&self, state: &HyperfineState) -> &FineLevel {
        &self.constants.levels[state.level]
    }

    pub fn level_name(&self, state: &HyperfineState) -> &str {
        &self.constants.levels[state.level].name
    }

    pub fn index_of(&self, level: usize, f: HalfInt, m: HalfInt) -> Option<usize> {
        self.lookup.get(&(level, f, m)).copied()
    }

    /// Index by level name, for configuration-facing lookups.
    pub fn find(&self, level: &str, f: HalfInt, m: HalfInt) -> Result<usize> {
        let l = self.constants.level_index(level)?;
        self.index_of(l, f, m).ok_or_else(|| Error::config(format!("state |{level}, f={f}, m={m}> not in basis")))
    }

    /// Hyperfine manifolds of `level` present in the basis.
    pub fn manifolds(&self, level: usize) -> Vec<HalfInt> {
        let mut fs: Vec<HalfInt> = self.states.iter().filter(|s| s.level == level).map(|s| s.f).collect();
        fs.dedup();
        fs
    }

    /// Zero-field hyperfine energy relative to the level centroid, rad/s.
    pub fn hyperfine_energy(&self, index: usize) -> f64 {
        self.hyperfine[index]
    }

    pub fn g_f(&self, index: usize) -> f64 {
        self.g_f[index]
    }

    /// Linear Zeeman shift at field `b_tesla`, rad/s.
    pub fn zeeman_shift(&self, index: usize, b_tesla: f64) -> f64 {
        self.g_f[index] * self.states[index].m.value() * BOHR_MAGNETON * b_tesla / HBAR
    }

    /// Hyperfine plus linear Zeeman energy relative to the level centroid, rad/s.
    pub fn state_energy(&self, index: usize, b_tesla: f64) -> f64 {
        self.hyperfine[index] + self.zeeman_shift(index, b_tesla)
    }

    pub fn label(&self, index: usize) -> StateLabel<'_> {
        StateLabel { basis: self, index }
    }
}

/// Displays a state as `6s1/2|4,0>`.
pub struct StateLabel<'a> {
    basis: &'a LevelBasis,
    index: usize,
}

impl fmt::Display for StateLabel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.basis.state(self.index);
        write!(f, "{}|{},{}>", self.basis.level_name(s), s.f, s.m)
    }
}

/// Enumerates every Zeeman state of the named levels, minus excluded
/// manifolds, sorted by zero-field energy then `m_f`.
pub fn build_basis(constants: Arc<AtomicConstants>, levels: &[&str], exclusions: &[Exclusion]) -> Result<LevelBasis> {
    if levels.is_empty() {
        return Err(Error::config("basis needs at least one level"));
    }
    let mut level_ids = Vec::with_capacity(levels.len());
    for name in levels {
        let id = constants.level_index(name)?;
        if level_ids.contains(&id) {
            return Err(Error::config(format!("level {name:?} listed twice")));
        }
        level_ids.push(id);
    }
    let i = constants.nuclear_spin;
    let mut excluded = Vec::with_capacity(exclusions.len());
    for ex in exclusions {
        let id = constants.level_index(&ex.level)?;
        if !level_ids.contains(&id) {
            return Err(Error::config(format!("exclusion names level {:?} outside the basis", ex.level)));
        }
        if !constants.levels[id].manifolds(i).any(|f| f == ex.f) {
            return Err(Error::config(format!("level {} has no manifold f={}", ex.level, ex.f)));
        }
        excluded.push((id, ex.f));
    }

    let mut entries: Vec<(f64, HyperfineState, f64, f64)> = Vec::new();
    for &id in &level_ids {
        let level = &constants.levels[id];
        for f in level.manifolds(i) {
            if excluded.contains(&(id, f)) {
                continue;
            }
            let hf = level.hyperfine_energy(i, f);
            let g = level.g_f(i, f);
            for m in f.projections() {
                let state = HyperfineState { level: id, f, m, index: 0 };
                entries.push((level.energy + hf, state, hf, g));
            }
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.m.cmp(&b.1.m)));

    let mut states = Vec::with_capacity(entries.len());
    let mut hyperfine = Vec::with_capacity(entries.len());
    let mut g_f = Vec::with_capacity(entries.len());
    let mut lookup = HashMap::with_capacity(entries.len());
    for (index, (_, mut s, hf, g)) in entries.into_iter().enumerate() {
        s.index = index;
        lookup.insert((s.level, s.f, s.m), index);
        states.push(s);
        hyperfine.push(hf);
        g_f.push(g);
    }
    level_ids.sort_by(|a, b| constants.levels[*a].energy.total_cmp(&constants.levels[*b].energy));
    Ok(LevelBasis { constants, levels: level_ids, states, lookup, hyperfine, g_f })
}
