use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ode::OdeSystem;
use crate::atom::{decay_channels, total_decay_rates, DecayChannel, LevelBasis};
use crate::coupling::{build_hamiltonian, BeamSpec, HamiltonianOptions, RotatingHamiltonian};
use crate::error::{Error, Result};

/// Which coherences are tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    /// Pairs within this many coupling-graph edges of each other.
    CouplingDistance(u32),
    /// Every pair inside one connected component of the coupling graph.
    Component,
}

impl Default for Pruning {
    fn default() -> Self {
        Pruning::CouplingDistance(3)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyOptions {
    #[serde(default)]
    pub pruning: Pruning,
    /// Level whose population is counted as scattering photons. Defaults to
    /// the upper level of the dipole line from the ground level.
    #[serde(default)]
    pub photon_level: Option<String>,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n_rows: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals = Vec::with_capacity(t.len());
        let mut k = 0;
        for row in 0..n_rows {
            while k < t.len() && t[k].0 == row {
                let col = t[k].1;
                let mut v = 0.0;
                while k < t.len() && t[k].0 == row && t[k].1 == col {
                    v += t[k].2;
                    k += 1;
                }
                if v != 0.0 {
                    cols.push(col as u32);
                    vals.push(v);
                }
            }
            row_ptr[row + 1] = cols.len();
        }
        Self { row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *out = s;
        }
    }
}

/// The assembled rotating-frame generator as a real linear ODE.
///
/// Layout: populations, then `(Re, Im)` of each tracked coherence
/// `ρ_ab` (`a > b`), then the scattered-photon accumulator.
#[derive(Debug, Clone)]
pub struct MasterEquationSystem {
    basis: LevelBasis,
    hamiltonian: RotatingHamiltonian,
    decay: Vec<DecayChannel>,
    coherences: Vec<(usize, usize)>,
    coherence_index: HashMap<(usize, usize), usize>,
    photon_states: Vec<usize>,
    photon_rate: f64,
    matrix: Csr,
}

#[derive(Clone, Copy)]
enum Source {
    Pop(usize),
    Coh(usize),
    CohConj(usize),
}

impl MasterEquationSystem {
    pub fn basis(&self) -> &LevelBasis {
        &self.basis
    }

    pub fn hamiltonian(&self) -> &RotatingHamiltonian {
        &self.hamiltonian
    }

    pub fn decay(&self) -> &[DecayChannel] {
        &self.decay
    }

    pub fn coherences(&self) -> &[(usize, usize)] {
        &self.coherences
    }

    /// Real equations for the density matrix (accumulator excluded).
    pub fn equation_count(&self) -> usize {
        self.basis.len() + 2 * self.coherences.len()
    }

    pub fn photon_states(&self) -> &[usize] {
        &self.photon_states
    }

    /// Linewidth converting photon-level population into photons/s.
    pub fn photon_rate(&self) -> f64 {
        self.photon_rate
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn accumulator_index(&self) -> usize {
        self.equation_count()
    }

    /// State vector for a diagonal initial density matrix.
    pub fn initial_state(&self, populations: &[f64]) -> Result<Vec<f64>> {
        let n = self.basis.len();
        if populations.len() != n {
            return Err(Error::validation(format!("expected {n} populations, got {}", populations.len())));
        }
        if populations.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::validation("initial populations must be non-negative"));
        }
        let tr: f64 = populations.iter().sum();
        if (tr - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("initial trace is {tr}, expected 1")));
        }
        let mut y = vec![0.0; self.dim()];
        y[..n].copy_from_slice(populations);
        Ok(y)
    }

    /// Initial state with all population in one basis state.
    pub fn pure_state(&self, index: usize) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.basis.len()];
        *p.get_mut(index).ok_or_else(|| Error::validation(format!("state {index} out of range")))? = 1.0;
        self.initial_state(&p)
    }

    /// `ρ_ab` from a state vector; untracked coherences are zero.
    pub fn element(&self, y: &[f64], a: usize, b: usize) -> Complex64 {
        let n = self.basis.len();
        if a == b {
            return Complex64::new(y[a], 0.0);
        }
        let (hi, lo, conj) = if a > b { (a, b, false) } else { (b, a, true) };
        match self.coherence_index.get(&(hi, lo)) {
            Some(&k) => {
                let z = Complex64::new(y[n + 2 * k], y[n + 2 * k + 1]);
                if conj {
                    z.conj()
                } else {
                    z
                }
            }
            None => Complex64::default(),
        }
    }

    /// Full density matrix; Hermitian by construction.
    pub fn density_matrix(&self, y: &[f64]) -> nalgebra::DMatrix<Complex64> {
        let n = self.basis.len();
        nalgebra::DMatrix::from_fn(n, n, |a, b| self.element(y, a, b))
    }
}

impl OdeSystem for MasterEquationSystem {
    fn dim(&self) -> usize {
        self.equation_count() + 1
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.matrix.mul(y, dy);
    }
}

fn adjacency(n: usize, h: &RotatingHamiltonian) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, l, _) in &h.couplings {
        adj[u].push(l);
        adj[l].push(u);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn tracked_pairs(adj: &[Vec<usize>], pruning: Pruning) -> Vec<(usize, usize)> {
    let n = adj.len();
    let limit = match pruning {
        Pruning::CouplingDistance(d) => d as usize,
        Pruning::Component => usize::MAX,
    };
    let mut pairs = Vec::new();
    let mut dist = vec![usize::MAX; n];
    for a in 0..n {
        if adj[a].is_empty() {
            continue;
        }
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(x) = queue.pop_front() {
            if dist[x] >= limit {
                continue;
            }
            for &y in &adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        pairs.extend((0..a).filter(|&b| dist[b] != usize::MAX).map(|b| (a, b)));
    }
    pairs
}

/// Builds the Hamiltonian and decay table and assembles the generator.
pub fn assemble(
    basis: &LevelBasis,
    beams: &[BeamSpec],
    hopts: &HamiltonianOptions,
    opts: &AssemblyOptions,
) -> Result<MasterEquationSystem> {
    let hamiltonian = build_hamiltonian(basis, beams, hopts)?;
    assemble_from(basis, hamiltonian, opts)
}

/// Assembles the generator from a prepared Hamiltonian.
pub fn assemble_from(
    basis: &LevelBasis,
    hamiltonian: RotatingHamiltonian,
    opts: &AssemblyOptions,
) -> Result<MasterEquationSystem> {
    let n = basis.len();
    let c = basis.constants();
    let decay = decay_channels(basis);
    let gamma = total_decay_rates(basis, &decay);

    let photon_level = match &opts.photon_level {
        Some(name) => c.level_index(name)?,
        None => c.dipole_line()?.upper,
    };
    let photon_states: Vec<usize> =
        basis.states().iter().filter(|s| s.level == photon_level).map(|s| s.index).collect();
    let photon_rate = c.levels[photon_level].linewidth;

    let adj = adjacency(n, &hamiltonian);
    let coherences = tracked_pairs(&adj, opts.pruning);
    for &(a, b) in &coherences {
        for s in [a, b] {
            let level = basis.state(s).level;
            if hamiltonian.level_offsets[level].is_none() {
                return Err(Error::Assembly(format!(
                    "coherence {} - {} involves level {} which has no rotating frame",
                    basis.label(a),
                    basis.label(b),
                    c.levels[level].name
                )));
            }
        }
    }
    let coherence_index: HashMap<(usize, usize), usize> = coherences.iter().enumerate().map(|(k, &p)| (p, k)).collect();

    // H rows including the diagonal
    let mut hrow: Vec<Vec<(usize, Complex64)>> =
        (0..n).map(|i| vec![(i, Complex64::new(hamiltonian.diagonal[i], 0.0))]).collect();
    for &(u, l, h) in &hamiltonian.couplings {
        hrow[u].push((l, h));
        hrow[l].push((u, h.conj()));
    }

    let source = |x: usize, y: usize| -> Option<Source> {
        if x == y {
            Some(Source::Pop(x))
        } else if x > y {
            coherence_index.get(&(x, y)).map(|&k| Source::Coh(k))
        } else {
            coherence_index.get(&(y, x)).map(|&k| Source::CohConj(k))
        }
    };
    let re = |k: usize| n + 2 * k;
    let im = |k: usize| n + 2 * k + 1;

    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    // α·src contributions; `rows` = (Re row, optional Im row)
    let push = |rows: (usize, Option<usize>), alpha: Complex64, src: Source, trip: &mut Vec<(usize, usize, f64)>| {
        let (ar, ai) = (alpha.re, alpha.im);
        let (r, i) = rows;
        match src {
            Source::Pop(p) => {
                trip.push((r, p, ar));
                if let Some(i) = i {
                    trip.push((i, p, ai));
                }
            }
            Source::Coh(k) => {
                trip.push((r, re(k), ar));
                trip.push((r, im(k), -ai));
                if let Some(i) = i {
                    trip.push((i, re(k), ai));
                    trip.push((i, im(k), ar));
                }
            }
            Source::CohConj(k) => {
                trip.push((r, re(k), ar));
                trip.push((r, im(k), ai));
                if let Some(i) = i {
                    trip.push((i, re(k), ai));
                    trip.push((i, im(k), -ar));
                }
            }
        }
    };

    let mi = Complex64::new(0.0, -1.0);
    let targets = (0..n)
        .map(|a| (a, a, (a, None)))
        .chain(coherences.iter().enumerate().map(|(k, &(a, b))| (a, b, (re(k), Some(im(k))))));
    for (a, b, rows) in targets {
        // -i (H ρ)_ab
        for &(cidx, h) in &hrow[a] {
            if let Some(src) = source(cidx, b) {
                push(rows, mi * h, src, &mut trip);
            }
        }
        // +i (ρ H)_ab, with H_cb = conj(H_bc)
        for &(cidx, h) in &hrow[b] {
            if let Some(src) = source(a, cidx) {
                push(rows, -mi * h.conj(), src, &mut trip);
            }
        }
    }
    for ch in &decay {
        trip.push((ch.lower, ch.upper, ch.rate));
    }
    for (j, g) in gamma.iter().enumerate() {
        if *g > 0.0 {
            trip.push((j, j, -g));
        }
    }
    for (k, &(a, b)) in coherences.iter().enumerate() {
        let d = 0.5 * (gamma[a] + gamma[b]);
        if d > 0.0 {
            trip.push((re(k), re(k), -d));
            trip.push((im(k), im(k), -d));
        }
    }
    let acc = n + 2 * coherences.len();
    for &p in &photon_states {
        trip.push((acc, p, photon_rate));
    }
    let matrix = Csr::from_triplets(acc + 1, trip);

    Ok(MasterEquationSystem {
        basis: basis.clone(),
        hamiltonian,
        decay,
        coherences,
        coherence_index,
        photon_states,
        photon_rate,
        matrix,
    })
}
