use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ode::{Control, Dopri5, OdeSystem, Stats, Tolerances};
use super::system::MasterEquationSystem;
use crate::angular::HalfInt;
use crate::error::{Error, Result};

/// A hyperfine manifold tracked in trajectory records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifold {
    pub level: String,
    pub f: HalfInt,
}

/// Integrator diagnostics gathered over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_trace_error: f64,
    pub min_population: f64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub evaluations: u64,
}

/// Per-step record of the photon count and manifold populations, plus
/// per-state populations on a coarse grid.
///
/// Long runs are thinned: whenever 2^20 steps are held, every
/// other older record is dropped. The two newest records are always
/// consecutive steps, so a run stopped on its photon target interpolates the
/// crossing exactly as an unthinned one would.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub manifolds: Vec<Manifold>,
    pub times: Vec<f64>,
    pub photons: Vec<f64>,
    pub photon_rate: Vec<f64>,
    /// Row-major `times.len() x manifolds.len()`.
    pub manifold_populations: Vec<f64>,
    /// Indices into `manifolds` of ground manifolds other than the bright one.
    pub dark_manifolds: Vec<usize>,
    pub grid_times: Vec<f64>,
    pub grid_populations: Vec<Vec<f64>>,
    pub final_populations: Vec<f64>,
    pub diagnostics: Diagnostics,
}

const RECORD_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegrateOptions {
    pub tolerances: Tolerances,
    /// Spacing of the per-state population grid; `None` records only the
    /// initial and final states.
    pub grid_step: Option<f64>,
    /// Stop as soon as the photon count reaches this value.
    pub stop_at_photons: Option<f64>,
}

struct Recorder<'a> {
    sys: &'a MasterEquationSystem,
    manifold_of: Vec<usize>,
    traj: Trajectory,
    next_grid: f64,
    grid_step: Option<f64>,
    buf: Vec<f64>,
    limit: usize,
}

impl<'a> Recorder<'a> {
    fn new(sys: &'a MasterEquationSystem, grid_step: Option<f64>) -> Self {
        let basis = sys.basis();
        let c = basis.constants();
        let mut manifolds: Vec<Manifold> = Vec::new();
        let mut keys: Vec<(usize, HalfInt)> = Vec::new();
        let mut manifold_of = Vec::with_capacity(basis.len());
        for s in basis.states() {
            let key = (s.level, s.f);
            let k = match keys.iter().position(|x| *x == key) {
                Some(k) => k,
                None => {
                    keys.push(key);
                    manifolds.push(Manifold { level: c.levels[s.level].name.clone(), f: s.f });
                    keys.len() - 1
                }
            };
            manifold_of.push(k);
        }
        let ground = c.ground_level();
        let (_, bright) = c.ground_manifolds();
        let dark_manifolds =
            keys.iter().enumerate().filter(|(_, (l, f))| *l == ground && *f != bright).map(|(k, _)| k).collect();
        Self {
            sys,
            manifold_of,
            traj: Trajectory {
                manifolds,
                times: Vec::new(),
                photons: Vec::new(),
                photon_rate: Vec::new(),
                manifold_populations: Vec::new(),
                dark_manifolds,
                grid_times: Vec::new(),
                grid_populations: Vec::new(),
                final_populations: Vec::new(),
                diagnostics: Diagnostics {
                    max_trace_error: 0.0,
                    min_population: f64::INFINITY,
                    accepted_steps: 0,
                    rejected_steps: 0,
                    evaluations: 0,
                },
            },
            next_grid: 0.0,
            grid_step,
            buf: vec![0.0; sys.dim()],
            limit: RECORD_LIMIT,
        }
    }

    fn record(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        let n = self.sys.basis().len();
        let acc = self.sys.accumulator_index();
        let mut m = vec![0.0; self.traj.manifolds.len()];
        let mut trace = 0.0;
        let mut min_p = f64::INFINITY;
        for (i, p) in y[..n].iter().enumerate() {
            m[self.manifold_of[i]] += p;
            trace += p;
            min_p = min_p.min(*p);
        }
        let d = &mut self.traj.diagnostics;
        d.max_trace_error = d.max_trace_error.max((trace - 1.0).abs());
        d.min_population = d.min_population.min(min_p);
        if self.traj.times.len() >= self.limit {
            self.thin();
        }
        self.traj.times.push(t);
        self.traj.photons.push(y[acc]);
        self.traj.photon_rate.push(dy[acc]);
        self.traj.manifold_populations.extend(m);
    }

    /// Keeps even-indexed records and the newest one.
    fn thin(&mut self) {
        let tr = &mut self.traj;
        let (n, m) = (tr.times.len(), tr.manifolds.len());
        let keep = |k: usize| k.is_multiple_of(2) || k == n - 1;
        let mut j = 0;
        for k in (0..n).filter(|&k| keep(k)) {
            tr.times[j] = tr.times[k];
            tr.photons[j] = tr.photons[k];
            tr.photon_rate[j] = tr.photon_rate[k];
            tr.manifold_populations.copy_within(k * m..(k + 1) * m, j * m);
            j += 1;
        }
        tr.times.truncate(j);
        tr.photons.truncate(j);
        tr.photon_rate.truncate(j);
        tr.manifold_populations.truncate(j * m);
    }

    fn grid_point(&mut self, t: f64, y: &[f64]) {
        let n = self.sys.basis().len();
        self.traj.grid_times.push(t);
        self.traj.grid_populations.push(y[..n].to_vec());
    }
}

/// Integrates the master equation from `y0` to `t_final`.
pub fn integrate(
    sys: &MasterEquationSystem,
    y0: Vec<f64>,
    t_final: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let mut run = Run::start(sys, y0, opts)?;
    run.advance(t_final)?;
    Ok(run.finish())
}

/// A resumable integration that keeps recording into one trajectory.
pub struct Run<'a> {
    solver: Dopri5<'a, MasterEquationSystem>,
    rec: Recorder<'a>,
    stop_at: Option<f64>,
    reached: bool,
}

impl<'a> Run<'a> {
    pub fn start(sys: &'a MasterEquationSystem, y0: Vec<f64>, opts: &IntegrateOptions) -> Result<Self> {
        let mut dy0 = vec![0.0; sys.dim()];
        sys.rhs(0.0, &y0, &mut dy0);
        let solver = Dopri5::new(sys, 0.0, y0.clone(), opts.tolerances)?;
        let mut rec = Recorder::new(sys, opts.grid_step);
        rec.record(0.0, &y0, &dy0);
        rec.grid_point(0.0, &y0);
        if let Some(g) = opts.grid_step {
            rec.next_grid = g;
        }
        let reached = opts.stop_at_photons.is_some_and(|n| n <= 0.0);
        Ok(Self { solver, rec, stop_at: opts.stop_at_photons, reached })
    }

    pub fn t(&self) -> f64 {
        self.solver.t()
    }

    pub fn photons(&self) -> f64 {
        *self.rec.traj.photons.last().unwrap()
    }

    pub fn photon_rate(&self) -> f64 {
        *self.rec.traj.photon_rate.last().unwrap()
    }

    /// Current state vector.
    pub fn state(&self) -> &[f64] {
        self.solver.y()
    }

    /// True once the photon target has been reached.
    pub fn reached(&self) -> bool {
        self.reached
    }

    pub fn advance(&mut self, t_end: f64) -> Result<()> {
        if self.reached {
            return Ok(());
        }
        let acc = self.rec.sys.accumulator_index();
        let stop_at = self.stop_at;
        let rec = &mut self.rec;
        let mut reached = false;
        let result = self.solver.advance_to(t_end, |v| {
            if let Some(g) = rec.grid_step {
                while rec.next_grid <= v.t() {
                    let tg = rec.next_grid;
                    let mut buf = std::mem::take(&mut rec.buf);
                    v.interpolate_all(tg, &mut buf);
                    rec.grid_point(tg, &buf);
                    rec.buf = buf;
                    rec.next_grid += g;
                }
            }
            rec.record(v.t(), v.y(), v.dy());
            match stop_at {
                Some(n) if v.y()[acc] >= n => {
                    reached = true;
                    Control::Stop
                }
                _ => Control::Continue,
            }
        });
        self.reached = reached;
        result.map(|_| ())
    }

    pub fn finish(mut self) -> Trajectory {
        let y = self.solver.y().to_vec();
        let n = self.rec.sys.basis().len();
        let t = self.solver.t();
        if self.rec.traj.grid_times.last() != Some(&t) {
            self.rec.grid_point(t, &y);
        }
        self.rec.traj.final_populations = y[..n].to_vec();
        let s: Stats = self.solver.stats();
        let d = &mut self.rec.traj.diagnostics;
        d.accepted_steps = s.accepted;
        d.rejected_steps = s.rejected;
        d.evaluations = s.evaluations;
        self.rec.traj
    }
}

/// Adaptive horizon: integrate to `factor` times the projected time of the
/// photon target, growing geometrically, up to `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonPolicy {
    pub initial_s: f64,
    pub factor: f64,
    pub cap_s: f64,
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        Self { initial_s: 50e-6, factor: 3.0, cap_s: 20e-3 }
    }
}

/// Result of one readout simulation.
#[derive(Debug, Clone, Serialize)]
pub struct Readout {
    pub time_to_target: f64,
    pub infidelity: f64,
    pub trajectory: Trajectory,
}

/// Integrates until `target` photons have been scattered and reports the
/// time and the dark-manifold population at that moment.
pub fn simulate_readout(
    sys: &MasterEquationSystem,
    y0: Vec<f64>,
    target: f64,
    horizon: &HorizonPolicy,
    opts: &IntegrateOptions,
) -> Result<Readout> {
    if !(target > 0.0) {
        return Err(Error::validation("photon target must be positive"));
    }
    if !(horizon.initial_s > 0.0 && horizon.cap_s >= horizon.initial_s && horizon.factor > 1.0) {
        return Err(Error::validation("horizon needs 0 < initial <= cap and factor > 1"));
    }
    let opts = IntegrateOptions { stop_at_photons: Some(target), ..*opts };
    let mut run = Run::start(sys, y0, &opts)?;
    let mut h = horizon.initial_s;
    loop {
        run.advance(h)?;
        if run.reached() || h >= horizon.cap_s {
            break;
        }
        let rate = run.photon_rate();
        let projected = if rate > 0.0 { run.t() + (target - run.photons()) / rate } else { f64::INFINITY };
        h = (2.0 * h).max(horizon.factor * projected).min(horizon.cap_s);
    }
    let traj = run.finish();
    let t = time_to_photons(&traj, target)?;
    let infidelity = raman_infidelity(&traj, t)?;
    Ok(Readout { time_to_target: t, infidelity, trajectory: traj })
}

fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * m1
}

/// First time the photon count reaches `target`, from monotone cubic
/// Hermite interpolation of the recorded count and rate.
pub fn time_to_photons(traj: &Trajectory, target: f64) -> Result<f64> {
    let n = &traj.photons;
    let k = n.iter().position(|&v| v >= target).ok_or_else(|| Error::TargetNotReached {
        target,
        achieved: n.last().copied().unwrap_or(0.0),
        t_final: traj.times.last().copied().unwrap_or(0.0),
    })?;
    if k == 0 {
        return Ok(traj.times[0]);
    }
    let (t0, t1) = (traj.times[k - 1], traj.times[k]);
    let (y0, y1) = (n[k - 1], n[k]);
    let (mut m0, mut m1) = (traj.photon_rate[k - 1].max(0.0), traj.photon_rate[k].max(0.0));
    // Fritsch-Carlson limiter
    let secant = (y1 - y0) / (t1 - t0);
    if secant <= 0.0 {
        m0 = 0.0;
        m1 = 0.0;
    } else {
        let (a, b) = (m0 / secant, m1 / secant);
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m0 = tau * a * secant;
            m1 = tau * b * secant;
        }
    }
    let (mut lo, mut hi) = (t0, t1);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hermite(t0, t1, y0, y1, m0, m1, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Population of every ground manifold other than the bright one at `t`.
pub fn raman_infidelity(traj: &Trajectory, t: f64) -> Result<f64> {
    let times = &traj.times;
    let (first, last) = (times[0], *times.last().unwrap());
    if !(t >= first && t <= last) {
        return Err(Error::validation(format!("t = {t:.6e} s outside trajectory [{first:.6e}, {last:.6e}]")));
    }
    let m = traj.manifolds.len();
    let dark = |k: usize| -> f64 { traj.dark_manifolds.iter().map(|&d| traj.manifold_populations[k * m + d]).sum() };
    let k = times.partition_point(|&x| x < t);
    if k == 0 || times[k] == t {
        return Ok(dark(k).clamp(0.0, 1.0));
    }
    let s = (t - times[k - 1]) / (times[k] - times[k - 1]);
    Ok(((1.0 - s) * dark(k - 1) + s * dark(k)).clamp(0.0, 1.0))
}

impl Trajectory {
    pub fn manifold_population(&self, step: usize, manifold: usize) -> f64 {
        self.manifold_populations[step * self.manifolds.len() + manifold]
    }

    /// CSV of time, per-manifold populations and photon count, thinned to at
    /// most `max_rows` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, max_rows: usize) -> std::io::Result<()> {
        write!(w, "time_s")?;
        for m in &self.manifolds {
            write!(w, ",pop_{}_f{}", m.level, m.f)?;
        }
        writeln!(w, ",photons")?;
        let n = self.times.len();
        let stride = n.div_ceil(max_rows.max(2)).max(1);
        let mut rows: Vec<usize> = (0..n).step_by(stride).collect();
        if rows.last() != Some(&(n - 1)) {
            rows.push(n - 1);
        }
        for k in rows {
            write!(w, "{:.9e}", self.times[k])?;
            for j in 0..self.manifolds.len() {
                write!(w, ",{:.9e}", self.manifold_population(k, j))?;
            }
            writeln!(w, ",{:.9e}", self.photons[k])?;
        }
        Ok(())
    }
}
