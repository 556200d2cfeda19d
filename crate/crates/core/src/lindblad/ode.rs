//! Dormand-Prince 5(4) with PI step-size control and 4th-order dense output.

use crate::error::{Error, Result};

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    /// Steps below this size abort the integration.
    pub h_min: f64,
    pub max_steps: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_init: None, h_max: f64::INFINITY, h_min: 1e-18, max_steps: 50_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
}

/// Integrator state; `advance_to` may be called repeatedly with increasing
/// end times and continues from where the previous call stopped.
pub struct Dopri5<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    tol: Tolerances,
    t: f64,
    y: Vec<f64>,
    h: f64,
    fac_old: f64,
    k: [Vec<f64>; 7],
    y_new: Vec<f64>,
    y_stage: Vec<f64>,
    // dense output of the last accepted step
    t_old: f64,
    h_old: f64,
    cont: [Vec<f64>; 5],
    has_step: bool,
    stats: Stats,
}

/// View of one accepted step handed to observers.
pub struct StepView<'s, 'a, S: OdeSystem + ?Sized> {
    solver: &'s Dopri5<'a, S>,
}

impl<S: OdeSystem + ?Sized> StepView<'_, '_, S> {
    pub fn t(&self) -> f64 {
        self.solver.t
    }

    pub fn t_prev(&self) -> f64 {
        self.solver.t_old
    }

    pub fn y(&self) -> &[f64] {
        &self.solver.y
    }

    /// Derivative at the end of the step.
    pub fn dy(&self) -> &[f64] {
        &self.solver.k[0]
    }

    /// Dense-output value of component `i` at `t` inside the step.
    pub fn interpolate(&self, i: usize, t: f64) -> f64 {
        self.solver.dense_component(i, t)
    }

    pub fn interpolate_all(&self, t: f64, out: &mut [f64]) {
        self.solver.dense_all(t, out)
    }
}

/// Whether integration should go on after an observed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

impl<'a, S: OdeSystem + ?Sized> Dopri5<'a, S> {
    pub fn new(sys: &'a S, t0: f64, y0: Vec<f64>, tol: Tolerances) -> Result<Self> {
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::validation(format!("initial state has {} components, system has {n}", y0.len())));
        }
        if !(tol.rtol > 0.0 && tol.atol > 0.0) {
            return Err(Error::validation("tolerances must be positive"));
        }
        let zeros = || vec![0.0; n];
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| zeros());
        sys.rhs(t0, &y0, &mut k[0]);
        let mut s = Self {
            sys,
            tol,
            t: t0,
            y: y0,
            h: 0.0,
            fac_old: 1e-4,
            k,
            y_new: zeros(),
            y_stage: zeros(),
            t_old: t0,
            h_old: 0.0,
            cont: std::array::from_fn(|_| zeros()),
            has_step: false,
            stats: Stats { evaluations: 1, ..Stats::default() },
        };
        s.h = match tol.h_init {
            Some(h) if h > 0.0 => h,
            _ => s.initial_step(),
        };
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.tol.atol + self.tol.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len() as f64;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for (y, f) in self.y.iter().zip(&self.k[0]) {
            let sk = self.scale(*y, *y);
            dnf += (f / sk).powi(2);
            dny += (y / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.tol.h_max);
        for i in 0..self.y.len() {
            self.y_stage[i] = self.y[i] + h * self.k[0][i];
        }
        self.sys.rhs(self.t + h, &self.y_stage, &mut self.k[1]);
        self.stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            der2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.abs().max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1).min(self.tol.h_max)
    }

    /// Attempts steps until one is accepted. `h_cap` bounds the step so
    /// the integration lands on an end time exactly.
    fn step(&mut self, h_cap: f64) -> Result<()> {
        let n = self.y.len();
        let mut last_reject = false;
        loop {
            if self.stats.accepted + self.stats.rejected >= self.tol.max_steps {
                return Err(Error::Integration { t_last: self.t, reason: "maximum step count exceeded".into() });
            }
            let h = self.h.min(h_cap);
            if h < self.tol.h_min || self.t + h == self.t {
                return Err(Error::Integration {
                    t_last: self.t,
                    reason: format!("step size underflow (h = {h:.3e} s)"),
                });
            }
            let t = self.t;
            let (k, ys, y) = (&mut self.k, &mut self.y_stage, &self.y);
            macro_rules! stage {
                ($out:expr, $c:expr, $($a:expr => $j:expr),+) => {{
                    for i in 0..n {
                        ys[i] = y[i] + h * (0.0 $(+ $a * k[$j][i])+);
                    }
                    let (head, tail) = k.split_at_mut($out);
                    let _ = head;
                    self.sys.rhs(t + $c * h, ys, &mut tail[0]);
                }};
            }
            stage!(1, C2, A21 => 0);
            stage!(2, C3, A31 => 0, A32 => 1);
            stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
            stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
            for i in 0..n {
                ys[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
            }
            {
                let (_, tail) = k.split_at_mut(5);
                self.sys.rhs(t + h, ys, &mut tail[0]);
            }
            for i in 0..n {
                self.y_new[i] =
                    y[i] + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            {
                let (_, tail) = k.split_at_mut(6);
                self.sys.rhs(t + h, &self.y_new, &mut tail[0]);
            }
            self.stats.evaluations += 6;

            let mut err = 0.0;
            for i in 0..n {
                let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let sk = self.tol.atol + self.tol.rtol * y[i].abs().max(self.y_new[i].abs());
                err += (e / sk).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                self.stats.rejected += 1;
                self.h = h * FAC_MIN;
                last_reject = true;
                continue;
            }
            let expo1 = 0.2 - BETA * 0.75;
            let fac11 = err.powf(expo1);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if last_reject {
                    h_new = h_new.min(h);
                }
                self.fac_old = err.max(1e-4);
                // dense output coefficients
                for i in 0..n {
                    let y0 = y[i];
                    let y1 = self.y_new[i];
                    let ydiff = y1 - y0;
                    let bspl = h * k[0][i] - ydiff;
                    self.cont[0][i] = y0;
                    self.cont[1][i] = ydiff;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = ydiff - h * k[6][i] - bspl;
                    self.cont[4][i] =
                        h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
                }
                self.t_old = t;
                self.h_old = h;
                self.t = t + h;
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                self.h = h_new.min(self.tol.h_max);
                self.has_step = true;
                self.stats.accepted += 1;
                return Ok(());
            }
            self.stats.rejected += 1;
            self.h = h / (fac11 / SAFE).min(1.0 / FAC_MIN);
            last_reject = true;
        }
    }

    fn dense_component(&self, i: usize, t: f64) -> f64 {
        if !self.has_step || self.h_old == 0.0 {
            return self.y[i];
        }
        let s = (t - self.t_old) / self.h_old;
        let s1 = 1.0 - s;
        let c = &self.cont;
        c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * c[4][i])))
    }

    fn dense_all(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.dense_component(i, t);
        }
    }

    /// Integrates to `t_end`, calling `observe` after every accepted step.
    /// Returns early, without error, when the observer asks to stop.
    pub fn advance_to<F>(&mut self, t_end: f64, mut observe: F) -> Result<Control>
    where
        F: FnMut(&StepView<'_, 'a, S>) -> Control,
    {
        if (t_end - self.t).abs() <= 1e-14 * t_end.abs() {
            self.t = self.t.max(t_end);
        }
        while self.t < t_end {
            let remaining = t_end - self.t;
            // avoid a sliver step at the end
            let cap = if self.h > remaining || self.h * 1.01 >= remaining { remaining } else { f64::INFINITY };
            self.step(cap)?;
            if (t_end - self.t).abs() <= 1e-14 * t_end.abs() {
                self.t = t_end;
            }
            if observe(&StepView { solver: self }) == Control::Stop {
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator(f64);

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = self.0 * y[1];
            dy[1] = -self.0 * y[0];
        }
    }

    struct Decay;

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let sys = Oscillator(2.0);
        let mut s =
            Dopri5::new(&sys, 0.0, vec![0.0, 1.0], Tolerances { rtol: 1e-10, atol: 1e-12, ..Default::default() })
                .unwrap();
        s.advance_to(10.0, |_| Control::Continue).unwrap();
        assert_eq!(s.t(), 10.0);
        assert!((s.y()[0] - 20f64.sin()).abs() < 1e-8);
        assert!((s.y()[1] - 20f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_and_resume() {
        let sys = Decay;
        let mut s = Dopri5::new(&sys, 0.0, vec![1.0], Tolerances::default()).unwrap();
        let mut worst: f64 = 0.0;
        s.advance_to(2.0, |v| {
            let tm = 0.5 * (v.t() + v.t_prev());
            worst = worst.max((v.interpolate(0, tm) - (-tm).exp()).abs());
            Control::Continue
        })
        .unwrap();
        s.advance_to(5.0, |_| Control::Continue).unwrap();
        assert!(worst < 1e-8, "{worst}");
        assert!((s.y()[0] - (-5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn resume_one_ulp_short_of_target() {
        let sys = Decay;
        let mut s = Dopri5::new(&sys, 0.0, vec![1.0], Tolerances::default()).unwrap();
        let t1 = 20.0 * 1e-6;
        let t2 = 0.02 * 1e-3;
        assert!(t1 < t2);
        s.advance_to(t1, |_| Control::Continue).unwrap();
        s.advance_to(t2, |_| Control::Continue).unwrap();
        assert_eq!(s.t(), t2);
    }

    #[test]
    fn observer_stop() {
        let sys = Decay;
        let mut s = Dopri5::new(&sys, 0.0, vec![1.0], Tolerances::default()).unwrap();
        let r = s.advance_to(10.0, |v| if v.y()[0] < 0.5 { Control::Stop } else { Control::Continue }).unwrap();
        assert_eq!(r, Control::Stop);
        assert!(s.t() < 10.0 && s.y()[0] < 0.5);
    }

    #[test]
    fn underflow_reports_last_time() {
        struct Blowup;
        impl OdeSystem for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
                dy[0] = y[0] * y[0];
            }
        }
        let mut s = Dopri5::new(&Blowup, 0.0, vec![1.0], Tolerances { h_min: 1e-12, ..Default::default() }).unwrap();
        match s.advance_to(2.0, |_| Control::Continue) {
            Err(Error::Integration { t_last, reason }) => assert!(t_last > 0.9 && t_last < 1.01, "{t_last} {reason}"),
            other => panic!("{other:?}"),
        }
    }
}
