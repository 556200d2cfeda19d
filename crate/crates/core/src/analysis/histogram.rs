//! Two-component mixture fits of photon-count histograms and the
//! threshold classification error.

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};
use statrs::function::erf::erfc;

use super::lm::{levenberg_marquardt, FitReport, LmOptions};
use crate::error::{Error, Result};

/// Binned counts; bin `k` covers `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    edges: Vec<f64>,
    occurrences: Vec<f64>,
}

impl CountHistogram {
    pub fn new(edges: Vec<f64>, occurrences: Vec<f64>) -> Result<Self> {
        if edges.len() != occurrences.len() + 1 || occurrences.is_empty() {
            return Err(Error::validation("histogram needs one more edge than bins"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::validation("histogram edges must be finite and strictly increasing"));
        }
        if occurrences.iter().any(|o| !(*o >= 0.0) || !o.is_finite()) {
            return Err(Error::validation("histogram occurrences must be finite and >= 0"));
        }
        Ok(Self { edges, occurrences })
    }

    /// Bins raw per-shot counts with bins of `width` centred on multiples of `width`.
    pub fn from_shots(shots: &[f64], width: f64) -> Result<Self> {
        if shots.is_empty() || shots.iter().any(|s| !s.is_finite()) || !(width > 0.0) {
            return Err(Error::validation("need finite shots and a positive bin width"));
        }
        let lo = shots.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = shots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = (lo / width).round() as i64;
        let last = (hi / width).round() as i64;
        let n = (last - first + 1) as usize;
        let edges = (0..=n).map(|k| (first + k as i64) as f64 * width - 0.5 * width).collect();
        let mut occ = vec![0.0; n];
        for s in shots {
            occ[((s / width).round() as i64 - first) as usize] += 1.0;
        }
        Self::new(edges, occ)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn occurrences(&self) -> &[f64] {
        &self.occurrences
    }

    pub fn total(&self) -> f64 {
        self.occurrences.iter().sum()
    }

    fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureModel {
    /// Excess-noise-broadened counts.
    #[default]
    Gaussian,
    /// Shot-noise-limited integer counts; `sigma` is reported as `√mean`.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramFit {
    pub model: MixtureModel,
    pub dark: Component,
    pub bright: Component,
    /// Counts above this are classified bright.
    pub threshold: f64,
    pub fidelity: f64,
    /// `(threshold, E_c)` pairs.
    pub ec_curve: Vec<[f64; 2]>,
    pub report: FitReport,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn poisson_cdf(lambda: f64, k: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    match Poisson::new(lambda.max(1e-300)) {
        Ok(p) => p.cdf(k.floor() as u64),
        Err(_) => 1.0,
    }
}

/// Probability that a sample of the component lies below `x`.
fn cdf(model: MixtureModel, c: &Component, x: f64) -> f64 {
    match model {
        MixtureModel::Gaussian => normal_cdf((x - c.mean) / c.sigma),
        // integer counts strictly below x
        MixtureModel::Poisson => poisson_cdf(c.mean, x.ceil() - 1.0),
    }
}

/// Misclassification probability with threshold `t`: dark counts above it
/// plus bright counts at or below it, weighted by the mixture weights.
pub fn classification_error(model: MixtureModel, dark: &Component, bright: &Component, t: f64) -> f64 {
    match model {
        MixtureModel::Gaussian => {
            dark.weight * (1.0 - normal_cdf((t - dark.mean) / dark.sigma))
                + bright.weight * normal_cdf((t - bright.mean) / bright.sigma)
        }
        MixtureModel::Poisson => {
            let k = t.floor();
            dark.weight * (1.0 - poisson_cdf(dark.mean, k)) + bright.weight * poisson_cdf(bright.mean, k)
        }
    }
}

fn smoothed(v: &[f64]) -> Vec<f64> {
    let half = (v.len() / 60).max(1);
    (0..v.len())
        .map(|i| {
            let (a, b) = (i.saturating_sub(half), (i + half + 1).min(v.len()));
            v[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Indices of the two dominant, separated maxima of the smoothed histogram.
fn two_peaks(h: &CountHistogram) -> Result<(usize, usize, usize)> {
    let s = smoothed(&h.occurrences);
    let top = s.iter().copied().fold(0.0, f64::max);
    let n = s.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let l = if i == 0 { f64::NEG_INFINITY } else { s[i - 1] };
            let r = if i + 1 == n { f64::NEG_INFINITY } else { s[i + 1] };
            s[i] > 0.01 * top && s[i] >= l && s[i] > r
        })
        .collect();
    peaks.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let not_bimodal = || Error::Fit("histogram is not bimodal: need two separated maxima after smoothing".into());
    let &first = peaks.first().ok_or_else(not_bimodal)?;
    for &other in &peaks[1..] {
        let (a, b) = (first.min(other), first.max(other));
        let (valley, v) = (a..=b).map(|k| (k, s[k])).min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        if v < 0.8 * s[other] {
            return Ok((a, valley, b));
        }
    }
    Err(not_bimodal())
}

fn moments(h: &CountHistogram, range: std::ops::Range<usize>) -> (f64, f64, f64) {
    let c: Vec<f64> = h.centers().collect();
    let w: f64 = h.occurrences[range.clone()].iter().sum();
    let mean = range.clone().map(|k| h.occurrences[k] * c[k]).sum::<f64>() / w;
    let var = range.map(|k| h.occurrences[k] * (c[k] - mean).powi(2)).sum::<f64>() / w;
    (w, mean, var.sqrt().max(1e-3))
}

/// Fits a two-component mixture and locates the threshold minimizing the
/// classification error `E_c`. Fidelity is `1 − min_t E_c(t)`.
pub fn fit_histogram(h: &CountHistogram, model: MixtureModel) -> Result<HistogramFit> {
    let (_, valley, _) = two_peaks(h)?;
    let total = h.total();
    let (wd, md, sd) = moments(h, 0..valley);
    let (_, mb, sb) = moments(h, valley..h.occurrences.len());
    let edges = h.edges.clone();
    let obs = h.occurrences.clone();
    let weights: Vec<f64> = obs.iter().map(|o| 1.0 / o.max(1.0).sqrt()).collect();
    let comps = |p: &[f64]| -> (Component, Component) {
        let w = p[0].clamp(0.0, 1.0);
        match model {
            MixtureModel::Gaussian => (
                Component { weight: w, mean: p[1], sigma: p[2].abs().max(1e-12) },
                Component { weight: 1.0 - w, mean: p[3], sigma: p[4].abs().max(1e-12) },
            ),
            MixtureModel::Poisson => (
                Component { weight: w, mean: p[1].abs(), sigma: p[1].abs().sqrt() },
                Component { weight: 1.0 - w, mean: p[2].abs(), sigma: p[2].abs().sqrt() },
            ),
        }
    };
    let resid = |p: &[f64], r: &mut [f64]| {
        let (d, b) = comps(p);
        let mut prev = (cdf(model, &d, edges[0]), cdf(model, &b, edges[0]));
        for k in 0..obs.len() {
            let next = (cdf(model, &d, edges[k + 1]), cdf(model, &b, edges[k + 1]));
            r[k] = d.weight * (next.0 - prev.0) + b.weight * (next.1 - prev.1);
            prev = next;
        }
        // the model is conditioned on landing inside the histogram range
        let inside: f64 = r.iter().sum::<f64>().max(1e-300);
        for k in 0..obs.len() {
            r[k] = (total * r[k] / inside - obs[k]) * weights[k];
        }
    };
    let w0 = wd / total;
    let report = match model {
        MixtureModel::Gaussian => levenberg_marquardt(
            resid,
            &["dark_weight", "dark_mean", "dark_sigma", "bright_mean", "bright_sigma"],
            &[w0, md, sd, mb, sb],
            obs.len(),
            LmOptions::default(),
        )?,
        MixtureModel::Poisson => levenberg_marquardt(
            resid,
            &["dark_weight", "dark_mean", "bright_mean"],
            &[w0, md.max(1e-3), mb.max(1e-3)],
            obs.len(),
            LmOptions::default(),
        )?,
    };
    let p: Vec<f64> = report.parameters.iter().map(|q| q.value).collect();
    let (mut dark, mut bright) = comps(&p);
    if dark.mean > bright.mean {
        std::mem::swap(&mut dark, &mut bright);
    }

    let (lo, hi) = (h.edges[0], *h.edges.last().unwrap());
    let ec = |t: f64| classification_error(model, &dark, &bright, t);
    let (threshold, min_ec) = match model {
        MixtureModel::Gaussian => {
            let n = 4000;
            let step = (hi - lo) / n as f64;
            let (mut t, mut best) = (lo, ec(lo));
            for k in 1..=n {
                let x = lo + k as f64 * step;
                let e = ec(x);
                if e < best {
                    (t, best) = (x, e);
                }
            }
            golden_min(&ec, t - step, t + step, t, best)
        }
        MixtureModel::Poisson => {
            let (a, b) = (lo.floor().max(0.0) as i64, hi.ceil() as i64);
            (a..=b)
                .map(|k| (k as f64, ec(k as f64)))
                .fold((a as f64, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
        }
    };
    let ec_curve = h.edges.iter().map(|&t| [t, ec(t)]).collect();
    Ok(HistogramFit { model, dark, bright, threshold, fidelity: 1.0 - min_ec, ec_curve, report })
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, t0: f64, e0: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            (d, fd) = (c, fc);
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            (c, fc) = (d, fd);
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let e = f(t);
    if e <= e0 {
        (t, e)
    } else {
        (t0, e0)
    }
}
