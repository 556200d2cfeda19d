//! Grid scans of readout simulations with deterministic, resumable CSV output.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::atom::AtomicConstants;
use crate::config::{AxisConfig, LoadedConfig, Objective, RunConfig, ScanMode};
use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hashes tying an output file to its inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub constants_sha256: String,
}

impl Provenance {
    pub fn new(config_sha256: &str, constants_sha256: &str) -> Self {
        Self { version: VERSION.into(), config_sha256: config_sha256.into(), constants_sha256: constants_sha256.into() }
    }

    /// `# key value` lines.
    pub fn header(&self) -> String {
        format!(
            "# qreadout {}\n# config_sha256 {}\n# constants_sha256 {}\n",
            self.version, self.config_sha256, self.constants_sha256
        )
    }
}

/// Cartesian product of named axes; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub mode: ScanMode,
    pub axes: Vec<AxisConfig>,
}

impl ScanGrid {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let scan = cfg.scan.as_ref().ok_or_else(|| Error::config("config has no scan section"))?;
        if scan.axes.is_empty() || scan.axes.iter().any(|a| a.values.is_empty()) {
            return Err(Error::config("scan axes must be non-empty"));
        }
        if scan.axes.iter().flat_map(|a| &a.values).any(|v| !v.is_finite()) {
            return Err(Error::config("scan values must be finite"));
        }
        Ok(Self { mode: scan.mode, axes: scan.axes.clone() })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.parameter.clone()).collect()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut out = vec![0.0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = a.values[rest % a.values.len()];
            rest /= a.values.len();
        }
        out
    }

    fn config_at(&self, base: &RunConfig, params: &[f64]) -> Result<RunConfig> {
        self.axes.iter().zip(params).try_fold(base.clone(), |c, (a, &v)| c.with_parameter(&a.parameter, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointOutcome {
    pub time_s: f64,
    pub infidelity: f64,
    /// Short hash of the final populations.
    pub digest: String,
    pub steps: u64,
    pub max_trace_error: f64,
    pub min_population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PointStatus {
    Complete(PointOutcome),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub index: usize,
    pub params: Vec<f64>,
    pub status: PointStatus,
}

impl PointRecord {
    pub fn outcome(&self) -> Option<&PointOutcome> {
        match &self.status {
            PointStatus::Complete(o) => Some(o),
            PointStatus::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub parameters: Vec<String>,
    pub points: Vec<PointRecord>,
    pub provenance: Provenance,
}

fn digest(pops: &[f64]) -> String {
    let mut s = String::with_capacity(16 * pops.len());
    for p in pops {
        let _ = write!(s, "{p:.8e},");
    }
    hex::encode(&Sha256::digest(s.as_bytes())[..8])
}

fn evaluate(grid: &ScanGrid, base: &RunConfig, constants: &Arc<AtomicConstants>, index: usize) -> PointRecord {
    let params = grid.point(index);
    let status = grid
        .config_at(base, &params)
        .and_then(|c| c.prepare(constants.clone()))
        .and_then(|p| p.run())
        .map(|r| {
            let d = r.trajectory.diagnostics;
            PointStatus::Complete(PointOutcome {
                time_s: r.time_to_target,
                infidelity: r.infidelity,
                digest: digest(&r.trajectory.final_populations),
                steps: d.accepted_steps,
                max_trace_error: d.max_trace_error,
                min_population: d.min_population,
            })
        })
        .unwrap_or_else(|e| PointStatus::Failed(e.to_string()));
    PointRecord { index, params, status }
}

const FIXED_COLUMNS: [&str; 9] =
    ["status", "time_us", "infidelity", "digest", "steps", "max_trace_error", "min_population", "error", "index"];

fn column_names(parameters: &[String]) -> Vec<String> {
    let mut cols = vec!["index".to_string()];
    cols.extend(parameters.iter().cloned());
    cols.extend(FIXED_COLUMNS[..8].iter().map(|s| s.to_string()));
    cols
}

fn row(p: &PointRecord) -> Vec<String> {
    let mut r = vec![p.index.to_string()];
    r.extend(p.params.iter().map(|v| format!("{v}")));
    match &p.status {
        PointStatus::Complete(o) => r.extend([
            "ok".into(),
            format!("{:.9e}", o.time_s * 1e6),
            format!("{:.9e}", o.infidelity),
            o.digest.clone(),
            o.steps.to_string(),
            format!("{:.3e}", o.max_trace_error),
            format!("{:.3e}", o.min_population),
            String::new(),
        ]),
        PointStatus::Failed(e) => r.extend([
            "failed".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            e.clone(),
        ]),
    }
    r
}

fn csv_err(e: csv::Error) -> Error {
    Error::Scan(format!("csv: {e}"))
}

impl ScanResult {
    /// Canonical CSV: provenance header, column row, points by index.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = self.provenance.header();
        let _ = writeln!(out, "# points {}", self.points.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(column_names(&self.parameters)).map_err(csv_err)?;
        let mut pts: Vec<&PointRecord> = self.points.iter().collect();
        pts.sort_by_key(|p| p.index);
        for p in pts {
            w.write_record(row(p)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Scan(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.tmp");
        std::fs::write(&tmp, self.to_csv()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Parses a file written by [`ScanResult::to_csv`] or a partial file left
    /// by an interrupted scan.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::validation(format!("scan file: {m}"));
        let mut prov =
            Provenance { version: String::new(), config_sha256: String::new(), constants_sha256: String::new() };
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let mut it = line.trim_start_matches('#').split_whitespace();
            match (it.next(), it.next()) {
                (Some("qreadout"), Some(v)) => prov.version = v.into(),
                (Some("config_sha256"), Some(v)) => prov.config_sha256 = v.into(),
                (Some("constants_sha256"), Some(v)) => prov.constants_sha256 = v.into(),
                _ => {}
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(false).from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
        let n_fixed = FIXED_COLUMNS.len() - 1;
        if headers.len() < 1 + n_fixed || headers[0] != "index" {
            return Err(bad("unexpected columns".into()));
        }
        let parameters = headers[1..headers.len() - n_fixed].to_vec();
        if column_names(&parameters) != headers {
            return Err(bad("unexpected columns".into()));
        }
        let np = parameters.len();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let index: usize = rec[0].parse().map_err(|_| bad(format!("bad index {:?}", &rec[0])))?;
            let params = (1..=np).map(|k| num(&rec[k])).collect::<Result<Vec<_>>>()?;
            let f = |k: usize| &rec[1 + np + k];
            let status = match f(0) {
                "ok" => PointStatus::Complete(PointOutcome {
                    time_s: num(f(1))? * 1e-6,
                    infidelity: num(f(2))?,
                    digest: f(3).into(),
                    steps: f(4).parse().map_err(|_| bad("bad step count".into()))?,
                    max_trace_error: num(f(5))?,
                    min_population: num(f(6))?,
                }),
                "failed" => PointStatus::Failed(f(7).into()),
                s => return Err(bad(format!("unknown status {s:?}"))),
            };
            points.push(PointRecord { index, params, status });
        }
        Ok(Self { parameters, points, provenance: prov })
    }

    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.outcome().is_none()).count()
    }
}

/// Runs every grid point of `loaded` on `workers` threads. With a `sink`,
/// rows are appended as points finish; an existing sink from the same
/// config is resumed, and the sink is rewritten in canonical order at the
/// end.
pub fn run_scan(loaded: &LoadedConfig, workers: usize, sink: Option<&Path>) -> Result<ScanResult> {
    let cfg = &loaded.config;
    let grid = ScanGrid::from_config(cfg)?;
    let library = loaded.library()?;
    let constants = Arc::new(library.species(&cfg.basis.species)?);
    cfg.prepare(constants.clone())?;
    let provenance = Provenance::new(&loaded.sha256, library.checksum());
    let parameters = grid.names();

    let mut done: Vec<PointRecord> = Vec::new();
    if let Some(path) = sink.filter(|p| p.exists()) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let prev = ScanResult::from_csv(&text)?;
        if prev.provenance.config_sha256 != provenance.config_sha256
            || prev.provenance.constants_sha256 != provenance.constants_sha256
            || prev.parameters != parameters
        {
            return Err(Error::validation(format!(
                "{} was written by a different config or constants file; remove it to start over",
                path.display()
            )));
        }
        for p in prev.points {
            if p.index < grid.len() && p.params == grid.point(p.index) && !done.iter().any(|d| d.index == p.index) {
                done.push(p);
            }
        }
    }

    let writer = match sink {
        Some(path) => {
            let fresh = !path.exists() || done.is_empty();
            let partial =
                ScanResult { parameters: parameters.clone(), points: done.clone(), provenance: provenance.clone() };
            if fresh {
                std::fs::write(path, partial.to_csv()?).map_err(|e| Error::io(path, e))?;
            } else {
                partial.write(path)?;
            }
            let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
            Some(Mutex::new(f))
        }
        None => None,
    };

    let todo: Vec<usize> = (0..grid.len()).filter(|i| !done.iter().any(|d| d.index == *i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Scan(format!("thread pool: {e}")))?;
    let fresh: Vec<PointRecord> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let rec = evaluate(&grid, cfg, &constants, i);
                if let Some(w) = &writer {
                    append(w, &rec);
                }
                rec
            })
            .collect()
    });

    done.extend(fresh);
    done.sort_by_key(|p| p.index);
    let result = ScanResult { parameters, points: done, provenance };
    if let Some(path) = sink {
        result.write(path)?;
    }
    Ok(result)
}

fn append(w: &Mutex<File>, rec: &PointRecord) {
    let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if cw.write_record(row(rec)).is_ok() {
        if let Ok(bytes) = cw.into_inner() {
            let mut f = w.lock().unwrap_or_else(|e| e.into_inner());
            // best effort: the final rewrite is authoritative
            let _ = f.write_all(&bytes).and_then(|_| f.flush());
        }
    }
}

/// Picks the winning point. Ties go to the shorter measurement time, then
/// to the lexicographically smaller parameter vector.
pub fn find_optimum(result: &ScanResult, objective: Objective, infidelity_cap: Option<f64>) -> Result<&PointRecord> {
    let lex = |a: &PointRecord, b: &PointRecord| {
        a.params.iter().zip(&b.params).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    };
    let complete = result.points.iter().filter_map(|p| p.outcome().map(|o| (p, o)));
    let candidates: Vec<_> = match objective {
        Objective::MinInfidelity => complete.collect(),
        Objective::MinTimeAtInfidelityCap => {
            let cap = infidelity_cap
                .filter(|c| *c > 0.0)
                .ok_or_else(|| Error::validation("min_time_at_infidelity_cap needs a positive cap"))?;
            complete.filter(|(_, o)| o.infidelity <= cap).collect()
        }
    };
    candidates
        .into_iter()
        .min_by(|(pa, a), (pb, b)| {
            let primary = match objective {
                Objective::MinInfidelity => a.infidelity.total_cmp(&b.infidelity),
                Objective::MinTimeAtInfidelityCap => a.time_s.total_cmp(&b.time_s),
            };
            primary.then(a.time_s.total_cmp(&b.time_s)).then_with(|| lex(pa, pb))
        })
        .map(|(p, _)| p)
        .ok_or_else(|| Error::Scan("no complete point satisfies the objective".into()))
}
