//! `fit-*` subcommands. Inputs are CSV with a header row; `#` lines are
//! ignored.

use std::fmt::Write;
use std::path::Path;

use qreadout::analysis::{fit_histogram, fit_lifetime, fit_ramsey, fit_tof, CountHistogram, MixtureModel};
use qreadout::atom::{ConstantsLibrary, ATOMIC_MASS_UNIT};
use qreadout::scan::VERSION;
use qreadout::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::output::{emit_json, io_err, sha256_hex, summary};

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    sha256: String,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes.as_slice());
        let columns: Vec<String> =
            rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_ascii_lowercase).collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad(format!("row {}: {f:?} is not a number", line + 1))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(bad("no data rows".into()));
        }
        Ok(Self { columns, rows, sha256: sha256_hex(&bytes) })
    }

    fn expect(&self, path: &Path, want: &[&str]) -> Result<()> {
        if self.columns != want {
            return Err(Error::Validation(format!(
                "{}: expected columns {}, found {}",
                path.display(),
                want.join(","),
                self.columns.join(",")
            )));
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r[0], r[1])).collect()
    }
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    provenance: serde_json::Value,
    fit: T,
}

fn report<T: Serialize>(table: &Table, fit: T) -> Report<T> {
    Report { provenance: json!({ "version": VERSION, "input_sha256": table.sha256 }), fit }
}

pub fn histogram(input: &Path, out: Option<&Path>, model: MixtureModel, bin_width: f64) -> Result<()> {
    let t = Table::read(input)?;
    let hist = match t.columns.len() {
        1 => {
            t.expect(input, &["count"])?;
            let shots: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
            CountHistogram::from_shots(&shots, bin_width)?
        }
        _ => {
            t.expect(input, &["bin_low", "bin_high", "occurrences"])?;
            let mut edges: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
            edges.push(t.rows.last().unwrap()[1]);
            if t.rows.windows(2).any(|w| w[0][1] != w[1][0]) {
                return Err(Error::Validation("histogram bins must be contiguous".into()));
            }
            CountHistogram::new(edges, t.rows.iter().map(|r| r[2]).collect())?
        }
    };
    let fit = fit_histogram(&hist, model)?;
    let mut s = String::new();
    let _ = writeln!(s, "dark   weight {:.4} mean {:.3} sigma {:.3}", fit.dark.weight, fit.dark.mean, fit.dark.sigma);
    let _ =
        writeln!(s, "bright weight {:.4} mean {:.3} sigma {:.3}", fit.bright.weight, fit.bright.mean, fit.bright.sigma);
    let _ =
        writeln!(s, "threshold {:.3}  fidelity {:.6}  converged {}", fit.threshold, fit.fidelity, fit.report.converged);
    emit_json(&report(&t, &fit), out)?;
    summary(out.is_some(), &s);
    Ok(())
}

pub fn lifetime(input: &Path, out: Option<&Path>, window_s: Option<f64>) -> Result<()> {
    let t = Table::read(input)?;
    t.expect(input, &["duration_s", "survival"])?;
    let fit = fit_lifetime(&t.pairs(), window_s)?;
    let mut s = String::new();
    if fit.decay_resolved {
        let _ = writeln!(s, "tau {:.6e} s +- {:.2e}", fit.tau_s, fit.tau_sigma_s);
    } else {
        let _ = writeln!(s, "tau unresolved (no decay)");
    }
    if let (Some(w), Some(loss)) = (window_s, fit.window_loss) {
        let _ = writeln!(s, "loss over {w} s: {:.4}%", 100.0 * loss);
    }
    emit_json(&report(&t, &fit), out)?;
    summary(out.is_some(), &s);
    Ok(())
}

pub fn tof(
    input: &Path,
    out: Option<&Path>,
    mass_amu: Option<f64>,
    species: &str,
    constants: Option<&Path>,
) -> Result<()> {
    let t = Table::read(input)?;
    t.expect(input, &["time_s", "radius_m"])?;
    let mass = match mass_amu {
        Some(m) => m,
        None => ConstantsLibrary::load(constants)?.species(species)?.mass / ATOMIC_MASS_UNIT,
    };
    let fit = fit_tof(&t.pairs(), mass)?;
    let s = format!(
        "T {:.4} uK +- {:.2e}  w0 {:.4e} m  (mass {mass} u)\n",
        fit.temperature_k * 1e6,
        fit.temperature_sigma_k * 1e6,
        fit.w0_m
    );
    emit_json(&report(&t, &fit), out)?;
    summary(out.is_some(), &s);
    Ok(())
}

pub fn ramsey(input: &Path, out: Option<&Path>) -> Result<()> {
    let t = Table::read(input)?;
    t.expect(input, &["delay_s", "phase_rad", "population"])?;
    let samples: Vec<(f64, f64, f64)> = t.rows.iter().map(|r| (r[0], r[1], r[2])).collect();
    let fit = fit_ramsey(&samples)?;
    let mut s = String::new();
    for f in &fit.fringes {
        let _ = writeln!(s, "delay {:.4e} s  contrast {:.4} +- {:.2e}", f.delay_s, f.contrast, f.contrast_sigma);
    }
    for (d, why) in &fit.excluded {
        let _ = writeln!(s, "warning: delay {d:.4e} s excluded: {why}");
    }
    match (fit.t2_s, fit.t2_sigma_s) {
        (Some(t2), Some(sig)) => {
            let _ = writeln!(s, "T2* {:.4e} s +- {sig:.2e}", t2);
        }
        _ => {
            let _ = writeln!(s, "T2* unidentifiable");
        }
    }
    emit_json(&report(&t, &fit), out)?;
    summary(out.is_some(), &s);
    Ok(())
}
