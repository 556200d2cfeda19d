//! Rate tables, single simulations, scans and config validation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::Args;
use qreadout::atom::{mhz_to_rad, rad_to_mhz, AtomicConstants, ConstantsLibrary, TransitionKind};
use qreadout::config::{LoadedConfig, RunConfig};
use qreadout::rates::{
    depump_probability, depump_rate, detection_budget, n_gamma, poisson_classifier, saturation_intensity,
    scattering_rate, DetectionChain, Pathway,
};
use qreadout::scan::{find_optimum as pick, run_scan, PointStatus, Provenance, ScanResult};
use qreadout::{Error, Result};
use serde_json::json;

use crate::output::{emit_json, header, io_err, provenance_json, write_file};
use crate::ObjectiveArg;

#[derive(Args)]
pub struct RatesArgs {
    #[arg(long, default_value = "cs")]
    species: String,
    /// Quadrupole beam intensity for the depumping rate, W/cm^2.
    #[arg(long, default_value_t = 1.8)]
    intensity_w_cm2: f64,
    /// Quadrupole detuning from the cycling resonance, MHz.
    #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
    detuning_mhz: f64,
    /// Window for the depumping probability, s.
    #[arg(long, default_value_t = 0.2)]
    window_s: f64,
    /// D2 saturation parameter for the photon budget.
    #[arg(long, default_value_t = 2.5)]
    saturation: f64,
    /// D2 detuning for the photon budget, in linewidths.
    #[arg(long, default_value_t = -5.64, allow_hyphen_values = true)]
    detuning_gamma: f64,
    /// Exposure for the photon budget, s.
    #[arg(long, default_value_t = 0.07)]
    exposure_s: f64,
    /// Detection chain `eta_na,eta_optics,eta_det,photons`; repeatable.
    #[arg(long = "chain", default_values_t = ["0.082,0.8,0.55,22000".to_string(), "0.28,0.8,0.5,100".to_string()])]
    chains: Vec<String>,
    /// Mean dark counts for the Poisson classifier.
    #[arg(long, default_value_t = 0.0)]
    dark_counts: f64,
}

#[derive(Args)]
pub struct NgammaArgs {
    /// Species tag, or `all`.
    #[arg(long, default_value = "all")]
    species: String,
    /// Saturation parameter of the cycling pair; 0 is the weak-drive limit.
    #[arg(long, default_value_t = 0.0)]
    saturation: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    detuning_mhz: f64,
}

#[derive(Args)]
pub struct SimulateArgs {
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScanArgs {
    config: PathBuf,
    /// Scan CSV; defaults to `<output.directory>/<stem>_scan.csv`. An
    /// existing file from the same config is resumed.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
pub struct OptimumArgs {
    /// Scan CSV written by `scan`.
    scan: PathBuf,
    /// Take objective and cap from this run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    infidelity_cap: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    config: PathBuf,
}

fn library(path: Option<&Path>) -> Result<ConstantsLibrary> {
    ConstantsLibrary::load(path)
}

fn parse_chain(s: &str) -> Result<(DetectionChain, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Validation(format!("chain {s:?}: expected four numbers")))?;
    let [a, b, c, n] = v[..] else {
        return Err(Error::Validation(format!("chain {s:?}: expected eta_na,eta_optics,eta_det,photons")));
    };
    Ok((DetectionChain::new(a, b, c)?, n))
}

pub fn rates(a: &RatesArgs, constants: Option<&Path>) -> Result<()> {
    let lib = library(constants)?;
    let c = lib.species(&a.species)?;
    let mut out = header(lib.checksum());
    out.push_str("quantity,f_upper,value,unit\n");
    let mut row = |q: &str, f: &str, v: f64, unit: &str| {
        let _ = writeln!(out, "{q},{f},{v:.6e},{unit}");
    };
    let (_, bright) = c.ground_manifolds();
    let i = c.nuclear_spin;
    let d2 = c.dipole_line()?;
    let d2_up = &c.levels[d2.upper];
    let f_cycle = d2_up.manifolds(i).last().unwrap();
    row("isat_e1", &f_cycle.to_string(), saturation_intensity(&c, TransitionKind::E1, f_cycle, bright)?, "W/cm2");
    if c.e2_anchor.is_some() {
        let e2 = c.quadrupole_line()?;
        for f in c.levels[e2.upper].manifolds(i).collect::<Vec<_>>().into_iter().rev() {
            if let Ok(v) = saturation_intensity(&c, TransitionKind::E2, f, bright) {
                row("isat_e2", &f.to_string(), v, "W/cm2");
            }
        }
        let r = depump_rate(&c, a.intensity_w_cm2, mhz_to_rad(a.detuning_mhz))?;
        row("depump_rate", "", r, "1/s");
        row("depump_probability", "", depump_probability(r, a.window_s), "");
    }
    let g = d2_up.linewidth;
    let photons = scattering_rate(a.saturation, a.detuning_gamma * g, g) * a.exposure_s;
    row("d2_scattering_rate", "", scattering_rate(a.saturation, a.detuning_gamma * g, g), "1/s");
    row("d2_photons", "", photons, "");
    for s in &a.chains {
        let (chain, n) = parse_chain(s)?;
        let counts = detection_budget(&chain, n);
        row("eta", "", chain.eta(), "");
        row("photoelectrons", "", counts, "");
        if counts > a.dark_counts {
            let cls = poisson_classifier(a.dark_counts, counts, None)?;
            row("poisson_threshold", "", cls.threshold as f64, "counts");
            row("poisson_error", "", cls.error, "");
        }
    }
    print!("{out}");
    Ok(())
}

pub fn ngamma(a: &NgammaArgs, constants: Option<&Path>) -> Result<()> {
    let lib = library(constants)?;
    let species: Vec<AtomicConstants> = if a.species.eq_ignore_ascii_case("all") {
        lib.tags().map(|t| lib.species(t)).collect::<Result<_>>()?
    } else {
        vec![lib.species(&a.species)?]
    };
    let mut out = header(lib.checksum());
    out.push_str("species,pathway,saturation,detuning_mhz,cycling_rate_per_s,raman_rate_per_s,n_gamma\n");
    for c in &species {
        for (name, p) in [("d2", Pathway::D2), ("quadrupole_cascade", Pathway::QuadrupoleCascade)] {
            let r = n_gamma(c, p, a.saturation, mhz_to_rad(a.detuning_mhz))?;
            let _ = writeln!(
                out,
                "{},{name},{},{},{:.6e},{:.6e},{:.6e}",
                c.species, a.saturation, a.detuning_mhz, r.cycling_rate, r.raman_rate, r.n_gamma
            );
        }
    }
    print!("{out}");
    Ok(())
}

/// A config that cannot be read is a configuration error, not a runtime one.
fn read_config(path: &Path) -> Result<LoadedConfig> {
    LoadedConfig::from_path(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })
}

fn load(path: &Path) -> Result<(LoadedConfig, ConstantsLibrary, Arc<AtomicConstants>)> {
    let loaded = read_config(path)?;
    let lib = loaded.library()?;
    let c = Arc::new(lib.species(&loaded.config.basis.species)?);
    Ok((loaded, lib, c))
}

fn output_path(cfg: &RunConfig, dir: Option<&Path>, suffix: &str) -> PathBuf {
    dir.unwrap_or(&cfg.output.directory).join(format!("{}_{suffix}", cfg.output.stem))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (loaded, lib, c) = load(&a.config)?;
    let cfg = &loaded.config;
    let prepared = cfg.prepare(c.clone())?;
    let start = Instant::now();
    let readout = prepared.run()?;
    let runtime = start.elapsed().as_secs_f64();

    let levels: Vec<_> = prepared
        .basis
        .levels()
        .iter()
        .map(|&k| {
            let l = &c.levels[k];
            json!({
                "level": l.name,
                "a_hfs_mhz": rad_to_mhz(l.a_hfs),
                "b_hfs_mhz": rad_to_mhz(l.b_hfs),
                "linewidth_mhz": rad_to_mhz(l.linewidth),
                "g_j": l.g_j,
                "source": l.source,
            })
        })
        .collect();
    let d = readout.trajectory.diagnostics;
    let report = json!({
        "provenance": provenance_json(&loaded.sha256, lib.checksum()),
        "description": cfg.description,
        "species": c.species,
        "basis_states": prepared.basis.len(),
        "equation_count": prepared.system.equation_count(),
        "photon_target": prepared.target,
        "time_to_target_us": readout.time_to_target * 1e6,
        "raman_infidelity": readout.infidelity,
        "runtime_s": runtime,
        "diagnostics": d,
        "hyperfine_constants": levels,
    });
    let summary_path = output_path(cfg, a.output_dir.as_deref(), "summary.json");
    emit_json(&report, Some(&summary_path))?;
    let mut csv = Provenance::new(&loaded.sha256, lib.checksum()).header();
    let mut buf = Vec::new();
    readout
        .trajectory
        .write_csv(&mut buf, cfg.output.max_trajectory_rows)
        .map_err(|e| io_err(Path::new("<trajectory>"), e))?;
    csv.push_str(&String::from_utf8_lossy(&buf));
    let traj_path = output_path(cfg, a.output_dir.as_deref(), "trajectory.csv");
    write_file(&traj_path, csv.as_bytes())?;

    println!("basis states      {}", prepared.basis.len());
    println!("equations         {}", prepared.system.equation_count());
    println!("time to {} photons {:.3} us", prepared.target, readout.time_to_target * 1e6);
    println!("Raman infidelity  {:.4e}", readout.infidelity);
    println!("max trace error   {:.2e}", d.max_trace_error);
    println!("runtime           {runtime:.2} s");
    println!("wrote {} and {}", summary_path.display(), traj_path.display());
    Ok(())
}

pub fn scan(a: &ScanArgs, workers: usize) -> Result<()> {
    let loaded = read_config(&a.config)?;
    let cfg = &loaded.config;
    let Some(sc) = &cfg.scan else {
        return Err(Error::Config("config has no scan section".into()));
    };
    let sink = a.output.clone().unwrap_or_else(|| output_path(cfg, None, "scan.csv"));
    if let Some(dir) = sink.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let start = Instant::now();
    let result = run_scan(&loaded, workers, Some(&sink))?;
    let failed = result.failed();
    println!(
        "{} points ({failed} failed) in {:.1} s on {workers} workers -> {}",
        result.points.len(),
        start.elapsed().as_secs_f64(),
        sink.display()
    );
    for p in result.points.iter().filter(|p| p.outcome().is_none()) {
        if let PointStatus::Failed(e) = &p.status {
            eprintln!("point {} failed: {e}", p.index);
        }
    }
    if failed == result.points.len() {
        return Err(Error::Scan("every point failed".into()));
    }
    match pick(&result, sc.objective, sc.infidelity_cap) {
        Ok(best) => {
            let o = best.outcome().unwrap();
            let params: Vec<String> =
                result.parameters.iter().zip(&best.params).map(|(n, v)| format!("{n}={v}")).collect();
            println!("optimum: {}  time {:.3} us  infidelity {:.4e}", params.join(" "), o.time_s * 1e6, o.infidelity);
        }
        Err(e) => println!("no optimum: {e}"),
    }
    Ok(())
}

pub fn find_optimum(a: &OptimumArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.scan).map_err(|e| io_err(&a.scan, e))?;
    let result = ScanResult::from_csv(&text)?;
    let from_cfg = match &a.config {
        Some(p) => read_config(p)?.config.scan,
        None => None,
    };
    let objective = a
        .objective
        .map(Into::into)
        .or(from_cfg.as_ref().map(|s| s.objective))
        .unwrap_or(qreadout::config::Objective::MinInfidelity);
    let cap = a.infidelity_cap.or(from_cfg.and_then(|s| s.infidelity_cap));
    let best = pick(&result, objective, cap)?;
    let o = best.outcome().unwrap();
    let params: serde_json::Map<String, serde_json::Value> =
        result.parameters.iter().cloned().zip(best.params.iter().map(|v| json!(v))).collect();
    let report = json!({
        "provenance": provenance_json(&result.provenance.config_sha256, &result.provenance.constants_sha256),
        "objective": objective,
        "infidelity_cap": cap,
        "index": best.index,
        "parameters": params,
        "time_us": o.time_s * 1e6,
        "infidelity": o.infidelity,
    });
    emit_json(&report, a.output.as_deref())?;
    if a.output.is_some() {
        println!("index {}  time {:.3} us  infidelity {:.4e}", best.index, o.time_s * 1e6, o.infidelity);
    }
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> Result<()> {
    let (loaded, lib, c) = load(&a.config)?;
    let prepared = loaded.config.prepare(c)?;
    let canonical = serde_json::to_string_pretty(&loaded.config)?;
    println!("{canonical}");
    eprintln!(
        "ok: config_sha256 {} constants_sha256 {} states {} equations {}",
        loaded.sha256,
        lib.checksum(),
        prepared.basis.len(),
        prepared.system.equation_count()
    );
    Ok(())
}
