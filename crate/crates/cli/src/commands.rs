use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use waveguide_dirac::ab_pipeline::{run_ab, FitResult, FlatPackets};
use waveguide_dirac::design::{compile, effective_couplings, EffectiveCouplings, LatticeDesign, LatticeGeometry};
use waveguide_dirac::dynamics::{evolve_dirac_lattice, evolve_effective, evolve_full, AmplitudeField, DiracLattice};
use waveguide_dirac::io::{self, fmt17, ComplexGrids};
use waveguide_dirac::states::{decode, encode, positive_energy_gaussian, SpinorField};
use waveguide_dirac::{ab_pipeline, C64};

use crate::config::{DesignConfig, DiracConfig, FitConfig, SimulateConfig, StateConfig};
use crate::output::OutputDir;
use crate::{CliError, Context};

/// Resolves `path` against the directory of the config file.
fn resolve(ctx: &Context, path: &str) -> Result<PathBuf, CliError> {
    let p = Path::new(path);
    let full = match (&ctx.config_dir, p.is_relative()) {
        (Some(dir), true) => dir.join(p),
        _ => p.to_path_buf(),
    };
    if !full.is_file() {
        return Err(CliError::MissingFile(full));
    }
    Ok(full)
}

fn open(ctx: &Context, path: &str) -> Result<BufReader<File>, CliError> {
    let full = resolve(ctx, path)?;
    let f = File::open(&full).map_err(|e| CliError::Io(format!("opening {}: {e}", full.display())))?;
    Ok(BufReader::new(f))
}

pub fn build_design(cfg: &DesignConfig) -> Result<LatticeDesign, CliError> {
    let spec = cfg.spacetime.build()?;
    Ok(compile(&spec, &cfg.geometry, &cfg.options)?)
}

fn spinor_state(ctx: &Context, state: &StateConfig, g: LatticeGeometry, mass: f64) -> Result<SpinorField, CliError> {
    match state {
        StateConfig::Gaussian { momentum, width, centre } => {
            let mut s = positive_energy_gaussian(*momentum, *width, *centre, mass, &g)?;
            let n = s.norm();
            s.scale(1.0 / n);
            Ok(s)
        }
        StateConfig::SpinorCsv { path } => Ok(io::read_spinor_csv(open(ctx, path)?, g)?),
        StateConfig::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let mut draw = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut s = SpinorField::from_fn(g, |_, _| [draw(), draw()]);
            let n = s.norm();
            s.scale(1.0 / n);
            Ok(s)
        }
        StateConfig::Site { .. } | StateConfig::Amplitudes { .. } => {
            Err(CliError::Config("this command needs a spinor state (gaussian, spinor-csv or random)".into()))
        }
    }
}

fn amplitude_state(ctx: &Context, state: &StateConfig, design: &LatticeDesign, mass: f64) -> Result<AmplitudeField, CliError> {
    let g = design.geometry;
    match state {
        StateConfig::Site { a, b } => {
            if *a >= g.waveguide_cols() || *b >= g.ny {
                return Err(CliError::Config(format!("site ({a}, {b}) outside the lattice")));
            }
            Ok(AmplitudeField::unit(g.waveguide_cols(), g.ny, *a, *b))
        }
        StateConfig::Amplitudes { path } => {
            let grids = io::read_wga1(open(ctx, path)?)?;
            if grids.rows != g.ny || grids.cols != g.waveguide_cols() || grids.snapshots.is_empty() {
                return Err(CliError::Config("amplitude file does not match the lattice".into()));
            }
            Ok(grids.to_amplitudes().swap_remove(0))
        }
        spinor => Ok(encode(&spinor_state(ctx, spinor, g, mass)?, &design.f_grid)?),
    }
}

fn write_couplings(out: &mut OutputDir, ec: &EffectiveCouplings) -> Result<(), CliError> {
    out.write_with("couplings_x.csv", |w| io::write_site_csv(w, ec.cols, &ec.kx))?;
    out.write_with("couplings_y.csv", |w| io::write_site_csv(w, ec.cols, &ec.ky))
}

fn report_text(design: &LatticeDesign, ec: &EffectiveCouplings) -> String {
    let mut s = String::new();
    let r = &design.report;
    s.push_str(&format!("k0                  {}\n", fmt17(design.k0)));
    s.push_str(&format!("max f               {}\n", fmt17(r.max_f)));
    s.push_str(&format!("xi1                 {}\n", fmt17(r.xi1)));
    s.push_str(&format!("J0(xi1)             {}\n", fmt17(r.j0_xi1)));
    s.push_str(&format!("omega               {}\n", fmt17(design.modulations.omega)));
    s.push_str(&format!("gamma               {}\n", design.modulations.gamma));
    s.push_str(&format!("residual bound      {}\n", fmt17(ec.residual_bound)));
    s.push_str("channels           ");
    for c in &design.modulations.channels {
        s.push_str(&format!(" {}(q={})", c.name, c.q));
    }
    s.push('\n');
    let mags: Vec<f64> = ec.links().iter().map(|l| l.2.abs()).collect();
    let (lo, hi) = mags.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &m| (a.min(m), b.max(m)));
    s.push_str(&format!("links               {}\n", mags.len()));
    if mags.is_empty() {
        return s;
    }
    s.push_str(&format!("|k| min             {}\n|k| max             {}\n", fmt17(lo), fmt17(hi)));
    const BINS: usize = 8;
    let width = (hi - lo) / BINS as f64;
    if width <= 1e-12 * hi {
        s.push_str(&format!("|k| histogram       all {} links at {}\n", mags.len(), fmt17(hi)));
        return s;
    }
    let mut counts = [0usize; BINS];
    for m in &mags {
        counts[(((m - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    s.push_str("|k| histogram\n");
    for (i, c) in counts.iter().enumerate() {
        s.push_str(&format!("  [{}, {})  {c}\n", fmt17(lo + i as f64 * width), fmt17(lo + (i + 1) as f64 * width)));
    }
    s
}

pub fn design(cfg: &DesignConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let design = build_design(cfg)?;
    let ec = effective_couplings(&design)?;
    out.write_json("design.json", &design.summary())?;
    write_couplings(out, &ec)?;
    let g = design.geometry;
    out.write_with("detuning.csv", |w| io::write_site_csv(w, g.waveguide_cols(), &design.detuning.values(0.0, g.sites())))?;
    for c in &design.modulations.channels {
        out.write_with(&format!("channel_{}.csv", c.name), |w| io::write_site_csv(w, g.waveguide_cols(), &c.args))?;
    }
    let report = report_text(&design, &ec);
    print!("{report}");
    out.write("report.txt", report.as_bytes())
}

#[derive(Serialize)]
struct TrajectoryInfo<'a> {
    z: Vec<f64>,
    steps: usize,
    step: f64,
    norm_drift: f64,
    warnings: &'a [String],
}

pub fn simulate(ctx: &Context, cfg: &SimulateConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let design = build_design(&cfg.design)?;
    let c0 = amplitude_state(ctx, &cfg.state, &design, cfg.design.spacetime.mass())?;
    let traj = match cfg.evolution {
        ab_pipeline::Evolution::Effective => {
            evolve_effective(&effective_couplings(&design)?, &design.detuning, &c0, cfg.z_end, &cfg.integrator)?
        }
        ab_pipeline::Evolution::Full => evolve_full(&design, &c0, cfg.z_end, &cfg.integrator)?,
    };
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    out.write_with("trajectory.wga1", |w| io::write_wga1(w, &ComplexGrids::from_amplitudes(&traj.snapshots)?))?;
    let last = traj.last();
    out.write_with("final_intensity.csv", |w| io::write_site_csv(w, last.cols, &last.intensity()))?;
    let psi = decode(last, &design.f_grid, &design.geometry)?;
    out.write_with("final_spinor.csv", |w| io::write_spinor_csv(w, &psi))?;
    let info = TrajectoryInfo {
        z: traj.snapshots.iter().map(|s| s.z).collect(),
        steps: traj.steps,
        step: traj.step,
        norm_drift: traj.norm_drift,
        warnings: &traj.warnings,
    };
    println!("{} snapshots, norm drift {}", traj.snapshots.len(), fmt17(traj.norm_drift));
    out.write_json("trajectory.json", &info)
}

pub fn dirac(ctx: &Context, cfg: &DiracConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let spec = cfg.spacetime.build()?;
    let lattice = DiracLattice::from_spec(&spec, cfg.geometry, cfg.boundary)?;
    let psi0 = spinor_state(ctx, &cfg.state, cfg.geometry, cfg.spacetime.mass())?;
    let traj = evolve_dirac_lattice(&lattice, &psi0, cfg.t_end, &cfg.integrator)?;
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    out.write_with("spinors.wga1", |w| io::write_wga1(w, &ComplexGrids::from_spinors(&traj.snapshots)?))?;
    let last = traj.snapshots.last().expect("trajectory holds the initial state");
    out.write_with("final_spinor.csv", |w| io::write_spinor_csv(w, last))?;
    let info = TrajectoryInfo { z: traj.times.clone(), steps: traj.times.len(), step: cfg.integrator.dz.unwrap_or(f64::NAN), norm_drift: traj.norm_drift, warnings: &traj.warnings };
    println!("{} snapshots, weighted norm drift {}", traj.snapshots.len(), fmt17(traj.norm_drift));
    out.write_json("trajectory.json", &info)
}

#[derive(Serialize)]
struct FitReport<'a> {
    delta_true: Option<f64>,
    delta_hat: f64,
    residual_min: f64,
    samples: usize,
    dropped: Option<usize>,
    mass_initial: Option<f64>,
    mass_final: Option<f64>,
    norm_drift: Option<f64>,
    warnings: &'a [String],
}

fn write_fit(out: &mut OutputDir, fit: &FitResult, report: &FitReport) -> Result<(), CliError> {
    out.write_with("residual.csv", |w| io::write_curve_csv(w, &fit.curve))?;
    println!("delta_hat {}", fmt17(fit.delta_hat));
    out.write_json("fit.json", report)
}

pub fn ab(cfg: &ab_pipeline::ABConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let outcome = run_ab(cfg)?;
    let rec = &outcome.reconstruction;
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    out.write_json("design.json", &ab_pipeline::ab_design(cfg)?.summary())?;
    out.write_with("density.csv", |w| io::write_density_csv(w, &outcome.map))?;
    let report = FitReport {
        delta_true: Some(cfg.delta),
        delta_hat: outcome.fit.delta_hat,
        residual_min: outcome.fit.residual_min,
        samples: outcome.fit.samples,
        dropped: Some(outcome.map.dropped),
        mass_initial: Some(rec.mass_initial),
        mass_final: Some(rec.mass_final),
        norm_drift: Some(rec.norm_drift),
        warnings: &rec.warnings,
    };
    write_fit(out, &outcome.fit, &report)
}

pub fn fit(ctx: &Context, cfg: &FitConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let map = io::read_density_csv(open(ctx, &cfg.density)?)?;
    let flat = FlatPackets::build(&cfg.experiment)?.propagate(cfg.experiment.time)?;
    let fit = ab_pipeline::fit_delta(&map, &flat, cfg.search.unwrap_or(cfg.experiment.search))?;
    let report = FitReport {
        delta_true: None,
        delta_hat: fit.delta_hat,
        residual_min: fit.residual_min,
        samples: fit.samples,
        dropped: None,
        mass_initial: None,
        mass_final: None,
        norm_drift: None,
        warnings: &[],
    };
    write_fit(out, &fit, &report)
}
