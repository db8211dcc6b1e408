//! The `drm` command line.
//!
//! Values come from, in increasing precedence: built-in defaults, the
//! `--config` TOML file, and command-line flags. Every subcommand writes its
//! CSV/JSON outputs plus a `<subcommand>.manifest.json` into the output
//! directory (`--out-dir`, else `$DRM_OUT_DIR`, else `run.out_dir`).

mod output;
mod sweep;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    build_cycle_state, compare_distributions, cycle_peaks, decay_curve, default_region_edge,
    detect_peaks, summarize, DistributionSnapshot, Dynamics, PeakOptions,
};
use crate::classical::{
    action_histogram, basin_census, propagate_ensemble, stroboscopic_map, uniform_edges,
    AttractorKind, BasinGrid, BasinOptions, Ensemble, PhasePoint,
};
use crate::effective::{
    fit_lifetime_scaling, lifetime_scan, separatrix_area, EffectiveParams, SlowModeOptions,
};
use crate::error::{Error, Result};
use crate::model::{derive_geometry, load_config, Config, ModelParams};
use crate::quantum::{evolve, DensityMatrix, EvolveOptions, Frame, MomentumBasis};
use crate::superop::{
    build_liouvillian_in, diagonalize_leading, floquet_operator, spectrum, FloquetOptions,
    SpectrumKind,
};

pub use output::{config_digest, sha256_hex, RunManifest};
pub use sweep::Sweep;

use output::{fmt, CsvTable, RunContext};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_OUTPUT: i32 = 4;
pub const EXIT_NUMERICS: i32 = 5;
pub const EXIT_MODEL: i32 = 6;

pub const OUT_DIR_ENV: &str = "DRM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "drm", version, about = "Quantum and classical dissipative double resonance model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Model overrides; each takes a value, a list `a,b`, or `start:stop:step`.
/// Only the swept axis of a subcommand may have more than one value.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long = "G", allow_hyphen_values = true)]
    pub g: Option<Sweep>,
    #[arg(long, allow_hyphen_values = true)]
    pub v_plus: Option<Sweep>,
    #[arg(long, allow_hyphen_values = true)]
    pub v_minus: Option<Sweep>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<Sweep>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<Sweep>,
    #[arg(long, allow_hyphen_values = true)]
    pub hbar: Option<Sweep>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classical equations of motion.
    #[command(subcommand)]
    Classical(ClassicalCmd),
    /// Master-equation time evolution.
    #[command(subcommand)]
    Quantum(QuantumCmd),
    /// Floquet and Liouvillian spectra.
    #[command(subcommand)]
    Spectrum(SpectrumCmd),
    /// Single-resonance effective model.
    #[command(subcommand)]
    Effective(EffectiveCmd),
    /// Observables built from spectra and trajectories.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
}

#[derive(Debug, Subcommand)]
pub enum ClassicalCmd {
    /// Stroboscopic map from orbits started at theta = 0.
    Map {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 24)]
        orbits: usize,
    },
    /// Attractor label for every point of the basin grid.
    Basins {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Action histogram of a ring ensemble started at I = I+.
    Ensemble {
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum QuantumCmd {
    /// Evolve |n0><n0| and record populations at stroboscopic samples.
    Evolve {
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpectrumCmd {
    /// Leading Floquet eigenvalues, swept over --omega.
    Floquet {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10)]
        levels: usize,
    },
    /// Rotating-frame Liouvillian eigenvalues (one wave), swept over --gamma.
    Liouvillian {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100)]
        levels: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum EffectiveCmd {
    /// Separatrix area of the local basin, swept over --gamma.
    Separatrix {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Liouvillian lifetime swept over --hbar, with the scaling fit.
    LifetimeScan {
        #[command(flatten)]
        model: ModelArgs,
        /// Gap ratio required to call the slow mode isolated.
        #[arg(long, default_value_t = 3.0)]
        gap_threshold: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Stationary and metastable states and the two cycle combinations.
    CycleState {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Projection of |n+><n+| onto the slow mode over time.
    Decay {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Quantum populations at t_final against the classical histogram.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
    },
}

/// Distinguishes where a failure happened, for the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Run(e) => exit_code(e),
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Run(e) => e,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. } | Error::ConfigParse { .. } => EXIT_CONFIG,
        Error::Io { .. } => EXIT_OUTPUT,
        Error::NotConverged { .. } | Error::Eigen { .. } | Error::Quadrature { .. } => EXIT_NUMERICS,
        _ => EXIT_MODEL,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            EXIT_OK
        }
        Err(f) => {
            eprintln!("drm: error: {}", f.error());
            f.exit_code()
        }
    }
}

fn base_config(g: &GlobalArgs) -> std::result::Result<Config, Failure> {
    let mut cfg = match &g.config {
        Some(path) => load_config(path).map_err(Failure::Config)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.run.workers = w;
    }
    if let Some(d) = &g.out_dir {
        cfg.run.out_dir = d.clone();
    }
    Ok(cfg)
}

/// Which model parameter a subcommand sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    None,
    Omega,
    Gamma,
    Hbar,
}

/// Applies single-valued overrides and returns the values of the swept axis.
fn apply_model(cfg: &mut Config, m: &ModelArgs, axis: Axis) -> std::result::Result<Vec<f64>, Failure> {
    let one = |name: &'static str, s: &Option<Sweep>| -> std::result::Result<Option<f64>, Failure> {
        match s {
            None => Ok(None),
            Some(sw) => sw.single().map(Some).ok_or_else(|| {
                Failure::Config(Error::Validation {
                    key: name,
                    reason: "this subcommand takes a single value here".into(),
                })
            }),
        }
    };
    let p = &mut cfg.model;
    if let Some(v) = one("G", &m.g)? {
        p.g = v;
    }
    if let Some(v) = one("V_plus", &m.v_plus)? {
        p.v_plus = v;
    }
    if let Some(v) = one("V_minus", &m.v_minus)? {
        p.v_minus = v;
    }
    let mut swept = Vec::new();
    for (ax, name, s, slot) in [
        (Axis::Omega, "omega", &m.omega, &mut p.omega),
        (Axis::Gamma, "gamma", &m.gamma, &mut p.gamma),
        (Axis::Hbar, "hbar", &m.hbar, &mut p.hbar),
    ] {
        if ax == axis {
            swept = s.as_ref().map(|sw| sw.0.clone()).unwrap_or_else(|| vec![*slot]);
            *slot = swept[0];
        } else if let Some(v) = one(name, s)? {
            *slot = v;
        }
    }
    cfg.validate().map_err(Failure::Config)?;
    for v in &swept {
        let probe = match axis {
            Axis::Omega => cfg.model.with_omega(*v),
            Axis::Gamma => cfg.model.with_gamma(*v),
            Axis::Hbar => cfg.model.with_hbar(*v),
            Axis::None => cfg.model,
        };
        probe.validate().map_err(Failure::Config)?;
    }
    Ok(swept)
}

fn configure_workers(workers: usize) {
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let par = if workers == 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(workers)
    };
    faer::set_global_parallelism(par);
}

fn run(cli: Cli, argv: Vec<String>) -> std::result::Result<PathBuf, Failure> {
    let mut cfg = base_config(&cli.global)?;
    let (name, model, axis) = match &cli.command {
        Command::Classical(c) => match c {
            ClassicalCmd::Map { model, .. } => ("classical map", model, Axis::None),
            ClassicalCmd::Basins { model } => ("classical basins", model, Axis::None),
            ClassicalCmd::Ensemble { model } => ("classical ensemble", model, Axis::None),
        },
        Command::Quantum(QuantumCmd::Evolve { model }) => ("quantum evolve", model, Axis::None),
        Command::Spectrum(c) => match c {
            SpectrumCmd::Floquet { model, .. } => ("spectrum floquet", model, Axis::Omega),
            SpectrumCmd::Liouvillian { model, .. } => ("spectrum liouvillian", model, Axis::Gamma),
        },
        Command::Effective(c) => match c {
            EffectiveCmd::Separatrix { model } => ("effective separatrix", model, Axis::Gamma),
            EffectiveCmd::LifetimeScan { model, .. } => ("effective lifetime-scan", model, Axis::Hbar),
        },
        Command::Analyze(c) => match c {
            AnalyzeCmd::CycleState { model } => ("analyze cycle-state", model, Axis::None),
            AnalyzeCmd::Decay { model } => ("analyze decay", model, Axis::None),
            AnalyzeCmd::Compare { model } => ("analyze compare", model, Axis::None),
        },
    };
    let lifetime_default = matches!(cli.command, Command::Effective(EffectiveCmd::LifetimeScan { .. }))
        && model.hbar.is_none();
    let mut swept = apply_model(&mut cfg, model, axis)?;
    if lifetime_default {
        swept = vec![0.5, 0.4, 1.0 / 3.0, 0.25, 0.2];
    }
    configure_workers(cfg.run.workers);
    let out_dir = cfg.run.out_dir.clone();
    let workers = cfg.run.workers;
    let mut ctx = RunContext::new(name, out_dir, cfg, argv, workers).map_err(Failure::Run)?;
    let r = match &cli.command {
        Command::Classical(ClassicalCmd::Map { orbits, .. }) => classical_map(&mut ctx, *orbits),
        Command::Classical(ClassicalCmd::Basins { .. }) => classical_basins(&mut ctx),
        Command::Classical(ClassicalCmd::Ensemble { .. }) => classical_ensemble(&mut ctx),
        Command::Quantum(QuantumCmd::Evolve { .. }) => quantum_evolve(&mut ctx),
        Command::Spectrum(SpectrumCmd::Floquet { levels, .. }) => spectrum_floquet(&mut ctx, &swept, *levels),
        Command::Spectrum(SpectrumCmd::Liouvillian { levels, .. }) => {
            spectrum_liouvillian(&mut ctx, &swept, *levels)
        }
        Command::Effective(EffectiveCmd::Separatrix { .. }) => effective_separatrix(&mut ctx, &swept),
        Command::Effective(EffectiveCmd::LifetimeScan { gap_threshold, .. }) => {
            lifetime(&mut ctx, &swept, *gap_threshold)
        }
        Command::Analyze(AnalyzeCmd::CycleState { .. }) => cycle_state(&mut ctx),
        Command::Analyze(AnalyzeCmd::Decay { .. }) => decay(&mut ctx),
        Command::Analyze(AnalyzeCmd::Compare { .. }) => compare(&mut ctx),
    };
    r.map_err(|e| match e {
        Error::Validation { .. } | Error::ConfigParse { .. } => Failure::Config(e),
        other => Failure::Run(other),
    })?;
    ctx.finish().map_err(Failure::Run)
}

/// Basis from `quantum.n_min` / `quantum.n_max` when given, else the default truncation.
pub fn quantum_basis(cfg: &Config, params: &ModelParams) -> Result<MomentumBasis> {
    let q = &cfg.quantum;
    match (q.n_min, q.n_max) {
        (None, None) => Ok(MomentumBasis::for_params(params, q.margin)),
        (lo, Some(hi)) => MomentumBasis::range(lo.unwrap_or(-hi), hi),
        (Some(lo), None) => MomentumBasis::range(lo, -lo),
    }
}

fn floquet_options(cfg: &Config) -> FloquetOptions {
    FloquetOptions {
        steps_per_period: cfg.quantum.dt_steps_per_period,
        seed: cfg.run.seed,
        max_doublings: 3,
        ..FloquetOptions::default()
    }
}

fn initial_level(cfg: &Config) -> i64 {
    cfg.quantum
        .n0
        .unwrap_or_else(|| (derive_geometry(&cfg.model).i_plus / cfg.model.hbar).round() as i64)
}

fn action_edges(cfg: &Config) -> Vec<f64> {
    let (lo, hi) = match cfg.classical.action_range {
        Some([lo, hi]) => (lo, hi),
        None => {
            let span = 2.0 * cfg.model.omega / cfg.model.g;
            (-span, span)
        }
    };
    uniform_edges(lo, hi, cfg.classical.histogram_bins)
}

fn classical_map(ctx: &mut RunContext, orbits: usize) -> Result<()> {
    let cfg = ctx.config.clone();
    let edges = action_edges(&cfg);
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let starts: Vec<f64> = (0..orbits.max(1))
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / orbits.max(1) as f64)
        .collect();
    use rayon::prelude::*;
    let maps: Vec<Vec<PhasePoint>> = starts
        .par_iter()
        .map(|a| {
            stroboscopic_map(
                PhasePoint::new(0.0, *a),
                cfg.classical.map_periods,
                &cfg.model,
                cfg.classical.dt_steps_per_period,
            )
        })
        .collect();
    let mut t = CsvTable::new(&["orbit", "initial_action", "period", "theta", "action"]);
    for (k, (a, pts)) in starts.iter().zip(&maps).enumerate() {
        for (m, p) in pts.iter().enumerate() {
            t.row(&[k.to_string(), fmt(*a), m.to_string(), fmt(p.theta), fmt(p.action)]);
        }
    }
    ctx.csv("", &t)?;
    Ok(())
}

fn classical_basins(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model;
    let c = &cfg.classical;
    let edges = action_edges(&cfg);
    let grid = BasinGrid {
        n_theta: c.grid_theta,
        n_action: c.grid_action,
        action_range: (edges[0], edges[edges.len() - 1]),
    };
    let opts = BasinOptions {
        horizon_periods: c.horizon_periods,
        tol: c.tol_factor * derive_geometry(&p).delta_i(),
        steps_per_period: c.dt_steps_per_period,
        ..BasinOptions::for_params(&p)
    };
    let cells = basin_census(&grid, &p, &opts)?;
    let mut t = CsvTable::new(&["theta", "action", "label"]);
    let kinds = [
        AttractorKind::UpperCycle,
        AttractorKind::LowerCycle,
        AttractorKind::FixedPoint0,
        AttractorKind::FixedPointPi,
        AttractorKind::Unresolved,
    ];
    let mut counts = [0usize; 5];
    for cell in &cells {
        t.row(&[fmt(cell.initial.theta), fmt(cell.initial.action), cell.label.kind.as_str().to_string()]);
        counts[kinds.iter().position(|k| *k == cell.label.kind).expect("known kind")] += 1;
    }
    ctx.csv("", &t)?;
    let census: serde_json::Map<String, serde_json::Value> = kinds
        .iter()
        .zip(counts)
        .map(|(k, n)| (k.as_str().to_string(), json!(n)))
        .collect();
    ctx.json("", &json!({ "cells": cells.len(), "census": census }))?;
    Ok(())
}

/// Ring ensemble at `I+` propagated to `t_final_periods`.
pub fn relaxed_ring_histogram(cfg: &Config) -> Result<crate::classical::Histogram> {
    let p = cfg.model;
    let ring = Ensemble::ring(derive_geometry(&p).i_plus, cfg.classical.particles)?;
    let out = propagate_ensemble(
        &ring,
        cfg.classical.t_final_periods as f64 * p.period(),
        &p,
        cfg.classical.dt_steps_per_period,
    );
    action_histogram(&out, &action_edges(cfg))
}

fn classical_ensemble(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let h = relaxed_ring_histogram(&cfg)?;
    let mut t = CsvTable::new(&["I", "weight", "source"]);
    let total = h.total() + h.outside;
    for (x, w) in h.centers().iter().zip(&h.weights) {
        t.row(&[fmt(*x), fmt(w / total), "classical".into()]);
    }
    ctx.csv("", &t)?;
    let w: Vec<f64> = h.weights.iter().map(|w| w / total).collect();
    let summary = summarize(&h.centers(), &w, default_region_edge(&cfg.model), &PeakOptions::default());
    ctx.json("", &json!({ "particles": cfg.classical.particles, "outside": h.outside / total, "summary": summary }))?;
    Ok(())
}

#[derive(Serialize)]
struct SampleCheck {
    time: f64,
    trace_error: f64,
    hermiticity_error: f64,
    min_eigenvalue: f64,
    asymmetry: f64,
}

fn quantum_evolve(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model;
    let q = &cfg.quantum;
    let basis = quantum_basis(&cfg, &p)?;
    let n0 = initial_level(&cfg);
    let rho0 = DensityMatrix::pure_level(basis, n0)?;
    let every = q.sample_every_periods.max(1);
    let times: Vec<f64> = (1..=q.t_final_periods / every)
        .map(|k| (k * every) as f64 * p.period())
        .collect();
    let opts = EvolveOptions {
        steps_per_period: q.dt_steps_per_period,
        ..EvolveOptions::default()
    };
    let traj = evolve(&rho0, 0.0, &times, &p, &opts)?;
    let mut t = CsvTable::new(&["t", "n", "I", "p"]);
    let mut checks = Vec::new();
    for (time, rho) in traj.times.iter().zip(&traj.states) {
        for (n, pn) in basis.levels().zip(rho.populations()) {
            t.row(&[fmt(*time), n.to_string(), fmt(p.hbar * n as f64), fmt(pn)]);
        }
        checks.push(SampleCheck {
            time: *time,
            trace_error: (rho.trace() - C64::new(1.0, 0.0)).norm(),
            hermiticity_error: rho.hermiticity_error(),
            min_eigenvalue: rho.min_eigenvalue()?,
            asymmetry: DistributionSnapshot::from_density(rho, *time, p.hbar).asymmetry(),
        });
    }
    ctx.csv("", &t)?;
    ctx.json(
        "",
        &json!({
            "n0": n0,
            "n_min": basis.n_min(),
            "n_max": basis.n_max(),
            "steps_per_period": q.dt_steps_per_period,
            "samples": checks,
            "warnings": traj.warnings,
        }),
    )?;
    Ok(())
}

fn complex_json(z: C64) -> serde_json::Value {
    json!([z.re, z.im])
}

fn spectrum_floquet(ctx: &mut RunContext, omegas: &[f64], levels: usize) -> Result<()> {
    let cfg = ctx.config.clone();
    let mut t = CsvTable::new(&["omega", "j", "re", "im", "abs"]);
    let mut meta = Vec::new();
    for &om in omegas {
        let p = cfg.model.with_omega(om);
        let basis = quantum_basis(&cfg, &p)?;
        let u = floquet_operator(&basis, &p, &floquet_options(&cfg))?;
        let ev = spectrum(&u.op, SpectrumKind::Floquet)?;
        for (j, z) in ev.iter().take(levels).enumerate() {
            t.row(&[fmt(om), j.to_string(), fmt(z.re), fmt(z.im), fmt(z.norm())]);
        }
        meta.push(json!({
            "omega": om,
            "n_min": basis.n_min(),
            "n_max": basis.n_max(),
            "steps_per_period": u.steps_per_period,
            "gate_residual": u.gate_residual,
        }));
    }
    ctx.csv("", &t)?;
    ctx.json("", &json!({ "hbar": cfg.model.hbar, "points": meta }))?;
    Ok(())
}

fn one_wave_frame(p: &ModelParams) -> Result<()> {
    if p.v_minus != 0.0 && p.v_plus != 0.0 {
        return Err(Error::Precondition(
            "the rotating-frame Liouvillian needs one wave switched off (e.g. --v-minus 0)".into(),
        ));
    }
    Ok(())
}

fn spectrum_liouvillian(ctx: &mut RunContext, gammas: &[f64], levels: usize) -> Result<()> {
    let cfg = ctx.config.clone();
    one_wave_frame(&cfg.model)?;
    let basis = quantum_basis(&cfg, &cfg.model)?;
    let mut t = CsvTable::new(&["gamma", "j", "re", "im"]);
    for &g in gammas {
        let p = cfg.model.with_gamma(g);
        let l = build_liouvillian_in(Frame::Rotating, 0.0, &basis, &p)?;
        let ev = spectrum(&l, SpectrumKind::Liouvillian)?;
        for (j, z) in ev.iter().take(levels).enumerate() {
            t.row(&[fmt(g), j.to_string(), fmt(z.re), fmt(z.im)]);
        }
    }
    ctx.csv("", &t)?;
    ctx.json("", &json!({ "n_min": basis.n_min(), "n_max": basis.n_max(), "frame": "rotating" }))?;
    Ok(())
}

fn effective_separatrix(ctx: &mut RunContext, gammas: &[f64]) -> Result<()> {
    let cfg = ctx.config.clone();
    let mut t = CsvTable::new(&["gamma", "exists", "saddle_phase", "turning_phase", "area"]);
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for &g in gammas {
        let eff = EffectiveParams::from_model(&cfg.model.with_gamma(g));
        let r = separatrix_area(&eff)?;
        t.row(&[fmt(g), r.exists.to_string(), opt(r.saddle_phase), opt(r.turning_phase), fmt(r.area)]);
    }
    ctx.csv("", &t)?;
    ctx.json("", &json!({ "gamma_critical": derive_geometry(&cfg.model).gamma_critical }))?;
    Ok(())
}

fn lifetime(ctx: &mut RunContext, hbars: &[f64], gap_threshold: f64) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model.with_v_minus(0.0);
    let opts = SlowModeOptions { gap_threshold, ..SlowModeOptions::default() };
    let samples = lifetime_scan(&p, hbars, cfg.quantum.margin, &opts)?;
    let mut t = CsvTable::new(&["hbar", "gamma", "re_eps1", "tau", "gap_ratio", "isolated", "n_min", "n_max"]);
    for s in &samples {
        t.row(&[
            fmt(s.hbar),
            fmt(s.gamma),
            fmt(s.eps1.re),
            fmt(s.tau),
            fmt(s.gap_ratio),
            s.isolated.to_string(),
            s.n_min.to_string(),
            s.n_max.to_string(),
        ]);
    }
    ctx.csv("", &t)?;
    let area = separatrix_area(&EffectiveParams::from_model(&p))?.area;
    let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.hbar, s.tau)).collect();
    let fit = match fit_lifetime_scaling(&pairs, area, p.gamma) {
        Ok(f) => json!({ "A": f.slope_a, "prefactor": f.prefactor, "quality": f.quality }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    ctx.json("", &json!({ "area": area, "gamma": p.gamma, "omega": p.omega, "fit": fit }))?;
    Ok(())
}

fn cycle_state(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model;
    let basis = quantum_basis(&cfg, &p)?;
    let u = floquet_operator(&basis, &p, &floquet_options(&cfg))?;
    let dec = diagonalize_leading(&u.op, SpectrumKind::Floquet, 4)?;
    let plus = build_cycle_state(&dec, 1, &p)?;
    let minus = build_cycle_state(&dec, -1, &p)?;
    let cols: Vec<Vec<f64>> = vec![
        dec.modes[0].populations(),
        plus.modes[1].populations(),
        plus.modes[2].populations(),
        plus.state.populations(),
        minus.state.populations(),
    ];
    let mut t = CsvTable::new(&["n", "I", "rho0", "rho1", "rho2", "plus", "minus"]);
    for (k, n) in basis.levels().enumerate() {
        let mut row = vec![n.to_string(), fmt(p.hbar * n as f64)];
        row.extend(cols.iter().map(|c| fmt(c[k])));
        t.row(&row);
    }
    ctx.csv("", &t)?;
    // three-term prediction against direct propagation
    let mut rho = plus.state.clone();
    let mut c7 = Vec::new();
    for m in 1..=10u32 {
        rho = u.op.apply_to(&rho);
        c7.push(rho.max_abs_diff(&plus.predict(m)));
    }
    let x: Vec<f64> = basis.levels().map(|n| p.hbar * n as f64).collect();
    let peaks = detect_peaks(&x, &cols[0], &PeakOptions::default());
    let (lo, hi) = cycle_peaks(&peaks, &p);
    ctx.json(
        "",
        &json!({
            "eigenvalues": dec.eigenvalues.iter().take(6).map(|z| complex_json(*z)).collect::<Vec<_>>(),
            "gap": dec.gap(),
            "residuals": dec.residuals,
            "plus_concentration": plus.concentration,
            "minus_concentration": minus.concentration,
            "three_term_errors": c7,
            "rho0_peaks": peaks,
            "rho0_cycle_peaks": [lo, hi],
            "steps_per_period": u.steps_per_period,
        }),
    )?;
    Ok(())
}

fn decay(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model;
    let basis = quantum_basis(&cfg, &p)?;
    let n_plus = (derive_geometry(&p).i_plus / p.hbar).round() as i64;
    let rho0 = DensityMatrix::pure_level(basis, n_plus)?;
    let horizon = cfg.quantum.t_final_periods;
    let one_wave = p.v_minus == 0.0 || p.v_plus == 0.0;
    let (report, kind) = if one_wave {
        let l = build_liouvillian_in(Frame::Rotating, 0.0, &basis, &p)?;
        let dec = diagonalize_leading(&l, SpectrumKind::Liouvillian, 2)?;
        let dynamics = Dynamics::Master {
            params: &p,
            frame: Frame::Rotating,
            steps_per_period: cfg.quantum.dt_steps_per_period,
        };
        (decay_curve(&dec, 1, &dynamics, &rho0, p.period(), horizon)?, "liouvillian")
    } else {
        let u = floquet_operator(&basis, &p, &floquet_options(&cfg))?;
        let dec = diagonalize_leading(&u.op, SpectrumKind::Floquet, 2)?;
        (decay_curve(&dec, 1, &Dynamics::Floquet(&u.op), &rho0, p.period(), horizon)?, "floquet")
    };
    let mut t = CsvTable::new(&["t", "overlap"]);
    for (time, y) in &report.series {
        t.row(&[fmt(*time), fmt(*y)]);
    }
    ctx.csv("", &t)?;
    ctx.json(
        "",
        &json!({
            "operator": kind,
            "tau_spectral": report.tau_spectral,
            "tau_fit": report.tau_fit,
            "fit_quality": report.fit_quality,
            "flagged": report.flagged,
        }),
    )?;
    Ok(())
}

fn compare(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.clone();
    let p = cfg.model;
    let basis = quantum_basis(&cfg, &p)?;
    let rho0 = DensityMatrix::pure_level(basis, initial_level(&cfg))?;
    let t_final = cfg.quantum.t_final_periods as f64 * p.period();
    let opts = EvolveOptions {
        steps_per_period: cfg.quantum.dt_steps_per_period,
        ..EvolveOptions::default()
    };
    let traj = evolve(&rho0, 0.0, &[t_final], &p, &opts)?;
    let snap = DistributionSnapshot::from_density(&traj.states[0], t_final, p.hbar);
    let hist = relaxed_ring_histogram(&cfg)?;
    let report = compare_distributions(&snap, &hist, default_region_edge(&p), &PeakOptions::default())?;
    let mut t = CsvTable::new(&["I", "weight", "source"]);
    for (x, w) in snap.actions().iter().zip(&snap.populations) {
        t.row(&[fmt(*x), fmt(*w), "quantum".into()]);
    }
    let ctotal = hist.total() + hist.outside;
    for (x, w) in hist.centers().iter().zip(&hist.weights) {
        t.row(&[fmt(*x), fmt(w / ctotal), "classical".into()]);
    }
    ctx.csv("", &t)?;
    ctx.json("", &json!({ "report": report, "warnings": traj.warnings }))?;
    Ok(())
}
