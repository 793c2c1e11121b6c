mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use mpt_dde::dde::Integrator;
use mpt_dde::eqfree::{
    continue_fixed_points, lift, ContinuationSettings, FixedPointRecord, HealedMap, PlanarPoint, Stability,
};
use mpt_dde::manifold::{grow_stable_manifold, ManifoldCurve, PlanarMapPair};
use mpt_dde::output::{to_json, write_atomic};
use mpt_dde::scan::{self, ScanResult};
use mpt_dde::{Error, Result};

use config::{parse_override, BifurcationMode, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "mpt-dde",
    version,
    about = "Delay model of glacial cycles: simulation, scans and reduced-map analysis"
)]
struct Cli {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.u=0.09`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (`output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel scans; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Shortcut for `model.u`.
    #[arg(long, global = true)]
    u: Option<f64>,
    /// Shortcut for `model.tau`.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Shortcut for `forcing.phi`.
    #[arg(long, global = true)]
    phi: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate from the configured history.
    Simulate,
    /// Per-period distance from the small state over a grid of amplitudes.
    Heatmap,
    /// Response classification over a grid of planar initial points.
    Basin,
    /// Stable manifold of the saddle of the reduced map.
    Manifold,
    /// Continue a fixed point of the reduced map in the amplitude.
    FixedPoints,
    /// Escape threshold over phase and delay.
    PhaseScan,
    /// Stability of the small orbit along a delay line or over a grid.
    Bifurcation,
    /// Singular values of the chart Jacobian over a rectangle.
    SpectralGap,
    /// Step increase of the forcing amplitude.
    MptScenario,
}

/// A file to be written once everything has been computed.
struct Artifact {
    name: String,
    bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Artifact {
            name: name.into(),
            bytes: bytes.into(),
        }
    }
}

fn table(result: &ScanResult, stem: &str, out: &mut Vec<Artifact>) -> Result<()> {
    out.push(Artifact::new(format!("{stem}.csv"), result.to_csv()?));
    out.push(Artifact::new(format!("{stem}.json"), result.sidecar_json()?));
    Ok(())
}

fn overrides(cli: &Cli) -> Result<Vec<(String, toml::Value)>> {
    let mut list = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let shortcuts = [("model.u", cli.u), ("model.tau", cli.tau), ("forcing.phi", cli.phi)];
    for (key, value) in shortcuts {
        if let Some(v) = value {
            list.push((key.to_string(), toml::Value::Float(v)));
        }
    }
    if let Some(dir) = &cli.out {
        list.push(("output".into(), toml::Value::String(dir.to_string_lossy().into_owned())));
    }
    Ok(list)
}

fn integrator(cfg: &RunConfig) -> Result<Integrator> {
    Integrator::new(cfg.model, cfg.forcing()?, cfg.integrator.h)
}

fn simulate(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let integ = integrator(cfg)?;
    let y0 = lift(cfg.history_point(), integ.n(), integ.h())?;
    let (trajectory, _) = integ.trajectory(&y0, cfg.integrator.t_span)?;
    let prov = json!({
        "operation": "simulate",
        "params": cfg.model,
        "forcing": integ.forcing(),
        "h": integ.h(),
        "history": cfg.history,
        "t_span": cfg.integrator.t_span,
    });
    table(&scan::trajectory_table(&trajectory, prov)?, "simulate", out)
}

fn heatmap(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let grid = cfg.heatmap.u_grid.values("heatmap.u_grid")?;
    let result = scan::heatmap_u(
        &grid,
        &cfg.model,
        &cfg.forcing()?,
        cfg.integrator.h,
        cfg.heatmap.horizon_periods,
    )?;
    table(&result, "heatmap", out)
}

fn basin(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let b = &cfg.basin;
    let scan = scan::basin_scan(
        &b.rect,
        b.nx,
        b.ny,
        &cfg.model,
        &cfg.forcing()?,
        cfg.integrator.h,
        &cfg.classifier,
    )?;
    table(&scan.grid, "basin", out)?;
    out.push(Artifact::new("basin_sink.json", to_json(&scan.sink)?));
    Ok(())
}

/// Saddle of the reduced map at the configured amplitude, either from the
/// configured seed or continued from the unforced middle equilibrium.
fn find_saddle(cfg: &RunConfig) -> Result<FixedPointRecord> {
    let base = cfg.healed_map_config()?;
    let rec = match cfg.manifold.saddle_seed {
        Some([x1, x2]) => HealedMap::new(base)?.fixed_point(PlanarPoint::new(x1, x2))?,
        None => {
            let roots = cfg.model.with_u(0.0).unforced_equilibria();
            let mid = roots[roots.len() / 2];
            let start = HealedMap::new(base.with_u(0.0))?.fixed_point(PlanarPoint::new(mid, mid))?;
            let settings = ContinuationSettings {
                u_end: cfg.model.u,
                du: cfg.fixed_points.du,
                du_min: cfg.fixed_points.du_min,
            };
            let branch = continue_fixed_points(&start, &base, settings)?;
            match (branch.is_complete(), branch.records.last()) {
                (true, Some(r)) => r.clone(),
                _ => {
                    let last = branch.records.last().map(|r| r.u).unwrap_or(0.0);
                    return Err(Error::NoConvergence {
                        iterations: branch.records.len(),
                        residual: cfg.model.u - last,
                    });
                }
            }
        }
    };
    if rec.classification != Stability::Saddle {
        return Err(Error::Contract(format!(
            "fixed point at ({}, {}) is a {}, not a saddle",
            rec.point.x1,
            rec.point.x2,
            rec.classification.as_str()
        )));
    }
    Ok(rec)
}

fn manifold(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let saddle = find_saddle(cfg)?;
    let map = HealedMap::new(cfg.healed_map_config()?)?;
    let pair = PlanarMapPair::healed(&map);
    let growth = &cfg.manifold.growth;
    let mut branches = Vec::new();
    let mut summary = Vec::new();
    for dir in [-1.0, 1.0] {
        let (curve, stall) = match grow_stable_manifold(&saddle, dir, &pair, growth) {
            Ok(c) => (c, None),
            Err(Error::Stall { last, curve }) => (*curve, Some(last)),
            Err(e) => return Err(e),
        };
        summary.push(json!({
            "direction": dir,
            "points": curve.len(),
            "arclength": curve.total_arclength(),
            "termination": if stall.is_some() { json!("stall") } else { json!(curve.termination) },
            "stalled_at": stall,
            "pairing_error": curve.pairing_error(&pair)?,
        }));
        branches.push(curve);
    }
    let joined = ManifoldCurve::join(&branches[0], &branches[1]);
    out.push(Artifact::new("manifold.csv", joined.to_csv()?));
    out.push(Artifact::new("manifold_minus.csv", branches[0].to_csv()?));
    out.push(Artifact::new("manifold_plus.csv", branches[1].to_csv()?));
    let meta = json!({
        "operation": "manifold",
        "params": cfg.model,
        "forcing": cfg.forcing()?,
        "h": cfg.integrator.h,
        "ell": cfg.healing.ell,
        "growth": growth,
        "saddle": saddle,
        "branches": summary,
    });
    out.push(Artifact::new("manifold.json", to_json(&meta)?));
    Ok(())
}

fn fixed_points(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let fp = &cfg.fixed_points;
    let base = cfg.healed_map_config()?;
    let map = HealedMap::new(base.with_u(fp.u_start))?;
    let seed = map.periodic_point(PlanarPoint::new(fp.seed[0], fp.seed[1]), fp.period)?;
    let settings = ContinuationSettings {
        u_end: fp.u_end,
        du: fp.du,
        du_min: fp.du_min,
    };
    let branch = continue_fixed_points(&seed, &base, settings)?;
    let prov = json!({
        "operation": "fixed_points",
        "params": cfg.model,
        "forcing": base.forcing,
        "h": base.h,
        "ell": base.ell,
        "settings": fp,
        "diagnostic": branch.diagnostic,
    });
    table(&scan::branch_table(&branch, prov)?, "fixed_points", out)
}

fn phase_scan(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let ps = &cfg.phase_scan;
    let h = cfg.integrator.h;
    let period = cfg.forcing.period().ok_or_else(|| Error::Config {
        field: "forcing.kind".into(),
        reason: "phase scan needs periodic forcing".into(),
    })?;
    let phis = ps.phi_grid.values("phase_scan.phi_grid")?;
    let taus = ps.tau_grid.snapped("phase_scan.tau_grid", h)?;
    let result = scan::phase_threshold_scan(&phis, &taus, &ps.u_search, &cfg.model, period, h, &cfg.classifier)?;
    table(&result, "phase_scan", out)
}

fn bifurcation(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let b = &cfg.bifurcation;
    let h = cfg.integrator.h;
    let taus = b.tau_grid.snapped("bifurcation.tau_grid", h)?;
    let forcing = cfg.forcing()?;
    match b.mode {
        BifurcationMode::Line => {
            let scan = scan::bifurcation_scan_1d(&taus, cfg.model.u, &cfg.model, &forcing, h, &b.settings)?;
            table(&scan.result, "bifurcation", out)?;
            out.push(Artifact::new("period_doublings.json", to_json(&scan.doublings)?));
        }
        BifurcationMode::Grid => {
            let us = b.u_grid.values("bifurcation.u_grid")?;
            let scan = scan::bifurcation_boundary_2d(&taus, &us, &cfg.model, &forcing, h, &b.settings)?;
            table(&scan.grid, "bifurcation_grid", out)?;
            table(&scan.refined, "bifurcation_boundary", out)?;
        }
    }
    Ok(())
}

fn spectral_gap(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let map = HealedMap::new(cfg.healed_map_config()?)?;
    let s = &cfg.spectral_gap;
    table(
        &scan::spectral_gap_grid(&map, &s.rect, s.nx, s.ny)?,
        "spectral_gap",
        out,
    )
}

fn mpt(cfg: &RunConfig, out: &mut Vec<Artifact>) -> Result<()> {
    let scenario = cfg.mpt.scenario()?;
    let run = scan::mpt_scenario(
        &scenario,
        &cfg.model,
        &cfg.forcing()?,
        cfg.integrator.h,
        &cfg.classifier,
    )?;
    let prov = json!({
        "operation": "mpt_scenario",
        "params": cfg.model,
        "forcing": run.forcing,
        "h": cfg.integrator.h,
        "scenario": scenario,
        "classifier": cfg.classifier,
    });
    table(&scan::trajectory_table(&run.trajectory, prov)?, "mpt_scenario", out)?;
    let summary = json!({
        "t_switch": scenario.t_switch,
        "transition_time": run.transition_time,
    });
    out.push(Artifact::new("mpt_transition.json", to_json(&summary)?));
    Ok(())
}

fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config {
                field: "jobs".into(),
                reason: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    }
    let mut out = Vec::new();
    match cli.command {
        Command::Simulate => simulate(&cfg, &mut out)?,
        Command::Heatmap => heatmap(&cfg, &mut out)?,
        Command::Basin => basin(&cfg, &mut out)?,
        Command::Manifold => manifold(&cfg, &mut out)?,
        Command::FixedPoints => fixed_points(&cfg, &mut out)?,
        Command::PhaseScan => phase_scan(&cfg, &mut out)?,
        Command::Bifurcation => bifurcation(&cfg, &mut out)?,
        Command::SpectralGap => spectral_gap(&cfg, &mut out)?,
        Command::MptScenario => mpt(&cfg, &mut out)?,
    }
    out.push(Artifact::new("config.snapshot.toml", cfg.to_toml()?));
    write_all(&cfg.output, &out)?;
    Ok(cfg.output.clone())
}

fn write_all(dir: &Path, files: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        write_atomic(&dir.join(&f.name), &f.bytes)?;
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Config { .. } => "config",
        Error::Integration { .. } => "integration",
        Error::OutOfRange { .. } => "out_of_range",
        Error::Uncovered { .. } => "uncovered",
        Error::Parse { .. } => "parse",
        Error::NoConvergence { .. } => "no_convergence",
        Error::ChartValidity { .. } => "chart_validity",
        Error::UndefinedRatio { .. } => "undefined_ratio",
        Error::Contract(_) => "contract",
        Error::Stall { .. } => "stall",
        Error::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(dir) => {
            eprintln!("{}", json!({ "status": "ok", "output": dir }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut record = json!({
                "status": "error",
                "kind": error_kind(&e),
                "message": e.to_string(),
            });
            if let Error::Config { field, .. } = &e {
                record["field"] = json!(field);
            }
            eprintln!("{record}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
