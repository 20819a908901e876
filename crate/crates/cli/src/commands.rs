use std::fs;
use std::path::{Path, PathBuf};

use mfmm_core::montecarlo::{simulate_objective_offpolicy, simulate_paths};
use mfmm_core::{
    fixed_point_residual, solve_mfg, solve_mfg_auto, EquilibriumSolution, McReport, ModelError,
    StartState, StateGrids,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Manifest, SimulationRecord};
use crate::config::{AxisSpec, RunConfig};
use crate::error::CliError;

/// Below this many paths the z-score gate is reported but not enforced.
pub const MC_GATE_MIN_PATHS: usize = 10_000;
pub const MC_GATE_Z: f64 = 3.0;

#[derive(Debug)]
pub struct SolveOutcome {
    pub dir: PathBuf,
    pub solution: EquilibriumSolution,
    pub manifest: Manifest,
    pub fixed_point_residual: f64,
    pub warnings: Vec<String>,
}

/// Solves the equilibrium for `cfg` on its fixed or automatically chosen grid.
pub fn solve_config(cfg: &RunConfig) -> Result<EquilibriumSolution, CliError> {
    cfg.validate()?;
    let p0 = cfg.initial_mass()?;
    let sol = match cfg.fixed_steps() {
        Some(n) => {
            let grids = StateGrids::new(&cfg.market, n)?;
            let v0 = p0.build(&grids)?;
            solve_mfg(&cfg.market, &grids, &v0, &cfg.solver)?
        }
        None => solve_mfg_auto(&cfg.market, &p0, &cfg.solver, None)?,
    };
    Ok(sol)
}

/// The field files of a solve, in manifest order.
pub fn render_solution(
    cfg: &RunConfig,
    sol: &EquilibriumSolution,
    residual: f64,
) -> Vec<(&'static str, String)> {
    let slices = artifacts::output_slices(&sol.grids, cfg.stride(&sol.grids));
    let d = &sol.diagnostics;
    vec![
        (artifacts::W_MAKER, artifacts::w_maker_csv(sol, &slices)),
        (artifacts::W_TAKER, artifacts::w_taker_csv(sol, &slices)),
        (artifacts::P_MASS, artifacts::p_mass_csv(sol, &slices)),
        (
            artifacts::QUOTES_MAKER,
            artifacts::quotes_maker_csv(sol, &slices),
        ),
        (
            artifacts::QUOTES_TAKER,
            artifacts::quotes_taker_csv(sol, &slices),
        ),
        (
            artifacts::AGGREGATES,
            artifacts::aggregates_csv(sol, &slices),
        ),
        (
            artifacts::DIAGNOSTICS,
            artifacts::diagnostics_csv(Some(d), &d.trace, Some(&sol.grids), Some(residual)),
        ),
    ]
}

pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<SolveOutcome, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let sol = match solve_config(cfg) {
        Ok(sol) => sol,
        Err(CliError::NonConvergence(ModelError::NonConvergence {
            iterations,
            last,
            trace,
        })) => {
            let mut manifest = Manifest::new(cfg, cfg.fixed_steps().unwrap_or(0), false);
            manifest.write(
                out,
                artifacts::DIAGNOSTICS,
                &artifacts::diagnostics_csv(None, &trace, None, None),
            )?;
            manifest.save(out)?;
            return Err(CliError::NonConvergence(ModelError::NonConvergence {
                iterations,
                last,
                trace,
            }));
        }
        Err(e) => return Err(e),
    };
    let residual = fixed_point_residual(&sol)?;
    let mut manifest = Manifest::new(cfg, sol.grids.n_steps, true);
    for (name, text) in render_solution(cfg, &sol, residual) {
        manifest.write(out, name, &text)?;
    }
    manifest.save(out)?;

    let mut warnings = Vec::new();
    if sol.diagnostics.taker_clamped {
        warnings.push(format!(
            "a taker quote hit the bound delta_inf = {} at equilibrium",
            cfg.market.delta_inf
        ));
    }
    if sol.diagnostics.maker_clamped {
        warnings.push(format!(
            "a maker quote hit the bound delta_inf = {} at equilibrium",
            cfg.market.delta_inf
        ));
    }
    Ok(SolveOutcome {
        dir: out.to_path_buf(),
        solution: sol,
        manifest,
        fixed_point_residual: residual,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulateOverrides {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub report: McReport,
    pub offpolicy: Vec<McReport>,
    /// Gate violations; empty when every check passed or the gate was not enforced.
    pub failures: Vec<String>,
    pub gated: bool,
}

/// Re-solves from the manifest, checks the stored artifacts against the
/// re-solve, then simulates both agents.
pub fn run_simulate(
    dir: &Path,
    config: Option<&RunConfig>,
    overrides: SimulateOverrides,
    offsets: &[f64],
) -> Result<SimulateOutcome, CliError> {
    let mut manifest = Manifest::load(dir)?;
    if !manifest.converged {
        return Err(CliError::Input(format!(
            "artifacts in {} come from a run that did not converge",
            dir.display()
        )));
    }
    for name in artifacts::SOLVE_FILES {
        if !manifest.files.contains_key(name) {
            return Err(CliError::Input(format!("manifest does not list {name}")));
        }
    }
    manifest.verify(dir)?;
    let mut cfg = manifest.config.clone();
    if let Some(given) = config {
        let strip = |c: &RunConfig| RunConfig {
            mc: Default::default(),
            output_dir: None,
            ..c.clone()
        };
        if strip(given) != strip(&cfg) {
            return Err(CliError::Input(
                "artifacts were produced by a different model or solver config".into(),
            ));
        }
        cfg.mc = given.mc;
    }
    if let Some(n) = overrides.paths {
        cfg.mc.paths = n;
    }
    if let Some(s) = overrides.seed {
        cfg.mc.seed = s;
    }
    cfg.validate()?;

    let mut fixed = cfg.clone();
    fixed.grid = crate::config::GridConfig {
        time_steps: Some(manifest.time_steps),
        dt: None,
    };
    let sol = solve_config(&fixed)?;
    let slices = artifacts::output_slices(&sol.grids, cfg.stride(&sol.grids));
    for (name, text) in [
        (artifacts::W_MAKER, artifacts::w_maker_csv(&sol, &slices)),
        (artifacts::W_TAKER, artifacts::w_taker_csv(&sol, &slices)),
    ] {
        if manifest.files[name] != artifacts::sha256_hex(text.as_bytes()) {
            return Err(CliError::Input(format!(
                "{name} does not match a fresh solve of the manifest config"
            )));
        }
    }

    let start = StartState {
        q: cfg.mc.q0,
        q_m: cfg.mc.q_m0,
        b: cfg.mc.b0,
    };
    let report = simulate_paths(&sol, start, cfg.mc.paths, cfg.mc.seed)?;
    let offpolicy = offsets
        .iter()
        .map(|&o| simulate_objective_offpolicy(&sol, o, start, cfg.mc.paths, cfg.mc.seed))
        .collect::<Result<Vec<_>, _>>()?;

    manifest.write(
        dir,
        artifacts::MC_SUMMARY,
        &artifacts::mc_summary_csv(&report),
    )?;
    if offpolicy.is_empty() {
        manifest.files.remove(artifacts::MC_OFFPOLICY);
    } else {
        manifest.write(
            dir,
            artifacts::MC_OFFPOLICY,
            &artifacts::mc_offpolicy_csv(&offpolicy),
        )?;
    }
    manifest.simulation = Some(SimulationRecord {
        paths: cfg.mc.paths,
        seed: cfg.mc.seed,
        offsets: offsets.to_vec(),
    });
    manifest.save(dir)?;

    let gated = cfg.mc.paths >= MC_GATE_MIN_PATHS;
    let mut failures = Vec::new();
    if report.out_of_grid > 0 {
        failures.push(format!("{} jumps left the grid", report.out_of_grid));
    }
    if gated {
        for (who, z) in [("maker", report.maker_z), ("taker", report.taker_z)] {
            if z.abs() > MC_GATE_Z {
                failures.push(format!("{who} z-score {z:.3} exceeds {MC_GATE_Z}"));
            }
        }
        for r in &offpolicy {
            if r.maker_z > MC_GATE_Z {
                failures.push(format!(
                    "offset {} beats W(0, q0) by {:.3} standard errors",
                    r.maker_offset, r.maker_z
                ));
            }
        }
    }
    Ok(SimulateOutcome {
        report,
        offpolicy,
        failures,
        gated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub dir: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub tool: String,
    pub version: String,
    pub axis: String,
    pub base_config: RunConfig,
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_MANIFEST: &str = "sweep.json";

/// One solve per axis value, each in `out/<name>=<value>`, plus a shared index.
pub fn run_sweep(cfg: &RunConfig, axis: &AxisSpec, out: &Path) -> Result<SweepManifest, CliError> {
    cfg.validate()?;
    // resolve every point before running any of them
    let configs = axis
        .values
        .iter()
        .map(|v| cfg.with_axis_value(&axis.name, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    if configs.is_empty() {
        return Err(CliError::Config(format!(
            "axis `{}` has no values",
            axis.name
        )));
    }
    fs::create_dir_all(out)?;
    let mut points = Vec::new();
    for (value, sub) in configs {
        let name = format!("{}={}", axis.name, value);
        let dir = out.join(&name);
        run_solve(&sub, &dir)?;
        let bytes = fs::read(dir.join(artifacts::MANIFEST))?;
        points.push(SweepPoint {
            value,
            dir: name,
            manifest_sha256: artifacts::sha256_hex(&bytes),
        });
    }
    let manifest = SweepManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        axis: axis.name.clone(),
        base_config: cfg.clone(),
        points,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("sweep manifest serialises");
    text.push('\n');
    fs::write(out.join(SWEEP_MANIFEST), text)?;
    Ok(manifest)
}
