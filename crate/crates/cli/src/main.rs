use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfmm_cli::{
    run_simulate, run_solve, run_sweep, AxisSpec, CliError, RunConfig, SimulateOverrides,
};

#[derive(Parser)]
#[command(
    name = "mfmm",
    version,
    about = "Mean-field market making: equilibrium solver and Monte Carlo check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium and write the field CSVs and manifest.
    Solve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo check of a previous solve.
    Simulate {
        /// Directory holding the solve artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Optional config; must match the one recorded in the manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Constant added to every maker quote for a dominance check ($). Repeatable.
        #[arg(long, allow_negative_numbers = true)]
        offset: Vec<f64>,
    },
    /// One solve per value of a parameter axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `name=v1,v2,...` where name is a market field or `lambda_mult`.
        #[arg(long)]
        axis: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; Table 1 values when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Fixed time step (days); the step is chosen from the realised rates otherwise.
    #[arg(long)]
    dt: Option<f64>,
    /// Multiplies both signal jump rates.
    #[arg(long)]
    lambda_mult: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::table1(),
        };
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
        if let Some(m) = self.max_iter {
            cfg.solver.max_iter = m;
        }
        if let Some(dt) = self.dt {
            cfg.grid.dt = Some(dt);
            cfg.grid.time_steps = None;
        }
        if let Some(m) = self.lambda_mult {
            cfg = cfg.with_axis_value("lambda_mult", &m.to_string())?;
        }
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| {
                CliError::Config("no output directory: pass --out or set output_dir".into())
            })?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { run } => {
            let (cfg, out) = run.resolve()?;
            let res = run_solve(&cfg, &out)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            let d = &res.solution.diagnostics;
            eprintln!(
                "converged in {} iterations on {} steps (dt = {:.3e}); fixed-point residual {:.3e}; wrote {}",
                d.iterations,
                res.solution.grids.n_steps,
                res.solution.grids.dt,
                res.fixed_point_residual,
                res.dir.display()
            );
        }
        Command::Simulate {
            out,
            config,
            paths,
            seed,
            offset,
        } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let res = run_simulate(
                &out,
                cfg.as_ref(),
                SimulateOverrides { paths, seed },
                &offset,
            )?;
            let r = &res.report;
            eprintln!(
                "maker: mc {:.6} +- {:.6} vs pde {:.6} (z = {:.2})",
                r.maker.mean, r.maker.stderr, r.maker_pde, r.maker_z
            );
            eprintln!(
                "taker: mc {:.6} +- {:.6} vs pde {:.6} (z = {:.2})",
                r.taker.mean, r.taker.stderr, r.taker_pde, r.taker_z
            );
            for o in &res.offpolicy {
                eprintln!(
                    "offset {:+.4}: maker mc {:.6} +- {:.6}, excess {:.2} se",
                    o.maker_offset, o.maker.mean, o.maker.stderr, o.maker_z
                );
            }
            if !res.gated {
                eprintln!(
                    "note: fewer than {} paths, gate not enforced",
                    mfmm_cli::commands::MC_GATE_MIN_PATHS
                );
            }
            if !res.failures.is_empty() {
                return Err(CliError::McGate(res.failures.join("; ")));
            }
        }
        Command::Sweep { run, axis } => {
            let axis: AxisSpec = axis.parse()?;
            let (cfg, out) = run.resolve()?;
            let m = run_sweep(&cfg, &axis, &out)?;
            for p in &m.points {
                eprintln!("{}: {}", p.value, Path::new(&out).join(&p.dir).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
