//! CSV and manifest emission. Column order is part of the interface; floats are
//! written with 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mfmm_core::equilibrium::Diagnostics;
use mfmm_core::{EquilibriumSolution, McReport, StateGrids, TakerQuotePolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const W_MAKER: &str = "w_maker.csv";
pub const W_TAKER: &str = "w_taker.csv";
pub const P_MASS: &str = "p_mass.csv";
pub const QUOTES_MAKER: &str = "quotes_maker.csv";
pub const QUOTES_TAKER: &str = "quotes_taker.csv";
pub const AGGREGATES: &str = "aggregates.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const MC_SUMMARY: &str = "mc_summary.csv";
pub const MC_OFFPOLICY: &str = "mc_offpolicy.csv";

/// Files written by a successful solve, in manifest order.
pub const SOLVE_FILES: [&str; 7] = [
    W_MAKER,
    W_TAKER,
    P_MASS,
    QUOTES_MAKER,
    QUOTES_TAKER,
    AGGREGATES,
    DIAGNOSTICS,
];

#[inline]
fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn flag(v: bool) -> u8 {
    v as u8
}

/// Slices written for a run: `0, s, 2s, ...` plus the last one.
pub fn output_slices(grids: &StateGrids, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..grids.n_times()).step_by(stride).collect();
    if *v.last().unwrap() != grids.n_steps {
        v.push(grids.n_steps);
    }
    v
}

pub fn w_maker_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    let g = &sol.grids;
    let mut s = String::from("t,q,W\n");
    for &t in slices {
        for i in 0..g.maker.len() {
            num(&mut s, g.time(t));
            write!(s, ",{},", g.maker.value(i)).unwrap();
            num(&mut s, sol.maker_value.values.get(t, i));
            s.push('\n');
        }
    }
    s
}

fn taker_rows(
    sol: &EquilibriumSolution,
    slices: &[usize],
    header: &str,
    mut row: impl FnMut(&mut String, usize, usize),
) -> String {
    let g = &sol.grids;
    let mut s = String::from(header);
    for &t in slices {
        for n in 0..g.taker_nodes() {
            let (iq, ib) = g.split_node(n);
            num(&mut s, g.time(t));
            write!(s, ",{},{},", g.taker.value(iq), g.signal.value(ib)).unwrap();
            row(&mut s, t, n);
            s.push('\n');
        }
    }
    s
}

pub fn w_taker_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    taker_rows(sol, slices, "t,q_m,b,W_m\n", |s, t, n| {
        num(s, sol.taker_value.values.get(t, n))
    })
}

pub fn p_mass_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    taker_rows(sol, slices, "t,q_m,b,p\n", |s, t, n| {
        num(s, sol.mass.mass.get(t, n))
    })
}

pub fn quotes_taker_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    let g = &sol.grids;
    let pol = &sol.taker_policy;
    taker_rows(
        sol,
        slices,
        "t,q_m,b,bid,ask,bid_inert,ask_inert\n",
        |s, t, n| {
            num(s, pol.bid.get(t, n));
            s.push(',');
            num(s, pol.ask.get(t, n));
            write!(
                s,
                ",{},{}",
                flag(TakerQuotePolicy::bid_inert(g, n)),
                flag(TakerQuotePolicy::ask_inert(g, n))
            )
            .unwrap();
        },
    )
}

pub fn quotes_maker_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    let g = &sol.grids;
    let pol = &sol.maker_policy;
    let mut s = String::from("t,q,bid,ask,bid_inert,ask_inert\n");
    for &t in slices {
        for i in 0..g.maker.len() {
            num(&mut s, g.time(t));
            write!(s, ",{},", g.maker.value(i)).unwrap();
            num(&mut s, pol.bid.get(t, i));
            s.push(',');
            num(&mut s, pol.ask.get(t, i));
            writeln!(
                s,
                ",{},{}",
                flag(!g.maker.can_buy(i)),
                flag(!g.maker.can_sell(i))
            )
            .unwrap();
        }
    }
    s
}

pub fn aggregates_csv(sol: &EquilibriumSolution, slices: &[usize]) -> String {
    let g = &sol.grids;
    let a = &sol.aggregates;
    let mut s = String::from("t,mean_bid,mean_ask,impact_drift\n");
    for &t in slices {
        num(&mut s, g.time(t));
        for v in [a.mean_bid[t], a.mean_ask[t], a.impact_drift[t]] {
            s.push(',');
            num(&mut s, v);
        }
        s.push('\n');
    }
    s
}

/// Long format `key,index,value`: the distance trace, damping per iteration
/// and scalar run diagnostics.
pub fn diagnostics_csv(
    diag: Option<&Diagnostics>,
    trace: &[f64],
    grids: Option<&StateGrids>,
    fixed_point_residual: Option<f64>,
) -> String {
    let mut s = String::from("key,index,value\n");
    let mut row = |key: &str, i: usize, v: f64| {
        write!(s, "{key},{i},").unwrap();
        num(&mut s, v);
        s.push('\n');
    };
    for (k, &d) in trace.iter().enumerate() {
        row("distance", k + 1, d);
    }
    if let Some(g) = grids {
        row("time_steps", 0, g.n_steps as f64);
        row("dt", 0, g.dt);
    }
    if let (Some(d), Some(g)) = (diag, grids) {
        for (k, &w) in d.damping_trace.iter().enumerate() {
            row("damping", k + 1, w);
        }
        row("iterations", 0, d.iterations as f64);
        row("taker_residual", 0, d.taker_residual);
        row("maker_residual", 0, d.maker_residual);
        row("taker_clamped", 0, flag(d.taker_clamped) as f64);
        row("maker_clamped", 0, flag(d.maker_clamped) as f64);
        row("max_rate", 0, d.max_rate);
        row("max_rate_dt", 0, d.max_rate * g.dt);
    }
    if let Some(r) = fixed_point_residual {
        row("fixed_point_residual", 0, r);
    }
    s
}

pub fn mc_summary_csv(report: &McReport) -> String {
    let mut s = String::from("scope,mean,stderr,pde_value,z_score,n_paths,seed\n");
    for (scope, st, pde, z) in [
        ("maker", report.maker, report.maker_pde, report.maker_z),
        ("taker", report.taker, report.taker_pde, report.taker_z),
    ] {
        s.push_str(scope);
        for v in [st.mean, st.stderr, pde, z] {
            s.push(',');
            num(&mut s, v);
        }
        writeln!(s, ",{},{}", report.n_paths, report.seed).unwrap();
    }
    s
}

/// One row per offset: the maker objective under shifted quotes against `W(0, q0)`.
pub fn mc_offpolicy_csv(reports: &[McReport]) -> String {
    let mut s = String::from("offset,mean,stderr,pde_value,excess_in_se,n_paths,seed\n");
    for r in reports {
        num(&mut s, r.maker_offset);
        for v in [r.maker.mean, r.maker.stderr, r.maker_pde, r.maker_z] {
            s.push(',');
            num(&mut s, v);
        }
        writeln!(s, ",{},{}", r.n_paths, r.seed).unwrap();
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Config as given; `time_steps` records the grid actually used.
    pub config: RunConfig,
    pub time_steps: usize,
    pub converged: bool,
    /// sha256 of each written file.
    pub files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationRecord>,
}

/// Settings of the last `simulate` run against these artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub paths: usize,
    pub seed: u64,
    pub offsets: Vec<f64>,
}

impl Manifest {
    pub fn new(config: &RunConfig, time_steps: usize, converged: bool) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            time_steps,
            converged,
            files: BTreeMap::new(),
            simulation: None,
        }
    }

    /// Writes `contents` under `dir` and records its hash.
    pub fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(dir.join(name), contents)?;
        self.files
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Input(format!("missing manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("unreadable manifest {}: {e}", path.display())))
    }

    /// Every listed file must exist and hash to its recorded value.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for (name, expected) in &self.files {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| {
                CliError::Input(format!("missing artifact {}: {e}", path.display()))
            })?;
            if &sha256_hex(&bytes) != expected {
                return Err(CliError::Input(format!(
                    "stale artifact {}: hash does not match the manifest",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
