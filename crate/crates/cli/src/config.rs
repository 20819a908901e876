use std::path::{Path, PathBuf};

use mfmm_core::{InitialMass, MarketParams, SolverOptions, StateGrids};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Largest number of time slices written to the field CSVs when no stride is given.
pub const DEFAULT_MAX_OUTPUT_SLICES: usize = 501;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub market: MarketParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub initial_mass: InitialMassConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Time grid. With neither field set the step count is chosen from the
/// realised rates; with one set the grid is fixed and must be stable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InitialMassConfig {
    PointMass {
        #[serde(default)]
        q_m: i64,
        #[serde(default)]
        b: i64,
    },
    Uniform,
    /// JSON array of probabilities on the (q_m, b) node layout, `q_m` major.
    File {
        path: PathBuf,
    },
}

impl Default for InitialMassConfig {
    fn default() -> Self {
        Self::PointMass { q_m: 0, b: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub q0: i64,
    pub q_m0: i64,
    pub b0: i64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            seed: 20_190_417,
            q0: 0,
            q_m0: 0,
            b0: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write every `time_stride`-th slice (the last slice is always written).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_stride: Option<usize>,
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

impl RunConfig {
    pub fn table1() -> Self {
        Self {
            market: MarketParams::table1(),
            grid: GridConfig::default(),
            solver: SolverOptions::default(),
            initial_mass: InitialMassConfig::default(),
            mc: McConfig::default(),
            output: OutputConfig::default(),
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative mass files resolve against the config's directory
        let cfg = match cfg.initial_mass {
            InitialMassConfig::File { path: ref p } if p.is_relative() => {
                let base = path.parent().unwrap_or(Path::new("."));
                Self {
                    initial_mass: InitialMassConfig::File { path: base.join(p) },
                    ..cfg
                }
            }
            _ => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every block; the first failure names its field.
    pub fn validate(&self) -> Result<(), CliError> {
        self.market
            .validate()
            .map_err(|e| CliError::Config(format!("market.{e}")))?;
        self.solver
            .validate()
            .map_err(|e| CliError::Config(format!("solver.{e}")))?;
        match (self.grid.time_steps, self.grid.dt) {
            (Some(_), Some(_)) => {
                return Err(invalid("grid", "give either time_steps or dt, not both"))
            }
            (Some(0), None) => return Err(invalid("grid.time_steps", "must be at least 1")),
            (None, Some(dt)) if !(dt > 0.0 && dt.is_finite()) => {
                return Err(invalid("grid.dt", format!("must be positive, got {dt}")))
            }
            (None, Some(dt)) if dt > self.market.horizon => {
                return Err(invalid(
                    "grid.dt",
                    format!("exceeds the horizon {}", self.market.horizon),
                ))
            }
            _ => {}
        }
        if self.mc.paths < 2 {
            return Err(invalid(
                "mc.paths",
                format!("need at least 2, got {}", self.mc.paths),
            ));
        }
        let m = &self.market;
        let on_grid = |v: i64, limit: i64, lot: i64| v.abs() <= limit && v % lot == 0;
        if !on_grid(self.mc.q0, m.q_tilde, m.lot) {
            return Err(invalid(
                "mc.q0",
                format!("{} is not on the maker grid", self.mc.q0),
            ));
        }
        if !on_grid(self.mc.q_m0, m.q_tilde_m, m.lot) {
            return Err(invalid(
                "mc.q_m0",
                format!("{} is not on the taker grid", self.mc.q_m0),
            ));
        }
        if self.mc.b0.abs() > m.b_tilde {
            return Err(invalid(
                "mc.b0",
                format!("{} is outside the signal grid", self.mc.b0),
            ));
        }
        if let InitialMassConfig::PointMass { q_m, b } = self.initial_mass {
            if !on_grid(q_m, m.q_tilde_m, m.lot) || b.abs() > m.b_tilde {
                return Err(invalid(
                    "initial_mass",
                    format!("point ({q_m}, {b}) is not on the taker grid"),
                ));
            }
        }
        if self.output.time_stride == Some(0) {
            return Err(invalid("output.time_stride", "must be at least 1"));
        }
        Ok(())
    }

    /// Fixed step count, or `None` for automatic selection.
    pub fn fixed_steps(&self) -> Option<usize> {
        match (self.grid.time_steps, self.grid.dt) {
            (Some(n), _) => Some(n),
            (None, Some(dt)) => Some(((self.market.horizon / dt).round() as usize).max(1)),
            _ => None,
        }
    }

    pub fn initial_mass(&self) -> Result<InitialMass, CliError> {
        Ok(match &self.initial_mass {
            InitialMassConfig::PointMass { q_m, b } => InitialMass::PointMass { q_m: *q_m, b: *b },
            InitialMassConfig::Uniform => InitialMass::Uniform,
            InitialMassConfig::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Input(format!("initial_mass.path {}: {e}", path.display()))
                })?;
                let v: Vec<f64> = serde_json::from_str(&text).map_err(|e| {
                    CliError::Input(format!("initial_mass.path {}: {e}", path.display()))
                })?;
                InitialMass::Custom(v)
            }
        })
    }

    pub fn stride(&self, grids: &StateGrids) -> usize {
        self.output
            .time_stride
            .unwrap_or_else(|| grids.n_steps.div_ceil(DEFAULT_MAX_OUTPUT_SLICES - 1).max(1))
    }

    /// Sets one market field (or `lambda_mult`) by its config name.
    pub fn with_axis_value(&self, name: &str, value: &str) -> Result<Self, CliError> {
        let mut out = self.clone();
        let parsed: serde_json::Value = serde_json::from_str(value)
            .map_err(|_| invalid("axis", format!("`{value}` is not a number")))?;
        if name == "lambda_mult" {
            let mult = parsed.as_f64().filter(|v| *v > 0.0).ok_or_else(|| {
                invalid("axis", format!("lambda_mult must be positive, got {value}"))
            })?;
            out.market.lambda_plus *= mult;
            out.market.lambda_minus *= mult;
        } else {
            let mut json = serde_json::to_value(&out.market).expect("market params serialise");
            let obj = json.as_object_mut().expect("market params are an object");
            if !obj.contains_key(name) {
                let mut names: Vec<&str> = obj.keys().map(String::as_str).collect();
                names.push("lambda_mult");
                return Err(CliError::Input(format!(
                    "unknown axis `{name}`; expected one of {}",
                    names.join(", ")
                )));
            }
            obj.insert(name.to_string(), parsed);
            out.market =
                serde_json::from_value(json).map_err(|e| invalid(&format!("axis {name}"), e))?;
        }
        out.validate()?;
        Ok(out)
    }
}

/// `name=v1,v2,...` with at least one value.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub name: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for AxisSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let (name, rest) = s
            .split_once('=')
            .ok_or_else(|| invalid("axis", format!("expected name=v1,v2,... got `{s}`")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(invalid("axis", "empty axis name"));
        }
        let values: Vec<String> = rest
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(invalid("axis", format!("`{name}` has no values")));
        }
        Ok(Self {
            name: name.to_string(),
            values,
        })
    }
}
