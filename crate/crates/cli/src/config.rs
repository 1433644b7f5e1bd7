//! Run configuration: JSON file, dotted overrides, path-qualified validation errors and a
//! content hash for artifact names.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use roughpde::solver::classical::ClassicalParams;
use roughpde::grid::GridSpec;
use roughpde::noise::CovarianceSpec;
use roughpde::solver::{NonlinearityPair, SolveParams};
use roughpde::verify::ExperimentPlan;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Configuration problems map to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    pub spec: CovarianceSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub renorm: RenormSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub classical: ClassicalSection,
}

fn default_grid() -> GridSpec {
    GridSpec::new(128, 128).expect("valid default grid")
}

fn default_samples() -> usize {
    256
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Scaling-suite settings; empty scale lists mean "derive from the grid".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub t_list: Vec<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub eps_list: Vec<f64>,
    pub a0_list: Vec<f64>,
    pub a0p_list: Vec<f64>,
    pub p_list: Vec<u32>,
    pub alpha_prime: f64,
    pub kappa: f64,
    pub sup_statistics: bool,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            t_list: Vec::new(),
            fit_window: None,
            eps_list: Vec::new(),
            a0_list: vec![0.6],
            a0p_list: vec![0.9],
            p_list: vec![2],
            alpha_prime: 0.6,
            kappa: 0.5,
            sup_statistics: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenormSection {
    /// Decreasing dyadic regularizations; empty means eight dyadics ending at the grid cutoff.
    pub eps_list: Vec<f64>,
    pub a0_list: Vec<f64>,
    pub a0p_list: Vec<f64>,
    /// Lattice for the constant sums; defaults to the run grid.
    pub truncation: Option<GridSpec>,
}

impl Default for RenormSection {
    fn default() -> Self {
        RenormSection {
            eps_list: Vec::new(),
            a0_list: vec![0.75],
            a0p_list: vec![0.75],
            truncation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Regularization for single solves and η-sweeps; defaults to four times the cutoff.
    pub eps: Option<f64>,
    /// Calibrates `η` so that the negative norm of `η f_ε` equals this value.
    pub eta_target: f64,
    /// Explicit amplitude, bypassing calibration.
    pub eta: Option<f64>,
    pub renormalize: bool,
    /// Interval and node count of the constant tables handed to the solver.
    pub table_range: (f64, f64),
    pub table_nodes: usize,
    pub eta_steps: usize,
    pub eps_list: Vec<f64>,
    /// Exponent of the Hölder part of the ε-continuation table.
    pub alpha_prime: f64,
    pub nonlinearity: NonlinearityPair,
    pub params: SolveParams,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            eps: None,
            eta_target: 0.05,
            eta: None,
            renormalize: true,
            table_range: (0.5, 1.0),
            table_nodes: 6,
            eta_steps: 4,
            eps_list: Vec::new(),
            alpha_prime: 0.5,
            nonlinearity: NonlinearityPair::default(),
            params: SolveParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalSection {
    /// Grid of the smooth check.
    pub grid: GridSpec,
    /// The forcing keeps noise modes with `|j1|, |j2| <= cutoff`.
    pub cutoff: i64,
    pub g1: f64,
    pub g2: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub params: ClassicalParams,
}

impl Default for ClassicalSection {
    fn default() -> Self {
        ClassicalSection {
            grid: GridSpec::new(32, 64).expect("valid grid"),
            cutoff: 2,
            g1: 0.3,
            g2: -0.2,
            eps: 1e-8,
            tolerance: 1e-6,
            params: ClassicalParams::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub assignments: Vec<String>,
}

/// Sets `path` (dotted) in `root`, creating objects on the way. The value is parsed as
/// JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} must look like key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override key {key:?} has an empty segment")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("{}: not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields a segment")
}

/// Turns serde's messages into `path.key: reason`.
fn pointered(path: &str, msg: &str) -> String {
    let join = |k: &str| {
        if path.is_empty() || path == "." {
            k.to_string()
        } else {
            format!("{path}.{k}")
        }
    };
    let quoted = |m: &str| m.split('`').nth(1).map(str::to_string);
    if let Some(rest) = msg.strip_prefix("missing field ") {
        return format!("{}: required", join(&quoted(rest).unwrap_or_default()));
    }
    if let Some(rest) = msg.strip_prefix("unknown field ") {
        // the path already names the offending key
        let key = quoted(rest).unwrap_or_default();
        let full = if path.rsplit('.').next() == Some(key.as_str()) { path.to_string() } else { join(&key) };
        return format!("{full}: unknown key");
    }
    let msg = msg.split(" at line ").next().unwrap_or(msg);
    if path.is_empty() || path == "." {
        msg.to_string()
    } else {
        format!("{path}: {msg}")
    }
}

impl RunConfig {
    pub fn from_value(value: Value) -> anyhow::Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_err(pointered(&path, &e.inner().to_string()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, cli: &CliOverrides) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: invalid JSON: {e}", path.display())))?;
        if !value.is_object() {
            return Err(config_err("config must be a JSON object"));
        }
        for a in &cli.assignments {
            apply_override(&mut value, a)?;
        }
        let obj = value.as_object_mut().expect("checked above");
        if let Some(s) = cli.seed {
            obj.insert("seed".into(), s.into());
        }
        if let Some(g) = cli.grid {
            obj.insert("grid".into(), serde_json::to_value(g)?);
        }
        if let Some(n) = cli.samples {
            obj.insert("samples".into(), n.into());
        }
        if let Some(o) = &cli.out {
            obj.insert("out".into(), serde_json::to_value(o)?);
        }
        RunConfig::from_value(value)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let p = &self.plan;
        if !(p.alpha_prime < self.spec.alpha) {
            bail!(ConfigError(format!(
                "plan.alpha_prime: must be below spec.alpha = {} (got {})",
                self.spec.alpha, p.alpha_prime
            )));
        }
        if self.samples == 0 {
            bail!(ConfigError("samples: must be positive".into()));
        }
        let s = &self.solver;
        if !(s.eta_target > 0.0) {
            bail!(ConfigError(format!("solver.eta_target: must be positive (got {})", s.eta_target)));
        }
        if s.eta_steps < 2 {
            bail!(ConfigError("solver.eta_steps: at least 2 needed for a slope".into()));
        }
        s.params
            .validate()
            .map_err(|e| config_err(format!("solver.params: {e}")))?;
        s.nonlinearity
            .validate()
            .map_err(|e| config_err(format!("solver.nonlinearity: {e}")))?;
        if self.classical.cutoff < 1 {
            bail!(ConfigError("classical.cutoff: must be at least 1".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the resolved configuration, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serializable");
        v.as_object_mut().expect("struct").remove("out");
        let canonical = serde_json::to_string(&v).expect("serializable");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Scales for norm scans and fits: configured, or the grid's dyadic scales.
    pub fn t_list(&self) -> Vec<f64> {
        if self.plan.t_list.is_empty() {
            self.grid.dyadic_scales()
        } else {
            self.plan.t_list.clone()
        }
    }

    pub fn plan(&self) -> ExperimentPlan {
        let t_list = self.t_list();
        let fit_window = self.plan.fit_window.or_else(|| fit_window(self.grid.t_min(), &t_list));
        let eps_list = if self.plan.eps_list.is_empty() {
            dyadics_above(self.grid.t_min(), 8)
        } else {
            self.plan.eps_list.clone()
        };
        ExperimentPlan {
            spec: self.spec,
            grid: self.grid,
            seed: self.seed,
            n_samples: self.samples,
            t_list,
            fit_window,
            eps_list,
            a0_list: self.plan.a0_list.clone(),
            a0p_list: self.plan.a0p_list.clone(),
            p_list: self.plan.p_list.clone(),
            alpha_prime: self.plan.alpha_prime,
            sup_statistics: self.plan.sup_statistics,
        }
    }

    /// Regularizations of the constant study, decreasing.
    pub fn renorm_eps(&self) -> Vec<f64> {
        if !self.renorm.eps_list.is_empty() {
            return self.renorm.eps_list.clone();
        }
        dyadics_above(self.grid.t_min(), 8)
    }

    pub fn solve_eps(&self) -> f64 {
        self.solver.eps.unwrap_or(4.0 * self.grid.t_min())
    }

    pub fn sweep_eps(&self) -> Vec<f64> {
        if !self.solver.eps_list.is_empty() {
            return self.solver.eps_list.clone();
        }
        dyadics_above(self.grid.t_min(), 5)
    }
}

/// The `n` smallest dyadic values `>= floor`, decreasing.
pub fn dyadics_above(floor: f64, n: usize) -> Vec<f64> {
    let j_max = (0..64).take_while(|&j| 0.5f64.powi(j) >= floor * (1.0 - 1e-12)).last().unwrap_or(0);
    let j_min = (j_max + 1).saturating_sub(n as i32);
    (j_min..=j_max).map(|j| 0.5f64.powi(j)).collect()
}

/// Scales clear of both the grid cutoff and the period: `[4 t_min, min(128 t_min, 1/16)]`,
/// provided at least four listed scales fall inside (the fit minimum).
fn fit_window(t_min: f64, t_list: &[f64]) -> Option<(f64, f64)> {
    let (lo, hi) = (4.0 * t_min, (128.0 * t_min).min(0.0625));
    let inside = t_list.iter().filter(|&&t| t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12)).count();
    (inside >= 4).then_some((lo, hi))
}

pub fn parse_grid(s: &str) -> anyhow::Result<GridSpec> {
    s.parse::<GridSpec>().map_err(|e| anyhow!(ConfigError(format!("--grid: {e}"))))
}

pub fn read_config(path: &Path, cli: &CliOverrides) -> anyhow::Result<RunConfig> {
    RunConfig::load(path, cli).with_context(|| format!("loading {}", path.display()))
}
