//! Run configuration: TOML sections, defaults, overrides and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sgns_core::nonlinear::{NonlinearConfig, SolveMode, ToleranceConvention};
use sgns_core::precond::LscOptions;
use sgns_core::problem::{reynolds_from_viscosity, viscosity_from_reynolds, ProblemSpec};
use sgns_core::random_field::{CovarianceKernel, KernelKind, DEFAULT_KL_GRID};

/// Invalid configuration, tagged with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViscositySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re0: Option<f64>,
    pub cov: f64,
    pub kernel: String,
    pub l1: f64,
    pub l2: f64,
    pub n_nu: usize,
    /// Nyström grid for the KL eigenproblem.
    pub kl_grid: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub d_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub mode: String,
    pub eps_nl: f64,
    pub rho_gmres: f64,
    pub rho_nl: f64,
    pub rho_trunc_picard: f64,
    pub rho_trunc_newton: f64,
    pub picard_steps: usize,
    pub newton_steps: usize,
    pub stokes_gmres_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_sol: Option<f64>,
    pub tolerance_convention: String,
    pub m_gm: usize,
    pub max_cycles: usize,
    pub lsc_boundary_adjust: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths resolve against `SGNS_OUTPUT_ROOT` when it is set.
    pub directory: PathBuf,
    pub stats: bool,
    pub coefficients: bool,
    pub factors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: GeometrySection,
    pub viscosity: ViscositySection,
    pub basis: BasisSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            h: ProblemSpec::default().h,
        }
    }
}

impl Default for ViscositySection {
    fn default() -> Self {
        let s = ProblemSpec::default();
        Self {
            nu0: None,
            re0: None,
            cov: s.cov,
            kernel: s.kernel.kind.tag().to_string(),
            l1: s.kernel.l1,
            l2: s.kernel.l2,
            n_nu: s.n_nu,
            kl_grid: [DEFAULT_KL_GRID.0, DEFAULT_KL_GRID.1],
        }
    }
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            d_max: ProblemSpec::default().d_max,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = NonlinearConfig::default();
        Self {
            mode: c.mode.name().to_string(),
            eps_nl: c.eps_nl,
            rho_gmres: c.rho_gmres,
            rho_nl: c.rho_nl,
            rho_trunc_picard: c.rho_trunc_picard,
            rho_trunc_newton: c.rho_trunc_newton,
            picard_steps: c.picard_steps,
            newton_steps: c.newton_steps,
            stokes_gmres_tol: c.stokes_gmres_tol,
            eps_sol: c.eps_sol,
            tolerance_convention: c.convention.name().to_string(),
            m_gm: c.m_gm,
            max_cycles: c.max_cycles,
            lsc_boundary_adjust: c.lsc.boundary_adjust,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("sgns-out"),
            stats: true,
            coefficients: true,
            factors: true,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: GeometrySection::default(),
            viscosity: ViscositySection::default(),
            basis: BasisSection::default(),
            solver: SolverSection::default(),
            output: OutputSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Short names accepted by `--vary` in addition to full `section.key` paths.
pub fn alias(key: &str) -> Vec<&'static str> {
    match key {
        "cov" => vec!["viscosity.cov"],
        "l" => vec!["viscosity.l1", "viscosity.l2"],
        "l1" => vec!["viscosity.l1"],
        "l2" => vec!["viscosity.l2"],
        "re0" => vec!["viscosity.re0"],
        "nu0" => vec!["viscosity.nu0"],
        "kernel" => vec!["viscosity.kernel"],
        "n_nu" => vec!["viscosity.n_nu"],
        "d_max" => vec!["basis.d_max"],
        "mode" => vec!["solver.mode"],
        "h" => vec!["geometry.h"],
        _ => Vec::new(),
    }
}

/// Parses a scalar override as a TOML literal, falling back to a bare string.
fn literal(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `path` (dot separated or an alias) to `value` in a raw TOML table.
pub fn set_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let paths: Vec<String> = match alias(key) {
        a if !a.is_empty() => a.into_iter().map(String::from).collect(),
        _ if key.contains('.') || key == "seed" => vec![key.to_string()],
        _ => return Err(ConfigError::new(key, "unknown sweep key")),
    };
    for path in paths {
        let parts: Vec<&str> = path.split('.').collect();
        let (last, sections) = parts.split_last().unwrap();
        let mut t = &mut *table;
        for s in sections {
            t = t
                .entry(s.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::new(*s, "expected a section"))?;
        }
        // A viscosity override replaces whichever of nu0/re0 was given.
        if *last == "re0" {
            t.remove("nu0");
        } else if *last == "nu0" {
            t.remove("re0");
        }
        t.insert(last.to_string(), literal(value));
    }
    Ok(())
}

pub fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::new("config", e.message().to_string()))
}

/// Dotted path of the first unknown or mistyped key in a serde error, if recoverable.
fn error_field(e: &toml::de::Error, table: &toml::Table) -> String {
    let msg = e.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let name = rest.split('`').next().unwrap_or(rest);
        for (s, v) in table {
            if v.as_table().is_some_and(|t| t.contains_key(name)) {
                return format!("{s}.{name}");
            }
        }
        return name.to_string();
    }
    "config".to_string()
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new(error_field(&e, &table), e.message().to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_table(read_table(path)?)
    }

    /// Validates every field and fills in the derived member of `nu0`/`re0`.
    pub fn resolved(mut self) -> Result<Self, ConfigError> {
        let v = &mut self.viscosity;
        let nu0 = match (v.nu0, v.re0) {
            (Some(_), Some(_)) => return Err(ConfigError::new("viscosity.nu0", "give exactly one of nu0 and re0")),
            (Some(nu), None) => nu,
            (None, Some(re)) => {
                if !(re > 0.0 && re.is_finite()) {
                    return Err(ConfigError::new("viscosity.re0", format!("must be positive, got {re}")));
                }
                viscosity_from_reynolds(re)
            }
            (None, None) => ProblemSpec::default().nu0,
        };
        if !(nu0 > 0.0 && nu0.is_finite()) {
            return Err(ConfigError::new("viscosity.nu0", format!("must be positive, got {nu0}")));
        }
        v.nu0 = Some(nu0);
        v.re0 = Some(reynolds_from_viscosity(nu0));
        let kind = KernelKind::parse(&v.kernel).ok_or_else(|| ConfigError::new("viscosity.kernel", format!("unknown kernel `{}` (expected SE or AE)", v.kernel)))?;
        v.kernel = kind.tag().to_string();
        if SolveMode::parse(&self.solver.mode).is_none() {
            return Err(ConfigError::new(
                "solver.mode",
                format!("unknown mode `{}` (expected lowrank, fullrank or fullrank_exact)", self.solver.mode),
            ));
        }
        if ToleranceConvention::parse(&self.solver.tolerance_convention).is_none() {
            return Err(ConfigError::new(
                "solver.tolerance_convention",
                format!("unknown convention `{}` (expected residual or gmres)", self.solver.tolerance_convention),
            ));
        }
        if self.sweep.workers == 0 {
            return Err(ConfigError::new("sweep.workers", "must be at least 1"));
        }
        // Remaining range checks live in the core constructors; map their errors to keys.
        self.problem_spec()?;
        self.nonlinear_config()
            .validate()
            .map_err(|e| core_error("solver", e))?;
        Ok(self)
    }

    pub fn nu0(&self) -> f64 {
        self.viscosity.nu0.expect("resolved config")
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let v = &self.viscosity;
        let kind = KernelKind::parse(&v.kernel).ok_or_else(|| ConfigError::new("viscosity.kernel", format!("unknown kernel `{}`", v.kernel)))?;
        let kernel = CovarianceKernel::new(kind, v.l1, v.l2).map_err(|e| core_error("viscosity", e))?;
        let h = self.geometry.h;
        if !(h > 0.0 && h.is_finite()) {
            return Err(ConfigError::new("geometry.h", format!("must be positive, got {h}")));
        }
        if !(v.cov >= 0.0 && v.cov.is_finite()) {
            return Err(ConfigError::new("viscosity.cov", format!("must be nonnegative, got {}", v.cov)));
        }
        if v.n_nu == 0 {
            return Err(ConfigError::new("viscosity.n_nu", "must be at least 1"));
        }
        if v.kl_grid.contains(&0) {
            return Err(ConfigError::new("viscosity.kl_grid", "grid sizes must be positive"));
        }
        Ok(ProblemSpec {
            h,
            kernel,
            nu0: self.nu0(),
            cov: v.cov,
            n_nu: v.n_nu,
            d_max: self.basis.d_max,
            kl_grid: (v.kl_grid[0], v.kl_grid[1]),
            ..ProblemSpec::default()
        })
    }

    pub fn mode(&self) -> SolveMode {
        SolveMode::parse(&self.solver.mode).unwrap_or(SolveMode::LowRank)
    }

    pub fn nonlinear_config(&self) -> NonlinearConfig {
        let s = &self.solver;
        NonlinearConfig {
            eps_nl: s.eps_nl,
            rho_gmres: s.rho_gmres,
            rho_nl: s.rho_nl,
            rho_trunc_picard: s.rho_trunc_picard,
            rho_trunc_newton: s.rho_trunc_newton,
            picard_steps: s.picard_steps,
            newton_steps: s.newton_steps,
            stokes_gmres_tol: s.stokes_gmres_tol,
            eps_sol: s.eps_sol,
            mode: self.mode(),
            convention: ToleranceConvention::parse(&s.tolerance_convention).unwrap_or(ToleranceConvention::Residual),
            m_gm: s.m_gm,
            max_cycles: s.max_cycles,
            lsc: LscOptions {
                boundary_adjust: s.lsc_boundary_adjust,
            },
        }
    }

    /// Fully expanded TOML, loadable again with `load`.
    pub fn echo(&self) -> String {
        let mut c = self.clone();
        let re = c.viscosity.re0.take();
        let head = match re {
            Some(re) => format!("# resolved configuration; derived re0 = {re}\n"),
            None => "# resolved configuration\n".to_string(),
        };
        head + &toml::to_string(&c).expect("config serializes")
    }

    /// Output directory, resolved against `root` when relative.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output.directory.is_relative() => r.join(&self.output.directory),
            _ => self.output.directory.clone(),
        }
    }
}

fn core_error(section: &str, e: sgns_core::Error) -> ConfigError {
    match e {
        sgns_core::Error::InvalidParameter { name, reason } => ConfigError::new(format!("{section}.{name}"), reason),
        other => ConfigError::new(section, other.to_string()),
    }
}
