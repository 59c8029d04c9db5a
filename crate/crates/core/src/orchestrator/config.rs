//! Run configuration: a strict TOML document validated before anything is
//! allocated.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::SolverKind;
use crate::model::{
    BoundaryData, FluidModel, InitialProfile, PhysicalParams, SpeciesBc, SpeciesSpec, XiSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(rename = "K", default = "one")]
    pub k: f64,
    #[serde(alias = "viscosity", default = "one")]
    pub nu: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub fluid_model: FluidModel,
}

fn one() -> f64 {
    1.0
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            epsilon: p.epsilon,
            k: p.k,
            nu: p.nu,
            tau: p.tau,
            fluid_model: p.fluid_model,
        }
    }
}

impl From<ParamsConfig> for PhysicalParams {
    fn from(p: ParamsConfig) -> Self {
        PhysicalParams {
            epsilon: p.epsilon,
            k: p.k,
            nu: p.nu,
            tau: p.tau,
            fluid_model: p.fluid_model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    #[default]
    Blocking,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub valence: f64,
    pub diffusivity: f64,
    #[serde(default)]
    pub bc: BcKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub initial: InitialProfile,
}

impl SpeciesConfig {
    pub fn to_spec(&self) -> SpeciesSpec {
        let bc = match self.bc {
            BcKind::Blocking => SpeciesBc::Blocking,
            BcKind::Dirichlet => SpeciesBc::Dirichlet {
                gamma: self.gamma.unwrap_or(f64::NAN),
            },
        };
        SpeciesSpec {
            valence: self.valence,
            diffusivity: self.diffusivity,
            bc,
            initial: self.initial.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub xi: XiSpec,
}

/// Time step: a positive number or `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSetting {
    Fixed(f64),
    Named(String),
}

impl Default for DtSetting {
    fn default() -> Self {
        DtSetting::Named("auto".into())
    }
}

impl DtSetting {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            DtSetting::Fixed(v) => Some(*v),
            DtSetting::Named(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverSetting {
    #[default]
    Auto,
    Pcg,
    Banded,
}

impl From<SolverSetting> for SolverKind {
    fn from(s: SolverSetting) -> Self {
        match s {
            SolverSetting::Auto => SolverKind::Auto,
            SolverSetting::Pcg => SolverKind::Pcg,
            SolverSetting::Banded => SolverKind::Banded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dt: DtSetting,
    pub t_end: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub shadow_rho_sigma: bool,
    #[serde(default)]
    pub solver: SolverSetting,
}

fn default_sample_every() -> u64 {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// Newline-delimited diagnostics records.
    Ndjson,
    /// Binary field dumps with JSON sidecars at every sample.
    Fields,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Ndjson]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    /// Zero disables periodic checkpoints; a final one is always written.
    #[serde(default)]
    pub every_n_steps: u64,
    /// Relative paths are taken inside the output directory.
    #[serde(default = "default_ckpt")]
    pub path: PathBuf,
}

fn default_ckpt() -> PathBuf {
    PathBuf::from("checkpoint.bin")
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        Self {
            every_n_steps: 0,
            path: default_ckpt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    pub species: Vec<SpeciesConfig>,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub checkpoint: CheckpointConfig,
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::ConfigValidation {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Re-key a module-level parameter error under its config path.
fn rekey(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { key, reason } => invalid(format!("{prefix}{key}"), reason),
        Error::InvalidGrid(reason) => invalid("grid", reason),
        Error::FieldMismatch(reason) => invalid(prefix.trim_end_matches('.'), reason),
        other => other,
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl SimConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::ConfigParse {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration with every default filled in, as TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, &self.grid.cells, &self.grid.lengths).map_err(|e| rekey("grid.", e))
    }

    pub fn params(&self) -> PhysicalParams {
        self.params.into()
    }

    pub fn species(&self) -> Vec<SpeciesSpec> {
        self.species.iter().map(SpeciesConfig::to_spec).collect()
    }

    pub fn boundary_data(&self, grid: &Grid) -> Result<BoundaryData> {
        BoundaryData::from_spec(grid, &self.boundary.xi).map_err(|e| rekey("boundary.xi.", e))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.params().validate().map_err(|e| rekey("params.", e))?;
        if self.species.is_empty() {
            return Err(invalid("species", "at least one species is required"));
        }
        for (i, s) in self.species.iter().enumerate() {
            let prefix = format!("species[{i}].");
            match (s.bc, s.gamma) {
                (BcKind::Dirichlet, None) => {
                    return Err(invalid(
                        format!("{prefix}gamma"),
                        "a dirichlet species needs gamma > 0",
                    ))
                }
                (BcKind::Blocking, Some(_)) => {
                    return Err(invalid(
                        format!("{prefix}gamma"),
                        "gamma only applies to dirichlet species",
                    ))
                }
                _ => {}
            }
            s.to_spec().validate().map_err(|e| rekey(&prefix, e))?;
            s.initial
                .validate(grid.dim())
                .map_err(|e| rekey(&prefix, e))?;
        }
        self.boundary_data(&grid)?;
        let run = &self.run;
        if !(run.t_end > 0.0 && run.t_end.is_finite()) {
            return Err(invalid("run.t_end", format!("must be positive (got {})", run.t_end)));
        }
        match &run.dt {
            DtSetting::Fixed(dt) if !(*dt > 0.0 && dt.is_finite()) => {
                return Err(invalid("run.dt", format!("must be positive or \"auto\" (got {dt})")))
            }
            DtSetting::Named(s) if s != "auto" => {
                return Err(invalid("run.dt", format!("must be a number or \"auto\" (got \"{s}\")")))
            }
            _ => {}
        }
        if run.sample_every == 0 {
            return Err(invalid("run.sample_every", "must be at least 1"));
        }
        if run.shadow_rho_sigma {
            crate::nernst_planck::common_transport(&self.species())
                .map_err(|e| invalid("run.shadow_rho_sigma", e.to_string()))?;
        }
        Ok(())
    }

    /// Resolve relative table paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let XiSpec::Table { path } = &mut self.boundary.xi {
            let p = Path::new(path.as_str());
            if p.is_relative() {
                *path = base.join(p).to_string_lossy().into_owned();
            }
        }
    }

    /// Checkpoint location, resolved against the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.path.is_absolute() {
            self.checkpoint.path.clone()
        } else {
            self.output.directory.join(&self.checkpoint.path)
        }
    }
}

/// Read, parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut raw: SimConfig = toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(&text, s.start));
        Error::ConfigParse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    if let Some(dir) = path.parent() {
        raw.resolve_paths(dir);
    }
    raw.validate()?;
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
dim = 2
cells = [8, 8]
lengths = [1.0, 1.0]

[[species]]
valence = 1
diffusivity = 1.0
initial = { kind = "uniform", value = 1.0 }

[[species]]
valence = -1
diffusivity = 1.0
initial = { kind = "uniform", value = 1.0 }

[run]
t_end = 0.1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = SimConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.params.fluid_model, FluidModel::Nps);
        assert_eq!(c.run.dt, DtSetting::Named("auto".into()));
        assert_eq!(c.run.sample_every, 10);
        assert_eq!(c.boundary.xi, XiSpec::Constant { value: 0.0 });
        let echo = c.to_toml_string();
        assert!(echo.contains("fluid_model = \"NPS\""));
        assert!(echo.contains("sample_every = 10"));
        assert_eq!(SimConfig::from_toml_str(&echo).unwrap(), c);
    }

    #[test]
    fn zero_tau_is_rejected() {
        let text = format!("{MINIMAL}\n[params]\ntau = 0.0\n");
        match SimConfig::from_toml_str(&text) {
            Err(Error::ConfigValidation { key, reason }) => {
                assert_eq!(key, "params.tau");
                assert!(reason.contains("Robin"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named_with_position() {
        let text = format!("{MINIMAL}\n[params]\nviscocity = 0.5\n");
        match SimConfig::from_toml_str(&text) {
            Err(Error::ConfigParse {
                line,
                column,
                message,
            }) => {
                assert!(message.contains("viscocity"), "{message}");
                assert_eq!(line, text.lines().position(|l| l.starts_with("viscocity")).unwrap() + 1);
                assert_eq!(column, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn viscosity_alias_and_fixed_dt() {
        let text = MINIMAL.replace("t_end = 0.1", "t_end = 0.1\ndt = 1e-4")
            + "\n[params]\nviscosity = 0.25\nK = 2.0\n";
        let c = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.params.nu, 0.25);
        assert_eq!(c.params.k, 2.0);
        assert_eq!(c.run.dt.fixed(), Some(1e-4));
    }

    #[test]
    fn validation_errors_name_keys() {
        let cases = [
            (MINIMAL.replace("diffusivity = 1.0\ninitial = { kind = \"uniform\", value = 1.0 }\n\n[run]", "diffusivity = -1.0\ninitial = { kind = \"uniform\", value = 1.0 }\n\n[run]"), "species[1].diffusivity"),
            (MINIMAL.replace("t_end = 0.1", "t_end = 0.1\ndt = \"fast\""), "run.dt"),
            (MINIMAL.replace("t_end = 0.1", "t_end = -1.0"), "run.t_end"),
            (MINIMAL.replace("valence = -1\ndiffusivity = 1.0", "valence = -1\ndiffusivity = 1.0\nbc = \"dirichlet\"\ngamma = 0.0"), "species[1].gamma"),
            (MINIMAL.replace("valence = -1\ndiffusivity = 1.0", "valence = -1\ndiffusivity = 1.0\nbc = \"dirichlet\""), "species[1].gamma"),
            (MINIMAL.replace("cells = [8, 8]", "cells = [8]"), "grid"),
        ];
        for (text, key) in cases {
            match SimConfig::from_toml_str(&text) {
                Err(Error::ConfigValidation { key: k, reason }) => {
                    assert_eq!(k, key, "{reason}");
                    if key.ends_with("gamma") && text.contains("gamma = 0.0") {
                        assert!(reason.contains("gamma > 0"));
                    }
                }
                other => panic!("{key}: {other:?}"),
            }
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[grid]\ndim = 2\ncells = [8, 8\n";
        match SimConfig::from_toml_str(text) {
            Err(Error::ConfigParse { line, .. }) => assert!(line >= 3),
            other => panic!("{other:?}"),
        }
    }
}
