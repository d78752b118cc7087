//! Run configuration: a single TOML file whose defaults reproduce the two
//! built-in numerical cases, so a run needs nothing beyond a case name and a
//! seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anneal::AnnealConfig;
use crate::fem::ShellMaterial;
use crate::grid::BaseSurfaceSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Case1,
    Case2,
    /// Roles and supports come from an externally supplied grid file.
    Custom,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub nu: usize,
    pub nv: usize,
    /// Plan dimensions, meters.
    pub lx: f64,
    pub ly: f64,
    /// Apex rise of the initial dome, meters.
    pub rise: f64,
    /// Jitter half-width in normalized (u, v) parameter space.
    pub jitter: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nu: 21, nv: 21, lx: 10.0, ly: 10.0, rise: 2.0, jitter: 0.015 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// tanh filter sharpness c.
    pub c: f64,
    pub epsilon: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { c: 100.0, epsilon: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    /// Lower-level z box half-width around the initial surface, meters.
    pub lower_halfwidth: f64,
    /// Upper-level design-height box half-width, meters.
    pub upper_halfwidth: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { lower_halfwidth: 8.0, upper_halfwidth: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadConfig {
    /// Area load magnitude, kN/m^2, acting in -z.
    pub q: f64,
    /// Scale nodal loads by the plan-projection factor |n.e_z|.
    pub on_plan_area: bool,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig { q: 1.0, on_plan_area: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialConfig {
    /// kN/m^2.
    pub youngs: f64,
    pub poisson: f64,
    /// m.
    pub thickness: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        let m = ShellMaterial::reference_default();
        MaterialConfig { youngs: m.youngs, poisson: m.poisson, thickness: m.thickness }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: CaseKind,
    /// Path to a grid file; required when case = "custom".
    pub grid_file: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub anneal: AnnealConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl CaseConfig {
    pub fn case1(seed: u64) -> Self {
        CaseConfig {
            case: CaseKind::Case1,
            grid_file: None,
            seed,
            grid: GridConfig::default(),
            filter: FilterConfig::default(),
            bounds: BoundsConfig::default(),
            material: MaterialConfig::default(),
            load: LoadConfig::default(),
            anneal: AnnealConfig { seed, ..AnnealConfig::default() },
            out_dir: default_out_dir(),
        }
    }

    pub fn case2(seed: u64) -> Self {
        CaseConfig {
            grid: GridConfig { nu: 21, nv: 11, lx: 10.0, ly: 5.0, rise: 1.0, jitter: 0.01 },
            case: CaseKind::Case2,
            ..CaseConfig::case1(seed)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: CaseConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.case == CaseKind::Custom && self.grid_file.is_none() {
            return bad("case = \"custom\" requires grid_file");
        }
        if self.grid.nu < 3 || self.grid.nv < 3 {
            return bad("grid must be at least 3x3");
        }
        if self.grid.lx <= 0.0 || self.grid.ly <= 0.0 {
            return bad("plan dimensions must be positive");
        }
        if !(self.filter.c > 0.0) {
            return bad("filter.c must be positive");
        }
        if !(self.filter.epsilon >= 0.0) {
            return bad("filter.epsilon must be non-negative");
        }
        if !(self.bounds.lower_halfwidth > 0.0 && self.bounds.upper_halfwidth > 0.0) {
            return bad("bounds half-widths must be positive");
        }
        let mat = self.material();
        mat.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.load.q < 0.0 {
            return bad("load.q must be non-negative");
        }
        if self.anneal.steps == 0 || self.anneal.moves_per_step == 0 {
            return bad("anneal budget must be at least 1 evaluation");
        }
        if !(self.anneal.cooling > 0.0 && self.anneal.cooling < 1.0) {
            return bad("anneal.cooling must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn material(&self) -> ShellMaterial {
        ShellMaterial {
            youngs: self.material.youngs,
            poisson: self.material.poisson,
            thickness: self.material.thickness,
        }
    }

    pub fn base_surface_spec(&self) -> BaseSurfaceSpec {
        BaseSurfaceSpec {
            nu: self.grid.nu,
            nv: self.grid.nv,
            lx: self.grid.lx,
            ly: self.grid.ly,
            rise: self.grid.rise,
            jitter: self.grid.jitter,
            seed: self.seed,
        }
    }
}
