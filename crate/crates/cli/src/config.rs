//! JSON study configuration.
//!
//! One document per study, schema-validated (unknown keys are rejected);
//! command-line flags override document fields. Scalar functions are given
//! either as catalog identifiers (`parabola_cap{2}`, `poly{0,0.5}`, ...)
//! or as expression strings in the grammar of [`crate::expr`].

use std::path::Path;

use serde::Deserialize;

use thintube_core::cross_section::CrossSectionDomain;
use thintube_core::effective1d::BoundaryCondition;
use thintube_core::geometry::{Interval, ScalarFunction, TubeGeometry};
use thintube_core::harness::StudyConfig;
use thintube_core::tube3d::Tube3dConfig;

use crate::expr::parse_expression;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub section: SectionSpec,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default = "default_section_n")]
    pub section_n: usize,
    #[serde(default)]
    pub n_1d: Option<usize>,
    #[serde(default = "default_window_cap")]
    pub window_cap: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub tube3d: Option<Tube3dSpec>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025, 0.0125]
}

fn default_j_max() -> usize {
    2
}

fn default_bc() -> BoundaryCondition {
    BoundaryCondition::Dirichlet
}

fn default_section_n() -> usize {
    96
}

fn default_window_cap() -> f64 {
    50.0
}

fn default_samples() -> usize {
    4096
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// `[lo, hi]` or the string `"real"`
    pub interval: IntervalSpec,
    pub k: String,
    pub tau: String,
    pub alpha: String,
    pub h: String,
    #[serde(default)]
    pub limsup: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum IntervalSpec {
    Bounded([f64; 2]),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum SectionSpec {
    Disk {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Rectangle {
        x_range: [f64; 2],
        y_range: [f64; 2],
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tube3dSpec {
    #[serde(default = "default_s_cells")]
    pub s_cells: usize,
    #[serde(default = "default_y_cells")]
    pub y_cells: usize,
    #[serde(default = "default_control_scale")]
    pub control_scale: f64,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub j_max: Option<usize>,
}

fn default_s_cells() -> usize {
    96
}

fn default_y_cells() -> usize {
    24
}

fn default_control_scale() -> f64 {
    0.75
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub json: Option<String>,
}

/// Parse a scalar-function string: catalog syntax first, then the
/// expression grammar.
pub fn parse_scalar(text: &str) -> CResult<ScalarFunction> {
    match ScalarFunction::parse_catalog(text) {
        Ok(Some(f)) => return Ok(f),
        Ok(None) => {}
        Err(e) => return Err(bad(format!("bad catalog spec `{text}`: {e}"))),
    }
    let expr = parse_expression(text).map_err(|e| bad(format!("in `{text}`: {e}")))?;
    Ok(ScalarFunction::from_fn(text.to_string(), move |s| {
        expr.eval(s)
    }))
}

impl RunConfig {
    pub fn load(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| bad(format!("malformed config {}: {e}", path.display())))
    }

    pub fn geometry(&self) -> CResult<TubeGeometry> {
        let interval = match &self.geometry.interval {
            IntervalSpec::Bounded(pair) => Interval::bounded(pair[0], pair[1])
                .map_err(|e| bad(format!("bad interval: {e}")))?,
            IntervalSpec::Named(name) if name == "real" => Interval::RealLine,
            IntervalSpec::Named(name) => {
                return Err(bad(format!("unknown interval `{name}` (use [lo, hi] or \"real\")")))
            }
        };
        TubeGeometry::new(
            interval,
            parse_scalar(&self.geometry.k)?,
            parse_scalar(&self.geometry.tau)?,
            parse_scalar(&self.geometry.alpha)?,
            parse_scalar(&self.geometry.h)?,
            self.geometry.limsup,
        )
        .map_err(|e| bad(format!("bad geometry: {e}")))
    }

    pub fn section(&self) -> CResult<CrossSectionDomain> {
        let domain = match &self.section {
            SectionSpec::Disk { radius, center } => CrossSectionDomain::Disk {
                radius: *radius,
                center: *center,
            },
            SectionSpec::Rectangle { x_range, y_range } => CrossSectionDomain::Rectangle {
                x_range: *x_range,
                y_range: *y_range,
            },
            SectionSpec::Polygon { vertices } => CrossSectionDomain::Polygon {
                vertices: vertices.clone(),
            },
        };
        domain
            .validate()
            .map_err(|e| bad(format!("bad section: {e}")))?;
        Ok(domain)
    }

    pub fn study(&self, threads: usize) -> CResult<StudyConfig> {
        let mut cfg = StudyConfig::new(self.geometry()?, self.section()?, self.epsilons.clone());
        cfg.section_resolution = self.section_n;
        cfg.j_max = self.j_max;
        cfg.bc = self.bc;
        cfg.n_1d = self.n_1d;
        cfg.window_cap = self.window_cap;
        cfg.samples = self.samples;
        cfg.threads = threads;
        cfg.validate().map_err(|e| bad(format!("bad study: {e}")))?;
        Ok(cfg)
    }

    pub fn tube3d(&self) -> CResult<Tube3dConfig> {
        let spec = self.tube3d.clone().unwrap_or(Tube3dSpec {
            s_cells: default_s_cells(),
            y_cells: default_y_cells(),
            control_scale: default_control_scale(),
            epsilons: None,
            j_max: None,
        });
        let eps = spec
            .epsilons
            .clone()
            .unwrap_or_else(|| self.epsilons.clone());
        let mut cfg = Tube3dConfig::new(self.geometry()?, self.section()?, eps);
        cfg.j_max = spec.j_max.unwrap_or(0);
        cfg.s_cells = spec.s_cells;
        cfg.y_cells = spec.y_cells;
        cfg.control_scale = spec.control_scale;
        cfg.bc = self.bc;
        Ok(cfg)
    }
}
