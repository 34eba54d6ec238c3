//! Experiment configuration: one JSON document per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bulkedge::bulk::CurvatureStencil;
use bulkedge::coeff::{builtin_family, CoefficientField};
use bulkedge::edge::DEFAULT_MARGIN;
use bulkedge::eig::SolverSettings;
use bulkedge::grid::DomainShape;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// JSON schema of [`ExperimentConfig`], also printed by `bulkedge schema`.
pub const SCHEMA: &str = include_str!("../config.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Unit-cell resolution.
    pub n: usize,
    #[serde(default = "default_n_kappa")]
    pub n_kappa: usize,
    #[serde(default = "default_n_bands")]
    pub n_bands: usize,
    /// Filled band count; `None` picks the widest gap below `n_bands`.
    #[serde(default)]
    pub n_filled: Option<usize>,
    #[serde(default)]
    pub curvature: CurvatureStencil,
    #[serde(default = "default_shape")]
    pub shape: DomainShape,
    #[serde(default)]
    pub l_list: Vec<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub hs: HsSettings,
    #[serde(default)]
    pub decay: DecaySettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_kappa() -> usize {
    16
}

fn default_n_bands() -> usize {
    4
}

fn default_shape() -> DomainShape {
    DomainShape::Disk
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSettings {
    pub order: usize,
    pub nx: usize,
    pub ny: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings { order: 3, nx: 200, ny: 100 }
    }
}

/// Small-domain Green-function representation check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HsSettings {
    /// Disk radius of the check domain.
    pub l: f64,
    /// Resolution of the check domain.
    pub n: usize,
    /// Size of the random matrix used for the `g'(M)` check.
    pub matrix_dim: usize,
}

impl Default for HsSettings {
    fn default() -> Self {
        HsSettings {
            l: 2.0,
            n: 10,
            matrix_dim: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySettings {
    /// Supercell size in unit cells.
    pub cells: usize,
    /// Source node within the first cell; defaults to the cell centre.
    pub src: Option<[usize; 2]>,
    /// Real part of the probe energies; defaults to mid-gap.
    pub energy: Option<f64>,
    /// Imaginary parts, in units of the gap width.
    pub eta: Vec<f64>,
}

impl Default for DecaySettings {
    fn default() -> Self {
        DecaySettings {
            cells: 16,
            src: None,
            energy: None,
            eta: vec![0.0, 1.0, 2.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn field(&self) -> Result<CoefficientField, CliError> {
        builtin_family(&self.family, &self.params).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    /// Every violation at once, so a user can fix a config in one pass.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = builtin_family(&self.family, &self.params) {
            out.push(format!("family: {e}"));
        }
        if self.n < 4 {
            out.push(format!("n: need at least 4 nodes per cell, got {}", self.n));
        }
        if self.n_kappa < 4 {
            out.push(format!("n_kappa: need at least 4, got {}", self.n_kappa));
        }
        if self.n_bands < 2 {
            out.push(format!("n_bands: need at least 2, got {}", self.n_bands));
        }
        if let Some(nf) = self.n_filled {
            if nf == 0 || nf >= self.n_bands {
                out.push(format!("n_filled: need 1 <= n_filled < n_bands = {}, got {nf}", self.n_bands));
            }
        }
        match self.curvature {
            CurvatureStencil::Local { eta } if !(eta > 0.0) => out.push(format!("curvature.eta: must be positive, got {eta}")),
            CurvatureStencil::Grid { order } if ![2, 4, 6, 8].contains(&order) => {
                out.push(format!("curvature.order: must be 2, 4, 6 or 8, got {order}"))
            }
            _ => {}
        }
        if self.l_list.iter().any(|&l| !(l > 0.0)) {
            out.push(format!("l_list: entries must be positive, got {:?}", self.l_list));
        }
        if self.l_list.windows(2).any(|w| !(w[0] < w[1])) {
            out.push(format!("l_list: must be strictly ascending, got {:?}", self.l_list));
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            out.push(format!("margin: must lie in (0, 0.5), got {}", self.margin));
        }
        let q = &self.quadrature;
        if q.order > 3 {
            out.push(format!("quadrature.order: at most 3, got {}", q.order));
        }
        if q.nx < 2 {
            out.push(format!("quadrature.nx: at least 2, got {}", q.nx));
        }
        if q.ny == 0 || q.ny % 2 != 0 {
            out.push(format!("quadrature.ny: must be even and positive, got {}", q.ny));
        }
        if !(self.hs.l > 0.0) || self.hs.n < 4 || self.hs.matrix_dim == 0 {
            out.push(format!("hs: need l > 0, n >= 4 and matrix_dim > 0, got {:?}", self.hs));
        }
        let d = &self.decay;
        if d.cells < 4 {
            out.push(format!("decay.cells: at least 4, got {}", d.cells));
        }
        if let Some([i, j]) = d.src {
            if i >= self.n || j >= self.n {
                out.push(format!("decay.src: node ({i}, {j}) outside the {0} x {0} cell", self.n));
            }
        }
        if d.eta.is_empty() || d.eta.iter().any(|&e| !(e >= 0.0)) {
            out.push(format!("decay.eta: need a nonempty list of non-negative heights, got {:?}", d.eta));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            out.push(format!("solver: need tol > 0 and max_iter > 0, got {:?}", self.solver));
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }
}
