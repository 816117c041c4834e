//! Run configuration: a single JSON file, versioned, validated strictly
//! (unknown keys rejected) before any computation.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use nde_core::admissibility::{Hypothesis, HypothesisParams, XStarPolicy};
use nde_core::catalog::field_by_name;
use nde_core::cutoff::cutoff_modify;
use nde_core::problem::{HistorySegment, Mat, NdeProblem, NeutralAtom, NeutralPart, Rhs};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub hypothesis: Option<HypothesisSection>,
    #[serde(default)]
    pub x_star: Option<XStarSection>,
    #[serde(default)]
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub xi: Option<XiSection>,
    #[serde(default)]
    pub track: Option<TrackSection>,
    #[serde(default)]
    pub vdp: Option<VdpSection>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSection {
    pub variant: String,
    pub m: f64,
    pub m0: f64,
    pub mj: Vec<f64>,
    pub k: usize,
    pub r0: f64,
    pub d: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Explicit beta_2..beta_{k+1} overriding the geometric ladder.
    #[serde(default)]
    pub beta_tail: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum XStarSection {
    Auto(String),
    Fixed(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    pub r: f64,
    pub rhs: RhsSection,
    /// Cut-off radius; null leaves the field unmodified.
    #[serde(default)]
    pub cutoff: Option<f64>,
    #[serde(default)]
    pub neutral_atoms: Vec<AtomSection>,
    #[serde(default)]
    pub phi: Option<PhiSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhsSection {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub matrix: Vec<Vec<f64>>,
    pub delay: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PhiSection {
    Constant { value: Vec<f64> },
    Samples { values: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Half-width of the weighted-norm window for manifold charts.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSection {
    pub bases: Vec<Vec<f64>>,
    #[serde(default)]
    pub step: Option<f64>,
    /// Build the full derivative stencil around each base.
    #[serde(default)]
    pub stencil: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    #[serde(default)]
    pub t_forward: Option<f64>,
    #[serde(default)]
    pub t_backward: Option<f64>,
    #[serde(default)]
    pub with_chart: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpSection {
    pub b: f64,
    pub c: f64,
    pub eps: f64,
    pub r: f64,
    #[serde(default = "default_kappa")]
    pub kappa_cutoff: f64,
    #[serde(default = "default_halvings")]
    pub halvings: usize,
    #[serde(default)]
    pub initial: Option<[f64; 2]>,
    /// Also construct the manifold chart and a tracking run on the modified
    /// system, bundling their certificates.
    #[serde(default)]
    pub with_manifold: bool,
}

fn default_kappa() -> f64 {
    2.0
}

fn default_halvings() -> usize {
    2
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(ConfigError(format!(
            "schema_version {} unsupported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn hypothesis_params(&self) -> Result<HypothesisParams, ConfigError> {
        let h = self
            .hypothesis
            .as_ref()
            .ok_or_else(|| ConfigError("missing section: hypothesis".into()))?;
        let hypothesis = match h.variant.as_str() {
            "h1" => Hypothesis::H1,
            "h2" => Hypothesis::H2,
            other => {
                return Err(ConfigError(format!(
                    "hypothesis.variant must be h1 or h2, got {other}"
                )))
            }
        };
        if h.mj.len() != h.k + 1 {
            return Err(ConfigError(format!(
                "hypothesis.mj needs k+1 = {} entries, got {}",
                h.k + 1,
                h.mj.len()
            )));
        }
        Ok(HypothesisParams {
            hypothesis,
            m: h.m,
            m0: h.m0,
            mj: h.mj.clone(),
            k: h.k,
            r0: h.r0,
            d: h.d,
            dim: h.dim,
        })
    }

    pub fn beta_policy(&self) -> nde_core::admissibility::BetaPolicy {
        match self.hypothesis.as_ref().and_then(|h| h.beta_tail.clone()) {
            Some(tail) => nde_core::admissibility::BetaPolicy::Explicit(tail),
            None => nde_core::admissibility::BetaPolicy::Geometric,
        }
    }

    pub fn x_star_policy(&self) -> Result<XStarPolicy, ConfigError> {
        match &self.x_star {
            None => Ok(XStarPolicy::Auto),
            Some(XStarSection::Auto(s)) if s == "auto" => Ok(XStarPolicy::Auto),
            Some(XStarSection::Auto(s)) => {
                Err(ConfigError(format!("x_star must be \"auto\" or a number, got {s:?}")))
            }
            Some(XStarSection::Fixed(v)) => Ok(XStarPolicy::Fixed(*v)),
        }
    }

    pub fn build_problem(&self) -> Result<NdeProblem, ConfigError> {
        let p = self
            .problem
            .as_ref()
            .ok_or_else(|| ConfigError("missing section: problem".into()))?;
        let mut rhs: Arc<dyn Rhs> = field_by_name(&p.rhs.name, &p.rhs.params).ok_or_else(|| {
            ConfigError(format!(
                "unknown rhs catalog entry {:?} or bad params",
                p.rhs.name
            ))
        })?;
        if rhs.dim() != p.dim {
            return Err(ConfigError(format!(
                "rhs dimension {} does not match problem.dim {}",
                rhs.dim(),
                p.dim
            )));
        }
        if let Some(kappa) = p.cutoff {
            rhs = cutoff_modify(rhs, kappa);
        }
        let atoms = p
            .neutral_atoms
            .iter()
            .map(|a| {
                if a.matrix.len() != p.dim || a.matrix.iter().any(|r| r.len() != p.dim) {
                    return Err(ConfigError("atom matrix shape mismatch".into()));
                }
                Ok(NeutralAtom::constant(Mat::from_rows(&a.matrix), a.delay))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NdeProblem::new(p.dim, p.r, NeutralPart { atoms }, rhs))
    }

    pub fn build_phi(&self, r: f64, dim: usize) -> Result<HistorySegment, ConfigError> {
        let p = self
            .problem
            .as_ref()
            .ok_or_else(|| ConfigError("missing section: problem".into()))?;
        match &p.phi {
            Some(PhiSection::Constant { value }) => {
                if value.len() != dim {
                    return Err(ConfigError("phi.value dimension mismatch".into()));
                }
                Ok(HistorySegment::constant(0.0, r, value.clone()))
            }
            Some(PhiSection::Samples { values }) => {
                HistorySegment::from_samples(0.0, r, values.clone())
                    .map_err(|e| ConfigError(format!("phi samples: {e}")))
            }
            None => Err(ConfigError("missing problem.phi".into())),
        }
    }
}
