//! JSON run configuration shared by all subcommands. Every section is
//! optional at parse time; each command demands the sections it uses.

use std::path::{Path, PathBuf};

use chipheat::anneal::SaConfig;
use chipheat::domain::{build_mesh, ChipStack, Floorplan, Mesh, PowerSpec};
use chipheat::fd::GmresParams;
use chipheat::operator::ModelSpec;
use chipheat::training::{SamplerSpec, TrainConfig};
use chipheat::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 1 × 1 × 0.5 mm cuboid with a top surface power map.
    Surface,
    /// 1 × 1 × 0.55 mm three-layer stack.
    ThreeLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Preset(Preset),
    Custom(ChipStack),
}

impl Geometry {
    pub fn stack(&self) -> Result<ChipStack> {
        Ok(match self {
            Geometry::Preset(Preset::Surface) => ChipStack::surface_benchmark(),
            Geometry::Preset(Preset::ThreeLayer) => ChipStack::three_layer_benchmark(),
            Geometry::Custom(s) => {
                s.validate()?;
                s.clone()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSection {
    /// Relative-residual threshold of the confidence gate. The default is
    /// only a placeholder: calibrate it on held-out designs.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

pub const DEFAULT_ALPHA: f64 = 9.0;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub n_designs: usize,
    /// Defaults to the sampler recorded in the checkpoint.
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkSection {
    pub coeffs: Vec<f64>,
    pub order: usize,
    pub eta: f64,
    pub steps: usize,
    pub dt: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub geometry: Option<Geometry>,
    /// Nodes per axis.
    #[serde(default)]
    pub mesh: Option<[usize; 3]>,
    #[serde(default)]
    pub power: Option<PowerSpec>,
    /// When set, `solve` uses ILU(0)-preconditioned GMRES with these
    /// settings instead of the default reference solve.
    #[serde(default)]
    pub gmres: Option<GmresParams>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub hybrid: Option<HybridSection>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
    #[serde(default)]
    pub sa: Option<SaConfig>,
    /// Initial floorplan of `optimize`.
    #[serde(default)]
    pub floorplan: Option<Floorplan>,
    #[serde(default)]
    pub ntk: Option<NtkSection>,
    /// z-slice written as a PPM heatmap by `solve` and `predict`.
    #[serde(default)]
    pub heatmap_slice: Option<usize>,
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("config lacks the `{name}` section")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn stack(&self) -> Result<ChipStack> {
        require(&self.geometry, "geometry")?.stack()
    }

    pub fn mesh_for(&self, stack: &ChipStack) -> Result<Mesh> {
        let [nx, ny, nz] = *require(&self.mesh, "mesh")?;
        build_mesh(stack, (nx, ny, nz))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
