//! Experiment configuration: one medium, one grid, one task.

use std::path::{Path, PathBuf};

use jumpwave_core::medium::{Branch, Domain, Interface, Medium, PiecewiseCoefficient, Region, TangentialForm};
use serde::{Deserialize, Serialize};

use crate::RunError;

fn default_output() -> PathBuf {
    PathBuf::from("jumpwave-out")
}

fn one() -> f64 {
    1.0
}

fn default_cfl() -> f64 {
    0.9
}

fn default_direction() -> f64 {
    1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Also render SVG plots of the main CSV series.
    #[serde(default, skip_serializing_if = "is_false")]
    pub svg: bool,
    pub medium: MediumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub task: TaskConfig,
}

/// `interval` for 1D, or `x` and `y` for 2D. The interface is the point
/// `interface` in 1D; in 2D it is the line `y = interface` or the polyline
/// `interface_points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface_points: Option<Vec<[f64; 2]>>,
    pub c_minus: f64,
    pub c_plus: f64,
    /// Tangential coefficient `b` in `Q(x, ξ') = b |ξ'|²`.
    #[serde(default = "one")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per axis; defaults to 200 in 1D and 128 x 128 in 2D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { cells: None, cfl_fraction: default_cfl() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionConfig {
    Interval([f64; 2]),
    Box { x: [f64; 2], y: [f64; 2] },
    Union(Vec<RegionConfig>),
    Everywhere,
}

impl RegionConfig {
    pub fn to_region(&self) -> Region {
        match self {
            RegionConfig::Interval([a, b]) => Region::Interval(*a, *b),
            RegionConfig::Box { x, y } => Region::Box { x: (x[0], x[1]), y: (y[0], y[1]) },
            RegionConfig::Union(parts) => Region::Union(parts.iter().map(|p| p.to_region()).collect()),
            RegionConfig::Everywhere => Region::Everywhere,
        }
    }
}

/// Initial data `(u0, u1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitConfig {
    /// Eigenvector `index` (1-based) of `A`, at rest.
    Mode {
        index: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Smooth compact bump `amplitude · exp(1 - 1/(1 - r²))`, at rest.
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// 1D Gaussian wave packet moving in `direction`.
    Packet {
        center: f64,
        width: f64,
        wavenumber: f64,
        #[serde(default = "default_direction")]
        direction: f64,
    },
    /// Seeded random combination of the first `modes` eigenpairs.
    Random { modes: usize },
}

/// Endpoints of one distance query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPair {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTask {
    pub horizon: f64,
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe: Option<RegionConfig>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub interface: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceTask {
    /// Graph node spacing.
    pub resolution: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stencil_radius: Option<usize>,
    #[serde(default)]
    pub pairs: Vec<PointPair>,
    /// Regions `E` for the largest distance `L(M, E)`.
    #[serde(default)]
    pub largest_from: Vec<RegionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumTask {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveTask {
    pub region: RegionConfig,
    pub horizon: f64,
    pub init: InitConfig,
    /// Graph spacing for the `2L` threshold; defaults to the grid spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcCheckTask {
    pub region: RegionConfig,
    pub horizon: f64,
    /// Ensemble of the first `modes` eigenvectors.
    pub modes: usize,
    pub mus: Vec<f64>,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityTask {
    pub region: RegionConfig,
    pub horizon: f64,
    pub modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumTask {
    pub region: RegionConfig,
    pub horizon: f64,
    pub target: f64,
    pub init: InitConfig,
    /// Starting penalty of the search; picked from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCurveTask {
    pub region: RegionConfig,
    pub horizon: f64,
    /// Strictly decreasing targets in `(0, 1]`.
    pub targets: Vec<f64>,
    pub init: InitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsTask {
    pub eps: f64,
    /// Physical point at which the frequency circle is classified.
    pub point: Vec<f64>,
    #[serde(default = "one")]
    pub tau: f64,
    pub angles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolGridConfig {
    pub tau_range: [f64; 2],
    pub tau_count: usize,
    pub radius_range: [f64; 2],
    pub radius_count: usize,
    pub angles: usize,
    pub normal_samples: usize,
    pub interface_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsTask {
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub beta: f64,
    pub eps: f64,
    pub mu: f64,
    pub mu0: f64,
    pub eta: f64,
    /// Sampling grid; the standard grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<SymbolGridConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyTask {
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub beta: f64,
    pub delta: f64,
    pub d: f64,
    pub r0: f64,
    pub taus: Vec<f64>,
    pub members: usize,
    /// Interface point `(t0, x'0)` of the chart.
    pub center: [f64; 2],
    pub half_width: f64,
    pub nodes_per_unit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrappingTask {
    pub center: [f64; 2],
    /// Incidence angle in degrees from the interface normal.
    pub angle_deg: f64,
    pub wavenumber: f64,
    pub sigma_along: f64,
    pub sigma_across: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    Simulate(SimulateTask),
    Distance(DistanceTask),
    Spectrum(SpectrumTask),
    Observe(ObserveTask),
    UcCheck(UcCheckTask),
    Stability(StabilityTask),
    Hum(HumTask),
    CostCurve(CostCurveTask),
    CarlemanRegions(RegionsTask),
    CarlemanWeights(WeightsTask),
    CarlemanCertify(CertifyTask),
    Trapping(TrappingTask),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Simulate(_) => "simulate",
            TaskConfig::Distance(_) => "distance",
            TaskConfig::Spectrum(_) => "spectrum",
            TaskConfig::Observe(_) => "observe",
            TaskConfig::UcCheck(_) => "uc-check",
            TaskConfig::Stability(_) => "stability",
            TaskConfig::Hum(_) => "hum",
            TaskConfig::CostCurve(_) => "cost-curve",
            TaskConfig::CarlemanRegions(_) => "carleman-regions",
            TaskConfig::CarlemanWeights(_) => "carleman-weights",
            TaskConfig::CarlemanCertify(_) => "carleman-certify",
            TaskConfig::Trapping(_) => "trapping",
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Parse(e.to_string()))
    }

    /// Read a TOML config, or the `config` object of a run manifest (`.json`).
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Parse(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| RunError::Parse(e.to_string()))?;
            let inner = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(inner).map_err(|e| RunError::Parse(e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }
}

impl MediumConfig {
    pub fn build(&self) -> Result<Medium, RunError> {
        let coefficient = PiecewiseCoefficient::constant(self.c_minus, self.c_plus);
        let invalid = |m: &str| RunError::Invalid(format!("medium: {m}"));
        let (domain, interface) = match (self.interval, self.x, self.y) {
            (Some([a, b]), None, None) => {
                if self.interface_points.is_some() {
                    return Err(invalid("interface_points needs a 2D domain"));
                }
                let s = self.interface.ok_or_else(|| invalid("1D medium needs `interface`"))?;
                (Domain::Interval { a, b }, Interface::Point(s))
            }
            (None, Some(x), Some(y)) => {
                let interface = match (&self.interface, &self.interface_points) {
                    (Some(level), None) => Interface::horizontal(x[0], x[1], *level),
                    (None, Some(pts)) => Interface::Graph(pts.clone()),
                    _ => return Err(invalid("2D medium needs exactly one of `interface` or `interface_points`")),
                };
                (Domain::Rectangle { x: (x[0], x[1]), y: (y[0], y[1]) }, interface)
            }
            _ => return Err(invalid("give either `interval` or both `x` and `y`")),
        };
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(invalid("b must be positive"));
        }
        let tangential = TangentialForm { b: Branch::Constant(self.b), b1: self.b, b2: self.b };
        Ok(Medium::with_tangential(domain, interface, coefficient, tangential)?)
    }
}
