//! Scenario configuration: a single strict-parsed JSON file declaring
//! physical-constant overrides, named density models, and per-command
//! parameter blocks.  Unknown keys anywhere fail the parse.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cavendish::{Pendulum, SourceTrajectory};
use crate::constants::PhysicalConstants;
use crate::density::{
    GranularBall, MassDistribution, PointMass, PointSet, SmearedGranular, UniformBall, VoxelGrid,
    DEFAULT_NUCLEUS_DENSITY, DEFAULT_NUCLEUS_RADIUS,
};
use crate::dynamics::ScaledUniverseSpec;
use crate::equilibrium::EquilibriumMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub constants: Option<PhysicalConstants>,
    #[serde(default)]
    pub densities: BTreeMap<String, DensitySpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub rate: Option<RateBlock>,
    #[serde(default)]
    pub curve: Option<CurveBlock>,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumBlock>,
    #[serde(default)]
    pub dynamics: Option<DynamicsBlock>,
    #[serde(default)]
    pub cavendish: Option<CavendishBlock>,
    #[serde(default)]
    pub validate: Option<ValidateBlock>,
}

/// Declarative density model; resolved to a `MassDistribution`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    PointSet {
        points: Vec<PointMass>,
    },
    UniformBall {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        density: Option<f64>,
        #[serde(default)]
        mass: Option<f64>,
    },
    GranularBall {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_nucleus_radius")]
        nucleus_radius: f64,
        #[serde(default = "default_nucleus_density")]
        nucleus_density: f64,
        lattice_spacing: f64,
        #[serde(default)]
        lattice_origin: Option<[f64; 3]>,
    },
    SmearedGranular {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_nucleus_radius")]
        nucleus_radius: f64,
        #[serde(default = "default_nucleus_density")]
        nucleus_density: f64,
        lattice_spacing: f64,
        #[serde(default)]
        lattice_origin: Option<[f64; 3]>,
        smear_length: f64,
    },
    VoxelGridFile {
        data: PathBuf,
        sidecar: PathBuf,
    },
}

fn default_nucleus_radius() -> f64 {
    DEFAULT_NUCLEUS_RADIUS
}

fn default_nucleus_density() -> f64 {
    DEFAULT_NUCLEUS_DENSITY
}

impl DensitySpec {
    /// Build the distribution; relative voxel paths resolve against
    /// `base_dir` (the config file's directory).
    pub fn resolve(&self, base_dir: &Path) -> Result<MassDistribution> {
        match self {
            DensitySpec::PointSet { points } => {
                Ok(MassDistribution::PointSet(PointSet::new(points.clone())?))
            }
            DensitySpec::UniformBall { center, radius, density, mass } => match (density, mass) {
                (Some(rho), None) => {
                    Ok(MassDistribution::UniformBall(UniformBall::from_density(*center, *radius, *rho)?))
                }
                (None, Some(m)) => {
                    Ok(MassDistribution::UniformBall(UniformBall::from_mass(*center, *radius, *m)?))
                }
                _ => Err(Error::ConfigParse(
                    "uniform_ball needs exactly one of `density` or `mass`".into(),
                )),
            },
            DensitySpec::GranularBall {
                center,
                radius,
                nucleus_radius,
                nucleus_density,
                lattice_spacing,
                lattice_origin,
            } => Ok(MassDistribution::GranularBall(GranularBall::new(
                *center,
                *radius,
                *nucleus_radius,
                *nucleus_density,
                *lattice_spacing,
                *lattice_origin,
            )?)),
            DensitySpec::SmearedGranular {
                center,
                radius,
                nucleus_radius,
                nucleus_density,
                lattice_spacing,
                lattice_origin,
                smear_length,
            } => {
                let base = GranularBall::new(
                    *center,
                    *radius,
                    *nucleus_radius,
                    *nucleus_density,
                    *lattice_spacing,
                    *lattice_origin,
                )?;
                Ok(MassDistribution::SmearedGranular(SmearedGranular::new(base, *smear_length)?))
            }
            DensitySpec::VoxelGridFile { data, sidecar } => {
                let data = if data.is_relative() { base_dir.join(data) } else { data.clone() };
                let sidecar =
                    if sidecar.is_relative() { base_dir.join(sidecar) } else { sidecar.clone() };
                Ok(MassDistribution::VoxelGrid(VoxelGrid::read_files(&data, &sidecar)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    pub density: String,
    /// displacement vector [m]
    pub displacement: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Displacement,
    Smearing,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CurveBlock {
    pub density: String,
    pub kind: CurveKind,
    /// displacement sweep (required for kind = displacement): log-spaced
    #[serde(default)]
    pub displacements: Option<SweepSpec>,
    /// fixed direction of the displacement
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    /// smear lengths (required for kind = smearing), ascending [m]
    #[serde(default)]
    pub smear_lengths: Option<Vec<f64>>,
    /// displacement magnitude for smearing curves [m]
    #[serde(default)]
    pub displacement: Option<f64>,
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl SweepSpec {
    pub fn log_points(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min && self.count >= 2) {
            return Err(Error::ConfigParse(
                "sweep needs 0 < min < max and at least two points".into(),
            ));
        }
        let n = self.count;
        Ok((0..n)
            .map(|i| self.min * (self.max / self.min).powf(i as f64 / (n - 1) as f64))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumBlock {
    pub mass: f64,
    pub density: f64,
    #[serde(default = "default_nucleus_density")]
    pub nucleus_density: f64,
    pub mode: EquilibriumMode,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Moments,
    Grid,
    ScaledUniverse,
}

/// Localization strength: explicit, or measured from a density model's
/// quadratic rate law.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    Value(f64),
    FromDensity(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub mode: DynamicsMode,
    #[serde(default)]
    pub lambda: Option<LambdaSource>,
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    /// initial Gaussian position variance [m^2] (moments and grid modes)
    #[serde(default)]
    pub initial_var_x: Option<f64>,
    /// grid mode: number of points, domain half-width [m], packet width [m],
    /// Cat separation [m] (0 = single packet)
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub domain_half_width: Option<f64>,
    #[serde(default)]
    pub packet_sigma: Option<f64>,
    #[serde(default)]
    pub cat_separation: Option<f64>,
    #[serde(default)]
    pub realizations: Option<usize>,
    #[serde(default)]
    pub record_stride: Option<usize>,
    /// scaled-universe mode parameters
    #[serde(default)]
    pub scaled: Option<ScaledUniverseSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CavendishBlock {
    pub pendulum: Pendulum,
    pub source: String,
    pub trajectory: SourceTrajectory,
    /// explicit emergence times to sweep [s]
    #[serde(default)]
    pub emergence_times: Vec<f64>,
    /// optionally derive one more emergence time as beta * tau_G^eq of an
    /// equilibrium configuration
    #[serde(default)]
    pub emergence_from: Option<EmergenceFrom>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default = "default_time_floor")]
    pub time_resolution_floor: f64,
    #[serde(default = "default_displacement_floor")]
    pub displacement_floor: f64,
}

fn default_stride() -> usize {
    1
}

fn default_time_floor() -> f64 {
    1e-2
}

fn default_displacement_floor() -> f64 {
    1e-12
}

/// tau_em = beta * tau_G^eq; beta is always reported, never silently
/// defaulted in outputs.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EmergenceFrom {
    pub beta: f64,
    pub mass: f64,
    pub density: f64,
    #[serde(default = "default_nucleus_density")]
    pub nucleus_density: f64,
    pub mode: EquilibriumMode,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    /// subset of criterion numbers to run (all when empty)
    #[serde(default)]
    pub criteria: Vec<usize>,
}

impl ScenarioConfig {
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn from_str_strict(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_strict(&text)
    }

    pub fn constants(&self) -> PhysicalConstants {
        self.constants.unwrap_or_default()
    }

    pub fn resolve_density(&self, name: &str, base_dir: &Path) -> Result<MassDistribution> {
        let spec = self
            .densities
            .get(name)
            .ok_or_else(|| Error::UnknownDensityRef(name.to_string()))?;
        spec.resolve(base_dir)
    }
}

/// Apply `--set key=value` overrides onto the raw JSON before the strict
/// parse; dotted keys descend into objects and are created as needed.  The
/// value text is parsed as JSON when possible, else taken as a string.
pub fn apply_overrides(
    mut value: serde_json::Value,
    overrides: &[(String, String)],
) -> Result<serde_json::Value> {
    for (key, raw) in overrides {
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::ConfigParse(format!("empty path segment in override '{key}'")));
        }
        set_path(&mut value, &parts, parsed)
            .ok_or_else(|| Error::ConfigParse(format!("override '{key}' descends through a non-object")))?;
    }
    Ok(value)
}

fn set_path(value: &mut serde_json::Value, parts: &[&str], leaf: serde_json::Value) -> Option<()> {
    let obj = value.as_object_mut()?;
    if parts.len() == 1 {
        obj.insert(parts[0].to_string(), leaf);
        return Some(());
    }
    let child = obj
        .entry(parts[0].to_string())
        .or_insert_with(|| serde_json::Value::Object(Default::default()));
    set_path(child, &parts[1..], leaf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "densities": {
                "ball": {"type": "uniform_ball", "center": [0,0,0], "radius": 0.062, "mass": 1.0}
            },
            "rate": {"density": "ball", "displacement": [1e-10, 0, 0]}
        }"#
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ScenarioConfig::from_str_strict(minimal()).unwrap();
        assert!(cfg.rate.is_some());
        let dist = cfg.resolve_density("ball", Path::new(".")).unwrap();
        assert!((dist.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_names_the_offender() {
        let bad = r#"{"densities": {}, "rte": {}}"#;
        let err = ScenarioConfig::from_str_strict(bad).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("rte"), "error should name the key: {msg}");
    }

    #[test]
    fn unknown_nested_key_rejected() {
        let bad = r#"{
            "densities": {"b": {"type": "uniform_ball", "center": [0,0,0], "radius": 1, "mass": 1, "colour": "red"}}
        }"#;
        let err = ScenarioConfig::from_str_strict(bad).unwrap_err();
        assert!(format!("{err}").contains("colour"));
    }

    #[test]
    fn unknown_density_reference() {
        let cfg = ScenarioConfig::from_str_strict(minimal()).unwrap();
        assert!(matches!(
            cfg.resolve_density("nope", Path::new(".")),
            Err(Error::UnknownDensityRef(_))
        ));
    }

    #[test]
    fn ball_requires_exactly_one_mass_spec() {
        let both = r#"{"densities": {"b": {"type": "uniform_ball", "center": [0,0,0], "radius": 1, "mass": 1, "density": 5}}}"#;
        let cfg = ScenarioConfig::from_str_strict(both).unwrap();
        assert!(cfg.resolve_density("b", Path::new(".")).is_err());
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let value: serde_json::Value = serde_json::from_str(minimal()).unwrap();
        let patched = apply_overrides(
            value,
            &[
                ("constants.newton_g".to_string(), "1e-3".to_string()),
                ("rate.displacement".to_string(), "[2e-10, 0, 0]".to_string()),
            ],
        )
        .unwrap();
        let cfg = ScenarioConfig::from_value(patched).unwrap();
        assert_eq!(cfg.constants().newton_g, 1e-3);
        assert_eq!(cfg.rate.unwrap().displacement[0], 2e-10);
    }

    #[test]
    fn override_of_unknown_key_still_fails_strict_parse() {
        let value: serde_json::Value = serde_json::from_str(minimal()).unwrap();
        let patched =
            apply_overrides(value, &[("typo_key".to_string(), "3".to_string())]).unwrap();
        assert!(ScenarioConfig::from_value(patched).is_err());
    }

    #[test]
    fn sweep_produces_log_spacing() {
        let s = SweepSpec { min: 1e-4, max: 1e-2, count: 3 };
        let pts = s.log_points().unwrap();
        assert_eq!(pts.len(), 3);
        assert!((pts[1] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn granular_defaults_use_nuclear_parameters() {
        let cfg = ScenarioConfig::from_str_strict(
            r#"{"densities": {"g": {"type": "granular_ball", "center": [0,0,0], "radius": 1e-13, "lattice_spacing": 5e-14}}}"#,
        )
        .unwrap();
        match &cfg.densities["g"] {
            DensitySpec::GranularBall { nucleus_radius, nucleus_density, .. } => {
                assert_eq!(*nucleus_radius, DEFAULT_NUCLEUS_RADIUS);
                assert_eq!(*nucleus_density, DEFAULT_NUCLEUS_DENSITY);
            }
            _ => panic!("wrong variant"),
        }
    }
}
