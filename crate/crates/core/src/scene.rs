//! Versioned JSON scene, configuration and result documents.

use std::fmt::Write as _;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::grasp::{confidence_profile, CsgPlan, GraspConfig, GraspOutcome};
use crate::observation::synth::{synthesize_scene, CurveSpec, GroundTruth, NoiseSpec};
use crate::observation::{observe, Observation, OutlierParams, RawPoint, DEFAULT_CLUSTER_RADIUS_PX};
use crate::qp::SolverSettings;
use crate::reconstruct::{ReconstructConfig, ReconstructionResult};
use crate::reliability::ReliabilityParams;

pub const SCHEMA_VERSION: u32 = 1;

pub fn tool_version() -> String {
    format!("threadfit {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioTag {
    Easy,
    Medium,
    Hard,
    Singularity,
    Occlusion,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 5] = [
        ScenarioTag::Easy,
        ScenarioTag::Medium,
        ScenarioTag::Hard,
        ScenarioTag::Singularity,
        ScenarioTag::Occlusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioTag::Easy => "Easy",
            ScenarioTag::Medium => "Medium",
            ScenarioTag::Hard => "Hard",
            ScenarioTag::Singularity => "Singularity",
            ScenarioTag::Occlusion => "Occlusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMetadata {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ScenarioTag>,
}

/// Recipe that regenerated the raw points; lets a benchmark re-draw noise
/// under other seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthesis {
    pub curve: CurveSpec,
    pub noise: NoiseSpec,
    pub samples: usize,
    pub seed: u64,
}

fn default_cluster_radius() -> f64 {
    DEFAULT_CLUSTER_RADIUS_PX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    pub metadata: SceneMetadata,
    pub camera: CameraModel,
    #[serde(default)]
    pub reliability: ReliabilityParams,
    #[serde(default)]
    pub outliers: OutlierParams,
    #[serde(default = "default_cluster_radius")]
    pub cluster_radius_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_points: Option<Vec<RawPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<Observation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<CurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<Synthesis>,
}

impl SceneFile {
    /// Scene with raw points drawn from `synthesis`; the curve doubles as
    /// ground truth.
    pub fn synthesize(
        metadata: SceneMetadata,
        camera: CameraModel,
        synthesis: Synthesis,
    ) -> Result<Self> {
        let scene = synthesize_scene(
            &synthesis.curve,
            &synthesis.noise,
            &camera,
            synthesis.samples,
            synthesis.seed,
        )?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            metadata,
            camera,
            reliability: ReliabilityParams::default(),
            outliers: OutlierParams::default(),
            cluster_radius_px: DEFAULT_CLUSTER_RADIUS_PX,
            raw_points: Some(scene.points),
            observations: None,
            ground_truth: Some(synthesis.curve.clone()),
            synthesis: Some(synthesis),
        })
    }

    /// Same scene with noise redrawn under `seed`. Scenes without a recipe
    /// are returned unchanged.
    pub fn reseeded(&self, seed: u64) -> Result<Self> {
        match &self.synthesis {
            None => Ok(self.clone()),
            Some(syn) => {
                let mut out = Self::synthesize(
                    self.metadata.clone(),
                    self.camera.clone(),
                    Synthesis {
                        seed,
                        ..syn.clone()
                    },
                )?;
                out.reliability = self.reliability.clone();
                out.outliers = self.outliers;
                out.cluster_radius_px = self.cluster_radius_px;
                out.ground_truth = self.ground_truth.clone();
                Ok(out)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.camera.validate()?;
        self.reliability.validate()?;
        self.outliers.validate()?;
        if !(self.cluster_radius_px >= 0.0) {
            return Err(Error::Parse("cluster_radius_px: must be non-negative".into()));
        }
        match (&self.raw_points, &self.observations) {
            (Some(_), None) => {}
            (None, Some(obs)) => {
                if let Some((k, _)) = obs.iter().enumerate().find(|(k, o)| o.index != *k) {
                    return Err(Error::Parse(format!(
                        "observations[{k}].index: expected {k}"
                    )));
                }
            }
            _ => {
                return Err(Error::Parse(
                    "exactly one of raw_points / observations must be present".into(),
                ))
            }
        }
        if let Some(syn) = &self.synthesis {
            syn.noise.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
            .map_err(|e| with_context(e, path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_json())
    }

    /// Ordered observations, filtering and clustering raw points if needed.
    pub fn observations(&self) -> Result<Vec<Observation>> {
        match (&self.raw_points, &self.observations) {
            (_, Some(obs)) => Ok(obs.clone()),
            (Some(raw), None) => observe(raw, &self.outliers, self.cluster_radius_px),
            (None, None) => Err(Error::Parse("scene has no points".into())),
        }
    }

    pub fn truth(&self) -> Result<Option<GroundTruth>> {
        self.ground_truth
            .as_ref()
            .map(|c| c.to_spline().map(GroundTruth::new))
            .transpose()
    }
}

/// Tool configuration. Every section is optional in files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub reconstruct: ReconstructConfig,
    pub solver: SolverSettings,
    pub grasp: GraspConfig,
    /// Overrides the scene's reliability parameters when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityParams>,
}

impl ToolConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?).map_err(|e| with_context(e, path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub goal: f64,
    pub csg: CsgPlan,
    pub direct: CsgPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub goal: f64,
    pub csg: GraspOutcome,
    pub direct: GraspOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub scene: SceneMetadata,
    pub config: ToolConfig,
    pub camera: CameraModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<CurveSpec>,
    pub reconstruction: ReconstructionResult,
    #[serde(default)]
    pub plans: Vec<PlanRecord>,
    #[serde(default)]
    pub simulations: Vec<SimulationRecord>,
}

impl ResultDocument {
    pub fn new(scene: &SceneFile, config: &ToolConfig, reconstruction: ReconstructionResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: tool_version(),
            scene: scene.metadata.clone(),
            config: config.clone(),
            camera: scene.camera.clone(),
            ground_truth: scene.ground_truth.clone(),
            reconstruction,
            plans: Vec::new(),
            simulations: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?).map_err(|e| with_context(e, path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_json())
    }
}

/// Sampled curve as `s,x,y,z,confidence` rows.
pub fn plot_csv(result: &ReconstructionResult, samples: usize, cfg: &GraspConfig) -> String {
    let mut out = String::from("s,x,y,z,confidence\n");
    for p in confidence_profile(result, samples, cfg) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.s, p.position.x, p.position.y, p.position.z, p.confidence
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document types serialize");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn with_context(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::synth::NoiseSegment;

    fn synth_scene() -> SceneFile {
        SceneFile::synthesize(
            SceneMetadata {
                name: "wave".into(),
                tag: Some(ScenarioTag::Medium),
            },
            CameraModel::pinhole(800.0, 640.0, 512.0, 1280, 1024),
            Synthesis {
                curve: CurveSpec::Sine {
                    center: [0.0, 0.0, 0.1],
                    length: 0.06,
                    amplitude: 0.006,
                    periods: 1.0,
                    depth_amplitude: 0.005,
                    angle_deg: 10.0,
                },
                noise: NoiseSpec {
                    depth_sigma: 2e-4,
                    pixel_sigma: 0.2,
                    segments: vec![NoiseSegment {
                        start: 0.3,
                        end: 0.5,
                        depth_sigma: 1e-3,
                        depth_bias: 2e-3,
                    }],
                    gaps: vec![],
                    outlier_fraction: 0.0,
                },
                samples: 20,
                seed: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let scene = synth_scene();
        let back = SceneFile::from_json(&scene.to_json()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn reseeding_changes_noise_only() {
        let scene = synth_scene();
        let same = scene.reseeded(3).unwrap();
        assert_eq!(same, scene);
        let other = scene.reseeded(4).unwrap();
        assert_ne!(other.raw_points, scene.raw_points);
        assert_eq!(other.ground_truth, scene.ground_truth);
    }

    #[test]
    fn missing_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&synth_scene().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("camera");
        let err = SceneFile::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("camera")), "{err}");
    }

    #[test]
    fn both_point_kinds_rejected() {
        let mut scene = synth_scene();
        scene.observations = Some(scene.observations().unwrap());
        assert!(matches!(scene.validate(), Err(Error::Parse(_))));
        scene.raw_points = None;
        scene.validate().unwrap();
        scene.observations = None;
        assert!(matches!(scene.validate(), Err(Error::Parse(_))));
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ToolConfig::from_json(r#"{"reconstruct": {"max_iters": 3}}"#).unwrap();
        assert_eq!(cfg.reconstruct.max_iters, 3);
        assert_eq!(cfg.reconstruct.control_points, 20);
        assert_eq!(cfg.grasp, GraspConfig::default());
        assert!(ToolConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn result_document_round_trip() {
        let scene = synth_scene();
        let cfg = ToolConfig::default();
        let obs = scene.observations().unwrap();
        let result = crate::reconstruct::reconstruct(
            &obs,
            &scene.camera,
            &scene.reliability,
            &cfg.reconstruct,
            &cfg.solver,
        )
        .unwrap();
        let mut doc = ResultDocument::new(&scene, &cfg, result);
        let plan = crate::grasp::plan(&doc.reconstruction, 0.4, &cfg.grasp).unwrap();
        let direct = crate::grasp::direct_plan(&doc.reconstruction, 0.4, &cfg.grasp).unwrap();
        doc.plans.push(PlanRecord {
            goal: 0.4,
            csg: plan,
            direct,
        });
        let text = doc.to_json();
        let back = ResultDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn plot_csv_shape() {
        let scene = synth_scene();
        let cfg = ToolConfig::default();
        let result = crate::reconstruct::reconstruct(
            &scene.observations().unwrap(),
            &scene.camera,
            &scene.reliability,
            &cfg.reconstruct,
            &cfg.solver,
        )
        .unwrap();
        let csv = plot_csv(&result, 50, &cfg.grasp);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "s,x,y,z,confidence");
        assert_eq!(lines.len(), 51);
        for line in &lines[1..] {
            let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals.len(), 5);
            assert!((0.0..=1.0).contains(&vals[4]));
        }
    }
}
