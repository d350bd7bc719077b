//! Capture-slide-grasp planning on a reconstructed thread.
//!
//! The gripper first encloses the thread at a capture parameter, slides
//! along the reconstruction over evenly spaced grid parameters, and closes
//! at the goal. The capture point maximizes
//! `P(capture) * slide_prob^(w - 1)` where `w` counts waypoints.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::synth::GroundTruth;
use crate::reconstruct::ReconstructionResult;

/// Below this angle between tangent and optical axis the approach axis is
/// taken from the camera x direction instead.
const SINGULAR_ANGLE_DEG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspConfig {
    pub slide_prob: f64,
    pub sigma_capture: f64,
    pub grid_size: usize,
    pub jaw_aperture: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            slide_prob: 0.99,
            sigma_capture: 0.002,
            grid_size: 100,
            jaw_aperture: 0.005,
        }
    }
}

impl GraspConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slide_prob > 0.0 && self.slide_prob <= 1.0) {
            return Err(Error::InvalidParameter("slide_prob must lie in (0, 1]".into()));
        }
        if !(self.sigma_capture > 0.0) {
            return Err(Error::InvalidParameter("sigma_capture must be positive".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidParameter("grid_size must be >= 2".into()));
        }
        if !(self.jaw_aperture > 0.0) {
            return Err(Error::InvalidParameter("jaw_aperture must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_size)
            .map(|i| i as f64 / (self.grid_size - 1) as f64)
            .collect()
    }

    fn grid_index(&self, s: f64) -> usize {
        (s * (self.grid_size - 1) as f64).round() as usize
    }
}

/// Depth bound at `s`, interpolated linearly between region parameters and
/// held constant beyond the ends.
pub fn interpolated_eps_z(result: &ReconstructionResult, s: f64) -> f64 {
    let params = result.params.values();
    let eps: Vec<f64> = result.regions.iter().map(|r| r.eps_z).collect();
    if s <= params[0] {
        return eps[0];
    }
    let k = params.partition_point(|&p| p <= s);
    if k >= params.len() {
        return *eps.last().unwrap();
    }
    let (p0, p1) = (params[k - 1], params[k]);
    let w = (s - p0) / (p1 - p0);
    eps[k - 1] + w * (eps[k] - eps[k - 1])
}

pub fn capture_probability(result: &ReconstructionResult, s: f64, cfg: &GraspConfig) -> f64 {
    let e = interpolated_eps_z(result, s.clamp(0.0, 1.0));
    (-e * e / (2.0 * cfg.sigma_capture * cfg.sigma_capture)).exp()
}

pub fn trajectory_probability(capture_p: f64, w: usize, cfg: &GraspConfig) -> f64 {
    debug_assert!(w >= 1);
    capture_p * cfg.slide_prob.powi(w.saturating_sub(1) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub param: f64,
    pub position: Vector3<f64>,
    /// Columns: jaw rotation axis (curve tangent), closing direction, approach.
    pub orientation: Matrix3<f64>,
}

impl GraspPose {
    /// Unit quaternion `[x, y, z, w]`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.orientation);
        [q.i, q.j, q.k, q.w]
    }
}

/// Gripper frame whose first column is the unit tangent and whose approach
/// axis is the camera's -z projected off the tangent.
pub fn gripper_frame(tangent: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = tangent.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateVelocity { s: f64::NAN });
    }
    let jaw = tangent / norm;
    let optical = Vector3::z();
    let reference = if jaw.dot(&optical).abs() > SINGULAR_ANGLE_DEG.to_radians().cos() {
        Vector3::x()
    } else {
        -optical
    };
    let approach = (reference - jaw * jaw.dot(&reference)).normalize();
    let closing = approach.cross(&jaw);
    Ok(Matrix3::from_columns(&[jaw, closing, approach]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsgPlan {
    pub goal_param: f64,
    pub capture_param: f64,
    pub waypoint_params: Vec<f64>,
    pub waypoint_poses: Vec<GraspPose>,
    pub capture_probability: f64,
    pub success_probability: f64,
}

impl CsgPlan {
    pub fn waypoints(&self) -> usize {
        self.waypoint_params.len()
    }

    pub fn is_direct(&self) -> bool {
        self.waypoint_params.len() == 1
    }
}

fn build_plan(
    result: &ReconstructionResult,
    capture: usize,
    goal: usize,
    cfg: &GraspConfig,
) -> Result<CsgPlan> {
    let grid = cfg.grid();
    let indices: Vec<usize> = if capture <= goal {
        (capture..=goal).collect()
    } else {
        (goal..=capture).rev().collect()
    };
    let velocity = result.spline.derivative()?;
    let poses = indices
        .iter()
        .map(|&i| {
            let s = grid[i];
            Ok(GraspPose {
                param: s,
                position: result.spline.eval(s),
                orientation: gripper_frame(&velocity.eval(s))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let capture_p = capture_probability(result, grid[capture], cfg);
    Ok(CsgPlan {
        goal_param: grid[goal],
        capture_param: grid[capture],
        waypoint_params: indices.iter().map(|&i| grid[i]).collect(),
        waypoint_poses: poses,
        capture_probability: capture_p,
        success_probability: trajectory_probability(capture_p, indices.len(), cfg),
    })
}

fn goal_index(s_goal: f64, cfg: &GraspConfig) -> Result<usize> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&s_goal) {
        return Err(Error::InvalidParameter(format!(
            "goal parameter {s_goal} outside [0, 1]"
        )));
    }
    Ok(cfg.grid_index(s_goal))
}

/// Best capture point over the whole grid; ties favor the shorter slide,
/// then the smaller parameter.
pub fn plan(result: &ReconstructionResult, s_goal: f64, cfg: &GraspConfig) -> Result<CsgPlan> {
    let goal = goal_index(s_goal, cfg)?;
    let grid = cfg.grid();
    let mut best = (goal, f64::NEG_INFINITY, usize::MAX);
    for (i, &s) in grid.iter().enumerate() {
        let w = i.abs_diff(goal) + 1;
        let p = trajectory_probability(capture_probability(result, s, cfg), w, cfg);
        if p > best.1 || (p == best.1 && w < best.2) {
            best = (i, p, w);
        }
    }
    build_plan(result, best.0, goal, cfg)
}

/// Grasp straight at the goal (single waypoint).
pub fn direct_plan(result: &ReconstructionResult, s_goal: f64, cfg: &GraspConfig) -> Result<CsgPlan> {
    let goal = goal_index(s_goal, cfg)?;
    build_plan(result, goal, goal, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraspOutcome {
    Success,
    CaptureMiss,
    SlipDuringSlide,
}

/// Replays a plan against the true thread.
///
/// Capture succeeds when the true thread passes within half the jaw
/// aperture of the capture waypoint. Once enclosed, the thread is carried
/// by the jaws, so only the change of the gripper-to-thread offset between
/// consecutive waypoints matters: it slips out when that change exceeds half
/// the aperture.
pub fn simulate_grasp(plan: &CsgPlan, truth: &GroundTruth, cfg: &GraspConfig) -> GraspOutcome {
    let reach = 0.5 * cfg.jaw_aperture;
    let offsets: Vec<Vector3<f64>> = plan
        .waypoint_poses
        .iter()
        .map(|pose| truth.closest_point(&pose.position) - pose.position)
        .collect();
    if offsets.is_empty() || offsets[0].norm() > reach {
        return GraspOutcome::CaptureMiss;
    }
    if offsets.windows(2).any(|w| (w[1] - w[0]).norm() > reach) {
        return GraspOutcome::SlipDuringSlide;
    }
    GraspOutcome::Success
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSample {
    pub s: f64,
    pub position: Vector3<f64>,
    pub confidence: f64,
}

/// Curve samples with capture probability as a confidence score in [0, 1].
pub fn confidence_profile(
    result: &ReconstructionResult,
    samples: usize,
    cfg: &GraspConfig,
) -> Vec<PlotSample> {
    let k = samples.max(2);
    (0..k)
        .map(|i| {
            let s = i as f64 / (k - 1) as f64;
            PlotSample {
                s,
                position: result.spline.eval(s),
                confidence: capture_probability(result, s, cfg),
            }
        })
        .collect()
}
