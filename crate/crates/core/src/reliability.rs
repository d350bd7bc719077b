//! Per-observation reliability regions: a pixel box around the projected
//! observation plus a depth interval, both expressed as half-spaces.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, HalfSpace};
use crate::error::{Error, Result};
use crate::observation::Observation;

/// Depth bounds are 1.5 times the local line-fit residual.
pub const DEPTH_RESIDUAL_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityParams {
    pub eps_u: f64,
    pub eps_v: f64,
    pub window: usize,
    pub eps_z_floor: f64,
}

impl Default for ReliabilityParams {
    fn default() -> Self {
        Self {
            eps_u: 3.0,
            eps_v: 3.0,
            window: 7,
            eps_z_floor: 5e-4,
        }
    }
}

impl ReliabilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_u > 0.0 && self.eps_v > 0.0) {
            return Err(Error::InvalidParameter("pixel bounds must be positive".into()));
        }
        if self.window < 3 {
            return Err(Error::InvalidParameter("depth window must be >= 3".into()));
        }
        if !(self.eps_z_floor > 0.0) {
            return Err(Error::InvalidParameter("eps_z_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRegion {
    pub center: Vector3<f64>,
    pub eps_u: f64,
    pub eps_v: f64,
    pub eps_z: f64,
    halfspaces: Vec<HalfSpace>,
}

impl ReliabilityRegion {
    /// Rows: upper u, lower u, upper v, lower v, upper z, lower z.
    ///
    /// The lower depth bound never drops below the camera's minimum depth,
    /// which keeps every member in front of the camera.
    pub fn new(
        cam: &CameraModel,
        center: Vector3<f64>,
        eps_u: f64,
        eps_v: f64,
        eps_z: f64,
    ) -> Result<Self> {
        if !(eps_z > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "depth bound must be positive, got {eps_z}"
            )));
        }
        let pixel = cam.halfspace_from_pixel_bound(&center, eps_u, eps_v)?;
        let ez = Vector3::z();
        let mut halfspaces = pixel.to_vec();
        halfspaces.push(HalfSpace::new(ez, center.z + eps_z));
        halfspaces.push(HalfSpace::new(-ez, -(center.z - eps_z).max(cam.min_depth)));
        Ok(Self {
            center,
            eps_u,
            eps_v,
            eps_z,
            halfspaces,
        })
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    /// Largest half-space violation; non-positive means `x` is a member.
    pub fn max_violation(&self, x: &Vector3<f64>) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.violation(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.max_violation(x) <= 0.0
    }

    /// Membership evaluated directly through the projection, without the
    /// linearized rows. Returns the smallest slack (negative when outside).
    pub fn direct_slack(&self, cam: &CameraModel, x: &Vector3<f64>) -> Result<f64> {
        let lower_z = (self.center.z - self.eps_z).max(cam.min_depth);
        let depth_slack = (self.center.z + self.eps_z - x.z).min(x.z - lower_z);
        if x.z <= 0.0 {
            return Ok(depth_slack.min(x.z));
        }
        // Points between 0 and min_depth still project; use the raw pinhole map.
        let k = cam.matrix();
        let d = k * x / x.z - k * self.center / self.center.z;
        Ok((self.eps_u - d.x.abs()).min(self.eps_v - d.y.abs()).min(depth_slack))
    }

    /// Same region with a different depth bound.
    pub fn with_eps_z(&self, cam: &CameraModel, eps_z: f64) -> Result<Self> {
        Self::new(cam, self.center, self.eps_u, self.eps_v, eps_z)
    }

    /// Diagonal of the box's bounding cuboid, using the lateral extent at
    /// the far depth bound.
    pub fn diagonal(&self, cam: &CameraModel) -> f64 {
        let k = cam.matrix();
        let far = self.center.z + self.eps_z;
        // Lateral half-widths per unit pixel at depth `far`, via the inverse
        // of the 2x2 lateral block.
        let lateral = nalgebra::Matrix2::new(k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
        let inv = lateral.try_inverse().unwrap_or_else(nalgebra::Matrix2::zeros);
        let du = inv * nalgebra::Vector2::new(self.eps_u, 0.0) * far;
        let dv = inv * nalgebra::Vector2::new(0.0, self.eps_v) * far;
        let wx = 2.0 * (du.x.abs() + dv.x.abs());
        let wy = 2.0 * (du.y.abs() + dv.y.abs());
        let wz = 2.0 * self.eps_z;
        (wx * wx + wy * wy + wz * wz).sqrt()
    }
}

/// Depth bound from the residual of a least-squares line (depth against
/// observation index) over a window centered on `j`, truncated at the ends.
pub fn depth_bound(
    observations: &[Observation],
    j: usize,
    window: usize,
    eps_z_floor: f64,
) -> Result<f64> {
    let n = observations.len();
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, len: n });
    }
    if window < 3 {
        return Err(Error::InvalidParameter("depth window must be >= 3".into()));
    }
    let half = window / 2;
    let lo = j.saturating_sub(half);
    let hi = (j + half).min(n - 1);
    let count = (hi - lo + 1) as f64;
    if hi == lo {
        return Ok(eps_z_floor);
    }
    let xs = (lo..=hi).map(|i| i as f64);
    let mean_x = xs.clone().sum::<f64>() / count;
    let mean_z = observations[lo..=hi].iter().map(|o| o.position.z).sum::<f64>() / count;
    let (mut sxz, mut sxx) = (0.0, 0.0);
    for (x, o) in xs.zip(&observations[lo..=hi]) {
        sxz += (x - mean_x) * (o.position.z - mean_z);
        sxx += (x - mean_x) * (x - mean_x);
    }
    let slope = sxz / sxx;
    let fitted = mean_z + slope * (j as f64 - mean_x);
    let residual = (fitted - observations[j].position.z).abs();
    Ok((DEPTH_RESIDUAL_SCALE * residual).max(eps_z_floor))
}

pub fn build_regions(
    observations: &[Observation],
    cam: &CameraModel,
    params: &ReliabilityParams,
) -> Result<Vec<ReliabilityRegion>> {
    params.validate()?;
    if observations.len() < params.window.min(3) {
        return Err(Error::TooFewObservations {
            needed: 3,
            got: observations.len(),
        });
    }
    (0..observations.len())
        .map(|j| {
            let eps_z = depth_bound(observations, j, params.window, params.eps_z_floor)?;
            ReliabilityRegion::new(
                cam,
                observations[j].position,
                params.eps_u,
                params.eps_v,
                eps_z,
            )
        })
        .collect()
}
