//! Pinhole camera model.
//!
//! Points live in the left camera frame (meters, +z along the optical axis).
//! The 2×3 projection block maps a point to pixels after division by depth.

use nalgebra::{Matrix2, Matrix2x3, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;

/// One linear inequality `row · x <= offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub row: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(row: Vector3<f64>, offset: f64) -> Self {
        Self { row, offset }
    }

    /// Signed violation; non-positive means satisfied.
    pub fn violation(&self, x: &Vector3<f64>) -> f64 {
        self.row.dot(x) - self.offset
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.violation(x) <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Row-major 2×3 intrinsic block.
    pub projection_matrix: [[f64; 3]; 2],
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default = "default_min_depth")]
    pub min_depth: f64,
}

fn default_min_depth() -> f64 {
    DEFAULT_MIN_DEPTH
}

impl CameraModel {
    pub fn new(
        projection_matrix: [[f64; 3]; 2],
        image_width: u32,
        image_height: u32,
        min_depth: f64,
    ) -> Result<Self> {
        let cam = Self {
            projection_matrix,
            image_width,
            image_height,
            min_depth,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel, zero-skew intrinsics.
    pub fn pinhole(focal: f64, cu: f64, cv: f64, width: u32, height: u32) -> Self {
        Self {
            projection_matrix: [[focal, 0.0, cu], [0.0, focal, cv]],
            image_width: width,
            image_height: height,
            min_depth: DEFAULT_MIN_DEPTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.min_depth.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "min_depth must be positive, got {}",
                self.min_depth
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        if self.projection_matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("projection matrix must be finite".into()));
        }
        if self.lateral_block().determinant().abs() < 1e-12 {
            return Err(Error::InvalidCamera(
                "projection matrix has a singular lateral block".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix2x3<f64> {
        let k = &self.projection_matrix;
        Matrix2x3::new(k[0][0], k[0][1], k[0][2], k[1][0], k[1][1], k[1][2])
    }

    fn lateral_block(&self) -> Matrix2<f64> {
        let k = &self.projection_matrix;
        Matrix2::new(k[0][0], k[0][1], k[1][0], k[1][1])
    }

    fn row(&self, i: usize) -> RowVector3<f64> {
        let r = self.projection_matrix[i];
        RowVector3::new(r[0], r[1], r[2])
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z >= self.min_depth) {
            return Err(Error::DepthTooSmall {
                depth: p.z,
                min_depth: self.min_depth,
            });
        }
        Ok(self.matrix() * p / p.z)
    }

    /// Point at depth `depth` whose projection is `pixel`.
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth >= self.min_depth) {
            return Err(Error::DepthTooSmall {
                depth,
                min_depth: self.min_depth,
            });
        }
        let k = &self.projection_matrix;
        // K [x y z]^T = z [u v]^T, solved for x, y.
        let rhs = Vector2::new(
            depth * (pixel.x - k[0][2]),
            depth * (pixel.y - k[1][2]),
        );
        let xy = self
            .lateral_block()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidCamera("singular lateral block".into()))?;
        Ok(Vector3::new(xy.x, xy.y, depth))
    }

    /// Unit viewing ray through a pixel.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        Ok(self.back_project(pixel, 1.0)?.normalize())
    }

    /// Four homogeneous half-spaces equivalent, for positive depth, to
    /// `|project(x) - project(center)| <= (bound_u, bound_v)`.
    ///
    /// Order: upper u, lower u, upper v, lower v.
    pub fn halfspace_from_pixel_bound(
        &self,
        center: &Vector3<f64>,
        bound_u: f64,
        bound_v: f64,
    ) -> Result<[HalfSpace; 4]> {
        if !(bound_u > 0.0 && bound_v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pixel bounds must be positive, got ({bound_u}, {bound_v})"
            )));
        }
        let c = self.project(center)?;
        let e3 = RowVector3::new(0.0, 0.0, 1.0);
        let ku = self.row(0);
        let kv = self.row(1);
        let upper_u = ku - (c.x + bound_u) * e3;
        let lower_u = -ku + (c.x - bound_u) * e3;
        let upper_v = kv - (c.y + bound_v) * e3;
        let lower_v = -kv + (c.y - bound_v) * e3;
        Ok([upper_u, lower_u, upper_v, lower_v].map(|r| HalfSpace::new(r.transpose(), 0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cam() -> CameraModel {
        CameraModel::pinhole(1.0, 0.0, 0.0, 640, 480)
    }

    fn random_cam(rng: &mut ChaCha8Rng) -> CameraModel {
        let f = rng.random_range(300.0..1200.0);
        let skew = rng.random_range(-2.0..2.0);
        let aspect = rng.random_range(0.9..1.1);
        CameraModel {
            projection_matrix: [
                [f, skew, rng.random_range(200.0..800.0)],
                [0.0, f * aspect, rng.random_range(200.0..600.0)],
            ],
            image_width: 1280,
            image_height: 1024,
            min_depth: 1e-3,
        }
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let px = unit_cam().project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn similar_triangles() {
        let px = unit_cam().project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(0.5, 0.0));
    }

    #[test]
    fn rejects_shallow_points() {
        let err = unit_cam().project(&Vector3::new(0.0, 0.0, 1e-4)).unwrap_err();
        assert!(matches!(err, Error::DepthTooSmall { .. }));
        assert!(unit_cam().project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn invalid_camera_rejected() {
        assert!(CameraModel::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 10, 10, 0.0).is_err());
        assert!(CameraModel::new([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]], 10, 10, 1e-3).is_err());
    }

    #[test]
    fn projection_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let cam = random_cam(&mut rng);
            let p = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.05..0.3),
            );
            let a = cam.project(&p).unwrap();
            let b = cam.project(&(2.0 * p)).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn back_projection_inverts_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cam = random_cam(&mut rng);
            let p = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.05..0.3),
            );
            let px = cam.project(&p).unwrap();
            let q = cam.back_project(&px, p.z).unwrap();
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn center_strictly_inside_its_box() {
        let cam = CameraModel::pinhole(800.0, 640.0, 512.0, 1280, 1024);
        let c = Vector3::new(0.01, -0.02, 0.1);
        for h in cam.halfspace_from_pixel_bound(&c, 3.0, 2.0).unwrap() {
            assert!(h.violation(&c) < 0.0);
        }
    }

    #[test]
    fn boundary_point_is_active() {
        let cam = CameraModel::pinhole(800.0, 640.0, 512.0, 1280, 1024);
        let c = Vector3::new(0.01, -0.02, 0.1);
        let bound_u = 3.0;
        // Pixel exactly bound_u to the right of the center pixel, same depth.
        let pc = cam.project(&c).unwrap();
        let x = cam
            .back_project(&Vector2::new(pc.x + bound_u, pc.y), c.z)
            .unwrap();
        let hs = cam.halfspace_from_pixel_bound(&c, bound_u, 2.0).unwrap();
        assert!(hs[0].violation(&x).abs() < 1e-12);
        for h in &hs[1..] {
            assert!(h.violation(&x) < 0.0);
        }
    }

    #[test]
    fn halfspaces_match_pixel_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..1000 {
            let cam = random_cam(&mut rng);
            let center = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.05..0.2),
            );
            let bu = rng.random_range(0.5..8.0);
            let bv = rng.random_range(0.5..8.0);
            let x = center
                + Vector3::new(
                    rng.random_range(-0.002..0.002),
                    rng.random_range(-0.002..0.002),
                    rng.random_range(-0.02..0.02),
                );
            let hs = cam.halfspace_from_pixel_bound(&center, bu, bv).unwrap();
            let by_rows = hs.iter().all(|h| h.violation(&x) <= 0.0);
            let d = cam.project(&x).unwrap() - cam.project(&center).unwrap();
            let slack = (bu - d.x.abs()).min(bv - d.y.abs());
            if slack.abs() < 1e-10 {
                continue;
            }
            assert_eq!(by_rows, slack >= 0.0);
            checked += 1;
        }
        assert!(checked > 990);
    }
}
