//! Synthetic stereo observations of a known thread.
//!
//! Depth errors are applied along the viewing ray so the left-image pixel is
//! unaffected, mirroring how stereo mismatches corrupt depth.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bspline::{fit_least_squares, ArcLength, BSpline, SplineConfig};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::observation::RawPoint;

const TRUTH_CONTROL_POINTS: usize = 40;
const TRUTH_FIT_SAMPLES: usize = 400;
const TABLE_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    Line {
        start: [f64; 3],
        end: [f64; 3],
    },
    /// Planar sine wave rotated in the image plane, with a depth bow.
    Sine {
        center: [f64; 3],
        length: f64,
        amplitude: f64,
        periods: f64,
        depth_amplitude: f64,
        angle_deg: f64,
    },
    /// Control points of a clamped uniform cubic spline.
    ControlPoints { points: Vec<[f64; 3]> },
}

impl CurveSpec {
    pub fn to_spline(&self) -> Result<BSpline> {
        match self {
            CurveSpec::Line { start, end } => {
                let cfg = SplineConfig::clamped_uniform(8, 3)?;
                let (a, b) = (Vector3::from(*start), Vector3::from(*end));
                let pts = cfg
                    .greville_abscissae()
                    .iter()
                    .map(|&g| a + (b - a) * g)
                    .collect();
                BSpline::new(cfg, pts)
            }
            CurveSpec::Sine {
                center,
                length,
                amplitude,
                periods,
                depth_amplitude,
                angle_deg,
            } => {
                let (sa, ca) = angle_deg.to_radians().sin_cos();
                let c = Vector3::from(*center);
                let params: Vec<f64> = (0..TRUTH_FIT_SAMPLES)
                    .map(|i| i as f64 / (TRUTH_FIT_SAMPLES - 1) as f64)
                    .collect();
                let pts: Vec<_> = params
                    .iter()
                    .map(|&t| {
                        let u = (t - 0.5) * length;
                        let w = amplitude * (2.0 * std::f64::consts::PI * periods * t).sin();
                        let dz = depth_amplitude * (std::f64::consts::PI * t).sin();
                        c + Vector3::new(u * ca - w * sa, u * sa + w * ca, dz)
                    })
                    .collect();
                let cfg = SplineConfig::cubic(TRUTH_CONTROL_POINTS)?;
                fit_least_squares(&cfg, &params, &pts, 0.0)
            }
            CurveSpec::ControlPoints { points } => {
                let cfg = SplineConfig::clamped_uniform(points.len(), 3)?;
                BSpline::new(cfg, points.iter().map(|p| Vector3::from(*p)).collect())
            }
        }
    }
}

/// Arc-fraction interval with its own depth noise and a smooth bias bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSegment {
    pub start: f64,
    pub end: f64,
    pub depth_sigma: f64,
    #[serde(default)]
    pub depth_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Baseline depth noise (meters).
    pub depth_sigma: f64,
    #[serde(default)]
    pub pixel_sigma: f64,
    #[serde(default)]
    pub segments: Vec<NoiseSegment>,
    /// Occluded arc-fraction intervals; no points are produced there.
    #[serde(default)]
    pub gaps: Vec<[f64; 2]>,
    /// Share of points replaced by ambiguous gross mismatches.
    #[serde(default)]
    pub outlier_fraction: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            depth_sigma: 0.0,
            pixel_sigma: 0.0,
            segments: Vec::new(),
            gaps: Vec::new(),
            outlier_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.into()));
        if !(self.depth_sigma >= 0.0 && self.pixel_sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1]");
        }
        for s in &self.segments {
            if !(0.0 <= s.start && s.start < s.end && s.end <= 1.0 && s.depth_sigma >= 0.0) {
                return bad("noise segment must satisfy 0 <= start < end <= 1");
            }
        }
        for g in &self.gaps {
            if !(0.0 <= g[0] && g[0] < g[1] && g[1] <= 1.0) {
                return bad("gap must satisfy 0 <= start < end <= 1");
            }
        }
        Ok(())
    }

    fn in_gap(&self, t: f64) -> bool {
        self.gaps.iter().any(|g| t > g[0] && t < g[1])
    }
}

/// Reference curve with precomputed dense samples for distance queries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spline: BSpline,
    polyline: Vec<Vector3<f64>>,
}

impl GroundTruth {
    pub fn new(spline: BSpline) -> Self {
        let polyline = (0..=TABLE_SIZE)
            .map(|i| spline.eval(i as f64 / TABLE_SIZE as f64))
            .collect();
        Self { spline, polyline }
    }

    /// Distance from `p` to the curve (dense polyline approximation).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.closest_point(p) - p).norm()
    }

    /// Nearest point on the dense polyline.
    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut best = (f64::INFINITY, self.polyline[0]);
        for w in self.polyline.windows(2) {
            let q = closest_on_segment(p, &w[0], &w[1]);
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    pub fn polyline(&self) -> &[Vector3<f64>] {
        &self.polyline
    }

    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    a + ab * t
}

pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (closest_on_segment(p, a, b) - p).norm()
}

/// Parameters of `spline` at the given arc-length fractions.
pub fn params_at_arc_fractions(spline: &BSpline, fractions: &[f64]) -> Result<Vec<f64>> {
    let al = ArcLength::new(spline, 6)?;
    let grid: Vec<f64> = (0..=TABLE_SIZE).map(|i| i as f64 / TABLE_SIZE as f64).collect();
    let cum = al.cumulative(&grid)?;
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::InvalidSpline("curve has zero length".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            let target = f.clamp(0.0, 1.0) * total;
            let k = cum.partition_point(|&c| c < target).clamp(1, TABLE_SIZE);
            let (c0, c1) = (cum[k - 1], cum[k]);
            let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
            let mut s = grid[k - 1] + w * (grid[k] - grid[k - 1]);
            for _ in 0..3 {
                let speed = al.speed(s);
                if speed <= 0.0 {
                    break;
                }
                let err = cum[k - 1] + al.between(grid[k - 1], s)? - target;
                s = (s - err / speed).clamp(grid[k - 1], grid[k]);
            }
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedScene {
    pub points: Vec<RawPoint>,
    pub truth: GroundTruth,
    /// Arc-length fraction of the truth point behind each raw point.
    pub arc_fractions: Vec<f64>,
    /// Whether each raw point was generated as a gross outlier.
    pub is_outlier: Vec<bool>,
}

/// `n` points at equal arc length along the truth curve, corrupted per
/// `noise`. Deterministic in `seed`.
pub fn synthesize_scene(
    truth: &CurveSpec,
    noise: &NoiseSpec,
    cam: &CameraModel,
    n: usize,
    seed: u64,
) -> Result<SynthesizedScene> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 samples, got {n}"
        )));
    }
    noise.validate()?;
    let spline = truth.to_spline()?;
    let truth = GroundTruth::new(spline);
    if let Some(p) = truth.polyline().iter().find(|p| !(p.z >= cam.min_depth)) {
        return Err(Error::CurveBehindCamera { depth: p.z });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let signs: Vec<f64> = noise
        .segments
        .iter()
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let fractions: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let params = params_at_arc_fractions(&truth.spline, &fractions)?;

    let mut points = Vec::with_capacity(n);
    let mut arc_fractions = Vec::with_capacity(n);
    let mut is_outlier = Vec::with_capacity(n);
    for (&t, &s) in fractions.iter().zip(&params) {
        // Every sample consumes the same draws so gaps do not shift the stream.
        let z_noise: f64 = unit.sample(&mut rng);
        let du: f64 = unit.sample(&mut rng);
        let dv: f64 = unit.sample(&mut rng);
        let outlier_draw: f64 = rng.random();
        let gross: f64 = rng.random_range(-1.0..1.0);
        let cost_best: f64 = rng.random_range(0.5..1.5);
        let peak: f64 = rng.random_range(0.2..1.0);
        if noise.in_gap(t) {
            continue;
        }
        let p = truth.spline.eval(s);
        let mut sigma = noise.depth_sigma;
        let mut bias = 0.0;
        for (seg, sign) in noise.segments.iter().zip(&signs) {
            if t >= seg.start && t <= seg.end {
                sigma = sigma.max(seg.depth_sigma);
                let phase = (t - seg.start) / (seg.end - seg.start);
                bias += sign * seg.depth_bias * (std::f64::consts::PI * phase).sin();
            }
        }
        let outlier = outlier_draw < noise.outlier_fraction;
        let mut depth = p.z + bias + sigma * z_noise;
        if outlier {
            depth += 0.01 * gross;
        }
        let pixel = cam.project(&p)? + noise.pixel_sigma * Vector2::new(du, dv);
        let depth = depth.max(cam.min_depth);
        let position = if noise.pixel_sigma == 0.0 && depth == p.z {
            p
        } else {
            cam.back_project(&pixel, depth)?
        };
        let cost_second = if outlier {
            cost_best
        } else {
            cost_best * (1.0 + peak)
        };
        points.push(RawPoint {
            position,
            cost_best,
            cost_second,
            pixel,
        });
        arc_fractions.push(t);
        is_outlier.push(outlier);
    }
    Ok(SynthesizedScene {
        points,
        truth,
        arc_fractions,
        is_outlier,
    })
}
