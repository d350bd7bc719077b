//! Default synthetic scenarios, one per [`ScenarioTag`].
//!
//! A 60 mm thread about 10 cm in front of a 1280×1024 camera, sampled at
//! 20 points. Difficulty comes from where and how badly depth is corrupted.

use crate::camera::CameraModel;
use crate::error::Result;
use crate::observation::synth::{CurveSpec, NoiseSegment, NoiseSpec};
use crate::scene::{SceneFile, SceneMetadata, ScenarioTag, Synthesis};

pub const DEFAULT_SAMPLES: usize = 20;

pub fn default_camera() -> CameraModel {
    CameraModel::pinhole(800.0, 640.0, 512.0, 1280, 1024)
}

fn sine(amplitude: f64, periods: f64, depth_amplitude: f64, angle_deg: f64) -> CurveSpec {
    CurveSpec::Sine {
        center: [0.0, 0.0, 0.1],
        length: 0.06,
        amplitude,
        periods,
        depth_amplitude,
        angle_deg,
    }
}

fn noise(depth_sigma: f64, segments: Vec<NoiseSegment>, gaps: Vec<[f64; 2]>) -> NoiseSpec {
    NoiseSpec {
        depth_sigma,
        pixel_sigma: 0.2,
        segments,
        gaps,
        outlier_fraction: 0.0,
    }
}

fn segment(start: f64, end: f64, depth_sigma: f64, depth_bias: f64) -> NoiseSegment {
    NoiseSegment {
        start,
        end,
        depth_sigma,
        depth_bias,
    }
}

/// Curve and noise recipe for a scenario.
pub fn recipe(tag: ScenarioTag) -> (CurveSpec, NoiseSpec) {
    match tag {
        ScenarioTag::Easy => (sine(0.004, 1.0, 0.004, 0.0), noise(2e-4, vec![], vec![])),
        ScenarioTag::Medium => (
            sine(0.008, 1.5, 0.006, 15.0),
            NoiseSpec {
                outlier_fraction: 0.05,
                ..noise(3e-4, vec![segment(0.55, 0.8, 1.5e-3, 3e-3)], vec![])
            },
        ),
        // A long stretch along the epipolar direction: depth is both noisy
        // and biased there.
        ScenarioTag::Hard => (
            sine(0.006, 1.0, 0.004, -10.0),
            noise(3e-4, vec![segment(0.15, 0.6, 2.5e-3, 6e-3)], vec![]),
        ),
        // The middle of the thread turns toward the camera.
        ScenarioTag::Singularity => (
            CurveSpec::ControlPoints {
                points: vec![
                    [-0.030, 0.000, 0.100],
                    [-0.020, 0.002, 0.100],
                    [-0.010, 0.004, 0.100],
                    [-0.004, 0.005, 0.103],
                    [-0.002, 0.005, 0.110],
                    [0.000, 0.005, 0.117],
                    [0.004, 0.005, 0.121],
                    [0.012, 0.004, 0.121],
                    [0.022, 0.002, 0.120],
                    [0.030, 0.000, 0.120],
                ],
            },
            noise(3e-4, vec![segment(0.3, 0.55, 1.5e-3, 2e-3)], vec![]),
        ),
        ScenarioTag::Occlusion => (
            sine(0.006, 1.0, 0.004, 5.0),
            noise(3e-4, vec![segment(0.3, 0.4, 1e-3, 1e-3)], vec![[0.4, 0.55]]),
        ),
    }
}

pub fn scenario(tag: ScenarioTag, seed: u64) -> Result<SceneFile> {
    let (curve, noise) = recipe(tag);
    SceneFile::synthesize(
        SceneMetadata {
            name: tag.name().to_lowercase(),
            tag: Some(tag),
        },
        default_camera(),
        Synthesis {
            curve,
            noise,
            samples: DEFAULT_SAMPLES,
            seed,
        },
    )
}

pub fn default_suite(seed: u64) -> Result<Vec<SceneFile>> {
    ScenarioTag::ALL.iter().map(|&t| scenario(t, seed)).collect()
}

/// The default suite with all noise removed.
pub fn noiseless_suite() -> Result<Vec<SceneFile>> {
    ScenarioTag::ALL
        .iter()
        .map(|&tag| {
            let (curve, noise) = recipe(tag);
            SceneFile::synthesize(
                SceneMetadata {
                    name: format!("{}-clean", tag.name().to_lowercase()),
                    tag: Some(tag),
                },
                default_camera(),
                Synthesis {
                    curve,
                    noise: NoiseSpec {
                        gaps: noise.gaps,
                        ..NoiseSpec::none()
                    },
                    samples: DEFAULT_SAMPLES,
                    seed: 0,
                },
            )
        })
        .collect()
}
