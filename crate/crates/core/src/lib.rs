//! Thread reconstruction from noisy stereo points and capture-slide-grasp
//! planning.
//!
//! The pipeline turns raw stereo matches into ordered [`Observation`]s,
//! wraps each in a [`ReliabilityRegion`], fits a minimum-variation cubic
//! B-spline through the regions by quadratic programming, and plans grasps
//! that capture the thread where the reconstruction is trustworthy.

pub mod benchmark;
pub mod bspline;
pub mod camera;
pub mod error;
pub mod grasp;
pub mod observation;
pub mod qp;
pub mod quadrature;
pub mod reconstruct;
pub mod reliability;
pub mod scene;
pub mod suite;

pub use bspline::{BSpline, SplineConfig};
pub use camera::{CameraModel, HalfSpace};
pub use error::{Error, Result};
pub use grasp::{CsgPlan, GraspConfig, GraspOutcome};
pub use observation::{Observation, OutlierParams, RawPoint};
pub use qp::{LcqpProblem, LcqpSolution, SolverSettings};
pub use reconstruct::{ReconstructConfig, ReconstructionResult};
pub use reliability::{ReliabilityParams, ReliabilityRegion};
pub use scene::{ResultDocument, ScenarioTag, SceneFile, ToolConfig};
