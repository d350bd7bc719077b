//! Iterative reconstruction: alternate a constrained jerk-minimizing QP at
//! fixed curve parameters with an arc-length reparameterization of those
//! parameters, until the spline runs at near-constant speed.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::bspline::{
    build_mvc_matrix, constraint_rows, fit_least_squares, ArcLength, BSpline, SplineConfig,
    DEFAULT_QUAD_ORDER,
};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::observation::Observation;
use crate::qp::{solve, LcqpProblem, SolveStatus, SolverSettings, WarmStart};
use crate::reliability::{build_regions, ReliabilityParams, ReliabilityRegion};

pub const MIN_OBSERVATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    values: Vec<f64>,
}

impl ParamSet {
    /// Strictly increasing values with `values[0] = 0` and `values[n-1] = 1`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter("need at least two parameters".into()));
        }
        if values[0] != 0.0 || *values.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter("parameters must start at 0 and end at 1".into()));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("parameters must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalized cumulative chord length.
pub fn init_params(observations: &[Observation]) -> Result<ParamSet> {
    if observations.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: observations.len(),
        });
    }
    let mut acc = vec![0.0];
    for (i, w) in observations.windows(2).enumerate() {
        let chord = (w[1].position - w[0].position).norm();
        if chord == 0.0 {
            return Err(Error::DuplicateObservations { index: i, next: i + 1 });
        }
        acc.push(acc[i] + chord);
    }
    let total = *acc.last().unwrap();
    let n = acc.len();
    let mut values: Vec<f64> = acc.iter().map(|a| a / total).collect();
    values[n - 1] = 1.0;
    ParamSet::new(values)
}

/// Arc-length reparameterization: `s_j ← L(0, s_j) / L(0, 1)`.
pub fn update_params(params: &ParamSet, spline: &BSpline, quad_order: usize) -> Result<ParamSet> {
    let al = ArcLength::new(spline, quad_order)?;
    let cum = al.cumulative(params.values())?;
    let total = cum.last().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(Error::DegenerateVelocity { s: 0.0 });
    }
    let n = cum.len();
    let mut values: Vec<f64> = cum.iter().map(|c| c / total).collect();
    values[0] = 0.0;
    values[n - 1] = 1.0;
    ParamSet::new(values)
}

/// Coefficient of variation of ‖B'(s)‖ on `samples` evenly spaced parameters.
pub fn speed_cv(spline: &BSpline, samples: usize) -> Result<f64> {
    let vel = spline.derivative()?;
    let k = samples.max(2);
    let speeds: Vec<f64> = (0..k)
        .map(|i| vel.eval(i as f64 / (k - 1) as f64).norm())
        .collect();
    let mean = speeds.iter().sum::<f64>() / k as f64;
    if !(mean > 0.0) {
        return Err(Error::DegenerateVelocity { s: 0.0 });
    }
    let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
    Ok(var.sqrt() / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    pub control_points: usize,
    pub max_iters: usize,
    pub speed_tol: f64,
    pub speed_samples: usize,
    pub quad_order: usize,
    pub widen_factor: f64,
    pub max_widenings: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            control_points: 20,
            max_iters: 5,
            speed_tol: 0.02,
            speed_samples: 100,
            quad_order: DEFAULT_QUAD_ORDER,
            widen_factor: 1.5,
            max_widenings: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub objective: f64,
    pub status: SolveStatus,
    pub qp_iterations: usize,
    pub max_violation: f64,
    pub speed_cv: f64,
    /// Set on the extra solve that certifies the final parameters.
    #[serde(default)]
    pub final_resolve: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub spline: BSpline,
    pub params: ParamSet,
    pub regions: Vec<ReliabilityRegion>,
    pub iterations: usize,
    pub speed_cv: f64,
    pub total_length: f64,
    pub objective: f64,
    pub widenings: usize,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl ReconstructionResult {
    /// Largest `C_j P + f_j` entry over all regions at their parameters.
    pub fn max_violation(&self) -> f64 {
        self.regions
            .iter()
            .zip(self.params.values())
            .map(|(r, &s)| r.max_violation(&self.spline.eval(s)))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stacked `C P + f <= 0` for every region at its parameter.
pub fn stack_constraints(
    config: &SplineConfig,
    regions: &[ReliabilityRegion],
    params: &ParamSet,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let rows: usize = regions.iter().map(|r| r.halfspaces().len()).sum();
    let mut c = DMatrix::zeros(rows, 3 * config.m());
    let mut f = DVector::zeros(rows);
    let mut at = 0;
    for (region, &s) in regions.iter().zip(params.values()) {
        let (cj, fj) = constraint_rows(config, region, s)?;
        c.view_mut((at, 0), (cj.nrows(), cj.ncols())).copy_from(&cj);
        f.rows_mut(at, fj.len()).copy_from(&fj);
        at += cj.nrows();
    }
    Ok((c, f))
}

enum Attempt {
    Done(Box<ReconstructionResult>),
    Infeasible,
}

/// Full pipeline from ordered observations: regions, then the iterative fit.
pub fn reconstruct(
    observations: &[Observation],
    cam: &CameraModel,
    rel: &ReliabilityParams,
    config: &ReconstructConfig,
    solver: &SolverSettings,
) -> Result<ReconstructionResult> {
    if observations.len() < MIN_OBSERVATIONS {
        return Err(Error::TooFewObservations {
            needed: MIN_OBSERVATIONS,
            got: observations.len(),
        });
    }
    let regions = build_regions(observations, cam, rel)?;
    reconstruct_in_regions(observations, cam, regions, config, solver)
}

/// Iterative fit against precomputed regions. On an infeasible subproblem
/// every depth bound is widened by `widen_factor` and the fit restarts.
pub fn reconstruct_in_regions(
    observations: &[Observation],
    cam: &CameraModel,
    mut regions: Vec<ReliabilityRegion>,
    config: &ReconstructConfig,
    solver: &SolverSettings,
) -> Result<ReconstructionResult> {
    if observations.len() < MIN_OBSERVATIONS {
        return Err(Error::TooFewObservations {
            needed: MIN_OBSERVATIONS,
            got: observations.len(),
        });
    }
    if regions.len() != observations.len() {
        return Err(Error::InvalidParameter("one region per observation required".into()));
    }
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    let spline_config = SplineConfig::cubic(config.control_points)?;
    let objective = build_mvc_matrix(&spline_config)?;
    let initial = init_params(observations)?;

    for widenings in 0..=config.max_widenings {
        if widenings > 0 {
            regions = regions
                .iter()
                .map(|r| r.with_eps_z(cam, r.eps_z * config.widen_factor))
                .collect::<Result<_>>()?;
        }
        match attempt(
            observations,
            &regions,
            &initial,
            &spline_config,
            &objective.matrix_a,
            config,
            solver,
        )? {
            Attempt::Done(mut result) => {
                result.widenings = widenings;
                return Ok(*result);
            }
            Attempt::Infeasible => continue,
        }
    }
    Err(Error::InfeasibleAfterRetries {
        retries: config.max_widenings,
    })
}

fn attempt(
    observations: &[Observation],
    regions: &[ReliabilityRegion],
    initial: &ParamSet,
    spline_config: &SplineConfig,
    objective: &DMatrix<f64>,
    config: &ReconstructConfig,
    solver: &SolverSettings,
) -> Result<Attempt> {
    let positions: Vec<Vector3<f64>> = observations.iter().map(|o| o.position).collect();
    let seed = fit_least_squares(spline_config, initial.values(), &positions, 1e-4)?;
    let mut warm = WarmStart {
        x: seed.flat(),
        y: None,
    };
    let mut params = initial.clone();
    let mut diagnostics = Vec::new();

    let solve_at = |params: &ParamSet, warm: &WarmStart, iteration: usize, final_resolve: bool, diagnostics: &mut Vec<IterationDiagnostics>| -> Result<Option<(BSpline, WarmStart, f64)>> {
        let (c, f) = stack_constraints(spline_config, regions, params)?;
        let problem = LcqpProblem::new(objective.clone(), c, f)?;
        let sol = solve(&problem, solver, Some(warm))?;
        let violation = problem.max_violation(&sol.x);
        let usable = sol.status == SolveStatus::Solved || violation <= solver.feas_tol;
        let spline = BSpline::from_flat(spline_config.clone(), &sol.x)?;
        let cv = if usable { speed_cv(&spline, config.speed_samples)? } else { f64::NAN };
        diagnostics.push(IterationDiagnostics {
            iteration,
            objective: sol.objective,
            status: sol.status,
            qp_iterations: sol.iterations,
            max_violation: violation,
            speed_cv: cv,
            final_resolve,
        });
        if !usable {
            return Ok(None);
        }
        Ok(Some((spline, sol.warm_start(), sol.objective)))
    };

    let mut iteration = 0;
    let (spline, objective_value) = loop {
        iteration += 1;
        let Some((spline, next_warm, obj)) = solve_at(&params, &warm, iteration, false, &mut diagnostics)? else {
            return Ok(Attempt::Infeasible);
        };
        warm = next_warm;
        let cv = diagnostics.last().unwrap().speed_cv;
        if cv < config.speed_tol {
            break (spline, obj);
        }
        params = update_params(&params, &spline, config.quad_order)?;
        if iteration == config.max_iters {
            // Certify the constraints at the parameters being reported.
            let Some((spline, _, obj)) = solve_at(&params, &warm, iteration, true, &mut diagnostics)? else {
                return Ok(Attempt::Infeasible);
            };
            break (spline, obj);
        }
    };

    let speed_cv = diagnostics.last().unwrap().speed_cv;
    let total_length = spline.arc_length(0.0, 1.0, config.quad_order)?;
    Ok(Attempt::Done(Box::new(ReconstructionResult {
        spline,
        params,
        regions: regions.to_vec(),
        iterations: iteration,
        speed_cv,
        total_length,
        objective: objective_value,
        widenings: 0,
        diagnostics,
    })))
}

/// Numerical minimum-variation loss `∫ ‖κ'(s)‖² / ‖B'(s)‖ ds` with the
/// curvature vector `κ = B''/‖B'‖² − B' (B''·B') / ‖B'‖⁴` and a central
/// difference for `κ'`. Midpoint rule on `samples` cells.
pub fn mvc_loss_oracle(spline: &BSpline, samples: usize) -> Result<f64> {
    let d1 = spline.derivative()?;
    let d2 = d1.derivative()?;
    let samples = samples.max(1);
    let cell = 1.0 / samples as f64;
    let h = (1e-4f64).min(0.25 * cell);
    let curvature = |s: f64| -> Result<Vector3<f64>> {
        let v = d1.eval(s);
        let a = d2.eval(s);
        let speed2 = v.norm_squared();
        if !(speed2 > 1e-24) {
            return Err(Error::DegenerateVelocity { s });
        }
        Ok(a / speed2 - v * (a.dot(&v) / (speed2 * speed2)))
    };
    let mut total = 0.0;
    for i in 0..samples {
        let s = (i as f64 + 0.5) * cell;
        let dk = (curvature(s + h)? - curvature(s - h)?) / (2.0 * h);
        let speed = d1.eval(s).norm();
        if !(speed > 1e-12) {
            return Err(Error::DegenerateVelocity { s });
        }
        total += dk.norm_squared() / speed * cell;
    }
    Ok(total)
}
