//! Linearly constrained quadratic programs
//!
//! ```text
//! minimize    x^T A x + q^T x
//! subject to  C x + f <= 0
//! ```
//!
//! solved by operator splitting (ADMM) on `C x = z, z <= -f`, with a final
//! equality-constrained polish on the detected active set. Constraint rows
//! are normalized and the objective rescaled before iterating; residuals and
//! duals are reported in the caller's units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORACLE_ROW_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LcqpProblem {
    pub objective: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraint_matrix: DMatrix<f64>,
    pub constraint_offset: DVector<f64>,
}

impl LcqpProblem {
    pub fn new(
        objective: DMatrix<f64>,
        constraint_matrix: DMatrix<f64>,
        constraint_offset: DVector<f64>,
    ) -> Result<Self> {
        let n = objective.nrows();
        let problem = Self {
            linear: DVector::zeros(n),
            objective,
            constraint_matrix,
            constraint_offset,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_linear(mut self, linear: DVector<f64>) -> Result<Self> {
        self.linear = linear;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.objective.nrows()
    }

    pub fn rows(&self) -> usize {
        self.constraint_matrix.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.nrows();
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.objective.ncols() != n || n == 0 {
            return bad("objective must be square and non-empty");
        }
        if self.linear.len() != n {
            return bad("linear term has wrong length");
        }
        if self.constraint_matrix.ncols() != n {
            return bad("constraint matrix column count differs from objective");
        }
        if self.constraint_matrix.nrows() == 0 {
            return bad("at least one constraint row is required");
        }
        if self.constraint_offset.len() != self.constraint_matrix.nrows() {
            return bad("constraint offset length differs from row count");
        }
        let asym = (&self.objective - self.objective.transpose()).amax();
        if asym > 1e-9 * self.objective.amax().max(1.0) {
            return bad("objective must be symmetric");
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.objective * x)) + self.linear.dot(x)
    }

    /// `max_i (C x + f)_i`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.constraint_matrix * x + &self.constraint_offset).max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub polish: bool,
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-6,
            feas_tol: 1e-6,
            max_iter: 10_000,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            polish: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcqpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `C x + f <= 0`, non-negative.
    pub y: DVector<f64>,
    pub status: SolveStatus,
    /// `max(0, max_i (C x + f)_i)`.
    pub primal_residual: f64,
    /// `‖2 A x + q + C^T y‖_∞`.
    pub dual_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    pub trace: Vec<TraceEntry>,
}

impl LcqpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            y: Some(self.y.clone()),
        }
    }
}

/// Iterations between polishing attempts.
const POLISH_INTERVAL: usize = 50;

/// Row-normalized, cost-scaled copy of a problem in OSQP form
/// `½ x^T P x + q^T x, C x <= u`.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    u: DVector<f64>,
    row_scale: DVector<f64>,
    cost_scale: f64,
}

impl Scaled {
    fn new(problem: &LcqpProblem) -> Self {
        let p = &problem.objective * 2.0;
        let r = problem.rows();
        let mut row_scale = DVector::from_element(r, 1.0);
        for i in 0..r {
            let norm = problem.constraint_matrix.row(i).norm();
            if norm > 0.0 {
                row_scale[i] = 1.0 / norm;
            }
        }
        let mut c = problem.constraint_matrix.clone();
        for i in 0..r {
            c.row_mut(i).scale_mut(row_scale[i]);
        }
        let u = -problem.constraint_offset.component_mul(&row_scale);
        let magnitude = p.amax().max(problem.linear.amax());
        let cost_scale = if magnitude > 0.0 { 1.0 / magnitude } else { 1.0 };
        Self {
            p: p * cost_scale,
            q: &problem.linear * cost_scale,
            c,
            u,
            row_scale,
            cost_scale,
        }
    }

    fn dual_to_original(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.row_scale) / self.cost_scale
    }

    fn dual_from_original(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_div(&self.row_scale) * self.cost_scale
    }

    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
        let cx = &self.c * x;
        let px = &self.p * x;
        let cty = self.c.transpose() * y;
        Residuals {
            primal: (&cx - z).amax(),
            dual: (&px + &self.q + &cty).amax(),
            primal_scale: cx.amax().max(z.amax()),
            dual_scale: px.amax().max(cty.amax()).max(self.q.amax()),
        }
    }

    fn factor(&self, sigma: f64, rho: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = self.p.nrows();
        let k = &self.p + DMatrix::identity(n, n) * sigma + self.c.transpose() * &self.c * rho;
        k.cholesky()
            .ok_or_else(|| Error::NumericalFailure("KKT factorization failed".into()))
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    primal_scale: f64,
    dual_scale: f64,
}

impl Residuals {
    fn converged(&self, eps_abs: f64, eps_rel: f64) -> bool {
        self.primal <= eps_abs + eps_rel * self.primal_scale
            && self.dual <= eps_abs + eps_rel * self.dual_scale
    }
}

fn clip_upper(v: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    v.zip_map(u, |a, b| a.min(b))
}

/// Primal infeasibility certificate on a dual step `dy`.
fn certifies_infeasibility(s: &Scaled, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    if dy.min() < -eps * norm {
        return false;
    }
    let ct_dy = (s.c.transpose() * dy).amax();
    let support: f64 = s.u.iter().zip(dy.iter()).map(|(u, d)| u * d.max(0.0)).sum();
    ct_dy <= eps * norm && support < -eps * norm
}

/// Equality-constrained solve on an active set, with iterative refinement.
fn polish(
    s: &Scaled,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.p.nrows();
    let k = active.len();
    let delta = 1e-9;
    let dim = n + k;
    let mut exact = DMatrix::zeros(dim, dim);
    exact.view_mut((0, 0), (n, n)).copy_from(&s.p);
    for (a, &i) in active.iter().enumerate() {
        for j in 0..n {
            exact[(n + a, j)] = s.c[(i, j)];
            exact[(j, n + a)] = s.c[(i, j)];
        }
    }
    let mut reg = exact.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    for a in 0..k {
        reg[(n + a, n + a)] -= delta;
    }
    let lu = reg.lu();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&s.q));
    for (a, &i) in active.iter().enumerate() {
        rhs[n + a] = s.u[i];
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..10 {
        let r = &rhs - &exact * &sol;
        if r.amax() < 1e-14 {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(s.u.len());
    for (a, &i) in active.iter().enumerate() {
        y[i] = sol[n + a];
    }
    Some((x, y))
}

/// Polishes on active sets guessed from the iterate and keeps the first
/// candidate that satisfies the optimality conditions.
fn try_polish(
    s: &Scaled,
    x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    eps_abs: f64,
    eps_rel: f64,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let r = s.u.len();
    let strong: Vec<usize> = (0..r).filter(|&i| s.u[i] - z[i] < y[i]).collect();
    let positive: Vec<usize> = (0..r).filter(|&i| y[i] > 1e-9 * y.amax().max(1e-30)).collect();
    let slack = &s.u - &s.c * x;
    let tight: Vec<usize> = (0..r).filter(|&i| slack[i] < 1e-7).collect();
    let mut tried: Vec<Vec<usize>> = Vec::new();
    for active in [strong, positive, tight] {
        if tried.contains(&active) {
            continue;
        }
        if let Some((xp, yp)) = polish(s, &active) {
            let zp = clip_upper(&(&s.c * &xp), &s.u);
            let res = s.residuals(&xp, &zp, &yp);
            let feasible = (&s.c * &xp - &s.u).max() <= 1e-9;
            let sign_ok = yp.min() >= -1e-9 * yp.amax().max(1.0);
            if feasible && sign_ok && res.dual <= eps_abs + eps_rel * res.dual_scale {
                return Some((xp, yp.map(|v| v.max(0.0)), zp));
            }
        }
        tried.push(active);
    }
    None
}

pub fn solve(
    problem: &LcqpProblem,
    settings: &SolverSettings,
    warm_start: Option<&WarmStart>,
) -> Result<LcqpSolution> {
    problem.validate()?;
    let n = problem.dim();
    let r = problem.rows();
    let s = Scaled::new(problem);

    // A zero row with a positive offset can never hold.
    for i in 0..r {
        if problem.constraint_matrix.row(i).amax() == 0.0 && problem.constraint_offset[i] > 0.0 {
            return Ok(finish(problem, &s, DVector::zeros(n), DVector::zeros(r), SolveStatus::Infeasible, 0, false, Vec::new()));
        }
    }

    let mut x = match warm_start {
        Some(w) if w.x.len() == n => w.x.clone(),
        Some(_) => return Err(Error::InvalidParameter("warm start has wrong dimension".into())),
        None => DVector::zeros(n),
    };
    let mut y = match warm_start.and_then(|w| w.y.as_ref()) {
        Some(y0) if y0.len() == r => s.dual_from_original(y0).map(|v| v.max(0.0)),
        _ => DVector::zeros(r),
    };
    let mut z = clip_upper(&(&s.c * &x), &s.u);

    let mut rho = settings.rho;
    let sigma = settings.sigma;
    let alpha = settings.alpha;
    let mut chol = s.factor(sigma, rho)?;
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut eps_abs = settings.eps_abs;
    let mut eps_rel = settings.eps_rel;
    let mut polished = false;

    'tighten: for _round in 0..4 {
        while iterations < settings.max_iter {
            iterations += 1;
            let rhs = &x * sigma - &s.q + s.c.transpose() * (&z * rho - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &s.c * &x_tilde;
            let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
            let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
            let z_next = clip_upper(&(&z_relaxed + &y / rho), &s.u);
            let y_next = &y + (&z_relaxed - &z_next) * rho;
            let dy = &y_next - &y;
            x = x_next;
            z = z_next;
            y = y_next;

            let res = s.residuals(&x, &z, &y);
            if settings.record_trace {
                trace.push(TraceEntry {
                    objective: problem.objective_value(&x),
                    primal_residual: res.primal,
                    dual_residual: res.dual,
                });
            }
            if res.converged(eps_abs, eps_rel) {
                status = SolveStatus::Solved;
                break;
            }
            if settings.polish && iterations % POLISH_INTERVAL == 0 {
                if let Some((xp, yp, zp)) = try_polish(&s, &x, &z, &y, eps_abs, eps_rel) {
                    if problem.max_violation(&xp) <= settings.feas_tol {
                        (x, y, z) = (xp, yp, zp);
                        status = SolveStatus::Solved;
                        polished = true;
                        break;
                    }
                }
            }
            if certifies_infeasibility(&s, &dy, settings.eps_prim_inf) {
                return Ok(finish(problem, &s, x, y, SolveStatus::Infeasible, iterations, false, trace));
            }
            if settings.adaptive_rho
                && settings.adaptive_rho_interval > 0
                && iterations % settings.adaptive_rho_interval == 0
            {
                let prim = res.primal / res.primal_scale.max(1e-30);
                let dual = res.dual / res.dual_scale.max(1e-30);
                if prim > 0.0 && dual > 0.0 {
                    let candidate = (rho * (prim / dual).sqrt()).clamp(1e-6, 1e6);
                    if candidate > 5.0 * rho || candidate < 0.2 * rho {
                        rho = candidate;
                        chol = s.factor(sigma, rho)?;
                    }
                }
            }
        }
        if status != SolveStatus::Solved {
            break;
        }

        if settings.polish {
            if let Some((xp, yp, zp)) = try_polish(&s, &x, &z, &y, eps_abs, eps_rel) {
                (x, y, z) = (xp, yp, zp);
                polished = true;
            }
        }
        if problem.max_violation(&x) <= settings.feas_tol {
            break 'tighten;
        }
        // Converged in scaled units but not feasible enough in the caller's.
        status = SolveStatus::MaxIterations;
        polished = false;
        eps_abs *= 0.01;
        eps_rel *= 0.01;
    }
    Ok(finish(problem, &s, x, y, status, iterations, polished, trace))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &LcqpProblem,
    s: &Scaled,
    x: DVector<f64>,
    y_scaled: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
    polished: bool,
    trace: Vec<TraceEntry>,
) -> LcqpSolution {
    let y = s.dual_to_original(&y_scaled);
    let grad = &problem.objective * &x * 2.0 + &problem.linear + problem.constraint_matrix.transpose() * &y;
    LcqpSolution {
        primal_residual: problem.max_violation(&x).max(0.0),
        dual_residual: grad.amax(),
        objective: problem.objective_value(&x),
        x,
        y,
        status,
        iterations,
        polished,
        trace,
    }
}

/// Exact optimum by enumerating active sets (exponential; small problems
/// only). Every subset of at most `dim` rows is solved as an equality
/// constrained QP and kept if it satisfies primal feasibility and dual sign
/// conditions. Ties go to the lower objective, then lexicographically
/// smaller `x`.
pub fn active_set_oracle(problem: &LcqpProblem) -> Result<DVector<f64>> {
    problem.validate()?;
    let n = problem.dim();
    let r = problem.rows();
    if r > ORACLE_ROW_LIMIT {
        return Err(Error::TooLarge {
            rows: r,
            limit: ORACLE_ROW_LIMIT,
        });
    }
    let p = &problem.objective * 2.0;
    let u = -&problem.constraint_offset;
    let scale = p.amax().max(problem.constraint_matrix.amax()).max(1.0);
    let tol = 1e-9 * scale * (1.0 + u.amax());
    let mut best: Option<(f64, DVector<f64>)> = None;

    for mask in 0u32..(1u32 << r) {
        let active: Vec<usize> = (0..r).filter(|&i| mask & (1 << i) != 0).collect();
        let k = active.len();
        if k > n {
            continue;
        }
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
        for (a, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = problem.constraint_matrix[(i, j)];
                kkt[(j, n + a)] = problem.constraint_matrix[(i, j)];
            }
            rhs[n + a] = u[i];
        }
        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(sol) if sol.iter().all(|v| v.is_finite()) && (&kkt * &sol - &rhs).amax() <= tol => sol,
            _ => {
                // Singular system: minimum-norm solution if consistent.
                let svd = kkt.clone().svd(true, true);
                match svd.solve(&rhs, 1e-12 * scale) {
                    Ok(sol) if (&kkt * &sol - &rhs).amax() <= tol => sol,
                    _ => continue,
                }
            }
        };
        let x = sol.rows(0, n).into_owned();
        if problem.max_violation(&x) > tol {
            continue;
        }
        if sol.rows(n, k).iter().any(|&l| l < -tol) {
            continue;
        }
        let obj = problem.objective_value(&x);
        let better = match &best {
            None => true,
            Some((bo, bx)) => {
                let band = 1e-12 * (1.0 + bo.abs());
                obj < bo - band
                    || (obj <= bo + band
                        && x.iter()
                            .zip(bx.iter())
                            .map(|(a, b)| a.total_cmp(b))
                            .find(|o| o.is_ne())
                            == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
        .ok_or_else(|| Error::NumericalFailure("no KKT point found (infeasible problem?)".into()))
}
