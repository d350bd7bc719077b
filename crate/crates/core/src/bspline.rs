//! Clamped uniform B-splines in R^3.
//!
//! Control points are vectorized as `[P0x, P0y, P0z, P1x, ...]` wherever a
//! flat vector of length `3m` is used (objective matrix, constraint rows).

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::reliability::ReliabilityRegion;

pub const CUBIC: usize = 3;
pub const DEFAULT_QUAD_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    m: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl SplineConfig {
    /// Clamped uniform knots on [0, 1]: `degree + 1` copies of each end,
    /// evenly spaced interior knots.
    pub fn clamped_uniform(m: usize, degree: usize) -> Result<Self> {
        if m < degree + 1 {
            return Err(Error::InvalidSpline(format!(
                "{m} control points cannot carry degree {degree}"
            )));
        }
        let spans = m - degree;
        let knots = (0..m + degree + 1)
            .map(|i| {
                if i <= degree {
                    0.0
                } else if i >= m {
                    1.0
                } else {
                    (i - degree) as f64 / spans as f64
                }
            })
            .collect();
        Ok(Self { m, degree, knots })
    }

    /// Cubic configuration for the reconstruction (`m >= 5`).
    pub fn cubic(m: usize) -> Result<Self> {
        if m < 5 {
            return Err(Error::InvalidSpline(format!(
                "cubic reconstruction needs at least 5 control points, got {m}"
            )));
        }
        Self::clamped_uniform(m, CUBIC)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knot values; ‖B'‖ is smooth between consecutive entries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.m - self.degree + 1);
        for &k in &self.knots {
            if out.last().is_none_or(|&l| k > l) {
                out.push(k);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::clamped_uniform(self.m, self.degree)?;
        if self.knots.len() != expected.knots.len()
            || self
                .knots
                .iter()
                .zip(&expected.knots)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::InvalidSpline(
                "knots must be clamped and uniform on [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Knot span `k` with `t_k <= s < t_{k+1}`; `s = 1` belongs to the last span.
    fn span(&self, s: f64) -> usize {
        let (lo, hi) = (self.degree, self.m - 1);
        if s >= self.knots[self.m] {
            return hi;
        }
        let mut k = lo;
        while k < hi && self.knots[k + 1] <= s {
            k += 1;
        }
        k
    }

    /// The `degree + 1` non-zero basis values at `s`, starting at index
    /// `first`.
    pub fn nonzero_basis(&self, s: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let i = self.span(s);
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = s - t[i + 1 - j];
            right[j] = t[i + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (i - p, n)
    }

    fn check_param(s: f64) -> Result<()> {
        if (0.0..=1.0).contains(&s) {
            Ok(())
        } else {
            Err(Error::InvalidInterval { a: s, b: s })
        }
    }

    /// Value of basis function `k` (0-based) at `s`.
    pub fn basis(&self, k: usize, s: f64) -> Result<f64> {
        if k >= self.m {
            return Err(Error::IndexOutOfRange { index: k, len: self.m });
        }
        Self::check_param(s)?;
        let (first, vals) = self.nonzero_basis(s);
        Ok(if k >= first && k <= first + self.degree {
            vals[k - first]
        } else {
            0.0
        })
    }

    /// All `m` basis values at `s`.
    pub fn basis_row(&self, s: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.m];
        let (first, vals) = self.nonzero_basis(s);
        row[first..first + vals.len()].copy_from_slice(&vals);
        row
    }

    pub fn derivative(&self) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::DegreeZero);
        }
        Ok(Self {
            m: self.m - 1,
            degree: self.degree - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
        })
    }

    /// Linear map from control points to derivative control points,
    /// `(m-1) × m`, per coordinate.
    pub fn derivative_operator(&self) -> Result<DMatrix<f64>> {
        if self.degree == 0 {
            return Err(Error::DegreeZero);
        }
        let d = self.degree as f64;
        let mut op = DMatrix::zeros(self.m - 1, self.m);
        for k in 0..self.m - 1 {
            let w = d / (self.knots[k + self.degree + 1] - self.knots[k + 1]);
            op[(k, k)] = -w;
            op[(k, k + 1)] = w;
        }
        Ok(op)
    }

    /// Scalar map from control points to third-derivative control points,
    /// `(m-3) × m`.
    pub fn third_derivative_operator(&self) -> Result<DMatrix<f64>> {
        if self.degree < 3 {
            return Err(Error::InvalidSpline(
                "third derivative needs degree >= 3".into(),
            ));
        }
        let c1 = self.derivative()?;
        let c2 = c1.derivative()?;
        Ok(c2.derivative_operator()? * c1.derivative_operator()? * self.derivative_operator()?)
    }

    pub fn greville_abscissae(&self) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                if self.degree == 0 {
                    0.5 * (self.knots[k] + self.knots[k + 1])
                } else {
                    self.knots[k + 1..=k + self.degree].iter().sum::<f64>() / self.degree as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    config: SplineConfig,
    control_points: Vec<Vector3<f64>>,
}

impl BSpline {
    pub fn new(config: SplineConfig, control_points: Vec<Vector3<f64>>) -> Result<Self> {
        if control_points.len() != config.m {
            return Err(Error::InvalidSpline(format!(
                "expected {} control points, got {}",
                config.m,
                control_points.len()
            )));
        }
        Ok(Self {
            config,
            control_points,
        })
    }

    pub fn from_flat(config: SplineConfig, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != 3 * config.m {
            return Err(Error::InvalidSpline(format!(
                "expected {} coordinates, got {}",
                3 * config.m,
                flat.len()
            )));
        }
        let pts = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self::new(config, pts)
    }

    pub fn config(&self) -> &SplineConfig {
        &self.config
    }

    pub fn degree(&self) -> usize {
        self.config.degree
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    pub fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.control_points.len(),
            self.control_points.iter().flat_map(|p| p.iter().copied()),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.control_points.len() != self.config.m {
            return Err(Error::InvalidSpline("control point count mismatch".into()));
        }
        if self.control_points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidSpline("non-finite control point".into()));
        }
        Ok(())
    }

    /// B(s); `s` is clamped to [0, 1].
    pub fn eval(&self, s: f64) -> Vector3<f64> {
        let s = s.clamp(0.0, 1.0);
        let (first, vals) = self.config.nonzero_basis(s);
        vals.iter()
            .enumerate()
            .fold(Vector3::zeros(), |acc, (i, w)| {
                acc + *w * self.control_points[first + i]
            })
    }

    pub fn derivative(&self) -> Result<BSpline> {
        let cfg = self.config.derivative()?;
        let d = self.config.degree as f64;
        let t = &self.config.knots;
        let pts = self
            .control_points
            .windows(2)
            .enumerate()
            .map(|(k, w)| d / (t[k + self.config.degree + 1] - t[k + 1]) * (w[1] - w[0]))
            .collect();
        BSpline::new(cfg, pts)
    }

    pub fn arc_length(&self, a: f64, b: f64, order: usize) -> Result<f64> {
        ArcLength::new(self, order)?.between(a, b)
    }

    /// Sum of squared third-derivative control points.
    pub fn jerk_energy(&self) -> Result<f64> {
        let d3 = self.derivative()?.derivative()?.derivative()?;
        Ok(d3.control_points.iter().map(|p| p.norm_squared()).sum())
    }
}

/// Arc-length integrator reusing the derivative spline and quadrature rule.
#[derive(Debug, Clone)]
pub struct ArcLength {
    velocity: BSpline,
    breaks: Vec<f64>,
    rule: GaussLegendre,
}

impl ArcLength {
    pub fn new(spline: &BSpline, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("quadrature order must be >= 1".into()));
        }
        Ok(Self {
            velocity: spline.derivative()?,
            breaks: spline.config.breakpoints(),
            rule: GaussLegendre::new(order),
        })
    }

    pub fn speed(&self, s: f64) -> f64 {
        self.velocity.eval(s).norm()
    }

    pub fn velocity(&self) -> &BSpline {
        &self.velocity
    }

    /// ∫_a^b ‖B'(s)‖ ds, splitting at knots.
    pub fn between(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::InvalidInterval { a, b });
        }
        let mut pts = vec![a];
        pts.extend(self.breaks.iter().copied().filter(|&k| k > a && k < b));
        pts.push(b);
        Ok(self
            .rule
            .integrate_composite(&pts, |s| self.velocity.eval(s).norm()))
    }

    /// Cumulative arc length at each (non-decreasing) parameter.
    pub fn cumulative(&self, params: &[f64]) -> Result<Vec<f64>> {
        let mut acc = 0.0;
        let mut prev = 0.0;
        params
            .iter()
            .map(|&s| {
                acc += self.between(prev, s)?;
                prev = s;
                Ok(acc)
            })
            .collect()
    }
}

/// Quadratic jerk objective `P^T A P = Σ ‖P'''_k‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvcObjective {
    pub matrix_a: DMatrix<f64>,
}

impl MvcObjective {
    pub fn value(&self, p: &DVector<f64>) -> f64 {
        p.dot(&(&self.matrix_a * p))
    }
}

pub fn build_mvc_matrix(config: &SplineConfig) -> Result<MvcObjective> {
    if config.degree != CUBIC || config.m < 5 {
        return Err(Error::InvalidSpline(
            "objective matrix needs a cubic spline with m >= 5".into(),
        ));
    }
    let d3 = config.third_derivative_operator()?;
    let gram = d3.transpose() * d3;
    let m = config.m;
    let mut a = DMatrix::zeros(3 * m, 3 * m);
    for i in 0..m {
        for j in 0..m {
            let g = gram[(i, j)];
            for axis in 0..3 {
                a[(3 * i + axis, 3 * j + axis)] = g;
            }
        }
    }
    Ok(MvcObjective { matrix_a: a })
}

/// Rows `C_j`, offsets `f_j` with `C_j P + f_j <= 0` iff `B(s_j)` is in the region.
pub fn constraint_rows(
    config: &SplineConfig,
    region: &ReliabilityRegion,
    s_j: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    SplineConfig::check_param(s_j)?;
    let m = config.m;
    let hs = region.halfspaces();
    let mut c = DMatrix::zeros(hs.len(), 3 * m);
    let mut f = DVector::zeros(hs.len());
    let (first, vals) = config.nonzero_basis(s_j);
    for (r, h) in hs.iter().enumerate() {
        for (i, w) in vals.iter().enumerate() {
            let k = first + i;
            for axis in 0..3 {
                c[(r, 3 * k + axis)] = h.row[axis] * w;
            }
        }
        f[r] = -h.offset;
    }
    Ok((c, f))
}

/// Penalized least-squares fit: minimizes `Σ ‖B(s_j) - y_j‖² + λ P^T A P`,
/// with `λ = smoothing` relative to the data term's scale.
pub fn fit_least_squares(
    config: &SplineConfig,
    params: &[f64],
    points: &[Vector3<f64>],
    smoothing: f64,
) -> Result<BSpline> {
    if params.len() != points.len() || params.is_empty() {
        return Err(Error::InvalidParameter(
            "parameter and point counts differ".into(),
        ));
    }
    let m = config.m;
    let mut normal = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    for (&s, y) in params.iter().zip(points) {
        SplineConfig::check_param(s)?;
        let (first, vals) = config.nonzero_basis(s);
        for (a, wa) in vals.iter().enumerate() {
            for (b, wb) in vals.iter().enumerate() {
                normal[(first + a, first + b)] += wa * wb;
            }
            for axis in 0..3 {
                rhs[(first + a, axis)] += wa * y[axis];
            }
        }
    }
    let data_scale = normal.trace().max(f64::MIN_POSITIVE);
    if config.degree >= 3 {
        let d3 = config.third_derivative_operator()?;
        let gram = d3.transpose() * d3;
        let lambda = smoothing * data_scale / gram.trace().max(f64::MIN_POSITIVE);
        normal += gram * lambda;
    }
    // Keeps the system definite when data leave some control points unconstrained.
    for i in 0..m {
        normal[(i, i)] += 1e-12 * data_scale;
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("least-squares normal equations".into()))?;
    let sol = chol.solve(&rhs);
    let pts = (0..m)
        .map(|k| Vector3::new(sol[(k, 0)], sol[(k, 1)], sol[(k, 2)]))
        .collect();
    BSpline::new(config.clone(), pts)
}
