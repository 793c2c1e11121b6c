//! Equation-free reduction of the stroboscopic DDE map to the plane.
//!
//! A planar point `(x1, x2)` is lifted to the history that is constant `x2`
//! on `[-tau, 0)` with head point `x1`; restriction reads back
//! `(X(t), X(t - tau))`. The healed map `M_l` is defined implicitly by
//! `R M^{l+1} L x = R M^l L y`, and its fixed points by
//! `R M^l L x = R M^{l+1} L x`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dde::{HistoryVector, Integrator, ModelParams, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;
use crate::linalg::{eigenvalues2, eigenvector2, Mat2, Vec2};

/// Tolerance band around the unit circle used for stability classification.
pub const UNIT_CIRCLE_TOL: f64 = 1e-6;

/// Singular-value floor below which `sigma_3 / sigma_2` is undefined.
pub const SIGMA_FLOOR: f64 = 1e-14;

/// Relative determinant floor for the chart Jacobian.
const CHART_DET_FLOOR: f64 = 1e-12;

/// Smallest Newton damping factor tried before giving up.
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x1: f64,
    pub x2: f64,
}

impl PlanarPoint {
    pub const fn new(x1: f64, x2: f64) -> Self {
        PlanarPoint { x1, x2 }
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.x1, self.x2)
    }

    pub fn from_vec(v: Vec2) -> Self {
        PlanarPoint::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    pub fn dist_inf(&self, other: &PlanarPoint) -> f64 {
        (self.x1 - other.x1).abs().max((self.x2 - other.x2).abs())
    }

    pub fn dist(&self, other: &PlanarPoint) -> f64 {
        (self.to_vec() - other.to_vec()).norm()
    }
}

/// Soft chart bounds; points outside are accepted but worth a warning.
pub const CHART_RECT: Rect = Rect {
    x1_min: -0.75,
    x1_max: 0.15,
    x2_min: -0.75,
    x2_max: 0.15,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Rect {
    pub const fn square(lo: f64, hi: f64) -> Self {
        Rect {
            x1_min: lo,
            x1_max: hi,
            x2_min: lo,
            x2_max: hi,
        }
    }

    pub fn contains(&self, p: &PlanarPoint) -> bool {
        p.x1 >= self.x1_min && p.x1 <= self.x1_max && p.x2 >= self.x2_min && p.x2 <= self.x2_max
    }

    /// Node `(i, j)` of an `nx` by `ny` grid including the corners.
    pub fn node(&self, i: usize, j: usize, nx: usize, ny: usize) -> PlanarPoint {
        PlanarPoint::new(
            lerp(self.x1_min, self.x1_max, i, nx),
            lerp(self.x2_min, self.x2_max, j, ny),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x1_min, self.x1_max, self.x2_min, self.x2_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x1_min < self.x1_max
            && self.x2_min < self.x2_max;
        if ok {
            Ok(())
        } else {
            Err(Error::config("rectangle", "bounds must be finite with min < max"))
        }
    }
}

pub(crate) fn lerp(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if n <= 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// `L(x1, x2) = (x2, ..., x2, x1)` at time 0.
pub fn lift(x: PlanarPoint, n: usize, h: f64) -> Result<HistoryVector> {
    if n < 2 {
        return Err(Error::Domain(format!("lift needs N >= 2, got {n}")));
    }
    let mut values = vec![x.x2; n];
    values[n - 1] = x.x1;
    HistoryVector::new(values, h, 0.0)
}

/// `R(Y) = (Y_N, Y_1)`.
pub fn restrict(y: &HistoryVector) -> PlanarPoint {
    PlanarPoint::new(y.head(), y.oldest())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealedMapConfig {
    /// Healing time in forcing periods.
    pub ell: usize,
    pub params: ModelParams,
    pub forcing: ForcingSpec,
    pub h: f64,
    pub fd_eps: f64,
    /// Residual tolerance `||G||_inf`.
    pub newton_tol: f64,
    /// Step tolerance `||dx||_inf`.
    pub newton_step_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for HealedMapConfig {
    fn default() -> Self {
        HealedMapConfig {
            ell: 1,
            params: ModelParams::default(),
            forcing: ForcingSpec::default(),
            h: DEFAULT_STEP,
            fd_eps: 1e-6,
            newton_tol: 1e-10,
            newton_step_tol: 1e-8,
            newton_max_iter: 50,
        }
    }
}

impl HealedMapConfig {
    pub fn with_params(&self, params: ModelParams) -> Self {
        HealedMapConfig { params, ..self.clone() }
    }

    pub fn with_u(&self, u: f64) -> Self {
        self.with_params(self.params.with_u(u))
    }

    pub fn with_ell(&self, ell: usize) -> Self {
        HealedMapConfig { ell, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell < 1 {
            return Err(Error::config("ell", "healing time must be >= 1 period"));
        }
        if !(self.fd_eps.is_finite() && self.fd_eps > 0.0) {
            return Err(Error::config("fd_eps", "must be finite and > 0"));
        }
        if !(self.newton_tol > 0.0 && self.newton_step_tol > 0.0) {
            return Err(Error::config("newton_tol", "tolerances must be > 0"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::config("newton_max_iter", "must be >= 1"));
        }
        let period = self
            .forcing
            .period()
            .ok_or_else(|| Error::config("forcing", "the healed map needs periodic forcing"))?;
        if period < self.params.tau {
            return Err(Error::config(
                "forcing.period",
                format!("period {period} is shorter than the delay {}", self.params.tau),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Sink,
    Saddle,
    Source,
    /// A multiplier within the tolerance band of the unit circle.
    NonHyperbolic,
}

impl Stability {
    pub fn classify(eigenvalues: &[Complex64; 2]) -> Self {
        let inside = eigenvalues.iter().filter(|l| l.norm() < 1.0 - UNIT_CIRCLE_TOL).count();
        let outside = eigenvalues.iter().filter(|l| l.norm() > 1.0 + UNIT_CIRCLE_TOL).count();
        match (inside, outside) {
            (2, 0) => Stability::Sink,
            (1, 1) => Stability::Saddle,
            (0, 2) => Stability::Source,
            _ => Stability::NonHyperbolic,
        }
    }

    /// Integer code used in result tables.
    pub fn code(&self) -> i8 {
        match self {
            Stability::Sink => 0,
            Stability::Saddle => 1,
            Stability::Source => 2,
            Stability::NonHyperbolic => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Sink => "sink",
            Stability::Saddle => "saddle",
            Stability::Source => "source",
            Stability::NonHyperbolic => "non_hyperbolic",
        }
    }
}

/// Fixed point of the healed map (or of its `period`-th iterate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRecord {
    pub point: PlanarPoint,
    pub u: f64,
    pub tau: f64,
    /// Number of forcing periods of the orbit (1 for true fixed points).
    pub period: usize,
    /// Multipliers, ascending modulus.
    pub eigenvalues: [Complex64; 2],
    pub classification: Stability,
    /// Row-major Jacobian of the healed map at the point.
    pub jacobian: [[f64; 2]; 2],
    pub residual: f64,
    pub iterations: usize,
}

impl FixedPointRecord {
    pub fn jacobian_matrix(&self) -> Mat2 {
        let j = &self.jacobian;
        Mat2::new(j[0][0], j[0][1], j[1][0], j[1][1])
    }

    /// Stable multiplier and unit eigenvector of a saddle. The eigenvector
    /// points towards increasing `x1` (increasing `x2` if vertical).
    pub fn stable_direction(&self) -> Result<(f64, Vec2)> {
        if self.classification != Stability::Saddle {
            return Err(Error::Contract(format!(
                "stable direction requested for a {} point",
                self.classification.as_str()
            )));
        }
        let lambda = self.eigenvalues[0];
        if lambda.im != 0.0 {
            return Err(Error::Contract("saddle with complex multipliers".into()));
        }
        let v = eigenvector2(&self.jacobian_matrix(), lambda.re);
        let flip = v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0);
        Ok((lambda.re, if flip { -v } else { v }))
    }
}

/// Equation-free maps for one configuration.
#[derive(Debug, Clone)]
pub struct HealedMap {
    cfg: HealedMapConfig,
    integ: Integrator,
}

impl HealedMap {
    pub fn new(cfg: HealedMapConfig) -> Result<Self> {
        cfg.validate()?;
        let integ = Integrator::new(cfg.params, cfg.forcing.clone(), cfg.h)?;
        integ.steps_per_period()?;
        Ok(HealedMap { cfg, integ })
    }

    pub fn config(&self) -> &HealedMapConfig {
        &self.cfg
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integ
    }

    pub fn lift(&self, x: PlanarPoint) -> Result<HistoryVector> {
        lift(x, self.integ.n(), self.cfg.h)
    }

    /// `R M^k L x`.
    pub fn forward_map(&self, x: PlanarPoint, k: usize) -> Result<PlanarPoint> {
        if k == 0 {
            return Err(Error::Contract("forward map needs k >= 1 periods".into()));
        }
        let y = self.integ.strobe_map(&self.lift(x)?, k)?;
        Ok(restrict(&y))
    }

    /// `(R M^k L x, R M^{k+m} L x)` from a single integration.
    pub fn forward_pair(&self, x: PlanarPoint, k: usize, m: usize) -> Result<(PlanarPoint, PlanarPoint)> {
        if k == 0 || m == 0 {
            return Err(Error::Contract("forward pair needs k, m >= 1".into()));
        }
        let yk = self.integ.strobe_map(&self.lift(x)?, k)?;
        let ykm = self.integ.strobe_map(&yk, m)?;
        Ok((restrict(&yk), restrict(&ykm)))
    }

    /// Central-difference Jacobian of `R M^k L`.
    pub fn jacobian(&self, x: PlanarPoint, k: usize) -> Result<Mat2> {
        let eps = self.cfg.fd_eps;
        let mut cols = [Vec2::zeros(); 2];
        for (c, col) in cols.iter_mut().enumerate() {
            let (plus, minus) = offsets(x, c, eps);
            let fp = self.forward_map(plus, k)?.to_vec();
            let fm = self.forward_map(minus, k)?.to_vec();
            *col = (fp - fm) / (2.0 * eps);
        }
        Ok(Mat2::from_columns(&cols))
    }

    /// Central-difference Jacobians of `R M^k L` and `R M^{k+m} L`.
    fn jacobian_pair(&self, x: PlanarPoint, k: usize, m: usize) -> Result<(Mat2, Mat2)> {
        let eps = self.cfg.fd_eps;
        let mut a = [Vec2::zeros(); 2];
        let mut b = [Vec2::zeros(); 2];
        for c in 0..2 {
            let (plus, minus) = offsets(x, c, eps);
            let (pk, pkm) = self.forward_pair(plus, k, m)?;
            let (mk, mkm) = self.forward_pair(minus, k, m)?;
            a[c] = (pk.to_vec() - mk.to_vec()) / (2.0 * eps);
            b[c] = (pkm.to_vec() - mkm.to_vec()) / (2.0 * eps);
        }
        Ok((Mat2::from_columns(&a), Mat2::from_columns(&b)))
    }

    /// Fixed point of the healed map by Newton's method on
    /// `G(x) = R M^{l+1} L x - R M^l L x`.
    pub fn fixed_point(&self, x0: PlanarPoint) -> Result<FixedPointRecord> {
        self.periodic_point(x0, 1)
    }

    /// Fixed point of the `m`-th iterate of the healed map, defined by
    /// `R M^{l+m} L x = R M^l L x`.
    pub fn periodic_point(&self, x0: PlanarPoint, m: usize) -> Result<FixedPointRecord> {
        let ell = self.cfg.ell;
        let residual_at = |x: PlanarPoint| -> Result<Vec2> {
            let (a, b) = self.forward_pair(x, ell, m)?;
            Ok(b.to_vec() - a.to_vec())
        };
        let mut x = x0;
        let mut g = residual_at(x)?;
        let mut last_step = f64::INFINITY;
        for iter in 0..=self.cfg.newton_max_iter {
            let residual = g.amax();
            if residual < self.cfg.newton_tol && (iter == 0 || last_step < self.cfg.newton_step_tol) {
                return self.record(x, m, residual, iter);
            }
            if iter == self.cfg.newton_max_iter {
                break;
            }
            let (ja, jb) = self.jacobian_pair(x, ell, m)?;
            let dx = solve2(&(jb - ja), &g).ok_or_else(|| chart_error(x, "singular Newton matrix"))?;
            // backtrack until the residual decreases; tiny steps are taken as is
            let mut lambda = 1.0;
            loop {
                let trial = PlanarPoint::from_vec(x.to_vec() - dx * lambda);
                let small = lambda * dx.amax() < self.cfg.newton_step_tol;
                match residual_at(trial) {
                    Ok(gt) if gt.amax() < residual || small => {
                        x = trial;
                        g = gt;
                        last_step = lambda * dx.amax();
                        break;
                    }
                    Err(e) if small => return Err(e),
                    _ => lambda *= 0.5,
                }
                if lambda < MIN_DAMPING {
                    return Err(Error::NoConvergence {
                        iterations: iter + 1,
                        residual,
                    });
                }
            }
        }
        Err(Error::NoConvergence {
            iterations: self.cfg.newton_max_iter,
            residual: g.amax(),
        })
    }

    fn record(&self, x: PlanarPoint, m: usize, residual: f64, iterations: usize) -> Result<FixedPointRecord> {
        let jac = self.healed_jacobian(x, m)?;
        let eigenvalues = eigenvalues2(&jac);
        Ok(FixedPointRecord {
            point: x,
            u: self.cfg.params.u,
            tau: self.cfg.params.tau,
            period: m,
            eigenvalues,
            classification: Stability::classify(&eigenvalues),
            jacobian: [[jac[(0, 0)], jac[(0, 1)]], [jac[(1, 0)], jac[(1, 1)]]],
            residual,
            iterations,
        })
    }

    /// Jacobian of the `m`-th healed iterate,
    /// `[D(R M^l L)]^{-1} D(R M^{l+m} L)`.
    pub fn healed_jacobian(&self, x: PlanarPoint, m: usize) -> Result<Mat2> {
        let (ja, jb) = self.jacobian_pair(x, self.cfg.ell, m)?;
        let inv = invert2(&ja).ok_or_else(|| chart_error(x, "singular chart Jacobian"))?;
        Ok(inv * jb)
    }

    /// Evaluates `M_l(x)`: solves `R M^l L y = R M^{l+1} L x` for `y`.
    pub fn healed_planar_map(&self, x: PlanarPoint) -> Result<PlanarPoint> {
        let ell = self.cfg.ell;
        let (fx, target) = self.forward_pair(x, ell, 1)?;
        let target = target.to_vec();
        let jx = self.jacobian(x, ell)?;
        let first = solve2(&jx, &(target - fx.to_vec())).ok_or_else(|| chart_error(x, "singular chart Jacobian"))?;
        let mut y = PlanarPoint::from_vec(x.to_vec() + first);
        let mut residual = f64::INFINITY;
        let mut last_step = first.amax();
        for iter in 0..=self.cfg.newton_max_iter {
            let r = self.forward_map(y, ell)?.to_vec() - target;
            residual = r.amax();
            if residual < self.cfg.newton_tol && (iter == 0 && last_step < 1.0 || last_step < self.cfg.newton_step_tol)
            {
                return Ok(y);
            }
            if iter == self.cfg.newton_max_iter || !residual.is_finite() {
                break;
            }
            let jy = self.jacobian(y, ell)?;
            let dy = solve2(&jy, &r).ok_or_else(|| chart_error(y, "singular chart Jacobian"))?;
            last_step = dy.amax();
            y = PlanarPoint::from_vec(y.to_vec() - dy);
        }
        Err(Error::NoConvergence {
            iterations: self.cfg.newton_max_iter,
            residual,
        })
    }

    /// Central-difference Jacobian of the full one-period map at `L x`,
    /// assembled column by column.
    pub fn full_jacobian(&self, x: PlanarPoint) -> Result<DMatrix<f64>> {
        let eps = self.cfg.fd_eps;
        let base = self.lift(x)?;
        let n = base.len();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut plus = base.values().to_vec();
                let mut minus = plus.clone();
                plus[j] += eps;
                minus[j] -= eps;
                let mp = self.integ.strobe_map(&base.with_values(plus)?, 1)?;
                let mm = self.integ.strobe_map(&base.with_values(minus)?, 1)?;
                Ok(mp
                    .values()
                    .iter()
                    .zip(mm.values())
                    .map(|(a, b)| (a - b) / (2.0 * eps))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
    }

    /// Singular values of the full one-period Jacobian at `L x`, descending.
    pub fn singular_values(&self, x: PlanarPoint) -> Result<Vec<f64>> {
        let jac = self.full_jacobian(x)?;
        let mut sv: Vec<f64> = jac.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        Ok(sv)
    }

    /// `sigma_3 / sigma_2` of the full one-period Jacobian at `L x`.
    pub fn spectral_gap(&self, x: PlanarPoint) -> Result<f64> {
        let sv = self.singular_values(x)?;
        gap_ratio(&sv)
    }

    /// Determinant of the Jacobian of `R M^1 L` on a grid over `rect`.
    pub fn singular_boundary_scan(&self, rect: &Rect, nx: usize, ny: usize) -> Result<GridField> {
        if nx < 2 || ny < 2 {
            return Err(Error::config("grid", "need at least 2 x 2 nodes"));
        }
        rect.validate()?;
        let values = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % nx, idx / nx);
                self.jacobian(rect.node(i, j, nx, ny), 1)
                    .ok()
                    .map(|m| m.determinant())
                    .filter(|d| d.is_finite())
            })
            .collect();
        Ok(GridField {
            rect: *rect,
            nx,
            ny,
            values,
        })
    }
}

/// `sigma_3 / sigma_2` from descending singular values.
pub fn gap_ratio(sv: &[f64]) -> Result<f64> {
    if sv.len() < 3 {
        return Err(Error::Domain("need at least 3 singular values".into()));
    }
    if !(sv[1] >= SIGMA_FLOOR) {
        return Err(Error::UndefinedRatio { sigma2: sv[1] });
    }
    Ok(sv[2] / sv[1])
}

/// Scalar field on a rectangular grid, `x1` varying fastest. Missing cells
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<f64>>,
}

impl GridField {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[j * self.nx + i]
    }

    /// Grid edges across which the field changes sign.
    pub fn sign_changes(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let Some(v) = self.get(i, j) else { continue };
                for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                    if ni >= self.nx || nj >= self.ny {
                        continue;
                    }
                    if let Some(w) = self.get(ni, nj) {
                        if v.signum() != w.signum() {
                            out.push(((i, j), (ni, nj)));
                        }
                    }
                }
            }
        }
        out
    }
}

fn offsets(x: PlanarPoint, c: usize, eps: f64) -> (PlanarPoint, PlanarPoint) {
    let mut plus = x;
    let mut minus = x;
    if c == 0 {
        plus.x1 += eps;
        minus.x1 -= eps;
    } else {
        plus.x2 += eps;
        minus.x2 -= eps;
    }
    (plus, minus)
}

fn chart_error(x: PlanarPoint, reason: &str) -> Error {
    Error::ChartValidity {
        x1: x.x1,
        x2: x.x2,
        reason: reason.to_string(),
    }
}

fn invert2(m: &Mat2) -> Option<Mat2> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let det = m.determinant();
    if !(det.abs() > CHART_DET_FLOOR * scale * scale) {
        return None;
    }
    m.try_inverse()
}

fn solve2(m: &Mat2, rhs: &Vec2) -> Option<Vec2> {
    invert2(m).map(|inv| inv * rhs)
}

/// One branch of fixed points continued in `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub records: Vec<FixedPointRecord>,
    /// Set when continuation stopped before the end of the range.
    pub diagnostic: Option<String>,
}

impl Branch {
    pub fn is_complete(&self) -> bool {
        self.diagnostic.is_none()
    }
}

/// Settings for natural-parameter continuation in `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSettings {
    pub u_end: f64,
    pub du: f64,
    pub du_min: f64,
}

/// Continues `seed` from its `u` to `settings.u_end`, predicting with the
/// previous solution and halving the step on Newton failure.
pub fn continue_fixed_points(
    seed: &FixedPointRecord,
    base: &HealedMapConfig,
    settings: ContinuationSettings,
) -> Result<Branch> {
    let ContinuationSettings { u_end, du, du_min } = settings;
    if !(du.is_finite() && du != 0.0) {
        return Err(Error::config("du", "continuation step must be finite and non-zero"));
    }
    if !(du_min > 0.0 && du_min <= du.abs()) {
        return Err(Error::config("du_min", "must satisfy 0 < du_min <= |du|"));
    }
    let direction = (u_end - seed.u).signum();
    let mut records = vec![seed.clone()];
    if direction == 0.0 {
        return Ok(Branch {
            records,
            diagnostic: None,
        });
    }
    let mut step = du.abs();
    let mut current = seed.clone();
    let reached = |u: f64| direction * (u_end - u) <= 1e-12 * du.abs();
    while !reached(current.u) {
        let mut u_next = current.u + direction * step;
        if direction * (u_next - u_end) > 0.0 {
            u_next = u_end;
        }
        let attempt =
            HealedMap::new(base.with_u(u_next)).and_then(|map| map.periodic_point(current.point, current.period));
        match attempt {
            Ok(rec) if rec.point.dist_inf(&current.point) <= 10.0 * step.max(1e-3) => {
                current = rec;
                records.push(current.clone());
                step = (step * 1.5).min(du.abs());
            }
            Ok(_) | Err(_) if step / 2.0 >= du_min => step /= 2.0,
            Ok(_) => {
                return Ok(Branch {
                    records,
                    diagnostic: Some(format!("branch jumped at u = {u_next}")),
                })
            }
            Err(e) => {
                return Ok(Branch {
                    records,
                    diagnostic: Some(format!("branch lost after u = {}: {e}", current.u)),
                })
            }
        }
    }
    Ok(Branch {
        records,
        diagnostic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(u: f64) -> HealedMapConfig {
        HealedMapConfig::default().with_u(u)
    }

    #[test]
    fn lift_and_restrict() {
        let y = lift(PlanarPoint::new(1.0, 2.0), 4, 0.01).unwrap();
        assert_eq!(y.values(), &[2.0, 2.0, 2.0, 1.0]);
        assert_eq!(restrict(&y), PlanarPoint::new(1.0, 2.0));
        let c = lift(PlanarPoint::new(0.3, 0.3), 5, 0.01).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.3));
        assert_eq!(restrict(&c), PlanarPoint::new(0.3, 0.3));
        assert!(lift(PlanarPoint::new(0.0, 0.0), 1, 0.01).is_err());
    }

    #[test]
    fn unforced_equilibria_are_fixed() {
        let map = HealedMap::new(cfg(0.0)).unwrap();
        for c in [-0.5, 0.0] {
            let x = PlanarPoint::new(c, c);
            for k in [1, 3] {
                assert_eq!(map.forward_map(x, k).unwrap(), x);
            }
        }
        let y = map.healed_planar_map(PlanarPoint::new(-0.5, -0.5)).unwrap();
        assert!(y.dist_inf(&PlanarPoint::new(-0.5, -0.5)) < 1e-10);
    }

    #[test]
    fn config_contracts() {
        let mut c = cfg(0.0);
        c.fd_eps = 0.0;
        assert!(HealedMap::new(c).is_err());
        let mut c = cfg(0.0);
        c.ell = 0;
        assert!(HealedMap::new(c).is_err());
        let mut c = cfg(0.0);
        c.forcing = ForcingSpec::Zero;
        assert!(HealedMap::new(c).is_err());
    }

    #[test]
    fn classification_bands() {
        let c = |a: f64, b: f64| Stability::classify(&[Complex64::new(a, 0.0), Complex64::new(b, 0.0)]);
        assert_eq!(c(0.2, 0.9), Stability::Sink);
        assert_eq!(c(0.2, 1.5), Stability::Saddle);
        assert_eq!(c(1.2, -1.5), Stability::Source);
        assert_eq!(c(0.2, 1.0 + 1e-7), Stability::NonHyperbolic);
    }

    #[test]
    fn zero_step_continuation_rejected() {
        let map = HealedMap::new(cfg(0.0)).unwrap();
        let seed = map.fixed_point(PlanarPoint::new(-0.5, -0.5)).unwrap();
        let res = continue_fixed_points(
            &seed,
            &cfg(0.0),
            ContinuationSettings {
                u_end: 0.1,
                du: 0.0,
                du_min: 1e-4,
            },
        );
        assert!(matches!(res, Err(Error::Config { .. })));
    }

    #[test]
    fn gap_ratio_contract() {
        assert!(matches!(gap_ratio(&[1.0, 0.0, 0.0]), Err(Error::UndefinedRatio { .. })));
        assert_eq!(gap_ratio(&[2.0, 1.0, 0.25]).unwrap(), 0.25);
    }
}
