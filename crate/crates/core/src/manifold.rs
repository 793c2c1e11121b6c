//! Search-circle growth of one-dimensional stable manifolds of saddle fixed
//! points of planar maps, including maps that are only known implicitly
//! through a pair `(g, r)` with `r(M(x)) = g(x)`.
//!
//! Two curves are grown side by side: `S_L` in the domain plane and
//! `S_R = r(S_L)`. A new point `x` of `S_L` is a point on a circle around the
//! last point whose image `g(x)` lies on the polyline `S_R`. For an explicit
//! map `g = M` and `r` is the identity.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::eqfree::{FixedPointRecord, HealedMap, PlanarPoint, Rect, Stability};
use crate::error::{Error, Result};
use crate::linalg::{point_segment_distance, Vec2};
use crate::output;

pub const CURVE_CSV_HEADER: [&str; 7] = ["index", "xL1", "xL2", "xR1", "xR2", "arclength", "delta_used"];

type MapFn<'a> = Box<dyn Fn(PlanarPoint) -> Result<PlanarPoint> + Send + Sync + 'a>;

/// Image map `g` and chart map `r` of an implicitly defined planar map.
pub struct PlanarMapPair<'a> {
    g: MapFn<'a>,
    r: MapFn<'a>,
}

impl<'a> PlanarMapPair<'a> {
    pub fn new<G, R>(g: G, r: R) -> Self
    where
        G: Fn(PlanarPoint) -> Result<PlanarPoint> + Send + Sync + 'a,
        R: Fn(PlanarPoint) -> Result<PlanarPoint> + Send + Sync + 'a,
    {
        PlanarMapPair {
            g: Box::new(g),
            r: Box::new(r),
        }
    }

    /// An explicit map with the identity as chart.
    pub fn explicit<G>(g: G) -> Self
    where
        G: Fn(PlanarPoint) -> Result<PlanarPoint> + Send + Sync + 'a,
    {
        Self::new(g, Ok)
    }

    /// `g = R M^{l+1} L`, `r = R M^l L`.
    pub fn healed(map: &'a HealedMap) -> Self {
        let ell = map.config().ell;
        Self::new(move |x| map.forward_map(x, ell + 1), move |x| map.forward_map(x, ell))
    }

    pub fn g(&self, x: PlanarPoint) -> Result<PlanarPoint> {
        (self.g)(x)
    }

    pub fn r(&self, x: PlanarPoint) -> Result<PlanarPoint> {
        (self.r)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SCConfig {
    pub delta_init: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Largest accepted turning angle between consecutive segments (rad).
    pub alpha_max: f64,
    /// Accepted distance of `g(x)` from the polyline `S_R`.
    pub bisect_tol: f64,
    pub max_arclength: f64,
    pub max_points: usize,
    /// Length of the initial linear segment along the stable eigenvector.
    pub seed_offset: f64,
    /// Samples on the search arc before bisection.
    pub arc_samples: usize,
    /// Half-opening of the search arc around the previous direction (rad).
    pub arc_half_angle: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Growth stops once the curve leaves this box.
    pub bounds: Option<Rect>,
}

impl Default for SCConfig {
    fn default() -> Self {
        SCConfig {
            delta_init: 1e-3,
            delta_min: 1e-7,
            delta_max: 5e-3,
            alpha_max: 0.3,
            bisect_tol: 1e-9,
            max_arclength: 2.0,
            max_points: 20_000,
            seed_offset: 1e-3,
            arc_samples: 64,
            arc_half_angle: FRAC_PI_2,
            shrink: 0.5,
            grow: 1.2,
            bounds: None,
        }
    }
}

impl SCConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta_init && self.delta_init <= self.delta_max) {
            return Err(Error::config(
                "manifold.delta",
                "need 0 < delta_min <= delta_init <= delta_max",
            ));
        }
        if !(self.bisect_tol > 0.0) {
            return Err(Error::config("manifold.bisect_tol", "must be > 0"));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < std::f64::consts::PI) {
            return Err(Error::config("manifold.alpha_max", "must lie in (0, pi)"));
        }
        if !(self.seed_offset > 0.0 && self.max_arclength > 0.0) {
            return Err(Error::config("manifold.seed_offset", "lengths must be > 0"));
        }
        if self.arc_samples < 3 {
            return Err(Error::config("manifold.arc_samples", "need at least 3 samples"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow >= 1.0) {
            return Err(Error::config("manifold.shrink", "need 0 < shrink < 1 <= grow"));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxArclength,
    MaxPoints,
    LeftBounds,
    /// Curve assembled from other curves.
    Joined,
}

/// Paired point sequences approximating a stable manifold branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCurve {
    /// Domain-plane points `S_L`, starting at the saddle.
    pub left: Vec<PlanarPoint>,
    /// Chart images `S_R[j] = r(S_L[j])`.
    pub right: Vec<PlanarPoint>,
    /// Cumulative arclength of `S_L`.
    pub arclength: Vec<f64>,
    /// Search radius used for each point.
    pub delta_used: Vec<f64>,
    pub termination: Termination,
}

impl ManifoldCurve {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn total_arclength(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    /// Both branches through the saddle as one curve, running from the end
    /// of `minus` through the saddle to the end of `plus`.
    pub fn join(minus: &ManifoldCurve, plus: &ManifoldCurve) -> ManifoldCurve {
        let mut left: Vec<PlanarPoint> = minus.left.iter().rev().copied().collect();
        let mut right: Vec<PlanarPoint> = minus.right.iter().rev().copied().collect();
        let mut delta_used: Vec<f64> = minus.delta_used.iter().rev().copied().collect();
        left.extend(plus.left.iter().skip(1));
        right.extend(plus.right.iter().skip(1));
        delta_used.extend(plus.delta_used.iter().skip(1));
        let arclength = cumulative_length(&left);
        ManifoldCurve {
            left,
            right,
            arclength,
            delta_used,
            termination: Termination::Joined,
        }
    }

    /// Rows `index, xL1, xL2, xR1, xR2, arclength, delta_used`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let rows = (0..self.len()).map(|j| {
            vec![
                j.to_string(),
                output::real(self.left[j].x1),
                output::real(self.left[j].x2),
                output::real(self.right[j].x1),
                output::real(self.right[j].x2),
                output::real(self.arclength[j]),
                output::real(self.delta_used[j]),
            ]
        });
        output::csv_bytes(&CURVE_CSV_HEADER, rows)
    }

    /// Largest `|S_R[j] - r(S_L[j])|` in the max norm.
    pub fn pairing_error(&self, maps: &PlanarMapPair<'_>) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (l, r) in self.left.iter().zip(&self.right) {
            worst = worst.max(maps.r(*l)?.dist_inf(r));
        }
        Ok(worst)
    }

    /// Largest distance from `g(x)` to `S_R` over the vertices `x` of `S_L`,
    /// leaving out the linear seed point and vertices within `tail`
    /// arclength of the end.
    pub fn invariance_error(&self, maps: &PlanarMapPair<'_>, tail: f64) -> Result<f64> {
        let cut = self.total_arclength() - tail;
        let mut worst = 0.0_f64;
        for (j, (l, s)) in self.left.iter().zip(&self.arclength).enumerate() {
            if j == 1 {
                continue;
            }
            if *s > cut {
                break;
            }
            let image = maps.g(*l)?;
            let d = nearest(&self.right, image.to_vec())
                .map(|n| n.dist)
                .unwrap_or(f64::INFINITY);
            worst = worst.max(d);
        }
        Ok(worst)
    }

    /// Minimal distance from `p` to the polyline `S_L`.
    pub fn distance(&self, p: PlanarPoint) -> f64 {
        nearest(&self.left, p.to_vec()).map(|n| n.dist).unwrap_or(f64::INFINITY)
    }
}

fn cumulative_length(points: &[PlanarPoint]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += p.dist(&points[i - 1]);
        }
        out.push(acc);
    }
    out
}

struct Nearest {
    segment: usize,
    param: f64,
    dist: f64,
}

fn nearest(poly: &[PlanarPoint], p: Vec2) -> Option<Nearest> {
    let mut best: Option<Nearest> = None;
    for (k, w) in poly.windows(2).enumerate() {
        let (dist, param) = point_segment_distance(p, w[0].to_vec(), w[1].to_vec());
        if best.as_ref().is_none_or(|b| dist < b.dist) {
            best = Some(Nearest {
                segment: k,
                param,
                dist,
            });
        }
    }
    best
}

/// Signed distance from `p` to a polyline, positive to the left of the
/// polyline direction. `None` when the nearest point is an end of the
/// polyline, i.e. `p` is beyond its coverage.
fn signed_distance(poly: &[PlanarPoint], p: Vec2, on_tol: f64) -> Option<f64> {
    let n = nearest(poly, p)?;
    let last = poly.len() - 2;
    let at_start = n.segment == 0 && n.param <= 0.0;
    let at_end = n.segment == last && n.param >= 1.0;
    if (at_start || at_end) && n.dist > on_tol {
        return None;
    }
    let a = poly[n.segment].to_vec();
    let b = poly[n.segment + 1].to_vec();
    let d = b - a;
    let cross = d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0]);
    Some(if cross >= 0.0 { n.dist } else { -n.dist })
}

/// Grows one branch (`direction` = +1 or -1 along the stable eigenvector) of
/// the stable manifold of `saddle`.
pub fn grow_stable_manifold(
    saddle: &FixedPointRecord,
    direction: f64,
    maps: &PlanarMapPair<'_>,
    cfg: &SCConfig,
) -> Result<ManifoldCurve> {
    cfg.validate()?;
    if saddle.classification != Stability::Saddle {
        return Err(Error::Contract(format!(
            "stable manifold needs a saddle, got a {}",
            saddle.classification.as_str()
        )));
    }
    if direction != 1.0 && direction != -1.0 {
        return Err(Error::Contract("direction must be +1 or -1".into()));
    }
    let (_, v) = saddle.stable_direction()?;
    grow_from(saddle.point, v * direction, maps, cfg)
}

/// Grows a stable manifold branch from `origin` along the unit vector `dir`.
pub fn grow_from(origin: PlanarPoint, dir: Vec2, maps: &PlanarMapPair<'_>, cfg: &SCConfig) -> Result<ManifoldCurve> {
    cfg.validate()?;
    let first = PlanarPoint::from_vec(origin.to_vec() + dir.normalize() * cfg.seed_offset);
    let mut curve = ManifoldCurve {
        left: vec![origin, first],
        right: vec![maps.r(origin)?, maps.r(first)?],
        arclength: vec![0.0, cfg.seed_offset],
        delta_used: vec![0.0, cfg.seed_offset],
        termination: Termination::MaxPoints,
    };
    let mut delta = cfg.delta_init;
    loop {
        let k = curve.len() - 1;
        let last = curve.left[k];
        if curve.arclength[k] >= cfg.max_arclength {
            curve.termination = Termination::MaxArclength;
            return Ok(curve);
        }
        if curve.len() >= cfg.max_points {
            curve.termination = Termination::MaxPoints;
            return Ok(curve);
        }
        if cfg.bounds.is_some_and(|b| !b.contains(&last)) {
            curve.termination = Termination::LeftBounds;
            return Ok(curve);
        }
        let heading = (last.to_vec() - curve.left[k - 1].to_vec()).normalize();
        match search_arc(&curve, heading, delta, maps, cfg)? {
            Some((point, turn)) if turn <= cfg.alpha_max => {
                curve.left.push(point);
                curve.right.push(maps.r(point)?);
                curve.arclength.push(curve.arclength[k] + point.dist(&last));
                curve.delta_used.push(delta);
                if turn < cfg.alpha_max / 3.0 {
                    delta = (delta * cfg.grow).min(cfg.delta_max);
                }
            }
            _ => {
                let next = delta * cfg.shrink;
                if next < cfg.delta_min {
                    return Err(Error::Stall {
                        last,
                        curve: Box::new(curve),
                    });
                }
                delta = next;
            }
        }
    }
}

/// Point on the arc of radius `delta` around the last curve point whose image
/// lies on `S_R`, with the smallest turning angle. Returns the point and its
/// turning angle.
fn search_arc(
    curve: &ManifoldCurve,
    heading: Vec2,
    delta: f64,
    maps: &PlanarMapPair<'_>,
    cfg: &SCConfig,
) -> Result<Option<(PlanarPoint, f64)>> {
    let center = curve.left[curve.len() - 1].to_vec();
    let theta0 = heading[1].atan2(heading[0]);
    let at = |theta: f64| PlanarPoint::from_vec(center + Vec2::new(theta.cos(), theta.sin()) * delta);
    let on_tol = cfg.bisect_tol;
    let side = |theta: f64| -> Option<f64> {
        let image = maps.g(at(theta)).ok()?;
        signed_distance(&curve.right, image.to_vec(), on_tol)
    };

    let m = cfg.arc_samples;
    let angles: Vec<f64> = (0..m)
        .map(|i| theta0 + cfg.arc_half_angle * (2.0 * i as f64 / (m - 1) as f64 - 1.0))
        .collect();
    let values: Vec<Option<f64>> = angles.iter().map(|&a| side(a)).collect();

    let mut brackets: Vec<(f64, f64, f64, f64)> = Vec::new();
    for i in 0..m - 1 {
        if let (Some(a), Some(b)) = (values[i], values[i + 1]) {
            if a == 0.0 {
                brackets.push((angles[i], angles[i], a, a));
            } else if a.signum() != b.signum() {
                brackets.push((angles[i], angles[i + 1], a, b));
            }
        }
    }
    brackets.sort_by(|x, y| {
        let dx = (0.5 * (x.0 + x.1) - theta0).abs();
        let dy = (0.5 * (y.0 + y.1) - theta0).abs();
        dx.total_cmp(&dy)
    });

    for (mut lo, mut hi, mut f_lo, _) in brackets {
        let mut root = None;
        if lo == hi {
            root = Some(lo);
        }
        for _ in 0..200 {
            if root.is_some() {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let Some(f_mid) = side(mid) else { break };
            if f_mid.abs() <= cfg.bisect_tol {
                root = Some(mid);
            } else if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
            if (hi - lo) * delta < 1e-3 * cfg.bisect_tol {
                // converged onto a jump of the side function, not a crossing
                break;
            }
        }
        if let Some(theta) = root {
            let turn = (theta - theta0).abs();
            return Ok(Some((at(theta), turn)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Above,
    Below,
    On,
}

/// Tolerance for [`Side::On`].
pub const ON_CURVE_TOL: f64 = 1e-8;

/// Side of `p` relative to the nearest segment of `S_L`, taken along the
/// direction in which the curve is traversed: "above" is the left-hand side.
/// A branch grown towards increasing `x1`, or a joined curve whose `plus`
/// branch points that way, has "above" at larger `x2`. Using the traversal
/// direction keeps the sides consistent when the curve folds back.
pub fn point_side(curve: &ManifoldCurve, p: PlanarPoint) -> Result<Side> {
    if curve.len() < 2 {
        return Err(Error::Domain("curve needs at least 2 points".into()));
    }
    let pv = p.to_vec();
    let n = nearest(&curve.left, pv).expect("at least one segment");
    if n.dist <= ON_CURVE_TOL {
        return Ok(Side::On);
    }
    let last = curve.len() - 2;
    if (n.segment == 0 && n.param <= 0.0) || (n.segment == last && n.param >= 1.0) {
        return Err(Error::Uncovered { x1: p.x1, x2: p.x2 });
    }
    let a = curve.left[n.segment].to_vec();
    let d = curve.left[n.segment + 1].to_vec() - a;
    let cross = d[0] * (pv[1] - a[1]) - d[1] * (pv[0] - a[0]);
    Ok(if cross > 0.0 { Side::Above } else { Side::Below })
}

/// Symmetric Hausdorff distance between two polylines, sampled at the
/// vertices of each.
pub fn hausdorff(a: &[PlanarPoint], b: &[PlanarPoint]) -> f64 {
    let one_way = |from: &[PlanarPoint], to: &[PlanarPoint]| {
        from.iter()
            .map(|p| nearest(to, p.to_vec()).map(|n| n.dist).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat2;

    fn saddle_record(jac: Mat2) -> FixedPointRecord {
        let ev = crate::linalg::eigenvalues2(&jac);
        FixedPointRecord {
            point: PlanarPoint::new(0.0, 0.0),
            u: 0.0,
            tau: 0.0,
            period: 1,
            eigenvalues: ev,
            classification: Stability::classify(&ev),
            jacobian: [[jac[(0, 0)], jac[(0, 1)]], [jac[(1, 0)], jac[(1, 1)]]],
            residual: 0.0,
            iterations: 0,
        }
    }

    fn linear_pair() -> PlanarMapPair<'static> {
        PlanarMapPair::explicit(|p| Ok(PlanarPoint::new(0.5 * p.x1, 2.0 * p.x2)))
    }

    #[test]
    fn linear_saddle_axis() {
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            max_arclength: 2.0,
            delta_max: 0.05,
            ..Default::default()
        };
        let curve = grow_stable_manifold(&saddle, 1.0, &linear_pair(), &cfg).unwrap();
        assert_eq!(curve.termination, Termination::MaxArclength);
        assert!(curve.total_arclength() >= 2.0);
        let max_y = curve.left.iter().map(|p| p.x2.abs()).fold(0.0, f64::max);
        assert!(max_y < 1e-6, "max |y| = {max_y:e}");
        for j in 2..curve.len() {
            let spacing = curve.left[j].dist(&curve.left[j - 1]);
            assert!((spacing / curve.delta_used[j] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn non_saddle_rejected() {
        let sink = saddle_record(Mat2::new(0.5, 0.0, 0.0, 0.3));
        let err = grow_stable_manifold(&sink, 1.0, &linear_pair(), &SCConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            delta_min: 1.0,
            ..Default::default()
        };
        assert!(grow_stable_manifold(&saddle, 1.0, &linear_pair(), &cfg).is_err());
    }

    #[test]
    fn stall_reports_last_point() {
        // map without any bracketable intersection: images never reach S_R
        let pair = PlanarMapPair::explicit(|p| Ok(PlanarPoint::new(p.x1 + 5.0, p.x2 + 5.0)));
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            delta_min: 1e-4,
            ..Default::default()
        };
        match grow_stable_manifold(&saddle, 1.0, &pair, &cfg) {
            Err(Error::Stall { last, curve }) => {
                assert_eq!(curve.len(), 2);
                assert_eq!(last, curve.left[1]);
            }
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    #[test]
    fn side_of_axis_curve() {
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            max_arclength: 1.0,
            delta_max: 0.05,
            ..Default::default()
        };
        let curve = grow_stable_manifold(&saddle, 1.0, &linear_pair(), &cfg).unwrap();
        assert_eq!(point_side(&curve, PlanarPoint::new(0.5, 0.1)).unwrap(), Side::Above);
        assert_eq!(point_side(&curve, PlanarPoint::new(0.5, -0.1)).unwrap(), Side::Below);
        assert_eq!(point_side(&curve, curve.left[7]).unwrap(), Side::On);
        assert!(matches!(
            point_side(&curve, PlanarPoint::new(3.0, 0.1)),
            Err(Error::Uncovered { .. })
        ));
    }

    #[test]
    fn join_runs_through_saddle() {
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            max_arclength: 0.5,
            delta_max: 0.05,
            ..Default::default()
        };
        let plus = grow_stable_manifold(&saddle, 1.0, &linear_pair(), &cfg).unwrap();
        let minus = grow_stable_manifold(&saddle, -1.0, &linear_pair(), &cfg).unwrap();
        let joined = ManifoldCurve::join(&minus, &plus);
        assert_eq!(joined.len(), plus.len() + minus.len() - 1);
        assert_eq!(joined.left[minus.len() - 1], saddle.point);
        assert!(joined.left[0].x1 < -0.49 && joined.left[joined.len() - 1].x1 > 0.49);
        // left of the reversed minus branch is still "above"
        assert_eq!(point_side(&joined, PlanarPoint::new(-0.3, 0.05)).unwrap(), Side::Above);
    }

    #[test]
    fn folded_curve_sides_are_consistent() {
        // hairpin: out along y = 0, back along y = 1
        let left: Vec<PlanarPoint> = (0..=10)
            .map(|k| PlanarPoint::new(k as f64, 0.0))
            .chain((0..=10).rev().map(|k| PlanarPoint::new(k as f64, 1.0)))
            .collect();
        let n = left.len();
        let curve = ManifoldCurve {
            right: left.clone(),
            arclength: cumulative_length(&left),
            delta_used: vec![1.0; n],
            left,
            termination: Termination::Joined,
        };
        let inside_low = point_side(&curve, PlanarPoint::new(5.0, 0.2)).unwrap();
        let inside_high = point_side(&curve, PlanarPoint::new(5.0, 0.8)).unwrap();
        let outside = point_side(&curve, PlanarPoint::new(5.0, -0.2)).unwrap();
        assert_eq!(inside_low, Side::Above);
        assert_eq!(inside_low, inside_high);
        assert_ne!(inside_low, outside);
    }

    fn parabola_pair() -> PlanarMapPair<'static> {
        PlanarMapPair::explicit(|p| {
            Ok(PlanarPoint::new(
                0.5 * p.x1,
                2.0 * (p.x2 - p.x1 * p.x1) + 0.25 * p.x1 * p.x1,
            ))
        })
    }

    fn parabola_curve(direction: f64, delta_max: f64, arclength: f64) -> ManifoldCurve {
        let saddle = saddle_record(Mat2::new(0.5, 0.0, 0.0, 2.0));
        let cfg = SCConfig {
            max_arclength: arclength,
            delta_max,
            ..Default::default()
        };
        grow_stable_manifold(&saddle, direction, &parabola_pair(), &cfg).unwrap()
    }

    #[test]
    fn parabola_graph() {
        for dir in [1.0, -1.0] {
            let curve = parabola_curve(dir, SCConfig::default().delta_max, 2.0);
            assert_eq!(curve.termination, Termination::MaxArclength);
            let worst = curve
                .left
                .iter()
                .map(|p| (p.x2 - p.x1 * p.x1).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-5, "max |y - x^2| = {worst:e}");
            assert!(curve.left.last().unwrap().x1 * dir > 0.5);
        }
    }

    #[test]
    fn pairing_and_invariance_on_parabola() {
        let pair = parabola_pair();
        let curve = parabola_curve(1.0, 0.01, 1.0);
        assert!(curve.pairing_error(&pair).unwrap() < 1e-10);
        let tail = *curve.delta_used.last().unwrap();
        let cfg = SCConfig::default();
        assert!(curve.invariance_error(&pair, tail).unwrap() < 5.0 * cfg.bisect_tol);
    }

    #[test]
    fn refinement_converges() {
        let curves: Vec<ManifoldCurve> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&d| parabola_curve(1.0, d, 1.0))
            .collect();
        let d1 = hausdorff(&curves[0].left, &curves[1].left);
        let d2 = hausdorff(&curves[1].left, &curves[2].left);
        assert!(d2 <= 0.5 * d1, "{d1:e} -> {d2:e}");
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let curve = parabola_curve(1.0, 0.05, 0.3);
        let text = String::from_utf8(curve.to_csv().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,xL1,xL2,xR1,xR2,arclength,delta_used");
        assert_eq!(lines.count(), curve.len());
    }
}
