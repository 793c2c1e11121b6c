//! Batch experiments: response classification, amplitude heat maps, basin
//! grids, threshold scans over forcing phase and delay, bifurcation scans of
//! the small-amplitude orbit, and the step-amplitude scenario.
//!
//! Grid cells are computed in parallel and assembled by cell index, so
//! results do not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dde::{mae, Flow, HistoryVector, Integrator, ModelParams, Trajectory};
use crate::eqfree::{
    continue_fixed_points, gap_ratio, lift, Branch, ContinuationSettings, FixedPointRecord, HealedMap, HealedMapConfig,
    PlanarPoint, Rect,
};
use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;
use crate::output;

pub const DEFAULT_HORIZON_PERIODS: usize = 200;

/// Level whose upward crossing marks the large-amplitude response.
pub const DEFAULT_UPPER_LEVEL: f64 = 0.1;

/// Level whose downward crossing marks the large-amplitude response in the
/// amplitude-only rule.
pub const DEFAULT_LOWER_LEVEL: f64 = -1.0;

/// Constant history value of the small-amplitude state.
pub const SMALL_STATE: f64 = -0.5;

/// Decides between the small- and large-amplitude responses by watching for
/// the first crossing of a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Classifier {
    /// Large as soon as `X >= upper`.
    pub upper: Option<f64>,
    /// Large as soon as `X <= lower`.
    pub lower: Option<f64>,
    pub horizon_periods: usize,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier {
            upper: Some(DEFAULT_UPPER_LEVEL),
            lower: None,
            horizon_periods: DEFAULT_HORIZON_PERIODS,
        }
    }
}

impl Classifier {
    /// Rule that only looks at the depth of excursions, `X <= -1`.
    pub fn amplitude_only() -> Self {
        Classifier {
            upper: None,
            lower: Some(DEFAULT_LOWER_LEVEL),
            horizon_periods: DEFAULT_HORIZON_PERIODS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper.is_none() && self.lower.is_none() {
            return Err(Error::config("classifier", "needs an upper or a lower level"));
        }
        for v in [self.upper, self.lower].into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::config("classifier", "levels must be finite"));
            }
        }
        if let (Some(u), Some(l)) = (self.upper, self.lower) {
            if l >= u {
                return Err(Error::config("classifier.lower", "must lie below classifier.upper"));
            }
        }
        if self.horizon_periods == 0 {
            return Err(Error::config("classifier.horizon_periods", "must be >= 1"));
        }
        Ok(())
    }

    pub fn is_large(&self, x: f64) -> bool {
        self.upper.is_some_and(|u| x >= u) || self.lower.is_some_and(|l| x <= l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Small,
    Large,
    /// Reserved for classifiers that can abstain.
    Undecided,
}

impl Response {
    pub fn code(&self) -> i8 {
        match self {
            Response::Small => 0,
            Response::Large => 1,
            Response::Undecided => 2,
        }
    }
}

/// Code for cells whose computation failed.
pub const MISSING: i8 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseLabel {
    pub response: Response,
    /// Crossing time for `Large`, end of the horizon for `Small`.
    pub decision_time: f64,
    /// Extremes of `X` up to the decision.
    pub min_x: f64,
    pub max_x: f64,
}

/// Simulates from `history` for the classifier horizon. Only new points are
/// tested; the initial history itself never decides.
pub fn classify_response(
    integ: &Integrator,
    history: &HistoryVector,
    classifier: &Classifier,
) -> Result<ResponseLabel> {
    classifier.validate()?;
    let steps = classifier.horizon_periods * integ.steps_per_period()?;
    let mut min_x = history.head();
    let mut max_x = min_x;
    let mut crossing = None;
    let (end, _) = integ.run(history, steps, |t, x| {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        if classifier.is_large(x) {
            crossing = Some(t);
            Flow::Stop
        } else {
            Flow::Continue
        }
    })?;
    Ok(match crossing {
        Some(t) => ResponseLabel {
            response: Response::Large,
            decision_time: t,
            min_x,
            max_x,
        },
        None => ResponseLabel {
            response: Response::Small,
            decision_time: end.t(),
            min_x,
            max_x,
        },
    })
}

/// [`classify_response`] from the lifted planar initial condition.
pub fn classify_point(integ: &Integrator, x: PlanarPoint, classifier: &Classifier) -> Result<ResponseLabel> {
    let y = lift(x, integ.n(), integ.h())?;
    classify_response(integ, &y, classifier)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, values: Vec<f64>) -> Self {
        Axis {
            name: name.to_string(),
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Missing values are NaN and written as empty fields.
    Real,
    /// Small integer codes; missing is `-1`.
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

fn real_col(name: &str) -> Column {
    Column {
        name: name.to_string(),
        kind: ColumnKind::Real,
    }
}

fn label_col(name: &str) -> Column {
    Column {
        name: name.to_string(),
        kind: ColumnKind::Label,
    }
}

/// Values on a rectangular parameter grid, one row of columns per cell.
/// Cells are ordered with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub name: String,
    pub axes: Vec<Axis>,
    pub columns: Vec<Column>,
    pub values: Vec<Vec<f64>>,
    /// Every input needed to rerun the scan.
    pub provenance: serde_json::Value,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    name: &'a str,
    axes: &'a [Axis],
    columns: &'a [Column],
    cells: usize,
    provenance: &'a serde_json::Value,
}

impl ScanResult {
    pub fn new(
        name: &str,
        axes: Vec<Axis>,
        columns: Vec<Column>,
        values: Vec<Vec<f64>>,
        provenance: serde_json::Value,
    ) -> Result<Self> {
        let cells: usize = axes.iter().map(|a| a.values.len()).product();
        if values.len() != cells || values.iter().any(|row| row.len() != columns.len()) {
            return Err(Error::Domain(format!(
                "scan `{name}` has {} cells for a grid of {cells} and {} columns",
                values.len(),
                columns.len()
            )));
        }
        Ok(ScanResult {
            name: name.to_string(),
            axes,
            columns,
            values,
            provenance,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Flat cell index of a multi-index.
    pub fn cell(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.values.len() + i)
    }

    pub fn get(&self, index: &[usize], column: &str) -> Option<f64> {
        let c = self.column(column)?;
        let v = self.values[self.cell(index)][c];
        (!v.is_nan()).then_some(v)
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.values.len();
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    /// Long format: grid indices (`row`, `col`), axis values, then columns.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let index_names = ["row", "col", "layer"];
        let mut header: Vec<&str> = index_names.iter().take(self.axes.len()).copied().collect();
        header.extend(self.axes.iter().map(|a| a.name.as_str()));
        header.extend(self.columns.iter().map(|c| c.name.as_str()));
        let rows = self.values.iter().enumerate().map(|(flat, vals)| {
            let idx = self.multi_index(flat);
            let mut row: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            row.extend(idx.iter().zip(&self.axes).map(|(&i, a)| output::real(a.values[i])));
            row.extend(vals.iter().zip(&self.columns).map(|(&v, c)| match c.kind {
                ColumnKind::Real if v.is_nan() => String::new(),
                ColumnKind::Real => output::real(v),
                ColumnKind::Label if v.is_nan() => MISSING.to_string(),
                ColumnKind::Label => (v as i64).to_string(),
            }));
            row
        });
        output::csv_bytes(&header, rows)
    }

    pub fn sidecar_json(&self) -> Result<String> {
        output::to_json(&Sidecar {
            name: &self.name,
            axes: &self.axes,
            columns: &self.columns,
            cells: self.cell_count(),
            provenance: &self.provenance,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = self.to_csv()?;
        let json = self.sidecar_json()?;
        output::write_atomic(&dir.join(format!("{stem}.csv")), &csv)?;
        output::write_atomic(&dir.join(format!("{stem}.json")), json.as_bytes())
    }
}

fn label_value(label: &Result<ResponseLabel>) -> [f64; 4] {
    match label {
        Ok(l) => [l.response.code() as f64, l.decision_time, l.min_x, l.max_x],
        Err(_) => [MISSING as f64, f64::NAN, f64::NAN, f64::NAN],
    }
}

fn check_ascending(values: &[f64], field: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(field, "grid is empty"));
    }
    if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(field, "grid must be finite and strictly ascending"));
    }
    Ok(())
}

/// Per-period distance `mae(X_t, -0.5)` from the constant history `-0.5`
/// for each forcing amplitude. Axes `u` and `t`; after a failed integration
/// the remaining cells of the row are missing.
pub fn heatmap_u(
    u_grid: &[f64],
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    horizon_periods: usize,
) -> Result<ScanResult> {
    check_ascending(u_grid, "u_grid")?;
    if horizon_periods == 0 {
        return Err(Error::config("horizon_periods", "must be >= 1"));
    }
    let probe = Integrator::new(params.with_u(u_grid[0]), forcing.clone(), h)?;
    let period = probe.period()?;
    let rows: Vec<Result<Vec<Vec<f64>>>> = u_grid
        .par_iter()
        .map(|&u| {
            let integ = Integrator::new(params.with_u(u), forcing.clone(), h)?;
            let reference = integ.constant_history(SMALL_STATE)?;
            let mut y = reference.clone();
            let mut row = Vec::with_capacity(horizon_periods);
            for _ in 0..horizon_periods {
                match integ.strobe_map(&y, 1) {
                    Ok(next) => {
                        row.push(vec![mae(&next, &reference)?]);
                        y = next;
                    }
                    Err(e) if e.is_numerical() => break,
                    Err(e) => return Err(e),
                }
            }
            row.resize(horizon_periods, vec![f64::NAN]);
            Ok(row)
        })
        .collect();
    let mut values = Vec::with_capacity(u_grid.len() * horizon_periods);
    for row in rows {
        values.extend(row?);
    }
    let times = (1..=horizon_periods).map(|k| k as f64 * period).collect();
    ScanResult::new(
        "heatmap",
        vec![Axis::new("u", u_grid.to_vec()), Axis::new("t", times)],
        vec![real_col("mae")],
        values,
        json!({
            "operation": "heatmap",
            "u_grid": u_grid,
            "params": params,
            "forcing": forcing,
            "h": h,
            "horizon_periods": horizon_periods,
            "history": SMALL_STATE,
        }),
    )
}

/// Healing configuration for scans of the small-amplitude orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitTracking {
    pub ell: usize,
    /// Largest continuation step in `u`.
    pub du: f64,
    pub du_min: f64,
}

impl Default for OrbitTracking {
    fn default() -> Self {
        OrbitTracking {
            ell: 1,
            du: 0.01,
            du_min: 1e-5,
        }
    }
}

/// Fixed points of the healed map on the small-amplitude branch at each
/// target amplitude, continued from the most negative unforced equilibrium.
/// Once the branch is lost the remaining targets are `None`.
pub fn track_small_orbit(
    base: &HealedMapConfig,
    u_targets: &[f64],
    tracking: &OrbitTracking,
) -> Result<Vec<Option<FixedPointRecord>>> {
    if u_targets.iter().any(|&u| !(u >= 0.0)) || u_targets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("u_grid", "amplitudes must be >= 0 and ascending"));
    }
    let start = base.params.unforced_equilibria()[0];
    let cfg = base.with_u(0.0).with_ell(tracking.ell);
    let map = HealedMap::new(cfg.clone())?;
    let mut current = match map.fixed_point(PlanarPoint::new(start, start)) {
        Ok(rec) => rec,
        Err(e) if e.is_numerical() => return Ok(vec![None; u_targets.len()]),
        Err(e) => return Err(e),
    };
    let mut out = Vec::with_capacity(u_targets.len());
    let mut lost = false;
    for &u in u_targets {
        if !lost {
            let branch = continue_fixed_points(
                &current,
                &cfg,
                ContinuationSettings {
                    u_end: u,
                    du: tracking.du,
                    du_min: tracking.du_min,
                },
            )?;
            if branch.is_complete() {
                current = branch.records.last().expect("seed is always recorded").clone();
            } else {
                lost = true;
            }
        }
        out.push(if lost { None } else { Some(current.clone()) });
    }
    Ok(out)
}

/// Basin labels of lifted initial conditions plus the small-orbit fixed
/// point for overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinScan {
    pub grid: ScanResult,
    pub sink: Option<FixedPointRecord>,
}

/// Classifies `L(x1, x2)` on an `nx` by `ny` grid over `rect`. Axes `x1`,
/// `x2`; columns `label`, `decision_time`, `min_x`, `max_x`.
pub fn basin_scan(
    rect: &Rect,
    nx: usize,
    ny: usize,
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    classifier: &Classifier,
) -> Result<BasinScan> {
    rect.validate()?;
    classifier.validate()?;
    if nx < 2 || ny < 2 {
        return Err(Error::config("grid", "nx and ny must be >= 2"));
    }
    let integ = Integrator::new(*params, forcing.clone(), h)?;
    integ.steps_per_period()?;
    let values: Vec<Vec<f64>> = (0..nx * ny)
        .into_par_iter()
        .map(|flat| {
            let x = rect.node(flat / ny, flat % ny, nx, ny);
            label_value(&classify_point(&integ, x, classifier)).to_vec()
        })
        .collect();
    let sink = {
        let base = HealedMapConfig {
            params: *params,
            forcing: forcing.clone(),
            h,
            ..HealedMapConfig::default()
        };
        match HealedMap::new(base.clone()) {
            Ok(_) => track_small_orbit(&base, &[params.u], &OrbitTracking::default())?
                .pop()
                .flatten(),
            Err(_) => None,
        }
    };
    let axis = |n: usize, lo: f64, hi: f64| (0..n).map(|i| crate::eqfree::lerp(lo, hi, i, n)).collect();
    let grid = ScanResult::new(
        "basin",
        vec![
            Axis::new("x1", axis(nx, rect.x1_min, rect.x1_max)),
            Axis::new("x2", axis(ny, rect.x2_min, rect.x2_max)),
        ],
        vec![
            label_col("label"),
            real_col("decision_time"),
            real_col("min_x"),
            real_col("max_x"),
        ],
        values,
        json!({
            "operation": "basin",
            "rect": rect,
            "nx": nx,
            "ny": ny,
            "params": params,
            "forcing": forcing,
            "h": h,
            "classifier": classifier,
        }),
    )?;
    Ok(BasinScan { grid, sink })
}

/// Search grid `u = k du`, `k = 0..=round(u_max / du)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSearch {
    /// Also the value reported when no transition occurs.
    pub u_max: f64,
    pub du: f64,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        ThresholdSearch { u_max: 1.0, du: 0.005 }
    }
}

impl ThresholdSearch {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.du > 0.0 && self.u_max >= self.du) {
            return Err(Error::config("u_search", "need 0 < du <= u_max"));
        }
        let k = (self.u_max / self.du).round() as usize;
        Ok((0..=k).map(|i| i as f64 * self.du).collect())
    }
}

/// Smallest `u` on the search grid for which the constant history `-0.5`
/// classifies as large, or `None`.
pub fn amplitude_threshold(
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    search: &ThresholdSearch,
    classifier: &Classifier,
) -> Result<Option<f64>> {
    for u in search.grid()? {
        let integ = Integrator::new(params.with_u(u), forcing.clone(), h)?;
        let y = integ.constant_history(SMALL_STATE)?;
        let label = match classify_response(&integ, &y, classifier) {
            Ok(l) => l.response,
            // blow-up only happens after leaving the small orbit
            Err(e) if e.is_numerical() => Response::Large,
            Err(e) => return Err(e),
        };
        if label == Response::Large {
            return Ok(Some(u));
        }
    }
    Ok(None)
}

/// Threshold amplitude on a (phase, delay) grid with periodic forcing of
/// period `period`. Axes `phi`, `tau`; columns `threshold` (the sentinel
/// `u_max` when no transition occurs) and `transition` (1 if found).
pub fn phase_threshold_scan(
    phi_grid: &[f64],
    tau_grid: &[f64],
    search: &ThresholdSearch,
    params: &ModelParams,
    period: f64,
    h: f64,
    classifier: &Classifier,
) -> Result<ScanResult> {
    check_ascending(phi_grid, "phi_grid")?;
    check_ascending(tau_grid, "tau_grid")?;
    classifier.validate()?;
    search.grid()?;
    for &tau in tau_grid {
        Integrator::new(params.with_tau(tau), ForcingSpec::periodic(period, 0.0), h)?;
    }
    let nt = tau_grid.len();
    let cells: Vec<Result<Vec<f64>>> = (0..phi_grid.len() * nt)
        .into_par_iter()
        .map(|flat| {
            let forcing = ForcingSpec::periodic(period, phi_grid[flat / nt]);
            let p = params.with_tau(tau_grid[flat % nt]);
            Ok(match amplitude_threshold(&p, &forcing, h, search, classifier)? {
                Some(u) => vec![u, 1.0],
                None => vec![search.u_max, 0.0],
            })
        })
        .collect();
    let values = cells.into_iter().collect::<Result<Vec<_>>>()?;
    ScanResult::new(
        "phase_scan",
        vec![Axis::new("phi", phi_grid.to_vec()), Axis::new("tau", tau_grid.to_vec())],
        vec![real_col("threshold"), label_col("transition")],
        values,
        json!({
            "operation": "phase_scan",
            "phi_grid": phi_grid,
            "tau_grid": tau_grid,
            "u_search": search,
            "params": params,
            "period": period,
            "h": h,
            "classifier": classifier,
            "history": SMALL_STATE,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationConfig {
    pub tracking: OrbitTracking,
    /// Step used while bisecting a period-doubling in `tau`.
    pub refine_h: f64,
    /// Bracket width at which bisection stops.
    pub tau_tol: f64,
    /// Highest orbit period searched past doublings.
    pub max_period: usize,
    /// Periods simulated before reading seeds for doubled orbits.
    pub transient_periods: usize,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        BifurcationConfig {
            tracking: OrbitTracking::default(),
            refine_h: 1e-3,
            tau_tol: 1e-3,
            max_period: 4,
            transient_periods: 50,
        }
    }
}

impl BifurcationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tracking.ell == 0 {
            return Err(Error::config("bifurcation.tracking.ell", "must be >= 1"));
        }
        if !(self.refine_h > 0.0 && self.tau_tol > 0.0) {
            return Err(Error::config("bifurcation.refine_h", "steps must be > 0"));
        }
        crate::dde::aligned_steps(self.tau_tol, self.refine_h, "bifurcation.tau_tol")?;
        if !self.max_period.is_power_of_two() {
            return Err(Error::config("bifurcation.max_period", "must be a power of two"));
        }
        Ok(())
    }
}

/// Smallest real multiplier plus one; negative past a period-doubling.
/// `None` for a complex pair.
pub fn flip_indicator(rec: &FixedPointRecord) -> Option<f64> {
    rec.eigenvalues
        .iter()
        .filter(|l| l.im == 0.0)
        .map(|l| l.re)
        .min_by(f64::total_cmp)
        .map(|l| l + 1.0)
}

/// A multiplier crossing `-1` between `tau_lo` and `tau_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodDoubling {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub multiplier_lo: f64,
    pub multiplier_hi: f64,
    /// False when the bracket could not be refined at the fine step.
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationScan {
    pub result: ScanResult,
    pub doublings: Vec<PeriodDoubling>,
}

#[derive(Debug, Clone)]
struct OrbitSummary {
    base: Option<FixedPointRecord>,
    period: usize,
    orbit_min: f64,
    orbit_max: f64,
}

fn small_orbit_config(
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    tracking: &OrbitTracking,
) -> HealedMapConfig {
    HealedMapConfig {
        ell: tracking.ell,
        params: *params,
        forcing: forcing.clone(),
        h,
        ..HealedMapConfig::default()
    }
}

/// Period-`2m` point near the unstable period-`m` point `rec`, seeded from
/// the attractor reached by simulation.
fn doubled_orbit(map: &HealedMap, rec: &FixedPointRecord, transient: usize) -> Option<FixedPointRecord> {
    let integ = map.integrator();
    let flip = rec
        .eigenvalues
        .iter()
        .filter(|l| l.im == 0.0)
        .map(|l| l.re)
        .min_by(f64::total_cmp)?;
    let v = crate::linalg::eigenvector2(&rec.jacobian_matrix(), flip);
    let start = PlanarPoint::from_vec(rec.point.to_vec() + v * 1e-3);
    let ell = map.config().ell;
    let y = integ
        .strobe_map(&map.lift(start).ok()?, (ell + transient) * rec.period)
        .ok()?;
    let chart = map.forward_map(rec.point, ell).ok()?;
    // offset of the attractor from the unstable orbit, carried back to the
    // domain plane through the chart
    let offset = crate::eqfree::restrict(&y).to_vec() - chart.to_vec();
    let j = map.jacobian(rec.point, ell).ok()?;
    let back = j.try_inverse()? * offset;
    let seed = PlanarPoint::from_vec(rec.point.to_vec() + back);
    let doubled = map.periodic_point(seed, 2 * rec.period).ok()?;
    (doubled.point.dist_inf(&rec.point) > 1e-6).then_some(doubled)
}

fn summarize_orbit(map: &HealedMap, rec: Option<FixedPointRecord>, cfg: &BifurcationConfig) -> OrbitSummary {
    let Some(base) = rec else {
        return OrbitSummary {
            base: None,
            period: 0,
            orbit_min: f64::NAN,
            orbit_max: f64::NAN,
        };
    };
    let mut top = base.clone();
    while top.period < cfg.max_period && flip_indicator(&top).is_some_and(|f| f < 0.0) {
        match doubled_orbit(map, &top, cfg.transient_periods) {
            Some(next) => top = next,
            None => break,
        }
    }
    let ell = map.config().ell;
    let extremes = (|| -> Result<(f64, f64)> {
        let integ = map.integrator();
        let y = integ.strobe_map(&map.lift(top.point)?, ell)?;
        let span = top.period as f64 * integ.period()?;
        let (traj, _) = integ.trajectory(&y, span)?;
        Ok((traj.min(), traj.max()))
    })();
    let (orbit_min, orbit_max) = extremes.unwrap_or((f64::NAN, f64::NAN));
    OrbitSummary {
        base: Some(base),
        period: top.period,
        orbit_min,
        orbit_max,
    }
}

fn orbit_row(s: &OrbitSummary) -> Vec<f64> {
    match &s.base {
        Some(r) => {
            let max_abs = r.eigenvalues[1].norm();
            vec![
                r.point.x1,
                r.point.x2,
                r.eigenvalues[0].re,
                r.eigenvalues[0].im,
                r.eigenvalues[1].re,
                r.eigenvalues[1].im,
                max_abs,
                r.classification.code() as f64,
                s.period as f64,
                s.orbit_min,
                s.orbit_max,
            ]
        }
        None => {
            let mut row = vec![f64::NAN; 11];
            row[7] = MISSING as f64;
            row[8] = f64::NAN;
            row
        }
    }
}

fn orbit_columns() -> Vec<Column> {
    vec![
        real_col("x1"),
        real_col("x2"),
        real_col("lambda1_re"),
        real_col("lambda1_im"),
        real_col("lambda2_re"),
        real_col("lambda2_im"),
        real_col("max_abs_multiplier"),
        label_col("stability"),
        label_col("period"),
        real_col("orbit_min"),
        real_col("orbit_max"),
    ]
}

/// Small-orbit fixed point at one `tau` with the fine step, seeded from `seed`.
fn refined_record(
    params: &ModelParams,
    forcing: &ForcingSpec,
    cfg: &BifurcationConfig,
    tau: f64,
    seed: PlanarPoint,
) -> Option<FixedPointRecord> {
    let hc = small_orbit_config(&params.with_tau(tau), forcing, cfg.refine_h, &cfg.tracking);
    HealedMap::new(hc).ok()?.fixed_point(seed).ok()
}

fn refine_doubling(
    params: &ModelParams,
    forcing: &ForcingSpec,
    cfg: &BifurcationConfig,
    lo: &FixedPointRecord,
    hi: &FixedPointRecord,
) -> PeriodDoubling {
    let coarse = PeriodDoubling {
        tau_lo: lo.tau,
        tau_hi: hi.tau,
        multiplier_lo: flip_indicator(lo).unwrap_or(f64::NAN) - 1.0,
        multiplier_hi: flip_indicator(hi).unwrap_or(f64::NAN) - 1.0,
        refined: false,
    };
    let mut k_lo = (lo.tau / cfg.tau_tol).round() as i64;
    let mut k_hi = (hi.tau / cfg.tau_tol).round() as i64;
    let tau_at = |k: i64| k as f64 * cfg.tau_tol;
    let (Some(mut r_lo), Some(mut r_hi)) = (
        refined_record(params, forcing, cfg, tau_at(k_lo), lo.point),
        refined_record(params, forcing, cfg, tau_at(k_hi), hi.point),
    ) else {
        return coarse;
    };
    let sign = |r: &FixedPointRecord| flip_indicator(r).map(f64::signum);
    let (Some(s_lo), Some(s_hi)) = (sign(&r_lo), sign(&r_hi)) else {
        return coarse;
    };
    if s_lo == s_hi {
        return coarse;
    }
    while k_hi - k_lo > 1 {
        let k_mid = (k_lo + k_hi) / 2;
        let seed = if k_mid - k_lo <= k_hi - k_mid {
            r_lo.point
        } else {
            r_hi.point
        };
        let Some(r_mid) = refined_record(params, forcing, cfg, tau_at(k_mid), seed) else {
            break;
        };
        match sign(&r_mid) {
            Some(s) if s == s_lo => {
                k_lo = k_mid;
                r_lo = r_mid;
            }
            Some(_) => {
                k_hi = k_mid;
                r_hi = r_mid;
            }
            None => break,
        }
    }
    PeriodDoubling {
        tau_lo: tau_at(k_lo),
        tau_hi: tau_at(k_hi),
        multiplier_lo: flip_indicator(&r_lo).unwrap_or(f64::NAN) - 1.0,
        multiplier_hi: flip_indicator(&r_hi).unwrap_or(f64::NAN) - 1.0,
        refined: k_hi - k_lo <= 1,
    }
}

/// Small-amplitude orbit along `tau_grid` at fixed `u`: healed-map fixed
/// point and multipliers, period found past doublings and orbit extremes.
/// Multiplier crossings of `-1` between neighbouring grid values are
/// bisected in `tau` with the fine step.
pub fn bifurcation_scan_1d(
    tau_grid: &[f64],
    u: f64,
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    cfg: &BifurcationConfig,
) -> Result<BifurcationScan> {
    check_ascending(tau_grid, "tau_grid")?;
    cfg.validate()?;
    let configs: Vec<HealedMapConfig> = tau_grid
        .iter()
        .map(|&tau| small_orbit_config(&params.with_tau(tau), forcing, h, &cfg.tracking))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let summaries: Vec<Result<OrbitSummary>> = configs
        .par_iter()
        .map(|base| {
            let rec = track_small_orbit(base, &[u], &cfg.tracking)?.pop().flatten();
            let map = HealedMap::new(base.with_u(u))?;
            Ok(summarize_orbit(&map, rec, cfg))
        })
        .collect();
    let summaries = summaries.into_iter().collect::<Result<Vec<_>>>()?;

    let brackets: Vec<(FixedPointRecord, FixedPointRecord)> = summaries
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].base.as_ref()?, w[1].base.as_ref()?);
            let (fa, fb) = (flip_indicator(a)?, flip_indicator(b)?);
            (fa.signum() != fb.signum()).then(|| (a.clone(), b.clone()))
        })
        .collect();
    let doublings: Vec<PeriodDoubling> = brackets
        .par_iter()
        .map(|(a, b)| refine_doubling(&params.with_u(u), forcing, cfg, a, b))
        .collect();

    let values = summaries.iter().map(orbit_row).collect();
    let result = ScanResult::new(
        "bifurcation",
        vec![Axis::new("tau", tau_grid.to_vec())],
        orbit_columns(),
        values,
        json!({
            "operation": "bifurcation",
            "tau_grid": tau_grid,
            "u": u,
            "params": params,
            "forcing": forcing,
            "h": h,
            "config": cfg,
        }),
    )?;
    Ok(BifurcationScan { result, doublings })
}

/// Stability of the small orbit on a (tau, u) grid, with one bisection level
/// in `u` wherever the class changes between neighbouring cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryScan {
    pub grid: ScanResult,
    /// Axis `index`; columns `tau`, `u_lo`, `u_hi`, `u_mid`, `stability`,
    /// `max_abs_multiplier` at the midpoint.
    pub refined: ScanResult,
}

/// Grid columns: `stability`, `max_abs_multiplier`, `flip` (1 when a real
/// multiplier lies below `-1`).
pub fn bifurcation_boundary_2d(
    tau_grid: &[f64],
    u_grid: &[f64],
    params: &ModelParams,
    forcing: &ForcingSpec,
    h: f64,
    cfg: &BifurcationConfig,
) -> Result<BoundaryScan> {
    check_ascending(tau_grid, "tau_grid")?;
    check_ascending(u_grid, "u_grid")?;
    cfg.validate()?;
    let configs: Vec<HealedMapConfig> = tau_grid
        .iter()
        .map(|&tau| small_orbit_config(&params.with_tau(tau), forcing, h, &cfg.tracking))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let cell = |r: &Option<FixedPointRecord>| -> Vec<f64> {
        match r {
            Some(r) => vec![
                r.classification.code() as f64,
                r.eigenvalues[1].norm(),
                if flip_indicator(r).is_some_and(|f| f < 0.0) {
                    1.0
                } else {
                    0.0
                },
            ],
            None => vec![MISSING as f64, f64::NAN, MISSING as f64],
        }
    };
    type Row = (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let rows: Vec<Result<Row>> = configs
        .par_iter()
        .zip(tau_grid.par_iter())
        .map(|(base, &tau)| {
            let records = track_small_orbit(base, u_grid, &cfg.tracking)?;
            let mut refined = Vec::new();
            for j in 0..u_grid.len().saturating_sub(1) {
                let (Some(a), Some(b)) = (&records[j], &records[j + 1]) else {
                    continue;
                };
                if a.classification == b.classification {
                    continue;
                }
                let mid = 0.5 * (u_grid[j] + u_grid[j + 1]);
                let branch = continue_fixed_points(
                    a,
                    base,
                    ContinuationSettings {
                        u_end: mid,
                        du: cfg.tracking.du,
                        du_min: cfg.tracking.du_min,
                    },
                )?;
                let rec = branch.is_complete().then(|| branch.records.last().cloned()).flatten();
                let c = cell(&rec);
                refined.push(vec![tau, u_grid[j], u_grid[j + 1], mid, c[0], c[1]]);
            }
            Ok((records.iter().map(cell).collect(), refined))
        })
        .collect();
    let mut values = Vec::new();
    let mut refined = Vec::new();
    for row in rows {
        let (v, r) = row?;
        values.extend(v);
        refined.extend(r);
    }
    let provenance = json!({
        "operation": "bifurcation_boundary",
        "tau_grid": tau_grid,
        "u_grid": u_grid,
        "params": params,
        "forcing": forcing,
        "h": h,
        "config": cfg,
    });
    let grid = ScanResult::new(
        "bifurcation_boundary",
        vec![Axis::new("tau", tau_grid.to_vec()), Axis::new("u", u_grid.to_vec())],
        vec![
            label_col("stability"),
            real_col("max_abs_multiplier"),
            label_col("flip"),
        ],
        values,
        provenance.clone(),
    )?;
    let refined = ScanResult::new(
        "bifurcation_boundary_refined",
        vec![Axis::new("index", (0..refined.len()).map(|i| i as f64).collect())],
        vec![
            real_col("tau"),
            real_col("u_lo"),
            real_col("u_hi"),
            real_col("u_mid"),
            label_col("stability"),
            real_col("max_abs_multiplier"),
        ],
        refined,
        provenance,
    )?;
    Ok(BoundaryScan { grid, refined })
}

/// Singular values of the full stroboscopic Jacobian and the chart
/// determinant on a grid. Columns `sigma1..sigma4`, `gap_ratio`
/// (`sigma3 / sigma2`) and `chart_det`.
pub fn spectral_gap_grid(map: &HealedMap, rect: &Rect, nx: usize, ny: usize) -> Result<ScanResult> {
    rect.validate()?;
    if nx < 1 || ny < 1 {
        return Err(Error::config("grid", "nx and ny must be >= 1"));
    }
    let node = |flat: usize| {
        if nx == 1 || ny == 1 {
            let i = if nx == 1 { 0 } else { flat / ny };
            let j = if ny == 1 { 0 } else { flat % ny };
            PlanarPoint::new(
                if nx == 1 {
                    0.5 * (rect.x1_min + rect.x1_max)
                } else {
                    crate::eqfree::lerp(rect.x1_min, rect.x1_max, i, nx)
                },
                if ny == 1 {
                    0.5 * (rect.x2_min + rect.x2_max)
                } else {
                    crate::eqfree::lerp(rect.x2_min, rect.x2_max, j, ny)
                },
            )
        } else {
            rect.node(flat / ny, flat % ny, nx, ny)
        }
    };
    let values: Vec<Vec<f64>> = (0..nx * ny)
        .into_par_iter()
        .map(|flat| {
            let x = node(flat);
            let mut row = vec![f64::NAN; 6];
            if let Ok(sv) = map.singular_values(x) {
                for (k, s) in sv.iter().take(4).enumerate() {
                    row[k] = *s;
                }
                row[4] = gap_ratio(&sv).unwrap_or(f64::NAN);
            }
            row[5] = map.jacobian(x, 1).map(|j| j.determinant()).unwrap_or(f64::NAN);
            row
        })
        .collect();
    let x1s = (0..nx).map(|i| node(i * ny).x1).collect();
    let x2s = (0..ny).map(|j| node(j).x2).collect();
    ScanResult::new(
        "spectral_gap",
        vec![Axis::new("x1", x1s), Axis::new("x2", x2s)],
        vec![
            real_col("sigma1"),
            real_col("sigma2"),
            real_col("sigma3"),
            real_col("sigma4"),
            real_col("gap_ratio"),
            real_col("chart_det"),
        ],
        values,
        json!({
            "operation": "spectral_gap",
            "rect": rect,
            "nx": nx,
            "ny": ny,
            "healing": map.config(),
        }),
    )
}

/// One row per continuation step: `x1`, `x2`, multipliers, `stability`,
/// `period`, `residual`, `iterations` against the axis `u`.
pub fn branch_table(branch: &Branch, provenance: serde_json::Value) -> Result<ScanResult> {
    let us = branch.records.iter().map(|r| r.u).collect();
    let values = branch
        .records
        .iter()
        .map(|r| {
            vec![
                r.point.x1,
                r.point.x2,
                r.eigenvalues[0].re,
                r.eigenvalues[0].im,
                r.eigenvalues[1].re,
                r.eigenvalues[1].im,
                r.classification.code() as f64,
                r.period as f64,
                r.residual,
                r.iterations as f64,
            ]
        })
        .collect();
    // `u` values along a branch need not be distinct or sorted
    ScanResult::new(
        "fixed_points",
        vec![Axis::new("u", us)],
        vec![
            real_col("x1"),
            real_col("x2"),
            real_col("lambda1_re"),
            real_col("lambda1_im"),
            real_col("lambda2_re"),
            real_col("lambda2_im"),
            label_col("stability"),
            label_col("period"),
            real_col("residual"),
            label_col("iterations"),
        ],
        values,
        provenance,
    )
}

/// Converts thousands of years before present to model time.
pub fn model_time_from_kyr_bp(kyr_bp: f64) -> f64 {
    (2000.0 - kyr_bp) / 10.0
}

/// Inputs of the step-amplitude scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MptScenario {
    /// Model time of the amplitude switch.
    pub t_switch: f64,
    pub scale_before: f64,
    pub u_end: f64,
    pub t_end: f64,
}

impl Default for MptScenario {
    fn default() -> Self {
        MptScenario {
            t_switch: model_time_from_kyr_bp(750.0),
            scale_before: 0.01,
            u_end: 0.15,
            t_end: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MptRun {
    pub trajectory: Trajectory,
    pub transition_time: Option<f64>,
    pub forcing: ForcingSpec,
}

/// Simulates from the constant history `-0.5` at `t = 0` with amplitude
/// `u_end` scaled by `scale_before` until `t_switch` and by one after.
/// The transition is the first crossing of a classifier level.
pub fn mpt_scenario(
    scenario: &MptScenario,
    params: &ModelParams,
    base: &ForcingSpec,
    h: f64,
    classifier: &Classifier,
) -> Result<MptRun> {
    classifier.validate()?;
    if !(scenario.t_end > scenario.t_switch && scenario.t_switch >= 0.0) {
        return Err(Error::config(
            "scenario.t_switch",
            "simulation span [0, t_end] must cover t_switch",
        ));
    }
    let forcing = ForcingSpec::StepAmplitudeScale {
        t_switch: scenario.t_switch,
        scale_before: scenario.scale_before,
        scale_after: 1.0,
        base: Box::new(base.clone()),
    };
    let integ = Integrator::new(params.with_u(scenario.u_end), forcing.clone(), h)?;
    let y = integ.constant_history(SMALL_STATE)?;
    let (trajectory, _) = integ.trajectory(&y, scenario.t_end)?;
    let transition_time = trajectory
        .iter()
        .skip(1)
        .find(|&(_, x)| classifier.is_large(x))
        .map(|(t, _)| t);
    Ok(MptRun {
        trajectory,
        transition_time,
        forcing,
    })
}

/// Rows `t, x` with a `t`-only axis.
pub fn trajectory_table(trajectory: &Trajectory, provenance: serde_json::Value) -> Result<ScanResult> {
    let times = (0..trajectory.samples.len()).map(|k| trajectory.time(k)).collect();
    let values = trajectory.samples.iter().map(|&x| vec![x]).collect();
    ScanResult::new(
        "trajectory",
        vec![Axis::new("t", times)],
        vec![real_col("x")],
        values,
        provenance,
    )
}
