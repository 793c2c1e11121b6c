//! Fixed-step Euler-Heun integration of the scalar delay equation
//!
//! ```text
//! X'(t) = -p X(t-tau) + r X(t) - s X(t-tau)^2 - X(t-tau)^2 X(t) - u F(t)
//! ```
//!
//! on a uniform grid aligned with the delay, so the delayed value is always
//! an exact grid sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;

/// Default integration step (model time units of 10 kyr).
pub const DEFAULT_STEP: f64 = 0.01;

/// Integration aborts once `|X|` exceeds this bound.
pub const BLOWUP_BOUND: f64 = 1e3;

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub p: f64,
    pub r: f64,
    pub s: f64,
    /// Delay in model time units.
    pub tau: f64,
    /// Forcing amplitude.
    pub u: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            p: 0.95,
            r: 0.8,
            s: 0.8,
            tau: 1.55,
            u: 0.0,
        }
    }
}

impl ModelParams {
    pub fn with_tau(self, tau: f64) -> Self {
        ModelParams { tau, ..self }
    }

    pub fn with_u(self, u: f64) -> Self {
        ModelParams { u, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("params.p", self.p),
            ("params.r", self.r),
            ("params.s", self.s),
            ("params.tau", self.tau),
            ("params.u", self.u),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if self.tau <= 0.0 {
            return Err(Error::config("params.tau", "must be > 0"));
        }
        Ok(())
    }

    /// Equilibria of the unforced equation, roots of
    /// `x (x^2 + s x + p - r) = 0`, in ascending order.
    pub fn unforced_equilibria(&self) -> Vec<f64> {
        let disc = self.s * self.s - 4.0 * (self.p - self.r);
        let mut roots = vec![0.0];
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push(0.5 * (-self.s - sq));
            roots.push(0.5 * (-self.s + sq));
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }
}

/// Right-hand side `f(t, x1, x2)` with `x1 = X(t)` and `x2 = X(t - tau)`.
pub fn rhs(t: f64, x1: f64, x2: f64, params: &ModelParams, forcing: &ForcingSpec) -> Result<f64> {
    if !(t.is_finite() && x1.is_finite() && x2.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite rhs argument (t = {t}, x1 = {x1}, x2 = {x2})"
        )));
    }
    field(t, x1, x2, params, forcing)
}

#[inline]
fn field(t: f64, x1: f64, x2: f64, params: &ModelParams, forcing: &ForcingSpec) -> Result<f64> {
    let x2sq = x2 * x2;
    Ok(-params.p * x2 + params.r * x1 - params.s * x2sq - x2sq * x1 - params.u * forcing.eval(t)?)
}

/// Discretized state: `values[0]` is `X(t - tau)`, the last entry is the head
/// point `X(t)`.
///
/// Time is stored as `origin + step * h` so that splitting an integration
/// into pieces reproduces the same time samples bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryVector {
    values: Vec<f64>,
    h: f64,
    origin: f64,
    step: i64,
}

impl HistoryVector {
    /// State at time `t` (the origin of its time axis).
    pub fn new(values: Vec<f64>, h: f64, t: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "history needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
        }
        if !t.is_finite() {
            return Err(Error::Domain("history time must be finite".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("history sample {i} is not finite")));
        }
        Ok(HistoryVector {
            values,
            h,
            origin: t,
            step: 0,
        })
    }

    pub fn constant(value: f64, n: usize, h: f64) -> Result<Self> {
        Self::new(vec![value; n], h, 0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t(&self) -> f64 {
        self.origin + self.step as f64 * self.h
    }

    /// Number of steps taken since the time origin.
    pub fn step_index(&self) -> i64 {
        self.step
    }

    pub fn head(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// The delayed sample `X(t - tau)`.
    pub fn oldest(&self) -> f64 {
        self.values[0]
    }

    /// Span covered by the history, `(N - 1) h`.
    pub fn span(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h
    }

    /// Same grid and time, different samples.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(HistoryVector { values, ..self.clone() })
    }
}

/// Head-point samples `X(t0 + k h)`, `k = 0..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub h: f64,
    pub samples: Vec<f64>,
}

impl Trajectory {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().enumerate().map(|(k, &x)| (self.time(k), x))
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Number of grid steps in `span`, requiring exact alignment.
pub fn aligned_steps(span: f64, h: f64, field: &str) -> Result<usize> {
    let ratio = span / h;
    let rounded = ratio.round();
    if !(ratio.is_finite() && rounded >= 1.0) || (ratio - rounded).abs() > ALIGN_TOL * rounded {
        return Err(Error::config(
            field,
            format!("{span} is not a positive integer multiple of the step {h}"),
        ));
    }
    Ok(rounded as usize)
}

/// Euler-Heun integrator for one model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    params: ModelParams,
    forcing: ForcingSpec,
    h: f64,
    delay_steps: usize,
}

/// Whether an observer wants the integration to continue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

impl Integrator {
    pub fn new(params: ModelParams, forcing: ForcingSpec, h: f64) -> Result<Self> {
        params.validate()?;
        forcing.validate()?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config("integrator.h", "must be finite and > 0"));
        }
        let delay_steps = aligned_steps(params.tau, h, "params.tau")?;
        Ok(Integrator {
            params,
            forcing,
            h,
            delay_steps,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn forcing(&self) -> &ForcingSpec {
        &self.forcing
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// History length `N = tau / h + 1`.
    pub fn n(&self) -> usize {
        self.delay_steps + 1
    }

    pub fn constant_history(&self, value: f64) -> Result<HistoryVector> {
        HistoryVector::constant(value, self.n(), self.h)
    }

    fn check_grid(&self, y: &HistoryVector) -> Result<()> {
        if y.len() != self.n() || y.h != self.h {
            return Err(Error::Domain(format!(
                "history grid (N = {}, h = {}) does not match integrator (N = {}, h = {})",
                y.len(),
                y.h,
                self.n(),
                self.h
            )));
        }
        Ok(())
    }

    /// Steps per forcing period; errors for non-periodic forcing.
    pub fn steps_per_period(&self) -> Result<usize> {
        let period = self
            .forcing
            .period()
            .ok_or_else(|| Error::Contract("stroboscopic maps need periodic forcing".into()))?;
        aligned_steps(period, self.h, "forcing.period")
    }

    pub fn period(&self) -> Result<f64> {
        Ok(self.steps_per_period()? as f64 * self.h)
    }

    pub fn heun_step(&self, y: &HistoryVector) -> Result<HistoryVector> {
        self.evolve_steps(y, 1)
    }

    /// Advances by `t_span`, which must be a positive multiple of `h`.
    pub fn evolve(&self, y: &HistoryVector, t_span: f64) -> Result<HistoryVector> {
        let steps = aligned_steps(t_span, self.h, "t_span")?;
        self.evolve_steps(y, steps)
    }

    pub fn evolve_steps(&self, y: &HistoryVector, steps: usize) -> Result<HistoryVector> {
        Ok(self.run(y, steps, |_, _| Flow::Continue)?.0)
    }

    /// Stroboscopic map `M^k`: `k` full forcing periods from a state whose
    /// time is a multiple of the period.
    pub fn strobe_map(&self, y: &HistoryVector, k: usize) -> Result<HistoryVector> {
        if k == 0 {
            return Err(Error::Contract("strobe count must be >= 1".into()));
        }
        let per = self.steps_per_period()?;
        if y.origin != 0.0 || y.step.rem_euclid(per as i64) != 0 {
            let phase = y.t() / (per as f64 * self.h);
            if (phase - phase.round()).abs() > ALIGN_TOL * phase.abs().max(1.0) {
                return Err(Error::Contract(format!(
                    "state time {} is not a multiple of the forcing period",
                    y.t()
                )));
            }
        }
        self.evolve_steps(y, k * per)
    }

    /// Integrates `span` and records every head point, starting with the
    /// initial one.
    pub fn trajectory(&self, y: &HistoryVector, span: f64) -> Result<(Trajectory, HistoryVector)> {
        let steps = aligned_steps(span, self.h, "span")?;
        let mut samples = Vec::with_capacity(steps + 1);
        samples.push(y.head());
        let (end, _) = self.run(y, steps, |_, x| {
            samples.push(x);
            Flow::Continue
        })?;
        Ok((
            Trajectory {
                t0: y.t(),
                h: self.h,
                samples,
            },
            end,
        ))
    }

    /// Core loop. The observer sees `(t, X(t))` after every step and may stop
    /// early; returns the final state and the number of steps taken.
    pub fn run<F>(&self, y: &HistoryVector, steps: usize, mut observe: F) -> Result<(HistoryVector, usize)>
    where
        F: FnMut(f64, f64) -> Flow,
    {
        self.check_grid(y)?;
        let n = y.len();
        let h = self.h;
        let half_h = 0.5 * h;
        let mut ring = y.values.clone();
        // ring[pos] holds X(t - tau), ring[pos - 1] the head point
        let mut pos = 0usize;
        let mut taken = 0usize;
        for k in 0..steps {
            let step = y.step + k as i64;
            let t = y.origin + step as f64 * h;
            let t_next = y.origin + (step + 1) as f64 * h;
            let head = ring[(pos + n - 1) % n];
            let delayed = ring[pos];
            let delayed_next = ring[(pos + 1) % n];
            let f0 = field(t, head, delayed, &self.params, &self.forcing)?;
            let euler = head + h * f0;
            let fe = field(t_next, euler, delayed_next, &self.params, &self.forcing)?;
            let next = head + half_h * (f0 + fe);
            if !(next.abs() <= BLOWUP_BOUND) {
                return Err(Error::Integration {
                    t: t_next,
                    reason: format!("|X| = {next} exceeds {BLOWUP_BOUND}"),
                });
            }
            ring[pos] = next;
            pos = (pos + 1) % n;
            taken += 1;
            if observe(t_next, next) == Flow::Stop {
                break;
            }
        }
        ring.rotate_left(pos);
        Ok((
            HistoryVector {
                values: ring,
                h,
                origin: y.origin,
                step: y.step + taken as i64,
            },
            taken,
        ))
    }
}

/// Mean absolute distance `(1/tau) * integral |A - B|` by the trapezoidal rule.
pub fn mae(a: &HistoryVector, b: &HistoryVector) -> Result<f64> {
    if a.len() != b.len() || (a.h - b.h).abs() > 1e-12 * a.h {
        return Err(Error::Domain(format!(
            "mae needs matching grids (N = {} vs {}, h = {} vs {})",
            a.len(),
            b.len(),
            a.h,
            b.h
        )));
    }
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    let n = d.len();
    let interior: f64 = d.iter().sum::<f64>() - 0.5 * (d[0] + d[n - 1]);
    Ok(interior / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::OBLIQUITY_PERIOD;
    use std::f64::consts::TAU;

    fn periodic() -> ForcingSpec {
        ForcingSpec::periodic(OBLIQUITY_PERIOD, 0.0)
    }

    #[test]
    fn rhs_values() {
        let p = ModelParams::default();
        assert!(rhs(0.0, -0.5, -0.5, &p, &periodic()).unwrap().abs() < 1e-15);
        assert_eq!(rhs(0.0, 0.0, 0.0, &p, &periodic()).unwrap(), 0.0);
        let forced = p.with_u(0.09);
        let v = rhs(OBLIQUITY_PERIOD / 4.0, 0.0, 0.0, &forced, &periodic()).unwrap();
        assert!((v + 0.09).abs() < 1e-15);
        // a zero-crossing root of -p x + r x - s x^2 - x^3 at -0.3
        let v = rhs(0.0, -0.3, -0.3, &p, &ForcingSpec::Zero).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let p = ModelParams::default();
        assert!(matches!(
            rhs(0.0, f64::NAN, 0.0, &p, &ForcingSpec::Zero),
            Err(Error::Domain(_))
        ));
        assert!(rhs(f64::INFINITY, 0.0, 0.0, &p, &ForcingSpec::Zero).is_err());
    }

    #[test]
    fn unforced_roots() {
        let roots = ModelParams::default().unforced_equilibria();
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([-0.5, -0.3, 0.0]) {
            assert!((r - e).abs() < 1e-15, "{r} vs {e}");
        }
    }

    #[test]
    fn default_params_round_trip() {
        let p = ModelParams::default();
        let json = serde_json::to_string(&p).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!((back.p, back.r, back.s), (0.95, 0.8, 0.8));
    }

    #[test]
    fn tau_must_align_with_step() {
        let err = Integrator::new(ModelParams::default().with_tau(1.555), periodic(), 0.01);
        assert!(matches!(err, Err(Error::Config { .. })));
        let ok = Integrator::new(ModelParams::default().with_tau(1.55), periodic(), 0.01).unwrap();
        assert_eq!(ok.n(), 156);
        assert_eq!(ok.steps_per_period().unwrap(), 410);
    }

    #[test]
    fn equilibrium_is_fixed_point_of_step() {
        let integ = Integrator::new(ModelParams::default(), periodic(), 0.01).unwrap();
        for root in ModelParams::default().unforced_equilibria() {
            let y = integ.constant_history(root).unwrap();
            let next = integ.heun_step(&y).unwrap();
            assert!((next.head() - root).abs() < 1e-15);
            assert!((next.t() - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn forced_step_matches_two_stage_formula() {
        let integ = Integrator::new(ModelParams::default().with_u(0.09), periodic(), 0.01).unwrap();
        let y = integ.constant_history(-0.5).unwrap();
        let next = integ.heun_step(&y).unwrap();
        let expected = -0.5 + 0.005 * (0.0 - 0.09 * (TAU * 0.01 / OBLIQUITY_PERIOD).sin());
        assert!((next.head() - expected).abs() < 1e-16);
        assert!((next.head() + 0.500_006_90).abs() < 1e-8);
    }

    #[test]
    fn step_shifts_history() {
        let integ = Integrator::new(ModelParams::default().with_u(0.3), periodic(), 0.01).unwrap();
        let values: Vec<f64> = (0..integ.n()).map(|i| -0.5 + 0.001 * i as f64).collect();
        let y = HistoryVector::new(values.clone(), 0.01, 0.0).unwrap();
        let next = integ.heun_step(&y).unwrap();
        assert_eq!(&next.values()[..values.len() - 1], &values[1..]);
    }

    #[test]
    fn evolve_rejects_misaligned_span() {
        let integ = Integrator::new(ModelParams::default(), periodic(), 0.01).unwrap();
        let y = integ.constant_history(-0.5).unwrap();
        assert!(matches!(integ.evolve(&y, 0.015), Err(Error::Config { .. })));
        assert!(integ.evolve(&y, 0.0).is_err());
    }

    #[test]
    fn strobe_requires_periodic_forcing() {
        let integ = Integrator::new(ModelParams::default(), ForcingSpec::Zero, 0.01).unwrap();
        let y = integ.constant_history(-0.5).unwrap();
        assert!(matches!(integ.strobe_map(&y, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn strobe_requires_period_aligned_time() {
        let integ = Integrator::new(ModelParams::default().with_u(0.1), periodic(), 0.01).unwrap();
        let y = integ.constant_history(-0.5).unwrap();
        let off = integ.evolve_steps(&y, 7).unwrap();
        assert!(matches!(integ.strobe_map(&off, 1), Err(Error::Contract(_))));
        let on = integ.strobe_map(&y, 1).unwrap();
        assert!(integ.strobe_map(&on, 1).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let integ = Integrator::new(ModelParams::default(), ForcingSpec::Zero, 0.01).unwrap();
        let y = integ.constant_history(50.0).unwrap();
        match integ.evolve_steps(&y, 10_000) {
            Err(Error::Integration { t, .. }) => assert!(t > 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn mae_examples() {
        let a = HistoryVector::constant(-0.5, 156, 0.01).unwrap();
        let b = HistoryVector::constant(-0.3, 156, 0.01).unwrap();
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert!((mae(&a, &b).unwrap() - 0.2).abs() < 1e-14);
        let z = HistoryVector::new(vec![0.0, 0.0, 0.0], 0.01, 0.0).unwrap();
        let bump = HistoryVector::new(vec![0.0, 1.0, 0.0], 0.01, 0.0).unwrap();
        assert_eq!(mae(&z, &bump).unwrap(), 0.5);
        let short = HistoryVector::constant(0.0, 10, 0.01).unwrap();
        assert!(matches!(mae(&a, &short), Err(Error::Domain(_))));
    }

    #[test]
    fn trajectory_sample_count() {
        let integ = Integrator::new(ModelParams::default(), periodic(), 0.01).unwrap();
        let y = integ.constant_history(-0.5).unwrap();
        let (traj, end) = integ.trajectory(&y, 2.0).unwrap();
        assert_eq!(traj.samples.len(), 201);
        assert!(traj.samples.iter().all(|&x| x == -0.5));
        assert!((end.t() - 2.0).abs() < 1e-12);
    }
}
