//! External forcing laws `F(t)` entering the model as `-u F(t)`.
//!
//! The amplitude `u` is part of [`ModelParams`](crate::dde::ModelParams);
//! everything here is amplitude-free except for the time-dependent scale of
//! [`ForcingSpec::StepAmplitudeScale`].

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Obliquity period, 41 kyr in model units of 10 kyr.
pub const OBLIQUITY_PERIOD: f64 = 4.1;

/// One `(frequency, amplitude, phase)` component of a sum of sines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTerm {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    Zero,
    /// `sin(2 pi t / period - phi)`.
    Periodic {
        period: f64,
        phi: f64,
    },
    /// `sum_i a_i sin(2 pi f_i t - phi_i)`.
    SumOfSines {
        terms: Vec<SineTerm>,
    },
    /// Piecewise-constant amplitude modulation of `base`: `scale_before` for
    /// `t < t_switch`, `scale_after` from then on.
    StepAmplitudeScale {
        t_switch: f64,
        scale_before: f64,
        scale_after: f64,
        base: Box<ForcingSpec>,
    },
    /// Linearly interpolated samples. No extrapolation.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Default for ForcingSpec {
    fn default() -> Self {
        ForcingSpec::Periodic {
            period: OBLIQUITY_PERIOD,
            phi: 0.0,
        }
    }
}

impl ForcingSpec {
    pub fn periodic(period: f64, phi: f64) -> Self {
        ForcingSpec::Periodic { period, phi }
    }

    /// Step modulation with the default pre-switch scale of 0.01.
    pub fn step_scaled(base: ForcingSpec, t_switch: f64, scale_after: f64) -> Self {
        ForcingSpec::StepAmplitudeScale {
            t_switch,
            scale_before: 0.01,
            scale_after,
            base: Box::new(base),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ForcingSpec::Zero => Ok(()),
            ForcingSpec::Periodic { period, phi } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::config("forcing.period", "must be finite and > 0"));
                }
                if !phi.is_finite() {
                    return Err(Error::config("forcing.phi", "must be finite"));
                }
                Ok(())
            }
            ForcingSpec::SumOfSines { terms } => {
                for (i, term) in terms.iter().enumerate() {
                    if !(term.frequency.is_finite() && term.amplitude.is_finite() && term.phase.is_finite()) {
                        return Err(Error::config(
                            "forcing.terms",
                            format!("term {i} has non-finite entries"),
                        ));
                    }
                }
                Ok(())
            }
            ForcingSpec::StepAmplitudeScale {
                t_switch,
                scale_before,
                scale_after,
                base,
            } => {
                if !(t_switch.is_finite() && scale_before.is_finite() && scale_after.is_finite()) {
                    return Err(Error::config("forcing", "step scale entries must be finite"));
                }
                if matches!(**base, ForcingSpec::StepAmplitudeScale { .. }) {
                    return Err(Error::config(
                        "forcing.base",
                        "a step amplitude scale cannot wrap another step amplitude scale",
                    ));
                }
                base.validate()
            }
            ForcingSpec::Tabulated { times, values } => {
                if times.len() != values.len() {
                    return Err(Error::config(
                        "forcing.values",
                        format!("{} times but {} values", times.len(), values.len()),
                    ));
                }
                if times.len() < 2 {
                    return Err(Error::config("forcing.times", "need at least 2 samples"));
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::config("forcing", "tabulated samples must be finite"));
                }
                if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(Error::config(
                        "forcing.times",
                        format!("not strictly increasing at index {}", i + 1),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            ForcingSpec::Zero => Ok(0.0),
            ForcingSpec::Periodic { period, phi } => Ok((TAU * t / period - phi).sin()),
            ForcingSpec::SumOfSines { terms } => Ok(terms
                .iter()
                .map(|term| term.amplitude * (TAU * term.frequency * t - term.phase).sin())
                .sum()),
            ForcingSpec::StepAmplitudeScale {
                t_switch,
                scale_before,
                scale_after,
                base,
            } => {
                let scale = if t < *t_switch { scale_before } else { scale_after };
                Ok(scale * base.eval(t)?)
            }
            ForcingSpec::Tabulated { times, values } => interpolate(times, values, t),
        }
    }

    /// Period of the law when it is exactly periodic with a known period.
    ///
    /// Only `Periodic` qualifies; other laws (even the trivially periodic
    /// `Zero`) do not define a stroboscopic period.
    pub fn period(&self) -> Option<f64> {
        match self {
            ForcingSpec::Periodic { period, .. } => Some(*period),
            _ => None,
        }
    }

    /// Time interval on which `eval` is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            ForcingSpec::Tabulated { times, .. } => (times[0], times[times.len() - 1]),
            ForcingSpec::StepAmplitudeScale { base, .. } => base.domain(),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let (lo, hi) = (times[0], times[times.len() - 1]);
    if !(t >= lo && t <= hi) {
        return Err(Error::OutOfRange { t, lo, hi });
    }
    // index of the first sample strictly after t, clamped to the last interval
    let j = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
    let (t0, t1) = (times[j - 1], times[j]);
    let w = (t - t0) / (t1 - t0);
    Ok(values[j - 1] + w * (values[j] - values[j - 1]))
}

/// Options for [`load_tabulated`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabulatedOptions {
    /// Times are given in kyr; divide by 10 to get model units.
    pub kyr: bool,
    /// Affine rescale of the values, `value * scale + offset`.
    pub scale: f64,
    pub offset: f64,
}

impl Default for TabulatedOptions {
    fn default() -> Self {
        TabulatedOptions {
            kyr: false,
            scale: 1.0,
            offset: 0.0,
        }
    }
}

/// Summary returned next to a loaded series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabulatedSummary {
    pub samples: usize,
    pub t_min: f64,
    pub t_max: f64,
}

pub fn load_tabulated(path: impl AsRef<Path>, opts: TabulatedOptions) -> Result<(ForcingSpec, TabulatedSummary)> {
    let text = fs::read_to_string(path)?;
    parse_tabulated(&text, opts)
}

/// Parses `time,value` or `time value` rows; `#` starts a comment.
pub fn parse_tabulated(text: &str, opts: TabulatedOptions) -> Result<(ForcingSpec, TabulatedSummary)> {
    let mut times: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    reason: format!("`{s}` is not a finite number"),
                })
        };
        let mut t = parse(fields[0])?;
        if opts.kyr {
            t /= 10.0;
        }
        let v = parse(fields[1])? * opts.scale + opts.offset;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("time {t} does not increase (previous {prev})"),
                });
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.len() < 2 {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            reason: format!("need at least 2 samples, found {}", times.len()),
        });
    }
    let summary = TabulatedSummary {
        samples: times.len(),
        t_min: times[0],
        t_max: times[times.len() - 1],
    };
    Ok((ForcingSpec::Tabulated { times, values }, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const T: f64 = OBLIQUITY_PERIOD;

    #[test]
    fn periodic_quarter_period_and_origin() {
        let f = ForcingSpec::periodic(T, 0.0);
        assert_eq!(f.eval(0.0).unwrap(), 0.0);
        assert!((f.eval(T / 4.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_pi_flips_sign() {
        let f = ForcingSpec::periodic(T, PI);
        for k in 0..200 {
            let t = -50.0 + 0.37 * k as f64;
            let expected = -(TAU * t / T).sin();
            assert!((f.eval(t).unwrap() - expected).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn periodic_is_t_periodic() {
        let f = ForcingSpec::periodic(T, 0.7);
        for k in 0..400 {
            let t = -1000.0 + 5.0 * k as f64;
            let d = (f.eval(t + T).unwrap() - f.eval(t).unwrap()).abs();
            assert!(d < 1e-12, "t = {t}: {d:e}");
        }
    }

    #[test]
    fn single_sine_matches_periodic() {
        let phi = -1.3;
        let sum = ForcingSpec::SumOfSines {
            terms: vec![SineTerm {
                frequency: 1.0 / T,
                amplitude: 1.0,
                phase: phi,
            }],
        };
        let per = ForcingSpec::periodic(T, phi);
        for k in 0..100 {
            let t = 0.173 * k as f64;
            assert!((sum.eval(t).unwrap() - per.eval(t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_scales_reduce_to_scaled_base() {
        let base = ForcingSpec::periodic(T, 0.2);
        let step = ForcingSpec::StepAmplitudeScale {
            t_switch: 3.0,
            scale_before: 0.4,
            scale_after: 0.4,
            base: Box::new(base.clone()),
        };
        for k in 0..60 {
            let t = 0.1 * k as f64;
            assert_eq!(step.eval(t).unwrap(), 0.4 * base.eval(t).unwrap());
        }
    }

    #[test]
    fn step_switches_at_t_switch() {
        let step = ForcingSpec::step_scaled(ForcingSpec::periodic(T, 0.0), 125.0, 1.0);
        let base = ForcingSpec::periodic(T, 0.0);
        let t = 124.99;
        assert_eq!(step.eval(t).unwrap(), 0.01 * base.eval(t).unwrap());
        assert_eq!(step.eval(125.0).unwrap(), base.eval(125.0).unwrap());
    }

    #[test]
    fn nested_step_scale_rejected() {
        let inner = ForcingSpec::step_scaled(ForcingSpec::Zero, 1.0, 1.0);
        let outer = ForcingSpec::step_scaled(inner, 2.0, 1.0);
        assert!(outer.validate().is_err());
    }

    #[test]
    fn tabulated_midpoint_and_range() {
        let f = ForcingSpec::Tabulated {
            times: vec![0.0, 1.0],
            values: vec![0.0, 2.0],
        };
        f.validate().unwrap();
        assert_eq!(f.eval(0.5).unwrap(), 1.0);
        assert_eq!(f.eval(1.0).unwrap(), 2.0);
        assert!(matches!(f.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(f.eval(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn parse_two_rows() {
        let (f, summary) = parse_tabulated("0,0\n1,2", TabulatedOptions::default()).unwrap();
        assert_eq!(summary.samples, 2);
        assert_eq!((summary.t_min, summary.t_max), (0.0, 1.0));
        assert_eq!(f.eval(0.5).unwrap(), 1.0);
    }

    #[test]
    fn parse_kyr_divides_times() {
        let text = "# kyr, value\n0 1.0\n41 -1.0  # one cycle\n82 1.0\n";
        let opts = TabulatedOptions {
            kyr: true,
            ..Default::default()
        };
        let (f, summary) = parse_tabulated(text, opts).unwrap();
        match f {
            ForcingSpec::Tabulated { times, .. } => assert_eq!(times, vec![0.0, 4.1, 8.2]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(summary.t_max, 8.2);
    }

    #[test]
    fn parse_affine_rescale() {
        let opts = TabulatedOptions {
            scale: 2.0,
            offset: -1.0,
            ..Default::default()
        };
        let (f, _) = parse_tabulated("0,0\n1,1\n", opts).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), -1.0);
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn parse_non_monotone_names_line() {
        let err = parse_tabulated("0,0\n2,1\n# skip\n1,3\n", TabulatedOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_malformed_row() {
        let err = parse_tabulated("0,0\n1;x\n", TabulatedOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_tabulated("0,0\n1,2,3\n", TabulatedOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn serde_round_trip_keeps_tag() {
        let spec = ForcingSpec::step_scaled(ForcingSpec::periodic(T, 0.5), 125.0, 1.0);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"step_amplitude_scale\""));
        let back: ForcingSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
