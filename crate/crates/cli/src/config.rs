//! Run configuration: one TOML document with a block per operation.
//! Overrides are applied to the parsed document before it is typed, so they
//! are validated exactly like file values and show up in the snapshot.

use std::path::{Path, PathBuf};

use mpt_dde::dde::{aligned_steps, ModelParams};
use mpt_dde::eqfree::{HealedMapConfig, PlanarPoint, Rect};
use mpt_dde::forcing::{load_tabulated, ForcingSpec, TabulatedOptions};
use mpt_dde::manifold::SCConfig;
use mpt_dde::scan::{model_time_from_kyr_bp, BifurcationConfig, Classifier, MptScenario, ThresholdSearch};
use mpt_dde::{Error, Result};
use serde::{Deserialize, Serialize};

/// Explicit list or `n` evenly spaced values from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { from: f64, to: f64, n: usize },
}

impl Grid {
    pub fn values(&self, field: &str) -> Result<Vec<f64>> {
        match self {
            Grid::List(v) => Ok(v.clone()),
            Grid::Range { from, to, n } => {
                if *n < 2 || !(from.is_finite() && to.is_finite()) {
                    return Err(Error::Config {
                        field: field.into(),
                        reason: "range needs finite ends and n >= 2".into(),
                    });
                }
                Ok((0..*n)
                    .map(|i| from + (to - from) * i as f64 / (*n - 1) as f64)
                    .collect())
            }
        }
    }

    /// Values rounded to the nearest multiple of `h`.
    pub fn snapped(&self, field: &str, h: f64) -> Result<Vec<f64>> {
        Ok(self.values(field)?.into_iter().map(|v| (v / h).round() * h).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorBlock {
    pub h: f64,
    /// Length of `simulate` runs in model time.
    pub t_span: f64,
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        IntegratorBlock { h: 0.01, t_span: 200.0 }
    }
}

/// Tabulated forcing read from a file; replaces `[forcing]` when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedFile {
    pub path: PathBuf,
    #[serde(default)]
    pub kyr: bool,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistoryBlock {
    /// `X(0)`.
    pub x1: f64,
    /// `X(s)` for `s` in `[-tau, 0)`.
    pub x2: f64,
}

impl Default for HistoryBlock {
    fn default() -> Self {
        HistoryBlock { x1: -0.5, x2: -0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealingBlock {
    pub ell: usize,
    pub fd_eps: f64,
    pub newton_tol: f64,
    pub newton_step_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for HealingBlock {
    fn default() -> Self {
        let d = HealedMapConfig::default();
        HealingBlock {
            ell: d.ell,
            fd_eps: d.fd_eps,
            newton_tol: d.newton_tol,
            newton_step_tol: d.newton_step_tol,
            newton_max_iter: d.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapBlock {
    pub u_grid: Grid,
    pub horizon_periods: usize,
}

impl Default for HeatmapBlock {
    fn default() -> Self {
        HeatmapBlock {
            u_grid: Grid::Range {
                from: 0.0,
                to: 0.2,
                n: 41,
            },
            horizon_periods: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinBlock {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl Default for BasinBlock {
    fn default() -> Self {
        BasinBlock {
            rect: Rect::square(-0.65, 0.05),
            nx: 100,
            ny: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldBlock {
    /// Newton seed for the saddle at the configured `u`. Without it the
    /// saddle is continued from the unforced middle equilibrium.
    pub saddle_seed: Option<[f64; 2]>,
    pub growth: SCConfig,
}

impl Default for ManifoldBlock {
    fn default() -> Self {
        ManifoldBlock {
            saddle_seed: None,
            growth: SCConfig {
                bounds: Some(Rect::square(-0.8, 0.2)),
                max_arclength: 3.0,
                ..SCConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointsBlock {
    /// Newton seed at `u_start`.
    pub seed: [f64; 2],
    pub period: usize,
    pub u_start: f64,
    pub u_end: f64,
    pub du: f64,
    pub du_min: f64,
}

impl Default for FixedPointsBlock {
    fn default() -> Self {
        FixedPointsBlock {
            seed: [-0.5, -0.5],
            period: 1,
            u_start: 0.0,
            u_end: 0.3,
            du: 0.01,
            du_min: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseScanBlock {
    pub phi_grid: Grid,
    /// Snapped to the integration step.
    pub tau_grid: Grid,
    pub u_search: ThresholdSearch,
}

impl Default for PhaseScanBlock {
    fn default() -> Self {
        PhaseScanBlock {
            phi_grid: Grid::List((0..8).map(|k| k as f64 * std::f64::consts::TAU / 8.0).collect()),
            tau_grid: Grid::Range {
                from: 1.30,
                to: 1.62,
                n: 8,
            },
            u_search: ThresholdSearch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationMode {
    /// Scan in `tau` at the model `u`.
    Line,
    /// Stability grid over `tau_grid` x `u_grid`.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationBlock {
    pub mode: BifurcationMode,
    /// Snapped to the integration step.
    pub tau_grid: Grid,
    pub u_grid: Grid,
    pub settings: BifurcationConfig,
}

impl Default for BifurcationBlock {
    fn default() -> Self {
        BifurcationBlock {
            mode: BifurcationMode::Line,
            tau_grid: Grid::Range {
                from: 1.30,
                to: 1.62,
                n: 33,
            },
            u_grid: Grid::Range {
                from: 0.0,
                to: 0.75,
                n: 16,
            },
            settings: BifurcationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralGapBlock {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl Default for SpectralGapBlock {
    fn default() -> Self {
        SpectralGapBlock {
            rect: Rect::square(-0.75, 0.15),
            nx: 10,
            ny: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MptBlock {
    /// Switch time in thousands of years before present; `t_switch` wins if
    /// both are set.
    pub switch_kyr_bp: Option<f64>,
    pub t_switch: Option<f64>,
    pub scale_before: f64,
    pub u_end: f64,
    pub t_end: f64,
}

impl Default for MptBlock {
    fn default() -> Self {
        let d = MptScenario::default();
        MptBlock {
            switch_kyr_bp: Some(750.0),
            t_switch: None,
            scale_before: d.scale_before,
            u_end: d.u_end,
            t_end: d.t_end,
        }
    }
}

impl MptBlock {
    pub fn scenario(&self) -> Result<MptScenario> {
        let t_switch = match (self.t_switch, self.switch_kyr_bp) {
            (Some(t), _) => t,
            (None, Some(k)) => model_time_from_kyr_bp(k),
            (None, None) => {
                return Err(Error::Config {
                    field: "mpt.t_switch".into(),
                    reason: "set t_switch or switch_kyr_bp".into(),
                })
            }
        };
        Ok(MptScenario {
            t_switch,
            scale_before: self.scale_before,
            u_end: self.u_end,
            t_end: self.t_end,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    pub model: ModelParams,
    pub forcing: ForcingSpec,
    pub tabulated: Option<TabulatedFile>,
    pub integrator: IntegratorBlock,
    pub history: HistoryBlock,
    pub classifier: Classifier,
    pub healing: HealingBlock,
    pub heatmap: HeatmapBlock,
    pub basin: BasinBlock,
    pub manifold: ManifoldBlock,
    pub fixed_points: FixedPointsBlock,
    pub phase_scan: PhaseScanBlock,
    pub bifurcation: BifurcationBlock,
    pub spectral_gap: SpectralGapBlock,
    pub mpt: MptBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output: PathBuf::from("out"),
            model: ModelParams::default(),
            forcing: ForcingSpec::default(),
            tabulated: None,
            integrator: IntegratorBlock::default(),
            history: HistoryBlock::default(),
            classifier: Classifier::default(),
            healing: HealingBlock::default(),
            heatmap: HeatmapBlock::default(),
            basin: BasinBlock::default(),
            manifold: ManifoldBlock::default(),
            fixed_points: FixedPointsBlock::default(),
            phase_scan: PhaseScanBlock::default(),
            bifurcation: BifurcationBlock::default(),
            spectral_gap: SpectralGapBlock::default(),
            mpt: MptBlock::default(),
        }
    }
}

fn parse_error(e: impl std::fmt::Display) -> Error {
    Error::Config {
        field: "config".into(),
        reason: e.to_string(),
    }
}

/// Parses `key=value`; the value is read as a TOML value and falls back to a
/// plain string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw.split_once('=').ok_or_else(|| Error::Config {
        field: raw.into(),
        reason: "override must look like key=value".into(),
    })?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config {
            field: raw.into(),
            reason: "empty key segment".into(),
        });
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn apply_override(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut table = doc;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config {
            field: key.into(),
            reason: format!("`{p}` is not a table"),
        })?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads the optional file, applies the overrides in order and checks
    /// the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(parse_error)?,
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut doc, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.forcing.validate()?;
        let h = self.integrator.h;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config {
                field: "integrator.h".into(),
                reason: "must be finite and > 0".into(),
            });
        }
        aligned_steps(self.model.tau, h, "model.tau")?;
        if let Some(period) = self.forcing.period() {
            aligned_steps(period, h, "forcing.period")?;
        }
        aligned_steps(self.integrator.t_span, h, "integrator.t_span")?;
        self.classifier.validate()?;
        self.manifold.growth.validate()?;
        self.basin.rect.validate()?;
        self.spectral_gap.rect.validate()?;
        self.bifurcation.settings.validate()?;
        Ok(())
    }

    /// `[forcing]`, or the tabulated file when one is configured.
    pub fn forcing(&self) -> Result<ForcingSpec> {
        match &self.tabulated {
            None => Ok(self.forcing.clone()),
            Some(t) => {
                let opts = TabulatedOptions {
                    kyr: t.kyr,
                    scale: t.scale,
                    offset: t.offset,
                };
                Ok(load_tabulated(&t.path, opts)?.0)
            }
        }
    }

    pub fn healed_map_config(&self) -> Result<HealedMapConfig> {
        let c = HealedMapConfig {
            ell: self.healing.ell,
            params: self.model,
            forcing: self.forcing()?,
            h: self.integrator.h,
            fd_eps: self.healing.fd_eps,
            newton_tol: self.healing.newton_tol,
            newton_step_tol: self.healing.newton_step_tol,
            newton_max_iter: self.healing.newton_max_iter,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn history_point(&self) -> PlanarPoint {
        PlanarPoint::new(self.history.x1, self.history.x2)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Domain(format!("snapshot encoding: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_are_typed() {
        let (k, v) = parse_override("model.u=0.09").unwrap();
        assert_eq!(k, "model.u");
        assert_eq!(v, toml::Value::Float(0.09));
        let (_, v) = parse_override("output=runs/a").unwrap();
        assert_eq!(v, toml::Value::String("runs/a".into()));
        assert!(parse_override("nothing").is_err());
        assert!(parse_override("a..b=1").is_err());
        let cfg = RunConfig::load(None, &[parse_override("model.u=0.09").unwrap()]).unwrap();
        assert_eq!(cfg.model.u, 0.09);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::load(None, &[parse_override("model.q=1.0").unwrap()]).unwrap_err();
        assert!(err.to_string().contains("q"), "{err}");
    }

    #[test]
    fn misaligned_delay_names_field() {
        let err = RunConfig::load(None, &[parse_override("model.tau=1.555").unwrap()]).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "model.tau"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grids() {
        let g = Grid::Range {
            from: 1.30,
            to: 1.62,
            n: 10,
        };
        let v = g.snapped("tau_grid", 0.01).unwrap();
        assert_eq!(v.len(), 10);
        assert!((v[1] - 1.34).abs() < 1e-12);
        assert!(Grid::Range {
            from: 0.0,
            to: 1.0,
            n: 1
        }
        .values("g")
        .is_err());
    }
}
