//! Scenario files, initial-condition expressions, and trace output.
//!
//! A scenario is a JSON document. Physical quantities in it are converted to
//! the dimensionless frame before a run; traces and snapshots are written in
//! that frame and the summary records the conversion factors.
//!
//! ```json
//! {
//!   "params": { "viscosity": 0.2, "wall_height": 2.0 },
//!   "gains": { "sigma": 9.5, "q": 1.2, "k": 1.5, "gamma": 1.0, "beta": 1.0 },
//!   "controller": "reduced",
//!   "n": 100,
//!   "dt": 1e-4,
//!   "t_end": 10.0,
//!   "initial": { "xi": 2.0, "w": -2.2, "z": 0.2, "observer": { "zeta": -5.0 } },
//!   "h_initial": "x + 0.5",
//!   "v_initial": "x^2 - x"
//! }
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;

use exmex::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convergence::Scenario;
use crate::error::{Error, Result};
use crate::feedback::ControllerKind;
use crate::gfunc::GainReport;
use crate::lyapunov::RightStencil;
use crate::params::{
    discrete_mass, FluidGrid, Gains, Observer, PhysParams, RigState, Scaling, TankState,
};
use crate::sim::{MonitorMode, RunConfig, Snapshot, Trace, TraceRecord};

/// A real function of `x` written with `+ - * / ^`, parentheses, numbers,
/// `PI`, `E`, and the usual elementary functions (`sin`, `cos`, `exp`, `ln`,
/// `sqrt`, ...).
#[derive(Clone)]
pub struct Expression {
    source: String,
    expr: FlatEx<f64>,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let expr = exmex::parse::<f64>(source)
            .map_err(|e| Error::Expression(format!("`{source}`: {e}")))?;
        match expr.var_names() {
            [] => {}
            [x] if x == "x" => {}
            other => {
                return Err(Error::Expression(format!(
                    "`{source}`: only the variable `x` is allowed, found {other:?}"
                )))
            }
        }
        Ok(Self {
            source: source.to_owned(),
            expr,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let args: &[f64] = if self.expr.var_names().is_empty() {
            &[]
        } else {
            &[x]
        };
        let y = self
            .expr
            .eval(args)
            .map_err(|e| Error::Expression(format!("`{}` at x = {x}: {e}", self.source)))?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Expression(format!(
                "`{}` is not finite at x = {x}",
                self.source
            )))
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Expression").field(&self.source).finish()
    }
}

/// An initial profile: an expression in `x` or `n + 1` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Expression(String),
    Samples(Vec<f64>),
}

impl ProfileSpec {
    fn sample(&self, field: &str, n: usize, length: f64) -> Result<Vec<f64>> {
        match self {
            ProfileSpec::Expression(src) => {
                let e = Expression::parse(src)
                    .map_err(|err| Error::Scenario(format!("`{field}`: {err}")))?;
                (0..=n)
                    .map(|i| e.eval(length * i as f64 / n as f64))
                    .collect()
            }
            ProfileSpec::Samples(v) if v.len() == n + 1 => Ok(v.clone()),
            ProfileSpec::Samples(v) => Err(Error::Scenario(format!(
                "`{field}` has {} samples but n = {n} needs {}",
                v.len(),
                n + 1
            ))),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default = "one")]
    pub length: f64,
    #[serde(default = "one")]
    pub gravity: f64,
    #[serde(default = "one")]
    pub h_star: f64,
    pub viscosity: f64,
    #[serde(default = "two")]
    pub wall_height: f64,
    /// Optional; must equal `h_star * length` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

impl ParamsSpec {
    pub fn resolve(&self) -> Result<PhysParams> {
        let p = PhysParams::new(
            self.length,
            self.gravity,
            self.h_star,
            self.viscosity,
            self.wall_height,
        )?;
        if let Some(m) = self.mass {
            if (m - p.mass).abs() > 1e-10 * p.mass {
                return Err(Error::Scenario(format!(
                    "`params.mass` = {m} but h_star * length = {}",
                    p.mass
                )));
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub sigma: f64,
    pub q: f64,
    pub k: f64,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub lambda: f64,
}

impl From<GainsSpec> for Gains {
    fn from(g: GainsSpec) -> Self {
        Gains {
            sigma: g.sigma,
            q: g.q,
            k: g.k,
            gamma: g.gamma,
            beta: g.beta,
            lambda: g.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ObserverSpec {
    Full { xi_hat: f64, w_hat: f64 },
    Reduced { zeta: f64 },
}

/// Tank, observer and filter at `t = 0`. A missing observer starts with
/// zero estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub w: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub epsilon: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_t_max() -> f64 {
    5000.0
}

fn default_n() -> usize {
    100
}

fn default_halvings() -> u32 {
    4
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: ParamsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerKind>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_initial: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_initial: Option<ProfileSpec>,
    #[serde(default)]
    pub monitor: MonitorMode,
    #[serde(default = "default_halvings")]
    pub max_dt_halvings: u32,
    #[serde(default)]
    pub stencil: RightStencil,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Level-set radius for gain checks; defaults to half the spill radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSpec>,
}

fn missing(field: &str) -> Error {
    Error::Scenario(format!("missing required field `{field}`"))
}

/// A scenario converted to the dimensionless frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub physical: PhysParams,
    pub scaling: Scaling,
    pub config: RunConfig,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn gains(&self) -> Result<Gains> {
        let g: Gains = self.gains.ok_or_else(|| missing("gains"))?.into();
        g.validate()?;
        Ok(g)
    }

    pub fn controller(&self) -> Result<ControllerKind> {
        self.controller.ok_or_else(|| missing("controller"))
    }

    /// Samples the initial profiles and builds the rig state, in physical
    /// units. The trapezoid mass must equal `h_star * length` to 1e-10
    /// relative.
    pub fn physical_state(
        &self,
        p: &PhysParams,
        controller: ControllerKind,
        gamma: f64,
    ) -> Result<TankState> {
        let n = self.n;
        if n < 2 {
            return Err(Error::Scenario(format!("`n` must be at least 2, got {n}")));
        }
        let h = self
            .h_initial
            .as_ref()
            .ok_or_else(|| missing("h_initial"))?
            .sample("h_initial", n, p.length)?;
        let mut v = self
            .v_initial
            .as_ref()
            .ok_or_else(|| missing("v_initial"))?
            .sample("v_initial", n, p.length)?;
        if matches!(self.v_initial, Some(ProfileSpec::Expression(_))) {
            let scale = v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
            for wall in [0, n] {
                if v[wall].abs() > 1e-12 * scale {
                    return Err(Error::Scenario(format!(
                        "`v_initial` must vanish at the walls, got {} at node {wall}",
                        v[wall]
                    )));
                }
                v[wall] = 0.0;
            }
        }
        let grid = FluidGrid::new(h, v, p.length)
            .map_err(|e| Error::Scenario(format!("initial profiles: {e}")))?;
        let mass = discrete_mass(&grid);
        if (mass - p.mass).abs() > 1e-10 * p.mass {
            return Err(Error::Scenario(format!(
                "initial liquid volume {mass} differs from h_star * length = {} (relative {:e})",
                p.mass,
                (mass - p.mass).abs() / p.mass
            )));
        }
        let InitialSpec { xi, w, z, observer } = self.initial;
        let observer = match (controller, observer) {
            (ControllerKind::FullOrder, Some(ObserverSpec::Full { xi_hat, w_hat })) => {
                Observer::Full { xi_hat, w_hat }
            }
            (ControllerKind::FullOrder, None) => Observer::Full {
                xi_hat: xi,
                w_hat: w,
            },
            (ControllerKind::ReducedOrder, Some(ObserverSpec::Reduced { zeta })) => {
                Observer::Reduced { zeta }
            }
            (ControllerKind::ReducedOrder, None) => Observer::Reduced {
                zeta: w - gamma * xi,
            },
            (ControllerKind::FullState, None) => Observer::None,
            (kind, Some(_)) => {
                return Err(Error::Scenario(format!(
                    "`initial.observer` does not match controller `{}`",
                    kind.name()
                )))
            }
        };
        Ok(TankState {
            grid,
            rig: RigState { xi, w, observer, z },
        })
    }

    /// Builds the dimensionless run configuration.
    pub fn resolve(&self) -> Result<Resolved> {
        let physical = self.params.resolve()?;
        let gains = self.gains()?;
        let controller = self.controller()?;
        let dt = self.dt.ok_or_else(|| missing("dt"))?;
        let t_end = self.t_end.ok_or_else(|| missing("t_end"))?;
        let state = self.physical_state(&physical, controller, gains.gamma)?;
        let scaling = Scaling::new(&physical);
        let config = RunConfig {
            controller,
            gains: scaling.gains(&gains),
            params: scaling.params(&physical),
            dt: scaling.to_time(dt),
            t_end: scaling.to_time(t_end),
            initial: scaling.state(&state),
            monitor_mode: self.monitor,
            max_dt_halvings: self.max_dt_halvings,
            stencil: self.stencil,
            sample_stride: self.sample_stride,
            snapshot_times: self
                .snapshot_times
                .iter()
                .map(|t| scaling.to_time(*t))
                .collect(),
        };
        config.validate()?;
        Ok(Resolved {
            physical,
            scaling,
            config,
        })
    }
}

impl ScenarioFile {
    /// A convergence scenario built from the expressions in this file. The
    /// file must be dimensionless, since the study samples the profiles at
    /// many resolutions.
    pub fn convergence_scenario(&self, name: &str) -> Result<Scenario> {
        let params = self.params.resolve()?;
        if !params.is_dimensionless() {
            return Err(Error::Scenario(
                "convergence studies need a dimensionless scenario (length = gravity = h_star = 1)"
                    .into(),
            ));
        }
        let gains = self.gains()?;
        let controller = self.controller()?;
        let expr = |field: &str, spec: &Option<ProfileSpec>| -> Result<Expression> {
            match spec {
                Some(ProfileSpec::Expression(src)) => {
                    Expression::parse(src).map_err(|e| Error::Scenario(format!("`{field}`: {e}")))
                }
                Some(ProfileSpec::Samples(_)) => Err(Error::Scenario(format!(
                    "`{field}` must be an expression for a convergence study"
                ))),
                None => Err(missing(field)),
            }
        };
        let h = expr("h_initial", &self.h_initial)?;
        let v = expr("v_initial", &self.v_initial)?;
        // validates positivity, wall values and mass at the default resolution
        let rig = self.physical_state(&params, controller, gains.gamma)?.rig;
        Ok(Scenario {
            name: name.to_owned(),
            controller,
            gains,
            params,
            h0: std::sync::Arc::new(move |x| h.eval(x).unwrap_or(f64::NAN)),
            v0: std::sync::Arc::new(move |x| v.eval(x).unwrap_or(f64::NAN)),
            rig,
        })
    }
}

/// `x` with 17 significant digits in scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub const TRACE_HEADER: &str = "t,xi,w,obs1,obs2,z,f,omega,monitor,h_min,h_max,mass,spill_ok";

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    out.write_all(TRACE_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_num(r.t),
            fmt_num(r.xi),
            fmt_num(r.w),
            opt(r.obs1),
            opt(r.obs2),
            fmt_num(r.z),
            fmt_num(r.f),
            fmt_num(r.omega),
            fmt_num(r.monitor),
            fmt_num(r.h_min),
            fmt_num(r.h_max),
            fmt_num(r.mass),
            r.spill_ok
        )?;
    }
    Ok(())
}

pub fn write_snapshot_csv<W: Write>(mut out: W, snap: &Snapshot) -> Result<()> {
    out.write_all(b"x,h,v\n")?;
    for ((x, h), v) in snap.x.iter().zip(&snap.h).zip(&snap.v) {
        writeln!(out, "{},{},{}", fmt_num(*x), fmt_num(*h), fmt_num(*v))?;
    }
    Ok(())
}

/// Conversion factors from the dimensionless outputs back to physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameFactors {
    pub length: f64,
    pub level: f64,
    pub speed: f64,
    pub time: f64,
}

impl FrameFactors {
    pub fn new(p: &PhysParams) -> Self {
        let speed = (p.gravity * p.h_star).sqrt();
        Self {
            length: p.length,
            level: p.h_star,
            speed,
            time: p.length / speed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: ScenarioFile,
    pub frame: FrameFactors,
    pub dimensionless_params: PhysParams,
    pub dimensionless_gains: Gains,
    pub controller: ControllerKind,
    pub accepted_dt: f64,
    pub halvings: u32,
    pub steps: usize,
    pub omega_initial: f64,
    pub omega_final: f64,
    pub monitor_initial: f64,
    pub monitor_final: f64,
    /// `monitor_final / monitor_initial`.
    pub monitor_decay_factor: f64,
    pub monitor_nonincreasing: bool,
    pub violations: usize,
    pub spill_ok: bool,
    pub max_advective_number: f64,
    pub gain_report: Option<GainReport>,
    pub snapshot_files: Vec<String>,
}

impl RunSummary {
    pub fn new(
        scenario: &ScenarioFile,
        resolved: &Resolved,
        trace: &Trace,
        gain_report: Option<GainReport>,
    ) -> Self {
        let first = trace.records.first();
        let last = trace.records.last();
        let monitor_initial = first.map_or(0.0, |r| r.monitor);
        let monitor_final = last.map_or(0.0, |r| r.monitor);
        Self {
            scenario: scenario.clone(),
            frame: FrameFactors::new(&resolved.physical),
            dimensionless_params: resolved.config.params,
            dimensionless_gains: resolved.config.gains,
            controller: trace.controller,
            accepted_dt: trace.dt,
            halvings: trace.halvings,
            steps: trace.steps,
            omega_initial: first.map_or(0.0, |r| r.omega),
            omega_final: last.map_or(0.0, |r| r.omega),
            monitor_initial,
            monitor_final,
            monitor_decay_factor: if monitor_initial > 0.0 {
                monitor_final / monitor_initial
            } else {
                0.0
            },
            monitor_nonincreasing: trace.violations == 0,
            violations: trace.violations,
            spill_ok: trace.spill_ok,
            max_advective_number: trace.max_advective_number,
            gain_report,
            snapshot_files: Vec::new(),
        }
    }
}

pub fn snapshot_file_name(index: usize, t: f64) -> String {
    format!("snapshot_{index:03}_t{t}.csv")
}
