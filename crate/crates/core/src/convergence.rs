//! Self-convergence studies of the one-step error and mass-drift audits.
//!
//! The one-step error compares a single coarse step `(dt, dx)` with a much
//! finer run of the same closed loop, restricted to the coarse nodes. The
//! expected behaviour is `e ~ dt (dt + dx^2)`: halving `dt` at fixed fine
//! `dx` divides the error by about 4, and halving `dx` at tiny `dt` does the
//! same.
//!
//! Coarse steps are taken without the diffusion guard. A single step is
//! still a consistent approximation, and at fixed fine `dx` the guard would
//! otherwise force `dt` into the range where the spatial term dominates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::{control, ControllerKind};
use crate::lyapunov::RightStencil;
use crate::params::{discrete_mass, FluidGrid, Gains, Observer, PhysParams, RigState, TankState};
use crate::scheme::check_diffusion_guard;
use crate::sim::Simulation;

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Smooth initial data and a closed loop, sampled at any resolution.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    pub gains: Gains,
    pub params: PhysParams,
    pub h0: Profile,
    pub v0: Profile,
    pub rig: RigState,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("controller", &self.controller)
            .field("gains", &self.gains)
            .field("params", &self.params)
            .field("rig", &self.rig)
            .finish_non_exhaustive()
    }
}

fn reference_gains(lambda: f64) -> Gains {
    Gains {
        sigma: 9.5,
        q: 1.2,
        k: 1.5,
        gamma: 1.0,
        beta: 1.0,
        lambda,
    }
}

fn observer_for(controller: ControllerKind) -> Observer {
    match controller {
        ControllerKind::FullOrder => Observer::Full {
            xi_hat: 2.3,
            w_hat: -2.5,
        },
        ControllerKind::ReducedOrder => Observer::Reduced { zeta: -5.0 },
        ControllerKind::FullState => Observer::None,
    }
}

impl Scenario {
    pub fn state(&self, n: usize) -> Result<TankState> {
        let (h0, v0) = (self.h0.clone(), self.v0.clone());
        Ok(TankState {
            grid: FluidGrid::from_fn(n, self.params.length, move |x| h0(x), move |x| v0(x))?,
            rig: self.rig,
        })
    }

    /// Adds `a x(1-x) + b x(1-x)(2x-1)` to `v` so that the momentum balance
    /// leaves the wall velocities at rest at `t = 0`:
    /// `mu (v_xx + v_x h_x / h) - h_x + f = 0` at both walls. Without this
    /// the solution develops a boundary layer and is not smooth in time.
    pub fn with_compatible_walls(mut self) -> Result<Self> {
        let mu = self.params.viscosity;
        let base = self.v0.clone();
        // basis values (p', p'') at x = 0 and x = 1
        let p1 = [(1.0, -2.0), (-1.0, -2.0)];
        let p2 = [(-1.0, 6.0), (-1.0, -6.0)];
        // f is affine in (a, b): it reads the interior momentum only through
        // the full-state law
        let f_at = |a: f64, b: f64| -> Result<f64> {
            let trial = Self {
                v0: corrected(&base, a, b),
                ..self.clone()
            };
            let st = trial.state(64)?;
            control(
                self.controller,
                &st.grid,
                &st.rig,
                &self.gains,
                &self.params,
            )
        };
        let f0 = f_at(0.0, 0.0)?;
        let (fa, fb) = (f_at(1.0, 0.0)? - f0, f_at(0.0, 1.0)? - f0);
        let mut m = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for (row, x) in [0.0, self.params.length].into_iter().enumerate() {
            let h = (self.h0)(x);
            let hx = derivative(&*self.h0, x);
            let vx = derivative(&*base, x);
            let vxx = second_derivative(&*base, x);
            let s = hx / h;
            m[row] = [
                mu * (p1[row].1 + p1[row].0 * s) + fa,
                mu * (p2[row].1 + p2[row].0 * s) + fb,
            ];
            rhs[row] = -(mu * (vxx + vx * s) - hx + f0);
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let a = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
        let b = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det;
        self.v0 = corrected(&base, a, b);
        Ok(self)
    }

    /// Fluid and rig at rest.
    pub fn equilibrium(controller: ControllerKind) -> Self {
        let observer = match controller {
            ControllerKind::FullOrder => Observer::Full {
                xi_hat: 0.0,
                w_hat: 0.0,
            },
            ControllerKind::ReducedOrder => Observer::Reduced { zeta: 0.0 },
            ControllerKind::FullState => Observer::None,
        };
        Self {
            name: "equilibrium".into(),
            controller,
            gains: reference_gains(0.0),
            params: PhysParams::dimensionless(0.2, 2.0).expect("valid"),
            h0: Arc::new(|_| 1.0),
            v0: Arc::new(|_| 0.0),
            rig: RigState::at_rest(observer),
        }
    }

    /// The reference experiment: `h = x + 0.5`, `v = x^2 - x`, `xi = 2`,
    /// `w = -2.2`, `z = 0.2`, observers at `(2.3, -2.5)` or `zeta = -5`.
    /// The data are not wall-compatible.
    pub fn reference_experiment(controller: ControllerKind) -> Self {
        Self {
            name: "reference-experiment".into(),
            controller,
            gains: reference_gains(0.0),
            params: PhysParams::dimensionless(0.2, 2.0).expect("valid"),
            h0: Arc::new(|x| x + 0.5),
            v0: Arc::new(|x| x * x - x),
            rig: RigState {
                xi: 2.0,
                w: -2.2,
                observer: observer_for(controller),
                z: 0.2,
            },
        }
    }

    /// `h = 1 + 0.1 sin(2 pi x)`, `v = x^2 - x` plus the wall correction of
    /// [`Scenario::with_compatible_walls`], rig as in the reference
    /// experiment, `lambda = 0`.
    pub fn sine_wave(controller: ControllerKind) -> Self {
        Self {
            name: "sine-wave".into(),
            controller,
            gains: reference_gains(0.0),
            params: PhysParams::dimensionless(0.2, 2.0).expect("valid"),
            h0: Arc::new(|x| 1.0 + 0.1 * (2.0 * std::f64::consts::PI * x).sin()),
            v0: Arc::new(|x| x * x - x),
            rig: RigState {
                xi: 2.0,
                w: -2.2,
                observer: observer_for(controller),
                z: 0.2,
            },
        }
        .with_compatible_walls()
        .expect("analytic data")
    }

    /// `h = 1 + 0.05 cos(pi x)`, `v = 0.3 sin(pi x)` plus the wall
    /// correction, with the momentum filter active (`lambda = 0.5`).
    pub fn cosine_bump(controller: ControllerKind) -> Self {
        Self {
            name: "cosine-bump".into(),
            controller,
            gains: reference_gains(0.5),
            params: PhysParams::dimensionless(0.2, 2.0).expect("valid"),
            h0: Arc::new(|x| 1.0 + 0.05 * (std::f64::consts::PI * x).cos()),
            v0: Arc::new(|x| 0.3 * (std::f64::consts::PI * x).sin()),
            rig: RigState {
                xi: -1.0,
                w: 0.5,
                observer: match controller {
                    ControllerKind::FullOrder => Observer::Full {
                        xi_hat: -0.9,
                        w_hat: 1.3,
                    },
                    ControllerKind::ReducedOrder => Observer::Reduced { zeta: 2.3 },
                    ControllerKind::FullState => Observer::None,
                },
                z: -0.3,
            },
        }
        .with_compatible_walls()
        .expect("analytic data")
    }

    fn simulation(&self, n: usize, dt: f64) -> Result<Simulation> {
        Ok(Simulation::new(
            self.controller,
            self.gains,
            self.params,
            RightStencil::OneSided,
            dt,
            self.state(n)?,
        ))
    }
}

fn corrected(base: &Profile, a: f64, b: f64) -> Profile {
    let base = base.clone();
    Arc::new(move |x| base(x) + a * x * (1.0 - x) + b * x * (1.0 - x) * (2.0 * x - 1.0))
}

const FD_STEP: f64 = 1e-3;

// fourth-order central differences; the profiles are analytic beyond the walls
fn derivative(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let e = FD_STEP;
    (f(x - 2.0 * e) - 8.0 * f(x - e) + 8.0 * f(x + e) - f(x + 2.0 * e)) / (12.0 * e)
}

fn second_derivative(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let e = FD_STEP;
    (-f(x - 2.0 * e) + 16.0 * f(x - e) - 30.0 * f(x) + 16.0 * f(x + e) - f(x + 2.0 * e))
        / (12.0 * e * e)
}

/// Fine-grid solution stored at a list of times.
#[derive(Debug, Clone)]
pub struct Reference {
    pub n: usize,
    pub dt: f64,
    pub states: Vec<(f64, TankState)>,
}

impl Reference {
    /// Runs the guarded scheme at `(n, dt)` and keeps the states at `times`,
    /// each of which must be a whole number of steps.
    pub fn compute(s: &Scenario, n: usize, dt: f64, times: &[f64]) -> Result<Self> {
        let mut sim = s.simulation(n, dt)?;
        check_diffusion_guard(dt, s.params.viscosity, sim.state.grid.dx())?;
        let mut targets: Vec<(usize, f64)> = Vec::with_capacity(times.len());
        for &t in times {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(dt) {
                return Err(Error::Study(format!(
                    "time {t} is not a multiple of the reference step {dt}"
                )));
            }
            targets.push((k as usize, t));
        }
        targets.sort_by_key(|&(k, _)| k);
        let mut states = Vec::with_capacity(targets.len());
        let mut k = 0;
        for (target, t) in targets {
            while k < target {
                sim.step()?;
                k += 1;
            }
            states.push((t, sim.state.clone()));
        }
        Ok(Self { n, dt, states })
    }

    pub fn at(&self, t: f64) -> Option<&TankState> {
        self.states
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-12 * t.max(1e-300))
            .map(|(_, st)| st)
    }
}

/// Componentwise one-step error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorComponents {
    pub xi: f64,
    pub w: f64,
    pub z: f64,
    pub observer: f64,
    /// `max_i (|h_i - h_ref| + |v_i - v_ref|)`.
    pub fluid: f64,
}

impl ErrorComponents {
    pub fn total(&self) -> f64 {
        self.xi + self.w + self.z + self.observer + self.fluid
    }
}

fn observer_distance(a: &Observer, b: &Observer) -> f64 {
    match (a, b) {
        (
            Observer::Full { xi_hat, w_hat },
            Observer::Full {
                xi_hat: x2,
                w_hat: w2,
            },
        ) => (xi_hat - x2).abs() + (w_hat - w2).abs(),
        (Observer::Reduced { zeta }, Observer::Reduced { zeta: z2 }) => (zeta - z2).abs(),
        _ => 0.0,
    }
}

/// Distance between a coarse state and the reference restricted to its
/// nodes.
pub fn state_error(coarse: &TankState, fine: &TankState) -> Result<ErrorComponents> {
    let (nc, nf) = (coarse.grid.n(), fine.grid.n());
    if nf % nc != 0 {
        return Err(Error::Study(format!(
            "reference n = {nf} is not a multiple of n = {nc}"
        )));
    }
    let stride = nf / nc;
    let (hc, vc) = (coarse.grid.h(), coarse.grid.v());
    let (hf, vf) = (fine.grid.h(), fine.grid.v());
    let fluid = (0..=nc)
        .map(|i| (hc[i] - hf[i * stride]).abs() + (vc[i] - vf[i * stride]).abs())
        .fold(0.0, f64::max);
    let (a, b) = (&coarse.rig, &fine.rig);
    Ok(ErrorComponents {
        xi: (a.xi - b.xi).abs(),
        w: (a.w - b.w).abs(),
        z: (a.z - b.z).abs(),
        observer: observer_distance(&a.observer, &b.observer),
        fluid,
    })
}

/// One unguarded step of size `dt` on `n` intervals, compared with the
/// reference at time `dt`.
pub fn one_step_error(
    s: &Scenario,
    dt: f64,
    n: usize,
    reference: &Reference,
) -> Result<ErrorComponents> {
    if reference.n < 8 * n || reference.dt * 8.0 > dt * (1.0 + 1e-12) {
        return Err(Error::Study(format!(
            "reference (n = {}, dt = {:e}) is not 8x finer than (n = {n}, dt = {dt:e})",
            reference.n, reference.dt
        )));
    }
    let fine = reference
        .at(dt)
        .ok_or_else(|| Error::Study(format!("reference has no state at t = {dt:e}")))?;
    let mut sim = s.simulation(n, dt)?;
    sim.guarded = false;
    sim.step()?;
    state_error(&sim.state, fine)
}

/// Least-squares line through `(ln x, ln e)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    /// `None` when every error was exactly zero.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// `ln e - fit` for each point used.
    pub residuals: Vec<f64>,
    /// Points with zero error, left out of the fit.
    pub excluded: usize,
}

impl Fit {
    pub fn exact(&self) -> bool {
        self.slope.is_none()
    }

    /// Exact studies pass any band.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.slope.is_none_or(|p| (lo..=hi).contains(&p))
    }
}

pub fn fit_slope(x: &[f64], e: &[f64]) -> Result<Fit> {
    if x.len() != e.len() {
        return Err(Error::Study("mismatched fit data".into()));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(e)
        .filter(|(_, e)| **e != 0.0)
        .map(|(x, e)| (x.ln(), e.ln()))
        .collect();
    let excluded = x.len() - pts.len();
    if pts.is_empty() {
        return Ok(Fit {
            slope: None,
            intercept: None,
            residuals: Vec::new(),
            excluded,
        });
    }
    if pts.len() < 2 {
        return Err(Error::Study(
            "need at least two nonzero errors to fit an order".into(),
        ));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(Fit {
        slope: Some(slope),
        intercept: Some(intercept),
        residuals: pts
            .iter()
            .map(|p| p.1 - (intercept + slope * p.0))
            .collect(),
        excluded,
    })
}

/// Resolutions for a study. Each ladder must refine strictly and the
/// reference must be at least 8x finer in both `dt` and `dx`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub temporal_n: usize,
    pub temporal_dts: Vec<f64>,
    pub temporal_reference: (usize, f64),
    pub spatial_dt: f64,
    pub spatial_ns: Vec<usize>,
    pub spatial_reference: (usize, f64),
    pub band: (f64, f64),
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            temporal_n: 128,
            temporal_dts: vec![1.6e-2, 8e-3, 4e-3, 2e-3],
            temporal_reference: (1024, 2e-3 / 1024.0),
            spatial_dt: 2f64.powi(-22),
            spatial_ns: vec![16, 32, 64, 128],
            spatial_reference: (1024, 2f64.powi(-25)),
            band: (1.7, 2.3),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_dts.len() < 4 || self.spatial_ns.len() < 4 {
            return Err(Error::Study("each ladder needs at least 4 rungs".into()));
        }
        if self.temporal_dts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Study(
                "temporal ladder must strictly decrease dt".into(),
            ));
        }
        if self.spatial_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Study(
                "spatial ladder must strictly increase n".into(),
            ));
        }
        let (n_ref, dt_ref) = self.temporal_reference;
        let dt_min = self
            .temporal_dts
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if n_ref < 8 * self.temporal_n || dt_ref * 8.0 > dt_min {
            return Err(Error::Study(
                "temporal reference is not 8x finer than the ladder".into(),
            ));
        }
        let (n_ref, dt_ref) = self.spatial_reference;
        let n_max = *self.spatial_ns.last().expect("nonempty");
        if n_ref < 8 * n_max || dt_ref * 8.0 > self.spatial_dt {
            return Err(Error::Study(
                "spatial reference is not 8x finer than the ladder".into(),
            ));
        }
        Ok(())
    }

    /// The same study with both references refined by another factor of 2
    /// in `dx` (and 4 in `dt`, to stay within the diffusion guard).
    pub fn doubled_reference(&self) -> Self {
        let (nt, dtt) = self.temporal_reference;
        let (ns, dts) = self.spatial_reference;
        Self {
            temporal_reference: (2 * nt, dtt / 4.0),
            spatial_reference: (2 * ns, dts / 4.0),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rung {
    pub n: usize,
    pub dx: f64,
    pub dt: f64,
    pub components: ErrorComponents,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub scenario: String,
    pub controller: ControllerKind,
    pub temporal: Vec<Rung>,
    pub spatial: Vec<Rung>,
    pub p_t: Fit,
    pub p_x: Fit,
    pub band: (f64, f64),
    /// The finest rungs stopped improving; the reference is likely too coarse.
    pub plateau: bool,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        let (lo, hi) = self.band;
        self.p_t.within(lo, hi) && self.p_x.within(lo, hi)
    }
}

/// True when the error ratio between the last two rungs collapses below
/// 1.5 while the first ratio was above 3.
pub fn plateau(errors: &[f64]) -> bool {
    if errors.len() < 3 || errors.contains(&0.0) {
        return false;
    }
    let first = errors[0] / errors[1];
    let last = errors[errors.len() - 2] / errors[errors.len() - 1];
    first > 3.0 && last < 1.5
}

fn rung(n: usize, dt: f64, length: f64, components: ErrorComponents) -> Rung {
    Rung {
        n,
        dx: length / n as f64,
        dt,
        error: components.total(),
        components,
    }
}

/// Runs the temporal and spatial ladders in parallel and fits both orders.
pub fn run_study(s: &Scenario, cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let length = s.params.length;
    let (temporal, spatial) = crate::thread_pool().install(|| {
        rayon::join(
            || -> Result<Vec<Rung>> {
                let (n_ref, dt_ref) = cfg.temporal_reference;
                let reference = Reference::compute(s, n_ref, dt_ref, &cfg.temporal_dts)?;
                cfg.temporal_dts
                    .par_iter()
                    .map(|&dt| {
                        Ok(rung(
                            cfg.temporal_n,
                            dt,
                            length,
                            one_step_error(s, dt, cfg.temporal_n, &reference)?,
                        ))
                    })
                    .collect()
            },
            || -> Result<Vec<Rung>> {
                let (n_ref, dt_ref) = cfg.spatial_reference;
                let reference = Reference::compute(s, n_ref, dt_ref, &[cfg.spatial_dt])?;
                cfg.spatial_ns
                    .par_iter()
                    .map(|&n| {
                        Ok(rung(
                            n,
                            cfg.spatial_dt,
                            length,
                            one_step_error(s, cfg.spatial_dt, n, &reference)?,
                        ))
                    })
                    .collect()
            },
        )
    });
    let (temporal, spatial) = (temporal?, spatial?);
    let et: Vec<f64> = temporal.iter().map(|r| r.error).collect();
    let ex: Vec<f64> = spatial.iter().map(|r| r.error).collect();
    let p_t = fit_slope(&temporal.iter().map(|r| r.dt).collect::<Vec<_>>(), &et)?;
    let p_x = fit_slope(&spatial.iter().map(|r| r.dx).collect::<Vec<_>>(), &ex)?;
    Ok(StudyReport {
        scenario: s.name.clone(),
        controller: s.controller,
        plateau: plateau(&et) || plateau(&ex),
        temporal,
        spatial,
        p_t,
        p_x,
        band: cfg.band,
    })
}

/// A study whose errors are the exact power laws `c dt^2` (temporal) and
/// `c dt dx^2` (spatial) on the ladders of `cfg`. Exercises the fitting and
/// reporting path without running the scheme.
pub fn synthetic_study(cfg: &StudyConfig, c: f64) -> Result<StudyReport> {
    cfg.validate()?;
    let make = |n: usize, dt: f64, e: f64| Rung {
        n,
        dx: 1.0 / n as f64,
        dt,
        components: ErrorComponents {
            fluid: e,
            ..ErrorComponents::default()
        },
        error: e,
    };
    let temporal: Vec<Rung> = cfg
        .temporal_dts
        .iter()
        .map(|&dt| make(cfg.temporal_n, dt, c * dt * dt))
        .collect();
    let spatial: Vec<Rung> = cfg
        .spatial_ns
        .iter()
        .map(|&n| {
            let dx = 1.0 / n as f64;
            make(n, cfg.spatial_dt, c * cfg.spatial_dt * dx * dx)
        })
        .collect();
    let p_t = fit_slope(
        &temporal.iter().map(|r| r.dt).collect::<Vec<_>>(),
        &temporal.iter().map(|r| r.error).collect::<Vec<_>>(),
    )?;
    let p_x = fit_slope(
        &spatial.iter().map(|r| r.dx).collect::<Vec<_>>(),
        &spatial.iter().map(|r| r.error).collect::<Vec<_>>(),
    )?;
    Ok(StudyReport {
        scenario: "synthetic".into(),
        controller: ControllerKind::FullOrder,
        temporal,
        spatial,
        p_t,
        p_x,
        band: cfg.band,
        plateau: false,
    })
}

/// Relative change of the coarsest-rung errors when the references are
/// refined once more: `(temporal, spatial)`.
pub fn reference_sensitivity(s: &Scenario, cfg: &StudyConfig) -> Result<(f64, f64)> {
    let finer = cfg.doubled_reference();
    let coarse_dt = cfg.temporal_dts[0];
    let coarse_n = cfg.spatial_ns[0];
    let change = |a: ErrorComponents, b: ErrorComponents| {
        let (a, b) = (a.total(), b.total());
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    };
    let pair = |c: &StudyConfig| -> Result<(ErrorComponents, ErrorComponents)> {
        let (nt, dtt) = c.temporal_reference;
        let rt = Reference::compute(s, nt, dtt, &[coarse_dt])?;
        let (ns, dts) = c.spatial_reference;
        let rs = Reference::compute(s, ns, dts, &[c.spatial_dt])?;
        Ok((
            one_step_error(s, coarse_dt, c.temporal_n, &rt)?,
            one_step_error(s, c.spatial_dt, coarse_n, &rs)?,
        ))
    };
    let (a, b) = crate::thread_pool().install(|| rayon::join(|| pair(cfg), || pair(&finer)));
    let ((at, ax), (bt, bx)) = (a?, b?);
    Ok((change(at, bt), change(ax, bx)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRung {
    pub n: usize,
    pub dx: f64,
    pub dt: f64,
    /// `max_{t <= T} |m(t) - m(0)| / T` with trapezoid masses.
    pub drift_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub horizon: f64,
    pub rungs: Vec<DriftRung>,
    /// Order of the drift rate with respect to `dx`.
    pub order: Fit,
}

/// Mass drift per unit time over `[0, horizon]` for each `(n, dt)` rung.
pub fn mass_drift_audit(
    s: &Scenario,
    ladder: &[(usize, f64)],
    horizon: f64,
) -> Result<DriftReport> {
    let rungs: Result<Vec<DriftRung>> = crate::thread_pool().install(|| {
        ladder
            .par_iter()
            .map(|&(n, dt)| {
                let mut sim = s.simulation(n, dt)?;
                check_diffusion_guard(dt, s.params.viscosity, sim.state.grid.dx())?;
                let m0 = discrete_mass(&sim.state.grid);
                let steps = (horizon / dt).round() as usize;
                let mut worst: f64 = 0.0;
                for _ in 0..steps {
                    sim.step()?;
                    worst = worst.max((discrete_mass(&sim.state.grid) - m0).abs());
                }
                let t = steps as f64 * dt;
                Ok(DriftRung {
                    n,
                    dx: sim.state.grid.dx(),
                    dt,
                    drift_rate: worst / t,
                })
            })
            .collect()
    });
    let rungs = rungs?;
    let order = fit_slope(
        &rungs.iter().map(|r| r.dx).collect::<Vec<_>>(),
        &rungs.iter().map(|r| r.drift_rate).collect::<Vec<_>>(),
    )?;
    Ok(DriftReport {
        horizon,
        rungs,
        order,
    })
}

/// Ladder with `dt` a fixed fraction of the diffusion limit, so `dt ~ dx^2`.
pub fn joint_ladder(ns: &[usize], mu: f64, fraction: f64) -> Vec<(usize, f64)> {
    ns.iter()
        .map(|&n| {
            let dx = 1.0 / n as f64;
            (n, fraction * dx * dx / (2.0 * mu))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_temporal_slope() {
        let dts = [1.6e-2, 8e-3, 4e-3, 2e-3];
        let e: Vec<f64> = dts.iter().map(|d| 3.7 * d * d).collect();
        let fit = fit_slope(&dts, &e).unwrap();
        assert!((fit.slope.unwrap() - 2.0).abs() < 1e-6);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn synthetic_spatial_slope() {
        let dt = 1e-6;
        let dxs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let e: Vec<f64> = dxs.iter().map(|dx| 0.4 * dt * dx * dx).collect();
        assert!((fit_slope(&dxs, &e).unwrap().slope.unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn synthetic_study_is_exact() {
        let r = synthetic_study(&StudyConfig::default(), 2.5).unwrap();
        assert!((r.p_t.slope.unwrap() - 2.0).abs() < 1e-6);
        assert!((r.p_x.slope.unwrap() - 2.0).abs() < 1e-6);
        assert!(r.passed());
    }

    #[test]
    fn zero_errors_are_exact() {
        let fit = fit_slope(&[1.0, 0.5, 0.25, 0.125], &[0.0; 4]).unwrap();
        assert!(fit.exact());
        assert_eq!(fit.excluded, 4);
        assert!(fit.within(1.7, 2.3));
    }

    #[test]
    fn plateau_detection() {
        assert!(plateau(&[1.0, 0.25, 0.07, 0.06]));
        assert!(!plateau(&[1.0, 0.25, 0.0625, 0.0156]));
    }

    #[test]
    fn equilibrium_has_zero_error() {
        let s = Scenario::equilibrium(ControllerKind::FullOrder);
        let reference = Reference::compute(&s, 256, 1e-3 / 64.0, &[1e-3]).unwrap();
        for n in [16, 32] {
            assert_eq!(
                one_step_error(&s, 1e-3, n, &reference).unwrap().total(),
                0.0
            );
        }
    }

    #[test]
    fn still_fluid_has_zero_drift() {
        let mut s = Scenario::equilibrium(ControllerKind::FullState);
        s.h0 = Arc::new(|x| 1.0 + 0.1 * (std::f64::consts::PI * x).cos());
        // with v = 0 the level update is the identity on the first step
        let mut sim = s.simulation(32, 1e-4).unwrap();
        let h = sim.state.grid.h().to_vec();
        sim.step_with(0.0).unwrap();
        assert_eq!(sim.state.grid.h(), &h[..]);
    }

    #[test]
    fn corrected_data_is_compatible() {
        for kind in [
            ControllerKind::FullOrder,
            ControllerKind::ReducedOrder,
            ControllerKind::FullState,
        ] {
            for s in [Scenario::sine_wave(kind), Scenario::cosine_bump(kind)] {
                let st = s.state(64).unwrap();
                let f = control(kind, &st.grid, &st.rig, &s.gains, &s.params).unwrap();
                for x in [0.0, 1.0] {
                    let h = (s.h0)(x);
                    let hx = derivative(&*s.h0, x);
                    let r = 0.2 * (second_derivative(&*s.v0, x) + derivative(&*s.v0, x) * hx / h)
                        - hx
                        + f;
                    assert!(r.abs() < 1e-8, "{} {kind:?} x={x}: {r}", s.name);
                    assert!((s.v0)(x).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn reference_must_be_finer() {
        let s = Scenario::sine_wave(ControllerKind::ReducedOrder);
        let reference = Reference::compute(&s, 64, 1e-4, &[1e-3]).unwrap();
        assert!(one_step_error(&s, 1e-3, 16, &reference).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        let bad = StudyConfig {
            temporal_dts: vec![1e-2, 1e-2, 5e-3, 2e-3],
            ..StudyConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
