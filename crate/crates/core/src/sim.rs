//! Closed-loop simulation with the monitor-based acceptance protocol.
//!
//! A run advances the state with a fixed `dt`. In [`MonitorMode::Enforce`]
//! every step must leave the monitor (`Phi`, `Psi` or `V`, depending on the
//! controller) no larger than before; the first increase discards the run,
//! halves `dt` and restarts from `t = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{advance_rig, control, ControllerKind};
use crate::gfunc::spill_free;
use crate::lyapunov::{monitor, omega, RightStencil};
use crate::params::{discrete_mass, measured_output, Gains, Observer, PhysParams, TankState};
use crate::scheme::{advective_number, check_diffusion_guard, StepParams, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorMode {
    /// Reject the run on the first monitor increase.
    #[default]
    Enforce,
    /// Count increases but keep going.
    Warn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub controller: ControllerKind,
    pub gains: Gains,
    /// Must be dimensionless (`L = g = h* = 1`).
    pub params: PhysParams,
    pub dt: f64,
    pub t_end: f64,
    pub initial: TankState,
    pub monitor_mode: MonitorMode,
    pub max_dt_halvings: u32,
    pub stencil: RightStencil,
    /// Record every `sample_stride`-th step (the last step is always recorded).
    pub sample_stride: usize,
    pub snapshot_times: Vec<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !self.params.is_dimensionless() {
            return Err(Error::InvalidParameter {
                name: "params",
                reason: "the simulator runs in the dimensionless frame; rescale first".into(),
            });
        }
        self.gains.validate()?;
        if !self.controller.accepts(&self.initial.rig.observer) {
            return Err(Error::ObserverMismatch(self.controller.name()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("must be nonnegative, got {}", self.t_end),
            });
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "sample_stride",
                reason: "must be at least 1".into(),
            });
        }
        let grid = &self.initial.grid;
        if (grid.length() - self.params.length).abs() > 1e-12 * self.params.length {
            return Err(Error::InvalidGrid(format!(
                "grid spans {} but the tank length is {}",
                grid.length(),
                self.params.length
            )));
        }
        check_diffusion_guard(self.dt, self.params.viscosity, grid.dx())?;
        let mass = discrete_mass(grid);
        if (mass - self.params.mass).abs() > 1e-10 * self.params.mass {
            return Err(Error::InvalidGrid(format!(
                "initial liquid mass {mass} differs from m = {}",
                self.params.mass
            )));
        }
        Ok(())
    }

    pub fn steps(&self, dt: f64) -> usize {
        (self.t_end / dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub xi: f64,
    pub w: f64,
    /// `xi_hat` (full-order) or `zeta` (reduced-order).
    pub obs1: Option<f64>,
    /// `w_hat` (full-order only).
    pub obs2: Option<f64>,
    pub z: f64,
    /// Control applied over the step starting at `t`.
    pub f: f64,
    pub omega: f64,
    pub monitor: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub mass: f64,
    pub spill_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub t: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub controller: ControllerKind,
    /// Time step of the accepted run.
    pub dt: f64,
    pub halvings: u32,
    pub steps: usize,
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Monitor increases seen (nonzero only in warn mode).
    pub violations: usize,
    pub first_violation: Option<Violation>,
    pub spill_ok: bool,
    pub max_advective_number: f64,
    pub final_state: TankState,
}

impl Trace {
    /// Re-checks from the records that the monitor never increased.
    pub fn monitor_nonincreasing(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].monitor <= w[0].monitor)
    }

    pub fn forces(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }
}

/// Closed-loop state advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub controller: ControllerKind,
    pub gains: Gains,
    pub params: PhysParams,
    pub stencil: RightStencil,
    pub dt: f64,
    pub state: TankState,
    pub guarded: bool,
    stepper: Stepper,
}

impl Simulation {
    pub fn new(
        controller: ControllerKind,
        gains: Gains,
        params: PhysParams,
        stencil: RightStencil,
        dt: f64,
        state: TankState,
    ) -> Self {
        Self {
            controller,
            gains,
            params,
            stencil,
            dt,
            state,
            guarded: true,
            stepper: Stepper::new(),
        }
    }

    pub fn control(&self) -> Result<f64> {
        control(
            self.controller,
            &self.state.grid,
            &self.state.rig,
            &self.gains,
            &self.params,
        )
    }

    pub fn monitor(&self) -> Result<f64> {
        monitor(
            self.controller,
            &self.state.grid,
            &self.state.rig,
            &self.gains,
            &self.params,
            self.stencil,
        )
    }

    /// Advances with a given control value, returning nothing new.
    pub fn step_with(&mut self, f: f64) -> Result<()> {
        let y = measured_output(&self.state.grid, &self.state.rig);
        let rig = advance_rig(&self.state.rig, f, &y, &self.gains, &self.params, self.dt)?;
        let sp = StepParams {
            dt: self.dt,
            mu: self.params.viscosity,
            f,
        };
        self.stepper
            .advance(&mut self.state.grid, &sp, self.guarded)?;
        self.state.rig = rig;
        Ok(())
    }

    /// Computes the control from the current state and advances; returns `f`.
    pub fn step(&mut self) -> Result<f64> {
        let f = self.control()?;
        self.step_with(f)?;
        Ok(f)
    }

    pub(crate) fn record(&self, t: f64, f: f64, monitor: f64) -> TraceRecord {
        let grid = &self.state.grid;
        let rig = &self.state.rig;
        let (obs1, obs2) = match rig.observer {
            Observer::Full { xi_hat, w_hat } => (Some(xi_hat), Some(w_hat)),
            Observer::Reduced { zeta } => (Some(zeta), None),
            Observer::None => (None, None),
        };
        TraceRecord {
            t,
            xi: rig.xi,
            w: rig.w,
            obs1,
            obs2,
            z: rig.z,
            f,
            omega: omega(grid, rig, &self.params),
            monitor,
            h_min: grid.h_min(),
            h_max: grid.h_max(),
            mass: discrete_mass(grid),
            spill_ok: spill_free(grid, &self.params),
        }
    }

    fn snapshot(&self, t: f64) -> Snapshot {
        let grid = &self.state.grid;
        Snapshot {
            t,
            x: (0..=grid.n()).map(|i| i as f64 * grid.dx()).collect(),
            h: grid.h().to_vec(),
            v: grid.v().to_vec(),
        }
    }
}

enum Outcome {
    Done(Trace),
    Rejected(Violation),
}

fn attempt(cfg: &RunConfig, dt: f64, halvings: u32, forces: Option<&[f64]>) -> Result<Outcome> {
    let mut sim = Simulation::new(
        cfg.controller,
        cfg.gains,
        cfg.params,
        cfg.stencil,
        dt,
        cfg.initial.clone(),
    );
    let steps = cfg.steps(dt);
    let snap_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|t| (t / dt).round() as usize)
        .collect();

    let mut records = Vec::with_capacity(steps / cfg.sample_stride + 2);
    let mut snapshots = Vec::new();
    let mut violations = 0;
    let mut first_violation = None;
    let mut spill_ok = spill_free(&sim.state.grid, &cfg.params);
    let mut max_adv: f64 = 0.0;
    let mut current = sim.monitor()?;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let f = match forces {
            Some(fs) if k < steps => fs[k],
            _ => sim.control()?,
        };
        if k % cfg.sample_stride == 0 || k == steps {
            records.push(sim.record(t, f, current));
        }
        for (i, &s) in snap_steps.iter().enumerate() {
            if s == k && snapshots.len() <= i {
                snapshots.push(sim.snapshot(t));
            }
        }
        if k == steps {
            break;
        }
        max_adv = max_adv.max(advective_number(&sim.state.grid, dt));
        sim.step_with(f)?;
        spill_ok &= spill_free(&sim.state.grid, &cfg.params);
        let next = sim.monitor()?;
        if next > current {
            let v = Violation {
                t: (k + 1) as f64 * dt,
                before: current,
                after: next,
            };
            if cfg.monitor_mode == MonitorMode::Enforce && forces.is_none() {
                return Ok(Outcome::Rejected(v));
            }
            violations += 1;
            first_violation.get_or_insert(v);
        }
        current = next;
    }

    Ok(Outcome::Done(Trace {
        controller: cfg.controller,
        dt,
        halvings,
        steps,
        records,
        snapshots,
        violations,
        first_violation,
        spill_ok,
        max_advective_number: max_adv,
        final_state: sim.state,
    }))
}

/// Runs the closed loop described by `cfg`.
pub fn run(cfg: &RunConfig) -> Result<Trace> {
    cfg.validate()?;
    let mut last = None;
    for halvings in 0..=cfg.max_dt_halvings {
        let dt = cfg.dt / f64::from(1u32 << halvings.min(31));
        match attempt(cfg, dt, halvings, None)? {
            Outcome::Done(trace) => return Ok(trace),
            Outcome::Rejected(v) => last = Some((v, dt)),
        }
    }
    let (v, dt) = last.expect("at least one attempt");
    Err(Error::Rejected {
        halvings: cfg.max_dt_halvings,
        time: v.t,
        before: v.before,
        after: v.after,
        dt,
    })
}

/// Re-runs the raw scheme with the recorded control sequence `forces`
/// (one value per step) at time step `dt`.
pub fn replay(cfg: &RunConfig, dt: f64, forces: &[f64]) -> Result<Trace> {
    let steps = cfg.steps(dt);
    if forces.len() < steps {
        return Err(Error::InvalidParameter {
            name: "forces",
            reason: format!("need {steps} control values, got {}", forces.len()),
        });
    }
    match attempt(cfg, dt, 0, Some(forces))? {
        Outcome::Done(trace) => Ok(trace),
        Outcome::Rejected(_) => unreachable!("replay never rejects"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{FluidGrid, RigState};

    fn reference_config(controller: ControllerKind, t_end: f64) -> RunConfig {
        let observer = match controller {
            ControllerKind::FullOrder => Observer::Full {
                xi_hat: 2.3,
                w_hat: -2.5,
            },
            ControllerKind::ReducedOrder => Observer::Reduced { zeta: -5.0 },
            ControllerKind::FullState => Observer::None,
        };
        RunConfig {
            controller,
            gains: Gains {
                sigma: 9.5,
                q: 1.2,
                k: 1.5,
                gamma: 1.0,
                beta: 1.0,
                lambda: 0.0,
            },
            params: PhysParams::dimensionless(0.2, 2.0).unwrap(),
            dt: 1e-4,
            t_end,
            initial: TankState {
                grid: FluidGrid::from_fn(100, 1.0, |x| x + 0.5, |x| x * x - x).unwrap(),
                rig: RigState {
                    xi: 2.0,
                    w: -2.2,
                    observer,
                    z: 0.2,
                },
            },
            monitor_mode: MonitorMode::Enforce,
            max_dt_halvings: 3,
            stencil: RightStencil::OneSided,
            sample_stride: 1,
            snapshot_times: vec![0.0, 0.05],
        }
    }

    #[test]
    fn equilibrium_run_is_trivial() {
        for kind in [
            ControllerKind::FullOrder,
            ControllerKind::ReducedOrder,
            ControllerKind::FullState,
        ] {
            let mut cfg = reference_config(kind, 0.1);
            cfg.initial.grid = FluidGrid::equilibrium(100, 1.0, 1.0).unwrap();
            cfg.initial.rig = RigState::at_rest(match cfg.initial.rig.observer {
                Observer::Full { .. } => Observer::Full {
                    xi_hat: 0.0,
                    w_hat: 0.0,
                },
                Observer::Reduced { .. } => Observer::Reduced { zeta: 0.0 },
                Observer::None => Observer::None,
            });
            let tr = run(&cfg).unwrap();
            assert_eq!(tr.halvings, 0);
            assert!(tr
                .records
                .iter()
                .all(|r| r.f == 0.0 && r.omega == 0.0 && r.monitor == 0.0));
            assert_eq!(tr.final_state, cfg.initial);
        }
    }

    #[test]
    fn short_reference_run_accepted() {
        let tr = run(&reference_config(ControllerKind::ReducedOrder, 0.05)).unwrap();
        assert_eq!(tr.halvings, 0);
        assert_eq!(tr.steps, 500);
        assert_eq!(tr.records.len(), 501);
        assert!(tr.monitor_nonincreasing());
        assert_eq!(tr.snapshots.len(), 2);
        assert_eq!(tr.snapshots[1].t, 0.05);
        assert!(tr.spill_ok);
    }

    #[test]
    fn replay_is_bitwise() {
        let cfg = reference_config(ControllerKind::FullOrder, 0.02);
        let tr = run(&cfg).unwrap();
        let again = replay(&cfg, tr.dt, &tr.forces()).unwrap();
        assert_eq!(again.records, tr.records);
        assert_eq!(again.final_state, tr.final_state);
    }

    #[test]
    fn validation_errors() {
        let mut cfg = reference_config(ControllerKind::ReducedOrder, 0.01);
        cfg.dt = 1e-3;
        assert!(matches!(run(&cfg), Err(Error::Stability { .. })));

        let mut cfg = reference_config(ControllerKind::ReducedOrder, 0.01);
        cfg.initial.grid = FluidGrid::from_fn(100, 1.0, |x| x + 0.6, |_| 0.0).unwrap();
        assert!(matches!(run(&cfg), Err(Error::InvalidGrid(_))));

        let mut cfg = reference_config(ControllerKind::ReducedOrder, 0.01);
        cfg.controller = ControllerKind::FullOrder;
        assert!(matches!(run(&cfg), Err(Error::ObserverMismatch(_))));

        let mut cfg = reference_config(ControllerKind::ReducedOrder, 0.01);
        cfg.params = PhysParams::new(2.0, 1.0, 0.5, 0.2, 2.0).unwrap();
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn rejection_carries_diagnostics() {
        // A large sigma with a coarse dt makes the monitor jump on the first step.
        let mut cfg = reference_config(ControllerKind::ReducedOrder, 0.01);
        cfg.gains.sigma = 2000.0;
        cfg.gains.gamma = 0.01;
        cfg.initial.rig.observer = Observer::Reduced { zeta: 40.0 };
        cfg.max_dt_halvings = 1;
        cfg.dt = 2.5e-4;
        match run(&cfg) {
            Err(Error::Rejected {
                halvings,
                after,
                before,
                ..
            }) => {
                assert_eq!(halvings, 1);
                assert!(after > before);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        cfg.monitor_mode = MonitorMode::Warn;
        let tr = run(&cfg).unwrap();
        assert!(tr.violations > 0 && tr.first_violation.is_some());
    }
}
