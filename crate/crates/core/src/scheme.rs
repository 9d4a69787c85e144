//! One explicit step of the sampled fluid in the dimensionless frame.
//!
//! The level update is multiplicative (`h_i^+ = h_i exp(...)`), so every
//! positive profile stays positive for any `dt`. The velocity update is a
//! forward-Euler step of the viscous momentum balance with the wall values
//! pinned to zero. Both updates read only the old values.

use crate::error::{Error, Result};
use crate::params::FluidGrid;

/// Inputs held constant across one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub dt: f64,
    /// Dimensionless viscosity.
    pub mu: f64,
    /// Control input (tank deceleration), piecewise constant.
    pub f: f64,
}

/// `2 dt mu / dx^2`; the centre coefficient of the diffusion stencil is
/// `1 - ratio`, nonnegative iff `ratio <= 1`.
pub fn diffusion_ratio(dt: f64, mu: f64, dx: f64) -> f64 {
    2.0 * dt * mu / (dx * dx)
}

pub fn check_diffusion_guard(dt: f64, mu: f64, dx: f64) -> Result<()> {
    let ratio = diffusion_ratio(dt, mu, dx);
    if ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Stability { ratio })
    }
}

/// Largest `dt` allowed by the diffusion guard.
pub fn max_stable_dt(mu: f64, dx: f64) -> f64 {
    dx * dx / (2.0 * mu)
}

/// `dt max|v| / dx`. Advisory only; nothing in the scheme enforces it.
pub fn advective_number(grid: &FluidGrid, dt: f64) -> f64 {
    let vmax = grid.v().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    dt * vmax / grid.dx()
}

fn log_levels(h: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(h.iter().map(|x| x.ln()));
}

fn level_update(h: &[f64], v: &[f64], ln_h: &[f64], dx: f64, dt: f64, out: &mut [f64]) {
    let n = h.len() - 1;
    let a = dt / (2.0 * dx);
    out[0] = h[0] * (a * (v[2] - 4.0 * v[1])).exp();
    for i in 1..n {
        let e = a * (v[i - 1] - v[i + 1]) + a * v[i] * (ln_h[i - 1] - ln_h[i + 1]);
        out[i] = h[i] * e.exp();
    }
    out[n] = h[n] * (a * (4.0 * v[n - 1] - v[n - 2])).exp();
}

fn velocity_update(h: &[f64], v: &[f64], ln_h: &[f64], dx: f64, sp: &StepParams, out: &mut [f64]) {
    let n = h.len() - 1;
    let StepParams { dt, mu, f } = *sp;
    let d = dt * mu / (dx * dx);
    let a = dt / (2.0 * dx);
    out[0] = 0.0;
    for i in 1..n {
        let dv = v[i + 1] - v[i - 1];
        out[i] = (1.0 - 2.0 * d) * v[i]
            + d * (v[i + 1] + v[i - 1])
            + 0.25 * d * dv * (ln_h[i + 1] - ln_h[i - 1])
            - a * (v[i] * dv + h[i + 1] - h[i - 1])
            + f * dt;
    }
    out[n] = 0.0;
}

/// New levels `h^+`.
pub fn step_h(grid: &FluidGrid, sp: &StepParams) -> Vec<f64> {
    let mut ln_h = Vec::new();
    log_levels(grid.h(), &mut ln_h);
    let mut out = vec![0.0; grid.n() + 1];
    level_update(grid.h(), grid.v(), &ln_h, grid.dx(), sp.dt, &mut out);
    out
}

/// New velocities `v^+`, rejected when the diffusion guard fails.
pub fn step_v(grid: &FluidGrid, sp: &StepParams) -> Result<Vec<f64>> {
    check_diffusion_guard(sp.dt, sp.mu, grid.dx())?;
    Ok(step_v_unchecked(grid, sp))
}

/// [`step_v`] without the guard. A single unguarded step is still a
/// consistent approximation, which is all a local-error study needs.
pub fn step_v_unchecked(grid: &FluidGrid, sp: &StepParams) -> Vec<f64> {
    let mut ln_h = Vec::new();
    log_levels(grid.h(), &mut ln_h);
    let mut out = vec![0.0; grid.n() + 1];
    velocity_update(grid.h(), grid.v(), &ln_h, grid.dx(), sp, &mut out);
    out
}

/// Reusable buffers for stepping a grid in place without allocating.
#[derive(Debug, Default, Clone)]
pub struct Stepper {
    ln_h: Vec<f64>,
    h_new: Vec<f64>,
    v_new: Vec<f64>,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances `grid` by one step. The guard is checked unless `guarded`
    /// is false.
    pub fn advance(&mut self, grid: &mut FluidGrid, sp: &StepParams, guarded: bool) -> Result<()> {
        if guarded {
            check_diffusion_guard(sp.dt, sp.mu, grid.dx())?;
        }
        let n = grid.n();
        log_levels(grid.h(), &mut self.ln_h);
        self.h_new.resize(n + 1, 0.0);
        self.v_new.resize(n + 1, 0.0);
        level_update(
            grid.h(),
            grid.v(),
            &self.ln_h,
            grid.dx(),
            sp.dt,
            &mut self.h_new,
        );
        velocity_update(
            grid.h(),
            grid.v(),
            &self.ln_h,
            grid.dx(),
            sp,
            &mut self.v_new,
        );
        let (h, v) = grid.buffers_mut();
        std::mem::swap(h, &mut self.h_new);
        std::mem::swap(v, &mut self.v_new);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(n: usize) -> FluidGrid {
        FluidGrid::equilibrium(n, 1.0, 1.0).unwrap()
    }

    #[test]
    fn equilibrium_is_fixed() {
        let g = uniform(10);
        let sp = StepParams {
            dt: 1e-3,
            mu: 0.2,
            f: 0.0,
        };
        assert_eq!(step_h(&g, &sp), vec![1.0; 11]);
        assert_eq!(step_v(&g, &sp).unwrap(), vec![0.0; 11]);
    }

    #[test]
    fn left_wall_example() {
        let g = FluidGrid::new(vec![1.0; 3], vec![0.0, 0.1, 0.0], 1.0).unwrap();
        assert_eq!(g.dx(), 0.5);
        let sp = StepParams {
            dt: 0.01,
            mu: 0.2,
            f: 0.0,
        };
        let h = step_h(&g, &sp);
        assert!((h[0] - (-0.004f64).exp()).abs() < 1e-16);
        assert!((h[0] - 0.996_008).abs() < 1e-6);
    }

    #[test]
    fn uniform_forcing() {
        let g = uniform(8);
        let sp = StepParams {
            dt: 0.01,
            mu: 0.2,
            f: 0.5,
        };
        let v = step_v(&g, &sp).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[8], 0.0);
        for vi in &v[1..8] {
            assert!((vi - 0.005).abs() < 1e-17);
        }
    }

    #[test]
    fn guard_rejects_large_steps() {
        let g = uniform(100);
        let sp = StepParams {
            dt: 1e-3,
            mu: 0.2,
            f: 0.0,
        };
        assert!(matches!(step_v(&g, &sp), Err(Error::Stability { .. })));
        let ok = StepParams {
            dt: max_stable_dt(0.2, 0.01),
            ..sp
        };
        assert!(step_v(&g, &ok).is_ok());
    }

    // Straight transcription of the velocity update used as an independent
    // check of the optimised loop.
    fn velocity_oracle(h: &[f64], v: &[f64], dt: f64, dx: f64, mu: f64, f: f64) -> Vec<f64> {
        let n = h.len() - 1;
        let mut out = vec![0.0; n + 1];
        for i in 1..n {
            out[i] = (1.0 - 2.0 * dt * mu / (dx * dx)) * v[i]
                + dt * mu / (dx * dx) * (v[i + 1] + v[i - 1])
                + dt * mu / (4.0 * dx * dx) * (v[i + 1] - v[i - 1]) * (h[i + 1] / h[i - 1]).ln()
                - dt / (2.0 * dx) * (v[i] * (v[i + 1] - v[i - 1]) + h[i + 1] - h[i - 1])
                + f * dt;
        }
        out
    }

    #[test]
    fn velocity_matches_transcription() {
        let g = FluidGrid::from_fn(100, 1.0, |x| x + 0.5, |x| x * x - x).unwrap();
        let (dt, mu) = (1e-4, 0.2);
        // control at the initial reduced-observer state
        let f = -9.5 * (0.2 * (1.5 - 0.5) - 1.2 * (-5.0 + 2.5 * 2.0));
        let got = step_v(&g, &StepParams { dt, mu, f }).unwrap();
        let want = velocity_oracle(g.h(), g.v(), dt, g.dx(), mu, f);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn stepper_matches_pure_functions() {
        let mut g = FluidGrid::from_fn(40, 1.0, |x| 1.0 + 0.1 * (6.0 * x).sin(), |x| x * (1.0 - x))
            .unwrap();
        let sp = StepParams {
            dt: 1e-4,
            mu: 0.2,
            f: 0.3,
        };
        let h = step_h(&g, &sp);
        let v = step_v(&g, &sp).unwrap();
        Stepper::new().advance(&mut g, &sp, true).unwrap();
        assert_eq!(g.h(), &h[..]);
        assert_eq!(g.v(), &v[..]);
    }

    #[test]
    fn still_fluid_keeps_levels() {
        let g = FluidGrid::from_fn(30, 1.0, |x| 1.0 + 0.2 * x * x, |_| 0.0).unwrap();
        let sp = StepParams {
            dt: 1e-4,
            mu: 0.2,
            f: 0.0,
        };
        assert_eq!(step_h(&g, &sp), g.h());
    }

    proptest! {
        #[test]
        fn positivity_for_any_dt(
            h in proptest::collection::vec(0.05f64..5.0, 5..40),
            seed in proptest::collection::vec(-2.0f64..2.0, 40),
            dt in 1e-6f64..0.5,
        ) {
            let n = h.len() - 1;
            let mut v: Vec<f64> = seed[..=n].to_vec();
            v[0] = 0.0;
            v[n] = 0.0;
            let g = FluidGrid::new(h, v, 1.0).unwrap();
            let out = step_h(&g, &StepParams { dt, mu: 0.2, f: 0.0 });
            prop_assert!(out.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn walls_stay_at_rest(
            h in proptest::collection::vec(0.1f64..3.0, 4..30),
            f in -10.0f64..10.0,
        ) {
            let n = h.len() - 1;
            let v: Vec<f64> = (0..=n).map(|i| if i == 0 || i == n { 0.0 } else { (i as f64).sin() }).collect();
            let g = FluidGrid::new(h, v, 1.0).unwrap();
            let dt = 0.5 * max_stable_dt(0.2, g.dx());
            let v = step_v(&g, &StepParams { dt, mu: 0.2, f }).unwrap();
            prop_assert_eq!(v[0], 0.0);
            prop_assert_eq!(v[n], 0.0);
        }
    }
}
