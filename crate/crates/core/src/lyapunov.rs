//! Discrete Lyapunov functionals and the state-size monitor.
//!
//! Integrals use the trapezoid rule, `h_x` uses central differences inside
//! and second-order one-sided stencils at the walls. With `L = g = h* = 1`
//! the expressions reduce term by term to the `1/n`-weighted sums that
//! appear in the acceptance test of a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{interior_momentum, ControllerKind};
use crate::gfunc::spill_free;
use crate::params::{FluidGrid, Gains, Observer, PhysParams, RigState, TankState};

/// Stencil used in the right-wall gradient term of the energy functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RightStencil {
    /// `(3 h_n + h_{n-2} - 4 h_{n-1})`, the one-sided derivative at `x = L`.
    #[default]
    OneSided,
    /// `(3 h_0 + h_{n-2} - 4 h_{n-1})`, reproducing a literal printed form.
    AsPrinted,
}

/// Discrete `W + E` (fluid part of the control Lyapunov functional).
pub fn fluid_energy(grid: &FluidGrid, p: &PhysParams, stencil: RightStencil) -> f64 {
    let (h, v) = (grid.h(), grid.v());
    let n = grid.n();
    let dx = grid.dx();
    let mu = p.viscosity;
    let hs = p.h_star;

    let mut kinetic = 0.0;
    let mut corrected = 0.0;
    let mut potential = 0.0;
    for i in 1..n {
        kinetic += h[i] * v[i] * v[i];
        let m = h[i] * v[i] + mu * (h[i + 1] - h[i - 1]) / (2.0 * dx);
        corrected += m * m / h[i];
        potential += (h[i] - hs) * (h[i] - hs);
    }
    potential += 0.5 * ((h[0] - hs) * (h[0] - hs) + (h[n] - hs) * (h[n] - hs));

    let left = 4.0 * h[1] - h[2] - 3.0 * h[0];
    let right = match stencil {
        RightStencil::OneSided => 3.0 * h[n] + h[n - 2] - 4.0 * h[n - 1],
        RightStencil::AsPrinted => 3.0 * h[0] + h[n - 2] - 4.0 * h[n - 1],
    };
    let walls = mu * mu / (16.0 * dx) * (left * left / h[0] + right * right / h[n]);

    0.5 * dx * kinetic + 0.5 * dx * corrected + walls + p.gravity * dx * potential
}

fn tank_terms(rig: &RigState, gains: &Gains) -> f64 {
    let (q, k) = (gains.q, gains.k);
    0.5 * q * k * k * rig.xi * rig.xi + 0.5 * q * (rig.w + k * rig.xi).powi(2)
}

fn filter_term(grid: &FluidGrid, rig: &RigState, gains: &Gains, p: &PhysParams) -> f64 {
    let h = grid.h();
    let e = rig.z - interior_momentum(grid) - p.viscosity * (h[grid.n()] - h[0]);
    0.5 * gains.lambda * e * e
}

/// Discrete control Lyapunov functional `V = W + E + (q k^2/2) xi^2 + (q/2)(w + k xi)^2`.
pub fn clf_value(
    grid: &FluidGrid,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
    stencil: RightStencil,
) -> f64 {
    fluid_energy(grid, p, stencil) + tank_terms(rig, gains)
}

/// Monitor for the full-order observer loop.
pub fn phi_bar(
    grid: &FluidGrid,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
    stencil: RightStencil,
) -> Result<f64> {
    let Observer::Full { xi_hat, w_hat } = rig.observer else {
        return Err(Error::ObserverMismatch("full-order"));
    };
    let Gains {
        sigma, q, gamma, ..
    } = *gains;
    let e_xi = xi_hat - rig.xi;
    let e_w = w_hat - rig.w - gamma * e_xi;
    let observer = sigma * q * q / (2.0 * gamma) * e_xi * e_xi + sigma * q * q / gamma * e_w * e_w;
    Ok(clf_value(grid, rig, gains, p, stencil) + observer + filter_term(grid, rig, gains, p))
}

/// Monitor for the reduced-order observer loop.
pub fn psi_bar(
    grid: &FluidGrid,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
    stencil: RightStencil,
) -> Result<f64> {
    let Observer::Reduced { zeta } = rig.observer else {
        return Err(Error::ObserverMismatch("reduced-order"));
    };
    let Gains {
        sigma, q, gamma, ..
    } = *gains;
    let eta = zeta - rig.w + gamma * rig.xi;
    let observer = sigma * q * q / gamma * eta * eta;
    Ok(clf_value(grid, rig, gains, p, stencil) + observer + filter_term(grid, rig, gains, p))
}

/// The functional whose decrease is required for `kind`: `Phi` for the
/// full-order loop, `Psi` for the reduced-order loop and `V` for the
/// full-state law.
pub fn monitor(
    kind: ControllerKind,
    grid: &FluidGrid,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
    stencil: RightStencil,
) -> Result<f64> {
    match kind {
        ControllerKind::FullOrder => phi_bar(grid, rig, gains, p, stencil),
        ControllerKind::ReducedOrder => psi_bar(grid, rig, gains, p, stencil),
        ControllerKind::FullState => Ok(clf_value(grid, rig, gains, p, stencil)),
    }
}

/// Trapezoid approximation of `(xi^2 + w^2 + ||h - h*||^2 + ||v||^2)^{1/2}`.
pub fn omega(grid: &FluidGrid, rig: &RigState, p: &PhysParams) -> f64 {
    let (h, v) = (grid.h(), grid.v());
    let n = grid.n();
    let dx = grid.dx();
    let hs = p.h_star;
    let mut dev = 0.0;
    let mut vel = 0.0;
    for i in 1..n {
        dev += (h[i] - hs) * (h[i] - hs);
        vel += v[i] * v[i];
    }
    let walls = 0.5 * ((h[0] - hs) * (h[0] - hs) + (h[n] - hs) * (h[n] - hs));
    (rig.xi * rig.xi + rig.w * rig.w + dx * (dev + walls) + dx * vel).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorValues {
    pub phi_or_psi: f64,
    pub omega: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub spill_ok: bool,
}

pub fn evaluate(
    kind: ControllerKind,
    state: &TankState,
    gains: &Gains,
    p: &PhysParams,
    stencil: RightStencil,
) -> Result<MonitorValues> {
    Ok(MonitorValues {
        phi_or_psi: monitor(kind, &state.grid, &state.rig, gains, p, stencil)?,
        omega: omega(&state.grid, &state.rig, p),
        h_min: state.grid.h_min(),
        h_max: state.grid.h_max(),
        spill_ok: spill_free(&state.grid, p),
    })
}
