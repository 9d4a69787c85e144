//! Control laws and the discrete updates of tank, observer, and filter.
//!
//! Within a step the control `f` is computed once from the pre-step state
//! and every update below reads only pre-step values. The tank and both
//! observers are advanced with their exact solutions for constant `f`; the
//! filter uses a forward-Euler step.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{
    measured_output, FluidGrid, Gains, MeasuredOutput, Observer, PhysParams, RigState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Output feedback with the full-order observer `(xi_hat, w_hat)`.
    #[serde(alias = "full")]
    FullOrder,
    /// Output feedback with the reduced-order observer `zeta`.
    #[serde(alias = "reduced")]
    ReducedOrder,
    /// Static state feedback using the true momentum and tank velocity.
    FullState,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::FullOrder => "full-order",
            ControllerKind::ReducedOrder => "reduced-order",
            ControllerKind::FullState => "full-state",
        }
    }

    pub fn accepts(self, observer: &Observer) -> bool {
        matches!(
            (self, observer),
            (ControllerKind::FullOrder, Observer::Full { .. })
                | (ControllerKind::ReducedOrder, Observer::Reduced { .. })
                | (ControllerKind::FullState, _)
        )
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-order" => Ok(ControllerKind::FullOrder),
            "reduced" | "reduced-order" => Ok(ControllerKind::ReducedOrder),
            "full-state" | "state" => Ok(ControllerKind::FullState),
            other => Err(Error::Scenario(format!("unknown controller `{other}`"))),
        }
    }
}

/// `dx * sum_{i=1}^{n-1} h_i v_i`; the wall terms vanish with `v_0 = v_n = 0`.
pub fn interior_momentum(grid: &FluidGrid) -> f64 {
    let (h, v) = (grid.h(), grid.v());
    let n = grid.n();
    let s: f64 = (1..n).map(|i| h[i] * v[i]).sum();
    grid.dx() * s
}

/// `-sigma (2 lambda z + (1 - 2 lambda) mu (h_n - h_0) - q (w_hat + k xi) + q gamma (xi_hat - xi))`.
pub fn control_full(
    y: &MeasuredOutput,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
) -> Result<f64> {
    let Observer::Full { xi_hat, w_hat } = rig.observer else {
        return Err(Error::ObserverMismatch("full-order"));
    };
    let Gains {
        sigma,
        q,
        k,
        gamma,
        lambda,
        ..
    } = *gains;
    let mu = p.viscosity;
    Ok(-sigma
        * (2.0 * lambda * rig.z + (1.0 - 2.0 * lambda) * mu * (y.h_right - y.h_left)
            - q * (w_hat + k * y.xi)
            + q * gamma * (xi_hat - y.xi)))
}

/// `-sigma (2 lambda z + (1 - 2 lambda) mu (h_n - h_0) - q (zeta + (gamma + k) xi))`.
pub fn control_reduced(
    y: &MeasuredOutput,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
) -> Result<f64> {
    let Observer::Reduced { zeta } = rig.observer else {
        return Err(Error::ObserverMismatch("reduced-order"));
    };
    let Gains {
        sigma,
        q,
        k,
        gamma,
        lambda,
        ..
    } = *gains;
    let mu = p.viscosity;
    Ok(-sigma
        * (2.0 * lambda * rig.z + (1.0 - 2.0 * lambda) * mu * (y.h_right - y.h_left)
            - q * (zeta + (gamma + k) * y.xi)))
}

/// `-sigma (2 P + mu (h_n - h_0) - q (w + k xi))` with `P` the discrete momentum.
pub fn control_full_state(grid: &FluidGrid, rig: &RigState, gains: &Gains, p: &PhysParams) -> f64 {
    let h = grid.h();
    let momentum = interior_momentum(grid);
    -gains.sigma
        * (2.0 * momentum + p.viscosity * (h[grid.n()] - h[0])
            - gains.q * (rig.w + gains.k * rig.xi))
}

pub fn control(
    kind: ControllerKind,
    grid: &FluidGrid,
    rig: &RigState,
    gains: &Gains,
    p: &PhysParams,
) -> Result<f64> {
    let y = measured_output(grid, rig);
    match kind {
        ControllerKind::FullOrder => control_full(&y, rig, gains, p),
        ControllerKind::ReducedOrder => control_reduced(&y, rig, gains, p),
        ControllerKind::FullState => Ok(control_full_state(grid, rig, gains, p)),
    }
}

/// Exact double-integrator step for constant `f`: `(xi^+, w^+)`.
pub fn advance_tank(xi: f64, w: f64, f: f64, dt: f64) -> (f64, f64) {
    (xi + dt * w - 0.5 * dt * dt * f, w - dt * f)
}

/// Exact flow over `dt` of the full-observer error
/// `e_xi' = e_w - 2 gamma e_xi`, `e_w' = -(1/2 + gamma^2) e_xi`.
pub fn observer_error_step(e_xi: f64, e_w: f64, gamma: f64, dt: f64) -> (f64, f64) {
    let decay = (-gamma * dt).exp();
    let (s, c) = (dt / SQRT_2).sin_cos();
    let next_xi = decay * (c * e_xi + SQRT_2 * s * (e_w - gamma * e_xi));
    let next_w =
        decay * (c * e_w + gamma * SQRT_2 * s * (e_w - (gamma + 1.0 / (2.0 * gamma)) * e_xi));
    (next_xi, next_w)
}

/// `(xi_hat^+, w_hat^+)` from the post-step tank state and the exact error flow.
pub fn advance_full_observer(
    rig: &RigState,
    xi_next: f64,
    w_next: f64,
    gains: &Gains,
    dt: f64,
) -> Result<(f64, f64)> {
    let Observer::Full { xi_hat, w_hat } = rig.observer else {
        return Err(Error::ObserverMismatch("full-order"));
    };
    let (e_xi, e_w) = observer_error_step(xi_hat - rig.xi, w_hat - rig.w, gains.gamma, dt);
    Ok((xi_next + e_xi, w_next + e_w))
}

/// `zeta^+ = w^+ - gamma xi^+ + exp(-gamma dt) (zeta - w + gamma xi)`.
pub fn advance_reduced_observer(
    rig: &RigState,
    xi_next: f64,
    w_next: f64,
    gains: &Gains,
    dt: f64,
) -> Result<f64> {
    let Observer::Reduced { zeta } = rig.observer else {
        return Err(Error::ObserverMismatch("reduced-order"));
    };
    let g = gains.gamma;
    Ok(w_next - g * xi_next + (-g * dt).exp() * (zeta - rig.w + g * rig.xi))
}

/// `z^+ = z + dt (m f - (g/2)(h_n^2 - h_0^2) - beta (z - mu (h_n - h_0)))`.
pub fn advance_filter(
    z: f64,
    f: f64,
    y: &MeasuredOutput,
    gains: &Gains,
    p: &PhysParams,
    dt: f64,
) -> f64 {
    let (h0, hn) = (y.h_left, y.h_right);
    z + dt
        * (p.mass * f
            - p.gravity / 2.0 * (hn * hn - h0 * h0)
            - gains.beta * (z - p.viscosity * (hn - h0)))
}

/// Advances tank, observer, and filter over one step with control `f`.
pub fn advance_rig(
    rig: &RigState,
    f: f64,
    y: &MeasuredOutput,
    gains: &Gains,
    p: &PhysParams,
    dt: f64,
) -> Result<RigState> {
    let (xi, w) = advance_tank(rig.xi, rig.w, f, dt);
    let observer = match rig.observer {
        Observer::Full { .. } => {
            let (xi_hat, w_hat) = advance_full_observer(rig, xi, w, gains, dt)?;
            Observer::Full { xi_hat, w_hat }
        }
        Observer::Reduced { .. } => Observer::Reduced {
            zeta: advance_reduced_observer(rig, xi, w, gains, dt)?,
        },
        Observer::None => Observer::None,
    };
    Ok(RigState {
        xi,
        w,
        observer,
        z: advance_filter(rig.z, f, y, gains, p, dt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_gains() -> Gains {
        Gains {
            sigma: 9.5,
            q: 1.2,
            k: 1.5,
            gamma: 1.0,
            beta: 1.0,
            lambda: 0.0,
        }
    }

    fn unit() -> PhysParams {
        PhysParams::dimensionless(0.2, 2.0).unwrap()
    }

    fn y(xi: f64, h0: f64, hn: f64) -> MeasuredOutput {
        MeasuredOutput {
            xi,
            h_left: h0,
            h_right: hn,
        }
    }

    fn full(xi: f64, w: f64, xi_hat: f64, w_hat: f64) -> RigState {
        RigState {
            xi,
            w,
            observer: Observer::Full { xi_hat, w_hat },
            z: 0.2,
        }
    }

    fn reduced(xi: f64, w: f64, zeta: f64) -> RigState {
        RigState {
            xi,
            w,
            observer: Observer::Reduced { zeta },
            z: 0.2,
        }
    }

    #[test]
    fn full_law_examples() {
        let g = reference_gains();
        let p = unit();
        let zero = RigState::at_rest(Observer::Full {
            xi_hat: 0.0,
            w_hat: 0.0,
        });
        assert_eq!(control_full(&y(0.0, 1.0, 1.0), &zero, &g, &p).unwrap(), 0.0);

        let f = control_full(&y(2.0, 0.5, 1.5), &full(2.0, -2.2, 2.3, -2.5), &g, &p).unwrap();
        assert!((f - 0.38).abs() < 1e-12, "{f}");

        let g2 = Gains { sigma: 19.0, ..g };
        let f2 = control_full(&y(2.0, 0.5, 1.5), &full(2.0, -2.2, 2.3, -2.5), &g2, &p).unwrap();
        assert!((f2 - 2.0 * f).abs() < 1e-12);
        assert!(control_full(&y(0.0, 1.0, 1.0), &reduced(0.0, 0.0, 0.0), &g, &p).is_err());
    }

    #[test]
    fn reduced_law_examples() {
        let g = reference_gains();
        let p = unit();
        let r = reduced(0.7, 0.0, -(g.gamma + g.k) * 0.7);
        assert_eq!(control_reduced(&y(0.7, 1.1, 1.1), &r, &g, &p).unwrap(), 0.0);

        let f = control_reduced(&y(2.0, 0.5, 1.5), &reduced(2.0, -2.2, -5.0), &g, &p).unwrap();
        assert!((f + 1.9).abs() < 1e-12, "{f}");
        assert!(control_reduced(&y(0.0, 1.0, 1.0), &full(0.0, 0.0, 0.0, 0.0), &g, &p).is_err());
    }

    #[test]
    fn reduced_law_is_affine_with_printed_coefficients() {
        let g = Gains {
            lambda: 0.3,
            ..reference_gains()
        };
        let p = unit();
        let base = reduced(0.4, 0.1, -0.3);
        let yb = y(0.4, 0.9, 1.2);
        let f0 = control_reduced(&yb, &base, &g, &p).unwrap();
        let d = 1e-3;
        let df_z = control_reduced(
            &yb,
            &RigState {
                z: base.z + d,
                ..base
            },
            &g,
            &p,
        )
        .unwrap()
            - f0;
        assert!((df_z / d + g.sigma * 2.0 * g.lambda).abs() < 1e-9);
        let df_zeta = control_reduced(&yb, &reduced(0.4, 0.1, -0.3 + d), &g, &p).unwrap() - f0;
        assert!((df_zeta / d - g.sigma * g.q).abs() < 1e-9);
        let df_xi = control_reduced(&y(0.4 + d, 0.9, 1.2), &reduced(0.4 + d, 0.1, -0.3), &g, &p)
            .unwrap()
            - f0;
        assert!((df_xi / d - g.sigma * g.q * (g.gamma + g.k)).abs() < 1e-9);
        let df_h = control_reduced(&y(0.4, 0.9, 1.2 + d), &base, &g, &p).unwrap() - f0;
        assert!((df_h / d + g.sigma * (1.0 - 2.0 * g.lambda) * p.viscosity).abs() < 1e-9);
    }

    #[test]
    fn full_state_examples() {
        let g = Gains {
            sigma: 1.0,
            ..reference_gains()
        };
        let p = unit();
        let eq = FluidGrid::equilibrium(50, 1.0, 1.0).unwrap();
        assert_eq!(
            control_full_state(&eq, &RigState::at_rest(Observer::None), &g, &p),
            0.0
        );

        let pi = std::f64::consts::PI;
        let grid = FluidGrid::from_fn(400, 1.0, |_| 1.0, |x| (pi * x).sin()).unwrap();
        let f = control_full_state(&grid, &RigState::at_rest(Observer::None), &g, &p);
        assert!((f + 2.0 * 2.0 / pi).abs() < 1e-5, "{f}");
    }

    #[test]
    fn laws_agree_with_converged_estimates() {
        let g = Gains {
            lambda: 1.0,
            ..reference_gains()
        };
        let p = unit();
        let grid = FluidGrid::from_fn(64, 1.0, |x| 1.0 + 0.1 * (x - 0.5), |x| 0.3 * x * (1.0 - x))
            .unwrap();
        let (xi, w) = (0.8, -0.4);
        let h = grid.h();
        let z = interior_momentum(&grid) + p.viscosity * (h[64] - h[0]);
        let reference = control_full_state(
            &grid,
            &RigState {
                xi,
                w,
                observer: Observer::None,
                z,
            },
            &g,
            &p,
        );
        let r = RigState {
            xi,
            w,
            observer: Observer::Reduced {
                zeta: w - g.gamma * xi,
            },
            z,
        };
        let fr = control(ControllerKind::ReducedOrder, &grid, &r, &g, &p).unwrap();
        let f = RigState {
            observer: Observer::Full {
                xi_hat: xi,
                w_hat: w,
            },
            ..r
        };
        let ff = control(ControllerKind::FullOrder, &grid, &f, &g, &p).unwrap();
        assert!((fr - reference).abs() < 1e-12);
        assert!((ff - reference).abs() < 1e-12);
    }

    #[test]
    fn tank_examples() {
        assert_eq!(advance_tank(1.0, 0.5, 0.0, 0.1), (1.0 + 0.05, 0.5));
        let (xi, w) = advance_tank(2.0, -2.2, -1.9, 0.1);
        assert!((xi - 1.7895).abs() < 1e-14);
        assert!((w + 2.01).abs() < 1e-14);
    }

    #[test]
    fn tank_semigroup() {
        let (a, b) = advance_tank(0.3, -1.1, 0.7, 0.05);
        let (a, b) = advance_tank(a, b, 0.7, 0.05);
        let (c, d) = advance_tank(0.3, -1.1, 0.7, 0.1);
        assert!((a - c).abs() < 1e-15 && (b - d).abs() < 1e-15);
    }

    #[test]
    fn observer_error_example() {
        let (a, b) = observer_error_step(1.0, 0.0, 1.0, 0.1);
        // expm([[-2, 1], [-1.5, 0]] * 0.1) applied to (1, 0)
        assert!((a - 0.812_167_91).abs() < 1e-8, "{a}");
        assert!((b + 0.135_612_54).abs() < 1e-8, "{b}");
    }

    #[test]
    fn zero_error_is_preserved() {
        let g = reference_gains();
        let r = full(0.5, 0.2, 0.5, 0.2);
        let (xi, w) = advance_tank(r.xi, r.w, 0.3, 0.01);
        assert_eq!(advance_full_observer(&r, xi, w, &g, 0.01).unwrap(), (xi, w));
        let r = reduced(0.5, 0.2, 0.2 - g.gamma * 0.5);
        let zeta = advance_reduced_observer(&r, xi, w, &g, 0.01).unwrap();
        assert_eq!(zeta, w - g.gamma * xi);
    }

    #[test]
    fn reduced_error_example() {
        let g = reference_gains();
        let r = reduced(2.0, -2.2, -5.0);
        let (xi, w) = advance_tank(r.xi, r.w, -1.9, 0.1);
        let zeta = advance_reduced_observer(&r, xi, w, &g, 0.1).unwrap();
        let eta = zeta - w + g.gamma * xi;
        assert!((eta + 0.8 * (-0.1f64).exp()).abs() < 1e-14);
        assert!((eta + 0.723_869_93).abs() < 1e-8);
    }

    #[test]
    fn filter_examples() {
        let g = Gains {
            beta: 1.0,
            ..reference_gains()
        };
        let p = unit();
        assert_eq!(
            advance_filter(0.0, 0.0, &y(0.0, 1.0, 1.0), &g, &p, 0.01),
            0.0
        );
        assert!((advance_filter(0.2, 0.0, &y(0.0, 1.0, 1.0), &g, &p, 0.01) - 0.198).abs() < 1e-15);
    }

    #[test]
    fn filter_reproduces_unit_form_bitwise() {
        let g = Gains {
            beta: 0.7,
            ..reference_gains()
        };
        let p = unit();
        let (z, f, dt, h0, hn) = (0.31, -0.8, 1e-3, 0.93, 1.12);
        let printed =
            z + dt * (f - 0.5 * (hn * hn - h0 * h0) - g.beta * (z - p.viscosity * (hn - h0)));
        assert_eq!(advance_filter(z, f, &y(0.0, h0, hn), &g, &p, dt), printed);
    }

    #[test]
    fn lambda_zero_ignores_filter_state() {
        let g = reference_gains();
        let p = unit();
        let out = y(1.0, 0.8, 1.3);
        let a = control_reduced(
            &out,
            &RigState {
                z: 0.2,
                ..reduced(1.0, 0.0, -0.5)
            },
            &g,
            &p,
        )
        .unwrap();
        let b = control_reduced(
            &out,
            &RigState {
                z: -7.0,
                ..reduced(1.0, 0.0, -0.5)
            },
            &g,
            &p,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn reduced_error_composes(eta0 in -5.0f64..5.0, gamma in 0.1f64..3.0, steps in 1usize..50) {
            let g = Gains { gamma, ..reference_gains() };
            let dt = 0.01;
            let mut r = reduced(1.0, -0.5, -0.5 - gamma * 1.0 + eta0);
            for _ in 0..steps {
                let (xi, w) = advance_tank(r.xi, r.w, 0.2, dt);
                let zeta = advance_reduced_observer(&r, xi, w, &g, dt).unwrap();
                r = RigState { xi, w, observer: Observer::Reduced { zeta }, z: r.z };
            }
            let Observer::Reduced { zeta } = r.observer else { unreachable!() };
            let eta = zeta - r.w + gamma * r.xi;
            let want = (-gamma * steps as f64 * dt).exp() * eta0;
            prop_assert!((eta - want).abs() <= 1e-12 * (1.0 + eta0.abs()));
        }
    }
}
