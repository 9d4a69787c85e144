//! Gain selection and closed-loop execution for a spill-free transfer.
//!
//! Given a tolerance `eps` and a tank at rest up to `eps` (the liquid and
//! tank velocity, not the position), the planner picks a level-set radius
//! `r` and gains for the reduced-order observer law with `lambda = 0`, then
//! runs the closed loop until the discrete X-norm drops to `eps`.
//!
//! With `K = max(mu^2 / (h* - eps sqrt(L)), g, 3 H_max / 2)` the search is:
//!
//! 1. `q = 0.99 K`.
//! 2. For each `r` on a geometric grid in `(eps^2 K, R)`: start `k` at `0.9`
//!    times its bound and halve it until the window
//!    `8k/q < sigma < min(2g/(mu L), S(r)/8)` is nonempty, where `S(r)` is
//!    [`spectral_bound`]. Put `sigma` at the midpoint and `gamma` at `1.1`
//!    times its lower bound.
//! 3. Keep the candidate with the largest decay proxy
//!    `min(gamma, slowest root of s^2 + sigma q s + sigma q k)`.
//!
//! The transfer time of the existence theory needs constants that are not
//! computable; [`transfer_time`] evaluates the formula for user-supplied
//! values, while the planner reports the time actually achieved.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::ControllerKind;
use crate::gfunc::{spectral_bound, spill_free, spill_radius, Inequality};
use crate::lyapunov::RightStencil;
use crate::params::{discrete_x_norm, Gains, Observer, PhysParams, RigState, TankState};
use crate::scheme::max_stable_dt;
use crate::sim::{Simulation, TraceRecord};

const Q_FRACTION: f64 = 0.99;
const K_FRACTION: f64 = 0.9;
const GAMMA_FACTOR: f64 = 1.1;
const R_CANDIDATES: usize = 64;

/// `max(mu^2 / (h* - eps sqrt(L)), g, 3 H_max / 2)`.
pub fn tolerance_constant(p: &PhysParams, eps: f64) -> f64 {
    let denom = p.h_star - eps * p.length.sqrt();
    (p.viscosity * p.viscosity / denom)
        .max(p.gravity)
        .max(1.5 * p.wall_height)
}

/// The two admissibility conditions on `eps`. Fails with the first violated
/// inequality.
pub fn check_tolerance(p: &PhysParams, eps: f64) -> Result<Vec<Inequality>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("must be positive, got {eps}"),
        });
    }
    let level = Inequality::strict(
        "min(h*, H_max - h*)/sqrt(L) > eps",
        p.h_star.min(p.wall_height - p.h_star) / p.length.sqrt(),
        eps,
    );
    if !level.holds {
        return Err(Error::InfeasibleTolerance(format!(
            "{} fails: {} <= {}",
            level.name, level.lhs, level.rhs
        )));
    }
    let radius = Inequality::strict(
        "R > eps^2 K",
        spill_radius(p),
        eps * eps * tolerance_constant(p, eps),
    );
    if !radius.holds {
        return Err(Error::InfeasibleTolerance(format!(
            "{} fails: {} <= {}",
            radius.name, radius.lhs, radius.rhs
        )));
    }
    Ok(vec![level, radius])
}

/// Upper bound on `k` for a given `r`; infinite when `xi0 = 0`.
pub fn k_bound(p: &PhysParams, eps: f64, q: f64, r: f64, xi0: f64) -> f64 {
    let slack = r - eps * eps * tolerance_constant(p, eps);
    (1.0 / (3.0 * q)).sqrt() * slack.max(0.0).sqrt() / xi0.abs()
}

/// Lower bound on `gamma`.
pub fn gamma_bound(p: &PhysParams, eps: f64, q: f64, sigma: f64, r: f64) -> f64 {
    let slack = r - eps * eps * tolerance_constant(p, eps);
    2.0 * sigma * q * q * eps * eps / slack
}

/// Every inequality the selected `(r, q, sigma, k, gamma)` must satisfy.
pub fn step_checks(
    p: &PhysParams,
    eps: f64,
    xi0: f64,
    r: f64,
    gains: &Gains,
) -> Result<Vec<Inequality>> {
    let big_k = tolerance_constant(p, eps);
    let Gains {
        sigma, q, k, gamma, ..
    } = *gains;
    let mut checks = vec![
        Inequality::strict("r > 0", r, 0.0),
        Inequality::strict("R > r", spill_radius(p), r),
        Inequality::strict("q > 0", q, 0.0),
        Inequality::strict("K >= q", big_k, q),
        Inequality::strict("r > eps^2 K", r, eps * eps * big_k),
        Inequality::strict(
            "2g/(mu L) > sigma",
            2.0 * p.gravity / (p.viscosity * p.length),
            sigma,
        ),
        Inequality::strict("sigma > 8k/q", sigma, 8.0 * k / q),
        Inequality::strict(
            "2 pi^2 mu G^-1(-cr)/(m L^2 G^-1(cr)) > 8 sigma",
            spectral_bound(p, r)?,
            8.0 * sigma,
        ),
        Inequality::strict(
            "gamma >= 2 sigma q^2 eps^2/(r - K eps^2)",
            gamma,
            gamma_bound(p, eps, q, sigma, r),
        ),
        Inequality::strict("k > 0", k, 0.0),
        Inequality::strict("gamma > 0", gamma, 0.0),
    ];
    if xi0 != 0.0 {
        checks.push(Inequality::strict(
            "k <= sqrt(1/(3q)) sqrt(r - eps^2 K)/|xi(0)|",
            k_bound(p, eps, q, r, xi0),
            k,
        ));
    }
    Ok(checks)
}

/// One feasible choice of radius and gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainChoice {
    pub r: f64,
    pub gains: Gains,
    /// The open interval `sigma` was centred in.
    pub sigma_window: (f64, f64),
    pub decay_proxy: f64,
    pub checks: Vec<Inequality>,
}

fn slow_root(sigma: f64, q: f64, k: f64) -> f64 {
    let b = sigma * q;
    let c = sigma * q * k;
    let disc = b * b - 4.0 * c;
    if disc <= 0.0 {
        b / 2.0
    } else {
        // smaller root of s^2 - b s + c, computed without cancellation
        2.0 * c / (b + disc.sqrt())
    }
}

fn candidate(p: &PhysParams, eps: f64, xi0: f64, q: f64, r: f64) -> Result<Option<GainChoice>> {
    let sigma_hi = (2.0 * p.gravity / (p.viscosity * p.length)).min(spectral_bound(p, r)? / 8.0);
    let bound = k_bound(p, eps, q, r, xi0);
    let mut k = if bound.is_finite() {
        K_FRACTION * bound
    } else {
        q * sigma_hi / 8.0
    };
    if !(k > 0.0) {
        return Ok(None);
    }
    while 8.0 * k / q >= sigma_hi {
        k *= 0.5;
        if k < f64::MIN_POSITIVE {
            return Ok(None);
        }
    }
    let sigma_lo = 8.0 * k / q;
    let sigma = 0.5 * (sigma_lo + sigma_hi);
    let gamma = GAMMA_FACTOR * gamma_bound(p, eps, q, sigma, r);
    // beta is inert at lambda = 0; centring it keeps the general conditions valid
    let beta = 0.5 * spectral_bound(p, r)?;
    let gains = Gains {
        sigma,
        q,
        k,
        gamma,
        beta,
        lambda: 0.0,
    };
    let checks = step_checks(p, eps, xi0, r, &gains)?;
    if !checks.iter().all(|c| c.holds) {
        return Ok(None);
    }
    Ok(Some(GainChoice {
        r,
        gains,
        sigma_window: (sigma_lo, sigma_hi),
        decay_proxy: gamma.min(slow_root(sigma, q, k)),
        checks,
    }))
}

/// Deterministic search for `r` and the gains.
pub fn select_gains(p: &PhysParams, eps: f64, xi0: f64) -> Result<GainChoice> {
    check_tolerance(p, eps)?;
    let big_k = tolerance_constant(p, eps);
    let q = Q_FRACTION * big_k;
    let lo = eps * eps * big_k;
    let hi = spill_radius(p);
    let mut best: Option<GainChoice> = None;
    for j in 1..=R_CANDIDATES {
        let r = lo * (hi / lo).powf(j as f64 / (R_CANDIDATES + 1) as f64);
        if let Some(c) = candidate(p, eps, xi0, q, r)? {
            if best.as_ref().is_none_or(|b| c.decay_proxy > b.decay_proxy) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| {
        Error::InfeasibleGains(format!(
            "no r in ({lo:e}, {hi:e}) admits 8k/q < sigma < min(2g/(mu L), S(r)/8) with positive k"
        ))
    })
}

/// `T = ln((M |xi(0)| + 2 M eps) / eps) / phi` for user-supplied `M`, `phi`.
pub fn transfer_time(m: f64, phi: f64, xi0: f64, eps: f64) -> f64 {
    ((m * xi0.abs() + 2.0 * m * eps) / eps).ln() / phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    /// Must be dimensionless.
    pub params: PhysParams,
    pub epsilon: f64,
    /// The observer and filter fields are overwritten by the planner.
    pub initial: TankState,
    /// Defaults to half the diffusion limit.
    pub dt: Option<f64>,
    pub t_max: f64,
    pub sample_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub choice: GainChoice,
    pub tolerance_checks: Vec<Inequality>,
    pub n: usize,
    pub dt: f64,
    /// Discrete X-norm of the initial state with `xi` zeroed.
    pub initial_rest_norm: f64,
    pub t_achieved: f64,
    pub final_norm: f64,
    pub spill_ok: bool,
    pub trace: Vec<TraceRecord>,
    pub final_state: TankState,
}

impl TransferPlan {
    pub fn margins_positive(&self) -> bool {
        self.choice.checks.iter().all(|c| c.holds && c.margin > 0.0)
    }
}

/// Selects gains and runs the transfer until the discrete X-norm reaches
/// `epsilon`.
pub fn plan_transfer(req: &PlanRequest) -> Result<TransferPlan> {
    let p = &req.params;
    p.validate()?;
    if !p.is_dimensionless() {
        return Err(Error::InvalidParameter {
            name: "params",
            reason: "the planner runs in the dimensionless frame; rescale first".into(),
        });
    }
    if req.sample_stride == 0 {
        return Err(Error::InvalidParameter {
            name: "sample_stride",
            reason: "must be at least 1".into(),
        });
    }
    let eps = req.epsilon;
    let tolerance_checks = check_tolerance(p, eps)?;
    let xi0 = req.initial.rig.xi;
    let rest = RigState {
        xi: 0.0,
        ..req.initial.rig
    };
    let initial_rest_norm = discrete_x_norm(&req.initial.grid, &rest, p);
    if initial_rest_norm > eps {
        return Err(Error::InfeasibleTolerance(format!(
            "initial state is not at rest within eps: X-norm without xi is {initial_rest_norm} > {eps}"
        )));
    }
    let choice = select_gains(p, eps, xi0)?;

    let grid = &req.initial.grid;
    let dt = req
        .dt
        .unwrap_or_else(|| 0.5 * max_stable_dt(p.viscosity, grid.dx()));
    let state = TankState {
        grid: grid.clone(),
        rig: RigState {
            xi: xi0,
            w: req.initial.rig.w,
            observer: Observer::Reduced {
                zeta: -choice.gains.gamma * xi0,
            },
            z: 0.0,
        },
    };
    let mut sim = Simulation::new(
        ControllerKind::ReducedOrder,
        choice.gains,
        *p,
        RightStencil::OneSided,
        dt,
        state,
    );
    let mut spill_ok = spill_free(&sim.state.grid, p);
    let mut trace = Vec::new();
    let mut k: usize = 0;
    loop {
        let t = k as f64 * dt;
        let norm = discrete_x_norm(&sim.state.grid, &sim.state.rig, p);
        let f = sim.control()?;
        let done = norm <= eps;
        if k % req.sample_stride == 0 || done {
            trace.push(sim.record(t, f, sim.monitor()?));
        }
        if done {
            return Ok(TransferPlan {
                choice,
                tolerance_checks,
                n: grid.n(),
                dt,
                initial_rest_norm,
                t_achieved: t,
                final_norm: norm,
                spill_ok,
                trace,
                final_state: sim.state,
            });
        }
        if t >= req.t_max {
            return Err(Error::NotConverged {
                t_max: req.t_max,
                norm,
            });
        }
        sim.step_with(f)?;
        spill_ok &= spill_free(&sim.state.grid, p);
        k += 1;
    }
}
