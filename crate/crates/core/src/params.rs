//! Physical parameters, controller gains, and the sampled state of the tank.
//!
//! The solver modules work in the dimensionless frame `L = g = h* = 1`. The
//! [`Scaling`] type converts a physical configuration into that frame and
//! back:
//!
//! ```text
//! U  = sqrt(g h*)            (gravity-wave speed at rest)
//! x' = x / L                 h' = h / h*          t' = t U / L
//! v' = v / U                 w' = w / U           xi' = xi / L
//! f' = f L / U^2             z' = z / (h* U L)    mu' = mu / (L U)
//! sigma' = sigma h* L^2 / U  q' = q / (h* L)      k' = k L / U
//! gamma' = gamma L / U       beta' = beta L / U   H_max' = H_max / h*
//! ```
//!
//! The map leaves the momentum balance invariant, so every gain inequality
//! holds in one frame iff it holds in the other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

/// Tank and fluid constants.
///
/// `mass` is the liquid volume per unit width, always `h_star * length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub length: f64,
    pub gravity: f64,
    pub h_star: f64,
    pub viscosity: f64,
    pub wall_height: f64,
    pub mass: f64,
}

impl PhysParams {
    pub fn new(
        length: f64,
        gravity: f64,
        h_star: f64,
        viscosity: f64,
        wall_height: f64,
    ) -> Result<Self> {
        let p = Self {
            length,
            gravity,
            h_star,
            viscosity,
            wall_height,
            mass: h_star * length,
        };
        p.validate()?;
        Ok(p)
    }

    /// `L = g = h* = m = 1` with the given viscosity and wall height.
    pub fn dimensionless(viscosity: f64, wall_height: f64) -> Result<Self> {
        Self::new(1.0, 1.0, 1.0, viscosity, wall_height)
    }

    pub fn validate(&self) -> Result<()> {
        positive("length", self.length)?;
        positive("gravity", self.gravity)?;
        positive("h_star", self.h_star)?;
        positive("viscosity", self.viscosity)?;
        positive("wall_height", self.wall_height)?;
        if self.h_star >= self.wall_height {
            return Err(Error::InvalidParameter {
                name: "h_star",
                reason: format!(
                    "equilibrium level {} must lie below the wall height {}",
                    self.h_star, self.wall_height
                ),
            });
        }
        if self.mass != self.h_star * self.length {
            return Err(Error::InvalidParameter {
                name: "mass",
                reason: format!("must equal h_star * length = {}", self.h_star * self.length),
            });
        }
        Ok(())
    }

    pub fn is_dimensionless(&self) -> bool {
        self.length == 1.0 && self.gravity == 1.0 && self.h_star == 1.0
    }
}

/// Controller, observer and filter constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub sigma: f64,
    pub q: f64,
    pub k: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Weight of the filtered momentum estimate, in `[0, 1]`.
    pub lambda: f64,
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        positive("sigma", self.sigma)?;
        positive("q", self.q)?;
        positive("k", self.k)?;
        positive("gamma", self.gamma)?;
        positive("beta", self.beta)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must lie in [0, 1], got {}", self.lambda),
            });
        }
        Ok(())
    }
}

/// Liquid level `h` and relative velocity `v` sampled at `x_i = i * dx`,
/// `i = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidGrid {
    h: Vec<f64>,
    v: Vec<f64>,
    dx: f64,
}

impl FluidGrid {
    pub fn new(h: Vec<f64>, v: Vec<f64>, length: f64) -> Result<Self> {
        if h.len() != v.len() {
            return Err(Error::InvalidGrid(format!(
                "h has {} samples but v has {}",
                h.len(),
                v.len()
            )));
        }
        if h.len() < 3 {
            return Err(Error::InvalidGrid("need n >= 2 (at least 3 nodes)".into()));
        }
        positive("length", length)?;
        if let Some((i, hi)) = h
            .iter()
            .enumerate()
            .find(|(_, hi)| !(hi.is_finite() && **hi > 0.0))
        {
            return Err(Error::InvalidGrid(format!(
                "h[{i}] = {hi} is not a positive level"
            )));
        }
        if v.iter().any(|vi| !vi.is_finite()) {
            return Err(Error::InvalidGrid("v contains non-finite values".into()));
        }
        let n = h.len() - 1;
        if v[0] != 0.0 || v[n] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "wall velocities must vanish, got v[0] = {}, v[n] = {}",
                v[0], v[n]
            )));
        }
        Ok(Self {
            dx: length / n as f64,
            h,
            v,
        })
    }

    /// Samples `h(x)` and `v(x)` on `n + 1` uniform nodes of `[0, length]`.
    /// The wall velocities are pinned to zero.
    pub fn from_fn(
        n: usize,
        length: f64,
        h: impl Fn(f64) -> f64,
        v: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let dx = length / n as f64;
        let hs = (0..=n).map(|i| h(i as f64 * dx)).collect();
        let mut vs: Vec<f64> = (0..=n).map(|i| v(i as f64 * dx)).collect();
        vs[0] = 0.0;
        vs[n] = 0.0;
        Self::new(hs, vs, length)
    }

    pub fn equilibrium(n: usize, length: f64, h_star: f64) -> Result<Self> {
        Self::new(vec![h_star; n + 1], vec![0.0; n + 1], length)
    }

    pub(crate) fn from_parts_unchecked(h: Vec<f64>, v: Vec<f64>, dx: f64) -> Self {
        debug_assert_eq!(h.len(), v.len());
        Self { h, v, dx }
    }

    pub fn n(&self) -> usize {
        self.h.len() - 1
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn length(&self) -> f64 {
        self.dx * self.n() as f64
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.h, self.v)
    }

    /// Raw profile buffers for the stepper, which preserves the invariants
    /// structurally.
    pub(crate) fn buffers_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.h, &mut self.v)
    }

    /// The grid reflected about `x = L / 2` (`h_i <-> h_{n-i}`, `v_i -> -v_{n-i}`).
    pub fn mirrored(&self) -> Self {
        let h = self.h.iter().rev().copied().collect();
        let v = self.v.iter().rev().map(|x| -x).collect();
        Self { h, v, dx: self.dx }
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.h.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Internal state of the velocity observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observer {
    /// Estimates of the tank position and velocity.
    Full { xi_hat: f64, w_hat: f64 },
    /// Shifted velocity estimate; `zeta + gamma * xi` estimates `w`.
    Reduced { zeta: f64 },
    /// No observer (reference runs with the full-state law).
    None,
}

/// Tank position error `xi`, tank velocity `w`, observer and filter state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigState {
    pub xi: f64,
    pub w: f64,
    pub observer: Observer,
    pub z: f64,
}

impl RigState {
    pub fn at_rest(observer: Observer) -> Self {
        Self {
            xi: 0.0,
            w: 0.0,
            observer,
            z: 0.0,
        }
    }
}

/// Sampled fluid together with tank, observer, and filter states.
#[derive(Debug, Clone, PartialEq)]
pub struct TankState {
    pub grid: FluidGrid,
    pub rig: RigState,
}

/// `y = (xi, h(0), h(L))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredOutput {
    pub xi: f64,
    pub h_left: f64,
    pub h_right: f64,
}

pub fn measured_output(grid: &FluidGrid, rig: &RigState) -> MeasuredOutput {
    MeasuredOutput {
        xi: rig.xi,
        h_left: grid.h[0],
        h_right: grid.h[grid.n()],
    }
}

/// Trapezoid rule on uniformly spaced samples.
///
/// Mirror-image nodes are summed in pairs, so the result is bitwise
/// invariant under reversing `values`.
pub fn trapezoid(dx: f64, values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let mut inner = 0.0;
    for i in 1..n.div_ceil(2) {
        inner += values[i] + values[n - i];
    }
    if n % 2 == 0 {
        inner += values[n / 2];
    }
    dx * (0.5 * (values[0] + values[n]) + inner)
}

pub fn discrete_mass(grid: &FluidGrid) -> f64 {
    trapezoid(grid.dx, &grid.h)
}

/// `h_x` at every node: central differences inside, second-order one-sided
/// stencils at the walls.
pub fn level_gradient(grid: &FluidGrid) -> Vec<f64> {
    let h = &grid.h;
    let n = grid.n();
    let inv = 1.0 / (2.0 * grid.dx);
    let mut d = Vec::with_capacity(n + 1);
    d.push((4.0 * h[1] - h[2] - 3.0 * h[0]) * inv);
    for i in 1..n {
        d.push((h[i + 1] - h[i - 1]) * inv);
    }
    d.push((3.0 * h[n] - 4.0 * h[n - 1] + h[n - 2]) * inv);
    d
}

/// Discrete norm of `(xi, w, h - h*, v)` in `R^2 x H^1 x L^2`.
pub fn discrete_x_norm(grid: &FluidGrid, rig: &RigState, p: &PhysParams) -> f64 {
    let dx = grid.dx;
    let dev: Vec<f64> = grid.h.iter().map(|h| (h - p.h_star).powi(2)).collect();
    let grad: Vec<f64> = level_gradient(grid).into_iter().map(|d| d * d).collect();
    let vel: Vec<f64> = grid.v.iter().map(|v| v * v).collect();
    let sq = rig.xi * rig.xi
        + rig.w * rig.w
        + trapezoid(dx, &dev)
        + trapezoid(dx, &grad)
        + trapezoid(dx, &vel);
    sq.sqrt()
}

/// Conversion factors between a physical configuration and the
/// dimensionless frame described in the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    length: f64,
    h_star: f64,
    speed: f64,
}

impl Scaling {
    pub fn new(p: &PhysParams) -> Self {
        Self {
            length: p.length,
            h_star: p.h_star,
            speed: (p.gravity * p.h_star).sqrt(),
        }
    }

    fn time(&self) -> f64 {
        self.length / self.speed
    }

    fn momentum(&self) -> f64 {
        self.h_star * self.speed * self.length
    }

    pub fn params(&self, p: &PhysParams) -> PhysParams {
        PhysParams {
            length: 1.0,
            gravity: 1.0,
            h_star: 1.0,
            viscosity: p.viscosity / (self.length * self.speed),
            wall_height: p.wall_height / self.h_star,
            mass: 1.0,
        }
    }

    pub fn params_back(&self, p: &PhysParams, gravity: f64) -> PhysParams {
        PhysParams {
            length: self.length,
            gravity,
            h_star: self.h_star,
            viscosity: p.viscosity * self.length * self.speed,
            wall_height: p.wall_height * self.h_star,
            mass: self.h_star * self.length,
        }
    }

    pub fn gains(&self, g: &Gains) -> Gains {
        let rate = self.time();
        Gains {
            sigma: g.sigma * self.h_star * self.length * self.length / self.speed,
            q: g.q / (self.h_star * self.length),
            k: g.k * rate,
            gamma: g.gamma * rate,
            beta: g.beta * rate,
            lambda: g.lambda,
        }
    }

    pub fn gains_back(&self, g: &Gains) -> Gains {
        let rate = self.time();
        Gains {
            sigma: g.sigma * self.speed / (self.h_star * self.length * self.length),
            q: g.q * self.h_star * self.length,
            k: g.k / rate,
            gamma: g.gamma / rate,
            beta: g.beta / rate,
            lambda: g.lambda,
        }
    }

    pub fn to_time(&self, t: f64) -> f64 {
        t / self.time()
    }

    pub fn from_time(&self, t: f64) -> f64 {
        t * self.time()
    }

    pub fn state(&self, s: &TankState) -> TankState {
        let (l, u) = (self.length, self.speed);
        let h = s.grid.h.iter().map(|h| h / self.h_star).collect();
        let v = s.grid.v.iter().map(|v| v / u).collect();
        let observer = match s.rig.observer {
            Observer::Full { xi_hat, w_hat } => Observer::Full {
                xi_hat: xi_hat / l,
                w_hat: w_hat / u,
            },
            Observer::Reduced { zeta } => Observer::Reduced { zeta: zeta / u },
            Observer::None => Observer::None,
        };
        TankState {
            grid: FluidGrid::from_parts_unchecked(h, v, s.grid.dx / l),
            rig: RigState {
                xi: s.rig.xi / l,
                w: s.rig.w / u,
                observer,
                z: s.rig.z / self.momentum(),
            },
        }
    }

    pub fn state_back(&self, s: &TankState) -> TankState {
        let (l, u) = (self.length, self.speed);
        let h = s.grid.h.iter().map(|h| h * self.h_star).collect();
        let v = s.grid.v.iter().map(|v| v * u).collect();
        let observer = match s.rig.observer {
            Observer::Full { xi_hat, w_hat } => Observer::Full {
                xi_hat: xi_hat * l,
                w_hat: w_hat * u,
            },
            Observer::Reduced { zeta } => Observer::Reduced { zeta: zeta * u },
            Observer::None => Observer::None,
        };
        TankState {
            grid: FluidGrid::from_parts_unchecked(h, v, s.grid.dx * l),
            rig: RigState {
                xi: s.rig.xi * l,
                w: s.rig.w * u,
                observer,
                z: s.rig.z * self.momentum(),
            },
        }
    }
}

/// Rescales `(p, state)` to the dimensionless frame.
pub fn to_dimensionless(p: &PhysParams, state: &TankState) -> (PhysParams, TankState) {
    let s = Scaling::new(p);
    (s.params(p), s.state(state))
}

/// Inverse of [`to_dimensionless`] for the physical frame described by
/// `reference`.
pub fn from_dimensionless(
    reference: &PhysParams,
    p: &PhysParams,
    state: &TankState,
) -> (PhysParams, TankState) {
    let s = Scaling::new(reference);
    (s.params_back(p, reference.gravity), s.state_back(state))
}
