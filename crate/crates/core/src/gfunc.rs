//! The level function `G`, its inverse, and the gain and spill conditions
//! built on top of them.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{FluidGrid, Gains, PhysParams};

/// `G(h) = (2/3) sgn(h - h*) (h^{3/2} - 3 h* h^{1/2} + 2 h*^{3/2})`.
///
/// Evaluated through the factorisation
/// `h^{3/2} - 3 h* h^{1/2} + 2 h*^{3/2} = (sqrt h - sqrt h*)^2 (sqrt h + 2 sqrt h*)`,
/// which keeps full relative accuracy near `h = h*`.
pub fn g_function(h: f64, h_star: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("G is defined for positive levels only, got {h}"),
        });
    }
    Ok(g_raw(h, h_star))
}

fn g_raw(h: f64, h_star: f64) -> f64 {
    let (a, b) = (h.sqrt(), h_star.sqrt());
    let d = a - b;
    let sign = if h > h_star {
        1.0
    } else if h < h_star {
        -1.0
    } else {
        0.0
    };
    sign * (2.0 / 3.0) * d * d * (a + 2.0 * b)
}

/// Infimum of the range of `G`, `-(4/3) h*^{3/2}`.
pub fn g_lower_limit(h_star: f64) -> f64 {
    -(4.0 / 3.0) * h_star * h_star.sqrt()
}

/// Inverse of [`g_function`] by bracketed bisection, run until the bracket
/// cannot shrink further in double precision.
pub fn g_inverse(y: f64, h_star: f64) -> Result<f64> {
    let lower = g_lower_limit(h_star);
    if !(y > lower) || !y.is_finite() {
        return Err(Error::OutOfDomain { value: y, lower });
    }
    // G(0+) = lower < y, so 0 is a valid left end.
    let mut lo = 0.0_f64;
    let mut hi = 2.0 * h_star.max(1.0);
    while g_raw(hi, h_star) < y {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::OutOfDomain { value: y, lower });
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_raw(mid, h_star) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo > 0.0 && (g_raw(lo, h_star) - y).abs() < (g_raw(hi, h_star) - y).abs() {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

/// `c`, `theta`, `b` and the spill-free radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub c: f64,
    pub theta: f64,
    pub b: f64,
    pub radius: f64,
}

impl DerivedConstants {
    pub fn new(p: &PhysParams, sigma: f64) -> Self {
        let theta = sigma * p.gravity / (p.gravity + p.viscosity * sigma * p.length);
        let b =
            4.0 * p.mass * p.length * p.length * p.wall_height / (p.viscosity * PI * PI) * theta;
        Self {
            c: 1.0 / (p.viscosity * p.gravity.sqrt()),
            theta,
            b,
            radius: spill_radius(p),
        }
    }
}

/// `R = (2 mu sqrt(g) / 3) (2 h*^{3/2} + sqrt(H_max) min(H_max - 3 h*, 0))`.
pub fn spill_radius(p: &PhysParams) -> f64 {
    let hs = p.h_star;
    let hm = p.wall_height;
    2.0 * p.viscosity * p.gravity.sqrt() / 3.0
        * (2.0 * hs * hs.sqrt() + hm.sqrt() * (hm - 3.0 * hs).min(0.0))
}

/// Pointwise level bounds implied by a value of the Lyapunov functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelBounds {
    pub lo: f64,
    pub hi: f64,
    /// `-c V` fell below the range of `G`; the lower bound is only `h > 0`.
    pub lower_vacuous: bool,
}

impl LevelBounds {
    pub fn contains(&self, h: f64) -> bool {
        self.lo <= h && h <= self.hi
    }
}

/// `G^{-1}(-c V) <= h(x) <= G^{-1}(c V)`.
///
/// When `c V` reaches `(4/3) h*^{3/2}` the left inequality carries no
/// information and `lo` is reported as `0`.
pub fn level_bounds(v_value: f64, p: &PhysParams) -> Result<LevelBounds> {
    if !(v_value >= 0.0) || !v_value.is_finite() {
        return Err(Error::InvalidParameter {
            name: "V",
            reason: format!("must be a finite nonnegative value, got {v_value}"),
        });
    }
    let c = 1.0 / (p.viscosity * p.gravity.sqrt());
    let y = c * v_value;
    let hi = g_inverse(y, p.h_star)?;
    if -y > g_lower_limit(p.h_star) {
        Ok(LevelBounds {
            lo: g_inverse(-y, p.h_star)?,
            hi,
            lower_vacuous: false,
        })
    } else {
        Ok(LevelBounds {
            lo: 0.0,
            hi,
            lower_vacuous: true,
        })
    }
}

/// Neither wall level reaches the wall height.
pub fn spill_free(grid: &FluidGrid, p: &PhysParams) -> bool {
    let h = grid.h();
    h[0].max(h[grid.n()]) < p.wall_height
}

/// One checked inequality `lhs > rhs` (or `>=` where noted by the name).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    pub fn strict(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self {
            name,
            lhs,
            rhs,
            margin: lhs - rhs,
            holds: lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub r: f64,
    pub constants: DerivedConstants,
    /// `2 pi^2 mu G^{-1}(-c r) / (m L^2 G^{-1}(c r))`.
    pub spectral_bound: f64,
    pub checks: Vec<Inequality>,
}

impl GainReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Inequality> {
        self.checks.iter().filter(|c| !c.holds)
    }
}

/// `2 pi^2 mu G^{-1}(-c r) / (m L^2 G^{-1}(c r))`, the upper limit for
/// `beta + 4 sigma`.
pub fn spectral_bound(p: &PhysParams, r: f64) -> Result<f64> {
    let c = 1.0 / (p.viscosity * p.gravity.sqrt());
    let lo = g_inverse(-c * r, p.h_star)?;
    let hi = g_inverse(c * r, p.h_star)?;
    Ok(2.0 * PI * PI * p.viscosity * lo / (p.mass * p.length * p.length * hi))
}

/// Evaluates the sufficient conditions on the gains for a level-set radius
/// `r`. Failed inequalities are reported, not raised; only `r` outside
/// `[0, R)` is an error.
pub fn check_gain_conditions(gains: &Gains, p: &PhysParams, r: f64) -> Result<GainReport> {
    let constants = DerivedConstants::new(p, gains.sigma);
    if !(r >= 0.0 && r < constants.radius) {
        return Err(Error::RadiusOutOfRange {
            r,
            radius: constants.radius,
        });
    }
    let c = constants.c;
    let g_lo = g_inverse(-c * r, p.h_star)?;
    let spectral = spectral_bound(p, r)?;
    let Gains {
        sigma, q, k, beta, ..
    } = *gains;
    let checks = vec![
        Inequality::strict(
            "2g/(mu L) > sigma",
            2.0 * p.gravity / (p.viscosity * p.length),
            sigma,
        ),
        Inequality::strict("sigma > 8k/q", sigma, 8.0 * k / q),
        Inequality::strict(
            "2 pi^2 mu G^-1(-cr)/(m L^2 G^-1(cr)) > beta + 4 sigma",
            spectral,
            beta + 4.0 * sigma,
        ),
        Inequality::strict("beta + 4 sigma > 8 sigma", beta + 4.0 * sigma, 8.0 * sigma),
        Inequality::strict(
            "k < q theta G^-1(-cr)/(b + G^-1(-cr))",
            q * constants.theta * g_lo / (constants.b + g_lo),
            k,
        ),
    ];
    Ok(GainReport {
        r,
        constants,
        spectral_bound: spectral,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(mu: f64, hmax: f64) -> PhysParams {
        PhysParams::dimensionless(mu, hmax).unwrap()
    }

    #[test]
    fn g_examples() {
        assert_eq!(g_function(1.0, 1.0).unwrap(), 0.0);
        assert!((g_function(4.0, 1.0).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert!((g_function(0.25, 1.0).unwrap() + 0.416_666_666_666_666_7).abs() < 1e-15);
        assert!(g_function(0.0, 1.0).is_err());
        assert!(g_function(-1.0, 1.0).is_err());
    }

    #[test]
    fn g_matches_printed_form() {
        // unfactored formula, away from h* where it is well conditioned
        for &(h, hs) in &[(0.05, 1.0), (3.0, 1.0), (0.4, 0.7), (9.0, 2.0)] {
            let raw: f64 = h * f64::sqrt(h) - 3.0 * hs * f64::sqrt(h) + 2.0 * hs * f64::sqrt(hs);
            let printed = (2.0 / 3.0) * (h - hs).signum() * raw;
            assert!((g_function(h, hs).unwrap() - printed).abs() < 1e-13);
        }
    }

    #[test]
    fn g_inverse_examples() {
        assert_eq!(g_inverse(0.0, 1.0).unwrap(), 1.0);
        assert!((g_inverse(8.0 / 3.0, 1.0).unwrap() - 4.0).abs() < 1e-12);
        for h in [0.05, 0.5, 1.0, 2.0, 5.0] {
            let y = g_function(h, 1.0).unwrap();
            assert!((g_inverse(y, 1.0).unwrap() - h).abs() < 1e-10);
        }
        assert!(matches!(
            g_inverse(-4.0 / 3.0, 1.0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(g_inverse(-2.0, 1.0).is_err());
    }

    #[test]
    fn spill_radius_examples() {
        assert!((spill_radius(&unit(0.2, 3.0)) - 0.8 / 3.0).abs() < 1e-15);
        assert!((spill_radius(&unit(0.2, 5.0)) - 0.8 / 3.0).abs() < 1e-15);
        let r = spill_radius(&unit(0.2, 2.0));
        assert!((r - 0.4 / 3.0 * (2.0 - 2f64.sqrt())).abs() < 1e-15);
        assert!((r - 0.078_104_9).abs() < 1e-7);
        let c = 1.0 / 0.2;
        assert!((c * r - g_function(2.0, 1.0).unwrap()).abs() < 1e-12);
        assert!((c * r - 0.390_524).abs() < 1e-6);
    }

    #[test]
    fn level_bounds_examples() {
        let p = unit(0.2, 2.0);
        let b = level_bounds(0.0, &p).unwrap();
        assert_eq!((b.lo, b.hi), (1.0, 1.0));
        let b = level_bounds(spill_radius(&p), &p).unwrap();
        assert!((b.hi - 2.0).abs() < 1e-10);
        assert!(b.lo > 0.0 && !b.lower_vacuous);
        // c V beyond (4/3) h*^{3/2}: only h > 0 is implied below
        let b = level_bounds(1.0, &p).unwrap();
        assert!(b.lower_vacuous && b.lo == 0.0 && b.hi > 2.0);
        assert!(level_bounds(-1.0, &p).is_err());
    }

    #[test]
    fn spill_check() {
        let p = unit(0.2, 2.0);
        let g = FluidGrid::from_fn(10, 1.0, |x| x + 0.5, |_| 0.0).unwrap();
        assert!(spill_free(&g, &p));
        let g = FluidGrid::from_fn(10, 1.0, |x| 2.0 * x + 0.2, |_| 0.0).unwrap();
        assert!(!spill_free(&g, &p));
    }

    #[test]
    fn reference_gains_violate_sigma_bound() {
        let p = unit(0.2, 2.0);
        let gains = Gains {
            sigma: 9.5,
            q: 1.2,
            k: 1.5,
            gamma: 1.0,
            beta: 1.0,
            lambda: 0.0,
        };
        let rep = check_gain_conditions(&gains, &p, 0.05).unwrap();
        let by = |name: &str| rep.checks.iter().find(|c| c.name == name).unwrap().clone();
        assert!(by("2g/(mu L) > sigma").holds);
        assert!((by("2g/(mu L) > sigma").margin - 0.5).abs() < 1e-12);
        let s = by("sigma > 8k/q");
        assert!(!s.holds && (s.rhs - 10.0).abs() < 1e-12);
        assert!(!rep.all_hold());
    }

    #[test]
    fn worked_gains_pass() {
        let p = unit(0.2, 2.0);
        for beta in [0.25, 0.3, 0.35] {
            let gains = Gains {
                sigma: 0.06,
                q: 3.0,
                k: 0.02,
                gamma: 0.05,
                beta,
                lambda: 0.0,
            };
            let rep = check_gain_conditions(&gains, &p, 0.07).unwrap();
            assert!(
                rep.all_hold(),
                "beta {beta}: {:?}",
                rep.failures().collect::<Vec<_>>()
            );
        }
        assert!((spectral_bound(&p, 0.07).unwrap() - 0.60).abs() < 0.01);
    }

    #[test]
    fn small_k_always_passes_sigma_bound() {
        let p = unit(0.2, 2.0);
        for k in [1e-3, 1e-6, 1e-12] {
            let gains = Gains {
                sigma: 0.06,
                q: 3.0,
                k,
                gamma: 1.0,
                beta: 0.3,
                lambda: 0.0,
            };
            let rep = check_gain_conditions(&gains, &p, 0.05).unwrap();
            assert!(rep.checks[1].holds);
        }
    }

    #[test]
    fn radius_out_of_range_is_error() {
        let p = unit(0.2, 2.0);
        let gains = Gains {
            sigma: 0.06,
            q: 3.0,
            k: 0.02,
            gamma: 1.0,
            beta: 0.3,
            lambda: 0.0,
        };
        let r = spill_radius(&p);
        assert!(matches!(
            check_gain_conditions(&gains, &p, r),
            Err(Error::RadiusOutOfRange { .. })
        ));
        assert!(check_gain_conditions(&gains, &p, -0.01).is_err());
    }

    proptest! {
        #[test]
        fn g_strictly_increasing(a in 0.01f64..10.0, b in 0.01f64..10.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(g_function(lo, 1.0).unwrap() < g_function(hi, 1.0).unwrap());
        }

        #[test]
        fn g_inverse_round_trip(h in 0.05f64..5.0, hs in 0.5f64..2.0) {
            let y = g_function(h, hs).unwrap();
            prop_assert!((g_inverse(y, hs).unwrap() - h).abs() <= 1e-10);
        }

        #[test]
        fn radius_identity(mu in 0.01f64..2.0, g in 0.5f64..20.0, hs in 0.1f64..2.0, ratio in 1.01f64..3.0) {
            let p = PhysParams::new(1.3, g, hs, mu, ratio * hs).unwrap();
            let c = 1.0 / (mu * g.sqrt());
            let lhs = c * spill_radius(&p);
            prop_assert!((lhs - g_function(p.wall_height, hs).unwrap()).abs() <= 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn level_bounds_nested(v1 in 0.0f64..0.2, dv in 0.0f64..0.2) {
            let p = unit(0.2, 2.0);
            let a = level_bounds(v1, &p).unwrap();
            let b = level_bounds(v1 + dv, &p).unwrap();
            prop_assert!(b.lo <= a.lo && a.hi <= b.hi);
            prop_assert!(a.lo <= 1.0 && 1.0 <= a.hi);
        }
    }
}
