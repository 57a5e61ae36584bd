//! Mean-field limit of the two-word chain.
//!
//! In fractions `x = X/n`, `y = Y/n`, `z = 1 − x − y`:
//!
//! ```text
//! x' = xz + z² − xy        y' = yz + z² − xy
//! ```
//!
//! and in `u = |x − y|`, `z`:
//!
//! ```text
//! u' = uz                  z' = (1 − u² − 4z − z²) / 2
//! ```
//!
//! Integration is fixed-step RK4. After every step the state is checked
//! against its invariant set; leaving it by more than [`INVARIANT_TOL`] is an
//! error rather than something to clamp.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::format_time;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const INVARIANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Stable fraction of AB agents on the diagonal, `√5 − 2`.
    pub z_star: f64,
    /// Diagonal equilibrium `x = y = (1 − z*)/2 = (3 − √5)/2`.
    pub equilibrium: f64,
    /// Consensus-time constant `1 + 1/(2 z*)`.
    pub gamma: f64,
}

pub fn constants() -> Constants {
    let root5 = 5f64.sqrt();
    let z_star = root5 - 2.0;
    let gamma = 1.0 + (root5 + 2.0) / 2.0;
    debug_assert!((gamma - 1.0 - 1.0 / (2.0 * z_star)).abs() < 1e-14);
    Constants { z_star, equilibrium: (3.0 - root5) / 2.0, gamma }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("state ({0}, {1}) is outside the domain")]
    OutsideDomain(f64, f64),
    #[error("left the invariant set at t={t}: ({a}, {b})")]
    InvariantViolation { t: f64, a: f64, b: f64 },
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("horizon must be non-negative and finite, got {0}")]
    InvalidHorizon(f64),
}

fn in_simplex(x: f64, y: f64, tol: f64) -> bool {
    x >= -tol && y >= -tol && x + y <= 1.0 + tol
}

fn xy_field(x: f64, y: f64) -> (f64, f64) {
    let z = 1.0 - x - y;
    (x * z + z * z - x * y, y * z + z * z - x * y)
}

/// Right-hand side in `(x, y)`.
pub fn rhs_xy(x: f64, y: f64) -> Result<(f64, f64), OdeError> {
    if !in_simplex(x, y, INVARIANT_TOL) {
        return Err(OdeError::OutsideDomain(x, y));
    }
    Ok(xy_field(x, y))
}

/// Right-hand side in `(u, z)`.
pub fn rhs_uz(u: f64, z: f64) -> (f64, f64) {
    (u * z, 0.5 * (1.0 - u * u - 4.0 * z - z * z))
}

/// `z'` on the diagonal `x = y`.
pub fn diagonal_rhs(z: f64) -> f64 {
    0.5 * (1.0 - 4.0 * z - z * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeSystem {
    /// State `(x, y)`.
    Xy,
    /// State `(u, z)`.
    Uz,
}

impl OdeSystem {
    fn field(self, s: [f64; 2]) -> [f64; 2] {
        let (a, b) = match self {
            OdeSystem::Xy => xy_field(s[0], s[1]),
            OdeSystem::Uz => rhs_uz(s[0], s[1]),
        };
        [a, b]
    }

    // both state spaces are the unit simplex: x + y <= 1, and u + z = 1 - 2 min(x, y) <= 1
    fn admissible(self, s: [f64; 2], tol: f64) -> bool {
        in_simplex(s[0], s[1], tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub system: OdeSystem,
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn last(&self) -> [f64; 2] {
        *self.states.last().expect("trajectory has at least the initial state")
    }

    /// Linear interpolation between stored samples; clamps outside the range.
    pub fn at(&self, t: f64) -> [f64; 2] {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.states[0];
        }
        if i == self.times.len() {
            return self.last();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[i - 1], self.states[i]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

    /// First stored time at which `pred` holds.
    pub fn first_time(&self, mut pred: impl FnMut([f64; 2]) -> bool) -> Option<f64> {
        self.times.iter().zip(&self.states).find(|(_, &s)| pred(s)).map(|(&t, _)| t)
    }

    /// CSV with columns `t,x,y,z` or `t,u,z`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        match self.system {
            OdeSystem::Xy => {
                writeln!(out, "t,x,y,z")?;
                for (t, s) in self.times.iter().zip(&self.states) {
                    writeln!(out, "{},{},{},{}", format_time(*t), s[0], s[1], 1.0 - s[0] - s[1])?;
                }
            }
            OdeSystem::Uz => {
                writeln!(out, "t,u,z")?;
                for (t, s) in self.times.iter().zip(&self.states) {
                    writeln!(out, "{},{},{}", format_time(*t), s[0], s[1])?;
                }
            }
        }
        Ok(())
    }
}

/// RK4 from `init` to `horizon`, keeping every `keep_every`-th step (and the endpoint).
pub fn integrate(
    system: OdeSystem,
    init: [f64; 2],
    step: f64,
    horizon: f64,
    keep_every: usize,
) -> Result<Trajectory, OdeError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(OdeError::InvalidStep(step));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(OdeError::InvalidHorizon(horizon));
    }
    if !system.admissible(init, INVARIANT_TOL) {
        return Err(OdeError::OutsideDomain(init[0], init[1]));
    }
    let keep_every = keep_every.max(1);
    let steps = (horizon / step).ceil() as usize;
    let mut traj = Trajectory { system, step, times: vec![0.0], states: vec![init] };
    let mut s = init;
    for i in 1..=steps {
        let t_prev = (i - 1) as f64 * step;
        let t = (i as f64 * step).min(horizon);
        let h = t - t_prev;
        let k1 = system.field(s);
        let k2 = system.field([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
        let k3 = system.field([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
        let k4 = system.field([s[0] + h * k3[0], s[1] + h * k3[1]]);
        for d in 0..2 {
            s[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        if !system.admissible(s, INVARIANT_TOL) {
            return Err(OdeError::InvariantViolation { t, a: s[0], b: s[1] });
        }
        if i % keep_every == 0 || i == steps {
            traj.times.push(t);
            traj.states.push(s);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_consistent() {
        let c = constants();
        assert!((c.z_star - 0.236_067_977_499_79).abs() < 1e-13);
        assert!((c.gamma - 3.118_033_988_749_89).abs() < 1e-13);
        assert!((c.gamma - 1.0 - 1.0 / (2.0 * c.z_star)).abs() < 1e-14);
        assert!(diagonal_rhs(c.z_star).abs() < 1e-15);
        assert!((c.equilibrium - (1.0 - c.z_star) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rhs_examples() {
        let e = constants().equilibrium;
        let (a, b) = rhs_xy(e, e).unwrap();
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
        assert_eq!(rhs_xy(0.0, 0.0).unwrap(), (1.0, 1.0));
        let (a, b) = rhs_xy(0.3, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(rhs_xy(0.8, 0.5).is_err());
        assert!(rhs_xy(-0.1, 0.5).is_err());

        let (du, dz) = rhs_uz(0.0, constants().z_star);
        assert!(du == 0.0 && dz.abs() < 1e-15);
        assert_eq!(rhs_uz(1.0, 0.0), (0.0, 0.0));
        assert_eq!(diagonal_rhs(0.0), 0.5);
        assert_eq!(diagonal_rhs(1.0), -2.0);
    }

    #[test]
    fn xy_and_uz_forms_agree() {
        for &(x, y) in &[(0.1, 0.5), (0.4, 0.2), (0.0, 0.7), (0.3, 0.3)] {
            let (dx, dy) = rhs_xy(x, y).unwrap();
            let z = 1.0 - x - y;
            let (du, dz) = rhs_uz((x - y).abs(), z);
            let sign = if x >= y { 1.0 } else { -1.0 };
            assert!((sign * (dx - dy) - du).abs() < 1e-14);
            assert!((-(dx + dy) - dz).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_start_converges_to_z_star() {
        let traj = integrate(OdeSystem::Xy, [0.0, 0.0], DEFAULT_STEP, 30.0, 1000).unwrap();
        let [x, y] = traj.last();
        assert_eq!(x, y);
        assert!(((1.0 - x - y) - constants().z_star).abs() < 1e-6);
        assert_eq!(*traj.times.last().unwrap(), 30.0);
    }

    #[test]
    fn small_u_grows_at_rate_z_star() {
        let zs = constants().z_star;
        let (u0, u1) = (1e-3, 1e-2);
        let traj = integrate(OdeSystem::Uz, [u0, zs], DEFAULT_STEP, 60.0, 1).unwrap();
        let hit = traj.first_time(|s| s[0] >= u1).unwrap();
        let linear = (u1 / u0).ln() / zs;
        assert!((hit - linear).abs() / linear < 0.05, "{hit} vs {linear}");
        assert!(traj.first_time(|s| s[0] >= 1.0 - 1e-3).is_some());
        assert!(traj.states.windows(2).all(|w| w[1][0] >= w[0][0]));
    }

    #[test]
    fn u_tends_to_one() {
        let traj = integrate(OdeSystem::Uz, [1e-3, 0.0], DEFAULT_STEP, 50.0, 100).unwrap();
        assert!(traj.last()[0] > 0.999);
    }

    #[test]
    fn fourth_order_convergence() {
        let end = |h: f64| integrate(OdeSystem::Xy, [0.05, 0.6], h, 2.0, 1_000_000).unwrap().last();
        let reference = end(0.0125 / 8.0);
        let e1 = (end(0.05)[0] - reference[0]).abs();
        let e2 = (end(0.025)[0] - reference[0]).abs();
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn simplex_is_forward_invariant() {
        for &init in &[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.5, 0.5], [0.2, 0.1]] {
            let traj = integrate(OdeSystem::Xy, init, DEFAULT_STEP, 20.0, 10).unwrap();
            assert!(traj.states.iter().all(|s| in_simplex(s[0], s[1], INVARIANT_TOL)));
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(matches!(integrate(OdeSystem::Xy, [0.0, 0.0], 0.0, 1.0, 1), Err(OdeError::InvalidStep(_))));
        assert!(matches!(integrate(OdeSystem::Xy, [0.9, 0.9], 0.1, 1.0, 1), Err(OdeError::OutsideDomain(..))));
    }

    #[test]
    fn csv_and_interpolation() {
        let traj = integrate(OdeSystem::Uz, [0.5, 0.2], 0.5, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,u,z\n0.00000000000,0.5,0.2\n"));
        assert_eq!(text.lines().count(), 4);
        let mid = traj.at(0.25);
        assert!((mid[0] - (traj.states[0][0] + traj.states[1][0]) / 2.0).abs() < 1e-15);
        assert_eq!(traj.at(5.0), traj.last());
    }
}
