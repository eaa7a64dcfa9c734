//! Truncated sweeping field, its smooth approximation, and time integrators.
//!
//! Controls are held constant on each interval `[τ_j, τ_{j+1})`; the value stored
//! at the last node is not used by the dynamics. With held controls `y`, `t` and
//! `z` are integrated exactly by both schemes; only `x` depends on the scheme.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{h_lower, h_upper, project_disk, Scenario, TargetSet};
use crate::math::{exp, Mat2, Vec2};

/// Uniform grid on the reparametrized horizon `[0, T*]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    pub n_intervals: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(n_intervals: usize, horizon: f64) -> Result<Self> {
        if n_intervals < 2 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("time grid needs N >= 2 and a positive horizon"));
        }
        Ok(TimeGrid { n_intervals, horizon })
    }

    /// Grid on `[0, 1]`.
    pub fn unit(n_intervals: usize) -> Result<Self> {
        Self::new(n_intervals, 1.0)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_intervals as f64
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.n_intervals as f64
    }
}

/// Node-sampled controls `(v, u, u0, ω)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlProfile {
    pub grid: TimeGrid,
    pub v: Vec<Vec2>,
    pub u: Vec<Vec2>,
    pub u0: Vec<f64>,
    pub omega: Vec<f64>,
}

impl ControlProfile {
    pub fn zeros(grid: TimeGrid) -> Self {
        let n = grid.n_nodes();
        ControlProfile { grid, v: vec![Vec2::ZERO; n], u: vec![Vec2::ZERO; n], u0: vec![0.0; n], omega: vec![0.0; n] }
    }

    pub fn constant(grid: TimeGrid, v: Vec2, u: Vec2, u0: f64, omega: f64) -> Self {
        let n = grid.n_nodes();
        ControlProfile { grid, v: vec![v; n], u: vec![u; n], u0: vec![u0; n], omega: vec![omega; n] }
    }

    /// Lengths match the grid and every control lies in its set (with slack `tol`).
    pub fn check(&self, s: &Scenario, tol: f64) -> Result<()> {
        let n = self.grid.n_nodes();
        if self.v.len() != n || self.u.len() != n || self.u0.len() != n || self.omega.len() != n {
            return Err(invalid("control profile length does not match the grid"));
        }
        for i in 0..n {
            let ok = self.v[i].norm() <= s.v_bound + tol
                && self.u[i].norm() <= s.u_bound + tol
                && (-tol..=1.0 + tol).contains(&self.u0[i])
                && self.omega[i] >= -tol
                && self.omega[i].is_finite();
            if !ok {
                return Err(Error::Invalid(alloc::format!("control out of bounds at node {i}")));
            }
        }
        Ok(())
    }

    /// Copy the last interval's values onto the final node.
    pub fn hold_last(&mut self) {
        let n = self.grid.n_intervals;
        self.v[n] = self.v[n - 1];
        self.u[n] = self.u[n - 1];
        self.u0[n] = self.u0[n - 1];
        self.omega[n] = self.omega[n - 1];
    }

    /// Physical horizon `Σ_j ω_j dt`.
    pub fn final_time(&self) -> f64 {
        let dt = self.grid.dt();
        self.omega[..self.grid.n_intervals].iter().map(|w| w * dt).sum()
    }
}

/// Node-sampled states `(y, x, z, t)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub y: Vec<Vec2>,
    pub x: Vec<Vec2>,
    pub z: Vec<f64>,
    pub t: Vec<f64>,
    /// Physical final time `t(T*)`.
    pub final_time: f64,
}

/// Increasing smoothing parameters, each above `M / R1`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmoothingSchedule {
    pub gammas: Vec<f64>,
}

impl SmoothingSchedule {
    pub fn new(gammas: Vec<f64>, s: &Scenario) -> Result<Self> {
        if gammas.is_empty() {
            return Err(invalid("empty smoothing schedule"));
        }
        for g in &gammas {
            check_gamma(*g, s)?;
        }
        if gammas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("smoothing schedule must be strictly increasing"));
        }
        Ok(SmoothingSchedule { gammas })
    }

    /// `{2, 4, 8, 16, 32, 64} · M/R1`.
    pub fn default_for(s: &Scenario) -> Self {
        Self::multiples(s, &[2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
    }

    pub fn multiples(s: &Scenario, factors: &[f64]) -> Self {
        SmoothingSchedule { gammas: factors.iter().map(|k| k * s.cone_rate()).collect() }
    }

    pub fn last(&self) -> f64 {
        *self.gammas.last().expect("schedule is nonempty")
    }
}

pub(crate) fn check_gamma(gamma: f64, s: &Scenario) -> Result<()> {
    if gamma > s.cone_rate() && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Schedule { gamma, bound: s.cone_rate() })
    }
}

/// Drift `f(x, u)` of the scenario's family, saturated at `M1`.
pub fn drift(x: Vec2, u: Vec2, s: &Scenario) -> Vec2 {
    s.drift_value(x, u)
}

/// Exact truncated field: `f − (M/R1)·u0·(x − y)` on the boundary, `f` inside.
pub fn sweeping_field_exact(x: Vec2, y: Vec2, u: Vec2, u0: f64, s: &Scenario) -> Result<Vec2> {
    let tol = 1e-9 * s.r1;
    let d = (x - y).norm();
    if d > s.r1 + tol {
        return Err(Error::InfeasibleState { node: 0, h: h_lower(x, y, s) });
    }
    let f = drift(x, u, s);
    if d >= s.r1 - tol {
        Ok(f - (x - y) * (s.cone_rate() * u0))
    } else {
        Ok(f)
    }
}

/// `c(γ, x, y) ≈ min{M/R1, γ·exp(γ·h_lower(x, y))}` with a C¹ corner.
///
/// With `r = γ·exp(γ·h)/(M/R1)`, `c = (M/R1)·sat(r)` where `sat` is the identity below
/// `1 − δ`, equal to 1 above `1 + δ`, and quadratic in between. `c ≤ min{…}` everywhere and
/// `c = M/R1` on the boundary since `δ ≤ γ/(M/R1) − 1`.
pub fn smoothing_coefficient(gamma: f64, x: Vec2, y: Vec2, s: &Scenario) -> Result<f64> {
    check_gamma(gamma, s)?;
    Ok(coefficient(gamma, h_lower(x, y, s), s.cone_rate()).0)
}

/// Half-width of the corner blend of the coefficient, relative to the cap.
pub const COEFFICIENT_BLEND: f64 = 0.5;

/// Coefficient value and its derivative with respect to `h`.
#[inline]
pub(crate) fn coefficient(gamma: f64, h: f64, cap: f64) -> (f64, f64) {
    let e = gamma * exp(gamma * h);
    let r = e / cap;
    let delta = COEFFICIENT_BLEND.min(gamma / cap - 1.0);
    if r <= 1.0 - delta {
        (e, gamma * e)
    } else if r >= 1.0 + delta {
        (cap, 0.0)
    } else {
        let a = r - 1.0 + delta;
        (cap * (r - a * a / (4.0 * delta)), gamma * e * (1.0 - a / (2.0 * delta)))
    }
}

/// Smoothed field `f − u0·c(γ, x, y)·(x − y)`.
pub fn sweeping_field_smooth(x: Vec2, y: Vec2, u: Vec2, u0: f64, gamma: f64, s: &Scenario) -> Result<Vec2> {
    check_gamma(gamma, s)?;
    Ok(field(x, y, u, u0, gamma, s))
}

#[inline]
pub(crate) fn field(x: Vec2, y: Vec2, u: Vec2, u0: f64, gamma: f64, s: &Scenario) -> Vec2 {
    let (c, _) = coefficient(gamma, h_lower(x, y, s), s.cone_rate());
    drift(x, u, s) - (x - y) * (u0 * c)
}

/// Smoothed field with its partial derivatives.
#[derive(Clone, Copy, Debug)]
pub struct FieldJacobian {
    pub value: Vec2,
    pub dx: Mat2,
    pub dy: Mat2,
    pub du: Mat2,
    pub du0: Vec2,
    /// `c(γ, x, y)` at the evaluation point.
    pub coefficient: f64,
}

/// Jacobians of the drift family (`∂f/∂x`, `∂f/∂u`), including saturation.
pub fn drift_jacobians(x: Vec2, u: Vec2, s: &Scenario) -> (Mat2, Mat2) {
    let a = s.drift.matrix();
    let w = s.drift.raw(x, u);
    let n = w.norm();
    if n <= s.m1 {
        (a, Mat2::IDENTITY)
    } else {
        let wh = w * (1.0 / n);
        let d = Mat2::IDENTITY.add(&Mat2::outer(wh, wh).scale(-1.0)).scale(s.m1 / n);
        (d.mul(&a), d)
    }
}

pub fn field_jacobian(x: Vec2, y: Vec2, u: Vec2, u0: f64, gamma: f64, s: &Scenario) -> FieldJacobian {
    let d = x - y;
    let (c, dc) = coefficient(gamma, h_lower(x, y, s), s.cone_rate());
    let (fx, fu) = drift_jacobians(x, u, s);
    // ∂[c·d]/∂x = c·I + d ⊗ ∇c with ∇_x c = c'(h)·d
    let k = Mat2::scaled_identity(c).add(&Mat2::outer(d, d).scale(dc));
    FieldJacobian {
        value: drift(x, u, s) - d * (u0 * c),
        dx: fx.add(&k.scale(-u0)),
        dy: k.scale(u0),
        du: fu,
        du0: d * (-c),
        coefficient: c,
    }
}

/// Fixed-step scheme for the `x` equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Fixed-step RK4 integration of the smoothed system.
pub fn integrate_smooth(cp: &ControlProfile, x_init: Vec2, gamma: f64, s: &Scenario) -> Result<StateTrajectory> {
    integrate_smooth_with(cp, x_init, gamma, s, Scheme::Rk4)
}

/// One explicit Euler step of `x` over interval `j` (shared with the transcription).
#[inline]
pub(crate) fn euler_x(x: Vec2, y: Vec2, u: Vec2, u0: f64, w: f64, dt: f64, gamma: f64, s: &Scenario) -> Vec2 {
    x + field(x, y, u, u0, gamma, s) * (dt * w)
}

pub fn integrate_smooth_with(
    cp: &ControlProfile,
    x_init: Vec2,
    gamma: f64,
    s: &Scenario,
    scheme: Scheme,
) -> Result<StateTrajectory> {
    check_gamma(gamma, s)?;
    cp.check(s, 1e-9)?;
    if h_lower(x_init, s.y0, s) > 1e-9 * s.r1 {
        return Err(Error::InfeasibleState { node: 0, h: h_lower(x_init, s.y0, s) });
    }
    let grid = cp.grid;
    let n = grid.n_intervals;
    let dt = grid.dt();
    let mut tr = empty_trajectory(grid, s.y0, x_init);
    for j in 0..n {
        let (w, v, u, u0) = (cp.omega[j], cp.v[j], cp.u[j], cp.u0[j]);
        let (y, x) = (tr.y[j], tr.x[j]);
        let x_next = match scheme {
            Scheme::Euler => euler_x(x, y, u, u0, w, dt, gamma, s),
            Scheme::Rk4 => {
                let h = dt * w;
                let f = |xx: Vec2, yy: Vec2| field(xx, yy, u, u0, gamma, s);
                let k1 = f(x, y);
                let k2 = f(x + k1 * (0.5 * h), y + v * (0.5 * h));
                let k3 = f(x + k2 * (0.5 * h), y + v * (0.5 * h));
                let k4 = f(x + k3 * h, y + v * h);
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
        push_node(&mut tr, j, x_next, v, u, u0, w, dt);
    }
    tr.final_time = tr.t[n];
    Ok(tr)
}

fn empty_trajectory(grid: TimeGrid, y0: Vec2, x0: Vec2) -> StateTrajectory {
    let n = grid.n_nodes();
    let mut tr = StateTrajectory {
        grid,
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        final_time: 0.0,
    };
    tr.y.push(y0);
    tr.x.push(x0);
    tr.z.push(0.0);
    tr.t.push(0.0);
    tr
}

#[inline]
fn push_node(tr: &mut StateTrajectory, j: usize, x_next: Vec2, v: Vec2, u: Vec2, u0: f64, w: f64, dt: f64) {
    let h = dt * w;
    tr.y.push(tr.y[j] + v * h);
    tr.x.push(x_next);
    tr.z.push(tr.z[j] + (u.norm_sq() + u0 * u0) * h);
    tr.t.push(tr.t[j] + h);
}

/// Truncation budget exceeded during a catching-up step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeasibilityLoss {
    /// First node whose state could not be brought back into the disk.
    pub node: usize,
    pub required: f64,
    pub budget: f64,
}

/// Result of the catching-up integrator.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CatchupRun {
    pub trajectory: StateTrajectory,
    /// Recorded cone activation per interval (`correction / (M·ω·dt)`), node `N` held.
    pub u0: Vec<f64>,
    pub warning: Option<FeasibilityLoss>,
}

/// Catching-up scheme: Euler drift step, then a radial correction of at most `M·ω·dt`.
///
/// The recorded `u0` replaces the profile's `u0` in the cost accumulator.
pub fn integrate_catchup(cp: &ControlProfile, x_init: Vec2, s: &Scenario) -> Result<CatchupRun> {
    cp.check(s, 1e-9)?;
    if h_lower(x_init, s.y0, s) > 1e-9 * s.r1 {
        return Err(Error::InfeasibleState { node: 0, h: h_lower(x_init, s.y0, s) });
    }
    let grid = cp.grid;
    let n = grid.n_intervals;
    let dt = grid.dt();
    let mut tr = empty_trajectory(grid, s.y0, x_init);
    let mut u0s = vec![0.0; n + 1];
    let mut warning = None;
    for j in 0..n {
        let (w, v, u) = (cp.omega[j], cp.v[j], cp.u[j]);
        let h = dt * w;
        let y_next = tr.y[j] + v * h;
        let free = tr.x[j] + drift(tr.x[j], u, s) * h;
        let target = project_disk(free, y_next, s.r1);
        let corr = target - free;
        let need = corr.norm();
        let budget = s.m * h;
        let (x_next, u0) = if need == 0.0 {
            (free, 0.0)
        } else if need <= budget {
            (target, need / budget)
        } else {
            if warning.is_none() {
                warning = Some(FeasibilityLoss { node: j + 1, required: need, budget });
            }
            let x = if budget > 0.0 { free + corr * (budget / need) } else { free };
            (x, 1.0)
        };
        u0s[j] = u0;
        push_node(&mut tr, j, x_next, v, u, u0, w, dt);
    }
    u0s[n] = u0s[n - 1];
    tr.final_time = tr.t[n];
    Ok(CatchupRun { trajectory: tr, u0: u0s, warning })
}

/// Worst constraint values along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViolationReport {
    pub max_h_lower: f64,
    pub node_h_lower: usize,
    pub max_h_upper: f64,
    pub node_h_upper: usize,
    pub terminal_distance: f64,
}

pub fn feasibility_monitor(tr: &StateTrajectory, s: &Scenario) -> ViolationReport {
    feasibility_monitor_with(tr, s, &TargetSet::new(s))
}

pub fn feasibility_monitor_with(tr: &StateTrajectory, s: &Scenario, target: &TargetSet) -> ViolationReport {
    let mut rep = ViolationReport {
        max_h_lower: f64::NEG_INFINITY,
        node_h_lower: 0,
        max_h_upper: f64::NEG_INFINITY,
        node_h_upper: 0,
        terminal_distance: target.distance(*tr.y.last().expect("nonempty trajectory")),
    };
    for i in 0..tr.y.len() {
        let hl = h_lower(tr.x[i], tr.y[i], s);
        if hl > rep.max_h_lower {
            rep.max_h_lower = hl;
            rep.node_h_lower = i;
        }
        let hu = h_upper(tr.y[i], s);
        if hu > rep.max_h_upper {
            rep.max_h_upper = hu;
            rep.node_h_upper = i;
        }
    }
    rep
}

/// Sup-norm distance in `x` between the RK4 smoothed run at each `γ` and the catching-up run.
pub fn convergence_study(
    cp: &ControlProfile,
    x_init: Vec2,
    sched: &SmoothingSchedule,
    s: &Scenario,
) -> Result<Vec<(f64, f64)>> {
    let reference = integrate_catchup(cp, x_init, s)?;
    sched
        .gammas
        .iter()
        .map(|&g| {
            let tr = integrate_smooth(cp, x_init, g, s)?;
            let err = tr
                .x
                .iter()
                .zip(&reference.trajectory.x)
                .map(|(a, b)| a.dist(*b))
                .fold(0.0, f64::max);
            Ok((g, err))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cos, sin};
    use proptest::prelude::*;

    fn corridor() -> Scenario {
        Scenario::default()
    }

    #[test]
    fn identity_drift_examples() {
        let s = corridor();
        assert_eq!(drift(Vec2::new(3.0, 1.0), Vec2::new(0.3, -0.4), &s), Vec2::new(0.3, -0.4));
        let a = Scenario { drift: crate::geometry::DriftSpec::Affine { a: Mat2::ZERO }, ..corridor() };
        let u = Vec2::new(0.6, 0.2);
        assert_eq!(drift(Vec2::new(1.0, 2.0), u, &a), drift(Vec2::new(1.0, 2.0), u, &s));
        assert!(drift(Vec2::ZERO, Vec2::new(0.0, 1.0), &s).norm() <= s.m1);
    }

    #[test]
    fn exact_field_examples() {
        let s = corridor();
        let y = Vec2::new(2.0, 1.0);
        let u = Vec2::new(0.1, 0.2);
        assert_eq!(sweeping_field_exact(y + Vec2::new(0.3, 0.0), y, u, 1.0, &s).unwrap(), u);
        assert_eq!(sweeping_field_exact(y + Vec2::new(1.0, 0.0), y, u, 0.0, &s).unwrap(), u);
        let f = sweeping_field_exact(y + Vec2::new(1.0, 0.0), y, Vec2::ZERO, 1.0, &s).unwrap();
        assert!((f - Vec2::new(-1.5, 0.0)).norm() < 1e-15);
        assert!(sweeping_field_exact(y + Vec2::new(1.1, 0.0), y, u, 1.0, &s).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let s = corridor();
        let y = Vec2::ZERO;
        assert_eq!(smoothing_coefficient(10.0, Vec2::new(1.0, 0.0), y, &s).unwrap(), 1.5);
        // h_lower = -1 at |x - y|² = R1² - 2 is impossible for R1 = 1; use R1 = 2
        let s2 = Scenario { r1: 2.0, m: 3.0, ..corridor() };
        let x = Vec2::new(crate::math::sqrt(2.0), 0.0);
        let c = smoothing_coefficient(10.0, x, y, &s2).unwrap();
        assert!((c - 10.0 * exp(-10.0)).abs() < 1e-15);
        assert!((c - 4.54e-4).abs() < 1e-6);
        assert!(matches!(smoothing_coefficient(1.0, x, y, &s), Err(Error::Schedule { .. })));
    }

    #[test]
    fn smooth_field_examples() {
        let s = corridor();
        let y = Vec2::new(-1.0, 0.5);
        let u = Vec2::new(0.2, -0.3);
        let x_in = y + Vec2::new(0.1, 0.0);
        assert_eq!(sweeping_field_smooth(x_in, y, u, 0.0, 10.0, &s).unwrap(), u);
        let xb = y + Vec2::polar(0.4);
        let exact = sweeping_field_exact(xb, y, u, 0.7, &s).unwrap();
        let smooth = sweeping_field_smooth(xb, y, u, 0.7, 10.0, &s).unwrap();
        assert!((exact - smooth).norm() < 1e-12);
        // deep interior: γ e^{γh} < 1e-3 keeps the correction below 1e-3
        let g = 40.0;
        let deep = sweeping_field_smooth(y, y + Vec2::new(0.5, 0.0), u, 1.0, g, &s).unwrap();
        assert!((deep - u).norm() < 1e-3);
    }

    #[test]
    fn field_jacobian_matches_finite_differences() {
        let s = Scenario {
            drift: crate::geometry::DriftSpec::Affine { a: Mat2::new(0.1, 0.3, -0.2, 0.05) },
            m1: 0.9,
            k_f: 0.4,
            ..corridor()
        };
        let gamma = 6.0;
        let y = Vec2::new(0.3, -0.2);
        for &(x, u, u0) in &[
            (Vec2::new(0.9, 0.1), Vec2::new(0.5, 0.2), 0.7),
            (Vec2::new(0.5, -0.4), Vec2::new(-0.9, 0.7), 0.3),
            (Vec2::new(0.2, 0.1), Vec2::new(0.1, 0.1), 1.0),
        ] {
            let j = field_jacobian(x, y, u, u0, gamma, &s);
            let h = 1e-6;
            let f = |x: Vec2, y: Vec2, u: Vec2, u0: f64| field(x, y, u, u0, gamma, &s);
            for (k, e) in [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)].iter().enumerate() {
                let dxf = (f(x + *e * h, y, u, u0) - f(x - *e * h, y, u, u0)) * (0.5 / h);
                let dyf = (f(x, y + *e * h, u, u0) - f(x, y - *e * h, u, u0)) * (0.5 / h);
                let duf = (f(x, y, u + *e * h, u0) - f(x, y, u - *e * h, u0)) * (0.5 / h);
                let col = |m: &Mat2| if k == 0 { Vec2::new(m.a11, m.a21) } else { Vec2::new(m.a12, m.a22) };
                assert!((col(&j.dx) - dxf).norm() < 1e-6, "dx {k}");
                assert!((col(&j.dy) - dyf).norm() < 1e-6, "dy {k}");
                assert!((col(&j.du) - duf).norm() < 1e-6, "du {k}");
            }
            let du0 = (f(x, y, u, u0 + 1e-6) - f(x, y, u, u0 - 1e-6)) * (0.5e6);
            assert!((j.du0 - du0).norm() < 1e-6);
        }
    }

    #[test]
    fn frozen_and_constant_runs() {
        let s = corridor();
        let grid = TimeGrid::unit(10).unwrap();
        let cp = ControlProfile::constant(grid, Vec2::new(1.0, 0.0), Vec2::new(0.5, 0.0), 0.5, 0.0);
        let tr = integrate_smooth(&cp, Vec2::new(0.2, 0.0), 5.0, &s).unwrap();
        assert_eq!(tr.final_time, 0.0);
        assert!(tr.x.iter().all(|x| *x == Vec2::new(0.2, 0.0)));
        let cp = ControlProfile::constant(grid, Vec2::ZERO, Vec2::ZERO, 0.0, 3.0);
        let tr = integrate_smooth(&cp, Vec2::new(0.2, 0.1), 5.0, &s).unwrap();
        assert!(tr.x.iter().all(|x| *x == Vec2::new(0.2, 0.1)));
        assert!(tr.y.iter().all(|y| *y == s.y0));
        assert!(tr.z.iter().all(|z| *z == 0.0));
        assert!((tr.final_time - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_self_convergence_is_fourth_order() {
        // interior run with a rotating drift: cone term negligible, smooth dynamics
        let s = Scenario {
            drift: crate::geometry::DriftSpec::Affine { a: Mat2::new(0.0, -0.05, 0.05, 0.0) },
            m1: 2.0,
            k_f: 0.05,
            ..corridor()
        };
        let run = |n: usize| {
            let grid = TimeGrid::unit(n).unwrap();
            let cp = ControlProfile::constant(grid, Vec2::new(0.3, 0.0), Vec2::new(0.2, 0.1), 0.0, 2.0);
            integrate_smooth(&cp, Vec2::new(0.1, 0.0), 5.0, &s).unwrap().x[n]
        };
        let (a, b, c) = (run(10), run(20), run(40));
        let ratio = a.dist(b) / b.dist(c);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn catchup_interior_equals_euler() {
        let s = corridor();
        let grid = TimeGrid::unit(20).unwrap();
        let cp = ControlProfile::constant(grid, Vec2::new(0.5, 0.0), Vec2::new(0.3, 0.2), 0.0, 1.0);
        let run = integrate_catchup(&cp, Vec2::ZERO, &s).unwrap();
        assert!(run.warning.is_none());
        assert!(run.u0.iter().all(|u| *u == 0.0));
        let mut x = Vec2::ZERO;
        for j in 0..20 {
            x += Vec2::new(0.3, 0.2) * 0.05;
            assert_eq!(run.trajectory.x[j + 1], x);
        }
    }

    #[test]
    fn catchup_outward_drift_stays_on_boundary() {
        let s = corridor();
        let theta = 0.6f64;
        let grid = TimeGrid::unit(200).unwrap();
        // drift at angle θ from the outward normal (1, 0)
        let u = Vec2::new(cos(theta), sin(theta));
        let cp = ControlProfile::constant(grid, Vec2::ZERO, u, 0.0, 0.2);
        let run = integrate_catchup(&cp, Vec2::new(1.0, 0.0), &s).unwrap();
        assert!(run.warning.is_none());
        for (i, x) in run.trajectory.x.iter().enumerate() {
            assert!(h_lower(*x, s.y0, &s) <= 0.0, "node {i}");
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
        let expected = u.norm() * cos(theta) * s.r1 / s.m;
        assert!((run.u0[0] - expected).abs() < 1e-3, "{} vs {expected}", run.u0[0]);
    }

    #[test]
    fn catchup_warns_when_budget_is_too_small() {
        let s = Scenario { m: 0.2, ..corridor() };
        let grid = TimeGrid::unit(20).unwrap();
        let cp = ControlProfile::constant(grid, Vec2::ZERO, Vec2::new(1.0, 0.0), 0.0, 1.0);
        let run = integrate_catchup(&cp, Vec2::new(1.0, 0.0), &s).unwrap();
        let w = run.warning.expect("warning");
        assert_eq!(w.node, 1);
        assert!(w.required > w.budget);
    }

    #[test]
    fn monitor_reports_violations() {
        let s = corridor();
        let grid = TimeGrid::unit(4).unwrap();
        let cp = ControlProfile::constant(grid, Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.0, 2.0);
        let mut tr = integrate_smooth(&cp, Vec2::ZERO, 5.0, &s).unwrap();
        let rep = feasibility_monitor(&tr, &s);
        assert!(rep.max_h_lower <= 0.0 && rep.max_h_upper <= 0.0);
        assert!((rep.terminal_distance - 7.0).abs() < 1e-9);
        tr.x[3] = tr.y[3] + Vec2::new(2.0, 0.0);
        let rep = feasibility_monitor(&tr, &s);
        assert_eq!(rep.node_h_lower, 3);
        assert!((rep.max_h_lower - 1.5).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation() {
        let s = corridor();
        assert!(SmoothingSchedule::new(vec![2.0, 4.0], &s).is_ok());
        assert!(SmoothingSchedule::new(vec![1.0, 4.0], &s).is_err());
        assert!(SmoothingSchedule::new(vec![4.0, 4.0], &s).is_err());
        assert_eq!(SmoothingSchedule::default_for(&s).gammas[0], 3.0);
    }

    #[test]
    fn convergence_study_interior_is_exact() {
        let s = corridor();
        let grid = TimeGrid::unit(50).unwrap();
        let cp = ControlProfile::constant(grid, Vec2::new(0.5, 0.0), Vec2::new(0.5, 0.0), 0.0, 2.0);
        let errs = convergence_study(&cp, Vec2::ZERO, &SmoothingSchedule::default_for(&s), &s).unwrap();
        assert!(errs.iter().all(|e| e.1 < 1e-12));
    }

    proptest! {
        #[test]
        fn velocity_sets_are_nested(
            ang in 0.0..crate::math::TAU, ux in -0.7..0.7f64, uy in -0.7..0.7f64,
            gamma_k in 1.1..50.0f64, rad in 0.0..1.0f64,
        ) {
            // the exact velocity set over u0 ∈ [0,1] is contained in the smoothed one
            let s = corridor();
            let gamma = gamma_k * s.cone_rate();
            let y = Vec2::new(0.4, -0.3);
            let u = Vec2::new(ux, uy);
            for x in [y + Vec2::polar(ang), y + Vec2::polar(ang) * rad] {
                for k in 0..=10 {
                    let u0 = k as f64 / 10.0;
                    let e = sweeping_field_exact(x, y, u, u0, &s).unwrap();
                    let hit = (0..=1000).any(|m| {
                        let a = sweeping_field_smooth(x, y, u, m as f64 / 1000.0, gamma, &s).unwrap();
                        a.dist(e) <= 1e-3 * s.m
                    });
                    prop_assert!(hit);
                }
            }
        }

        #[test]
        fn catchup_speed_bound_and_invariance(
            vx in -1.0..1.0f64, vy in -1.0..1.0f64, ux in -0.7..0.7f64, uy in -0.7..0.7f64,
            w in 0.0..5.0f64, x0 in 0.0..1.0f64,
        ) {
            let s = corridor();
            let grid = TimeGrid::unit(16).unwrap();
            let v = Vec2::new(vx, vy).clamp_norm(1.0);
            let cp = ControlProfile::constant(grid, v, Vec2::new(ux, uy), 0.0, w);
            let run = integrate_catchup(&cp, Vec2::new(x0, 0.0), &s).unwrap();
            let tr = &run.trajectory;
            for j in 0..16 {
                let step = tr.x[j + 1].dist(tr.x[j]);
                prop_assert!(step <= (s.m1 + s.m) * w * grid.dt() + 1e-12);
                if run.warning.is_none() {
                    prop_assert!(h_lower(tr.x[j + 1], tr.y[j + 1], &s) <= 0.0);
                }
            }
            let zsum: f64 = (0..16).map(|j| (cp.u[j].norm_sq() + run.u0[j] * run.u0[j]) * w * grid.dt()).sum();
            prop_assert!((tr.z[16] - zsum).abs() < 1e-12);
        }
    }
}
