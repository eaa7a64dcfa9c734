//! Direct transcription of the reparametrized lower problem and the penalized
//! single-level problem on the fixed horizon `[0, T*]`.
//!
//! Decision variables are laid out in one flat vector: `x_init` first, then per
//! node `(v, u, u0, ω)`. The state is propagated by explicit Euler on `x` (exact
//! for `y`, `t`, `z` under held controls); gradients come from the exact discrete
//! adjoint of that recursion.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{check_gamma, euler_x, field_jacobian, ControlProfile, FieldJacobian, StateTrajectory, TimeGrid};
use crate::error::{invalid, Result};
use crate::geometry::{h_lower, h_upper, project_disk, Scenario, TargetSet};
use crate::math::Vec2;

/// Initial lower state and all controls.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionVector {
    pub x_init: Vec2,
    pub controls: ControlProfile,
}

/// Offsets into the flat decision vector.
pub mod layout {
    pub const X_INIT: usize = 0;
    pub const PER_NODE: usize = 6;

    #[inline]
    pub const fn len(n_nodes: usize) -> usize {
        2 + PER_NODE * n_nodes
    }
    #[inline]
    pub const fn v(i: usize) -> usize {
        2 + PER_NODE * i
    }
    #[inline]
    pub const fn u(i: usize) -> usize {
        2 + PER_NODE * i + 2
    }
    #[inline]
    pub const fn u0(i: usize) -> usize {
        2 + PER_NODE * i + 4
    }
    #[inline]
    pub const fn omega(i: usize) -> usize {
        2 + PER_NODE * i + 5
    }
}

#[inline]
pub(crate) fn get2(d: &[f64], k: usize) -> Vec2 {
    Vec2::new(d[k], d[k + 1])
}

#[inline]
pub(crate) fn set2(d: &mut [f64], k: usize, p: Vec2) {
    d[k] = p.x;
    d[k + 1] = p.y;
}

impl DecisionVector {
    pub fn grid(&self) -> TimeGrid {
        self.controls.grid
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let cp = &self.controls;
        let n = cp.grid.n_nodes();
        let mut d = vec![0.0; layout::len(n)];
        set2(&mut d, layout::X_INIT, self.x_init);
        for i in 0..n {
            set2(&mut d, layout::v(i), cp.v[i]);
            set2(&mut d, layout::u(i), cp.u[i]);
            d[layout::u0(i)] = cp.u0[i];
            d[layout::omega(i)] = cp.omega[i];
        }
        d
    }

    pub fn from_flat(grid: TimeGrid, d: &[f64]) -> Result<Self> {
        let n = grid.n_nodes();
        if d.len() != layout::len(n) {
            return Err(invalid("flat decision length does not match the grid"));
        }
        let mut cp = ControlProfile::zeros(grid);
        for i in 0..n {
            cp.v[i] = get2(d, layout::v(i));
            cp.u[i] = get2(d, layout::u(i));
            cp.u0[i] = d[layout::u0(i)];
            cp.omega[i] = d[layout::omega(i)];
        }
        Ok(DecisionVector { x_init: get2(d, layout::X_INIT), controls: cp })
    }

    /// Project every component onto its admissible set.
    pub fn project(&mut self, s: &Scenario) {
        let mut d = self.to_flat();
        project_flat(&mut d, s);
        *self = DecisionVector::from_flat(self.grid(), &d).expect("same grid");
    }

    /// Euler propagation (the transcription's state recursion).
    pub fn trajectory(&self, gamma: f64, s: &Scenario) -> Result<StateTrajectory> {
        check_gamma(gamma, s)?;
        Ok(propagate(&self.to_flat(), self.grid(), gamma, s))
    }
}

/// Closed-form projections onto the control sets and `x_init ∈ Q1 + y0`.
pub(crate) fn project_flat(d: &mut [f64], s: &Scenario) {
    let n = (d.len() - 2) / layout::PER_NODE;
    let x0 = project_disk(get2(d, layout::X_INIT), s.y0, s.r1);
    set2(d, layout::X_INIT, x0);
    for i in 0..n {
        let v = get2(d, layout::v(i)).clamp_norm(s.v_bound);
        set2(d, layout::v(i), v);
        let u = get2(d, layout::u(i)).clamp_norm(s.u_bound);
        set2(d, layout::u(i), u);
        d[layout::u0(i)] = d[layout::u0(i)].clamp(0.0, 1.0);
        d[layout::omega(i)] = d[layout::omega(i)].max(0.0);
    }
}

/// Euler propagation of the flat decision.
pub(crate) fn propagate(d: &[f64], grid: TimeGrid, gamma: f64, s: &Scenario) -> StateTrajectory {
    let n = grid.n_intervals;
    let dt = grid.dt();
    let mut tr = StateTrajectory {
        grid,
        y: Vec::with_capacity(n + 1),
        x: Vec::with_capacity(n + 1),
        z: Vec::with_capacity(n + 1),
        t: Vec::with_capacity(n + 1),
        final_time: 0.0,
    };
    tr.y.push(s.y0);
    tr.x.push(get2(d, layout::X_INIT));
    tr.z.push(0.0);
    tr.t.push(0.0);
    for j in 0..n {
        let (v, u, u0, w) = (get2(d, layout::v(j)), get2(d, layout::u(j)), d[layout::u0(j)], d[layout::omega(j)]);
        let h = dt * w;
        let x_next = euler_x(tr.x[j], tr.y[j], u, u0, w, dt, gamma, s);
        tr.y.push(tr.y[j] + v * h);
        tr.x.push(x_next);
        tr.z.push(tr.z[j] + (u.norm_sq() + u0 * u0) * h);
        tr.t.push(tr.t[j] + h);
    }
    tr.final_time = tr.t[n];
    tr
}

/// Fixed data of one discretized problem.
#[derive(Clone, Copy)]
pub(crate) struct Context<'a> {
    pub s: &'a Scenario,
    pub target: Option<&'a TargetSet>,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub eps_target: f64,
}

/// Weights and augmented-Lagrangian terms of a merit function
/// `a_t·t + a_z·z + Σ AL(g; μ, ϱ) + ⟨linear, d⟩`.
#[derive(Clone, Copy, Default)]
pub(crate) struct Merit<'a> {
    pub time_weight: f64,
    pub effort_weight: f64,
    /// Multipliers of `h_lower` at nodes `0..=N` (node 0 is enforced by projection).
    pub lower: Option<&'a [f64]>,
    /// Multipliers of `h_upper` at nodes `0..=N` (node 0 is data).
    pub upper: Option<&'a [f64]>,
    /// Multiplier of `target_distance(y_N) − ε`.
    pub target: Option<f64>,
    /// `(cap, μ)` for `t(T*) − cap ≤ 0`.
    pub time_cap: Option<(f64, f64)>,
    pub penalty: f64,
    pub linear: Option<&'a [f64]>,
}

/// Constraint values at a point.
#[derive(Clone, Debug, Default)]
pub(crate) struct Constraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub target: f64,
    pub time: f64,
}

pub(crate) struct Evaluation {
    pub merit: f64,
    pub grad: Vec<f64>,
    pub cons: Constraints,
}

/// `(max(0, μ + ϱg)² − μ²) / (2ϱ)` and its derivative in `g`.
#[inline]
pub(crate) fn al_term(g: f64, mu: f64, pen: f64) -> (f64, f64) {
    let w = (mu + pen * g).max(0.0);
    ((w * w - mu * mu) / (2.0 * pen), w)
}

/// Merit value, gradient (exact discrete adjoint) and constraint values.
pub(crate) fn evaluate(d: &[f64], ctx: &Context, m: &Merit, want_grad: bool) -> Evaluation {
    let s = ctx.s;
    let grid = ctx.grid;
    let n = grid.n_intervals;
    let dt = grid.dt();
    let traj = propagate(d, grid, ctx.gamma, s);

    let mut cons = Constraints {
        lower: traj.x.iter().zip(&traj.y).map(|(x, y)| h_lower(*x, *y, s)).collect(),
        upper: traj.y.iter().map(|y| h_upper(*y, s)).collect(),
        target: 0.0,
        time: traj.final_time,
    };
    let mut merit = m.time_weight * traj.final_time + m.effort_weight * traj.z[n];
    let mut w_lower = vec![0.0; n + 1];
    let mut w_upper = vec![0.0; n + 1];
    if let Some(mu) = m.lower {
        for j in 1..=n {
            let (val, w) = al_term(cons.lower[j], mu[j], m.penalty);
            merit += val;
            w_lower[j] = w;
        }
    }
    if let Some(mu) = m.upper {
        for j in 1..=n {
            let (val, w) = al_term(cons.upper[j], mu[j], m.penalty);
            merit += val;
            w_upper[j] = w;
        }
    }
    let mut target_grad = Vec2::ZERO;
    if let Some(mu) = m.target {
        let tp = ctx.target.expect("target set required for the terminal term").nearest(traj.y[n]);
        cons.target = tp.distance - ctx.eps_target;
        let (val, w) = al_term(cons.target, mu, m.penalty);
        merit += val;
        let dir = if tp.distance > 1e-14 { (traj.y[n] - tp.point) * (1.0 / tp.distance) } else { tp.normal };
        target_grad = dir * w;
    }
    let mut w_cap = 0.0;
    if let Some((cap, mu)) = m.time_cap {
        cons.time = traj.final_time - cap;
        let (val, w) = al_term(cons.time, mu, m.penalty);
        merit += val;
        w_cap = w;
    }
    if let Some(lin) = m.linear {
        merit += lin.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
    if !want_grad {
        return Evaluation { merit, grad: Vec::new(), cons };
    }

    let mut grad = vec![0.0; d.len()];
    let (x, y) = (&traj.x, &traj.y);
    let mut px = (x[n] - y[n]) * w_lower[n];
    let mut py = (x[n] - y[n]) * (-w_lower[n]) + (y[n] - s.q0) * w_upper[n] + target_grad;
    for j in (0..n).rev() {
        let (v, u, u0, w) = (get2(d, layout::v(j)), get2(d, layout::u(j)), d[layout::u0(j)], d[layout::omega(j)]);
        let jac: FieldJacobian = field_jacobian(x[j], y[j], u, u0, ctx.gamma, s);
        let ell = u.norm_sq() + u0 * u0;
        let h = dt * w;
        grad[layout::omega(j)] = dt
            * (m.time_weight + m.effort_weight * ell + py.dot(v) + px.dot(jac.value) + w_cap);
        let gv = py * h;
        set2(&mut grad, layout::v(j), gv);
        let gu = (u * (2.0 * m.effort_weight) + jac.du.tmul_vec(px)) * h;
        set2(&mut grad, layout::u(j), gu);
        grad[layout::u0(j)] = (2.0 * m.effort_weight * u0 + jac.du0.dot(px)) * h;
        let e = x[j] - y[j];
        let px_new = px + jac.dx.tmul_vec(px) * h + e * w_lower[j];
        let py_new = py + jac.dy.tmul_vec(px) * h - e * w_lower[j] + (y[j] - s.q0) * w_upper[j];
        px = px_new;
        py = py_new;
    }
    set2(&mut grad, layout::X_INIT, px);
    if let Some(lin) = m.linear {
        for (g, a) in grad.iter_mut().zip(lin) {
            *g += a;
        }
    }
    Evaluation { merit, grad, cons }
}

/// Which problem an [`NlpInstance`] represents.
#[derive(Clone, Debug, PartialEq)]
pub enum NlpKind {
    /// Lower problem at fixed `(ω, v)`; decision `(x_init, u, u0)`.
    Lower { omega: Vec<f64>, v: Vec<Vec2> },
    /// Penalized single-level problem `t(T*) + ρ·(z(T*) − φ(ω, v))`.
    Penalized { rho: f64 },
}

/// Value-function callback `(ω, v) ↦ φ(ω, v)`.
pub type LowerValueFn<'a> = Box<dyn Fn(&[f64], &[Vec2]) -> Result<f64> + 'a>;

/// Objective and inequality residuals of a discretized problem.
///
/// Residuals are ordered `h_lower(0..=N)`, `h_upper(0..=N)`, `target_distance(y_N) − ε`.
pub struct NlpInstance<'a> {
    pub scenario: &'a Scenario,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub eps_target: f64,
    pub kind: NlpKind,
    target: TargetSet,
    lower_value: Option<LowerValueFn<'a>>,
}

pub fn assemble_lower<'a>(omega: &[f64], v: &[Vec2], gamma: f64, s: &'a Scenario) -> Result<NlpInstance<'a>> {
    check_gamma(gamma, s)?;
    if omega.len() != v.len() || omega.len() < 3 {
        return Err(invalid("omega and v must be per-node with N >= 2"));
    }
    if omega.iter().any(|w| !(*w >= 0.0)) || v.iter().any(|p| p.norm() > s.v_bound * (1.0 + 1e-12)) {
        return Err(invalid("(omega, v) outside bounds"));
    }
    Ok(NlpInstance {
        scenario: s,
        gamma,
        grid: TimeGrid::unit(omega.len() - 1)?,
        eps_target: s.default_target_tol(),
        kind: NlpKind::Lower { omega: omega.to_vec(), v: v.to_vec() },
        target: TargetSet::new(s),
        lower_value: None,
    })
}

pub fn assemble_penalized<'a>(
    rho: f64,
    gamma: f64,
    grid: TimeGrid,
    s: &'a Scenario,
    lower_value: LowerValueFn<'a>,
) -> Result<NlpInstance<'a>> {
    check_gamma(gamma, s)?;
    if !(rho >= 0.0) {
        return Err(invalid("penalty weight must be nonnegative"));
    }
    Ok(NlpInstance {
        scenario: s,
        gamma,
        grid,
        eps_target: s.default_target_tol(),
        kind: NlpKind::Penalized { rho },
        target: TargetSet::new(s),
        lower_value: Some(lower_value),
    })
}

impl<'a> NlpInstance<'a> {
    pub fn n_residuals(&self) -> usize {
        2 * self.grid.n_nodes() + 1
    }

    /// The decision with fixed `(ω, v)` substituted for the lower problem.
    fn effective(&self, dv: &DecisionVector) -> Vec<f64> {
        let mut d = dv.to_flat();
        if let NlpKind::Lower { omega, v } = &self.kind {
            for i in 0..omega.len() {
                d[layout::omega(i)] = omega[i];
                set2(&mut d, layout::v(i), v[i]);
            }
        }
        d
    }

    pub fn objective(&self, dv: &DecisionVector) -> Result<f64> {
        if dv.grid() != self.grid {
            return Err(invalid("decision grid does not match the instance"));
        }
        let tr = propagate(&self.effective(dv), self.grid, self.gamma, self.scenario);
        let n = self.grid.n_intervals;
        match &self.kind {
            NlpKind::Lower { .. } => Ok(tr.z[n]),
            NlpKind::Penalized { rho } => {
                if *rho == 0.0 {
                    return Ok(tr.final_time);
                }
                let f = self.lower_value.as_ref().expect("penalized instance has a lower callback");
                let phi = f(&dv.controls.omega, &dv.controls.v)?;
                Ok(tr.final_time + rho * (tr.z[n] - phi))
            }
        }
    }

    pub fn residuals(&self, dv: &DecisionVector) -> Vec<f64> {
        let s = self.scenario;
        let tr = propagate(&self.effective(dv), self.grid, self.gamma, s);
        let mut r: Vec<f64> = tr.x.iter().zip(&tr.y).map(|(x, y)| h_lower(*x, *y, s)).collect();
        r.extend(tr.y.iter().map(|y| h_upper(*y, s)));
        r.push(self.target.distance(tr.y[self.grid.n_intervals]) - self.eps_target);
        r
    }
}

/// Central differences of `[objective, residuals…]` with respect to every flat variable.
///
/// Row `0` is the objective, rows `1..` the residuals; columns follow [`layout`].
pub fn fd_jacobian(nlp: &NlpInstance, point: &DecisionVector, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let base = point.to_flat();
    let rows = 1 + nlp.n_residuals();
    let mut jac = vec![vec![0.0; base.len()]; rows];
    let eval = |d: &[f64]| -> Result<Vec<f64>> {
        let dv = DecisionVector::from_flat(point.grid(), d)?;
        let mut out = vec![nlp.objective(&dv)?];
        out.extend(nlp.residuals(&dv));
        Ok(out)
    };
    let mut d = base.clone();
    for k in 0..base.len() {
        d[k] = base[k] + h;
        let plus = eval(&d)?;
        d[k] = base[k] - h;
        let minus = eval(&d)?;
        d[k] = base[k];
        for r in 0..rows {
            jac[r][k] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_smooth_with, Scheme};
    use crate::geometry::DriftSpec;
    use crate::math::Mat2;

    fn sample_decision(n: usize) -> DecisionVector {
        let grid = TimeGrid::unit(n).unwrap();
        let mut cp = ControlProfile::zeros(grid);
        for i in 0..=n {
            let a = i as f64 * 0.7;
            cp.v[i] = Vec2::new(0.8, 0.3 * crate::math::sin(a));
            cp.u[i] = Vec2::new(0.4 * crate::math::cos(a), 0.2);
            cp.u0[i] = 0.3 + 0.05 * i as f64;
            cp.omega[i] = 1.5 + 0.1 * i as f64;
        }
        DecisionVector { x_init: Vec2::new(0.6, 0.5), controls: cp }
    }

    #[test]
    fn flat_roundtrip() {
        let dv = sample_decision(5);
        let back = DecisionVector::from_flat(dv.grid(), &dv.to_flat()).unwrap();
        assert_eq!(back, dv);
    }

    #[test]
    fn propagation_matches_euler_integrator() {
        let s = Scenario::default();
        let dv = sample_decision(12);
        let a = dv.trajectory(6.0, &s).unwrap();
        let b = integrate_smooth_with(&dv.controls, dv.x_init, 6.0, &s, Scheme::Euler).unwrap();
        assert_eq!(a, b);
        let nlp = assemble_lower(&dv.controls.omega, &dv.controls.v, 6.0, &s).unwrap();
        assert_eq!(nlp.objective(&dv).unwrap(), b.z[12]);
    }

    #[test]
    fn lower_objective_examples() {
        let s = Scenario::default();
        let mut dv = sample_decision(6);
        let zero_w = vec![0.0; 7];
        let nlp = assemble_lower(&zero_w, &dv.controls.v, 6.0, &s).unwrap();
        assert_eq!(nlp.objective(&dv).unwrap(), 0.0);
        // stationary y, interior start, zero controls: feasible with zero cost
        let nlp = assemble_lower(&dv.controls.omega, &[Vec2::ZERO; 7], 6.0, &s).unwrap();
        dv.x_init = Vec2::new(0.2, 0.1);
        dv.controls.u = vec![Vec2::ZERO; 7];
        dv.controls.u0 = vec![0.0; 7];
        assert_eq!(nlp.objective(&dv).unwrap(), 0.0);
        assert!(nlp.residuals(&dv)[..7].iter().all(|h| *h < 0.0));
        assert_eq!(nlp.n_residuals(), 15);
    }

    #[test]
    fn fd_examples() {
        let s = Scenario::default();
        let dv = sample_decision(4);
        let dt = 0.25;
        let pen = assemble_penalized(0.0, 6.0, dv.grid(), &s, Box::new(|_, _| Ok(0.0))).unwrap();
        let jac = fd_jacobian(&pen, &dv, 1e-5).unwrap();
        for i in 0..4 {
            assert!((jac[0][layout::omega(i)] - dt).abs() < 1e-9);
        }
        assert!(jac[0][layout::omega(4)].abs() < 1e-12);
        let low = assemble_lower(&dv.controls.omega, &dv.controls.v, 6.0, &s).unwrap();
        let jac = fd_jacobian(&low, &dv, 1e-5).unwrap();
        for i in 0..4 {
            let expect = dv.controls.u[i] * (2.0 * dv.controls.omega[i] * dt);
            assert!((jac[0][layout::u(i)] - expect.x).abs() < 1e-6);
            assert!((jac[0][layout::u(i) + 1] - expect.y).abs() < 1e-6);
        }
        assert!(fd_jacobian(&low, &dv, 0.0).is_err());
    }

    #[test]
    fn fd_error_is_second_order() {
        // lower objective in u0: cubic terms make the central-difference error O(h²)
        let s = Scenario::default();
        let dv = sample_decision(4);
        let low = assemble_lower(&dv.controls.omega, &dv.controls.v, 6.0, &s).unwrap();
        let exact = fd_jacobian(&low, &dv, 1e-6).unwrap();
        let k = layout::X_INIT;
        let e1 = (fd_jacobian(&low, &dv, 0.02).unwrap()[1 + 4][k] - exact[1 + 4][k]).abs();
        let e2 = (fd_jacobian(&low, &dv, 0.01).unwrap()[1 + 4][k] - exact[1 + 4][k]).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let s = Scenario {
            drift: DriftSpec::Affine { a: Mat2::new(0.05, -0.02, 0.03, 0.01) },
            m1: 2.0,
            k_f: 0.06,
            ..Scenario::default()
        };
        let target = TargetSet::new(&s);
        let grid = TimeGrid::unit(6).unwrap();
        let ctx = Context { s: &s, target: Some(&target), gamma: 7.0, grid, eps_target: 0.01 };
        let dv = sample_decision(6);
        let d = dv.to_flat();
        let mu_l: Vec<f64> = (0..7).map(|i| 0.1 * i as f64).collect();
        let mu_h: Vec<f64> = (0..7).map(|i| 0.05 * i as f64).collect();
        let lin: Vec<f64> = (0..d.len()).map(|k| 0.01 * (k % 5) as f64).collect();
        let m = Merit {
            time_weight: 1.0,
            effort_weight: 2.0,
            lower: Some(&mu_l),
            upper: Some(&mu_h),
            target: Some(0.3),
            time_cap: Some((5.0, 0.2)),
            penalty: 3.0,
            linear: Some(&lin),
        };
        let ev = evaluate(&d, &ctx, &m, true);
        let h = 1e-6;
        for k in 0..d.len() {
            if k >= layout::v(6) {
                assert_eq!(ev.grad[k], lin[k]);
                continue;
            }
            let mut dp = d.clone();
            dp[k] += h;
            let mut dm = d.clone();
            dm[k] -= h;
            let fd = (evaluate(&dp, &ctx, &m, false).merit - evaluate(&dm, &ctx, &m, false).merit) / (2.0 * h);
            assert!((fd - ev.grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k}: fd {fd} vs {}", ev.grad[k]);
        }
    }
}
