//! The lower problem at fixed `(ω, v)`: its value φ, minimizer, multipliers
//! and a selection of the value-function subgradient.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::pg::{augmented_lagrangian, AlOptions, PgOptions};
use super::{Blocks, FlatModel};
use crate::dynamics::{check_gamma, field_jacobian, ControlProfile, StateTrajectory, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::geometry::Scenario;
use crate::math::{cos, sin, sqrt, Vec2, TAU};
use crate::transcription::{get2, layout, propagate, set2, Context, DecisionVector};

/// Cold starts above this multiple of `M/R1` are first solved at milder levels, doubling up to `γ`.
pub const COLD_GAMMA_FACTOR: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerOptions {
    /// Number of initial guesses (warm start, "ahead", zero, then random).
    pub starts: usize,
    pub seed: u64,
    pub al: AlOptions,
}

impl Default for LowerOptions {
    fn default() -> Self {
        LowerOptions {
            starts: 4,
            seed: 0,
            al: AlOptions {
                max_outer: 40,
                penalty0: 10.0,
                penalty_max: 1e9,
                feas_tol: 1e-10,
                pg: PgOptions { max_iter: 3000, tol: 1e-10, ..PgOptions::default() },
            },
        }
    }
}

/// Lower decision `(x_init, u, u0)`, per node (the node-N value is not used).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerDecision {
    pub x_init: Vec2,
    pub u: Vec<Vec2>,
    pub u0: Vec<f64>,
}

impl LowerDecision {
    pub fn zeros(n_nodes: usize, x_init: Vec2) -> Self {
        LowerDecision { x_init, u: vec![Vec2::ZERO; n_nodes], u0: vec![0.0; n_nodes] }
    }

    pub(crate) fn write(&self, d: &mut [f64]) {
        set2(d, layout::X_INIT, self.x_init);
        for i in 0..self.u.len() {
            set2(d, layout::u(i), self.u[i]);
            d[layout::u0(i)] = self.u0[i];
        }
    }

    pub(crate) fn read(d: &[f64], n_nodes: usize) -> Self {
        LowerDecision {
            x_init: get2(d, layout::X_INIT),
            u: (0..n_nodes).map(|i| get2(d, layout::u(i))).collect(),
            u0: (0..n_nodes).map(|i| d[layout::u0(i)]).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveStatus {
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub starts: usize,
}

/// Multipliers of the lower problem in Gamkrelidze form.
///
/// `mu_l[j] = Σ_{k≥j} atoms_l[k]` is non-increasing with `μ(T*+) = 0`.
/// `zeta1`, `zeta2` are densities: `∂φ/∂ω_j = dt·ζ₁_j` and `∂φ/∂v_j = dt·ζ₂_j`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerMultipliers {
    pub p_h: Vec<Vec2>,
    pub p_l: Vec<Vec2>,
    pub mu_h: Vec<f64>,
    pub mu_l: Vec<f64>,
    pub atoms_l: Vec<f64>,
    pub lambda_bar: f64,
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<Vec2>,
    pub zeta2_raw: Vec<Vec2>,
    /// Lower Hamiltonian per interval, held at node N.
    pub hamiltonian: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerSolution {
    pub decision: LowerDecision,
    pub value: f64,
    pub multipliers: Option<LowerMultipliers>,
    pub status: SolveStatus,
}

/// Discrete adjoint in both the Dubovitskii–Milyutin (`ψ`) and Gamkrelidze (`p`) forms.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointData {
    pub psi_x: Vec<Vec2>,
    pub psi_y: Vec<Vec2>,
    pub nu_l: Vec<f64>,
    pub nu_h: Vec<f64>,
    pub p_l: Vec<Vec2>,
    pub p_h: Vec<Vec2>,
}

fn check_upper(omega: &[f64], v: &[Vec2], s: &Scenario) -> Result<TimeGrid> {
    if omega.len() != v.len() || omega.len() < 3 {
        return Err(invalid("omega and v must be per-node with N >= 2"));
    }
    if omega.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(invalid("omega must be finite and nonnegative"));
    }
    if v.iter().any(|p| !p.is_finite() || p.norm() > s.v_bound * (1.0 + 1e-9)) {
        return Err(invalid("v outside the ball of radius v_bound"));
    }
    TimeGrid::unit(omega.len() - 1)
}

/// Backward sweep of the discrete adjoint of the Euler recursion.
///
/// `lower_atoms`, `upper_atoms` are nodal multipliers of `h_lower`, `h_upper`;
/// `terminal_y` is added to `ψ^y_N` (e.g. `−κ∇d(y_N)` for the terminal target).
pub fn adjoint_sweep(
    tr: &StateTrajectory,
    cp: &ControlProfile,
    lower_atoms: &[f64],
    upper_atoms: &[f64],
    terminal_y: Vec2,
    gamma: f64,
    s: &Scenario,
) -> Result<AdjointData> {
    check_gamma(gamma, s)?;
    let n = tr.grid.n_intervals;
    if cp.grid != tr.grid || lower_atoms.len() != n + 1 || upper_atoms.len() != n + 1 {
        return Err(invalid("adjoint inputs are not on one grid"));
    }
    let dt = tr.grid.dt();
    let mut psi_x = vec![Vec2::ZERO; n + 1];
    let mut psi_y = vec![Vec2::ZERO; n + 1];
    let e = |j: usize| tr.x[j] - tr.y[j];
    psi_x[n] = e(n) * (-lower_atoms[n]);
    psi_y[n] = e(n) * lower_atoms[n] - (tr.y[n] - s.q0) * upper_atoms[n] + terminal_y;
    for j in (0..n).rev() {
        let jac = field_jacobian(tr.x[j], tr.y[j], cp.u[j], cp.u0[j], gamma, s);
        let h = dt * cp.omega[j];
        psi_x[j] = psi_x[j + 1] + jac.dx.tmul_vec(psi_x[j + 1]) * h - e(j) * lower_atoms[j];
        psi_y[j] = psi_y[j + 1] + jac.dy.tmul_vec(psi_x[j + 1]) * h + e(j) * lower_atoms[j]
            - (tr.y[j] - s.q0) * upper_atoms[j];
    }
    let tail = |a: &[f64]| {
        let mut nu = vec![0.0; n + 1];
        let mut acc = 0.0;
        for j in (0..=n).rev() {
            acc += a[j];
            nu[j] = acc;
        }
        nu
    };
    let nu_l = tail(lower_atoms);
    let nu_h = tail(upper_atoms);
    let p_l = (0..=n).map(|j| psi_x[j] + e(j) * nu_l[j]).collect();
    let p_h = (0..=n).map(|j| psi_y[j] + (tr.y[j] - s.q0) * nu_h[j] - e(j) * nu_l[j]).collect();
    Ok(AdjointData { psi_x, psi_y, nu_l, nu_h, p_l, p_h })
}

/// Remove the outward normal component of `a` when `v` lies on the sphere of radius `bound`.
pub(crate) fn remove_normal(a: Vec2, v: Vec2, bound: f64) -> Vec2 {
    let nv = v.norm();
    if bound > 0.0 && nv >= bound * (1.0 - 1e-9) {
        let nh = v * (1.0 / nv);
        let c = a.dot(nh);
        if c > 0.0 {
            return a - nh * c;
        }
    }
    a
}

fn build_multipliers(d: &[f64], grid: TimeGrid, atoms: Vec<f64>, gamma: f64, s: &Scenario) -> Result<LowerMultipliers> {
    let n = grid.n_intervals;
    let tr = propagate(d, grid, gamma, s);
    let cp = DecisionVector::from_flat(grid, d)?.controls;
    let adj = adjoint_sweep(&tr, &cp, &atoms, &vec![0.0; n + 1], Vec2::ZERO, gamma, s)?;
    let lambda_bar = 1.0;
    let mut zeta1 = vec![0.0; n + 1];
    let mut zeta2 = vec![Vec2::ZERO; n + 1];
    let mut zeta2_raw = vec![Vec2::ZERO; n + 1];
    let mut hamiltonian = vec![0.0; n + 1];
    for j in 0..n {
        let f = field_jacobian(tr.x[j], tr.y[j], cp.u[j], cp.u0[j], gamma, s).value;
        let ell = cp.u[j].norm_sq() + cp.u0[j] * cp.u0[j];
        let hl = adj.psi_y[j + 1].dot(cp.v[j]) + adj.psi_x[j + 1].dot(f) - lambda_bar * ell;
        hamiltonian[j] = hl;
        zeta1[j] = -hl / lambda_bar;
        zeta2_raw[j] = adj.psi_y[j + 1] * (-cp.omega[j] / lambda_bar);
        zeta2[j] = remove_normal(zeta2_raw[j], cp.v[j], s.v_bound);
    }
    hamiltonian[n] = hamiltonian[n - 1];
    Ok(LowerMultipliers {
        p_h: adj.p_h,
        p_l: adj.p_l,
        mu_h: adj.nu_h,
        mu_l: adj.nu_l,
        atoms_l: atoms,
        lambda_bar,
        zeta1,
        zeta2,
        zeta2_raw,
        hamiltonian,
    })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn candidates(
    n_nodes: usize,
    v: &[Vec2],
    s: &Scenario,
    warm: Option<&LowerDecision>,
    starts: usize,
    seed: u64,
) -> Vec<LowerDecision> {
    let mut out = Vec::new();
    if let Some(w) = warm {
        out.push(w.clone());
    }
    let ahead = v.iter().find(|p| p.norm() > 0.0).map(|p| p.normalized()).unwrap_or(Vec2::ZERO);
    out.push(LowerDecision::zeros(n_nodes, s.y0 + ahead * (0.999 * s.r1)));
    out.push(LowerDecision::zeros(n_nodes, s.y0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < starts.max(1) {
        let a = TAU * unit(&mut rng);
        let x_init = s.y0 + Vec2::new(cos(a), sin(a)) * (s.r1 * sqrt(unit(&mut rng)));
        let mut c = LowerDecision::zeros(n_nodes, x_init);
        for i in 0..n_nodes {
            let b = TAU * unit(&mut rng);
            c.u[i] = Vec2::new(cos(b), sin(b)) * (0.5 * s.u_bound * unit(&mut rng));
            c.u0[i] = unit(&mut rng);
        }
        out.push(c);
    }
    out.truncate(starts.max(1));
    out
}

fn run(
    omega: &[f64],
    v: &[Vec2],
    gamma: f64,
    s: &Scenario,
    warm: Option<&LowerSolution>,
    opts: &LowerOptions,
    effort: f64,
) -> Result<LowerSolution> {
    check_gamma(gamma, s)?;
    let grid = check_upper(omega, v, s)?;
    let n_nodes = grid.n_nodes();
    let mut base = vec![0.0; layout::len(n_nodes)];
    for i in 0..n_nodes {
        base[layout::omega(i)] = omega[i];
        set2(&mut base, layout::v(i), v[i]);
    }
    let ctx = Context { s, target: None, gamma, grid, eps_target: 0.0 };
    let mut model = FlatModel::new(ctx, Blocks::LOWER);
    model.effort_weight = effort;
    model.lower = true;

    let warm_atoms = warm.and_then(|w| w.multipliers.as_ref()).map(|m| m.atoms_l.clone());
    let mut best: Option<(Vec<f64>, Vec<f64>, f64, f64, bool)> = None;
    let mut status = SolveStatus::default();
    let starts = candidates(n_nodes, v, s, warm.map(|w| &w.decision), opts.starts, opts.seed);
    status.starts = starts.len();
    for (k, c) in starts.iter().enumerate() {
        let mut d = base.clone();
        c.write(&mut d);
        let mut mu0 = match (&warm_atoms, k) {
            (Some(a), 0) if a.len() == n_nodes => model.pack(Some(a), None, 0.0),
            _ => vec![0.0; model.pack(None, None, 0.0).len()],
        };
        if k > 0 || warm.is_none() {
            // continuation from a milder smoothing level
            let mut g = COLD_GAMMA_FACTOR * s.cone_rate();
            while g < gamma {
                let mut mild = FlatModel::new(Context { gamma: g, ..ctx }, Blocks::LOWER);
                mild.effort_weight = effort;
                mild.lower = true;
                let out = augmented_lagrangian(&mild, &d, &mu0, &opts.al);
                status.outer_iterations += out.outer_iterations;
                status.inner_iterations += out.inner_iterations;
                d = out.x;
                mu0 = out.mu;
                g *= 2.0;
            }
        }
        let out = augmented_lagrangian(&model, &d, &mu0, &opts.al);
        status.outer_iterations += out.outer_iterations;
        status.inner_iterations += out.inner_iterations;
        let value = propagate(&out.x, grid, gamma, s).z[grid.n_intervals];
        let feasible = out.max_violation <= opts.al.feas_tol;
        let better = match &best {
            None => true,
            Some((_, _, bv, bviol, bfeas)) => match (feasible, *bfeas) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => value < *bv - 1e-12,
                (false, false) => out.max_violation < *bviol,
            },
        };
        if better {
            status.converged = out.converged;
            best = Some((out.x, out.mu, value, out.max_violation, feasible));
        }
    }
    let (d, mu, value, viol, _) = best.expect("at least one start");
    status.max_violation = viol;
    let multipliers = if effort > 0.0 {
        Some(build_multipliers(&d, grid, model.lower_atoms(&mu), gamma, s)?)
    } else {
        None
    };
    Ok(LowerSolution { decision: LowerDecision::read(&d, n_nodes), value, multipliers, status })
}

/// Solve the lower problem at fixed `(ω, v)` from the default starts.
pub fn solve_lower(omega: &[f64], v: &[Vec2], gamma: f64, s: &Scenario, opts: &LowerOptions) -> Result<LowerSolution> {
    run(omega, v, gamma, s, None, opts, 1.0)
}

/// As [`solve_lower`], with a previous solution as the first start.
pub fn solve_lower_from(
    omega: &[f64],
    v: &[Vec2],
    gamma: f64,
    s: &Scenario,
    warm: &LowerSolution,
    opts: &LowerOptions,
) -> Result<LowerSolution> {
    run(omega, v, gamma, s, Some(warm), opts, 1.0)
}

/// A feasible lower decision with no regard for cost (λ̄ = 0, no multipliers).
pub fn restore_lower(
    omega: &[f64],
    v: &[Vec2],
    gamma: f64,
    s: &Scenario,
    warm: Option<&LowerSolution>,
    opts: &LowerOptions,
) -> Result<LowerSolution> {
    run(omega, v, gamma, s, warm, opts, 0.0)
}

/// `(ζ₁, ζ₂)` per node from the lower solution's multipliers, evaluated at `(ω, v)`.
///
/// `ζ₂` has the outward normal component removed where `|v| = b_V`.
pub fn value_subgradient(
    omega: &[f64],
    v: &[Vec2],
    lower: &LowerSolution,
    gamma: f64,
    s: &Scenario,
) -> Result<(Vec<f64>, Vec<Vec2>)> {
    let m = lower.multipliers.as_ref().ok_or(Error::Abnormal)?;
    if !(m.lambda_bar > 0.0) {
        return Err(Error::Abnormal);
    }
    let grid = check_upper(omega, v, s)?;
    let mut d = vec![0.0; layout::len(grid.n_nodes())];
    for i in 0..grid.n_nodes() {
        d[layout::omega(i)] = omega[i];
        set2(&mut d, layout::v(i), v[i]);
    }
    lower.decision.write(&mut d);
    let mm = build_multipliers(&d, grid, m.atoms_l.clone(), gamma, s)?;
    Ok((mm.zeta1, mm.zeta2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::h_lower;
    use crate::oracle::brute_lower_top;

    fn gamma(s: &Scenario) -> f64 {
        8.0 * s.cone_rate()
    }

    #[test]
    fn stationary_interior_instance() {
        let s = Scenario::default();
        let n = 6;
        let omega = vec![1.0; n + 1];
        let v = vec![Vec2::ZERO; n + 1];
        let sol = solve_lower(&omega, &v, gamma(&s), &s, &LowerOptions::default()).unwrap();
        assert!(sol.value.abs() < 1e-14, "{}", sol.value);
        assert!(sol.decision.u.iter().all(|u| u.norm() < 1e-9));
        assert!(sol.decision.u0.iter().all(|u| u.abs() < 1e-9));
        let (z1, z2) = value_subgradient(&omega, &v, &sol, gamma(&s), &s).unwrap();
        assert!(z1.iter().all(|z| z.abs() < 1e-9));
        assert!(z2.iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn moving_instance_is_feasible_and_multipliers_monotone() {
        let s = Scenario::default();
        let n = 20;
        let omega = vec![6.0; n + 1];
        let v = vec![Vec2::new(1.0, 0.0); n + 1];
        let sol = solve_lower(&omega, &v, gamma(&s), &s, &LowerOptions::default()).unwrap();
        assert!(sol.status.max_violation <= 1e-9);
        let mut d = vec![0.0; layout::len(n + 1)];
        for i in 0..=n {
            d[layout::omega(i)] = omega[i];
            set2(&mut d, layout::v(i), v[i]);
        }
        sol.decision.write(&mut d);
        let tr = propagate(&d, TimeGrid::unit(n).unwrap(), gamma(&s), &s);
        assert!((tr.z[n] - sol.value).abs() < 1e-14);
        assert!(tr.x.iter().zip(&tr.y).all(|(x, y)| h_lower(*x, *y, &s) <= 1e-9));
        let m = sol.multipliers.unwrap();
        assert!(m.mu_l.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.atoms_l.iter().all(|a| *a >= 0.0));
        // the cheapest start puts x ahead of y, so the first nodes are slack
        assert_eq!(m.atoms_l[1], 0.0);
        assert!(m.p_l[n].norm() < 1e-14);
    }

    #[test]
    fn subgradient_matches_finite_differences_on_interior_v() {
        let s = Scenario::default();
        let g = gamma(&s);
        let n = 8;
        let omega: Vec<f64> = (0..=n).map(|i| 3.0 + 0.1 * i as f64).collect();
        let v: Vec<Vec2> = (0..=n).map(|i| Vec2::new(0.7, 0.1 * (i % 3) as f64)).collect();
        let opts = LowerOptions::default();
        let sol = solve_lower(&omega, &v, g, &s, &opts).unwrap();
        let (z1, z2) = value_subgradient(&omega, &v, &sol, g, &s).unwrap();
        let dt = 1.0 / n as f64;
        let h = 1e-4;
        let phi = |om: &[f64], vv: &[Vec2]| solve_lower_from(om, vv, g, &s, &sol, &opts).unwrap().value;
        let mut worst = 0.0f64;
        for j in [1usize, 4, 7] {
            let mut vp = v.clone();
            vp[j].y += h;
            let mut vm = v.clone();
            vm[j].y -= h;
            let fd = (phi(&omega, &vp) - phi(&omega, &vm)) / (2.0 * h);
            worst = worst.max((fd - dt * z2[j].y).abs() / (1e-3 + fd.abs()));
            let mut op = omega.clone();
            op[j] += h;
            let mut om = omega.clone();
            om[j] -= h;
            let fd = (phi(&op, &v) - phi(&om, &v)) / (2.0 * h);
            worst = worst.max((fd - dt * z1[j]).abs() / (1e-3 + fd.abs()));
        }
        assert!(worst < 5e-2, "worst relative error {worst}");
    }

    #[test]
    fn value_not_above_enumeration() {
        let s = Scenario::default();
        let g = gamma(&s);
        let n = 3;
        let omega = vec![1.2; n + 1];
        let v = vec![Vec2::new(1.0, 0.0); n + 1];
        let spec = crate::oracle::EnumSpec { n_intervals: n, levels: 3, ..crate::oracle::EnumSpec::for_scenario(&s, n, 3) };
        let brute = brute_lower_top(&omega, &v, g, &spec, &s, 1).unwrap()[0].value;
        let sol = solve_lower(&omega, &v, g, &s, &LowerOptions::default()).unwrap();
        assert!(sol.value <= brute + 1e-6, "{} vs {}", sol.value, brute);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Scenario::default();
        let opts = LowerOptions::default();
        assert!(solve_lower(&[1.0; 3], &[Vec2::new(2.0, 0.0); 3], 10.0, &s, &opts).is_err());
        assert!(solve_lower(&[-1.0; 3], &[Vec2::ZERO; 3], 10.0, &s, &opts).is_err());
        assert!(solve_lower(&[1.0; 3], &[Vec2::ZERO; 3], -1.0, &s, &opts).is_err());
        let r = restore_lower(&[1.0; 3], &[Vec2::ZERO; 3], 10.0, &s, None, &opts).unwrap();
        assert!(r.multipliers.is_none());
        assert_eq!(value_subgradient(&[1.0; 3], &[Vec2::ZERO; 3], &r, 10.0, &s), Err(Error::Abnormal));
    }
}
