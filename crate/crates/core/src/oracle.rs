//! Brute-force and finite-difference references.
//!
//! Everything here uses its own Euler step and smoothing coefficient and shares
//! only the geometry module with the solver.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{h_lower, h_upper, Scenario, TargetSet};
use crate::math::{exp, Vec2, PI};

/// Enumeration grid for the brute-force oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnumSpec {
    pub n_intervals: usize,
    /// Levels per scalar control; ball controls use `{0} ∪ {b·i/(L−1)·e(kπ/2)}`.
    pub levels: usize,
    /// Smoothing level used by [`brute_bilevel`].
    pub gamma: f64,
    /// Largest ω level; ω levels are `linspace(0, omega_max, L)`.
    pub omega_max: f64,
    pub target_tol: f64,
    pub budget: u64,
}

impl EnumSpec {
    /// Grid sized so that the straight line to the exit is representable.
    pub fn for_scenario(s: &Scenario, n_intervals: usize, levels: usize) -> Self {
        let d = TargetSet::new(s).distance(s.y0);
        let n = n_intervals.max(2) as f64;
        let omega_max = if s.v_bound > 0.0 { n / (n - 1.0) * d / s.v_bound } else { 0.0 };
        let step = omega_max / (n * (levels.max(2) - 1) as f64) * s.v_bound / (levels.max(2) - 1) as f64;
        EnumSpec {
            n_intervals,
            levels,
            gamma: 64.0 * s.cone_rate(),
            omega_max,
            target_tol: s.default_target_tol().max(0.5 * step),
            budget: 10_000_000,
        }
    }

    fn check(&self) -> Result<()> {
        if !(2..=5).contains(&self.levels) || !(1..=5).contains(&self.n_intervals) {
            return Err(invalid("enumeration needs 1..=5 intervals and 2..=5 levels"));
        }
        Ok(())
    }
}

/// `{0} ∪ {radius·i/(L−1)·e(kπ/2) : i = 1..L−1, k = 0..3}`.
pub fn ball_grid(center: Vec2, radius: f64, levels: usize) -> Vec<Vec2> {
    let mut g = vec![center];
    if radius > 0.0 {
        for i in 1..levels {
            for k in 0..4 {
                g.push(center + Vec2::polar(k as f64 * PI / 2.0) * (radius * i as f64 / (levels - 1) as f64));
            }
        }
    }
    g
}

fn linspace(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|i| lo + (hi - lo) * i as f64 / (levels - 1) as f64).collect()
}

/// The smoothed coefficient written from its definition: quadratic corner of half-width
/// `δ = min(0.5, γR1/M − 1)` in `r = γe^{γh}R1/M`.
fn coef(gamma: f64, h: f64, s: &Scenario) -> f64 {
    let cap = s.m / s.r1;
    let r = gamma * exp(gamma * h) / cap;
    let delta = f64::min(0.5, gamma / cap - 1.0);
    let sat = if r < 1.0 - delta {
        r
    } else if r > 1.0 + delta {
        1.0
    } else {
        r - (r - (1.0 - delta)) * (r - (1.0 - delta)) / (4.0 * delta)
    };
    cap * sat
}

fn euler_step(x: Vec2, y: Vec2, u: Vec2, u0: f64, h: f64, gamma: f64, s: &Scenario) -> Vec2 {
    let c = coef(gamma, h_lower(x, y, s), s);
    x + (s.drift_value(x, u) - (x - y) * (u0 * c)) * h
}

const FEAS: f64 = 1e-12;

/// One enumerated lower decision.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleCombo {
    pub value: f64,
    pub x_init: Vec2,
    pub u: Vec<Vec2>,
    pub u0: Vec<f64>,
}

struct LowerSearch<'a> {
    s: &'a Scenario,
    gamma: f64,
    h: Vec<f64>,
    ys: Vec<Vec2>,
    options: Vec<(Vec2, f64)>,
    keep: usize,
    best: Vec<OracleCombo>,
    path: Vec<(Vec2, f64)>,
}

impl LowerSearch<'_> {
    fn threshold(&self) -> f64 {
        if self.best.len() < self.keep { f64::INFINITY } else { self.best[self.keep - 1].value }
    }

    fn dfs(&mut self, j: usize, x: Vec2, z: f64, x_init: Vec2) {
        if j == self.h.len() {
            let combo = OracleCombo {
                value: z,
                x_init,
                u: self.path.iter().map(|p| p.0).collect(),
                u0: self.path.iter().map(|p| p.1).collect(),
            };
            let pos = self.best.partition_point(|b| b.value <= z);
            self.best.insert(pos, combo);
            self.best.truncate(self.keep);
            return;
        }
        for k in 0..self.options.len() {
            let (u, u0) = self.options[k];
            let h = self.h[j];
            let xn = euler_step(x, self.ys[j], u, u0, h, self.gamma, self.s);
            if h_lower(xn, self.ys[j + 1], self.s) > FEAS {
                continue;
            }
            let zn = z + h * (u.norm_sq() + u0 * u0);
            if zn >= self.threshold() {
                continue;
            }
            self.path.push((u, u0));
            self.dfs(j + 1, xn, zn, x_init);
            self.path.pop();
        }
    }
}

fn upper_path(omega: &[f64], v: &[Vec2], s: &Scenario) -> (Vec<f64>, Vec<Vec2>) {
    let n = omega.len() - 1;
    let dt = 1.0 / n as f64;
    let h: Vec<f64> = omega[..n].iter().map(|w| w * dt).collect();
    let mut ys = vec![s.y0];
    for j in 0..n {
        ys.push(ys[j] + v[j] * h[j]);
    }
    (h, ys)
}

/// The `keep` best lower decisions on the grid at fixed per-node `(ω, v)`.
pub fn brute_lower_top(
    omega: &[f64],
    v: &[Vec2],
    gamma: f64,
    spec: &EnumSpec,
    s: &Scenario,
    keep: usize,
) -> Result<Vec<OracleCombo>> {
    spec.check()?;
    if omega.len() != spec.n_intervals + 1 || v.len() != omega.len() || keep == 0 {
        return Err(invalid("per-node (omega, v) must match the enumeration grid"));
    }
    let us = ball_grid(Vec2::ZERO, s.u_bound, spec.levels);
    let u0s = linspace(0.0, 1.0, spec.levels);
    let options: Vec<(Vec2, f64)> = us.iter().flat_map(|u| u0s.iter().map(move |a| (*u, *a))).collect();
    let starts = ball_grid(s.y0, s.r1, spec.levels);
    let total = (starts.len() as u64).saturating_mul((options.len() as u64).saturating_pow(spec.n_intervals as u32));
    if total > spec.budget {
        return Err(Error::Budget(total));
    }
    let (h, ys) = upper_path(omega, v, s);
    let mut search = LowerSearch { s, gamma, h, ys, options, keep, best: Vec::new(), path: Vec::new() };
    for x0 in starts {
        search.dfs(0, x0, 0.0, x0);
    }
    if search.best.is_empty() {
        return Err(Error::NoFeasible { best_violation: f64::INFINITY });
    }
    Ok(search.best)
}

/// Minimal feasible `z(T*)` over the grid: a reference value for φ.
pub fn brute_lower(omega: &[f64], v: &[Vec2], gamma: f64, spec: &EnumSpec, s: &Scenario) -> Result<f64> {
    Ok(brute_lower_top(omega, v, gamma, spec, s, 1)?[0].value)
}

/// Upper grid decision and its optimal lower decision.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BruteDecision {
    pub omega: Vec<f64>,
    pub v: Vec<Vec2>,
    pub lower: OracleCombo,
}

/// Minimal `t(T*)` over grid `(ω, v)` reaching the target whose lower problem is feasible.
pub fn brute_bilevel(spec: &EnumSpec, s: &Scenario) -> Result<(f64, BruteDecision)> {
    spec.check()?;
    let n = spec.n_intervals;
    let dt = 1.0 / n as f64;
    let vs = ball_grid(Vec2::ZERO, s.v_bound, spec.levels);
    let ws = linspace(0.0, spec.omega_max, spec.levels);
    let options: Vec<(Vec2, f64)> = vs.iter().flat_map(|v| ws.iter().map(move |w| (*v, *w))).collect();
    let total = (options.len() as u64).saturating_pow(n as u32);
    if total > spec.budget {
        return Err(Error::Budget(total));
    }
    let target = TargetSet::new(s);
    let max_step = dt * spec.omega_max * s.v_bound;
    let mut found: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut best_dist = f64::INFINITY;
    let mut stack: Vec<(usize, Vec2, f64, Vec<usize>)> = vec![(0, s.y0, 0.0, Vec::new())];
    while let Some((j, y, t, path)) = stack.pop() {
        let dist = target.distance(y);
        if j == n {
            best_dist = best_dist.min(dist);
            if dist <= spec.target_tol {
                found.push((t, path));
            }
            continue;
        }
        if dist - (n - j) as f64 * max_step > spec.target_tol {
            continue;
        }
        for (k, (v, w)) in options.iter().enumerate().rev() {
            let yn = y + *v * (dt * w);
            if h_upper(yn, s) > FEAS {
                continue;
            }
            let mut p = path.clone();
            p.push(k);
            stack.push((j + 1, yn, t + dt * w, p));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (t, path) in found {
        let mut omega: Vec<f64> = path.iter().map(|k| options[*k].1).collect();
        let mut v: Vec<Vec2> = path.iter().map(|k| options[*k].0).collect();
        omega.push(omega[n - 1]);
        v.push(v[n - 1]);
        if let Ok(top) = brute_lower_top(&omega, &v, spec.gamma, spec, s, 1) {
            let lower = top.into_iter().next().expect("nonempty");
            return Ok((t, BruteDecision { omega, v, lower }));
        }
    }
    Err(Error::NoFeasible { best_violation: (best_dist - spec.target_tol).max(0.0) })
}

/// `max_{u0∈[0,1]} { ⟨q − ν(x−y), −coef·(x−y)⟩·u0 − r·u0² }` by grid scan and golden-section refinement.
pub fn sigma_sup_oracle_coef(coef: f64, q: Vec2, nu: f64, r: f64, x: Vec2, y: Vec2, grid_pts: usize) -> f64 {
    let e = x - y;
    let slope = (q - e * nu).dot(e * (-coef));
    let phi = |u0: f64| slope * u0 - r * u0 * u0;
    let n = grid_pts.max(100);
    let mut best = (0usize, phi(0.0));
    for i in 1..=n {
        let val = phi(i as f64 / n as f64);
        if val > best.1 {
            best = (i, val);
        }
    }
    let (mut a, mut b) = ((best.0.max(1) - 1) as f64 / n as f64, ((best.0 + 1).min(n)) as f64 / n as f64);
    let g = 0.5 * (crate::math::sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if phi(c) > phi(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    best.1.max(phi(0.5 * (a + b)))
}

/// The support term with the exact coefficient `M/R1`.
pub fn sigma_sup_oracle(q_l: Vec2, nu_l: f64, r: f64, x: Vec2, y: Vec2, s: &Scenario, grid_pts: usize) -> f64 {
    sigma_sup_oracle_coef(s.m / s.r1, q_l, nu_l, r, x, y, grid_pts)
}

/// Largest relative error of central differences of `f` against `⟨grad, δ⟩` over `directions`.
///
/// The error is relative to `max(|fd|, |⟨grad, δ⟩|)`; two exact zeros count as agreement.
pub fn fd_check<F: Fn(&[f64]) -> f64>(f: F, point: &[f64], grad: &[f64], directions: &[Vec<f64>], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    if grad.len() != point.len() || directions.iter().any(|d| d.len() != point.len()) {
        return Err(invalid("dimension mismatch in fd_check"));
    }
    let mut worst = 0.0f64;
    for dir in directions {
        let plus: Vec<f64> = point.iter().zip(dir).map(|(p, d)| p + h * d).collect();
        let minus: Vec<f64> = point.iter().zip(dir).map(|(p, d)| p - h * d).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an: f64 = grad.iter().zip(dir).map(|(g, d)| g * d).sum();
        let denom = fd.abs().max(an.abs());
        if denom > 0.0 {
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok(worst)
}
