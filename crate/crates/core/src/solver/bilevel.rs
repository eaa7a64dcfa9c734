//! Bilevel solve: smoothing (γ) and penalty (ρ) continuation over block-coordinate
//! passes on the penalized single-level problem.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::lower::{restore_lower, solve_lower_from, LowerOptions, LowerSolution};
use super::pg::{augmented_lagrangian, AlOptions, PgOptions};
use super::{Blocks, FlatModel};
use crate::dynamics::{feasibility_monitor_with, ControlProfile, SmoothingSchedule, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::geometry::{validate, Scenario, TargetSet};
use crate::math::Vec2;
use crate::transcription::{evaluate, get2, layout, propagate, Context, DecisionVector, Merit};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BilevelOptions {
    pub n_intervals: usize,
    /// Terminal tolerance `ε`; `None` uses `1e-3·R`.
    pub target_tol: Option<f64>,
    /// Number of initial upper guesses.
    pub seeds: usize,
    pub seed: u64,
    pub lower: LowerOptions,
    pub upper: AlOptions,
    /// Run the lower-cost tie-break over ω at the ρ > 0 stages of the final smoothing level.
    pub refine: bool,
    /// Bound on the constraint violation of the returned trajectory.
    pub feas_tol: f64,
}

impl Default for BilevelOptions {
    fn default() -> Self {
        BilevelOptions {
            n_intervals: 40,
            target_tol: None,
            seeds: 8,
            seed: 0,
            lower: LowerOptions::default(),
            upper: AlOptions {
                max_outer: 40,
                penalty0: 10.0,
                penalty_max: 1e9,
                feas_tol: 1e-10,
                pg: PgOptions { max_iter: 3000, tol: 1e-10, ..PgOptions::default() },
            },
            refine: true,
            feas_tol: 1e-6,
        }
    }
}

/// Default ρ schedule `{0, 1, 2, 4, …, 64}`.
pub fn default_rho_schedule() -> Vec<f64> {
    let mut r = vec![0.0];
    r.extend((0..7).map(|k| (1u32 << k) as f64));
    r
}

/// Multipliers of the upper state constraint (nodal) and the terminal target.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpperMultipliers {
    pub kappa: f64,
    pub atoms_h: Vec<f64>,
}

/// One `(γ, ρ)` stage of the continuation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageRecord {
    pub gamma: f64,
    pub rho: f64,
    pub final_time: f64,
    pub z: f64,
    pub phi: f64,
    pub gap: f64,
    pub objective: f64,
    /// Best objective seen within the stage (non-increasing within a stage).
    pub incumbent: Option<f64>,
    /// `max |∇_(ω,v)(z + Σ w·h_lower) − dt·ζ|` at the start of the upper block.
    pub envelope_residual: f64,
    pub max_h_lower: f64,
    pub max_h_upper: f64,
    pub terminal_distance: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BilevelSolution {
    pub decision: DecisionVector,
    #[cfg_attr(feature = "serde", serde(rename = "T_star"))]
    pub t_star: f64,
    pub gamma_final: f64,
    pub rho_final: f64,
    pub target_tol: f64,
    pub lower: LowerSolution,
    pub upper: UpperMultipliers,
    pub history: Vec<StageRecord>,
}

struct Run<'a> {
    ctx: Context<'a>,
    opts: &'a BilevelOptions,
}

fn upper_part(d: &[f64], n_nodes: usize) -> (Vec<f64>, Vec<Vec2>) {
    ((0..n_nodes).map(|i| d[layout::omega(i)]).collect(), (0..n_nodes).map(|i| get2(d, layout::v(i))).collect())
}

impl Run<'_> {
    fn n(&self) -> usize {
        self.ctx.grid.n_intervals
    }

    fn with_gamma(&self, gamma: f64) -> Self {
        Run { ctx: Context { gamma, ..self.ctx }, opts: self.opts }
    }

    /// Minimize `t` over `(ω, v)` under the upper constraints, plus the frozen
    /// linear term `ρ(∇(z + Σ w·h_lower) − dt·ζ)` (zero at a lower optimum).
    fn upper_block(&self, d: &mut Vec<f64>, rho: f64, lower: Option<&LowerSolution>, up: &mut UpperMultipliers) -> f64 {
        let mut model = FlatModel::new(self.ctx, Blocks::UPPER);
        model.time_weight = 1.0;
        model.upper = true;
        let mut residual = 0.0;
        if let Some(m) = lower.filter(|_| rho > 0.0).and_then(|l| l.multipliers.as_ref()) {
            let merit = Merit { effort_weight: 1.0, lower: Some(&m.atoms_l), penalty: 1.0, ..Merit::default() };
            let g = evaluate(d, &self.ctx, &merit, true).grad;
            let dt = self.ctx.grid.dt();
            let mut lin = vec![0.0; d.len()];
            for j in 0..self.n() {
                let k = layout::omega(j);
                lin[k] = g[k] - dt * m.zeta1[j];
                let kv = layout::v(j);
                lin[kv] = g[kv] - dt * m.zeta2_raw[j].x;
                lin[kv + 1] = g[kv + 1] - dt * m.zeta2_raw[j].y;
            }
            residual = lin.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for l in lin.iter_mut() {
                *l *= rho;
            }
            model.linear = Some(lin);
        }
        let mu0 = model.pack(None, Some((&up.atoms_h, up.kappa)), 0.0);
        let out = augmented_lagrangian(&model, d, &mu0, &self.opts.upper);
        *d = out.x;
        let (atoms_h, kappa) = model.upper_atoms(&out.mu);
        *up = UpperMultipliers { kappa, atoms_h };
        residual
    }

    fn lower_solve(&self, d: &[f64], rho: f64, warm: Option<&LowerSolution>, starts: usize) -> Result<LowerSolution> {
        let (omega, v) = upper_part(d, self.n() + 1);
        let opts = LowerOptions { starts, ..self.opts.lower };
        if rho == 0.0 {
            restore_lower(&omega, &v, self.ctx.gamma, self.ctx.s, warm, &opts)
        } else {
            match warm {
                Some(w) => solve_lower_from(&omega, &v, self.ctx.gamma, self.ctx.s, w, &opts),
                None => super::lower::solve_lower(&omega, &v, self.ctx.gamma, self.ctx.s, &opts),
            }
        }
    }

    /// Lower block with a backtrack on `(ω, v)` toward `prev` while the lower problem is infeasible.
    fn lower_block(&self, d: &mut [f64], prev: &[f64], rho: f64, warm: Option<&LowerSolution>, starts: usize) -> Result<LowerSolution> {
        let tol = self.opts.lower.al.feas_tol;
        let mut sol = self.lower_solve(d, rho, warm, starts)?;
        let mut tries = 0;
        while sol.status.max_violation > tol && tries < 20 {
            tries += 1;
            for i in 0..=self.n() {
                for k in [layout::omega(i), layout::v(i), layout::v(i) + 1] {
                    d[k] = 0.5 * (d[k] + prev[k]);
                }
            }
            sol = self.lower_solve(d, rho, warm, starts)?;
        }
        sol.decision.write(d);
        Ok(sol)
    }

    /// Minimize the lower cost over `(ω, lower decision)` with `v` fixed and `t ≤ cap`.
    fn refine(&self, d: &mut Vec<f64>, lower: &LowerSolution, up: &UpperMultipliers, cap: f64) {
        let Some(m) = lower.multipliers.as_ref() else { return };
        let mut model = FlatModel::new(self.ctx, Blocks::REFINE);
        model.effort_weight = 1.0;
        model.lower = true;
        model.upper = true;
        model.cap = Some(cap);
        let mu0 = model.pack(Some(&m.atoms_l), Some((&up.atoms_h, up.kappa)), 0.0);
        let out = augmented_lagrangian(&model, d, &mu0, &self.opts.upper);
        if out.max_violation <= self.opts.lower.al.feas_tol.max(1e-9) {
            *d = out.x;
        }
    }

    /// Multi-start lower solve at the current `(ω, v)`: returns the stage's lower solution, `φ`,
    /// and the best lower solution found. For `ρ > 0` a strictly better feasible lower decision
    /// replaces the current one.
    fn value_solve(
        &self,
        d: &mut [f64],
        low: LowerSolution,
        rho: f64,
        starts: usize,
    ) -> Result<(LowerSolution, f64, LowerSolution)> {
        let n = self.n();
        let (omega, v) = upper_part(d, n + 1);
        let z = propagate(d, self.ctx.grid, self.ctx.gamma, self.ctx.s).z[n];
        let opts = LowerOptions { starts, ..self.opts.lower };
        let best = solve_lower_from(&omega, &v, self.ctx.gamma, self.ctx.s, &low, &opts)?;
        let phi = best.value.min(z);
        if rho > 0.0 && best.value < z - 1e-10 && best.status.max_violation <= self.opts.lower.al.feas_tol {
            best.decision.write(d);
            return Ok((best.clone(), phi, best));
        }
        Ok((low, phi, best))
    }

    fn violations(&self, d: &[f64]) -> (f64, f64, f64) {
        let tr = propagate(d, self.ctx.grid, self.ctx.gamma, self.ctx.s);
        let target = self.ctx.target.expect("bilevel context has a target");
        let r = feasibility_monitor_with(&tr, self.ctx.s, target);
        (r.max_h_lower, r.max_h_upper, r.terminal_distance)
    }

    fn infeasibility(&self, d: &[f64]) -> f64 {
        let (l, h, t) = self.violations(d);
        l.max(h).max(t - self.ctx.eps_target).max(0.0)
    }
}

fn initial_guesses(s: &Scenario, grid: TimeGrid, seeds: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let (lo, hi) = (s.exit.angle_lo, s.exit.angle_hi);
    (0..seeds.max(1))
        .map(|k| {
            let (frac, factor) = if k == 0 { (0.5, 1.2) } else { (unit(), 1.0 + 0.5 * unit()) };
            let theta = lo + (hi - lo) * frac;
            let goal = s.q0 + Vec2::polar(theta) * (s.r - s.r1);
            let dir = goal - s.y0;
            let dist = dir.norm();
            let (v, omega) = if dist > 0.0 && s.v_bound > 0.0 {
                (dir * (s.v_bound / dist), factor * dist / s.v_bound)
            } else {
                (Vec2::ZERO, 0.0)
            };
            let mut cp = ControlProfile::constant(grid, v, Vec2::ZERO, 0.0, omega);
            cp.hold_last();
            DecisionVector { x_init: s.y0, controls: cp }.to_flat()
        })
        .collect()
}

/// Solve the bilevel problem by `(γ, ρ)` continuation; returns the final stage.
pub fn solve_bilevel(
    s: &Scenario,
    gamma_sched: &SmoothingSchedule,
    rho_sched: &[f64],
    opts: &BilevelOptions,
) -> Result<BilevelSolution> {
    validate(s).into_result()?;
    if rho_sched.is_empty() || rho_sched.iter().any(|r| !(*r >= 0.0)) || rho_sched.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("rho schedule must be nonempty, nonnegative and nondecreasing"));
    }
    let grid = TimeGrid::unit(opts.n_intervals)?;
    let target = TargetSet::new(s);
    let eps = opts.target_tol.unwrap_or_else(|| s.default_target_tol());
    let gammas = &gamma_sched.gammas;
    let base = Run { ctx: Context { s, target: Some(&target), gamma: gammas[0], grid, eps_target: eps }, opts };

    // pick the best start by the upper problem alone
    let mut best: Option<(Vec<f64>, UpperMultipliers, f64)> = None;
    for mut d in initial_guesses(s, grid, opts.seeds, opts.seed) {
        let mut up = UpperMultipliers { kappa: 0.0, atoms_h: vec![0.0; grid.n_nodes()] };
        base.upper_block(&mut d, 0.0, None, &mut up);
        let infeas = base.infeasibility(&d);
        let t = propagate(&d, grid, gammas[0], s).final_time;
        let key = if infeas <= opts.feas_tol { t } else { f64::INFINITY };
        let replace = match &best {
            None => true,
            Some((bd, _, bk)) => key < *bk || (key == f64::INFINITY && *bk == f64::INFINITY && infeas < base.infeasibility(bd)),
        };
        if replace {
            best = Some((d, up, key));
        }
    }
    let (mut d, mut up, _) = best.expect("at least one start");
    let mut lower: Option<LowerSolution> = None;
    // last lower solution with multipliers; warm start across stages and smoothing levels
    let mut warm: Option<LowerSolution> = None;
    let mut history = Vec::new();
    let mut last_gamma = gammas[0];
    let mut last_rho = rho_sched[0];
    let n_stages = gammas.len() * rho_sched.len();
    let mut stage = 0;

    for (gi, &gamma) in gammas.iter().enumerate() {
        let run = base.with_gamma(gamma);
        let final_gamma = gi + 1 == gammas.len();
        let mut first_positive = true;
        for &rho in rho_sched {
            stage += 1;
            last_gamma = gamma;
            last_rho = rho;
            let starts = if rho > 0.0 && first_positive && gi == 0 { opts.lower.starts } else { 2 };
            let phi_starts = if stage == n_stages { opts.lower.starts } else { 2 };
            let mut incumbent = f64::INFINITY;
            let mut record = |d: &[f64], phi: f64| -> (f64, f64) {
                let tr = propagate(d, grid, gamma, s);
                let gap = tr.z[grid.n_intervals] - phi;
                let obj = tr.final_time + rho * gap;
                if run.infeasibility(d) <= opts.feas_tol {
                    incumbent = incumbent.min(obj);
                }
                (gap, obj)
            };

            let prev = d.clone();
            let envelope = run.upper_block(&mut d, rho, lower.as_ref(), &mut up);
            let mut low = run.lower_block(&mut d, &prev, rho, warm.as_ref(), starts)?;
            if rho > 0.0 {
                first_positive = false;
            }
            if rho > 0.0 && opts.refine && final_gamma {
                let (l, phi, _) = run.value_solve(&mut d, low, rho, phi_starts)?;
                low = l;
                record(&d, phi);
                let cap = propagate(&d, grid, gamma, s).final_time;
                run.refine(&mut d, &low, &up, cap);
                let prev = d.clone();
                low = run.lower_block(&mut d, &prev, rho, Some(&low), 1)?;
                let prev = d.clone();
                run.upper_block(&mut d, rho, Some(&low), &mut up);
                low = run.lower_block(&mut d, &prev, rho, Some(&low), 1)?;
            }
            let (l, phi, best) = run.value_solve(&mut d, low, rho, phi_starts)?;
            low = l;
            if best.multipliers.is_some() && best.status.max_violation <= opts.lower.al.feas_tol {
                warm = Some(best);
            }
            let (gap, objective) = record(&d, phi);
            let tr = propagate(&d, grid, gamma, s);
            let (hl, hh, td) = run.violations(&d);
            history.push(StageRecord {
                gamma,
                rho,
                final_time: tr.final_time,
                z: tr.z[grid.n_intervals],
                phi,
                gap,
                objective,
                incumbent: incumbent.is_finite().then_some(incumbent),
                envelope_residual: envelope,
                max_h_lower: hl,
                max_h_upper: hh,
                terminal_distance: td,
                kappa: up.kappa,
            });
            if low.multipliers.is_some() {
                warm = Some(low.clone());
            }
            lower = Some(low);
        }
    }

    let run = base.with_gamma(last_gamma);
    let infeas = run.infeasibility(&d);
    let lower = lower.expect("at least one stage");
    if infeas > opts.feas_tol {
        return Err(Error::SolveFailed {
            reason: String::from("no feasible trajectory reaches the exit within tolerance"),
            best_infeasibility: infeas,
        });
    }
    if lower.multipliers.is_none() {
        return Err(Error::SolveFailed {
            reason: format!("final stage has rho = {last_rho}; the lower problem was only restored"),
            best_infeasibility: infeas,
        });
    }
    let mut decision = DecisionVector::from_flat(grid, &d)?;
    decision.controls.hold_last();
    let t_star = propagate(&d, grid, last_gamma, s).final_time;
    Ok(BilevelSolution {
        decision,
        t_star,
        gamma_final: last_gamma,
        rho_final: last_rho,
        target_tol: eps,
        lower,
        upper: up,
        history,
    })
}

/// `z(T*) − φ(ω, v)` for the solution's decision, with φ from a fresh multi-start lower solve.
pub fn penalty_gap(sol: &BilevelSolution, s: &Scenario, opts: &LowerOptions) -> Result<f64> {
    let cp = &sol.decision.controls;
    let tr = propagate(&sol.decision.to_flat(), cp.grid, sol.gamma_final, s);
    let phi = solve_lower_from(&cp.omega, &cp.v, sol.gamma_final, s, &sol.lower, opts)?.value;
    Ok(tr.z[cp.grid.n_intervals] - phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        assert_eq!(default_rho_schedule(), vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
    }

    #[test]
    fn guesses_are_admissible_and_deterministic() {
        let s = Scenario::default();
        let grid = TimeGrid::unit(10).unwrap();
        let a = initial_guesses(&s, grid, 4, 7);
        assert_eq!(a, initial_guesses(&s, grid, 4, 7));
        for d in &a {
            let dv = DecisionVector::from_flat(grid, d).unwrap();
            assert!(dv.controls.check(&s, 1e-12).is_ok());
        }
    }

    #[test]
    fn short_corridor_solve() {
        let s = Scenario::default();
        let opts = BilevelOptions { n_intervals: 12, seeds: 2, ..BilevelOptions::default() };
        let gs = SmoothingSchedule::multiples(&s, &[4.0, 8.0]);
        let sol = solve_bilevel(&s, &gs, &[0.0, 1.0, 2.0], &opts).unwrap();
        assert!((sol.t_star - 9.0).abs() < 0.05, "T* = {}", sol.t_star);
        let gap = penalty_gap(&sol, &s, &LowerOptions::default()).unwrap();
        assert!(gap.abs() < 1e-6, "gap {gap}");
        for st in &sol.history {
            assert!(st.incumbent.unwrap() <= st.objective + 1e-12);
        }
        let first = &sol.history[0];
        assert_eq!(first.rho, 0.0);
        assert!(first.gap >= -1e-12);
    }

    #[test]
    fn rejects_bad_schedule() {
        let s = Scenario::default();
        let gs = SmoothingSchedule::default_for(&s);
        let o = BilevelOptions::default();
        assert!(solve_bilevel(&s, &gs, &[], &o).is_err());
        assert!(solve_bilevel(&s, &gs, &[2.0, 1.0], &o).is_err());
    }
}
