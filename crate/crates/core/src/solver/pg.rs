//! Projected gradient with Barzilai–Borwein steps and monotone Armijo
//! backtracking, and an augmented-Lagrangian driver for inequality constraints.

use alloc::vec;
use alloc::vec::Vec;

/// Stopping and line-search parameters of [`projected_gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PgOptions {
    pub max_iter: usize,
    /// Stop when `‖P(x − g) − x‖∞ ≤ tol`.
    pub tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for PgOptions {
    fn default() -> Self {
        PgOptions { max_iter: 4000, tol: 1e-9, armijo: 1e-4, max_backtracks: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped because the merit no longer decreases at working precision.
    pub stalled: bool,
    pub pg_norm: f64,
}

/// Consecutive accepted steps without a representable decrease before the iteration stops.
const STALL_STEPS: usize = 20;

fn pg_norm<P: Fn(&mut [f64])>(x: &[f64], g: &[f64], project: &P) -> f64 {
    let mut t: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project(&mut t);
    t.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Minimize `f` over the set defined by `project`.
///
/// `eval` returns the value and gradient. Accepted iterates never increase the
/// value; when `history` is given, every accepted value is appended.
pub fn projected_gradient<E, P>(
    x0: &[f64],
    mut eval: E,
    project: P,
    opts: &PgOptions,
    mut history: Option<&mut Vec<f64>>,
) -> PgOutcome
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = eval(&x);
    if let Some(h) = history.as_deref_mut() {
        h.push(f);
    }
    let mut norm = pg_norm(&x, &g, &project);
    let mut step = {
        let gi = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gi > 0.0 { (1.0 / gi).min(1.0) } else { 1.0 }
    };
    let mut trial = vec![0.0; x.len()];
    let mut iter = 0;
    let mut bb_long = true;
    let mut flat = 0;
    while iter < opts.max_iter && norm > opts.tol && f.is_finite() && flat < STALL_STEPS {
        iter += 1;
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            for k in 0..x.len() {
                trial[k] = x[k] - alpha * g[k];
            }
            project(&mut trial);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gk, (t, xk))| gk * (t - xk)).sum();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f + opts.armijo * decrease {
                accepted = Some((ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((ft, gt)) = accepted else { break };
        let mut sty = 0.0;
        let mut sts = 0.0;
        let mut yty = 0.0;
        for k in 0..x.len() {
            let sk = trial[k] - x[k];
            let yk = gt[k] - g[k];
            sty += sk * yk;
            sts += sk * sk;
            yty += yk * yk;
        }
        step = if sty > 0.0 {
            let s = if bb_long || yty == 0.0 { sts / sty } else { sty / yty };
            s.clamp(1e-12, 1e12)
        } else {
            (alpha * 2.0).min(1e12)
        };
        bb_long = !bb_long;
        flat = if f - ft <= 4.0 * f64::EPSILON * f.abs().max(1.0) { flat + 1 } else { 0 };
        core::mem::swap(&mut x, &mut trial);
        f = ft;
        g = gt;
        if let Some(h) = history.as_deref_mut() {
            h.push(f);
        }
        norm = pg_norm(&x, &g, &project);
    }
    PgOutcome { x, value: f, iterations: iter, converged: norm <= opts.tol, stalled: flat >= STALL_STEPS, pg_norm: norm }
}

/// A smooth problem `min f(x)` s.t. `g(x) ≤ 0`, `x ∈ X` with a closed-form projection onto `X`.
pub(crate) trait AlModel {
    fn n_constraints(&self) -> usize;
    /// Augmented-Lagrangian merit, its gradient, and the constraint values.
    fn eval(&self, x: &[f64], mu: &[f64], penalty: f64) -> (f64, Vec<f64>, Vec<f64>);
    fn project(&self, x: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlOptions {
    pub max_outer: usize,
    pub penalty0: f64,
    pub penalty_max: f64,
    pub feas_tol: f64,
    pub pg: PgOptions,
}

impl Default for AlOptions {
    fn default() -> Self {
        AlOptions { max_outer: 30, penalty0: 10.0, penalty_max: 1e8, feas_tol: 1e-9, pg: PgOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlOutcome {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub max_violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

pub(crate) fn augmented_lagrangian<M: AlModel>(model: &M, x0: &[f64], mu0: &[f64], opts: &AlOptions) -> AlOutcome {
    let mut mu = mu0.to_vec();
    debug_assert_eq!(mu.len(), model.n_constraints());
    let mut pen = opts.penalty0;
    let mut x = x0.to_vec();
    let mut prev = f64::INFINITY;
    let mut inner = 0;
    let mut viol = f64::INFINITY;
    let mut outer = 0;
    let mut converged = false;
    while outer < opts.max_outer {
        outer += 1;
        let out = projected_gradient(
            &x,
            |z| {
                let (f, g, _) = model.eval(z, &mu, pen);
                (f, g)
            },
            |z| model.project(z),
            &opts.pg,
            None,
        );
        inner += out.iterations;
        x = out.x;
        let (_, _, cons) = model.eval(&x, &mu, pen);
        viol = cons.iter().fold(0.0f64, |m, c| m.max(*c));
        let compl = cons.iter().zip(&mu).fold(0.0f64, |m, (c, u)| m.max((-c).min(u / pen).abs()));
        for (u, c) in mu.iter_mut().zip(&cons) {
            *u = (*u + pen * c).max(0.0);
        }
        if viol <= opts.feas_tol && compl <= opts.feas_tol.max(1e-7) && (out.converged || out.stalled) {
            converged = true;
            break;
        }
        if viol > opts.feas_tol && viol > 0.25 * prev {
            pen = (pen * 10.0).min(opts.penalty_max);
        }
        prev = viol;
    }
    AlOutcome { x, mu, max_violation: viol.max(0.0), outer_iterations: outer, inner_iterations: inner, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_project(x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    #[test]
    fn quadratic_with_box() {
        // min (x-2)² + 10 (y+0.3)² on [-1,1]²
        let eval = |x: &[f64]| {
            let f = (x[0] - 2.0).powi(2) + 10.0 * (x[1] + 0.3).powi(2);
            (f, vec![2.0 * (x[0] - 2.0), 20.0 * (x[1] + 0.3)])
        };
        let mut hist = Vec::new();
        let out = projected_gradient(&[0.0, 0.0], eval, box_project, &PgOptions::default(), Some(&mut hist));
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-12 && (out.x[1] + 0.3).abs() < 1e-9);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Disk;
    impl AlModel for Disk {
        fn n_constraints(&self) -> usize {
            1
        }
        // min x + y s.t. x² + y² − 1 ≤ 0
        fn eval(&self, x: &[f64], mu: &[f64], pen: f64) -> (f64, Vec<f64>, Vec<f64>) {
            let g = x[0] * x[0] + x[1] * x[1] - 1.0;
            let (val, w) = crate::transcription::al_term(g, mu[0], pen);
            (x[0] + x[1] + val, vec![1.0 + 2.0 * w * x[0], 1.0 + 2.0 * w * x[1]], vec![g])
        }
        fn project(&self, _: &mut [f64]) {}
    }

    #[test]
    fn al_finds_constrained_minimum_and_multiplier() {
        let out = augmented_lagrangian(&Disk, &[0.0, 0.0], &[0.0], &AlOptions::default());
        assert!(out.converged);
        let r = -core::f64::consts::FRAC_1_SQRT_2;
        assert!((out.x[0] - r).abs() < 1e-7 && (out.x[1] - r).abs() < 1e-7);
        assert!((out.mu[0] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }
}
