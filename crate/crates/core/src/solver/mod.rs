//! Lower-level solves, value-function subgradients, and the bilevel solve by
//! smoothing and penalty continuation.

mod bilevel;
mod lower;
mod pg;

pub use bilevel::{default_rho_schedule, penalty_gap, solve_bilevel, BilevelOptions, BilevelSolution, StageRecord, UpperMultipliers};
pub use lower::{
    adjoint_sweep, restore_lower, solve_lower, solve_lower_from, value_subgradient, AdjointData, LowerDecision,
    LowerMultipliers, LowerOptions, LowerSolution, SolveStatus,
};
pub use pg::{projected_gradient, AlOptions, AlOutcome, PgOptions, PgOutcome};

use alloc::vec;
use alloc::vec::Vec;

use crate::transcription::{evaluate, layout, project_flat, Context, Merit};
use pg::AlModel;

/// Which variable blocks of the flat decision are free.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Blocks {
    pub x_init: bool,
    pub lower_controls: bool,
    pub omega: bool,
    pub v: bool,
}

impl Blocks {
    pub const LOWER: Blocks = Blocks { x_init: true, lower_controls: true, omega: false, v: false };
    pub const UPPER: Blocks = Blocks { x_init: false, lower_controls: false, omega: true, v: true };
    pub const REFINE: Blocks = Blocks { x_init: true, lower_controls: true, omega: true, v: false };

    fn mask(&self, n_nodes: usize) -> Vec<bool> {
        let mut m = vec![false; layout::len(n_nodes)];
        m[0] = self.x_init;
        m[1] = self.x_init;
        // the node-N controls are not used by the recursion
        for i in 0..n_nodes - 1 {
            m[layout::v(i)] = self.v;
            m[layout::v(i) + 1] = self.v;
            m[layout::u(i)] = self.lower_controls;
            m[layout::u(i) + 1] = self.lower_controls;
            m[layout::u0(i)] = self.lower_controls;
            m[layout::omega(i)] = self.omega;
        }
        m
    }
}

/// Constraint groups of a [`FlatModel`], in this order in the multiplier vector:
/// `h_lower` at nodes `1..=N`, `h_upper` at nodes `1..=N` followed by the target, the time cap.
pub(crate) struct FlatModel<'a> {
    pub ctx: Context<'a>,
    pub free: Vec<bool>,
    pub time_weight: f64,
    pub effort_weight: f64,
    pub lower: bool,
    pub upper: bool,
    pub cap: Option<f64>,
    pub linear: Option<Vec<f64>>,
}

impl<'a> FlatModel<'a> {
    pub fn new(ctx: Context<'a>, blocks: Blocks) -> Self {
        FlatModel {
            free: blocks.mask(ctx.grid.n_nodes()),
            ctx,
            time_weight: 0.0,
            effort_weight: 0.0,
            lower: false,
            upper: false,
            cap: None,
            linear: None,
        }
    }

    fn n(&self) -> usize {
        self.ctx.grid.n_intervals
    }

    pub fn upper_offset(&self) -> usize {
        if self.lower { self.n() } else { 0 }
    }

    pub fn cap_offset(&self) -> usize {
        self.upper_offset() + if self.upper { self.n() + 1 } else { 0 }
    }

    /// Pack nodal multipliers (index 0 ignored) into the model's multiplier vector.
    pub fn pack(&self, lower: Option<&[f64]>, upper: Option<(&[f64], f64)>, cap: f64) -> Vec<f64> {
        let n = self.n();
        let mut mu = vec![0.0; self.n_constraints()];
        if self.lower {
            if let Some(l) = lower {
                mu[..n].copy_from_slice(&l[1..=n]);
            }
        }
        if self.upper {
            if let Some((h, k)) = upper {
                let o = self.upper_offset();
                mu[o..o + n].copy_from_slice(&h[1..=n]);
                mu[o + n] = k;
            }
        }
        if self.cap.is_some() {
            mu[self.cap_offset()] = cap;
        }
        mu
    }

    /// Nodal `h_lower` multipliers (index 0 set to 0).
    pub fn lower_atoms(&self, mu: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.n() + 1];
        if self.lower {
            a[1..].copy_from_slice(&mu[..self.n()]);
        }
        a
    }

    /// Nodal `h_upper` multipliers and the target multiplier.
    pub fn upper_atoms(&self, mu: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n();
        let mut a = vec![0.0; n + 1];
        if !self.upper {
            return (a, 0.0);
        }
        let o = self.upper_offset();
        a[1..].copy_from_slice(&mu[o..o + n]);
        (a, mu[o + n])
    }
}

impl AlModel for FlatModel<'_> {
    fn n_constraints(&self) -> usize {
        self.cap_offset() + usize::from(self.cap.is_some())
    }

    fn eval(&self, x: &[f64], mu: &[f64], penalty: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut mu_l = vec![0.0; n + 1];
        let mut mu_h = vec![0.0; n + 1];
        let mut target = None;
        if self.lower {
            mu_l[1..].copy_from_slice(&mu[..n]);
        }
        if self.upper {
            let o = self.upper_offset();
            mu_h[1..].copy_from_slice(&mu[o..o + n]);
            target = Some(mu[o + n]);
        }
        let merit = Merit {
            time_weight: self.time_weight,
            effort_weight: self.effort_weight,
            lower: self.lower.then_some(&mu_l[..]),
            upper: self.upper.then_some(&mu_h[..]),
            target,
            time_cap: self.cap.map(|c| (c, mu[self.cap_offset()])),
            penalty,
            linear: self.linear.as_deref(),
        };
        let ev = evaluate(x, &self.ctx, &merit, true);
        let mut grad = ev.grad;
        for (g, f) in grad.iter_mut().zip(&self.free) {
            if !f {
                *g = 0.0;
            }
        }
        let mut cons = Vec::with_capacity(self.n_constraints());
        if self.lower {
            cons.extend_from_slice(&ev.cons.lower[1..]);
        }
        if self.upper {
            cons.extend_from_slice(&ev.cons.upper[1..]);
            cons.push(ev.cons.target);
        }
        if self.cap.is_some() {
            cons.push(ev.cons.time);
        }
        (ev.merit, grad, cons)
    }

    fn project(&self, x: &mut [f64]) {
        project_flat(x, self.ctx.s);
    }
}
