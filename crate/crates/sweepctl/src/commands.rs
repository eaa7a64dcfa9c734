//! Subcommand implementations. Each returns an exit code; errors are mapped in [`run`].

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;
use sweepctl_core::certificate::{certify, extract_multipliers, sigma_smooth_value, sigma_value};
use sweepctl_core::dynamics::{
    convergence_study, feasibility_monitor, integrate_catchup, integrate_smooth, smoothing_coefficient, ControlProfile,
    FeasibilityLoss, TimeGrid, ViolationReport,
};
use sweepctl_core::geometry::{validate, Scenario, ValidationReport};
use sweepctl_core::oracle::{brute_bilevel, brute_lower_top, sigma_sup_oracle, sigma_sup_oracle_coef, EnumSpec};
use sweepctl_core::solver::{solve_bilevel, solve_lower, BilevelOptions, BilevelSolution, LowerOptions};
use sweepctl_core::{Error, Vec2};

use crate::config::RunConfig;
use crate::io::{read_controls, read_json, write_comparison, write_json, write_rows, write_trajectory};
use crate::{exit, Cli, Command, Common, ControlsSource};

pub fn run(cli: &Cli) -> u8 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Validation(_)) => exit::VALIDATION,
                Some(Error::SolveFailed { .. } | Error::NoFeasible { .. } | Error::InfeasibleState { .. }) => exit::SOLVE,
                _ => exit::USAGE,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let c = &cli.common;
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(n) = c.grid {
        anyhow::ensure!(n >= 2, "--grid must be at least 2");
        cfg.grid = n;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    match &cli.command {
        Command::Validate => cmd_validate(&cfg, &c.out),
        Command::Simulate(a) => cmd_simulate(&cfg, c, &a.source, a.gamma_sweep),
        Command::Solve => cmd_solve(&cfg, c),
        Command::Certify(a) => cmd_certify(&cfg, &c.out, &a.solution),
        Command::Oracle(a) => cmd_oracle(&cfg, c, a.samples, a.skip_bilevel),
        Command::SweepGamma(a) => cmd_sweep_gamma(&cfg, c, &a.source),
    }
}

fn print_validation(rep: &ValidationReport) {
    for ch in &rep.checks {
        println!("{:<4} {:<4} {}", ch.id, if ch.passed { "PASS" } else { "FAIL" }, ch.detail);
    }
}

fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let rep = validate(&cfg.scenario);
    write_json(&out.join("validation.json"), &rep)?;
    print_validation(&rep);
    Ok(if rep.passed() { exit::OK } else { exit::VALIDATION })
}

/// The profile from `--controls`, the demo, or zero controls on the configured grid.
fn controls(cfg: &RunConfig, src: &ControlsSource) -> Result<(ControlProfile, Vec2)> {
    let s = &cfg.scenario;
    let (cp, x0) = if let Some(p) = &src.controls {
        (read_controls(p)?, s.y0)
    } else if src.demo {
        demo_profile(s, cfg.grid)?
    } else {
        let mut cp = ControlProfile::zeros(TimeGrid::unit(cfg.grid)?);
        cp.omega.iter_mut().for_each(|w| *w = 1.0);
        (cp, s.y0)
    };
    Ok((cp, src.x_init.map(Vec2::from).unwrap_or(x0)))
}

/// The disk moves at full speed along `+e1` while `x` starts half a radius behind its center,
/// so the cone switches on once the trailing boundary reaches `x`.
pub fn demo_profile(s: &Scenario, n: usize) -> Result<(ControlProfile, Vec2)> {
    let grid = TimeGrid::unit(n)?;
    let horizon = (0.5 * (s.r - s.r1)).min(4.0 * s.r1 / s.v_bound.max(1e-12));
    let cp = ControlProfile::constant(grid, Vec2::new(s.v_bound, 0.0), Vec2::ZERO, 1.0, horizon);
    Ok((cp, s.y0 - Vec2::new(0.5 * s.r1, 0.0)))
}

#[derive(Serialize)]
struct SimulationReport {
    gamma: f64,
    n_intervals: usize,
    scenario_valid: bool,
    smooth: ViolationReport,
    catchup: ViolationReport,
    warning: Option<FeasibilityLoss>,
}

fn final_gamma(cfg: &RunConfig, common: &Common) -> Result<f64> {
    Ok(cfg.gammas(common.gamma_max)?.last())
}

fn cmd_simulate(cfg: &RunConfig, common: &Common, src: &ControlsSource, sweep: bool) -> Result<u8> {
    let s = &cfg.scenario;
    let (cp, x0) = controls(cfg, src)?;
    let gamma = final_gamma(cfg, common)?;
    let smooth = integrate_smooth(&cp, x0, gamma, s)?;
    let cu = integrate_catchup(&cp, x0, s)?;
    let out = &common.out;
    write_comparison(&out.join("simulation.csv"), &smooth, &cu.trajectory, &cu.u0, s)?;
    let rep = SimulationReport {
        gamma,
        n_intervals: cp.grid.n_intervals,
        scenario_valid: validate(s).passed(),
        smooth: feasibility_monitor(&smooth, s),
        catchup: feasibility_monitor(&cu.trajectory, s),
        warning: cu.warning,
    };
    write_json(&out.join("violations.json"), &rep)?;
    if let Some(w) = &cu.warning {
        eprintln!("warning: feasibility lost at node {} (correction {:.6e} exceeds budget {:.6e})", w.node, w.required, w.budget);
    }
    println!("smoothed max h_lower {:.6e}, catching-up max h_lower {:.6e}", rep.smooth.max_h_lower, rep.catchup.max_h_lower);
    if sweep {
        write_convergence(cfg, common, &cp, x0)?;
    }
    Ok(exit::OK)
}

fn write_convergence(cfg: &RunConfig, common: &Common, cp: &ControlProfile, x0: Vec2) -> Result<()> {
    let sched = cfg.gammas(common.gamma_max)?;
    let errs = convergence_study(cp, x0, &sched, &cfg.scenario)?;
    let rows: Vec<Vec<f64>> = errs.iter().map(|(g, e)| vec![*g, *e]).collect();
    write_rows(&common.out.join("convergence.csv"), &["gamma", "sup_error"], &rows)?;
    for (g, e) in errs {
        println!("gamma {g:>10.4} error {e:.6e}");
    }
    Ok(())
}

fn cmd_sweep_gamma(cfg: &RunConfig, common: &Common, src: &ControlsSource) -> Result<u8> {
    let (cp, x0) = controls(cfg, src)?;
    write_convergence(cfg, common, &cp, x0)?;
    Ok(exit::OK)
}

fn bilevel_options(cfg: &RunConfig) -> BilevelOptions {
    BilevelOptions {
        n_intervals: cfg.grid,
        target_tol: cfg.target_tol,
        seeds: cfg.seeds,
        seed: cfg.seed,
        ..BilevelOptions::default()
    }
}

fn solve(cfg: &RunConfig, common: &Common) -> Result<BilevelSolution> {
    let gammas = cfg.gammas(common.gamma_max)?;
    let rhos = cfg.rhos(common.rho_max);
    Ok(solve_bilevel(&cfg.scenario, &gammas, &rhos, &bilevel_options(cfg))?)
}

#[derive(Serialize)]
struct Failure {
    error: String,
    best_infeasibility: Option<f64>,
}

fn cmd_solve(cfg: &RunConfig, common: &Common) -> Result<u8> {
    let s = &cfg.scenario;
    let out = &common.out;
    let rep = validate(s);
    if !rep.passed() {
        write_json(&out.join("validation.json"), &rep)?;
        print_validation(&rep);
        return Ok(exit::VALIDATION);
    }
    let sol = match solve(cfg, common) {
        Ok(sol) => sol,
        Err(e) => {
            let best = match e.downcast_ref::<Error>() {
                Some(Error::SolveFailed { best_infeasibility, .. }) => Some(*best_infeasibility),
                _ => None,
            };
            write_json(&out.join("failure.json"), &Failure { error: format!("{e:#}"), best_infeasibility: best })?;
            eprintln!("error: {e:#}");
            return Ok(exit::SOLVE);
        }
    };
    write_json(&out.join("solution.json"), &sol)?;
    let cp = &sol.decision.controls;
    let tr = integrate_smooth_euler(&sol, s)?;
    write_trajectory(&out.join("trajectory.csv"), cp, &tr, s)?;
    let rows: Vec<Vec<f64>> = sol
        .history
        .iter()
        .map(|h| vec![h.gamma, h.rho, h.final_time, h.z, h.phi, h.gap, h.objective, h.incumbent.unwrap_or(f64::NAN)])
        .collect();
    write_rows(&out.join("history.csv"), &["gamma", "rho", "final_time", "z", "phi", "gap", "objective", "incumbent"], &rows)?;
    println!("T* = {:.9}  (gamma {}, rho {}, N {})", sol.t_star, sol.gamma_final, sol.rho_final, cp.grid.n_intervals);
    Ok(exit::OK)
}

/// The transcription's own Euler trajectory for a solution.
fn integrate_smooth_euler(sol: &BilevelSolution, s: &Scenario) -> Result<sweepctl_core::dynamics::StateTrajectory> {
    use sweepctl_core::dynamics::{integrate_smooth_with, Scheme};
    let cp = &sol.decision.controls;
    Ok(integrate_smooth_with(cp, sol.decision.x_init, sol.gamma_final, s, Scheme::Euler)?)
}

fn cmd_certify(cfg: &RunConfig, out: &Path, path: &Path) -> Result<u8> {
    let s = &cfg.scenario;
    let sol: BilevelSolution = read_json(path)?;
    let m = extract_multipliers(&sol, s)?;
    let rep = certify(&sol, &m, s, &cfg.tolerances)?;
    write_json(&out.join("multipliers.json"), &m)?;
    write_json(&out.join("certificate.json"), &rep)?;
    println!("{:<14} {:>14} {:>14}  status", "condition", "residual", "tolerance");
    for c in &rep.conditions {
        let status = if c.skipped {
            "skipped"
        } else if c.passed {
            "pass"
        } else {
            "FAIL"
        };
        println!("{:<14} {:>14.6e} {:>14.6e}  {status}", c.name, c.residual, c.tolerance);
    }
    Ok(if rep.passed { exit::OK } else { exit::CERTIFICATE })
}

#[derive(Serialize)]
struct Comparison {
    name: String,
    value: f64,
    reference: f64,
    tolerance: f64,
    passed: bool,
}

/// Largest deviation of the closed-form support terms from the sampled supremum.
pub fn sigma_comparison(s: &Scenario, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let gamma = 64.0 * s.cone_rate();
    let mut worst = 0.0f64;
    for k in 0..samples {
        let y = Vec2::new(4.0 * unit() - 2.0, 4.0 * unit() - 2.0);
        let x = y + Vec2::polar(std::f64::consts::TAU * unit()) * s.r1;
        let q = Vec2::new(6.0 * unit() - 3.0, 6.0 * unit() - 3.0);
        let nu = 2.0 * unit();
        let r = if k % 10 == 0 { 0.0 } else { 2.0 * unit() };
        let exact = sigma_value(y, x, q, nu, r, s);
        worst = worst.max((exact - sigma_sup_oracle(q, nu, r, x, y, s, 1000)).abs());
        let c = smoothing_coefficient(gamma, x, y, s)?;
        let smooth = sigma_smooth_value(y, x, q, nu, r, gamma, s)?;
        worst = worst.max((smooth - sigma_sup_oracle_coef(c, q, nu, r, x, y, 1000)).abs());
    }
    Ok(worst)
}

/// Per-node `(ω, v)` of the tiny lower comparison: full speed toward the exit.
pub fn tiny_upper(s: &Scenario, spec: &EnumSpec) -> (Vec<f64>, Vec<Vec2>) {
    let n = spec.n_intervals;
    let dir = Vec2::polar(0.5 * (s.exit.angle_lo + s.exit.angle_hi));
    (vec![0.5 * spec.omega_max; n + 1], vec![dir * s.v_bound; n + 1])
}

fn cmd_oracle(cfg: &RunConfig, common: &Common, samples: usize, skip_bilevel: bool) -> Result<u8> {
    let s = &cfg.scenario;
    let out = &common.out;
    let mut results = Vec::new();

    let sig = sigma_comparison(s, samples, cfg.seed)?;
    results.push(Comparison { name: "sigma".into(), value: sig, reference: 0.0, tolerance: 1e-9, passed: sig <= 1e-9 });

    let spec = EnumSpec::for_scenario(s, 4, 3);
    let (omega, v) = tiny_upper(s, &spec);
    let top = brute_lower_top(&omega, &v, spec.gamma, &spec, s, 10)?;
    let rows: Vec<Vec<f64>> = top
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut r = vec![k as f64, c.value, c.x_init.x, c.x_init.y];
            for j in 0..spec.n_intervals {
                r.extend([c.u[j].x, c.u[j].y, c.u0[j]]);
            }
            r
        })
        .collect();
    let mut header = vec!["rank".to_string(), "value".into(), "x_init_x".into(), "x_init_y".into()];
    for j in 0..spec.n_intervals {
        header.extend([format!("u_x_{j}"), format!("u_y_{j}"), format!("u0_{j}")]);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(&out.join("oracle_top10.csv"), &header, &rows)?;
    let low = solve_lower(&omega, &v, spec.gamma, s, &LowerOptions { seed: cfg.seed, ..LowerOptions::default() })?;
    let brute = top[0].value;
    results.push(Comparison {
        name: "lower".into(),
        value: low.value,
        reference: brute,
        tolerance: 1e-6,
        passed: low.value <= brute + 1e-6,
    });

    if !skip_bilevel {
        let (t_brute, _) = brute_bilevel(&spec, s)?;
        let step = spec.omega_max / ((spec.levels - 1) as f64 * spec.n_intervals as f64);
        let sol = solve(cfg, common)?;
        results.push(Comparison {
            name: "bilevel".into(),
            value: sol.t_star,
            reference: t_brute,
            tolerance: step,
            passed: (sol.t_star - t_brute).abs() <= step,
        });
    }
    write_json(&out.join("oracle.json"), &results)?;
    for r in &results {
        println!(
            "{:<8} value {:>16.9e} reference {:>16.9e} tol {:.1e}  {}",
            r.name,
            r.value,
            r.reference,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(if results.iter().all(|r| r.passed) { exit::OK } else { exit::CERTIFICATE })
}
