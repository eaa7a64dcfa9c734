//! TOML run configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sweepctl_core::certificate::Tolerances;
use sweepctl_core::dynamics::SmoothingSchedule;
use sweepctl_core::geometry::{DriftSpec, ExitArc, Scenario};
use sweepctl_core::solver::default_rho_schedule;
use sweepctl_core::{Mat2, Vec2};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    geometry: Geometry,
    #[serde(default)]
    exit: Exit,
    #[serde(default)]
    controls: Controls,
    #[serde(default)]
    drift: Drift,
    #[serde(default)]
    target: Target,
    #[serde(default)]
    run: Run,
    #[serde(default)]
    tolerances: Tols,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Geometry {
    dim: Option<usize>,
    q0: Option<[f64; 2]>,
    #[serde(rename = "R")]
    r: Option<f64>,
    #[serde(rename = "R1")]
    r1: Option<f64>,
    y0: Option<[f64; 2]>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Exit {
    angle_lo: Option<f64>,
    angle_hi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Controls {
    #[serde(rename = "M")]
    m: Option<f64>,
    u_bound: Option<f64>,
    v_bound: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Drift {
    kind: Option<String>,
    a: Option<[[f64; 2]; 2]>,
    #[serde(rename = "M1")]
    m1: Option<f64>,
    #[serde(rename = "K_f")]
    k_f: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Target {
    samples: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Run {
    grid: Option<usize>,
    /// Smoothing levels as multiples of `M/R1`.
    gamma_factors: Option<Vec<f64>>,
    rho: Option<Vec<f64>>,
    seeds: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tols {
    adjoint: Option<f64>,
    boundary: Option<f64>,
    conservation: Option<f64>,
    max_u: Option<f64>,
    max_v: Option<f64>,
    measures: Option<f64>,
}

/// Scenario plus run settings; every field has the straight-corridor default.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub grid: usize,
    pub gamma_factors: Vec<f64>,
    pub rho: Vec<f64>,
    pub seeds: usize,
    pub seed: u64,
    pub target_tol: Option<f64>,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::default(),
            grid: 40,
            gamma_factors: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            rho: default_rho_schedule(),
            seeds: 8,
            seed: 0,
            target_tol: None,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: File = toml::from_str(text)?;
        let mut c = Self::default();
        let s = &mut c.scenario;
        let g = f.geometry;
        s.dim = g.dim.unwrap_or(s.dim);
        s.q0 = g.q0.map(Vec2::from).unwrap_or(s.q0);
        s.r = g.r.unwrap_or(s.r);
        s.r1 = g.r1.unwrap_or(s.r1);
        s.y0 = g.y0.map(Vec2::from).unwrap_or(s.y0);
        s.delta = g.delta.unwrap_or(s.delta);
        s.exit = ExitArc {
            angle_lo: f.exit.angle_lo.unwrap_or(s.exit.angle_lo),
            angle_hi: f.exit.angle_hi.unwrap_or(s.exit.angle_hi),
        };
        s.m = f.controls.m.unwrap_or(s.m);
        s.u_bound = f.controls.u_bound.unwrap_or(s.u_bound);
        s.v_bound = f.controls.v_bound.unwrap_or(s.v_bound);
        s.drift = match (f.drift.kind.as_deref(), f.drift.a) {
            (None | Some("identity"), None) => DriftSpec::Identity,
            (Some("affine"), Some(a)) => DriftSpec::Affine { a: Mat2::from(a) },
            (Some("affine"), None) => bail!("affine drift needs a matrix `a`"),
            (None | Some("identity"), Some(_)) => bail!("matrix `a` given for the identity drift"),
            (Some(k), _) => bail!("unknown drift kind `{k}`"),
        };
        s.m1 = f.drift.m1.unwrap_or(s.m1);
        s.k_f = f.drift.k_f.unwrap_or(s.k_f);
        s.target_samples = f.target.samples.unwrap_or(s.target_samples);
        c.target_tol = f.target.tol;
        c.grid = f.run.grid.unwrap_or(c.grid);
        c.gamma_factors = f.run.gamma_factors.unwrap_or(c.gamma_factors);
        c.rho = f.run.rho.unwrap_or(c.rho);
        c.seeds = f.run.seeds.unwrap_or(c.seeds);
        c.seed = f.run.seed.unwrap_or(c.seed);
        let t = &mut c.tolerances;
        t.adjoint = f.tolerances.adjoint.or(t.adjoint);
        t.boundary = f.tolerances.boundary.unwrap_or(t.boundary);
        t.conservation = f.tolerances.conservation.unwrap_or(t.conservation);
        t.max_u = f.tolerances.max_u.unwrap_or(t.max_u);
        t.max_v = f.tolerances.max_v.unwrap_or(t.max_v);
        t.measures = f.tolerances.measures.unwrap_or(t.measures);
        if c.grid < 2 {
            bail!("run.grid must be at least 2");
        }
        Ok(c)
    }

    /// Smoothing schedule, optionally truncated at `gamma_max` (absolute γ).
    pub fn gammas(&self, gamma_max: Option<f64>) -> Result<SmoothingSchedule> {
        let rate = self.scenario.cone_rate();
        let mut g: Vec<f64> = self.gamma_factors.iter().map(|f| f * rate).collect();
        if let Some(m) = gamma_max {
            g.retain(|x| *x <= m);
        }
        Ok(SmoothingSchedule::new(g, &self.scenario)?)
    }

    /// ρ schedule, optionally truncated at `rho_max`.
    pub fn rhos(&self, rho_max: Option<f64>) -> Vec<f64> {
        let mut r = self.rho.clone();
        if let Some(m) = rho_max {
            r.retain(|x| *x <= m);
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_corridor() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.scenario, Scenario::default());
        assert_eq!(c.grid, 40);
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::parse(
            "[geometry]\nR = 12.0\ny0 = [1.0, 0.5]\n[controls]\nM = 2.0\n[drift]\nkind = \"affine\"\na = [[0.0, 0.1], [-0.1, 0.0]]\nK_f = 0.1\n[run]\ngrid = 16\nrho = [0.0, 1.0]\n",
        )
        .unwrap();
        assert_eq!(c.scenario.r, 12.0);
        assert_eq!(c.scenario.y0, Vec2::new(1.0, 0.5));
        assert_eq!(c.scenario.m, 2.0);
        assert!(matches!(c.scenario.drift, DriftSpec::Affine { .. }));
        assert_eq!(c.grid, 16);
        assert_eq!(c.rhos(Some(0.5)), vec![0.0]);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(RunConfig::parse("[geometry\nR = 1").is_err());
        assert!(RunConfig::parse("[geometry]\nradius = 3.0").is_err());
        assert!(RunConfig::parse("[drift]\nkind = \"cubic\"").is_err());
        assert!(RunConfig::parse("[run]\ngrid = 1").is_err());
    }

    #[test]
    fn gamma_truncation() {
        let c = RunConfig::default();
        assert_eq!(c.gammas(Some(7.0)).unwrap().gammas, vec![3.0, 6.0]);
        assert!(c.gammas(Some(1.0)).is_err());
    }
}
