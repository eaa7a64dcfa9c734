//! Problem data, state-constraint functions, disk projections and assumption checks.
//!
//! The big disk `Q` has center `q0` and radius `R`; the moving disk `Q1 + y` has
//! radius `R1`. The exit arc `E` is an angular interval of `∂Q` and the target set
//! is the boundary curve `Ē = ∂[(E + R1·B) ∩ Q]`, represented by dense sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{asin, Mat2, Vec2, PI, TAU};

/// Drift family `f(x, u)`, saturated radially at `M1`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum DriftSpec {
    /// `f(x, u) = u`.
    Identity,
    /// `f(x, u) = A x + u`.
    Affine { a: Mat2 },
}

impl DriftSpec {
    /// Unsaturated value `A x + u`.
    #[inline]
    pub fn raw(&self, x: Vec2, u: Vec2) -> Vec2 {
        match self {
            DriftSpec::Identity => u,
            DriftSpec::Affine { a } => a.mul_vec(x) + u,
        }
    }

    /// The matrix `A` (zero for the identity family).
    pub fn matrix(&self) -> Mat2 {
        match self {
            DriftSpec::Identity => Mat2::ZERO,
            DriftSpec::Affine { a } => *a,
        }
    }

    /// Saturated drift value.
    #[inline]
    pub fn eval(&self, x: Vec2, u: Vec2, m1: f64) -> Vec2 {
        saturate(self.raw(x, u), m1)
    }
}

/// Radial saturation `w ↦ w · min(1, m1/|w|)`.
#[inline]
pub fn saturate(w: Vec2, m1: f64) -> Vec2 {
    let n = w.norm();
    if n <= m1 {
        w
    } else {
        w * (m1 / n)
    }
}

/// Angular interval `[angle_lo, angle_hi]` of `∂Q`, measured about `q0`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExitArc {
    pub angle_lo: f64,
    pub angle_hi: f64,
}

/// All constants of one problem instance.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    /// State dimension; only 2 is supported.
    pub dim: usize,
    /// Center of `Q`.
    pub q0: Vec2,
    /// Radius `R` of `Q`.
    #[cfg_attr(feature = "serde", serde(rename = "R"))]
    pub r: f64,
    /// Radius `R1` of `Q1`.
    #[cfg_attr(feature = "serde", serde(rename = "R1"))]
    pub r1: f64,
    /// Initial center of the moving disk.
    pub y0: Vec2,
    pub exit: ExitArc,
    /// Truncation level `M` of the normal cone.
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub m: f64,
    /// Radius `b_U` of the lower control ball.
    pub u_bound: f64,
    /// Radius `b_V` of the upper control ball.
    pub v_bound: f64,
    pub drift: DriftSpec,
    /// Drift bound `M1`.
    #[cfg_attr(feature = "serde", serde(rename = "M1"))]
    pub m1: f64,
    /// Drift Lipschitz constant `K_f`.
    #[cfg_attr(feature = "serde", serde(rename = "K_f"))]
    pub k_f: f64,
    /// Inner-ball radius `δ` of H4.
    pub delta: f64,
    /// Number of samples of the target curve.
    pub target_samples: usize,
}

impl Default for Scenario {
    /// Straight corridor: exit arc directly ahead of the start.
    fn default() -> Self {
        Scenario {
            dim: 2,
            q0: Vec2::ZERO,
            r: 10.0,
            r1: 1.0,
            y0: Vec2::ZERO,
            exit: ExitArc { angle_lo: 0.0, angle_hi: 0.0 },
            m: 1.5,
            u_bound: 1.0,
            v_bound: 1.0,
            drift: DriftSpec::Identity,
            m1: 1.0,
            k_f: 0.0,
            delta: 0.5,
            target_samples: 2048,
        }
    }
}

impl Scenario {
    /// `M / R1`, the cap of the smoothing coefficient.
    #[inline]
    pub fn cone_rate(&self) -> f64 {
        self.m / self.r1
    }

    /// Saturated drift `f(x, u)`.
    #[inline]
    pub fn drift_value(&self, x: Vec2, u: Vec2) -> Vec2 {
        self.drift.eval(x, u, self.m1)
    }

    /// Default terminal tolerance `1e-3 · R`.
    pub fn default_target_tol(&self) -> f64 {
        1e-3 * self.r
    }

    /// Angular half-width of the outer part of `Ē` beyond each arc end.
    fn cap_angle(&self) -> f64 {
        2.0 * asin((self.r1 / (2.0 * self.r)).min(1.0))
    }
}

/// Upper state constraint `½(|y − q0|² − (R − R1)²)`.
#[inline]
pub fn h_upper(y: Vec2, s: &Scenario) -> f64 {
    let d = s.r - s.r1;
    0.5 * ((y - s.q0).norm_sq() - d * d)
}

/// Lower state constraint `½(|x − y|² − R1²)`.
#[inline]
pub fn h_lower(x: Vec2, y: Vec2, s: &Scenario) -> f64 {
    0.5 * ((x - y).norm_sq() - s.r1 * s.r1)
}

/// Radial projection onto the closed disk; the result never lies outside it.
pub fn project_disk(p: Vec2, center: Vec2, radius: f64) -> Vec2 {
    let d = p - center;
    let n = d.norm();
    if n <= radius && d.norm_sq() <= radius * radius {
        return p;
    }
    if radius <= 0.0 {
        return center;
    }
    // shrink until the rounded result is inside in both norm and squared norm
    let mut k = radius / n;
    loop {
        let q = center + d * k;
        let e = q - center;
        if e.norm() <= radius && e.norm_sq() <= radius * radius {
            return q;
        }
        k *= 1.0 - 2.0 * f64::EPSILON;
    }
}

/// The two H5 bounds on the truncation level.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncationBounds {
    pub m_bar_upper: f64,
    pub m_bar_lower: f64,
    /// Both control sets have zero radius.
    pub degenerate: bool,
}

impl TruncationBounds {
    /// Whether `m̄ < M < M̄` and `M > 0`.
    pub fn admits(&self, m: f64) -> bool {
        m > 0.0 && m > self.m_bar_lower && m < self.m_bar_upper
    }
}

/// H5 bounds: closed form for the identity drift, sampled minimax otherwise.
pub fn truncation_bounds(s: &Scenario, samples: usize) -> Result<TruncationBounds> {
    if samples < 8 {
        return Err(invalid("truncation_bounds needs at least 8 samples"));
    }
    match s.drift {
        DriftSpec::Identity => {
            let b = s.u_bound.min(s.m1) + s.v_bound;
            Ok(TruncationBounds {
                m_bar_upper: b,
                m_bar_lower: -b,
                degenerate: s.u_bound == 0.0 && s.v_bound == 0.0,
            })
        }
        DriftSpec::Affine { .. } => truncation_bounds_sampled(s, samples),
    }
}

/// Sampled minimax over unit `ζ`, the `U`-boundary on the same angular grid, and
/// representative positions `x ∈ Q`.
pub fn truncation_bounds_sampled(s: &Scenario, samples: usize) -> Result<TruncationBounds> {
    if samples < 8 {
        return Err(invalid("truncation_bounds needs at least 8 samples"));
    }
    let dirs: Vec<Vec2> = (0..samples)
        .map(|k| Vec2::polar(TAU * k as f64 / samples as f64))
        .collect();
    let mut controls: Vec<Vec2> = dirs.iter().map(|d| *d * s.u_bound).collect();
    controls.push(Vec2::ZERO);
    let xs = working_positions(s);
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for x in &xs {
        for z in &dirs {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for u in &controls {
                let p = z.dot(s.drift_value(*x, *u));
                hi = hi.max(p);
                lo = lo.min(p);
            }
            upper = upper.min(hi + s.v_bound);
            lower = lower.max(lo - s.v_bound);
        }
    }
    Ok(TruncationBounds {
        m_bar_upper: upper,
        m_bar_lower: lower,
        degenerate: s.u_bound == 0.0 && s.v_bound == 0.0,
    })
}

/// Polar sample of `Q` used for drift-dependent bounds.
fn working_positions(s: &Scenario) -> Vec<Vec2> {
    match s.drift {
        DriftSpec::Identity => alloc::vec![s.q0],
        DriftSpec::Affine { .. } => {
            let mut xs = alloc::vec![s.q0];
            for ring in 1..=2 {
                let rad = s.r * ring as f64 / 2.0;
                for k in 0..16 {
                    xs.push(s.q0 + Vec2::polar(TAU * k as f64 / 16.0) * rad);
                }
            }
            xs
        }
    }
}

/// Closest point of the target curve to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetPoint {
    pub point: Vec2,
    /// Unit normal of the sampled curve at `point` (finite-difference tangent, rotated).
    pub normal: Vec2,
    pub distance: f64,
}

/// Polyline sampling of `Ē = ∂[(E + R1·B) ∩ Q]`.
///
/// Pieces: the part of `∂Q` within `R1` of `E`, the inner arc of radius `R − R1`
/// over `E`, and the two quarter-circle caps of radius `R1` about the arc ends.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pieces: Vec<Vec<Vec2>>,
    /// Bounding discs `(center, radius)` of consecutive chunks of each piece.
    chunks: Vec<Vec<(Vec2, f64)>>,
}

const CHUNK: usize = 32;

fn chunk_bounds(piece: &[Vec2]) -> Vec<(Vec2, f64)> {
    if piece.len() < 2 {
        return Vec::new();
    }
    (0..piece.len() - 1)
        .step_by(CHUNK)
        .map(|start| {
            let pts = &piece[start..(start + CHUNK + 1).min(piece.len())];
            let (mut lo, mut hi) = (pts[0], pts[0]);
            for p in pts {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            let c = (lo + hi) * 0.5;
            let r = pts.iter().fold(0.0f64, |m, p| m.max(p.dist(c)));
            (c, r * (1.0 + 1e-12) + 1e-12)
        })
        .collect()
}

impl TargetSet {
    pub fn new(s: &Scenario) -> Self {
        Self::with_samples(s, s.target_samples)
    }

    pub fn with_samples(s: &Scenario, samples: usize) -> Self {
        let samples = samples.max(16);
        let (lo, hi) = (s.exit.angle_lo, s.exit.angle_hi);
        let alpha = s.cap_angle();
        let e_lo = s.q0 + Vec2::polar(lo) * s.r;
        let e_hi = s.q0 + Vec2::polar(hi) * s.r;
        // cap end angles about the arc ends, where the caps meet ∂Q
        let out_lo = unwrap_into((s.q0 + Vec2::polar(lo - alpha) * s.r - e_lo).angle(), lo + PI);
        let out_hi = unwrap_into((s.q0 + Vec2::polar(hi + alpha) * s.r - e_hi).angle(), hi);
        let arcs = [
            (s.q0, s.r, lo - alpha, hi + alpha),
            (s.q0, s.r - s.r1, lo, hi),
            (e_lo, s.r1, lo + PI, out_lo),
            (e_hi, s.r1, hi + PI, out_hi),
        ];
        let total: f64 = arcs.iter().map(|a| a.1 * (a.3 - a.2).abs()).sum();
        let pieces = arcs
            .iter()
            .map(|&(c, rad, a0, a1)| {
                let len = rad * (a1 - a0).abs();
                let n = if len == 0.0 {
                    1
                } else {
                    ((samples as f64 * len / total) as usize).max(2)
                };
                (0..n)
                    .map(|k| {
                        let th = if n == 1 { a0 } else { a0 + (a1 - a0) * k as f64 / (n - 1) as f64 };
                        c + Vec2::polar(th) * rad
                    })
                    .collect()
            })
            .collect::<Vec<Vec<Vec2>>>();
        let chunks = pieces.iter().map(|p| chunk_bounds(p)).collect();
        TargetSet { pieces, chunks }
    }

    pub fn pieces(&self) -> &[Vec<Vec2>] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.pieces.iter().flat_map(|p| p.iter().copied())
    }

    pub fn distance(&self, y: Vec2) -> f64 {
        self.nearest(y).distance
    }

    pub fn nearest(&self, y: Vec2) -> TargetPoint {
        let mut best = TargetPoint { point: y, normal: Vec2::ZERO, distance: f64::INFINITY };
        for (piece, chunks) in self.pieces.iter().zip(&self.chunks) {
            if piece.len() == 1 {
                let d = piece[0].dist(y);
                if d < best.distance {
                    best = TargetPoint { point: piece[0], normal: (y - piece[0]).normalized(), distance: d };
                }
                continue;
            }
            for (k, (c, r)) in chunks.iter().enumerate() {
                if c.dist(y) - r > best.distance {
                    continue;
                }
                let end = ((k + 1) * CHUNK).min(piece.len() - 1);
                for i in k * CHUNK..end {
                    let (a, b) = (piece[i], piece[i + 1]);
                    let ab = b - a;
                    let l2 = ab.norm_sq();
                    let t = if l2 > 0.0 { ((y - a).dot(ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
                    let p = a + ab * t;
                    let d = p.dist(y);
                    if d < best.distance {
                        let tangent = if t <= 0.0 && i > 0 {
                            b - piece[i - 1]
                        } else if t >= 1.0 && i + 2 < piece.len() {
                            piece[i + 2] - a
                        } else {
                            ab
                        };
                        best = TargetPoint { point: p, normal: tangent.perp().normalized(), distance: d };
                    }
                }
            }
        }
        best
    }
}

fn unwrap_into(angle: f64, start: f64) -> f64 {
    let mut a = angle;
    while a < start {
        a += TAU;
    }
    while a >= start + TAU {
        a -= TAU;
    }
    a
}

/// Distance from `y` to the sampled target curve.
pub fn target_distance(y: Vec2, s: &Scenario) -> f64 {
    TargetSet::new(s).distance(y)
}

/// One assumption check.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssumptionCheck {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub bounds: Option<TruncationBounds>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// `Err(Error::Validation)` naming the failed checks.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            let ids: Vec<String> = self.failures().map(|c| format!("{}: {}", c.id, c.detail)).collect();
            Err(Error::Validation(ids.join("; ")))
        }
    }
}

/// Checks geometry, H1–H5 by closed forms or sampling; H6 is recorded as assumed.
pub fn validate(s: &Scenario) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |id: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck { id: String::from(id), passed, detail })
    };

    let finite = [s.r, s.r1, s.m, s.u_bound, s.v_bound, s.m1, s.k_f, s.delta, s.exit.angle_lo, s.exit.angle_hi]
        .iter()
        .all(|v| v.is_finite())
        && s.q0.is_finite()
        && s.y0.is_finite();
    push("dim", s.dim == 2, format!("dim = {} (supported: 2)", s.dim));

    let geo_ok = finite && s.r > s.r1 && s.r1 > 0.0;
    let start_ok = geo_ok && (s.y0 - s.q0).norm() <= s.r - s.r1 + 1e-12 * s.r;
    push(
        "geometry",
        geo_ok && start_ok,
        if !geo_ok {
            format!("need R > R1 > 0 (R = {}, R1 = {})", s.r, s.r1)
        } else if !start_ok {
            format!("|y0 - q0| = {} exceeds R - R1 = {}", (s.y0 - s.q0).norm(), s.r - s.r1)
        } else {
            String::from("R > R1 > 0 and Q1 + y0 inside Q")
        },
    );

    let span = s.exit.angle_hi - s.exit.angle_lo;
    let exit_ok = geo_ok && span >= 0.0 && span < TAU - 2.0 * s.cap_angle();
    push(
        "exit",
        exit_ok,
        format!("arc [{}, {}] (needs lo <= hi and span below a full turn)", s.exit.angle_lo, s.exit.angle_hi),
    );

    let a = s.drift.matrix();
    let a_norm = a.norm();
    let box_radius = (s.q0.norm() + s.r + s.r1).max(0.0);
    let raw_sup = a_norm * box_radius + s.u_bound;
    let h1_ok = finite && s.m1 > 0.0 && raw_sup <= s.m1 * (1.0 + 1e-12) && s.k_f + 1e-12 >= a_norm;
    push(
        "H1",
        h1_ok,
        format!(
            "sup |f| on working box = {raw_sup} vs M1 = {}; Lipschitz |A| = {a_norm} vs K_f = {}",
            s.m1, s.k_f
        ),
    );
    push("H2", true, String::from("f(x, U) is a translated ball: closed and convex by construction"));
    let h3_ok = s.u_bound >= 0.0 && s.v_bound >= 0.0;
    push("H3", h3_ok, format!("U, V balls of radii {} and {}", s.u_bound, s.v_bound));
    let h4_room = (s.u_bound - a_norm * box_radius).min(s.m1);
    let h4_ok = s.delta > 0.0 && s.delta <= h4_room + 1e-12;
    push("H4", h4_ok, format!("delta = {} must lie in (0, {}]", s.delta, h4_room));

    let bounds = if finite { truncation_bounds(s, 256).ok() } else { None };
    match bounds {
        Some(b) => {
            let detail = if s.m <= 0.0 {
                format!("M = {} must be positive", s.m)
            } else if b.degenerate {
                String::from("degenerate control sets: window (m_bar, M_bar) is empty")
            } else if s.m >= b.m_bar_upper {
                format!(
                    "M = {} >= M_bar = {}: strong invariance, bilevel collapses",
                    s.m, b.m_bar_upper
                )
            } else if s.m <= b.m_bar_lower {
                format!(
                    "M = {} <= m_bar = {}: lower-level feasibility can be lost",
                    s.m, b.m_bar_lower
                )
            } else {
                format!("m_bar = {} < M = {} < M_bar = {}", b.m_bar_lower, s.m, b.m_bar_upper)
            };
            push("H5", b.admits(s.m) && !b.degenerate, detail);
        }
        None => push("H5", false, String::from("bounds unavailable (non-finite data)")),
    }
    push("H6", true, String::from("assumed: non-isolation of the optimum is not machine-checkable"));

    ValidationReport { checks, bounds }
}
