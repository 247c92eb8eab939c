//! Normal-form classification of candidate bifurcation points.
//!
//! One-parameter scalar families `u̇ = f(u, μ)` are tested for saddle-node and
//! pitchfork conditions at the origin, planar families `ẋ = F(x, μ)` for a
//! Hopf bifurcation. [`classify_game_point`] builds such families from the
//! gradient field of a game around a search candidate.

use serde::{Deserialize, Serialize};

use crate::autodiff::{game_hessian, joint_gradient, lu_solve};
use crate::error::{Error, Result};
use crate::games::Game;
use crate::matrix::{distance, dot, norm, normalized, Matrix};
use crate::optimizers::StepOperator;
use crate::spectral::{eig_general, eig_symmetric};

/// Central-difference step for the derivative stencil.
pub const FD_STEP: f64 = 1e-4;
/// Half-width of the symmetry probe box.
pub const PROBE_DELTA: f64 = 0.1;
/// `|μ|` at which Hopf criticality is probed by simulation.
pub const HOPF_PROBE_MU: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationKind {
    SaddleNode,
    Pitchfork,
    Hopf,
    Hyperbolic,
    Degenerate,
    NotHopf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Super,
    Sub,
    #[serde(rename = "na")]
    NA,
}

/// Stencil values at the probe point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub f: f64,
    pub f_u: f64,
    pub f_mu: f64,
    pub f_uu: f64,
    pub f_umu: f64,
    pub f_uuu: f64,
    /// `max |f(−u,0) + f(u,0)|` over the symmetry probes.
    pub odd_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationVerdict {
    pub kind: BifurcationKind,
    pub a: f64,
    pub b: f64,
    pub criticality: Criticality,
    /// Sign of `μ` on which the new equilibria (or the cycle) exist.
    pub side: Option<i8>,
    pub derivatives: Option<Derivatives>,
    /// Hopf only: eigenvalue `α(0) ± iβ(0)` and `dα/dμ`.
    pub hopf: Option<HopfData>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfData {
    pub alpha: f64,
    pub beta: f64,
    pub d_alpha: f64,
    /// Radius of the small cycle found by the probe, if any.
    pub cycle_radius: Option<f64>,
}

impl BifurcationVerdict {
    fn bare(kind: BifurcationKind) -> Self {
        Self {
            kind,
            a: 0.0,
            b: 0.0,
            criticality: Criticality::NA,
            side: None,
            derivatives: None,
            hopf: None,
            notes: Vec::new(),
        }
    }
}

const SYMMETRY_NOTE: &str =
    "pitchfork symmetry tested as odd, f(-u,mu) = -f(u,mu); the even reading f(-u,mu) = f(u,mu) is not used";

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Third derivative along `u` with one Richardson refinement.
fn third_u(f: &dyn Fn(f64, f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(2.0 * h, 0.0) - 2.0 * f(h, 0.0) + 2.0 * f(-h, 0.0) - f(-2.0 * h, 0.0)) / (2.0 * h * h * h);
    (4.0 * d(h) - d(2.0 * h)) / 3.0
}

/// Stencil derivatives of `f` at the origin.
pub fn derivatives(f: &dyn Fn(f64, f64) -> f64) -> Derivatives {
    let h = FD_STEP;
    let f0 = f(0.0, 0.0);
    let fp = f(h, 0.0);
    let fm = f(-h, 0.0);
    let odd_residual = [PROBE_DELTA / 2.0, PROBE_DELTA]
        .iter()
        .map(|&u| (f(-u, 0.0) + f(u, 0.0)).abs())
        .fold(0.0, f64::max);
    Derivatives {
        f: f0,
        f_u: (fp - fm) / (2.0 * h),
        f_mu: (f(0.0, h) - f(0.0, -h)) / (2.0 * h),
        f_uu: (fp - 2.0 * f0 + fm) / (h * h),
        f_umu: (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h),
        f_uuu: third_u(f, h),
        odd_residual,
    }
}

/// Classifies `u̇ = f(u, μ)` at the origin.
pub fn classify_1d(f: &dyn Fn(f64, f64) -> f64, tol: f64) -> BifurcationVerdict {
    let d = derivatives(f);
    let mut v = BifurcationVerdict::bare(BifurcationKind::Hyperbolic);
    v.derivatives = Some(d);
    if !(d.f.is_finite() && d.f_u.is_finite()) {
        v.kind = BifurcationKind::Degenerate;
        v.notes.push("non-finite field values at the probe".into());
        return v;
    }
    if d.f.abs() > tol || d.f_u.abs() > tol {
        v.notes.push("origin is not a non-hyperbolic equilibrium".into());
        return v;
    }
    let pitchfork = d.odd_residual <= tol;
    let (a, b, kind) = if pitchfork {
        v.notes.push(SYMMETRY_NOTE.into());
        (d.f_umu, d.f_uuu / 6.0, BifurcationKind::Pitchfork)
    } else {
        (d.f_mu, d.f_uu / 2.0, BifurcationKind::SaddleNode)
    };
    v.a = a;
    v.b = b;
    if !(a.is_finite() && b.is_finite()) || a.abs() <= 10.0 * tol || b.abs() <= 10.0 * tol {
        v.kind = BifurcationKind::Degenerate;
        v.notes.push(format!("coefficient within 10x tolerance: a={a}, b={b}"));
        return v;
    }
    v.kind = kind;
    v.side = Some(-sign(a * b));
    if kind == BifurcationKind::Pitchfork {
        v.criticality = if b < 0.0 { Criticality::Super } else { Criticality::Sub };
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBranches {
    /// Roots in ascending order with their stability.
    pub roots: Vec<(f64, Stability)>,
    /// Predictors whose Newton iteration did not converge.
    pub failed: usize,
}

fn d_du(f: &dyn Fn(f64, f64) -> f64, u: f64, mu: f64) -> f64 {
    let h = 1e-6 * (1.0 + u.abs());
    (f(u + h, mu) - f(u - h, mu)) / (2.0 * h)
}

fn newton_1d(f: &dyn Fn(f64, f64) -> f64, mu: f64, mut u: f64) -> Option<f64> {
    for _ in 0..50 {
        let fv = f(u, mu);
        if !fv.is_finite() {
            return None;
        }
        let fu = d_du(f, u, mu);
        if fu == 0.0 || !fu.is_finite() {
            return if fv.abs() < 1e-14 { Some(u) } else { None };
        }
        let step = fv / fu;
        u -= step;
        if step.abs() <= 1e-14 * (1.0 + u.abs()) {
            return Some(u);
        }
    }
    None
}

/// Equilibria of `f(·, μ)` near the origin, continued from normal-form
/// predictors.
pub fn equilibrium_branches(f: &dyn Fn(f64, f64) -> f64, verdict: &BifurcationVerdict, mu: f64) -> Result<EquilibriumBranches> {
    let amp = (verdict.a * mu / verdict.b).abs().sqrt();
    let seeds = match verdict.kind {
        BifurcationKind::SaddleNode => vec![-amp, amp],
        BifurcationKind::Pitchfork => vec![-amp, 0.0, amp],
        _ => {
            return Err(Error::InvalidInput(format!(
                "equilibrium branches need a saddle-node or pitchfork verdict, got {:?}",
                verdict.kind
            )))
        }
    };
    let mut roots: Vec<f64> = Vec::new();
    let mut failed = 0;
    for s in seeds {
        match newton_1d(f, mu, s) {
            Some(u) if !roots.iter().any(|r| (r - u).abs() < 1e-8) => roots.push(u),
            Some(_) => {}
            None => failed += 1,
        }
    }
    roots.sort_by(f64::total_cmp);
    let roots = roots
        .into_iter()
        .map(|u| {
            let fu = d_du(f, u, mu);
            let st = if fu < 0.0 {
                Stability::Stable
            } else if fu > 0.0 {
                Stability::Unstable
            } else {
                Stability::Neutral
            };
            (u, st)
        })
        .collect();
    Ok(EquilibriumBranches { roots, failed })
}

type Field2<'a> = dyn Fn([f64; 2], f64) -> [f64; 2] + 'a;

fn jacobian_2d(field: &Field2<'_>, mu: f64) -> [[f64; 2]; 2] {
    let h = FD_STEP;
    let mut j = [[0.0; 2]; 2];
    for c in 0..2 {
        let mut p = [0.0; 2];
        let mut m = [0.0; 2];
        p[c] = h;
        m[c] = -h;
        let fp = field(p, mu);
        let fm = field(m, mu);
        for r in 0..2 {
            j[r][c] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// `(α, β)` with eigenvalues `α ± iβ`; `None` for real eigenvalues.
fn complex_pair(j: [[f64; 2]; 2]) -> Option<(f64, f64)> {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        None
    } else {
        Some((tr / 2.0, (-disc).sqrt()))
    }
}

fn rk4(field: &Field2<'_>, mu: f64, x: [f64; 2], dt: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = field(x, mu);
    let k2 = field(add(x, k1, dt / 2.0), mu);
    let k3 = field(add(x, k2, dt / 2.0), mu);
    let k4 = field(add(x, k3, dt), mu);
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Simulates from radius 0.05 and reports the radius of a bounded, nonzero
/// attracting cycle if one is reached.
fn probe_cycle(field: &Field2<'_>, mu: f64) -> Option<f64> {
    let dt = 0.01;
    let steps = 60_000;
    let tail = 5_000;
    let mut x = [0.05, 0.0];
    let mut radii = Vec::with_capacity(tail);
    for i in 0..steps {
        x = rk4(field, mu, x, dt);
        let r = x[0].hypot(x[1]);
        if !r.is_finite() || r > 1.0 {
            return None;
        }
        if i >= steps - tail {
            radii.push(r);
        }
    }
    let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = radii.iter().cloned().fold(0.0, f64::max);
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    if lo > 1e-3 && hi - lo < 0.2 * mean {
        Some(mean)
    } else {
        None
    }
}

/// Classifies `ẋ = F(x, μ)` at the origin for a Hopf bifurcation.
pub fn classify_hopf_2d(field: &Field2<'_>, tol: f64) -> BifurcationVerdict {
    let mut v = BifurcationVerdict::bare(BifurcationKind::NotHopf);
    let f0 = field([0.0, 0.0], 0.0);
    if f0[0].hypot(f0[1]) > tol {
        v.notes.push("origin is not an equilibrium".into());
        return v;
    }
    let h = 1e-3;
    let Some((alpha, beta)) = complex_pair(jacobian_2d(field, 0.0)) else {
        v.notes.push("real eigenvalues at the origin".into());
        return v;
    };
    let (Some((am, _)), Some((ap, _))) = (complex_pair(jacobian_2d(field, -h)), complex_pair(jacobian_2d(field, h))) else {
        v.notes.push("eigenvalues turn real within the probe".into());
        return v;
    };
    let d_alpha = (ap - am) / (2.0 * h);
    let mut data = HopfData { alpha, beta, d_alpha, cycle_radius: None };
    if alpha.abs() > tol || beta.abs() <= tol || d_alpha.abs() <= tol {
        v.notes.push("Hopf conditions not met".into());
        v.hopf = Some(data);
        return v;
    }
    // μ side on which the equilibrium is unstable
    let mu_u = f64::from(sign(d_alpha)) * HOPF_PROBE_MU;
    v.kind = BifurcationKind::Hopf;
    v.a = d_alpha;
    let (mu_c, radius) = match probe_cycle(field, mu_u) {
        Some(r) => {
            v.criticality = Criticality::Super;
            (mu_u, Some(r))
        }
        None => {
            // an unstable cycle on the other side attracts in reversed time
            v.criticality = Criticality::Sub;
            let reversed = |x: [f64; 2], mu: f64| {
                let y = field(x, mu);
                [-y[0], -y[1]]
            };
            (-mu_u, probe_cycle(&reversed, -mu_u))
        }
    };
    v.side = Some(sign(mu_c));
    data.cycle_radius = radius;
    // r² = −aμ/b on the cycle branch
    v.b = radius.map_or(f64::NAN, |r| -d_alpha * mu_c / (r * r));
    v.hopf = Some(data);
    v
}

/// Settings for [`classify_game_point`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GamePointSettings {
    pub tol: f64,
    /// Largest shift accepted when recentering onto a fold or an equilibrium.
    pub recenter_radius: f64,
}

impl Default for GamePointSettings {
    fn default() -> Self {
        Self { tol: 1e-3, recenter_radius: 5.0 }
    }
}

/// Verdicts for one game point: the 1-D reduction, the planar one, and the
/// strongest of the two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamePointReport {
    pub verdict: BifurcationVerdict,
    pub reduction_1d: BifurcationVerdict,
    pub reduction_2d: Option<BifurcationVerdict>,
    /// Fold location `(u, μ)` relative to the point, when recentered.
    pub fold_shift: Option<[f64; 2]>,
    /// Equilibrium used by the planar reduction.
    pub equilibrium: Option<Vec<f64>>,
}

fn rank(kind: BifurcationKind) -> u8 {
    match kind {
        BifurcationKind::Hopf => 5,
        BifurcationKind::Pitchfork => 4,
        BifurcationKind::SaddleNode => 3,
        BifurcationKind::Degenerate => 2,
        BifurcationKind::Hyperbolic => 1,
        BifurcationKind::NotHopf => 0,
    }
}

fn orthogonal_to(axis: &[f64], hint: &Matrix) -> Option<Vec<f64>> {
    let s = eig_symmetric(&hint.gram()).ok()?;
    for v in s.eigenvectors? {
        let c = dot(&v, axis);
        let r: Vec<f64> = v.iter().zip(axis).map(|(vi, ai)| vi - c * ai).collect();
        if norm(&r) > 1e-6 {
            return normalized(&r);
        }
    }
    None
}

/// Newton on `(f, f_u) = 0` over `(u, μ)` starting at the origin.
fn locate_fold(f: &dyn Fn(f64, f64) -> f64, radius: f64) -> Option<[f64; 2]> {
    let h = 1e-5;
    let fu = |u: f64, m: f64| (f(u + h, m) - f(u - h, m)) / (2.0 * h);
    let mut x = [0.0, 0.0];
    for _ in 0..50 {
        let r = [f(x[0], x[1]), fu(x[0], x[1])];
        if !(r[0].is_finite() && r[1].is_finite()) {
            return None;
        }
        let j = [
            [(f(x[0] + h, x[1]) - f(x[0] - h, x[1])) / (2.0 * h), (f(x[0], x[1] + h) - f(x[0], x[1] - h)) / (2.0 * h)],
            [(fu(x[0] + h, x[1]) - fu(x[0] - h, x[1])) / (2.0 * h), (fu(x[0], x[1] + h) - fu(x[0], x[1] - h)) / (2.0 * h)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (j[0][0] * r[1] - j[1][0] * r[0]) / det];
        x = [x[0] - dx[0], x[1] - dx[1]];
        if x[0].hypot(x[1]) > radius {
            return None;
        }
        if dx[0].hypot(dx[1]) < 1e-12 {
            return Some(x);
        }
    }
    None
}

/// Damped Newton on `ĝ = 0`: steps are halved until `‖ĝ‖` decreases.
fn locate_equilibrium(game: &Game, w: &[f64], radius: f64) -> Option<Vec<f64>> {
    let grad_norm = |x: &[f64]| joint_gradient(game, x).map(|g| norm(&g)).unwrap_or(f64::INFINITY);
    let mut x = w.to_vec();
    let mut gn = grad_norm(&x);
    for _ in 0..100 {
        if gn < 1e-12 {
            return Some(x);
        }
        let g = joint_gradient(game, &x).ok()?;
        let h = game_hessian(game, &x).ok()?;
        let rows: Vec<Vec<f64>> = (0..h.rows()).map(|i| h.row(i).to_vec()).collect();
        let dx = lu_solve(rows, g).ok()?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi - t * di).collect();
            let cn = grad_norm(&cand);
            if cn < gn {
                accepted = Some((cand, cn));
                break;
            }
            t *= 0.5;
        }
        let (next, nn) = accepted?;
        let moved = distance(&next, &x);
        x = next;
        gn = nn;
        if distance(&x, w) > radius {
            return None;
        }
        if moved < 1e-13 {
            break;
        }
    }
    (gn < 1e-9).then_some(x)
}

/// Classifies a search candidate through two reductions of the gradient
/// flow `ẇ = −ĝ(w)`:
/// - 1-D: `f(u, μ) = −axisᵀ ĝ(w + u·axis + μ·axis⊥)`, recentered onto a
///   nearby fold `f = f_u = 0` when one exists within `recenter_radius`;
/// - 2-D: at a nearby equilibrium `w_e`, the flow on the plane of the leading
///   complex eigenvector of `−Ĥ(w_e)`, with the family `−ĝ + μ·x`.
pub fn classify_game_point(
    game: &Game,
    op: &dyn StepOperator,
    w: &[f64],
    axis: &[f64],
    settings: &GamePointSettings,
) -> Result<GamePointReport> {
    let n = game.dim();
    if w.len() != n || axis.len() != n {
        return Err(Error::InvalidInput(format!("point and axis must have length {n}")));
    }
    let axis = normalized(axis).ok_or_else(|| Error::InvalidInput("axis must be nonzero".into()))?;
    let perp = orthogonal_to(&axis, &op.jacobian(w)?)
        .ok_or_else(|| Error::InvalidInput("no direction orthogonal to the axis".into()))?;
    let field_at = |u: f64, mu: f64| -> f64 {
        let p: Vec<f64> = (0..n).map(|i| w[i] + u * axis[i] + mu * perp[i]).collect();
        joint_gradient(game, &p).map(|g| -dot(&axis, &g)).unwrap_or(f64::NAN)
    };
    let fold = locate_fold(&field_at, settings.recenter_radius);
    let reduction_1d = match fold {
        Some([u0, m0]) => classify_1d(&|u, mu| field_at(u + u0, mu + m0), settings.tol),
        None => classify_1d(&field_at, settings.tol),
    };

    let equilibrium = locate_equilibrium(game, w, settings.recenter_radius);
    let reduction_2d = equilibrium.as_ref().and_then(|we| {
        let h = game_hessian(game, we).ok()?.scale(-1.0);
        let spec = eig_general(&h).ok()?;
        let lead = spec
            .eigenvalues
            .iter()
            .filter(|z| z.im > 0.0)
            .max_by(|a, b| a.re.total_cmp(&b.re))?;
        let (q1, q2) = complex_plane(&h, lead.re, lead.im)?;
        let we = we.clone();
        let field = move |x: [f64; 2], mu: f64| -> [f64; 2] {
            let p: Vec<f64> = (0..n).map(|i| we[i] + x[0] * q1[i] + x[1] * q2[i]).collect();
            match joint_gradient(game, &p) {
                Ok(g) => [-dot(&q1, &g) + mu * x[0], -dot(&q2, &g) + mu * x[1]],
                Err(_) => [f64::NAN; 2],
            }
        };
        Some(classify_hopf_2d(&field, settings.tol))
    });

    let mut verdict = reduction_1d.clone();
    if let Some(v2) = &reduction_2d {
        if rank(v2.kind) > rank(verdict.kind) {
            verdict = v2.clone();
        }
    }
    Ok(GamePointReport { verdict, reduction_1d, reduction_2d, fold_shift: fold, equilibrium })
}

/// Orthonormal basis of the real invariant plane for the eigenvalue `re ± i·im`.
fn complex_plane(m: &Matrix, re: f64, im: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = m.rows();
    // (M − re·I)² + im²·I annihilates the plane; take its two weakest directions.
    let shifted = Matrix::from_fn(n, n, |i, j| m[(i, j)] - if i == j { re } else { 0.0 });
    let q = shifted.matmul(&shifted);
    let q = Matrix::from_fn(n, n, |i, j| q[(i, j)] + if i == j { im * im } else { 0.0 });
    let s = eig_symmetric(&q.gram()).ok()?;
    let mut vecs = s.eigenvectors?;
    let b = vecs.pop()?;
    let a = vecs.pop()?;
    Some((a, b))
}
