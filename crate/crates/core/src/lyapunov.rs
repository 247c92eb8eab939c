//! Truncated Lyapunov exponents of optimizer trajectories.
//!
//! Conventions used throughout:
//! - the Lyapunov term at iterate `j` is `γ_j = log(dᵀ J_jᵀ J_j d)`, i.e. twice
//!   the log-stretch, in nats per step;
//! - the `k`-step exponent averages the `k + 1` terms `γ_0 … γ_k`;
//! - `J† = (1/(k+1)) Σ J_jᵀ J_j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::fd_gradient;
use crate::error::{Error, Result};
use crate::matrix::{norm, normalized, Matrix};
use crate::optimizers::{run, RunGuards, StepOperator};
use crate::spectral::{eig_symmetric, power_iteration, start_vector};

/// How the displacement direction is chosen along the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectionStrategy {
    /// A seeded random unit vector, fixed for all steps.
    RandomFixed { seed: u64 },
    /// Top eigenvector of `J_0ᵀJ_0`, fixed.
    EighFirst,
    /// Top eigenvector of `J_jᵀJ_j`, re-estimated at every step.
    #[default]
    EighEvery,
    PowerIterFirst { iters: usize },
    PowerIterEvery { iters: usize },
    /// `d_{j+1} = J_j d_j / ‖J_j d_j‖`, starting from the top eigenvector of
    /// `J_0ᵀJ_0`.
    Propagate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Mean of the finite terms, nats per step.
    pub exponent: f64,
    /// `log λ_max(J†)`, filled by [`max_k_step_exponent`].
    pub proxy: Option<f64>,
    pub terms: Vec<f64>,
    /// Final direction used.
    pub direction_used: Vec<f64>,
    pub j_dagger: Option<Matrix>,
    pub trajectory: Vec<Vec<f64>>,
    pub diverged: bool,
    /// Terms equal to `-∞` (zero stretch) left out of the mean.
    pub excluded_terms: usize,
}

/// Iterates and step Jacobians of a `k`-step trajectory.
#[derive(Clone, Debug)]
pub struct JacobianTrace {
    pub iterates: Vec<Vec<f64>>,
    pub jacobians: Vec<Matrix>,
    pub diverged: bool,
}

impl JacobianTrace {
    pub fn dim(&self) -> usize {
        self.iterates[0].len()
    }

    /// `J† = mean_j J_jᵀ J_j`.
    pub fn j_dagger(&self) -> Matrix {
        let n = self.dim();
        let mut acc = Matrix::zeros(n, n);
        for j in &self.jacobians {
            acc = acc.add(&j.gram());
        }
        if self.jacobians.is_empty() {
            acc
        } else {
            acc.scale(1.0 / self.jacobians.len() as f64)
        }
    }
}

pub fn trace(op: &dyn StepOperator, w0: &[f64], k: usize, guards: RunGuards) -> JacobianTrace {
    let traj = run(op, w0, k, guards);
    let mut diverged = traj.diverged();
    let mut jacobians = Vec::with_capacity(traj.iterates.len());
    let mut iterates = Vec::with_capacity(traj.iterates.len());
    for w in traj.iterates {
        match op.jacobian(&w) {
            Ok(j) => {
                jacobians.push(j);
                iterates.push(w);
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    if iterates.is_empty() {
        iterates.push(w0.to_vec());
    }
    JacobianTrace {
        iterates,
        jacobians,
        diverged,
    }
}

/// `γ = log(dᵀ JᵀJ d) = 2 log ‖J d‖`; `-∞` when `J d = 0`.
///
/// Divides by `‖d‖²` so that rounding in the unit direction cannot leak
/// into the term (an isometry gives exactly zero).
pub fn lyap_term(j: &Matrix, d: &[f64]) -> f64 {
    let v = j.matvec(d);
    let s: f64 = v.iter().map(|x| x * x).sum();
    if s == 0.0 {
        f64::NEG_INFINITY
    } else {
        (s / d.iter().map(|x| x * x).sum::<f64>()).ln()
    }
}

fn mean_finite(terms: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = terms.iter().copied().filter(|t| t.is_finite()).collect();
    let excluded = terms.len() - finite.len();
    if finite.is_empty() {
        return (f64::NEG_INFINITY, excluded);
    }
    (finite.iter().sum::<f64>() / finite.len() as f64, excluded)
}

fn top_eigvec_gram(j: &Matrix) -> Vec<f64> {
    let s = eig_symmetric(&j.gram()).expect("gram matrices are symmetric");
    s.eigenvectors.unwrap().swap_remove(0)
}

fn power_top_gram(j: &Matrix, iters: usize, start: &[f64]) -> Vec<f64> {
    let (_, v) = power_iteration(|x| j.transpose().matvec(&j.matvec(x)), start, iters, &[]);
    v
}

fn random_unit(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Exponent along a fixed unit direction over a precomputed trace.
pub fn exponent_along(tr: &JacobianTrace, d: &[f64]) -> (f64, Vec<f64>, usize) {
    let terms: Vec<f64> = tr.jacobians.iter().map(|j| lyap_term(j, d)).collect();
    let (e, excl) = mean_finite(&terms);
    (e, terms, excl)
}

/// Applies a direction strategy over a precomputed trace.
pub fn exponent_with_strategy(tr: &JacobianTrace, strat: DirectionStrategy) -> (f64, Vec<f64>, Vec<f64>, usize) {
    let n = tr.dim();
    let Some(j0) = tr.jacobians.first() else {
        return (f64::NEG_INFINITY, Vec::new(), start_vector(n), 0);
    };
    let mut terms = Vec::with_capacity(tr.jacobians.len());
    let mut d = match strat {
        DirectionStrategy::RandomFixed { seed } => random_unit(seed, n),
        DirectionStrategy::EighFirst | DirectionStrategy::EighEvery | DirectionStrategy::Propagate => {
            top_eigvec_gram(j0)
        }
        DirectionStrategy::PowerIterFirst { iters } | DirectionStrategy::PowerIterEvery { iters } => {
            power_top_gram(j0, iters, &start_vector(n))
        }
    };
    for (idx, j) in tr.jacobians.iter().enumerate() {
        if idx > 0 {
            match strat {
                DirectionStrategy::EighEvery => d = top_eigvec_gram(j),
                DirectionStrategy::PowerIterEvery { iters } => d = power_top_gram(j, iters, &d),
                _ => {}
            }
        }
        terms.push(lyap_term(j, &d));
        if strat == DirectionStrategy::Propagate {
            if let Some(next) = normalized(&j.matvec(&d)) {
                d = next;
            }
        }
    }
    let (e, excl) = mean_finite(&terms);
    (e, terms, d, excl)
}

/// `k`-step exponent with the direction chosen by `strat`.
pub fn k_step_exponent(
    op: &dyn StepOperator,
    w0: &[f64],
    k: usize,
    strat: DirectionStrategy,
) -> LyapunovReport {
    let tr = trace(op, w0, k, RunGuards::default());
    let (exponent, terms, d, excluded) = exponent_with_strategy(&tr, strat);
    LyapunovReport {
        exponent,
        proxy: None,
        terms,
        direction_used: d,
        j_dagger: None,
        trajectory: tr.iterates,
        diverged: tr.diverged,
        excluded_terms: excluded,
    }
}

/// Top `n` eigenpairs of `J†` for a trace.
pub fn top_directions(tr: &JacobianTrace, n: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if n > tr.dim() {
        return Err(Error::InvalidInput(format!(
            "{n} directions requested in dimension {}",
            tr.dim()
        )));
    }
    let s = eig_symmetric(&tr.j_dagger())?;
    let vecs = s.eigenvectors.unwrap();
    Ok(s.eigenvalues.iter().zip(vecs).take(n).map(|(z, v)| (z.re, v)).collect())
}

/// Max exponent over a trace: proxy `log λ_max(J†)` and the exponent along
/// the top eigenvector of `J†`.
pub fn max_exponent_of_trace(tr: &JacobianTrace) -> LyapunovReport {
    let jd = tr.j_dagger();
    let n = tr.dim();
    let (proxy, d) = if tr.jacobians.is_empty() {
        (f64::NEG_INFINITY, start_vector(n))
    } else {
        let s = eig_symmetric(&jd).expect("J† is symmetric");
        let top = s.eigenvalues[0].re;
        (top.ln(), s.eigenvectors.unwrap().swap_remove(0))
    };
    let (exponent, terms, excluded) = exponent_along(tr, &d);
    LyapunovReport {
        exponent,
        proxy: Some(proxy),
        terms,
        direction_used: d,
        j_dagger: Some(jd),
        trajectory: tr.iterates.clone(),
        diverged: tr.diverged,
        excluded_terms: excluded,
    }
}

/// The max `k`-step exponent. `exponent` is measured along the top
/// eigenvector of `J†`; `proxy` holds `log λ_max(J†)`.
pub fn max_k_step_exponent(op: &dyn StepOperator, w0: &[f64], k: usize) -> LyapunovReport {
    max_exponent_of_trace(&trace(op, w0, k, RunGuards::default()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiMode {
    Sum,
    Min,
}

/// Exponents along the top-`n` orthonormal eigenvectors of `J†`, combined by
/// sum or min. Returns the value, the per-direction exponents and the
/// directions.
pub fn multi_direction_of_trace(
    tr: &JacobianTrace,
    n: usize,
    mode: MultiMode,
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let dirs: Vec<Vec<f64>> = top_directions(tr, n)?.into_iter().map(|(_, v)| v).collect();
    let exps: Vec<f64> = dirs.iter().map(|d| exponent_along(tr, d).0).collect();
    let value = match mode {
        MultiMode::Sum => exps.iter().sum(),
        MultiMode::Min => exps.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok((value, exps, dirs))
}

pub fn multi_direction_objective(
    op: &dyn StepOperator,
    w0: &[f64],
    k: usize,
    n: usize,
    mode: MultiMode,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let tr = trace(op, w0, k, RunGuards::default());
    let (v, _, dirs) = multi_direction_of_trace(&tr, n, mode)?;
    Ok((v, dirs))
}

/// Exponent objective maximized when tuning a starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Max,
    Sum { n: usize },
    Min { n: usize },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::Max
    }
}

/// Objective value at `w0`; non-finite when the evaluation fails.
pub fn objective_value(op: &dyn StepOperator, w0: &[f64], k: usize, objective: Objective) -> f64 {
    let tr = trace(op, w0, k, RunGuards::default());
    if tr.diverged {
        return f64::NAN;
    }
    match objective {
        Objective::Max => max_exponent_of_trace(&tr).exponent,
        Objective::Sum { n } => multi_direction_of_trace(&tr, n, MultiMode::Sum)
            .map(|r| r.0)
            .unwrap_or(f64::NAN),
        Objective::Min { n } => multi_direction_of_trace(&tr, n, MultiMode::Min)
            .map(|r| r.0)
            .unwrap_or(f64::NAN),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSettings {
    pub k: usize,
    pub objective: Objective,
    pub steps: usize,
    pub lr: f64,
    /// Central-difference step for the objective gradient.
    pub fd_step: f64,
    /// Optional cap on the Euclidean length of one ascent step.
    pub max_step: Option<f64>,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            k: 0,
            objective: Objective::Max,
            steps: 100,
            lr: 0.1,
            fd_step: 1e-4,
            max_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub w_star: Vec<f64>,
    /// Objective at the start and after every ascent step.
    pub history: Vec<f64>,
}

/// Gradient ascent on an exponent objective, with finite-difference
/// gradients. Probes whose evaluation fails contribute the centre value, so
/// they add no slope.
pub fn tune_starting_point(op: &dyn StepOperator, w_init: &[f64], settings: &TuneSettings) -> TuneResult {
    let obj = |w: &[f64]| objective_value(op, w, settings.k, settings.objective);
    let mut w = w_init.to_vec();
    let mut current = obj(&w);
    let mut history = vec![current];
    for _ in 0..settings.steps {
        if settings.lr == 0.0 {
            history.push(current);
            continue;
        }
        let center = current;
        let h = settings.fd_step;
        let probes: Vec<(f64, f64)> = (0..w.len())
            .into_par_iter()
            .map(|i| {
                let mut p = w.clone();
                p[i] = w[i] + h;
                let fp = obj(&p);
                p[i] = w[i] - h;
                let fm = obj(&p);
                let guard = |v: f64| if v.is_finite() { v } else { center };
                (guard(fp), guard(fm))
            })
            .collect();
        let mut g: Vec<f64> = probes.iter().map(|(fp, fm)| (fp - fm) / (2.0 * h)).collect();
        if g.iter().any(|x| !x.is_finite()) {
            g = vec![0.0; w.len()];
        }
        let mut step: Vec<f64> = g.iter().map(|x| settings.lr * x).collect();
        if let Some(cap) = settings.max_step {
            let len = norm(&step);
            if len > cap {
                step.iter_mut().for_each(|x| *x *= cap / len);
            }
        }
        for (wi, si) in w.iter_mut().zip(&step) {
            *wi += si;
        }
        current = obj(&w);
        history.push(current);
    }
    TuneResult { w_star: w, history }
}

/// Plain finite-difference gradient of the objective (exposed for tests and
/// diagnostics).
pub fn objective_gradient(op: &dyn StepOperator, w: &[f64], k: usize, objective: Objective, h: f64) -> Vec<f64> {
    fd_gradient(|x| objective_value(op, x, k, objective), w, h)
}

/// Axis-aligned box in a 2-parameter space sampled on a regular grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: [usize; 2],
}

impl Grid2D {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    /// Nodes in row-major order: the first coordinate varies slowest.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let xs = Self::axis(self.lo[0], self.hi[0], self.resolution[0]);
        let ys = Self::axis(self.lo[1], self.hi[1], self.resolution[1]);
        xs.iter()
            .flat_map(|&x| ys.iter().map(move |&y| [x, y]))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// Max exponent via `J†`.
    #[default]
    Max,
    Strategy(DirectionStrategy),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub point: [f64; 2],
    pub exponent: f64,
    pub diverged: bool,
}

/// Exponent at every node of a grid over a 2-parameter space. Cells are
/// computed in parallel and returned in node order.
pub fn exponent_heatmap(op: &dyn StepOperator, grid: &Grid2D, k: usize, mode: HeatmapMode) -> Result<Vec<HeatmapCell>> {
    let nodes = grid.nodes();
    if let Some(w) = nodes.first() {
        let probe = op.step(w);
        if probe.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "heatmaps need a 2-parameter operator, got dimension {}",
                probe.len()
            )));
        }
    }
    Ok(nodes
        .par_iter()
        .map(|p| {
            let report = match mode {
                HeatmapMode::Max => max_k_step_exponent(op, p, k),
                HeatmapMode::Strategy(s) => k_step_exponent(op, p, k, s),
            };
            HeatmapCell {
                point: *p,
                exponent: report.exponent,
                diverged: report.diverged,
            }
        })
        .collect())
}
