//! Branching optimization tree search (Generalized Ridge Rider).
//!
//! The search tunes a starting point for trajectory separation, splits it
//! along the top directions of `J†`, optimizes every branch with the step
//! operator and re-splits optimized points that are still unstable.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::joint_gradient;
use crate::error::{Error, Result};
use crate::games::Game;
use crate::lyapunov::{exponent_along, top_directions, trace, tune_starting_point, TuneResult, TuneSettings};
use crate::matrix::{distance, dot, norm};
use crate::optimizers::{run, RunGuards, StepOperator, StopReason};
use crate::spectral::eig_general;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// One jump of length `s·max(λ̂, λ_floor)` along the direction.
    #[default]
    ScaledJump,
    /// Small steps along the direction until `dᵀĝ` changes sign.
    WalkUntilFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Optimized,
    Solution,
    Diverged,
    CycleSuspected,
}

/// Search configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrrConfig {
    /// Starting-point tuning; `tune.steps = 0` skips it.
    pub tune: TuneSettings,
    /// Initialization; sampled from the game's initializer with `seed` when absent.
    pub init: Option<Vec<f64>>,
    pub seed: u64,
    pub branch_mode: BranchMode,
    /// Directions considered per split.
    pub n_directions: usize,
    pub max_depth: usize,
    /// Optimizer steps per branch.
    pub opt_steps: usize,
    pub tol_grad: f64,
    pub tol_stab: f64,
    /// A direction qualifies when its stretch factor exceeds `1 + branch_tol`.
    pub branch_tol: f64,
    /// When false every top direction is branched on, stretching or not.
    pub filter_directions: bool,
    pub jump_scale: f64,
    pub lambda_floor: f64,
    pub walk_step: f64,
    pub walk_max_steps: usize,
    /// Minimum strategy-space distance between recorded solutions.
    pub dedup_radius: f64,
    /// Trailing window inspected for cycling.
    pub cycle_window: usize,
    pub divergence_bound: f64,
}

impl Default for GrrConfig {
    fn default() -> Self {
        Self {
            tune: TuneSettings::default(),
            init: None,
            seed: 0,
            branch_mode: BranchMode::ScaledJump,
            n_directions: 2,
            max_depth: 3,
            opt_steps: 2000,
            tol_grad: 1e-3,
            tol_stab: 1e-3,
            branch_tol: 1e-3,
            filter_directions: true,
            jump_scale: 1.0,
            lambda_floor: 0.1,
            walk_step: 0.01,
            walk_max_steps: 1000,
            dedup_radius: 0.05,
            cycle_window: 100,
            divergence_bound: 1e6,
        }
    }
}

impl GrrConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_grad", self.tol_grad),
            ("tol_stab", self.tol_stab),
            ("lambda_floor", self.lambda_floor),
            ("walk_step", self.walk_step),
            ("divergence_bound", self.divergence_bound),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.branch_tol.is_finite() && self.branch_tol >= 0.0) {
            return Err(Error::InvalidInput("branch_tol must be non-negative".into()));
        }
        if !(self.jump_scale.is_finite() && self.jump_scale >= 0.0) {
            return Err(Error::InvalidInput("jump_scale must be non-negative".into()));
        }
        if !(self.dedup_radius.is_finite() && self.dedup_radius >= 0.0) {
            return Err(Error::InvalidInput("dedup_radius must be non-negative".into()));
        }
        if self.n_directions == 0 {
            return Err(Error::InvalidInput("n_directions must be at least 1".into()));
        }
        Ok(())
    }

    fn guards(&self) -> RunGuards {
        RunGuards { divergence_bound: self.divergence_bound }
    }

    /// Upper bound on the node count: `1 + Σ_{d=1..max_depth} (2n)^d`.
    pub fn node_bound(&self) -> usize {
        let fan = 2 * self.n_directions;
        let mut total = 1usize;
        let mut level = 1usize;
        for _ in 0..self.max_depth {
            level = level.saturating_mul(fan);
            total = total.saturating_add(level);
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Unit direction that created the branch; `None` at the root.
    pub direction: Option<Vec<f64>>,
    pub sign: i8,
    /// Exponent along `direction` at the parent point.
    pub exponent: Option<f64>,
    /// Point after the branch step.
    pub start: Vec<f64>,
    /// Point after optimization (the start itself at the root).
    pub params: Vec<f64>,
    pub status: NodeStatus,
    pub losses: Option<[f64; 2]>,
    pub grad_norm: Option<f64>,
    pub spectral_radius: Option<f64>,
    /// `Some(false)` when a walk hit its step limit without crossing.
    pub crossed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchTree {
    pub init: Vec<f64>,
    pub tune_history: Vec<f64>,
    pub nodes: Vec<BranchNode>,
}

impl BranchTree {
    /// Node ids from the root to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out.reverse();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub node: usize,
    pub params: Vec<f64>,
    pub strategies: Vec<f64>,
    pub losses: [f64; 2],
    pub grad_norm: f64,
    /// Eigenvalues of `J` as `[re, im]` pairs.
    pub spectrum: Vec<[f64; 2]>,
    pub path: Vec<usize>,
}

/// A child produced by a split, before its branch step.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchSpec {
    pub direction: Vec<f64>,
    pub sign: i8,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchStep {
    pub params: Vec<f64>,
    /// Walks only: whether the alignment sign flipped before the limit.
    pub crossed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_solution: bool,
    pub grad_norm: f64,
    pub spectral_radius: f64,
    pub spectrum: Vec<[f64; 2]>,
}

/// Tuned starting point and the objective history.
pub fn find_starting_point(game: &Game, op: &dyn StepOperator, cfg: &GrrConfig) -> Result<TuneResult> {
    let init = match &cfg.init {
        Some(w) => game.joint_params(w.clone())?.into_values(),
        None => game.sample_init(&mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    Ok(tune_starting_point(op, &init, &cfg.tune))
}

/// Signed children at `w`: top directions of `J†` over `cfg.tune.k` steps
/// whose exponent shows stretching beyond `1 + branch_tol`.
pub fn split_branch(op: &dyn StepOperator, w: &[f64], cfg: &GrrConfig) -> Result<Vec<BranchSpec>> {
    let tr = trace(op, w, cfg.tune.k, cfg.guards());
    if tr.diverged || tr.jacobians.is_empty() {
        return Ok(Vec::new());
    }
    let n = cfg.n_directions.min(tr.dim());
    let threshold = 2.0 * (1.0 + cfg.branch_tol).ln();
    let mut out = Vec::new();
    for (_, d) in top_directions(&tr, n)? {
        let (exponent, _, _) = exponent_along(&tr, &d);
        if exponent.is_finite() && (!cfg.filter_directions || exponent > threshold) {
            for sign in [1i8, -1] {
                out.push(BranchSpec { direction: d.clone(), sign, exponent });
            }
        }
    }
    Ok(out)
}

/// Moves from `w` along a signed branch direction.
pub fn apply_branch_step(game: &Game, w: &[f64], spec: &BranchSpec, mode: BranchMode, cfg: &GrrConfig) -> Result<BranchStep> {
    let s = f64::from(spec.sign);
    let d = &spec.direction;
    match mode {
        BranchMode::ScaledJump => {
            let len = cfg.jump_scale * spec.exponent.max(cfg.lambda_floor);
            let params = w.iter().zip(d).map(|(wi, di)| wi + s * len * di).collect();
            Ok(BranchStep { params, crossed: None })
        }
        BranchMode::WalkUntilFlip => {
            let mut cur = w.to_vec();
            let mut initial = align_sign(game, &cur, d)?;
            for _ in 0..cfg.walk_max_steps {
                for (ci, di) in cur.iter_mut().zip(d) {
                    *ci += s * cfg.walk_step * di;
                }
                let sg = align_sign(game, &cur, d)?;
                if initial == 0.0 {
                    initial = sg;
                } else if sg != 0.0 && sg != initial {
                    return Ok(BranchStep { params: cur, crossed: Some(true) });
                }
            }
            Ok(BranchStep { params: cur, crossed: Some(false) })
        }
    }
}

fn align_sign(game: &Game, w: &[f64], d: &[f64]) -> Result<f64> {
    let a = dot(d, &joint_gradient(game, w)?);
    if !a.is_finite() {
        return Err(Error::NonFinite("gradient alignment"));
    }
    Ok(if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    })
}

/// Solution iff `‖ĝ‖ ≤ tol_grad` and every `|λ(J)| ≤ 1 + tol_stab`.
pub fn verify_solution(game: &Game, op: &dyn StepOperator, w: &[f64], tol_grad: f64, tol_stab: f64) -> Verdict {
    let grad_norm = joint_gradient(game, w).map(|g| norm(&g)).unwrap_or(f64::NAN);
    let spectrum: Vec<[f64; 2]> = op
        .jacobian(w)
        .and_then(|j| eig_general(&j))
        .map(|s| s.eigenvalues.iter().map(|z| [z.re, z.im]).collect())
        .unwrap_or_default();
    let spectral_radius = if spectrum.is_empty() {
        f64::NAN
    } else {
        spectrum.iter().map(|z| z[0].hypot(z[1])).fold(0.0, f64::max)
    };
    let is_solution = grad_norm <= tol_grad && spectral_radius <= 1.0 + tol_stab;
    Verdict { is_solution, grad_norm, spectral_radius, spectrum }
}

/// Bounded oscillation in the trailing window with no decrease of `‖ĝ‖`.
pub fn cycle_suspected(game: &Game, iterates: &[Vec<f64>], window: usize) -> bool {
    if window < 2 || iterates.len() < window + 1 {
        return false;
    }
    let tail = &iterates[iterates.len() - window - 1..];
    let first = &tail[0];
    let last = &tail[tail.len() - 1];
    let path: f64 = tail.windows(2).map(|p| distance(&p[0], &p[1])).sum();
    if path <= 0.0 {
        return false;
    }
    let oscillating = distance(first, last) < 0.5 * path;
    let g0 = joint_gradient(game, first).map(|g| norm(&g));
    let g1 = joint_gradient(game, last).map(|g| norm(&g));
    match (g0, g1) {
        (Ok(a), Ok(b)) => oscillating && b >= a,
        _ => false,
    }
}

struct Outcome {
    params: Vec<f64>,
    status: NodeStatus,
    losses: [f64; 2],
    verdict: Verdict,
}

fn optimize_branch(game: &Game, op: &dyn StepOperator, start: &[f64], cfg: &GrrConfig) -> Outcome {
    let traj = run(op, start, cfg.opt_steps, cfg.guards());
    let params = traj.last().to_vec();
    let losses = game.losses(&params);
    let verdict = verify_solution(game, op, &params, cfg.tol_grad, cfg.tol_stab);
    let status = if traj.stop != StopReason::Completed {
        NodeStatus::Diverged
    } else if verdict.is_solution {
        NodeStatus::Solution
    } else if cycle_suspected(game, &traj.iterates, cfg.cycle_window) {
        NodeStatus::CycleSuspected
    } else {
        NodeStatus::Optimized
    };
    Outcome { params, status, losses, verdict }
}

/// Runs the full search. Branches of one depth are optimized in parallel and
/// appended to the tree in FIFO order, so the result is independent of the
/// thread count.
pub fn run_tree_search(game: &Game, op: &dyn StepOperator, cfg: &GrrConfig) -> Result<(Vec<SolutionRecord>, BranchTree)> {
    run_tree_search_with(game, op, op, cfg)
}

/// Like [`run_tree_search`], with the starting point tuned on the exponents of
/// `tune_op` while splitting and branch optimization use `op`.
pub fn run_tree_search_with(
    game: &Game,
    tune_op: &dyn StepOperator,
    op: &dyn StepOperator,
    cfg: &GrrConfig,
) -> Result<(Vec<SolutionRecord>, BranchTree)> {
    cfg.validate()?;
    let tuned = find_starting_point(game, tune_op, cfg)?;
    let init = match &cfg.init {
        Some(w) => w.clone(),
        None => game.sample_init(&mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let root_w = tuned.w_star.clone();
    let root_verdict = verify_solution(game, op, &root_w, cfg.tol_grad, cfg.tol_stab);
    let mut tree = BranchTree {
        init,
        tune_history: tuned.history,
        nodes: vec![BranchNode {
            id: 0,
            parent: None,
            depth: 0,
            direction: None,
            sign: 1,
            exponent: None,
            start: root_w.clone(),
            params: root_w.clone(),
            status: NodeStatus::Optimized,
            losses: Some(game.losses(&root_w)),
            grad_norm: Some(root_verdict.grad_norm),
            spectral_radius: Some(root_verdict.spectral_radius),
            crossed: None,
        }],
    };
    let mut solutions: Vec<SolutionRecord> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    enqueue_children(game, op, cfg, &mut tree, 0, &mut queue)?;
    if queue.is_empty() {
        // No direction qualifies at the start: the root is the only branch.
        tree.nodes[0].status = NodeStatus::Pending;
        queue.push_back(0);
    }

    while !queue.is_empty() {
        // The whole current frontier shares a depth; optimize it together.
        let batch: Vec<usize> = queue.drain(..).collect();
        let outcomes: Vec<Outcome> = batch
            .par_iter()
            .map(|&id| optimize_branch(game, op, &tree.nodes[id].start, cfg))
            .collect();
        for (&id, out) in batch.iter().zip(outcomes) {
            let node = &mut tree.nodes[id];
            node.params = out.params;
            node.status = out.status;
            node.losses = Some(out.losses);
            node.grad_norm = Some(out.verdict.grad_norm);
            node.spectral_radius = Some(out.verdict.spectral_radius);
            if out.status == NodeStatus::Solution {
                let strategies = game.strategies(&tree.nodes[id].params);
                let duplicate = solutions
                    .iter()
                    .any(|s| distance(&s.strategies, &strategies) < cfg.dedup_radius);
                if !duplicate {
                    solutions.push(SolutionRecord {
                        node: id,
                        params: tree.nodes[id].params.clone(),
                        strategies,
                        losses: out.losses,
                        grad_norm: out.verdict.grad_norm,
                        spectrum: out.verdict.spectrum.clone(),
                        path: tree.path(id),
                    });
                }
            }
        }
        for &id in &batch {
            let node = &tree.nodes[id];
            let unstable = node.spectral_radius.is_some_and(|r| r > 1.0 + cfg.branch_tol);
            if node.status != NodeStatus::Diverged && node.depth < cfg.max_depth && unstable {
                enqueue_children(game, op, cfg, &mut tree, id, &mut queue)?;
            }
        }
    }
    assert!(tree.nodes.len() <= cfg.node_bound(), "node count exceeds the depth bound");
    Ok((solutions, tree))
}

fn enqueue_children(
    game: &Game,
    op: &dyn StepOperator,
    cfg: &GrrConfig,
    tree: &mut BranchTree,
    parent: usize,
    queue: &mut VecDeque<usize>,
) -> Result<()> {
    let w = tree.nodes[parent].params.clone();
    let depth = tree.nodes[parent].depth + 1;
    if depth > cfg.max_depth {
        return Ok(());
    }
    for spec in split_branch(op, &w, cfg)? {
        let step = apply_branch_step(game, &w, &spec, cfg.branch_mode, cfg)?;
        let id = tree.nodes.len();
        tree.nodes.push(BranchNode {
            id,
            parent: Some(parent),
            depth,
            direction: Some(spec.direction),
            sign: spec.sign,
            exponent: Some(spec.exponent),
            start: step.params.clone(),
            params: step.params,
            status: NodeStatus::Pending,
            losses: None,
            grad_norm: None,
            spectral_radius: None,
            crossed: step.crossed,
        });
        queue.push_back(id);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub index: usize,
    pub score: f64,
    pub grad_norm: f64,
}

/// Orders candidates by the sum of positive exponents along the top `n`
/// directions of `J†` (descending), then by gradient norm (ascending), then
/// by input position.
pub fn rank_starting_points(
    game: &Game,
    op: &dyn StepOperator,
    candidates: &[Vec<f64>],
    k: usize,
    n: usize,
) -> Result<Vec<RankedCandidate>> {
    let mut ranked = candidates
        .par_iter()
        .enumerate()
        .map(|(index, w)| {
            let tr = trace(op, w, k, RunGuards::default());
            let n = n.min(tr.dim());
            let score = if tr.diverged {
                f64::NEG_INFINITY
            } else {
                top_directions(&tr, n)?
                    .iter()
                    .map(|(_, d)| exponent_along(&tr, d).0)
                    .filter(|e| e.is_finite() && *e > 0.0)
                    .sum()
            };
            let grad_norm = norm(&joint_gradient(game, w)?);
            Ok(RankedCandidate { index, score, grad_norm })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.grad_norm.total_cmp(&b.grad_norm))
            .then(a.index.cmp(&b.index))
    });
    Ok(ranked)
}
