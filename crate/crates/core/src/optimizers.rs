//! Optimizers as fixed-point operators `F: ℝⁿ → ℝⁿ` with Jacobians.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{fd_jacobian, game_hessian, joint_gradient, loss_gradients, mixed_blocks};
use crate::error::Result;
use crate::games::Game;
use crate::matrix::{norm, Matrix};

/// One optimizer update viewed as a map on the joint parameters.
pub trait StepOperator: Send + Sync {
    fn name(&self) -> &str;

    fn alpha(&self) -> f64;

    /// Next iterate. Non-finite entries signal an undefined update and are
    /// caught by [`run`]'s guard.
    fn step(&self, w: &[f64]) -> Vec<f64>;

    /// Jacobian `J = ∇_ω F(ω)`.
    fn jacobian(&self, w: &[f64]) -> Result<Matrix>;
}

impl<T: StepOperator + ?Sized> StepOperator for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn alpha(&self) -> f64 {
        (**self).alpha()
    }

    fn step(&self, w: &[f64]) -> Vec<f64> {
        (**self).step(w)
    }

    fn jacobian(&self, w: &[f64]) -> Result<Matrix> {
        (**self).jacobian(w)
    }
}

impl<T: StepOperator + ?Sized> StepOperator for &T {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn alpha(&self) -> f64 {
        (**self).alpha()
    }

    fn step(&self, w: &[f64]) -> Vec<f64> {
        (**self).step(w)
    }

    fn jacobian(&self, w: &[f64]) -> Result<Matrix> {
        (**self).jacobian(w)
    }
}

fn descend(w: &[f64], alpha: f64, direction: &[f64]) -> Vec<f64> {
    w.iter().zip(direction).map(|(x, g)| x - alpha * g).collect()
}

fn nan_like(w: &[f64]) -> Vec<f64> {
    vec![f64::NAN; w.len()]
}

/// Simultaneous gradient descent `F(ω) = ω - α ĝ(ω)`.
#[derive(Clone, Debug)]
pub struct SimSgd {
    pub game: Game,
    pub alpha: f64,
}

pub fn sim_sgd(game: &Game, alpha: f64) -> SimSgd {
    assert!(alpha > 0.0, "step size must be positive");
    SimSgd {
        game: game.clone(),
        alpha,
    }
}

impl StepOperator for SimSgd {
    fn name(&self) -> &str {
        "simsgd"
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn step(&self, w: &[f64]) -> Vec<f64> {
        match joint_gradient(&self.game, w) {
            Ok(g) => descend(w, self.alpha, &g),
            Err(_) => nan_like(w),
        }
    }

    fn jacobian(&self, w: &[f64]) -> Result<Matrix> {
        let h = game_hessian(&self.game, w)?;
        Ok(Matrix::identity(w.len()).sub(&h.scale(self.alpha)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LolaVariant {
    /// Opponent-shaping term only.
    #[default]
    Shaping,
    /// Shaping term plus the first-order lookahead term on the own loss.
    FullTaylor,
}

/// Learning with opponent-learning awareness, first-order form.
///
/// `g̃_A = ∇_A L_A - η (∇_A∇_B L_B)(∇_B L_A)` and symmetrically for B.
#[derive(Clone, Debug)]
pub struct Lola {
    pub game: Game,
    pub alpha: f64,
    pub eta: f64,
    pub variant: LolaVariant,
    /// Finite-difference step for the Jacobian.
    pub fd_step: f64,
}

pub fn lola(game: &Game, alpha: f64, eta: f64) -> Lola {
    assert!(alpha > 0.0, "step size must be positive");
    assert!(eta >= 0.0, "lookahead must be non-negative");
    Lola {
        game: game.clone(),
        alpha,
        eta,
        variant: LolaVariant::Shaping,
        fd_step: 1e-6,
    }
}

impl Lola {
    pub fn with_variant(mut self, variant: LolaVariant) -> Self {
        self.variant = variant;
        self
    }

    /// The shaped update direction `g̃(ω)`.
    pub fn direction(&self, w: &[f64]) -> Result<Vec<f64>> {
        let da = self.game.dim_a();
        let [ga, gb] = loss_gradients(&self.game, w)?;
        let mut g: Vec<f64> = ga[..da].iter().chain(&gb[da..]).copied().collect();
        if self.eta == 0.0 {
            return Ok(g);
        }
        let n = w.len();
        let db = n - da;
        let [of_a, of_b] = mixed_blocks(&self.game, w)?;
        let mut corr = vec![0.0; n];
        for i in 0..da {
            // (∇_A∇_B L_B)(∇_B L_A): of_b is (∂²L_B/∂θ_B∂θ_A), so transpose.
            corr[i] = (0..db).map(|j| of_b[(j, i)] * ga[da + j]).sum();
        }
        for j in 0..db {
            corr[da + j] = (0..da).map(|i| of_a[(i, j)] * gb[i]).sum();
        }
        if self.variant == LolaVariant::FullTaylor {
            for i in 0..da {
                corr[i] += (0..db).map(|j| of_a[(i, j)] * gb[da + j]).sum::<f64>();
            }
            for j in 0..db {
                corr[da + j] += (0..da).map(|i| of_b[(j, i)] * ga[i]).sum::<f64>();
            }
        }
        for (gi, ci) in g.iter_mut().zip(&corr) {
            *gi -= self.eta * ci;
        }
        Ok(g)
    }
}

impl StepOperator for Lola {
    fn name(&self) -> &str {
        "lola"
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn step(&self, w: &[f64]) -> Vec<f64> {
        match self.direction(w) {
            Ok(g) => descend(w, self.alpha, &g),
            Err(_) => nan_like(w),
        }
    }

    fn jacobian(&self, w: &[f64]) -> Result<Matrix> {
        let j = fd_jacobian(|x| self.step(x), w, self.fd_step);
        if j.is_finite() {
            Ok(j)
        } else {
            Err(crate::Error::NonFinite("lola jacobian"))
        }
    }
}

type StepFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> Matrix + Send + Sync;

/// An operator given directly by a map and its Jacobian.
#[derive(Clone)]
pub struct MapOperator {
    name: String,
    alpha: f64,
    step: Arc<StepFn>,
    jac: Arc<JacFn>,
}

impl MapOperator {
    pub fn new(
        name: impl Into<String>,
        alpha: f64,
        step: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            alpha,
            step: Arc::new(step),
            jac: Arc::new(jac),
        }
    }

    /// The linear map `F(ω) = Aω`.
    pub fn linear(a: Matrix) -> Self {
        let a2 = a.clone();
        Self::new("linear", 1.0, move |w| a.matvec(w), move |_| a2.clone())
    }
}

impl fmt::Debug for MapOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapOperator").field("name", &self.name).finish()
    }
}

impl StepOperator for MapOperator {
    fn name(&self) -> &str {
        &self.name
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn step(&self, w: &[f64]) -> Vec<f64> {
        (self.step)(w)
    }

    fn jacobian(&self, w: &[f64]) -> Result<Matrix> {
        let j = (self.jac)(w);
        if j.is_finite() {
            Ok(j)
        } else {
            Err(crate::Error::NonFinite("map jacobian"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunGuards {
    /// Stop once `‖ω‖` exceeds this bound.
    pub divergence_bound: f64,
}

impl Default for RunGuards {
    fn default() -> Self {
        Self {
            divergence_bound: 1e6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Diverged,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `ω_0, …, ω_m` with `m ≤ k`; the offending iterate is not stored.
    pub iterates: Vec<Vec<f64>>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("trajectory holds the start point")
    }

    pub fn diverged(&self) -> bool {
        self.stop != StopReason::Completed
    }
}

/// Iterates `op` for `k` steps from `w0`.
pub fn run(op: &dyn StepOperator, w0: &[f64], k: usize, guards: RunGuards) -> Trajectory {
    let mut iterates = Vec::with_capacity(k + 1);
    iterates.push(w0.to_vec());
    for _ in 0..k {
        let next = op.step(iterates.last().unwrap());
        if next.iter().any(|x| !x.is_finite()) {
            return Trajectory {
                iterates,
                stop: StopReason::NonFinite,
            };
        }
        if norm(&next) > guards.divergence_bound {
            return Trajectory {
                iterates,
                stop: StopReason::Diverged,
            };
        }
        iterates.push(next);
    }
    Trajectory {
        iterates,
        stop: StopReason::Completed,
    }
}

/// Runs `k` steps keeping only the final iterate.
pub fn run_final(op: &dyn StepOperator, w0: &[f64], k: usize, guards: RunGuards) -> (Vec<f64>, StopReason) {
    let mut w = w0.to_vec();
    for _ in 0..k {
        let next = op.step(&w);
        if next.iter().any(|x| !x.is_finite()) {
            return (w, StopReason::NonFinite);
        }
        if norm(&next) > guards.divergence_bound {
            return (w, StopReason::Diverged);
        }
        w = next;
    }
    (w, StopReason::Completed)
}
