//! Two-player differentiable games and the analytic test problems.
//!
//! A game is a pair of losses over the concatenated parameter vector
//! `ω = [θ_A, θ_B]`. Losses are written once, generically over
//! [`GameScalar`], and evaluated on plain floats, duals, or nested duals.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{logit, lu_solve, Dual, HyperDual, Scalar};
use crate::error::{Error, Result};
use crate::optimizers::MapOperator;

/// The scalar types a game can be evaluated on.
pub trait GameScalar: Scalar {
    fn eval_model(model: &dyn GameModel, w: &[Self]) -> [Self; 2];
}

impl GameScalar for f64 {
    fn eval_model(model: &dyn GameModel, w: &[Self]) -> [Self; 2] {
        model.eval_f64(w)
    }
}

impl GameScalar for Dual<f64> {
    fn eval_model(model: &dyn GameModel, w: &[Self]) -> [Self; 2] {
        model.eval_dual(w)
    }
}

impl GameScalar for HyperDual {
    fn eval_model(model: &dyn GameModel, w: &[Self]) -> [Self; 2] {
        model.eval_hyper(w)
    }
}

/// Loss pair written generically over the evaluation scalar. Implement this
/// for new games; [`GameModel`] follows from the blanket impl.
pub trait LossPair: Send + Sync + Debug {
    /// Parameter counts `(dim_a, dim_b)`.
    fn dims(&self) -> (usize, usize);
    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2];
}

/// Object-safe view of a [`LossPair`].
pub trait GameModel: Send + Sync + Debug {
    fn dims(&self) -> (usize, usize);
    fn eval_f64(&self, w: &[f64]) -> [f64; 2];
    fn eval_dual(&self, w: &[Dual<f64>]) -> [Dual<f64>; 2];
    fn eval_hyper(&self, w: &[HyperDual]) -> [HyperDual; 2];
}

impl<T: LossPair> GameModel for T {
    fn dims(&self) -> (usize, usize) {
        LossPair::dims(self)
    }

    fn eval_f64(&self, w: &[f64]) -> [f64; 2] {
        self.losses(w)
    }

    fn eval_dual(&self, w: &[Dual<f64>]) -> [Dual<f64>; 2] {
        self.losses(w)
    }

    fn eval_hyper(&self, w: &[HyperDual]) -> [HyperDual; 2] {
        self.losses(w)
    }
}

/// How raw parameter values map to player strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParamSpace {
    /// Unconstrained logits passed through the logistic function.
    #[default]
    Logit,
    /// Values are used as-is (probabilities or coordinates).
    Raw,
}

impl ParamSpace {
    pub fn to_strategy<S: Scalar>(self, x: S) -> S {
        match self {
            ParamSpace::Logit => x.logistic(),
            ParamSpace::Raw => x,
        }
    }

    /// Inverse of [`ParamSpace::to_strategy`].
    pub fn from_strategy(self, p: f64) -> f64 {
        match self {
            ParamSpace::Logit => logit(p),
            ParamSpace::Raw => p,
        }
    }
}

/// Distribution used to draw random initial parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Initializer {
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        match *self {
            Initializer::Normal { mean, std } => {
                let d = Normal::new(mean, std).expect("valid normal");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Initializer::Uniform { lo, hi } => (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        }
    }
}

/// A concrete two-player game.
#[derive(Clone, Debug)]
pub struct Game {
    name: String,
    model: Arc<dyn GameModel>,
    space: ParamSpace,
    init: Initializer,
}

impl Game {
    pub fn new<M: LossPair + 'static>(
        name: impl Into<String>,
        model: M,
        space: ParamSpace,
        init: Initializer,
    ) -> Self {
        let (a, b) = LossPair::dims(&model);
        assert!(a >= 1 && b >= 1, "both players need parameters");
        Self {
            name: name.into(),
            model: Arc::new(model),
            space,
            init,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_space(&self) -> ParamSpace {
        self.space
    }

    pub fn initializer(&self) -> Initializer {
        self.init
    }

    pub fn dim_a(&self) -> usize {
        self.model.dims().0
    }

    pub fn dim_b(&self) -> usize {
        self.model.dims().1
    }

    pub fn dim(&self) -> usize {
        self.dim_a() + self.dim_b()
    }

    pub fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        debug_assert_eq!(w.len(), self.dim());
        S::eval_model(&*self.model, w)
    }

    /// Player strategies for reporting (probabilities for logit games).
    pub fn strategies(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| self.space.to_strategy(x)).collect()
    }

    pub fn sample_init(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.init.sample(rng, self.dim())
    }

    pub fn joint_params(&self, values: Vec<f64>) -> Result<JointParams> {
        if values.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "game {} expects {} parameters, got {}",
                self.name,
                self.dim(),
                values.len()
            )));
        }
        JointParams::new(values, self.dim_a())
    }
}

/// Concatenated parameters `[θ_A, θ_B]` with the player split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    values: Vec<f64>,
    split: usize,
}

impl JointParams {
    pub fn new(values: Vec<f64>, split: usize) -> Result<Self> {
        if split < 1 || split >= values.len() {
            return Err(Error::InvalidInput(format!(
                "split {split} leaves an empty player block in {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint parameters"));
        }
        Ok(Self { values, split })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn player_a(&self) -> &[f64] {
        &self.values[..self.split]
    }

    pub fn player_b(&self) -> &[f64] {
        &self.values[self.split..]
    }
}

// ---------------------------------------------------------------------------
// Matching pennies

#[derive(Clone, Copy, Debug)]
pub struct MatchingPennies {
    pub space: ParamSpace,
}

impl LossPair for MatchingPennies {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let two = S::cst(2.0);
        let one = S::cst(1.0);
        let u = two * self.space.to_strategy(w[0]) - one;
        let v = two * self.space.to_strategy(w[1]) - one;
        let lb = u * v;
        [-lb, lb]
    }
}

/// Zero-sum matching pennies over 1+1 logits.
pub fn matching_pennies() -> Game {
    matching_pennies_in(ParamSpace::Logit)
}

pub fn matching_pennies_in(space: ParamSpace) -> Game {
    let init = match space {
        ParamSpace::Logit => Initializer::Normal { mean: 0.0, std: 1.0 },
        ParamSpace::Raw => Initializer::Uniform { lo: 0.0, hi: 1.0 },
    };
    Game::new("matching_pennies", MatchingPennies { space }, space, init)
}

// ---------------------------------------------------------------------------
// Iterated prisoner's dilemma

/// Joint-state order used throughout: `CC, CD, DC, DD` with player A's
/// action first.
pub const IPD_STATES: [&str; 4] = ["CC", "CD", "DC", "DD"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpdConfig {
    pub gamma: f64,
    /// Per-step loss of player A in states `CC, CD, DC, DD`.
    pub loss_a: [f64; 4],
    /// Per-step loss of player B in states `CC, CD, DC, DD`.
    pub loss_b: [f64; 4],
}

impl Default for IpdConfig {
    fn default() -> Self {
        Self {
            gamma: 0.96,
            loss_a: [1.0, 3.0, 0.0, 2.0],
            loss_b: [1.0, 0.0, 3.0, 2.0],
        }
    }
}

impl IpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!(
                "discount {} must lie in [0, 1)",
                self.gamma
            )));
        }
        let [cc, cd, dc, dd] = self.loss_a;
        if self.loss_b != [cc, dc, cd, dd] {
            return Err(Error::InvalidInput(
                "player B's loss table must mirror player A's (CD and DC swapped)".into(),
            ));
        }
        if self.loss_a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ipd loss table"));
        }
        Ok(())
    }
}

/// Initial distribution and transition matrix of the joint-action chain.
///
/// `p_a[0]`, `p_b[0]` are the initial cooperation probabilities and
/// `p_x[1 + s]` the cooperation probability in joint state `s`.
pub fn ipd_chain<S: Scalar>(p_a: &[S; 5], p_b: &[S; 5]) -> ([S; 4], [[S; 4]; 4]) {
    let one = S::cst(1.0);
    let joint = |a: S, b: S| [a * b, a * (one - b), (one - a) * b, (one - a) * (one - b)];
    let s0 = joint(p_a[0], p_b[0]);
    let mut p = [[S::cst(0.0); 4]; 4];
    for (s, row) in p.iter_mut().enumerate() {
        *row = joint(p_a[1 + s], p_b[1 + s]);
    }
    (s0, p)
}

/// Normalized discounted losses `(1-γ) s₀ᵀ (I - γP)⁻¹ ℓ` for both players.
pub fn ipd_discounted_losses<S: Scalar>(p_a: &[S; 5], p_b: &[S; 5], cfg: &IpdConfig) -> [S; 2] {
    let (s0, p) = ipd_chain(p_a, p_b);
    let g = S::cst(cfg.gamma);
    // Solve (I - γP)ᵀ x = s₀ so that x = (I - γP)⁻ᵀ s₀.
    let a: Vec<Vec<S>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let id = if i == j { S::cst(1.0) } else { S::cst(0.0) };
                    id - g * p[j][i]
                })
                .collect()
        })
        .collect();
    let x = lu_solve(a, s0.to_vec()).expect("I - γP is nonsingular for γ < 1 and stochastic P");
    let scale = S::cst(1.0 - cfg.gamma);
    let dot = |l: &[f64; 4]| {
        x.iter()
            .zip(l)
            .fold(S::cst(0.0), |acc, (&xi, &li)| acc + xi * S::cst(li))
    };
    [scale * dot(&cfg.loss_a), scale * dot(&cfg.loss_b)]
}

#[derive(Clone, Copy, Debug)]
pub struct Ipd {
    pub config: IpdConfig,
    pub space: ParamSpace,
}

impl LossPair for Ipd {
    fn dims(&self) -> (usize, usize) {
        (5, 5)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let pa: [S; 5] = std::array::from_fn(|i| self.space.to_strategy(w[i]));
        let pb: [S; 5] = std::array::from_fn(|i| self.space.to_strategy(w[5 + i]));
        ipd_discounted_losses(&pa, &pb, &self.config)
    }
}

/// The discounted, infinitely iterated prisoner's dilemma with 5+5 logits:
/// `p(C₀), p(C|CC), p(C|CD), p(C|DC), p(C|DD)` per player.
pub fn ipd(config: IpdConfig) -> Result<Game> {
    config.validate()?;
    Ok(Game::new(
        "ipd",
        Ipd {
            config,
            space: ParamSpace::Logit,
        },
        ParamSpace::Logit,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    ))
}

/// Two-parameter IPD: each player's single logit sets `p(C | opponent
/// cooperated last)`; the response to defection is pinned.
#[derive(Clone, Copy, Debug)]
pub struct SmallIpd {
    pub config: IpdConfig,
    /// Cooperation probability after the opponent defected.
    pub defect_coop: f64,
    pub space: ParamSpace,
}

impl Default for SmallIpd {
    fn default() -> Self {
        Self {
            config: IpdConfig::default(),
            defect_coop: 0.01,
            space: ParamSpace::Logit,
        }
    }
}

impl LossPair for SmallIpd {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let ua = self.space.to_strategy(w[0]);
        let ub = self.space.to_strategy(w[1]);
        let d = S::cst(self.defect_coop);
        // A reacts to B's last action (second letter), B to A's (first).
        let pa = [ua, ua, d, ua, d];
        let pb = [ub, ub, ub, d, d];
        ipd_discounted_losses(&pa, &pb, &self.config)
    }
}

pub fn small_ipd() -> Game {
    small_ipd_with(SmallIpd::default())
}

pub fn small_ipd_with(model: SmallIpd) -> Game {
    let space = model.space;
    Game::new(
        "small_ipd",
        model,
        space,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    )
}

/// Convex combination `τ·L_smallIPD + (1-τ)·L_MP` on shared logits.
#[derive(Clone, Copy, Debug)]
pub struct MixedGame {
    pub tau: f64,
    pub small: SmallIpd,
    pub pennies: MatchingPennies,
}

impl LossPair for MixedGame {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let s = self.small.losses(w);
        let m = self.pennies.losses(w);
        let t = S::cst(self.tau);
        let r = S::cst(1.0 - self.tau);
        [t * s[0] + r * m[0], t * s[1] + r * m[1]]
    }
}

pub const DEFAULT_MIX_TAU: f64 = 0.25;

pub fn mixed_game(tau: f64) -> Result<Game> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("tau {tau} outside [0, 1]")));
    }
    Ok(Game::new(
        "mixed",
        MixedGame {
            tau,
            small: SmallIpd::default(),
            pennies: MatchingPennies {
                space: ParamSpace::Logit,
            },
        },
        ParamSpace::Logit,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    ))
}

/// A base game restricted to one line per player:
/// `θ_A = v_A·x + b_A`, `θ_B = v_B·y + b_B`.
#[derive(Clone, Debug)]
pub struct RandomSubspace {
    pub base: Game,
    pub v_a: Vec<f64>,
    pub b_a: Vec<f64>,
    pub v_b: Vec<f64>,
    pub b_b: Vec<f64>,
}

impl RandomSubspace {
    pub fn embed<S: Scalar>(&self, x: S, y: S) -> Vec<S> {
        let line = |v: &[f64], b: &[f64], t: S| -> Vec<S> {
            v.iter()
                .zip(b)
                .map(|(&vi, &bi)| S::cst(vi) * t + S::cst(bi))
                .collect()
        };
        let mut w = line(&self.v_a, &self.b_a, x);
        w.extend(line(&self.v_b, &self.b_b, y));
        w
    }
}

impl LossPair for RandomSubspace {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        self.base.losses(&self.embed(w[0], w[1]))
    }
}

pub fn random_subspace(base: &Game, seed: u64) -> Game {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction = |n: usize| {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<_>>()
    };
    let v_a = direction(base.dim_a());
    let v_b = direction(base.dim_b());
    let offset = base.sample_init(&mut rng);
    let (b_a, b_b) = offset.split_at(base.dim_a());
    let model = RandomSubspace {
        base: base.clone(),
        v_a,
        b_a: b_a.to_vec(),
        v_b,
        b_b: b_b.to_vec(),
    };
    Game::new(
        format!("subspace[{}]", base.name()),
        model,
        ParamSpace::Raw,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    )
}

// ---------------------------------------------------------------------------
// Single-objective and bilinear helpers

/// Both players minimize the same quadratic `½ωᵀAω + bᵀω`.
#[derive(Clone, Debug)]
pub struct SharedQuadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub split: usize,
}

impl LossPair for SharedQuadratic {
    fn dims(&self) -> (usize, usize) {
        (self.split, self.b.len() - self.split)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let mut l = S::cst(0.0);
        for (i, row) in self.a.iter().enumerate() {
            for (j, &aij) in row.iter().enumerate() {
                if aij != 0.0 {
                    l = l + S::cst(0.5 * aij) * w[i] * w[j];
                }
            }
            l = l + S::cst(self.b[i]) * w[i];
        }
        [l, l]
    }
}

/// Shared quadratic bowl `½ Σ cᵢ ωᵢ²` (curvatures may be negative).
pub fn quadratic_bowl(curvatures: &[f64], split: usize) -> Game {
    let n = curvatures.len();
    let a = (0..n)
        .map(|i| (0..n).map(|j| if i == j { curvatures[i] } else { 0.0 }).collect())
        .collect();
    Game::new(
        "quadratic",
        SharedQuadratic {
            a,
            b: vec![0.0; n],
            split,
        },
        ParamSpace::Raw,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    )
}

/// Shared quartic `(x² - 1)² + y²`: minima at `(±1, 0)`, saddle at the origin.
#[derive(Clone, Copy, Debug)]
pub struct DoubleWell;

impl LossPair for DoubleWell {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let q = w[0] * w[0] - S::cst(1.0);
        let l = q * q + w[1] * w[1];
        [l, l]
    }
}

pub fn double_well() -> Game {
    Game::new(
        "double_well",
        DoubleWell,
        ParamSpace::Raw,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    )
}

/// Zero-sum bilinear game `L_A = θ_Aᵀ M θ_B = -L_B`.
#[derive(Clone, Debug)]
pub struct Bilinear {
    pub m: Vec<Vec<f64>>,
}

impl LossPair for Bilinear {
    fn dims(&self) -> (usize, usize) {
        (self.m.len(), self.m[0].len())
    }

    fn losses<S: GameScalar>(&self, w: &[S]) -> [S; 2] {
        let da = self.m.len();
        let mut l = S::cst(0.0);
        for (i, row) in self.m.iter().enumerate() {
            for (j, &mij) in row.iter().enumerate() {
                l = l + S::cst(mij) * w[i] * w[da + j];
            }
        }
        [l, -l]
    }
}

pub fn bilinear(m: Vec<Vec<f64>>) -> Game {
    Game::new(
        "bilinear",
        Bilinear { m },
        ParamSpace::Raw,
        Initializer::Normal { mean: 0.0, std: 1.0 },
    )
}

// ---------------------------------------------------------------------------
// One-dimensional maps

/// The scalar iteration `x ← x + r + x²` with derivative `1 + 2x`.
pub fn one_dim_map(r: f64) -> MapOperator {
    MapOperator::new(
        "one_dim_map",
        1.0,
        move |w: &[f64]| vec![w[0] + r + w[0] * w[0]],
        |w: &[f64]| crate::Matrix::from_rows(&[[1.0 + 2.0 * w[0]]]),
    )
}

/// Classical logistic map `x ← r·x·(1 - x)`.
pub fn logistic_map(r: f64) -> MapOperator {
    MapOperator::new(
        "logistic_map",
        1.0,
        move |w: &[f64]| vec![r * w[0] * (1.0 - w[0])],
        move |w: &[f64]| crate::Matrix::from_rows(&[[r * (1.0 - 2.0 * w[0])]]),
    )
}
