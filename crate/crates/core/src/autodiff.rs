//! Forward-mode differentiation with nested dual numbers.
//!
//! `Dual<f64>` carries one directional derivative; `Dual<Dual<f64>>`
//! (`HyperDual`) carries the mixed second derivative along two seeded
//! directions. Everything here does `n` (or `n²`) forward passes with unit
//! seeds, which is the right trade at the parameter counts this crate deals
//! with. Central finite differences live here too: they are the test oracle
//! and the fallback for third-order quantities.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::games::{Game, GameScalar};
use crate::matrix::Matrix;

/// Numeric type usable in differentiable code paths.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Innermost primal value.
    fn primal(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn logistic(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }

    #[inline]
    fn primal(&self) -> f64 {
        *self
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }

    #[inline]
    fn logistic(self) -> Self {
        logistic(self)
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Numerically stable logistic function `1 / (1 + e^{-x})`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`logistic`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

pub type HyperDual = Dual<Dual<f64>>;

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Self {
            re,
            eps: T::cst(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;

    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;

    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;

    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;

    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;

    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }

    #[inline]
    fn primal(&self) -> f64 {
        self.re.primal()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }

    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }

    fn logistic(self) -> Self {
        let s = self.re.logistic();
        Self::new(s, self.eps * (s * (T::cst(1.0) - s)))
    }

    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self::new(r, self.eps / (r * T::cst(2.0)))
    }
}

fn seeded(x: &[f64], i: usize) -> Vec<Dual<f64>> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| Dual::new(v, if k == i { 1.0 } else { 0.0 }))
        .collect()
}

/// Seeds the inner tangent on coordinate `i` and the outer tangent on `j`.
fn hyper_seeded(x: &[f64], i: usize, j: usize) -> Vec<HyperDual> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let inner = Dual::new(v, if k == i { 1.0 } else { 0.0 });
            let outer = Dual::new(if k == j { 1.0 } else { 0.0 }, 0.0);
            Dual::new(inner, outer)
        })
        .collect()
}

/// Exact gradient of a scalar function by `n` forward passes.
pub fn grad<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[Dual<f64>]) -> Dual<f64>,
{
    let g: Vec<f64> = (0..x.len()).map(|i| f(&seeded(x, i)).eps).collect();
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite("gradient"))
    }
}

/// Jacobian of a vector function, one column per forward pass.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Matrix>
where
    F: Fn(&[Dual<f64>]) -> Vec<Dual<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        cols.push(f(&seeded(x, i)).iter().map(|d| d.eps).collect::<Vec<_>>());
    }
    let m = Matrix::from_columns(&cols);
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFinite("jacobian"))
    }
}

/// Hessian of a scalar function through nested duals (`n(n+1)/2` passes).
pub fn hessian<F>(f: F, x: &[f64]) -> Result<Matrix>
where
    F: Fn(&[HyperDual]) -> HyperDual,
{
    let n = x.len();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = f(&hyper_seeded(x, i, j)).eps.eps;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonFinite("hessian"))
    }
}

/// Full gradients of both losses with respect to every joint parameter:
/// row 0 is `∇_ω L_A`, row 1 is `∇_ω L_B`.
pub fn loss_gradients(game: &Game, w: &[f64]) -> Result<[Vec<f64>; 2]> {
    let n = w.len();
    let mut ga = Vec::with_capacity(n);
    let mut gb = Vec::with_capacity(n);
    for i in 0..n {
        let [la, lb] = game.losses(&seeded(w, i));
        ga.push(la.eps);
        gb.push(lb.eps);
    }
    if ga.iter().chain(&gb).all(|v| v.is_finite()) {
        Ok([ga, gb])
    } else {
        Err(Error::NonFinite("loss gradients"))
    }
}

/// The joint gradient `ĝ = [∇_{θ_A} L_A, ∇_{θ_B} L_B]`.
pub fn joint_gradient(game: &Game, w: &[f64]) -> Result<Vec<f64>> {
    let split = game.dim_a();
    let g: Vec<f64> = (0..w.len())
        .map(|i| {
            let [la, lb] = game.losses(&seeded(w, i));
            if i < split {
                la.eps
            } else {
                lb.eps
            }
        })
        .collect();
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite("joint gradient"))
    }
}

/// The game Hessian `Ĥ = ∇_ω ĝ`: row `i` differentiates the loss of the
/// player owning coordinate `i`.
pub fn game_hessian(game: &Game, w: &[f64]) -> Result<Matrix> {
    let n = w.len();
    let split = game.dim_a();
    let owner = |i: usize| usize::from(i >= split);
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let l = game.losses(&hyper_seeded(w, i, j));
            let d = [l[0].eps.eps, l[1].eps.eps];
            h[(i, j)] = d[owner(i)];
            h[(j, i)] = d[owner(j)];
        }
    }
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonFinite("game hessian"))
    }
}

/// Which off-diagonal second-derivative block to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixedBlock {
    /// `∂²L_A / ∂θ_A ∂θ_B`, shaped `dim_a × dim_b` (top-right block of `Ĥ`).
    OfLossA,
    /// `∂²L_B / ∂θ_B ∂θ_A`, shaped `dim_b × dim_a` (bottom-left block of `Ĥ`).
    OfLossB,
}

pub fn mixed_second(game: &Game, w: &[f64], which: MixedBlock) -> Result<Matrix> {
    let [a, b] = mixed_blocks(game, w)?;
    Ok(match which {
        MixedBlock::OfLossA => a,
        MixedBlock::OfLossB => b,
    })
}

/// Both cross blocks from a single sweep of `dim_a · dim_b` passes.
pub(crate) fn mixed_blocks(game: &Game, w: &[f64]) -> Result<[Matrix; 2]> {
    let da = game.dim_a();
    let db = game.dim_b();
    let mut of_a = Matrix::zeros(da, db);
    let mut of_b = Matrix::zeros(db, da);
    for i in 0..da {
        for j in 0..db {
            let l = game.losses(&hyper_seeded(w, i, da + j));
            of_a[(i, j)] = l[0].eps.eps;
            of_b[(j, i)] = l[1].eps.eps;
        }
    }
    if of_a.is_finite() && of_b.is_finite() {
        Ok([of_a, of_b])
    } else {
        Err(Error::NonFinite("mixed second derivatives"))
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Jacobian, one column per coordinate.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Matrix {
    let mut probe = x.to_vec();
    let cols: Vec<Vec<f64>> = (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    Matrix::from_columns(&cols)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting on the
/// primal values. Works for any [`Scalar`], so derivatives flow through the
/// factorization.
pub fn lu_solve<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Result<Vec<S>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| a[x][k].primal().abs().total_cmp(&a[y][k].primal().abs()))
            .unwrap();
        if a[p][k].primal() == 0.0 || !a[p][k].primal().is_finite() {
            return Err(Error::Singular);
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                let v = a[k][j];
                a[i][j] = a[i][j] - f * v;
            }
            let bk = b[k];
            b[i] = b[i] - f * bk;
        }
    }
    let mut x = vec![S::cst(0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s = s - a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Ok(x)
}

/// `f64`, `Dual<f64>` and `HyperDual` are the three scalars games evaluate on.
pub fn lift<S: GameScalar>(x: &[f64]) -> Vec<S> {
    x.iter().map(|&v| S::cst(v)).collect()
}
