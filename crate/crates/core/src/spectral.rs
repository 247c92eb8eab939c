//! Dense eigensolvers for small matrices.
//!
//! Symmetric matrices go through cyclic Jacobi rotations. General real
//! matrices are reduced to upper Hessenberg form with Householder
//! reflections and then deflated with Francis double-shift QR steps.

use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Symmetric,
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Unit eigenvectors, present for symmetric decompositions.
    pub eigenvectors: Option<Vec<Vec<f64>>>,
    pub kind: SpectrumKind,
}

impl Spectrum {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.norm()).collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Real parts; exact eigenvalues for the symmetric kind.
    pub fn real_parts(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }
}

/// Deterministic order: descending modulus, then real part, then imaginary
/// part.
pub fn compare_eigenvalues(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

fn check_square(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigensolver input"));
    }
    Ok(())
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are orthonormal.
pub fn eig_symmetric(a: &Matrix) -> Result<Spectrum> {
    check_square(a)?;
    let n = a.rows();
    let scale = a.frobenius_norm();
    let asym = a.sub(&a.transpose()).frobenius_norm();
    if asym > 1e-9 * scale {
        return Err(Error::Asymmetric {
            asymmetry: asym,
            norm: scale,
        });
    }
    let mut m = a.add(&a.transpose()).scale(0.5);
    let mut v = Matrix::identity(n);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * kp - s * kq;
                    m[(k, q)] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * pk - s * qk;
                    m[(q, k)] = s * pk + c * qk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * kp - s * kq;
                    v[(k, q)] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| Complex64::new(m[(i, i)], 0.0)).collect();
    let eigenvectors = order.iter().map(|&i| canonical_sign(v.column(i))).collect();
    Ok(Spectrum {
        eigenvalues,
        eigenvectors: Some(eigenvectors),
        kind: SpectrumKind::Symmetric,
    })
}

/// Fixes the sign of an eigenvector so its largest-magnitude entry is
/// positive (first such entry on ties).
fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Eigenvalues of a general real matrix (Hessenberg + Francis QR).
pub fn eig_general(a: &Matrix) -> Result<Spectrum> {
    check_square(a)?;
    let n = a.rows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    hessenberg(&mut h);
    let mut values = hqr(&mut h)?;
    values.sort_by(compare_eigenvalues);
    Ok(Spectrum {
        eigenvalues: values,
        eigenvectors: None,
        kind: SpectrumKind::General,
    })
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let f: f64 = (m..=high).rev().map(|i| ort[i] * h[i][j]).sum::<f64>() / hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut().take(high + 1) {
            let f: f64 = (m..=high).rev().map(|j| ort[j] * row[j]).sum::<f64>() / hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m][m - 1] = scale * g;
    }
}

/// Eigenvalues of an upper Hessenberg matrix by shifted double QR.
#[allow(unused_assignments)]
fn hqr(h: &mut [Vec<f64>]) -> Result<Vec<Complex64>> {
    let nn = h.len();
    if nn == 0 {
        return Ok(Vec::new());
    }
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut w, mut x, mut y);

    let mut anorm = 0.0;
    for (i, row) in h.iter().enumerate() {
        for v in row.iter().skip(i.saturating_sub(1)) {
            anorm += v.abs();
        }
    }

    let max_iter = 100 * nn * nn;
    let mut total = 0usize;
    let mut iter = 0;
    let mut hi = nn as isize - 1;
    while hi >= 0 {
        let n = hi as usize;
        let mut l = n;
        while l > 0 {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = anorm;
            }
            if h[l][l - 1] == 0.0 || h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            re[n] = h[n][n] + exshift;
            im[n] = 0.0;
            hi -= 1;
            iter = 0;
        } else if l + 1 == n {
            w = h[n][n - 1] * h[n - 1][n];
            p = (h[n - 1][n - 1] - h[n][n]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[n][n] += exshift;
            h[n - 1][n - 1] += exshift;
            x = h[n][n];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[n - 1] = x + z;
                re[n] = re[n - 1];
                if z != 0.0 {
                    re[n] = x - w / z;
                }
                im[n - 1] = 0.0;
                im[n] = 0.0;
            } else {
                re[n - 1] = x + p;
                re[n] = x + p;
                im[n - 1] = z;
                im[n] = -z;
            }
            hi -= 2;
            iter = 0;
        } else {
            x = h[n][n];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = h[n - 1][n - 1];
                w = h[n][n - 1] * h[n - 1][n];
            }
            if iter == 10 {
                exshift += x;
                for (i, row) in h.iter_mut().enumerate().take(n + 1) {
                    row[i] -= x;
                }
                s = h[n][n - 1].abs() + h[n - 1][n - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for (i, row) in h.iter_mut().enumerate().take(n + 1) {
                        row[i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total += 1;
            if total > max_iter {
                return Err(Error::NoConvergence {
                    iterations: total,
                    found: nn - 1 - n,
                    dim: nn,
                });
            }

            // Look for two consecutive small sub-diagonal elements.
            let mut m = n - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=n {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            for k in m..n {
                let notlast = k != n - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * x;
                    } else if l != m {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            p += r * h[k + 2][j];
                            h[k + 2][j] -= p * z;
                        }
                        h[k][j] -= p * x;
                        h[k + 1][j] -= p * y;
                    }
                    for row in h.iter_mut().take(n.min(k + 3) + 1) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                }
            }
        }
    }
    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopPairsMethod {
    Jacobi,
    PowerIteration { iters: usize },
}

/// Largest-`n` eigenpairs of a symmetric positive semi-definite matrix.
pub fn top_eigpairs_symmetric(
    a: &Matrix,
    n: usize,
    method: TopPairsMethod,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_square(a)?;
    if n > a.rows() {
        return Err(Error::InvalidInput(format!(
            "requested {n} eigenpairs of a {}x{} matrix",
            a.rows(),
            a.rows()
        )));
    }
    match method {
        TopPairsMethod::Jacobi => {
            let s = eig_symmetric(a)?;
            let vecs = s.eigenvectors.unwrap();
            Ok(s.eigenvalues
                .iter()
                .zip(vecs)
                .take(n)
                .map(|(z, v)| (z.re, v))
                .collect())
        }
        TopPairsMethod::PowerIteration { iters } => {
            let scale = a.frobenius_norm();
            let asym = a.sub(&a.transpose()).frobenius_norm();
            if asym > 1e-9 * scale {
                return Err(Error::Asymmetric {
                    asymmetry: asym,
                    norm: scale,
                });
            }
            let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n);
            for _ in 0..n {
                let basis: Vec<Vec<f64>> = found.iter().map(|(_, v)| v.clone()).collect();
                let (value, v) = power_iteration(|x| a.matvec(x), &start_vector(a.rows()), iters, &basis);
                found.push((value, canonical_sign(v)));
            }
            Ok(found)
        }
    }
}

/// Deterministic, generic-position start vector.
pub fn start_vector(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64).collect();
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// Power iteration for a symmetric operator restricted to the orthogonal
/// complement of `deflate` (which must be orthonormal). Returns the Rayleigh
/// quotient and the unit iterate.
pub fn power_iteration(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    iters: usize,
    deflate: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let project = |mut v: Vec<f64>| {
        for b in deflate {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
        }
        v
    };
    let mut v = project(start.to_vec());
    let mut s = norm(&v);
    if s == 0.0 {
        return (0.0, start.to_vec());
    }
    v.iter_mut().for_each(|x| *x /= s);
    for _ in 0..iters {
        let av = project(apply(&v));
        s = norm(&av);
        if s == 0.0 || !s.is_finite() {
            break;
        }
        let next: Vec<f64> = av.iter().map(|x| x / s).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    let value = dot(&v, &apply(&v));
    (value, v)
}

/// `max |λ|` over the spectrum of a general matrix.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eig_general(a)?.spectral_radius())
}

/// CSV rows `re,im` (no header) in spectrum order.
pub fn spectrum_csv_rows(spectrum: &Spectrum) -> Vec<String> {
    spectrum
        .eigenvalues
        .iter()
        .map(|z| format!("{},{}", z.re, z.im))
        .collect()
}
