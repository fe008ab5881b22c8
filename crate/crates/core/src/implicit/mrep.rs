//! Matrix representation of Bézier patches by moving hyperplanes: the
//! collocation system, its null space, the drop-of-rank check, and the
//! determinant layer with value-scaled derivatives.

use super::bezier::{binom_f, BezierPatch};
use super::stack::{zero_third, Det4};
use crate::error::{Error, Result};
use crate::linalg::{SmallMat, SmallVec};
use nalgebra::DMatrix;

/// Relative singular-value cutoff for the null-space extraction.
const NULLSPACE_CUTOFF: f64 = 1e-10;
/// Drop-of-rank acceptance: smallest singular value over largest, on-patch.
const RANK_DROP_TOL: f64 = 1e-8;

/// The matrix family `M(x) = sum_c x_c C_c + C_w`, rows indexed by the
/// moving-hyperplane Bernstein coefficients, columns by null-space vectors.
#[derive(Debug, Clone)]
pub struct MRepMatrix {
    /// Embedding dimension.
    pub dim: usize,
    /// Spatial coefficient matrices, one per coordinate, then the affine one.
    pub coeff: Vec<DMatrix<f64>>,
    pub rows: usize,
    pub cols: usize,
    pub label: String,
}

impl MRepMatrix {
    /// Assemble `M(x)`.
    pub fn at(&self, x: &SmallVec) -> DMatrix<f64> {
        let mut m = self.coeff[self.dim].clone();
        for c in 0..self.dim {
            m += &self.coeff[c] * x.get(c);
        }
        m
    }

    /// Ratio of smallest to largest singular value of `M(x)`.
    pub fn rank_ratio(&self, x: &SmallVec) -> f64 {
        let m = self.at(x);
        let sv = m.singular_values();
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smax == 0.0 {
            0.0
        } else {
            smin / smax
        }
    }

    /// Gram determinant stack: `gamma = det(M M^T)` with gradient,
    /// `gamma`-scaled Hessian, and `gamma^2`-scaled third derivatives.
    /// Exact polynomial recurrences; no divisions.
    pub fn det_stack(&self, x: &SmallVec) -> Det4 {
        let d = self.dim;
        let m = self.at(x);
        let mt = m.transpose();
        let nn = &m * &mt;
        // dN_j = C_j M^T + M C_j^T ; d2N_jk = C_j C_k^T + C_k C_j^T
        let dn: Vec<DMatrix<f64>> = (0..d)
            .map(|j| &self.coeff[j] * &mt + &m * self.coeff[j].transpose())
            .collect();
        let d2n = |j: usize, k: usize| -> DMatrix<f64> {
            &self.coeff[j] * self.coeff[k].transpose() + &self.coeff[k] * self.coeff[j].transpose()
        };

        let gamma = det(&nn);
        let adj = adjugate(&nn);
        // gradient: tr(adj dN_j)
        let mut g = SmallVec::zero(d);
        for j in 0..d {
            g.set(j, trace_prod(&adj, &dn[j]));
        }
        // B_j = gamma d_j adj = (d_j gamma) adj - adj dN_j adj
        let e: Vec<DMatrix<f64>> = (0..d).map(|j| &adj * &dn[j] * &adj).collect();
        let b: Vec<DMatrix<f64>> = (0..d).map(|j| &adj * g.get(j) - &e[j]).collect();
        // gamma d_jk gamma = tr(B_k dN_j) + gamma tr(adj d2N_jk)
        let mut vh = SmallMat::zero(d);
        for j in 0..d {
            for k in 0..d {
                let v = trace_prod(&b[k], &dn[j]) + gamma * trace_prod(&adj, &d2n(j, k));
                vh.set(j, k, v);
            }
        }
        // D_jk = gamma^2 d_jk adj, in manifestly symmetric form
        let dd = |j: usize, k: usize| -> DMatrix<f64> {
            &adj * vh.get(j, k) - &adj * (2.0 * g.get(j) * g.get(k))
                + &b[k] * g.get(j)
                + &b[j] * g.get(k)
                + &e[k] * &dn[j] * &adj
                + &e[j] * &dn[k] * &adj
                - &adj * d2n(j, k) * &adj * gamma
        };
        // gamma^2 d_jkl gamma = tr(D_kl dN_j) + gamma tr(B_k d2N_jl)
        //                        + gamma tr(B_l d2N_jk)
        let mut vt = zero_third(d);
        for l in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = trace_prod(&dd(k, l), &dn[j])
                        + gamma * trace_prod(&b[k], &d2n(j, l))
                        + gamma * trace_prod(&b[l], &d2n(j, k));
                    vt[l].set(j, k, v);
                }
            }
        }
        Det4 {
            d,
            v: gamma,
            g,
            vh,
            vt,
        }
    }
}

fn det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        a[(0, 0)]
    } else {
        a.clone().lu().determinant()
    }
}

fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Adjugate via cofactors (transpose of the cofactor matrix).
pub fn adjugate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let mut adj = DMatrix::zeros(n, n);
    let mut minor = DMatrix::zeros(n - 1, n - 1);
    for i in 0..n {
        for j in 0..n {
            for (mi, ai) in (0..n).filter(|&r| r != i).enumerate() {
                for (mj, aj) in (0..n).filter(|&c| c != j).enumerate() {
                    minor[(mi, mj)] = a[(ai, aj)];
                }
            }
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = sign * det(&minor);
        }
    }
    adj
}

/// Moving-hyperplane implicitization of a patch; `nu` overrides the default
/// hyperplane degree(s) when given.
pub fn implicitize_patch(patch: &BezierPatch) -> Result<MRepMatrix> {
    match patch.param_dim {
        1 => {
            let p = patch.degree[0];
            let max_p = if patch.dim == 2 { 4 } else { 3 };
            if p > max_p {
                return Err(Error::Implicitization {
                    patch: patch.label.clone(),
                    message: format!("curve degree {p} exceeds the supported table (<= {max_p})"),
                });
            }
            let nu = p - 1;
            let mrep = curve_mrep(patch, nu)?;
            check_rank_drop(patch, &mrep)?;
            Ok(mrep)
        }
        2 => {
            let (m, n) = (patch.degree[0], patch.degree[1]);
            if m > 2 || n > 2 {
                return Err(Error::Implicitization {
                    patch: patch.label.clone(),
                    message: format!("surface bidegree ({m}, {n}) exceeds the supported (2, 2)"),
                });
            }
            // default (2m-1, n-1), incrementing until the rank check passes
            let mut nu1 = (2 * m).saturating_sub(1);
            let mut nu2 = n.saturating_sub(1);
            let mut last_err = None;
            for attempt in 0..4 {
                match surface_mrep(patch, nu1, nu2)
                    .and_then(|mr| check_rank_drop(patch, &mr).map(|_| mr))
                {
                    Ok(mr) => return Ok(mr),
                    Err(e) => {
                        last_err = Some(e);
                        if attempt % 2 == 0 {
                            nu2 += 1;
                        } else {
                            nu1 += 1;
                        }
                    }
                }
            }
            Err(last_err.unwrap())
        }
        _ => Err(Error::Implicitization {
            patch: patch.label.clone(),
            message: "unsupported parametric dimension".into(),
        }),
    }
}

/// Null-space basis by Gaussian elimination with full pivoting; vectors are
/// unit length with a deterministic sign.
fn null_space(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut u = a.clone();
    let scale = u.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    let tol = NULLSPACE_CUTOFF * scale;
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut rank = 0usize;
    for step in 0..m.min(n) {
        // full pivot search in the remaining submatrix
        let (mut pi, mut pj, mut pv) = (step, step, 0.0f64);
        for i in step..m {
            for j in step..n {
                if u[(i, j)].abs() > pv {
                    pv = u[(i, j)].abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        if pv <= tol {
            break;
        }
        u.swap_rows(step, pi);
        u.swap_columns(step, pj);
        col_perm.swap(step, pj);
        for i in (step + 1)..m {
            let f = u[(i, step)] / u[(step, step)];
            for j in step..n {
                u[(i, j)] -= f * u[(step, j)];
            }
        }
        rank = step + 1;
    }
    // back-substitute one basis vector per free column
    let mut basis = Vec::with_capacity(n - rank);
    for free in rank..n {
        let mut x = vec![0.0f64; n]; // in permuted coordinates
        x[free] = 1.0;
        for i in (0..rank).rev() {
            let mut s = u[(i, free)];
            for j in (i + 1)..rank {
                s += u[(i, j)] * x[j];
            }
            x[i] = -s / u[(i, i)];
        }
        let mut v = vec![0.0f64; n];
        for (pos, &orig) in col_perm.iter().enumerate() {
            v[orig] = x[pos];
        }
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let mut big = 0usize;
        for (i, t) in v.iter().enumerate() {
            if t.abs() > v[big].abs() {
                big = i;
            }
        }
        let sign = if v[big] < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|t| *t *= sign / norm);
        basis.push(v);
    }
    basis
}

fn curve_mrep(patch: &BezierPatch, nu: usize) -> Result<MRepMatrix> {
    let p = patch.degree[0];
    let dp1 = patch.dim + 1;
    let homo = patch.homogeneous();
    let rows = p + nu + 1;
    let cols = (nu + 1) * dp1;
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    for k in 0..rows {
        for j in 0..=nu {
            if k < j || k - j > p {
                continue;
            }
            let i = k - j;
            let f = binom_f(p, i) * binom_f(nu, j);
            for m in 0..dp1 {
                a[(k, j * dp1 + m)] += f * homo[i][m];
            }
        }
    }
    let basis = null_space(&a);
    if basis.is_empty() {
        return Err(Error::Implicitization {
            patch: patch.label.clone(),
            message: "empty moving-hyperplane null space".into(),
        });
    }
    let r = nu + 1;
    let c = basis.len();
    let mut coeff = vec![DMatrix::<f64>::zeros(r, c); dp1];
    for (cc, v) in basis.iter().enumerate() {
        for j in 0..r {
            for m in 0..dp1 {
                coeff[m][(j, cc)] = v[j * dp1 + m];
            }
        }
    }
    Ok(MRepMatrix {
        dim: patch.dim,
        coeff,
        rows: r,
        cols: c,
        label: patch.label.clone(),
    })
}

fn surface_mrep(patch: &BezierPatch, nu1: usize, nu2: usize) -> Result<MRepMatrix> {
    let (m, n) = (patch.degree[0], patch.degree[1]);
    let dp1 = 4;
    let homo = patch.homogeneous();
    let rows = (m + nu1 + 1) * (n + nu2 + 1);
    let cols = (nu1 + 1) * (nu2 + 1) * dp1;
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    for k1 in 0..=(m + nu1) {
        for k2 in 0..=(n + nu2) {
            let row = k2 * (m + nu1 + 1) + k1;
            for j1 in 0..=nu1 {
                for j2 in 0..=nu2 {
                    if k1 < j1 || k1 - j1 > m || k2 < j2 || k2 - j2 > n {
                        continue;
                    }
                    let (i1, i2) = (k1 - j1, k2 - j2);
                    let f = binom_f(m, i1) * binom_f(nu1, j1) * binom_f(n, i2) * binom_f(nu2, j2);
                    let col_base = (j2 * (nu1 + 1) + j1) * dp1;
                    let ci = i2 * (m + 1) + i1;
                    for mm in 0..dp1 {
                        a[(row, col_base + mm)] += f * homo[ci][mm];
                    }
                }
            }
        }
    }
    let basis = null_space(&a);
    let r = (nu1 + 1) * (nu2 + 1);
    if basis.len() < r {
        return Err(Error::Implicitization {
            patch: patch.label.clone(),
            message: format!(
                "null space dimension {} below the row count {r} for nu = ({nu1}, {nu2})",
                basis.len()
            ),
        });
    }
    let c = basis.len();
    let mut coeff = vec![DMatrix::<f64>::zeros(r, c); dp1];
    for (cc, v) in basis.iter().enumerate() {
        for j in 0..r {
            for mm in 0..dp1 {
                coeff[mm][(j, cc)] = v[j * dp1 + mm];
            }
        }
    }
    Ok(MRepMatrix {
        dim: patch.dim,
        coeff,
        rows: r,
        cols: c,
        label: patch.label.clone(),
    })
}

/// Sampled drop-of-rank check on the patch.
fn check_rank_drop(patch: &BezierPatch, mrep: &MRepMatrix) -> Result<()> {
    let samples: Vec<Vec<f64>> = match patch.param_dim {
        1 => (0..50).map(|i| vec![i as f64 / 49.0]).collect(),
        _ => {
            let mut s = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    s.push(vec![i as f64 / 7.0, j as f64 / 7.0]);
                }
            }
            s
        }
    };
    for u in &samples {
        let x = patch.eval(u);
        let ratio = mrep.rank_ratio(&x);
        if ratio > RANK_DROP_TOL {
            return Err(Error::Implicitization {
                patch: patch.label.clone(),
                message: format!(
                    "rank does not drop on the patch (ratio {ratio:.2e} at u = {u:?})"
                ),
            });
        }
    }
    Ok(())
}

/// Split a curve of degree >= 3 at detected auto-intersection parameters.
/// Curves of lower degree and surfaces are returned unchanged.
pub fn split_autointersections(patch: &BezierPatch) -> Result<Vec<BezierPatch>> {
    if patch.param_dim != 1 || patch.degree[0] < 3 {
        return Ok(vec![patch.clone()]);
    }
    let mut out = Vec::new();
    split_rec(patch, 0, &mut out)?;
    Ok(out)
}

fn split_rec(patch: &BezierPatch, depth: usize, out: &mut Vec<BezierPatch>) -> Result<()> {
    if depth >= 4 {
        out.push(patch.clone());
        return Ok(());
    }
    let mrep = curve_mrep(patch, patch.degree[0] - 1)?;
    // objective: squared norm of the on-curve gradient of the signed
    // implicit function (square case) or the second-smallest singular value
    // (tall case); both collapse exactly at a double point
    let objective = |u: f64| -> f64 {
        let x = patch.eval(&[u]);
        if mrep.rows == mrep.cols {
            let m = mrep.at(&x);
            let adj = adjugate(&m);
            let mut s = 0.0;
            for c in 0..patch.dim {
                let g = trace_prod(&adj, &mrep.coeff[c]);
                s += g * g;
            }
            s
        } else {
            let m = mrep.at(&x);
            let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let second_smallest = sv[sv.len().saturating_sub(2)];
            second_smallest * second_smallest
        }
    };
    let n = 256;
    let values: Vec<f64> = (0..=n).map(|i| objective(i as f64 / n as f64)).collect();
    let vmax = values.iter().cloned().fold(0.0f64, f64::max);
    if vmax == 0.0 {
        out.push(patch.clone());
        return Ok(());
    }
    // interior local minima, refined by bisection on the derivative sign
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        if values[i] <= values[i - 1] && values[i] <= values[i + 1] {
            let (mut lo, mut hi) = ((i - 1) as f64 / n as f64, (i + 1) as f64 / n as f64);
            for _ in 0..60 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if objective(m1) < objective(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let u = 0.5 * (lo + hi);
            let v = objective(u);
            if best.map_or(true, |(_, bv)| v < bv) {
                best = Some((u, v));
            }
        }
    }
    match best {
        Some((u, v)) if v <= 1e-10 * vmax && u > 1e-3 && u < 1.0 - 1e-3 => {
            let (l, r) = patch.subdivide_curve(u)?;
            split_rec(&l, depth + 1, out)?;
            split_rec(&r, depth + 1, out)?;
            Ok(())
        }
        _ => {
            out.push(patch.clone());
            Ok(())
        }
    }
}
