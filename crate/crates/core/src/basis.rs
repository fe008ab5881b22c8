//! Nodal Lagrange bases on d-simplices, their derivatives, and the
//! master-to-equilateral mapping.
//!
//! The master simplex is the unit right simplex with vertices at the origin
//! and the unit axis points. Nodes sit on the uniform lattice with
//! `binomial(d+p, p)` points; the basis is built once by inverting the
//! monomial Vandermonde at the lattice.
//!
//! `d = 1` is supported internally so boundary facets of 2D meshes can be
//! integrated with the same machinery; elements themselves use `d = 2, 3`.

use crate::error::{Error, Result};
use crate::linalg::{SmallMat, SmallVec};
use nalgebra::DMatrix;

/// Tolerance on barycentric coordinates when checking that an evaluation
/// point lies in the closed master simplex. Slightly looser than the
/// localization clamp so valid localized points always evaluate.
pub const DOMAIN_TOL: f64 = 1e-8;

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut r = 1usize;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Multi-indices `(a_1..a_d)` with `|a| <= p`, in lattice order
/// (last coordinate slowest).
pub fn multi_indices(d: usize, p: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(binomial(d + p, p));
    match d {
        1 => {
            for i in 0..=p {
                out.push([i, 0, 0]);
            }
        }
        2 => {
            for j in 0..=p {
                for i in 0..=(p - j) {
                    out.push([i, j, 0]);
                }
            }
        }
        3 => {
            for k in 0..=p {
                for j in 0..=(p - k) {
                    for i in 0..=(p - k - j) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        _ => panic!("dimension {d} not supported"),
    }
    out
}

/// Nodal basis of degree `p` on the d-simplex.
#[derive(Debug, Clone)]
pub struct SimplexBasis {
    pub d: usize,
    pub p: usize,
    /// Lattice coordinates of the nodes in the master simplex.
    pub nodes: Vec<SmallVec>,
    /// Monomial exponents, aligned with the coefficient matrix rows.
    exponents: Vec<[usize; 3]>,
    /// `coeffs[(j, k)]`: coefficient of monomial `j` in shape function `k`.
    coeffs: DMatrix<f64>,
}

impl SimplexBasis {
    pub fn new(d: usize, p: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Usage(format!("dimension {d} not supported")));
        }
        if p < 1 || p > 6 {
            return Err(Error::Usage(format!(
                "degree {p} outside the supported range 1..=6"
            )));
        }
        let exps = multi_indices(d, p);
        let n = exps.len();
        let nodes: Vec<SmallVec> = exps
            .iter()
            .map(|a| {
                let mut v = SmallVec::zero(d);
                for c in 0..d {
                    v.set(c, a[c] as f64 / p as f64);
                }
                v
            })
            .collect();
        // Vandermonde: V[i][j] = mono_j(node_i)
        let mut v = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                v[(i, j)] = eval_monomial(&exps[j], &nodes[i]);
            }
        }
        let coeffs = v
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numeric(format!("Vandermonde for d={d}, p={p} is singular")))?;
        Ok(Self {
            d,
            p,
            nodes,
            exponents: exps,
            coeffs,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn check_domain(&self, xi: &SmallVec) -> Result<()> {
        let mut bary0 = 1.0;
        for c in 0..self.d {
            let x = xi.get(c);
            bary0 -= x;
            if x < -DOMAIN_TOL {
                return Err(Error::Domain(format!(
                    "point outside master simplex: coordinate {c} = {x:.3e}"
                )));
            }
        }
        if bary0 < -DOMAIN_TOL {
            return Err(Error::Domain(format!(
                "point outside master simplex: barycentric remainder {bary0:.3e}"
            )));
        }
        Ok(())
    }

    /// Shape-function values `(N_1(xi), ..., N_n(xi))`.
    pub fn evaluate(&self, xi: &SmallVec) -> Result<Vec<f64>> {
        self.check_domain(xi)?;
        Ok(self.evaluate_unchecked(xi))
    }

    pub fn evaluate_unchecked(&self, xi: &SmallVec) -> Vec<f64> {
        let n = self.node_count();
        let monos: Vec<f64> = self
            .exponents
            .iter()
            .map(|a| eval_monomial(a, xi))
            .collect();
        (0..n)
            .map(|k| (0..n).map(|j| self.coeffs[(j, k)] * monos[j]).sum())
            .collect()
    }

    /// Gradients of all shape functions with respect to master coordinates.
    pub fn gradients(&self, xi: &SmallVec) -> Result<Vec<SmallVec>> {
        self.check_domain(xi)?;
        Ok(self.gradients_unchecked(xi))
    }

    pub fn gradients_unchecked(&self, xi: &SmallVec) -> Vec<SmallVec> {
        let n = self.node_count();
        let d = self.d;
        let mut dm = vec![[0.0f64; 3]; n];
        for (j, a) in self.exponents.iter().enumerate() {
            for c in 0..d {
                dm[j][c] = eval_monomial_deriv(a, xi, c);
            }
        }
        (0..n)
            .map(|k| {
                let mut g = SmallVec::zero(d);
                for c in 0..d {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += self.coeffs[(j, k)] * dm[j][c];
                    }
                    g.set(c, s);
                }
                g
            })
            .collect()
    }

    /// Hessians of all shape functions with respect to master coordinates.
    pub fn hessians(&self, xi: &SmallVec) -> Result<Vec<SmallMat>> {
        self.check_domain(xi)?;
        Ok(self.hessians_unchecked(xi))
    }

    pub fn hessians_unchecked(&self, xi: &SmallVec) -> Vec<SmallMat> {
        let n = self.node_count();
        let d = self.d;
        (0..n)
            .map(|k| {
                let mut h = SmallMat::zero(d);
                for (j, a) in self.exponents.iter().enumerate() {
                    let c0 = self.coeffs[(j, k)];
                    if c0 == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        for e in c..d {
                            let v = c0 * eval_monomial_deriv2(a, xi, c, e);
                            h.add_to(c, e, v);
                            if e != c {
                                h.add_to(e, c, v);
                            }
                        }
                    }
                }
                h
            })
            .collect()
    }

    /// Derivatives of order 1 (gradients) or 2 (Hessians) as flat tensors.
    pub fn derivatives(&self, xi: &SmallVec, order: usize) -> Result<BasisDerivatives> {
        match order {
            1 => Ok(BasisDerivatives::Gradient(self.gradients(xi)?)),
            2 => Ok(BasisDerivatives::Hessian(self.hessians(xi)?)),
            _ => Err(Error::Usage(format!(
                "derivative order {order} not in {{1, 2}}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BasisDerivatives {
    Gradient(Vec<SmallVec>),
    Hessian(Vec<SmallMat>),
}

fn eval_monomial(a: &[usize; 3], xi: &SmallVec) -> f64 {
    let mut v = 1.0;
    for c in 0..xi.d {
        v *= xi.get(c).powi(a[c] as i32);
    }
    v
}

fn eval_monomial_deriv(a: &[usize; 3], xi: &SmallVec, c: usize) -> f64 {
    if a[c] == 0 {
        return 0.0;
    }
    let mut v = a[c] as f64 * xi.get(c).powi(a[c] as i32 - 1);
    for e in 0..xi.d {
        if e != c {
            v *= xi.get(e).powi(a[e] as i32);
        }
    }
    v
}

fn eval_monomial_deriv2(a: &[usize; 3], xi: &SmallVec, c: usize, e: usize) -> f64 {
    let mut b = *a;
    let mut f = 1.0;
    for &idx in &[c, e] {
        if b[idx] == 0 {
            return 0.0;
        }
        f *= b[idx] as f64;
        b[idx] -= 1;
    }
    f * eval_monomial(&b, xi)
}

/// Physical map of an element: point, Jacobian, and optionally the
/// master-space second-derivative tensor (one matrix per physical component).
pub fn physical_map(
    basis: &SimplexBasis,
    node_coords: &[SmallVec],
    xi: &SmallVec,
    second: bool,
) -> Result<(SmallVec, SmallMat, Option<Vec<SmallMat>>)> {
    let n = basis.node_count();
    if node_coords.len() != n {
        return Err(Error::Usage(format!(
            "expected {n} node coordinates, got {}",
            node_coords.len()
        )));
    }
    let dim = node_coords[0].d;
    let vals = basis.evaluate(xi)?;
    let grads = basis.gradients_unchecked(xi);
    let mut point = SmallVec::zero(dim);
    // rows: physical components, columns: master directions (only the first
    // `basis.d` columns are populated when mapping a facet)
    let mut jac = SmallMat::zero(dim.max(basis.d));
    for i in 0..n {
        for c in 0..dim {
            point.set(c, point.get(c) + vals[i] * node_coords[i].get(c));
            for e in 0..basis.d {
                jac.add_to(c, e, node_coords[i].get(c) * grads[i].get(e));
            }
        }
    }
    let sec = if second {
        let hess = basis.hessians_unchecked(xi);
        let mut t = vec![SmallMat::zero(basis.d); dim];
        for i in 0..n {
            for (c, tc) in t.iter_mut().enumerate() {
                *tc = tc.add(&hess[i].scale(node_coords[i].get(c)));
            }
        }
        Some(t)
    } else {
        None
    };
    Ok((point, jac, sec))
}

/// The linear map from the master simplex to the unit equilateral simplex.
#[derive(Debug, Clone)]
pub struct EquilateralMap {
    pub d: usize,
    pub vertices: Vec<SmallVec>,
    pub jacobian: SmallMat,
    pub inverse: SmallMat,
    pub det: f64,
}

impl EquilateralMap {
    pub fn new(d: usize) -> Result<Self> {
        let vertices: Vec<SmallVec> = match d {
            1 => vec![SmallVec::from_slice(&[0.0]), SmallVec::from_slice(&[1.0])],
            2 => vec![
                SmallVec::from_slice(&[0.0, 0.0]),
                SmallVec::from_slice(&[1.0, 0.0]),
                SmallVec::from_slice(&[0.5, 3.0f64.sqrt() / 2.0]),
            ],
            3 => vec![
                SmallVec::from_slice(&[0.0, 0.0, 0.0]),
                SmallVec::from_slice(&[1.0, 0.0, 0.0]),
                SmallVec::from_slice(&[0.5, 3.0f64.sqrt() / 2.0, 0.0]),
                SmallVec::from_slice(&[
                    0.5,
                    3.0f64.sqrt() / 6.0,
                    (6.0f64).sqrt() / 3.0,
                ]),
            ],
            _ => return Err(Error::Usage(format!("dimension {d} not supported"))),
        };
        let mut jacobian = SmallMat::zero(d);
        for e in 0..d {
            let col = vertices[e + 1].sub(&vertices[0]);
            jacobian.set_col(e, &col);
        }
        let det = jacobian.det();
        let inverse = jacobian
            .inverse()
            .ok_or_else(|| Error::Numeric("equilateral Jacobian is singular".into()))?;
        Ok(Self {
            d,
            vertices,
            jacobian,
            inverse,
            det,
        })
    }
}

/// Constant Jacobian of the master-to-equilateral map.
pub fn equilateral_jacobian(d: usize) -> Result<SmallMat> {
    Ok(EquilateralMap::new(d)?.jacobian)
}
