//! Discrete SPD metric fields on a background mesh: log-Euclidean
//! interpolation, point localization, and first/second derivatives of the
//! interpolated metric in physical coordinates. Analytic boundary-layer
//! metrics are provided for validation.

use crate::basis::{physical_map, SimplexBasis};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, sym_exp, spd_log, SmallMat, SmallVec};
use crate::mesh::HighOrderMesh;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Localization residual bound, relative to the background bbox diagonal.
pub const LOC_RES_TOL: f64 = 1e-10;
/// Barycentric slack accepted without clamping.
pub const LOC_BARY_TOL: f64 = 1e-8;
/// Marginally-outside band that is clamped to the closest face.
pub const LOC_CLAMP_TOL: f64 = 1e-6;

pub type MatGrad = [SmallMat; 3];
pub type MatHess = [[SmallMat; 3]; 3];

/// Interpolated metric with optional spatial derivatives.
#[derive(Debug, Clone)]
pub struct MetricEvaluation {
    pub m: SmallMat,
    pub grad: Option<MatGrad>,
    pub hess: Option<MatHess>,
    /// Background element and master coordinate used (discrete fields only).
    pub element: Option<usize>,
    pub xi: Option<SmallVec>,
    /// Set when the eigenvalue-jitter fallback was taken.
    pub jittered: bool,
}

impl MetricEvaluation {
    fn value_only(m: SmallMat) -> Self {
        Self {
            m,
            grad: None,
            hess: None,
            element: None,
            xi: None,
            jittered: false,
        }
    }
}

fn zero_grad(d: usize) -> MatGrad {
    [SmallMat::zero(d); 3]
}

fn zero_hess(d: usize) -> MatHess {
    [[SmallMat::zero(d); 3]; 3]
}

// ---------------------------------------------------------------------------
// Discrete metric field
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MetricField {
    pub background: HighOrderMesh,
    /// Matrix logarithms of the nodal metrics.
    pub logs: Vec<SmallMat>,
    basis: SimplexBasis,
    index: SpatialIndex,
}

#[derive(Debug, Clone)]
struct SpatialIndex {
    lo: SmallVec,
    cell: [f64; 3],
    k: [usize; 3],
    cells: HashMap<[usize; 3], Vec<usize>>,
    diag: f64,
}

impl SpatialIndex {
    fn build(mesh: &HighOrderMesh) -> Self {
        let d = mesh.dimension;
        let (lo, hi) = mesh.bbox();
        let diag = hi.sub(&lo).norm().max(1e-300);
        let kper = ((mesh.element_count() as f64).powf(1.0 / d as f64).ceil() as usize)
            .clamp(1, 64);
        let mut k = [1usize; 3];
        let mut cell = [1.0f64; 3];
        for c in 0..d {
            k[c] = kper;
            cell[c] = ((hi.get(c) - lo.get(c)) / kper as f64).max(1e-300);
        }
        let mut cells: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
        for e in 0..mesh.element_count() {
            let coords = mesh.element_coords(e);
            let mut elo = [f64::INFINITY; 3];
            let mut ehi = [f64::NEG_INFINITY; 3];
            for x in &coords {
                for c in 0..d {
                    elo[c] = elo[c].min(x.get(c));
                    ehi[c] = ehi[c].max(x.get(c));
                }
            }
            // pad for curvature of high-order elements
            let mut pad = 0.0;
            for c in 0..d {
                pad = f64::max(pad, ehi[c] - elo[c]);
            }
            let pad = if mesh.degree > 1 { 0.25 * pad } else { 1e-12 * diag };
            let mut ilo = [0usize; 3];
            let mut ihi = [0usize; 3];
            for c in 0..d {
                ilo[c] = (((elo[c] - pad - lo.get(c)) / cell[c]).floor().max(0.0)) as usize;
                ihi[c] = (((ehi[c] + pad - lo.get(c)) / cell[c]).floor() as isize)
                    .clamp(0, k[c] as isize - 1) as usize;
                ilo[c] = ilo[c].min(k[c] - 1);
            }
            let mut it = [ilo[0], ilo[1], ilo[2]];
            loop {
                cells.entry(it).or_default().push(e);
                // advance the d-dimensional iterator
                let mut c = 0;
                loop {
                    if c == d {
                        break;
                    }
                    if it[c] < ihi[c] {
                        it[c] += 1;
                        break;
                    }
                    it[c] = ilo[c];
                    c += 1;
                }
                if c == d {
                    break;
                }
            }
        }
        for v in cells.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            lo,
            cell,
            k,
            cells,
            diag,
        }
    }

    fn candidates(&self, p: &SmallVec) -> Vec<usize> {
        let d = p.d;
        let mut idx = [0usize; 3];
        for c in 0..d {
            let t = ((p.get(c) - self.lo.get(c)) / self.cell[c]).floor();
            idx[c] = (t as isize).clamp(0, self.k[c] as isize - 1) as usize;
        }
        self.cells.get(&idx).cloned().unwrap_or_default()
    }
}

impl MetricField {
    /// Build a field from nodal SPD matrices (logs computed here).
    pub fn from_spd(background: HighOrderMesh, metrics: &[SmallMat]) -> Result<Self> {
        let logs: Result<Vec<SmallMat>> = metrics
            .iter()
            .enumerate()
            .map(|(i, m)| {
                spd_log(m).ok_or_else(|| {
                    Error::Validation(format!("node metric {i} is not positive-definite"))
                })
            })
            .collect();
        Self::from_logs(background, logs?)
    }

    pub fn from_logs(background: HighOrderMesh, logs: Vec<SmallMat>) -> Result<Self> {
        if logs.len() != background.node_count() {
            return Err(Error::Validation(format!(
                "{} nodal metrics for {} background nodes",
                logs.len(),
                background.node_count()
            )));
        }
        for (i, l) in logs.iter().enumerate() {
            if l.sub(&l.transpose()).max_abs() > 1e-12 * l.frobenius().max(1.0) {
                return Err(Error::Validation(format!("nodal log {i} is not symmetric")));
            }
        }
        let basis = SimplexBasis::new(background.dimension, background.degree)?;
        let index = SpatialIndex::build(&background);
        Ok(Self {
            background,
            logs,
            basis,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.background.dimension
    }

    /// Background element and master coordinate of a physical point.
    pub fn localize(&self, p: &SmallVec) -> Result<(usize, SmallVec)> {
        let mut best_res = f64::INFINITY;
        let mut best_elem = 0usize;
        let tol = LOC_RES_TOL * self.index.diag;
        let candidates = self.index.candidates(p);
        for pass in 0..2 {
            let list: Vec<usize> = if pass == 0 {
                candidates.clone()
            } else {
                (0..self.background.element_count()).collect()
            };
            for e in list {
                if let Some((xi, res)) = self.newton_localize(e, p) {
                    let bary = min_barycentric(&xi);
                    if res <= tol && bary >= -LOC_BARY_TOL {
                        return Ok((e, xi));
                    }
                    if bary >= -LOC_CLAMP_TOL {
                        // marginally outside: clamp to the closest face
                        let clamped = clamp_to_simplex(&xi);
                        return Ok((e, clamped));
                    }
                    if res < best_res {
                        best_res = res;
                        best_elem = e;
                    }
                }
            }
        }
        Err(Error::Localization {
            nearest_residual: best_res,
            nearest_element: best_elem,
        })
    }

    /// Newton on `phi(xi) = p` within one element; returns converged point
    /// and final residual.
    fn newton_localize(&self, e: usize, p: &SmallVec) -> Option<(SmallVec, f64)> {
        let d = self.dimension();
        let coords = self.background.element_coords(e);
        let mut xi = SmallVec::from_slice(&[1.0 / (d as f64 + 1.0); 3][..d]);
        let mut res = f64::INFINITY;
        for _ in 0..40 {
            let vals = self.basis.evaluate_unchecked(&xi);
            let grads = self.basis.gradients_unchecked(&xi);
            let mut point = SmallVec::zero(d);
            let mut jac = SmallMat::zero(d);
            for (i, x) in coords.iter().enumerate() {
                for c in 0..d {
                    point.set(c, point.get(c) + vals[i] * x.get(c));
                    for a in 0..d {
                        jac.add_to(c, a, x.get(c) * grads[i].get(a));
                    }
                }
            }
            let r = point.sub(p);
            res = r.norm();
            if res <= LOC_RES_TOL * self.index.diag {
                return Some((xi, res));
            }
            let inv = jac.inverse()?;
            let mut step = inv.mul_vec(&r);
            // keep iterates from running far outside the master simplex
            let mut next = xi.sub(&step);
            let mut halvings = 0;
            while min_barycentric(&next) < -0.5 && halvings < 6 {
                step = step.scale(0.5);
                next = xi.sub(&step);
                halvings += 1;
            }
            if step.norm() < 1e-16 {
                return Some((next, res));
            }
            xi = next;
        }
        Some((xi, res))
    }

    /// Log-Euclidean interpolation with optional derivatives in physical
    /// coordinates (`derivative_order` 0, 1, or 2).
    pub fn interpolate(&self, p: &SmallVec, derivative_order: usize) -> Result<MetricEvaluation> {
        let d = self.dimension();
        let (e, xi) = self.localize(p)?;
        let conn = &self.background.elements[e];
        let vals = self.basis.evaluate_unchecked(&xi);
        let mut l = SmallMat::zero(d);
        for (i, &node) in conn.iter().enumerate() {
            l = l.add(&self.logs[node].scale(vals[i]));
        }
        let m = sym_exp(&l);
        let mut eval = MetricEvaluation {
            m,
            grad: None,
            hess: None,
            element: Some(e),
            xi: Some(xi),
            jittered: false,
        };
        if derivative_order == 0 {
            return Ok(eval);
        }
        if derivative_order > 2 {
            return Err(Error::Usage(format!(
                "derivative order {derivative_order} not in {{0, 1, 2}}"
            )));
        }

        // derivatives of the shape functions in physical coordinates
        let coords = self.background.element_coords(e);
        let (_, jac, second) = physical_map(&self.basis, &coords, &xi, true)?;
        let jinv = jac
            .inverse()
            .ok_or_else(|| Error::Numeric("singular background element Jacobian".into()))?;
        let grads_xi = self.basis.gradients_unchecked(&xi);
        let n = conn.len();
        let grads_x: Vec<SmallVec> = (0..n)
            .map(|i| jinv.transpose().mul_vec(&grads_xi[i]))
            .collect();

        let mut dl = zero_grad(d);
        for k in 0..d {
            for (i, &node) in conn.iter().enumerate() {
                dl[k] = dl[k].add(&self.logs[node].scale(grads_x[i].get(k)));
            }
        }

        let mut d2l = zero_hess(d);
        if derivative_order >= 2 {
            let t = second.unwrap();
            // second derivative of the inverse map, one matrix per master dir
            let mut hinv = vec![SmallMat::zero(d); d];
            for (a, ha) in hinv.iter_mut().enumerate() {
                let mut acc = SmallMat::zero(d);
                for (c, tc) in t.iter().enumerate() {
                    let pulled = jinv.transpose().mul(&tc.mul(&jinv));
                    acc = acc.add(&pulled.scale(jinv.get(a, c)));
                }
                *ha = acc.scale(-1.0);
            }
            let hess_xi = self.basis.hessians_unchecked(&xi);
            for (i, &node) in conn.iter().enumerate() {
                // Hessian of shape function i in physical coordinates
                let mut hx = jinv.transpose().mul(&hess_xi[i].mul(&jinv));
                for a in 0..d {
                    hx = hx.add(&hinv[a].scale(grads_xi[i].get(a)));
                }
                for j in 0..d {
                    for k in 0..d {
                        d2l[j][k] = d2l[j][k].add(&self.logs[node].scale(hx.get(j, k)));
                    }
                }
            }
        }

        let want_hess = derivative_order >= 2;
        let (grad, hess, jittered) = exp_derivatives(&l, &dl, &d2l, want_hess)?;
        eval.grad = Some(grad);
        eval.hess = if want_hess { Some(hess) } else { None };
        eval.jittered = jittered;
        Ok(eval)
    }
}

fn min_barycentric(xi: &SmallVec) -> f64 {
    let mut b0 = 1.0;
    let mut min = f64::INFINITY;
    for c in 0..xi.d {
        b0 -= xi.get(c);
        min = min.min(xi.get(c));
    }
    min.min(b0)
}

/// Euclidean projection onto the closed master simplex, in barycentric form.
fn clamp_to_simplex(xi: &SmallVec) -> SmallVec {
    let d = xi.d;
    let mut bary = [0.0f64; 4];
    let mut b0 = 1.0;
    for c in 0..d {
        bary[c + 1] = xi.get(c);
        b0 -= xi.get(c);
    }
    bary[0] = b0;
    // project the barycentric vector onto the probability simplex
    let n = d + 1;
    let mut sorted: Vec<f64> = bary[..n].to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
        }
    }
    let mut out = SmallVec::zero(d);
    for c in 0..d {
        out.set(c, (bary[c + 1] - theta).max(0.0));
    }
    // renormalize tiny drift
    let mut s = 0.0;
    for c in 0..d {
        s += out.get(c);
    }
    if s > 1.0 {
        out = out.scale(1.0 / s);
    }
    out
}

// ---------------------------------------------------------------------------
// Eigen-decomposition derivatives
// ---------------------------------------------------------------------------

/// First and second derivatives of the eigen-decomposition of a symmetric
/// matrix field: eigenvalues, eigenvectors, and their derivatives with
/// respect to `d` external parameters.
#[derive(Debug, Clone)]
pub struct EigenDerivatives {
    pub d: usize,
    pub values: SmallVec,
    /// Eigenvectors as matrix columns.
    pub vectors: SmallMat,
    /// `dvalues[j]` has entry `l` = d lambda_l / d x_j.
    pub dvalues: [SmallVec; 3],
    /// `dvectors[j][l]` = d u_l / d x_j.
    pub dvectors: [[SmallVec; 3]; 3],
    pub d2values: [[SmallVec; 3]; 3],
    pub d2vectors: [[[SmallVec; 3]; 3]; 3],
}

/// Derivatives of eigenvalues/eigenvectors of a symmetric matrix `L` given
/// the derivatives of `L` itself. Requires a simple spectrum: the minimum
/// eigenvalue gap must exceed `gap_tol`.
pub fn eig_derivatives(
    l: &SmallMat,
    dl: &MatGrad,
    d2l: &MatHess,
    gap_tol: f64,
) -> Result<EigenDerivatives> {
    let d = l.d;
    let eig = sym_eigen(l);
    // gap check (only needed when the derivative matrices are nonzero)
    let mut min_gap = f64::INFINITY;
    for a in 0..d {
        for b in (a + 1)..d {
            min_gap = min_gap.min((eig.values.get(a) - eig.values.get(b)).abs());
        }
    }
    let dl_scale: f64 = (0..d).map(|j| dl[j].frobenius()).sum();
    if d > 1 && min_gap < gap_tol && dl_scale > 0.0 {
        return Err(Error::DegenerateSpectrum {
            gap: min_gap,
            tolerance: gap_tol,
        });
    }

    let mut out = EigenDerivatives {
        d,
        values: eig.values,
        vectors: eig.vectors,
        dvalues: [SmallVec::zero(d); 3],
        dvectors: [[SmallVec::zero(d); 3]; 3],
        d2values: [[SmallVec::zero(d); 3]; 3],
        d2vectors: [[[SmallVec::zero(d); 3]; 3]; 3],
    };

    // Moore-Penrose pseudo-inverse of L_l = L - lambda_l I from the
    // eigen-decomposition, with a relative singular-value cutoff.
    let pinv = |lidx: usize| -> SmallMat {
        let lam = eig.values.get(lidx);
        let mut fro = 0.0;
        for m in 0..d {
            let s = eig.values.get(m) - lam;
            fro += s * s;
        }
        let cutoff = 1e-10 * fro.sqrt();
        let mut p = SmallMat::zero(d);
        for m in 0..d {
            let s = eig.values.get(m) - lam;
            if s.abs() > cutoff {
                let u = eig.vectors.col(m);
                p = p.add(&u.outer(&u).scale(1.0 / s));
            }
        }
        p
    };

    for lidx in 0..d {
        let u = eig.vectors.col(lidx);
        let lp = pinv(lidx);
        // first order
        for j in 0..d {
            let dlam = u.dot(&dl[j].mul_vec(&u));
            out.dvalues[j].set(lidx, dlam);
            // dL_l = dL - dlam I; L_l^+ u = 0 so the dlam I term drops
            let du = lp.mul_vec(&dl[j].mul_vec(&u)).scale(-1.0);
            out.dvectors[j][lidx] = du;
        }
        // second order
        for j in 0..d {
            for k in 0..d {
                let dlj = out.dvalues[j].get(lidx);
                let dlk = out.dvalues[k].get(lidx);
                let duj = out.dvectors[j][lidx];
                let duk = out.dvectors[k][lidx];
                // dL_l = dL - dlam_l I
                let dlk_mat = dl[k].sub(&SmallMat::identity(d).scale(dlk));
                let dlj_mat = dl[j].sub(&SmallMat::identity(d).scale(dlj));
                let rhs = dlk_mat
                    .mul_vec(&duj)
                    .add(&dlj_mat.mul_vec(&duk))
                    .add(&d2l[j][k].mul_vec(&u));
                let d2lam = u.dot(&rhs);
                out.d2values[j][k].set(lidx, d2lam);
                // d2L_l = d2L - d2lam I; again the identity term is
                // annihilated by L_l^+ acting next to u
                let d2u = lp
                    .mul_vec(&rhs)
                    .scale(-1.0)
                    .sub(&u.scale(duj.dot(&duk)));
                out.d2vectors[j][k][lidx] = d2u;
            }
        }
    }
    Ok(out)
}

/// Derivatives of `exp(L)` given derivatives of `L`, via the eigenvalue
/// decomposition. Falls back to a deterministic diagonal jitter when the
/// spectrum is degenerate; the returned flag records the event.
pub fn exp_derivatives(
    l: &SmallMat,
    dl: &MatGrad,
    d2l: &MatHess,
    want_hess: bool,
) -> Result<(MatGrad, MatHess, bool)> {
    let d = l.d;
    let norm = l.frobenius();
    let gap_tol = 1e-8 * norm;
    let (eigd, jittered) = match eig_derivatives(l, dl, d2l, gap_tol) {
        Ok(e) => (e, false),
        Err(Error::DegenerateSpectrum { .. }) => {
            let mut lj = *l;
            let eps = 1e-10 * norm.max(1e-300);
            for c in 0..d {
                lj.add_to(c, c, (c as f64 + 1.0) * eps);
            }
            (eig_derivatives(&lj, dl, d2l, 0.0)?, true)
        }
        Err(e) => return Err(e),
    };

    // Assemble exp-derivatives from the eigen data:
    //   M = U expD U^T
    let u = eigd.vectors;
    let expd: Vec<f64> = (0..d).map(|i| eigd.values.get(i).exp()).collect();
    let mut mexp = SmallMat::zero(d);
    for i in 0..d {
        mexp.set(i, i, expd[i]);
    }
    let du = |j: usize| -> SmallMat {
        let mut m = SmallMat::zero(d);
        for lc in 0..d {
            m.set_col(lc, &eigd.dvectors[j][lc]);
        }
        m
    };
    let d2u = |j: usize, k: usize| -> SmallMat {
        let mut m = SmallMat::zero(d);
        for lc in 0..d {
            m.set_col(lc, &eigd.d2vectors[j][k][lc]);
        }
        m
    };
    let dexpd = |j: usize| -> SmallMat {
        // exp(D) dD
        let mut m = SmallMat::zero(d);
        for i in 0..d {
            m.set(i, i, expd[i] * eigd.dvalues[j].get(i));
        }
        m
    };
    let d2expd = |j: usize, k: usize| -> SmallMat {
        // exp(D) (dD_k dD_j + d2D_jk)
        let mut m = SmallMat::zero(d);
        for i in 0..d {
            m.set(
                i,
                i,
                expd[i]
                    * (eigd.dvalues[k].get(i) * eigd.dvalues[j].get(i)
                        + eigd.d2values[j][k].get(i)),
            );
        }
        m
    };

    let ut = u.transpose();
    let mut grad = zero_grad(d);
    for (j, gj) in grad.iter_mut().enumerate().take(d) {
        let duj = du(j);
        *gj = duj
            .mul(&mexp.mul(&ut))
            .add(&u.mul(&dexpd(j).mul(&ut)))
            .add(&u.mul(&mexp.mul(&duj.transpose())));
    }

    let mut hess = zero_hess(d);
    if want_hess {
        for j in 0..d {
            for k in 0..d {
                let duj = du(j);
                let duk = du(k);
                let d2ujk = d2u(j, k);
                let dej = dexpd(j);
                let dek = dexpd(k);
                let mut h = d2ujk.mul(&mexp.mul(&ut));
                h = h.add(&duk.mul(&dej.mul(&ut)));
                h = h.add(&duk.mul(&mexp.mul(&duj.transpose())));
                h = h.add(&duj.mul(&dek.mul(&ut)));
                h = h.add(&u.mul(&d2expd(j, k).mul(&ut)));
                h = h.add(&u.mul(&dek.mul(&duj.transpose())));
                h = h.add(&duj.mul(&mexp.mul(&duk.transpose())));
                h = h.add(&u.mul(&dej.mul(&duk.transpose())));
                h = h.add(&u.mul(&mexp.mul(&d2ujk.transpose())));
                hess[j][k] = h;
            }
        }
    }
    Ok((grad, hess, jittered))
}

// ---------------------------------------------------------------------------
// Analytic metrics
// ---------------------------------------------------------------------------

/// Closed-form metric providers used in validation and fixtures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "selector", rename_all = "kebab-case")]
pub enum AnalyticMetric {
    /// `M = grad(phi)^T D grad(phi)` with a layer along the deformed x-axis.
    BoundaryLayer2d { h_min: f64, alpha: f64 },
    /// Layer along the deformed xy-plane.
    BoundaryLayer3d { h_min: f64, alpha: f64 },
    /// `M = I / h_min^2`.
    Constant { dimension: usize, h_min: f64 },
}

impl AnalyticMetric {
    pub fn dimension(&self) -> usize {
        match self {
            AnalyticMetric::BoundaryLayer2d { .. } => 2,
            AnalyticMetric::BoundaryLayer3d { .. } => 3,
            AnalyticMetric::Constant { dimension, .. } => *dimension,
        }
    }

    /// Metric, gradient, and Hessian at a point by exact differentiation.
    pub fn evaluate(&self, p: &SmallVec, derivative_order: usize) -> Result<MetricEvaluation> {
        let d = self.dimension();
        match self {
            AnalyticMetric::Constant { h_min, .. } => {
                let m = SmallMat::identity(d).scale(1.0 / (h_min * h_min));
                let mut e = MetricEvaluation::value_only(m);
                if derivative_order >= 1 {
                    e.grad = Some(zero_grad(d));
                }
                if derivative_order >= 2 {
                    e.hess = Some(zero_hess(d));
                }
                Ok(e)
            }
            AnalyticMetric::BoundaryLayer2d { h_min, alpha }
            | AnalyticMetric::BoundaryLayer3d { h_min, alpha } => {
                let (u, du, d2u, d3u) = deformation_jets(self, p);
                boundary_layer_metric(d, *h_min, *alpha, u, &du, &d2u, &d3u, derivative_order)
            }
        }
    }
}

/// Value and first three derivative tensors of the deformed layer coordinate.
#[allow(clippy::type_complexity)]
fn deformation_jets(
    spec: &AnalyticMetric,
    p: &SmallVec,
) -> (f64, [f64; 3], [[f64; 3]; 3], [[[f64; 3]; 3]; 3]) {
    let tau = 2.0 * std::f64::consts::PI;
    let mut du = [0.0f64; 3];
    let mut d2u = [[0.0f64; 3]; 3];
    let mut d3u = [[[0.0f64; 3]; 3]; 3];
    match spec {
        AnalyticMetric::BoundaryLayer2d { .. } => {
            let c = (100.0 + tau * tau).sqrt();
            let x = p.get(0);
            let y = p.get(1);
            let u = (10.0 * y - (tau * x).cos()) / c;
            du[0] = tau * (tau * x).sin() / c;
            du[1] = 10.0 / c;
            d2u[0][0] = tau * tau * (tau * x).cos() / c;
            d3u[0][0][0] = -tau * tau * tau * (tau * x).sin() / c;
            (u, du, d2u, d3u)
        }
        AnalyticMetric::BoundaryLayer3d { .. } => {
            let c = (100.0 + 2.0 * tau * tau).sqrt();
            let x = p.get(0);
            let y = p.get(1);
            let z = p.get(2);
            let (sx, cx) = (tau * x).sin_cos();
            let (sy, cy) = (tau * y).sin_cos();
            let u = (10.0 * z - cx * cy) / c;
            du[0] = tau * sx * cy / c;
            du[1] = tau * cx * sy / c;
            du[2] = 10.0 / c;
            d2u[0][0] = tau * tau * cx * cy / c;
            d2u[0][1] = -tau * tau * sx * sy / c;
            d2u[1][0] = d2u[0][1];
            d2u[1][1] = tau * tau * cx * cy / c;
            let t3 = tau * tau * tau;
            d3u[0][0][0] = -t3 * sx * cy / c;
            d3u[0][0][1] = -t3 * cx * sy / c;
            d3u[0][1][1] = -t3 * sx * cy / c;
            d3u[1][1][1] = -t3 * cx * sy / c;
            // symmetrize the remaining permutations
            d3u[0][1][0] = d3u[0][0][1];
            d3u[1][0][0] = d3u[0][0][1];
            d3u[1][0][1] = d3u[0][1][1];
            d3u[1][1][0] = d3u[0][1][1];
            (u, du, d2u, d3u)
        }
        AnalyticMetric::Constant { .. } => unreachable!(),
    }
}

/// `M = P + g(u) grad(u) (x) grad(u)` with `P = diag(1, .., 1, 0)` and
/// `g = 1 / h(u)^2`, `h(t) = h_min + alpha |t|`.
#[allow(clippy::too_many_arguments)]
fn boundary_layer_metric(
    d: usize,
    h_min: f64,
    alpha: f64,
    u: f64,
    du: &[f64; 3],
    d2u: &[[f64; 3]; 3],
    d3u: &[[[f64; 3]; 3]; 3],
    order: usize,
) -> Result<MetricEvaluation> {
    let h = h_min + alpha * u.abs();
    let s = if u >= 0.0 { 1.0 } else { -1.0 };
    let g = 1.0 / (h * h);
    let gp = -2.0 * alpha * s / (h * h * h);
    let gpp = 6.0 * alpha * alpha / (h * h * h * h);

    let mut m = SmallMat::zero(d);
    for a in 0..d {
        for b in 0..d {
            let p_ab = if a == b && a < d - 1 { 1.0 } else { 0.0 };
            m.set(a, b, p_ab + g * du[a] * du[b]);
        }
    }
    let mut eval = MetricEvaluation::value_only(m);
    if order == 0 {
        return Ok(eval);
    }
    let mut grad = zero_grad(d);
    for (k, gk) in grad.iter_mut().enumerate().take(d) {
        let mut gm = SmallMat::zero(d);
        for a in 0..d {
            for b in 0..d {
                gm.set(
                    a,
                    b,
                    gp * du[k] * du[a] * du[b] + g * (d2u[a][k] * du[b] + du[a] * d2u[b][k]),
                );
            }
        }
        *gk = gm;
    }
    eval.grad = Some(grad);
    if order < 2 {
        return Ok(eval);
    }
    let mut hess = zero_hess(d);
    for k in 0..d {
        for l in 0..d {
            let mut hm = SmallMat::zero(d);
            for a in 0..d {
                for b in 0..d {
                    let v = gpp * du[k] * du[l] * du[a] * du[b]
                        + gp * (d2u[k][l] * du[a] * du[b]
                            + du[k] * (d2u[a][l] * du[b] + du[a] * d2u[b][l])
                            + du[l] * (d2u[a][k] * du[b] + du[a] * d2u[b][k]))
                        + g * (d3u[a][k][l] * du[b]
                            + d2u[a][k] * d2u[b][l]
                            + d2u[a][l] * d2u[b][k]
                            + du[a] * d3u[b][k][l]);
                    hm.set(a, b, v);
                }
            }
            hess[k][l] = hm;
        }
    }
    eval.hess = Some(hess);
    Ok(eval)
}

/// max_i sqrt(det(M) / lambda_i^d)
pub fn anisotropic_quotient(m: &SmallMat) -> Result<f64> {
    let d = m.d;
    let eig = sym_eigen(m);
    for i in 0..d {
        if eig.values.get(i) <= 0.0 {
            return Err(Error::Domain("metric is not positive-definite".into()));
        }
    }
    let det: f64 = (0..d).map(|i| eig.values.get(i)).product();
    let mut quo: f64 = 0.0;
    for i in 0..d {
        quo = quo.max((det / eig.values.get(i).powi(d as i32)).sqrt());
    }
    Ok(quo)
}

// ---------------------------------------------------------------------------
// Metric source: discrete field or analytic expression
// ---------------------------------------------------------------------------

/// A provider of point-wise metric evaluations for the distortion machinery.
#[derive(Debug, Clone)]
pub enum MetricSource {
    Field(MetricField),
    Analytic(AnalyticMetric),
}

impl MetricSource {
    pub fn evaluate(&self, p: &SmallVec, derivative_order: usize) -> Result<MetricEvaluation> {
        match self {
            MetricSource::Field(f) => f.interpolate(p, derivative_order),
            MetricSource::Analytic(a) => a.evaluate(p, derivative_order),
        }
    }
}

// ---------------------------------------------------------------------------
// Metric file I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct MetricFileRaw {
    background_mesh: serde_json::Value,
    node_metrics: Vec<Vec<f64>>,
}

/// Load a metric file; `background_mesh` may be an inline mesh object or a
/// path relative to the metric file.
pub fn load_metric(path: &Path) -> Result<MetricField> {
    let text = std::fs::read_to_string(path)?;
    let raw: MetricFileRaw = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mesh = match &raw.background_mesh {
        serde_json::Value::String(rel) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            crate::mesh::load_mesh(&base.join(rel))?
        }
        obj => crate::mesh::mesh_from_value(obj, &path.display().to_string())?,
    };
    let d = mesh.dimension;
    let expect = d * (d + 1) / 2;
    let mats: Result<Vec<SmallMat>> = raw
        .node_metrics
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != expect {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    context: format!("node_metrics[{i}]"),
                    message: format!("expected {expect} entries, got {}", v.len()),
                });
            }
            let mut m = SmallMat::zero(d);
            let mut it = v.iter();
            for a in 0..d {
                for b in a..d {
                    let x = *it.next().unwrap();
                    m.set(a, b, x);
                    m.set(b, a, x);
                }
            }
            Ok(m)
        })
        .collect();
    MetricField::from_spd(mesh, &mats?)
}

/// Save nodal SPD matrices next to a background mesh reference.
pub fn save_metric(
    background_mesh_ref: &str,
    metrics: &[SmallMat],
    d: usize,
    path: &Path,
) -> Result<()> {
    let node_metrics: Vec<Vec<f64>> = metrics
        .iter()
        .map(|m| {
            let mut v = Vec::with_capacity(d * (d + 1) / 2);
            for a in 0..d {
                for b in a..d {
                    v.push(m.get(a, b));
                }
            }
            v
        })
        .collect();
    let raw = MetricFileRaw {
        background_mesh: serde_json::Value::String(background_mesh_ref.to_string()),
        node_metrics,
    };
    std::fs::write(path, serde_json::to_string_pretty(&raw)?)?;
    Ok(())
}

#[cfg(test)]
mod tests;
