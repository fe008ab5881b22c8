//! Metric-aware point-wise and elemental distortion, the mesh functional
//! F = sum_E int (N0)^2 over the equilateral element, and its analytic
//! gradient and Hessian with respect to node coordinates.
//!
//! Derivatives are organized around the per-quadrature-point variables
//! z = (Dphi_P, p): the physical-map Jacobian and the physical point, both
//! linear in the node coordinates. The dense derivative tensors of N0^2 in z
//! (at most 12 variables) are assembled into element contributions through
//! the basis values and gradients.

use crate::basis::{EquilateralMap, SimplexBasis};
use crate::error::{Error, Result};
use crate::linalg::{SmallMat, SmallVec};
use crate::mesh::{DofMap, HighOrderMesh};
use crate::metric::{MetricEvaluation, MetricSource};
use crate::quadrature::QuadratureRule;
use crate::sparse::{CsrMatrix, SparseBuilder};

/// Point-wise regularized distortion at one sample.
#[derive(Debug, Clone, Copy)]
pub struct DistortionSample {
    /// N0; +inf when sigma <= 0.
    pub distortion: f64,
    pub sigma: f64,
    pub sigma0: f64,
    /// True when the regularization clamped a non-positive sigma.
    pub regularized: bool,
    /// 1 / N0, zero for inverted samples.
    pub quality: f64,
}

/// `N0 = tr(D^T M D) / (d sigma0^{2/d})` with `sigma = det(D) sqrt(det M)`.
pub fn pointwise_distortion(dphi_e: &SmallMat, m: &SmallMat) -> DistortionSample {
    let d = dphi_e.d;
    let a = dphi_e.transpose().mul(&m.mul(dphi_e)).trace();
    let det_m = m.det();
    let sigma = dphi_e.det() * det_m.max(0.0).sqrt();
    let sigma0 = 0.5 * (sigma + sigma.abs());
    if sigma0 <= 0.0 || det_m <= 0.0 {
        return DistortionSample {
            distortion: f64::INFINITY,
            sigma,
            sigma0: 0.0,
            regularized: true,
            quality: 0.0,
        };
    }
    let n0 = a / (d as f64 * sigma0.powf(2.0 / d as f64));
    DistortionSample {
        distortion: n0,
        sigma,
        sigma0,
        regularized: false,
        quality: 1.0 / n0,
    }
}

/// Elemental distortion (quadrature average of N0) and its quality.
#[derive(Debug, Clone)]
pub struct ElementQuality {
    pub distortion: f64,
    pub quality: f64,
    pub min_pointwise_quality: f64,
    pub samples: Vec<DistortionSample>,
}

/// Finite-or-infinite functional value with optional derivatives on the
/// free DOFs.
#[derive(Debug, Clone)]
pub enum FunctionalValue {
    Finite {
        value: f64,
        gradient: Option<Vec<f64>>,
        hessian: Option<CsrMatrix>,
    },
    Infinite,
}

impl FunctionalValue {
    pub fn value(&self) -> f64 {
        match self {
            FunctionalValue::Finite { value, .. } => *value,
            FunctionalValue::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, FunctionalValue::Finite { .. })
    }
}

/// Basis data tabulated at the quadrature points of a rule.
#[derive(Debug, Clone)]
pub struct TabulatedBasis {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<SmallVec>>,
}

impl TabulatedBasis {
    pub fn new(basis: &SimplexBasis, rule: &QuadratureRule) -> Self {
        let values = rule
            .points
            .iter()
            .map(|q| basis.evaluate_unchecked(q))
            .collect();
        let grads = rule
            .points
            .iter()
            .map(|q| basis.gradients_unchecked(q))
            .collect();
        Self { values, grads }
    }
}

/// Shared evaluation context for one (dimension, degree, exactness) triple.
pub struct DistortionAssembler {
    pub basis: SimplexBasis,
    pub rule: QuadratureRule,
    pub equilateral: EquilateralMap,
    tab: TabulatedBasis,
    /// K = inverse equilateral Jacobian; W = K K^T.
    k: SmallMat,
    w: SmallMat,
    det_tri: f64,
    /// When false, the metric is treated as frozen (quasi-Newton mode).
    pub metric_derivatives: bool,
}

impl DistortionAssembler {
    pub fn new(d: usize, degree: usize, exactness: usize) -> Result<Self> {
        let basis = SimplexBasis::new(d, degree)?;
        let rule = crate::quadrature::quadrature_for(d, exactness)?;
        let equilateral = EquilateralMap::new(d)?;
        let tab = TabulatedBasis::new(&basis, &rule);
        let k = equilateral.inverse;
        let w = k.mul(&k.transpose());
        let det_tri = equilateral.det;
        Ok(Self {
            basis,
            rule,
            equilateral,
            tab,
            k,
            w,
            det_tri,
            metric_derivatives: true,
        })
    }

    /// Default exactness for the distortion integral: 2 p d.
    pub fn with_default_exactness(d: usize, degree: usize) -> Result<Self> {
        Self::new(d, degree, (2 * degree * d).max(2))
    }

    /// Distortion sample at one quadrature point of one element.
    fn sample(
        &self,
        coords: &[SmallVec],
        q: usize,
        source: &MetricSource,
        order: usize,
    ) -> Result<(SmallMat, SmallVec, MetricEvaluation)> {
        let d = self.basis.d;
        let vals = &self.tab.values[q];
        let grads = &self.tab.grads[q];
        let mut z = SmallMat::zero(d);
        let mut p = SmallVec::zero(d);
        for (i, x) in coords.iter().enumerate() {
            for c in 0..d {
                p.set(c, p.get(c) + vals[i] * x.get(c));
                for e in 0..d {
                    z.add_to(c, e, x.get(c) * grads[i].get(e));
                }
            }
        }
        let metric_order = if self.metric_derivatives { order } else { 0 };
        let eval = source.evaluate(&p, metric_order)?;
        Ok((z, p, eval))
    }

    /// Elemental distortion eta (average of N0) and quality 1/eta.
    pub fn element_quality(
        &self,
        mesh: &HighOrderMesh,
        element: usize,
        source: &MetricSource,
    ) -> Result<ElementQuality> {
        let coords = mesh.element_coords(element);
        let mut samples = Vec::with_capacity(self.rule.len());
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut inverted = false;
        let mut min_q = f64::INFINITY;
        for q in 0..self.rule.len() {
            let (z, _, eval) = self.sample(&coords, q, source, 0)?;
            let dphi_e = z.mul(&self.k);
            let s = pointwise_distortion(&dphi_e, &eval.m);
            inverted |= !s.distortion.is_finite();
            min_q = min_q.min(s.quality);
            acc += self.rule.weights[q] * s.distortion;
            wsum += self.rule.weights[q];
            samples.push(s);
        }
        let (distortion, quality) = if inverted {
            (f64::INFINITY, 0.0)
        } else {
            let eta = acc / wsum;
            (eta, 1.0 / eta)
        };
        Ok(ElementQuality {
            distortion,
            quality,
            min_pointwise_quality: if inverted { 0.0 } else { min_q },
            samples,
        })
    }

    /// F and its derivatives over the free DOFs.
    /// `derivative_order`: 0 value only, 1 adds the gradient, 2 the Hessian.
    pub fn functional(
        &self,
        mesh: &HighOrderMesh,
        source: &MetricSource,
        dofs: &DofMap,
        derivative_order: usize,
    ) -> Result<FunctionalValue> {
        let d = self.basis.d;
        let n = self.basis.node_count();
        let nz = d * d + d;
        let mut total = 0.0;
        let mut gradient = vec![0.0f64; dofs.n_free()];
        let mut builder = SparseBuilder::new(dofs.n_free());

        let mut egrad = vec![0.0f64; n * d];
        let mut ehess = vec![0.0f64; (n * d) * (n * d)];

        for element in 0..mesh.element_count() {
            let coords = mesh.element_coords(element);
            if derivative_order > 0 {
                egrad.iter_mut().for_each(|v| *v = 0.0);
                ehess.iter_mut().for_each(|v| *v = 0.0);
            }
            for q in 0..self.rule.len() {
                let (z, _, eval) = self.sample(&coords, q, source, derivative_order)?;
                let weight = self.rule.weights[q] * self.det_tri;
                let point = PointDerivatives::new(self, &z, &eval, derivative_order)?;
                let f = match point {
                    PointValue::Infinite => return Ok(FunctionalValue::Infinite),
                    PointValue::Finite(f) => f,
                };
                total += weight * f.value;
                if derivative_order == 0 {
                    continue;
                }
                // assemble z-space derivatives into element DOFs
                let vals = &self.tab.values[q];
                let grads = &self.tab.grads[q];
                for i in 0..n {
                    for c in 0..d {
                        let mut g = f.grad[d * d + c] * vals[i];
                        for e in 0..d {
                            g += f.grad[c * d + e] * grads[i].get(e);
                        }
                        egrad[i * d + c] += weight * g;
                    }
                }
                if derivative_order >= 2 {
                    // t-vector of DOF (i, c) touches z-rows (c, *) and p_c
                    for i in 0..n {
                        for c in 0..d {
                            // u = H t_(i,c)
                            let mut u = [0.0f64; 12];
                            for (r, ur) in u.iter_mut().enumerate().take(nz) {
                                let mut s = f.hess[r][d * d + c] * vals[i];
                                for e in 0..d {
                                    s += f.hess[r][c * d + e] * grads[i].get(e);
                                }
                                *ur = s;
                            }
                            let row = i * d + c;
                            for j in 0..n {
                                for c2 in 0..d {
                                    let mut s = u[d * d + c2] * vals[j];
                                    for e2 in 0..d {
                                        s += u[c2 * d + e2] * grads[j].get(e2);
                                    }
                                    ehess[row * (n * d) + j * d + c2] += weight * s;
                                }
                            }
                        }
                    }
                }
            }
            if derivative_order > 0 {
                let conn = &mesh.elements[element];
                for i in 0..n {
                    for c in 0..d {
                        let Some(gi) = dofs.dof(conn[i], c) else {
                            continue;
                        };
                        gradient[gi as usize] += egrad[i * d + c];
                        if derivative_order >= 2 {
                            for j in 0..n {
                                for c2 in 0..d {
                                    let Some(gj) = dofs.dof(conn[j], c2) else {
                                        continue;
                                    };
                                    builder.add(
                                        gi as usize,
                                        gj as usize,
                                        ehess[(i * d + c) * (n * d) + j * d + c2],
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(FunctionalValue::Finite {
            value: total,
            gradient: (derivative_order >= 1).then_some(gradient),
            hessian: (derivative_order >= 2).then(|| builder.build()),
        })
    }
}

/// Dense derivatives of f = N0^2 with respect to z = (Z, p).
enum PointValue {
    Infinite,
    Finite(PointDerivs),
}

struct PointDerivs {
    value: f64,
    grad: [f64; 12],
    hess: [[f64; 12]; 12],
}

struct PointDerivatives;

impl PointDerivatives {
    fn new(
        asm: &DistortionAssembler,
        z: &SmallMat,
        eval: &MetricEvaluation,
        order: usize,
    ) -> Result<PointValue> {
        let d = z.d;
        let nz = d * d + d;
        let m = eval.m;
        let det_k = asm.k.det();

        // value pieces
        let zw = z.mul(&asm.w);
        let y = zw.mul(&z.transpose()); // Z W Z^T
        let a_val = m.inner(&y);
        let s_val = z.det();
        let det_m = m.det();
        if det_m <= 0.0 {
            return Err(Error::Numeric("metric determinant not positive".into()));
        }
        let m_val = det_m.sqrt();
        let sigma = det_k * s_val * m_val;
        if sigma <= 0.0 {
            return Ok(PointValue::Infinite);
        }
        let e = 2.0 / d as f64;
        let u_val = sigma.powf(e);
        let n0 = a_val / (d as f64 * u_val);
        let mut out = PointDerivs {
            value: n0 * n0,
            grad: [0.0; 12],
            hess: [[0.0; 12]; 12],
        };
        if order == 0 {
            return Ok(PointValue::Finite(out));
        }

        let zero_mat = SmallMat::zero(d);
        let grad_m: [SmallMat; 3] = match &eval.grad {
            Some(g) => *g,
            None => [zero_mat; 3],
        };
        let hess_m: [[SmallMat; 3]; 3] = match &eval.hess {
            Some(h) => *h,
            None => [[zero_mat; 3]; 3],
        };

        // --- A = tr(Z^T M Z W) ---
        let mut da = [0.0f64; 12];
        let mzw = m.mul(&zw);
        for c in 0..d {
            for e2 in 0..d {
                da[c * d + e2] = 2.0 * mzw.get(c, e2);
            }
        }
        for k in 0..d {
            da[d * d + k] = grad_m[k].inner(&y);
        }

        // --- s = det Z ---
        let cof = z.cofactor();
        let mut ds = [0.0f64; 12];
        for c in 0..d {
            for e2 in 0..d {
                ds[c * d + e2] = cof.get(c, e2);
            }
        }

        // --- m = sqrt(det M) ---
        let minv = m
            .inverse()
            .ok_or_else(|| Error::Numeric("metric not invertible".into()))?;
        let mut dm = [0.0f64; 12];
        let mut tr_minv_dm = [0.0f64; 3];
        for k in 0..d {
            tr_minv_dm[k] = minv.inner(&grad_m[k]);
            dm[d * d + k] = 0.5 * m_val * tr_minv_dm[k];
        }

        // --- sigma, u, N0, f first derivatives ---
        let mut dsigma = [0.0f64; 12];
        for r in 0..nz {
            dsigma[r] = det_k * (ds[r] * m_val + s_val * dm[r]);
        }
        let up = e * sigma.powf(e - 1.0);
        let mut du = [0.0f64; 12];
        for r in 0..nz {
            du[r] = up * dsigma[r];
        }
        let du_inv = 1.0 / (d as f64 * u_val);
        let mut dn0 = [0.0f64; 12];
        for r in 0..nz {
            dn0[r] = da[r] * du_inv - a_val * du[r] * du_inv / u_val;
        }
        for r in 0..nz {
            out.grad[r] = 2.0 * n0 * dn0[r];
        }
        if order < 2 {
            return Ok(PointValue::Finite(out));
        }

        // --- second derivatives ---
        let mut d2a = [[0.0f64; 12]; 12];
        for c in 0..d {
            for e2 in 0..d {
                for c2 in 0..d {
                    for e3 in 0..d {
                        d2a[c * d + e2][c2 * d + e3] = 2.0 * m.get(c, c2) * asm.w.get(e3, e2);
                    }
                }
            }
        }
        for k in 0..d {
            let gzw = grad_m[k].mul(&zw);
            for c in 0..d {
                for e2 in 0..d {
                    let v = 2.0 * gzw.get(c, e2);
                    d2a[c * d + e2][d * d + k] = v;
                    d2a[d * d + k][c * d + e2] = v;
                }
            }
            for l in 0..d {
                d2a[d * d + k][d * d + l] = hess_m[k][l].inner(&y);
            }
        }

        let mut d2s = [[0.0f64; 12]; 12];
        match d {
            2 => {
                d2s[0][3] = 1.0;
                d2s[3][0] = 1.0;
                d2s[1][2] = -1.0;
                d2s[2][1] = -1.0;
            }
            3 => {
                // eps_{c c' c''} eps_{e e' e''} Z[c''][e'']
                const EPS: [(usize, usize, usize, f64); 6] = [
                    (0, 1, 2, 1.0),
                    (1, 2, 0, 1.0),
                    (2, 0, 1, 1.0),
                    (0, 2, 1, -1.0),
                    (2, 1, 0, -1.0),
                    (1, 0, 2, -1.0),
                ];
                for &(c, c2, c3, sc) in &EPS {
                    for &(e1, e2, e3, se) in &EPS {
                        d2s[c * 3 + e1][c2 * 3 + e2] += sc * se * z.get(c3, e3);
                    }
                }
            }
            _ => {}
        }

        let mut d2m = [[0.0f64; 12]; 12];
        for k in 0..d {
            for l in 0..d {
                let t1 = 0.25 * m_val * tr_minv_dm[k] * tr_minv_dm[l];
                let t2 = -0.5 * m_val * minv.mul(&grad_m[l]).mul(&minv.mul(&grad_m[k])).trace();
                let t3 = 0.5 * m_val * minv.inner(&hess_m[k][l]);
                d2m[d * d + k][d * d + l] = t1 + t2 + t3;
            }
        }

        let mut d2sigma = [[0.0f64; 12]; 12];
        for r in 0..nz {
            for t in 0..nz {
                d2sigma[r][t] = det_k
                    * (d2s[r][t] * m_val + ds[r] * dm[t] + ds[t] * dm[r] + s_val * d2m[r][t]);
            }
        }

        let upp = e * (e - 1.0) * sigma.powf(e - 2.0);
        let mut d2u = [[0.0f64; 12]; 12];
        for r in 0..nz {
            for t in 0..nz {
                d2u[r][t] = upp * dsigma[r] * dsigma[t] + up * d2sigma[r][t];
            }
        }

        // N0 = A / (d u)
        let mut d2n0 = [[0.0f64; 12]; 12];
        for r in 0..nz {
            for t in 0..nz {
                d2n0[r][t] = d2a[r][t] * du_inv
                    - (da[r] * du[t] + da[t] * du[r]) * du_inv / u_val
                    + 2.0 * a_val * du[r] * du[t] * du_inv / (u_val * u_val)
                    - a_val * d2u[r][t] * du_inv / u_val;
            }
        }
        for r in 0..nz {
            for t in 0..nz {
                out.hess[r][t] = 2.0 * (dn0[r] * dn0[t] + n0 * d2n0[r][t]);
            }
        }
        Ok(PointValue::Finite(out))
    }
}
