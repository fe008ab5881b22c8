//! Derivative bundles for the implicit-function algebra.
//!
//! Three carriers move through the assembly:
//!  - `Raw4`: value and raw derivatives up to third order, used by the
//!    hyperplane folds of convex hulls (smooth away from hull corners);
//!  - `Det4`: the determinant layer's value-scaled stack
//!    `(gamma, grad, gamma hess, gamma^2 third)`, exact polynomials with no
//!    divisions, total on the patch itself;
//!  - `Bundle3`: the common currency `(v, grad v, v hess v)` consumed by the
//!    penalty term, closed under trimming and r-conjunction.
//!
//! At exact joint zeros of the square-root combinations the derivative
//! contributions are replaced by their zero subgradient convention; values
//! are always exact.

use crate::linalg::{SmallMat, SmallVec};

/// Symmetric third-derivative tensor: `t[l].get(j, k) = d^3 f / dx_j dx_k dx_l`.
pub type Third = [SmallMat; 3];

pub fn zero_third(d: usize) -> Third {
    [SmallMat::zero(d); 3]
}

/// Value with raw derivatives to third order.
#[derive(Debug, Clone, Copy)]
pub struct Raw4 {
    pub d: usize,
    pub v: f64,
    pub g: SmallVec,
    pub h: SmallMat,
    pub t: Third,
}

impl Raw4 {
    pub fn hyperplane(normal: &SmallVec, offset: f64, x: &SmallVec) -> Self {
        let d = normal.d;
        Raw4 {
            d,
            v: normal.dot(x) + offset,
            g: *normal,
            h: SmallMat::zero(d),
            t: zero_third(d),
        }
    }
}

/// Value, raw gradient, and value-scaled Hessian `s = v * hess(v)`.
#[derive(Debug, Clone, Copy)]
pub struct Bundle3 {
    pub d: usize,
    pub v: f64,
    pub g: SmallVec,
    pub s: SmallMat,
}

impl Bundle3 {
    pub fn zero(d: usize) -> Self {
        Bundle3 {
            d,
            v: 0.0,
            g: SmallVec::zero(d),
            s: SmallMat::zero(d),
        }
    }

    /// Gradient of `v^2` (total at the zero set).
    pub fn grad_sq(&self) -> SmallVec {
        self.g.scale(2.0 * self.v)
    }

    /// Hessian of `v^2`: `2 (grad v * grad v + v hess v)` (total).
    pub fn hess_sq(&self) -> SmallMat {
        self.g.outer(&self.g).add(&self.s).scale(2.0)
    }
}

/// Hull-side normalized function: raw Hessian retained for trimming.
#[derive(Debug, Clone, Copy)]
pub struct HullBundle {
    pub d: usize,
    pub v: f64,
    pub g: SmallVec,
    pub h: SmallMat,
}

/// Determinant-layer stack: `(gamma, grad gamma, gamma hess gamma,
/// gamma^2 third gamma)`. All entries are polynomial in the point.
#[derive(Debug, Clone, Copy)]
pub struct Det4 {
    pub d: usize,
    pub v: f64,
    pub g: SmallVec,
    /// `gamma * d2 gamma`
    pub vh: SmallMat,
    /// `gamma^2 * d3 gamma`
    pub vt: Third,
}

fn sym_outer(a: &SmallVec, b: &SmallVec) -> SmallMat {
    a.outer(b).add(&b.outer(a))
}

// ---------------------------------------------------------------------------
// Raw r-conjunction (hull assembly)
// ---------------------------------------------------------------------------

/// `f ^ g = f + g - sqrt(f^2 + g^2)` with raw derivatives to third order.
pub fn rconj_raw(f: &Raw4, g: &Raw4) -> Raw4 {
    let d = f.d;
    let s = sqrt_sum_raw(f, g);
    let mut t = zero_third(d);
    for l in 0..d {
        t[l] = f.t[l].add(&g.t[l]).sub(&s.t[l]);
    }
    Raw4 {
        d,
        v: f.v + g.v - s.v,
        g: f.g.add(&g.g).sub(&s.g),
        h: f.h.add(&g.h).sub(&s.h),
        t,
    }
}

/// `sqrt(f^2 + g^2)` with raw derivatives to third order; zero-subgradient
/// convention at the exact joint zero.
fn sqrt_sum_raw(f: &Raw4, g: &Raw4) -> Raw4 {
    let d = f.d;
    let v = f.v.hypot(g.v);
    if v == 0.0 {
        return Raw4 {
            d,
            v,
            g: SmallVec::zero(d),
            h: SmallMat::zero(d),
            t: zero_third(d),
        };
    }
    let grad = f.g.scale(f.v).add(&g.g.scale(g.v)).scale(1.0 / v);
    // s hess(s) = f hess(f) + grad f * grad f + g hess(g) + grad g * grad g
    //             - grad s * grad s
    let hess = f
        .h
        .scale(f.v)
        .add(&f.g.outer(&f.g))
        .add(&g.h.scale(g.v))
        .add(&g.g.outer(&g.g))
        .sub(&grad.outer(&grad))
        .scale(1.0 / v);
    // third derivatives from d_jkl (s^2) / 2
    let mut third = zero_third(d);
    for l in 0..d {
        // sum over the symmetric expansions for each (j, k)
        let mut m = SmallMat::zero(d);
        for j in 0..d {
            for k in 0..d {
                let mut rhs = 0.0;
                // f-part: f_kl f_j + f_k f_jl + f_l f_jk + f f_jkl
                rhs += f.h.get(k, l) * f.g.get(j)
                    + f.g.get(k) * f.h.get(j, l)
                    + f.g.get(l) * f.h.get(j, k)
                    + f.v * f.t[l].get(j, k);
                rhs += g.h.get(k, l) * g.g.get(j)
                    + g.g.get(k) * g.h.get(j, l)
                    + g.g.get(l) * g.h.get(j, k)
                    + g.v * g.t[l].get(j, k);
                // minus the s-products
                rhs -= hess.get(k, l) * grad.get(j)
                    + grad.get(k) * hess.get(j, l)
                    + grad.get(l) * hess.get(j, k);
                m.set(j, k, rhs / v);
            }
        }
        third[l] = m;
    }
    Raw4 {
        d,
        v,
        g: grad,
        h: hess,
        t: third,
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Normalize a raw stack: `gamma_hat = gamma / |grad gamma|`, keeping the raw
/// Hessian (hull side). Returns `None` when the gradient vanishes.
pub fn normalize_raw(f: &Raw4) -> Option<HullBundle> {
    let d = f.d;
    let n = f.g.norm();
    if n <= 1e-300 {
        return None;
    }
    // grad n and hess n
    let gn = f.h.mul_vec(&f.g).scale(1.0 / n);
    let mut hn = SmallMat::zero(d);
    for j in 0..d {
        for k in 0..d {
            let mut s = 0.0;
            for l in 0..d {
                s += f.t[l].get(j, k) * f.g.get(l);
            }
            s += (0..d).map(|l| f.h.get(j, l) * f.h.get(l, k)).sum::<f64>();
            s -= gn.get(j) * gn.get(k);
            hn.set(j, k, s / n);
        }
    }
    let v = f.v / n;
    let g = f.g.sub(&gn.scale(v)).scale(1.0 / n);
    let h = f
        .h
        .sub(&sym_outer(&g, &gn))
        .sub(&hn.scale(v))
        .scale(1.0 / n);
    Some(HullBundle { d, v, g, h })
}

/// Normalize the determinant stack into the value-scaled bundle
/// `(gamma_hat, grad gamma_hat, gamma_hat hess gamma_hat)`.
/// On the patch itself (vanishing gradient) the limit bundle is zero.
pub fn normalize_det(f: &Det4, grad_floor: f64) -> Bundle3 {
    let d = f.d;
    let n = f.g.norm();
    if n <= grad_floor {
        return Bundle3::zero(d);
    }
    let v = f.v / n;
    // gamma_hat grad n = (gamma hess gamma) grad gamma / n^2
    let hgn = f.vh.mul_vec(&f.g).scale(1.0 / (n * n));
    let g = f.g.sub(&hgn).scale(1.0 / n);
    // gamma_hat^2 hess n = (gamma_hat^2 third gamma . grad gamma
    //   + (gamma_hat hess gamma)^2 - hgn * hgn) / n
    let mut t_dot_g = SmallMat::zero(d);
    for l in 0..d {
        t_dot_g = t_dot_g.add(&f.vt[l].scale(f.g.get(l)));
    }
    let vh_n = f.vh.scale(1.0 / n); // gamma_hat hess gamma
    let h2gn = t_dot_g
        .scale(1.0 / (n * n))
        .add(&vh_n.mul(&vh_n))
        .sub(&hgn.outer(&hgn))
        .scale(1.0 / n);
    let s = vh_n
        .sub(&h2gn)
        .sub(&sym_outer(&g, &hgn))
        .scale(1.0 / n);
    Bundle3 { d, v, g, s }
}

// ---------------------------------------------------------------------------
// Trimming
// ---------------------------------------------------------------------------

/// Trim a normalized patch function `h` by the normalized hull function `f`:
/// result `sqrt(h^2 + g^2)` with `g = (sqrt(h^4 + f^2) - f) / 2`.
pub fn trim(hull: &HullBundle, patch: &Bundle3) -> Bundle3 {
    let d = hull.d;
    let (fv, fg, fh) = (hull.v, hull.g, hull.h);
    let (hv, hg, hs) = (patch.v, patch.g, patch.s);

    let w = (hv * hv).hypot(fv);
    let (wg, wsh) = if w == 0.0 {
        (SmallVec::zero(d), SmallMat::zero(d))
    } else {
        let wg = hg.scale(2.0 * hv * hv * hv).add(&fg.scale(fv)).scale(1.0 / w);
        // w hess w = 2 h^2 (h hess h + 3 grad h * grad h) + f hess f
        //            + grad f * grad f - grad w * grad w
        let wsh = hs
            .scale(2.0 * hv * hv)
            .add(&hg.outer(&hg).scale(6.0 * hv * hv))
            .add(&fh.scale(fv))
            .add(&fg.outer(&fg))
            .sub(&wg.outer(&wg));
        (wg, wsh.scale(1.0 / w))
    };

    let gv = 0.5 * (w - fv);
    let gg = wg.sub(&fg).scale(0.5);
    // g hess g = (g/w)(w hess w) - g hess f, with g/w total in w
    let g_over_w = if w == 0.0 { 0.0 } else { 0.5 * (1.0 - fv / w) };
    let gs = wsh.scale(g_over_w).sub(&fh.scale(gv)).scale(0.5);

    let tv = hv.hypot(gv);
    if tv == 0.0 {
        return Bundle3::zero(d);
    }
    let tg = hg.scale(hv).add(&gg.scale(gv)).scale(1.0 / tv);
    let ts = hs
        .add(&hg.outer(&hg))
        .add(&gs)
        .add(&gg.outer(&gg))
        .sub(&tg.outer(&tg));
    Bundle3 {
        d,
        v: tv,
        g: tg,
        s: ts,
    }
}

// ---------------------------------------------------------------------------
// Scaled r-conjunction (entity and model folds)
// ---------------------------------------------------------------------------

/// `f ^ g` on the value-scaled bundles.
pub fn rconj(f: &Bundle3, g: &Bundle3) -> Bundle3 {
    let d = f.d;
    let s = f.v.hypot(g.v);
    if s == 0.0 {
        // joint zero: value 0, zero-subgradient convention
        return Bundle3 {
            d,
            v: f.v + g.v,
            g: f.g.add(&g.g),
            s: SmallMat::zero(d),
        };
    }
    let sg = f.g.scale(f.v).add(&g.g.scale(g.v)).scale(1.0 / s);
    let rv = f.v + g.v - s;
    let rg = f.g.add(&g.g).sub(&sg);
    // s hess s (total)
    let ss = f
        .s
        .add(&f.g.outer(&f.g))
        .add(&g.s)
        .add(&g.g.outer(&g.g))
        .sub(&sg.outer(&sg))
        .scale(1.0 / s);
    // r hess r = r hess f + r hess g - r hess s with total ratios
    let r_over_f = if s + g.v > 0.0 {
        1.0 - f.v / (s + g.v)
    } else {
        0.0
    };
    let r_over_g = if s + f.v > 0.0 {
        1.0 - g.v / (s + f.v)
    } else {
        0.0
    };
    let r_over_s = rv / s;
    let rs = f
        .s
        .scale(r_over_f)
        .add(&g.s.scale(r_over_g))
        .sub(&ss.scale(r_over_s));
    Bundle3 {
        d,
        v: rv,
        g: rg,
        s: rs,
    }
}
