//! Fixed-capacity dense matrices and vectors for spatial dimensions up to 3.
//!
//! The optimization inner loops evaluate millions of small matrix products;
//! these types live on the stack and never allocate.

/// Row-major `d x d` matrix, `d <= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMat {
    pub d: usize,
    a: [f64; 9],
}

/// A `d`-vector, `d <= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallVec {
    pub d: usize,
    a: [f64; 3],
}

impl SmallVec {
    pub fn zero(d: usize) -> Self {
        Self { d, a: [0.0; 3] }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut a = [0.0; 3];
        a[..v.len()].copy_from_slice(v);
        Self { d: v.len(), a }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        debug_assert!(i < self.d);
        self.a[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        debug_assert!(i < self.d);
        self.a[i] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.a[..self.d]
    }

    pub fn add(&self, o: &SmallVec) -> SmallVec {
        let mut r = *self;
        for i in 0..self.d {
            r.a[i] += o.a[i];
        }
        r
    }

    pub fn sub(&self, o: &SmallVec) -> SmallVec {
        let mut r = *self;
        for i in 0..self.d {
            r.a[i] -= o.a[i];
        }
        r
    }

    pub fn scale(&self, s: f64) -> SmallVec {
        let mut r = *self;
        for i in 0..self.d {
            r.a[i] *= s;
        }
        r
    }

    pub fn dot(&self, o: &SmallVec) -> f64 {
        (0..self.d).map(|i| self.a[i] * o.a[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Outer product `self * o^T`.
    pub fn outer(&self, o: &SmallVec) -> SmallMat {
        let mut m = SmallMat::zero(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                m.set(i, j, self.a[i] * o.a[j]);
            }
        }
        m
    }
}

impl SmallMat {
    pub fn zero(d: usize) -> Self {
        Self { d, a: [0.0; 9] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zero(d);
        for i in 0..d {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let d = rows.len();
        let mut m = Self::zero(d);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    pub fn diag(v: &[f64]) -> Self {
        let mut m = Self::zero(v.len());
        for (i, x) in v.iter().enumerate() {
            m.set(i, i, *x);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.d && j < self.d);
        self.a[i * 3 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.d && j < self.d);
        self.a[i * 3 + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * 3 + j] += v;
    }

    pub fn add(&self, o: &SmallMat) -> SmallMat {
        let mut r = *self;
        for i in 0..9 {
            r.a[i] += o.a[i];
        }
        r
    }

    pub fn sub(&self, o: &SmallMat) -> SmallMat {
        let mut r = *self;
        for i in 0..9 {
            r.a[i] -= o.a[i];
        }
        r
    }

    pub fn scale(&self, s: f64) -> SmallMat {
        let mut r = *self;
        for v in r.a.iter_mut() {
            *v *= s;
        }
        r
    }

    pub fn mul(&self, o: &SmallMat) -> SmallMat {
        let d = self.d;
        let mut r = SmallMat::zero(d);
        for i in 0..d {
            for k in 0..d {
                let s = self.get(i, k);
                if s != 0.0 {
                    for j in 0..d {
                        r.add_to(i, j, s * o.get(k, j));
                    }
                }
            }
        }
        r
    }

    pub fn mul_vec(&self, v: &SmallVec) -> SmallVec {
        let d = self.d;
        let mut r = SmallVec::zero(d);
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.get(i, j) * v.get(j);
            }
            r.set(i, s);
        }
        r
    }

    pub fn transpose(&self) -> SmallMat {
        let d = self.d;
        let mut r = SmallMat::zero(d);
        for i in 0..d {
            for j in 0..d {
                r.set(i, j, self.get(j, i));
            }
        }
        r
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn det(&self) -> f64 {
        match self.d {
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            3 => {
                self.get(0, 0) * (self.get(1, 1) * self.get(2, 2) - self.get(1, 2) * self.get(2, 1))
                    - self.get(0, 1)
                        * (self.get(1, 0) * self.get(2, 2) - self.get(1, 2) * self.get(2, 0))
                    + self.get(0, 2)
                        * (self.get(1, 0) * self.get(2, 1) - self.get(1, 1) * self.get(2, 0))
            }
            _ => unreachable!("dimension {} not supported", self.d),
        }
    }

    /// Cofactor matrix: `cof[i][j] = d det / d a[i][j]`.
    pub fn cofactor(&self) -> SmallMat {
        let d = self.d;
        let mut c = SmallMat::zero(d);
        match d {
            1 => c.set(0, 0, 1.0),
            2 => {
                c.set(0, 0, self.get(1, 1));
                c.set(0, 1, -self.get(1, 0));
                c.set(1, 0, -self.get(0, 1));
                c.set(1, 1, self.get(0, 0));
            }
            3 => {
                for i in 0..3 {
                    for j in 0..3 {
                        let i1 = (i + 1) % 3;
                        let i2 = (i + 2) % 3;
                        let j1 = (j + 1) % 3;
                        let j2 = (j + 2) % 3;
                        c.set(
                            i,
                            j,
                            self.get(i1, j1) * self.get(i2, j2)
                                - self.get(i1, j2) * self.get(i2, j1),
                        );
                    }
                }
            }
            _ => unreachable!(),
        }
        c
    }

    pub fn inverse(&self) -> Option<SmallMat> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        // adj = cofactor^T
        Some(self.cofactor().transpose().scale(1.0 / det))
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn symmetrize(&self) -> SmallMat {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn col(&self, j: usize) -> SmallVec {
        let mut v = SmallVec::zero(self.d);
        for i in 0..self.d {
            v.set(i, self.get(i, j));
        }
        v
    }

    pub fn set_col(&mut self, j: usize, v: &SmallVec) {
        for i in 0..self.d {
            self.set(i, j, v.get(i));
        }
    }

    /// Frobenius inner product `<self, o>`.
    pub fn inner(&self, o: &SmallMat) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.get(i, j) * o.get(i, j);
            }
        }
        s
    }
}

/// Eigen-decomposition of a symmetric matrix: `m = V diag(values) V^T`,
/// eigenvectors in columns of `vectors`, eigenvalues ascending.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen {
    pub values: SmallVec,
    pub vectors: SmallMat,
}

/// Cyclic Jacobi rotations; deterministic and accurate for d <= 3.
pub fn sym_eigen(m: &SmallMat) -> SymEigen {
    let d = m.d;
    let mut a = m.symmetrize();
    let mut v = SmallMat::identity(d);
    for _sweep in 0..50 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off = off.max(a.get(i, j).abs());
            }
        }
        let scale = a.frobenius().max(1e-300);
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A <- J^T A J with J the (p,q) rotation
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    // Sort ascending by eigenvalue, reorder columns.
    let mut idx = [0usize, 1, 2];
    let evs = [
        a.get(0, 0),
        if d > 1 { a.get(1, 1) } else { f64::INFINITY },
        if d > 2 { a.get(2, 2) } else { f64::INFINITY },
    ];
    idx[..d].sort_by(|&i, &j| evs[i].partial_cmp(&evs[j]).unwrap());
    let mut values = SmallVec::zero(d);
    let mut vectors = SmallMat::zero(d);
    for (k, &i) in idx[..d].iter().enumerate() {
        values.set(k, evs[i]);
        let col = v.col(i);
        vectors.set_col(k, &col);
    }
    SymEigen { values, vectors }
}

/// Matrix exponential of a symmetric matrix via eigen-decomposition.
pub fn sym_exp(m: &SmallMat) -> SmallMat {
    let e = sym_eigen(m);
    let d = m.d;
    let mut r = SmallMat::zero(d);
    for l in 0..d {
        let u = e.vectors.col(l);
        let w = e.values.get(l).exp();
        for i in 0..d {
            for j in 0..d {
                r.add_to(i, j, w * u.get(i) * u.get(j));
            }
        }
    }
    r
}

/// Matrix logarithm of an SPD matrix via eigen-decomposition.
/// Returns `None` when any eigenvalue is not strictly positive.
pub fn spd_log(m: &SmallMat) -> Option<SmallMat> {
    let e = sym_eigen(m);
    let d = m.d;
    let mut r = SmallMat::zero(d);
    for l in 0..d {
        let lam = e.values.get(l);
        if lam <= 0.0 || !lam.is_finite() {
            return None;
        }
        let u = e.vectors.col(l);
        let w = lam.ln();
        for i in 0..d {
            for j in 0..d {
                r.add_to(i, j, w * u.get(i) * u.get(j));
            }
        }
    }
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_diagonal() {
        let m = SmallMat::diag(&[3.0, 1.0, 2.0]);
        let e = sym_eigen(&m);
        assert_relative_eq!(e.values.get(0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values.get(1), 2.0, epsilon = 1e-14);
        assert_relative_eq!(e.values.get(2), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_reconstructs() {
        let m = SmallMat::from_rows(&[&[2.0, 0.5, -0.3], &[0.5, 1.0, 0.2], &[-0.3, 0.2, 3.0]]);
        let e = sym_eigen(&m);
        let mut r = SmallMat::zero(3);
        for l in 0..3 {
            let u = e.vectors.col(l);
            let w = e.values.get(l);
            r = r.add(&u.outer(&u).scale(w));
        }
        assert!(r.sub(&m).frobenius() < 1e-13);
    }

    #[test]
    fn exp_log_roundtrip() {
        let m = SmallMat::from_rows(&[&[1.5, 0.4], &[0.4, 0.8]]);
        let l = spd_log(&m).unwrap();
        let back = sym_exp(&l);
        assert!(back.sub(&m).frobenius() < 1e-13);
    }

    #[test]
    fn inverse_3x3() {
        let m = SmallMat::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let inv = m.inverse().unwrap();
        let id = m.mul(&inv);
        assert!(id.sub(&SmallMat::identity(3)).frobenius() < 1e-14);
    }

    #[test]
    fn cofactor_is_det_gradient() {
        let m = SmallMat::from_rows(&[&[1.2, -0.3, 0.5], &[0.1, 2.0, -0.4], &[0.7, 0.2, 1.1]]);
        let c = m.cofactor();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut mp = m;
                mp.set(i, j, m.get(i, j) + h);
                let mut mm = m;
                mm.set(i, j, m.get(i, j) - h);
                let fd = (mp.det() - mm.det()) / (2.0 * h);
                assert_relative_eq!(c.get(i, j), fd, epsilon = 1e-8);
            }
        }
    }
}
