//! Minimal CSR symmetric sparse support for the Newton system: triplet
//! assembly, matrix-vector products, Jacobi and incomplete-Cholesky
//! preconditioners.

/// Triplet accumulator; duplicate entries are summed on build.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    triplets: Vec<(u32, u32, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.triplets.push((i as u32, j as u32, v));
        }
    }

    /// Deterministic build: triplets are sorted by (row, col) with a stable
    /// sort, then summed in order.
    pub fn build(mut self) -> CsrMatrix {
        self.triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut it = self.triplets.iter().peekable();
        for i in 0..self.n as u32 {
            while let Some(&&(r, c, v)) = it.peek() {
                if r != i {
                    break;
                }
                it.next();
                if let (Some(&lc), Some(lv)) = (col.last(), val.last_mut()) {
                    if !col.is_empty() && lc == c && row_ptr[i as usize] < col.len() {
                        *lv += v;
                        continue;
                    }
                }
                col.push(c);
                val.push(v);
            }
            row_ptr[i as usize + 1] = col.len();
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col,
            val,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col[lo..hi].binary_search(&(j as u32)) {
            Ok(k) => self.val[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Max |a_ij - a_ji| over stored entries, for symmetry checks.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k] as usize;
                worst = worst.max((self.val[k] - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Preconditioner interface: y = M^{-1} r.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], y: &mut [f64]);
}

/// Jacobi preconditioner on |diag| with a floor.
pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &CsrMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .iter()
            .map(|d| 1.0 / d.abs().max(1e-12))
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64], y: &mut [f64]) {
        for i in 0..r.len() {
            y[i] = self.inv_diag[i] * r[i];
        }
    }
}

/// Zero fill-in incomplete Cholesky on the lower-triangular pattern, with a
/// diagonal shift retried until the pivots stay positive.
pub struct IncompleteCholesky {
    // lower triangular factor in CSR (rows of L)
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    n: usize,
}

impl IncompleteCholesky {
    pub fn new(a: &CsrMatrix) -> Self {
        let mut shift = 0.0f64;
        let base: f64 = {
            let d = a.diagonal();
            d.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-10
        };
        loop {
            match Self::factor(a, shift) {
                Some(f) => return f,
                None => {
                    shift = if shift == 0.0 {
                        base.max(1e-12)
                    } else {
                        shift * 10.0
                    };
                    if shift > 1e12 {
                        // degenerate matrix: identity factor
                        let n = a.n;
                        return Self {
                            row_ptr: (0..=n).collect(),
                            col: (0..n as u32).collect(),
                            val: vec![1.0; n],
                            n,
                        };
                    }
                }
            }
        }
    }

    fn factor(a: &CsrMatrix, shift: f64) -> Option<Self> {
        let n = a.n;
        let mut row_ptr = vec![0usize; n + 1];
        let mut col: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                if (a.col[k] as usize) <= i {
                    col.push(a.col[k]);
                    let mut v = a.val[k];
                    if a.col[k] as usize == i {
                        v += shift;
                    }
                    val.push(v);
                }
            }
            row_ptr[i + 1] = col.len();
        }
        // IC(0): L[i][j] = (a_ij - sum_k L_ik L_jk) / L_jj on the sparsity pattern
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col[k] as usize;
                let mut sum = val[k];
                // dot of rows i and j over columns < j
                let (mut pi, mut pj) = (row_ptr[i], row_ptr[j]);
                while pi < row_ptr[i + 1] && pj < row_ptr[j + 1] {
                    let (ci, cj) = (col[pi], col[pj]);
                    if ci as usize >= j || cj as usize >= j {
                        break;
                    }
                    match ci.cmp(&cj) {
                        std::cmp::Ordering::Equal => {
                            sum -= val[pi] * val[pj];
                            pi += 1;
                            pj += 1;
                        }
                        std::cmp::Ordering::Less => pi += 1,
                        std::cmp::Ordering::Greater => pj += 1,
                    }
                }
                if j == i {
                    if sum <= 0.0 {
                        return None;
                    }
                    val[k] = sum.sqrt();
                } else {
                    let ljj = val[row_ptr[j + 1] - 1];
                    val[k] = sum / ljj;
                }
            }
        }
        Some(Self {
            row_ptr,
            col,
            val,
            n,
        })
    }
}

impl Preconditioner for IncompleteCholesky {
    fn apply(&self, r: &[f64], y: &mut [f64]) {
        let n = self.n;
        // forward solve L z = r
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut s = r[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] - 1 {
                s -= self.val[k] * z[self.col[k] as usize];
            }
            z[i] = s / self.val[self.row_ptr[i + 1] - 1];
        }
        // backward solve L^T y = z
        y.copy_from_slice(&z);
        for i in (0..n).rev() {
            let li = self.val[self.row_ptr[i + 1] - 1];
            y[i] /= li;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] - 1 {
                y[self.col[k] as usize] -= self.val[k] * y[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut b = SparseBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 2.0);
            if i > 0 {
                b.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.add(i, i + 1, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn build_sums_duplicates() {
        let mut b = SparseBuilder::new(2);
        b.add(0, 0, 1.0);
        b.add(0, 0, 2.5);
        b.add(1, 0, -1.0);
        let m = b.build();
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matvec() {
        let m = laplacian_1d(4);
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut y = [0.0; 4];
        m.mul_vec(&x, &mut y);
        assert_eq!(y, [0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn incomplete_cholesky_is_exact_on_tridiagonal() {
        // IC(0) on a tridiagonal SPD matrix is the exact factorization
        let m = laplacian_1d(8);
        let ic = IncompleteCholesky::new(&m);
        let r: Vec<f64> = (0..8).map(|i| (i as f64) - 3.0).collect();
        let mut y = vec![0.0; 8];
        ic.apply(&r, &mut y);
        let mut back = vec![0.0; 8];
        m.mul_vec(&y, &mut back);
        for i in 0..8 {
            assert!((back[i] - r[i]).abs() < 1e-10);
        }
    }
}
