//! Quadrature on the master simplex by conical products of Gauss rules.
//!
//! The triangle rule collapses to Gauss-Legendre x Gauss-Jacobi(1,0), the
//! tetrahedron adds Gauss-Jacobi(2,0); weights are positive and sum to the
//! simplex measure by construction. Exactness follows from one-dimensional
//! Gauss exactness in each collapsed coordinate.

use crate::error::{Error, Result};
use crate::linalg::SmallVec;
use nalgebra::DMatrix;

/// Largest supported 1D point count per direction (exactness 2n-1 = 39).
const MAX_POINTS_1D: usize = 20;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub d: usize,
    pub exactness: usize,
    pub points: Vec<SmallVec>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss nodes/weights on [0, 1] for the weight `(1 - x)^alpha` via
/// Golub-Welsch on the Jacobi recurrence.
fn gauss_jacobi_01(n: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let a = alpha as f64;
    let b = 0.0f64;
    // Monic Jacobi recurrence coefficients on [-1, 1].
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n.saturating_sub(1)];
    for (k, dk) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        *dk = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * kf + a + b) * (2.0 * kf + a + b + 2.0))
        };
    }
    for (k1, ok) in off.iter_mut().enumerate() {
        let k = (k1 + 1) as f64; // recurrence index starting at 1
        let s = 2.0 * k + a + b;
        let beta = 4.0 * k * (k + a) * (k + b) * (k + a + b) / (s * s * (s + 1.0) * (s - 1.0));
        *ok = beta.sqrt();
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = diag[k];
        if k + 1 < n {
            j[(k, k + 1)] = off[k];
            j[(k + 1, k)] = off[k];
        }
    }
    let eig = j.symmetric_eigen();
    // zeroth moment of (1-x)^a on [-1, 1] (b = 0, a integer)
    let mu0 = 2.0f64.powf(a + 1.0) / (a + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (x, mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    // map to [0, 1]: t = (1+x)/2, weight scale 2^{a+1}
    let scale = 2.0f64.powf(a + 1.0);
    let nodes = pairs.iter().map(|p| (1.0 + p.0) / 2.0).collect();
    let weights = pairs.iter().map(|p| p.1 / scale).collect();
    (nodes, weights)
}

/// A rule exact for all polynomials of total degree <= `exactness` on the
/// master d-simplex.
pub fn quadrature_for(d: usize, exactness: usize) -> Result<QuadratureRule> {
    if exactness < 1 {
        return Err(Error::Usage("quadrature exactness must be >= 1".into()));
    }
    let n = exactness / 2 + 1; // 2n - 1 >= exactness
    if n > MAX_POINTS_1D {
        return Err(Error::Unsupported(format!(
            "quadrature exactness {exactness} exceeds the implemented table"
        )));
    }
    let (ga, wa) = gauss_jacobi_01(n, 0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match d {
        1 => {
            for i in 0..n {
                points.push(SmallVec::from_slice(&[ga[i]]));
                weights.push(wa[i]);
            }
        }
        2 => {
            let (gb, wb) = gauss_jacobi_01(n, 1);
            for j in 0..n {
                for i in 0..n {
                    let b = gb[j];
                    let a = ga[i];
                    points.push(SmallVec::from_slice(&[a * (1.0 - b), b]));
                    weights.push(wa[i] * wb[j]);
                }
            }
        }
        3 => {
            let (gb, wb) = gauss_jacobi_01(n, 1);
            let (gc, wc) = gauss_jacobi_01(n, 2);
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let c = gc[k];
                        let b = gb[j];
                        let a = ga[i];
                        points.push(SmallVec::from_slice(&[
                            a * (1.0 - b) * (1.0 - c),
                            b * (1.0 - c),
                            c,
                        ]));
                        weights.push(wa[i] * wb[j] * wc[k]);
                    }
                }
            }
        }
        _ => return Err(Error::Usage(format!("dimension {d} not supported"))),
    }
    Ok(QuadratureRule {
        d,
        exactness,
        points,
        weights,
    })
}

/// Exact integral of the monomial `x^a y^b z^c` over the master d-simplex:
/// `a! b! c! / (a + b + c + d)!`.
pub fn simplex_monomial_integral(d: usize, exps: &[usize]) -> f64 {
    let mut num = 1.0f64;
    let mut tot = 0usize;
    for &e in exps.iter().take(d) {
        for i in 1..=e {
            num *= i as f64;
        }
        tot += e;
    }
    let mut den = 1.0f64;
    for i in 1..=(tot + d) {
        den *= i as f64;
    }
    num / den
}
