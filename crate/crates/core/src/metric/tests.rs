use super::*;
use crate::mesh::{structured_mesh, BoxDomain, DofSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent matrix-exponential oracle: scaling and squaring with a
/// truncated Taylor series (no eigen-decomposition involved).
fn expm_oracle(l: &SmallMat) -> SmallMat {
    let d = l.d;
    let k = 12;
    let scaled = l.scale(1.0 / (1u64 << k) as f64);
    let mut term = SmallMat::identity(d);
    let mut sum = SmallMat::identity(d);
    for i in 1..=24 {
        term = term.mul(&scaled).scale(1.0 / i as f64);
        sum = sum.add(&term);
    }
    let mut r = sum;
    for _ in 0..k {
        r = r.mul(&r);
    }
    r
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> SmallMat {
    let mut a = SmallMat::zero(d);
    for i in 0..d {
        for j in 0..d {
            a.set(i, j, rng.random_range(-1.0..1.0) * scale);
        }
    }
    let sym = a.mul(&a.transpose());
    sym.add(&SmallMat::identity(d).scale(0.5))
}

fn smooth_field(d: usize) -> impl Fn(&SmallVec) -> SmallMat {
    move |p: &SmallVec| {
        let x = p.get(0);
        let y = if d > 1 { p.get(1) } else { 0.0 };
        let z = if d > 2 { p.get(2) } else { 0.0 };
        let mut m = SmallMat::identity(d);
        m.set(0, 0, 1.2 + 0.5 * (x * x + 0.3 * y));
        if d > 1 {
            m.set(1, 1, 0.8 + 0.4 * y * y + 0.1 * x);
            let off = 0.15 * x * y + 0.05;
            m.set(0, 1, off);
            m.set(1, 0, off);
        }
        if d > 2 {
            m.set(2, 2, 1.0 + 0.2 * z * z);
            m.set(0, 2, 0.05 * z);
            m.set(2, 0, 0.05 * z);
        }
        m
    }
}

fn field_on(mesh: HighOrderMesh) -> MetricField {
    let f = smooth_field(mesh.dimension);
    let mats: Vec<SmallMat> = mesh.nodes.iter().map(|p| f(p)).collect();
    MetricField::from_spd(mesh, &mats).unwrap()
}

#[test]
fn localize_vertex_and_centroid() {
    let mesh = structured_mesh(2, 2, 1, &BoxDomain::unit(2)).unwrap();
    let field = field_on(mesh.clone());
    // a background vertex localizes to a lattice vertex of some element
    let v = mesh.nodes[4];
    let (e, xi) = field.localize(&v).unwrap();
    let basis = SimplexBasis::new(2, 1).unwrap();
    let vals = basis.evaluate(&xi).unwrap();
    let hit = vals.iter().any(|&w| (w - 1.0).abs() < 1e-8);
    assert!(hit, "element {e}, xi {:?}", xi.as_slice());
    // centroid of a straight triangle
    let coords = mesh.element_coords(0);
    let mut centroid = SmallVec::zero(2);
    for c in 0..2 {
        centroid.set(c, (coords[0].get(c) + coords[1].get(c) + coords[2].get(c)) / 3.0);
    }
    let (e0, xi0) = field.localize(&centroid).unwrap();
    assert_eq!(e0, 0);
    assert!((xi0.get(0) - 1.0 / 3.0).abs() < 1e-10);
    assert!((xi0.get(1) - 1.0 / 3.0).abs() < 1e-10);
}

#[test]
fn localize_curved_element() {
    // curved p2 background: perturb interior mid-edge nodes
    let mut mesh = structured_mesh(2, 2, 2, &BoxDomain::unit(2)).unwrap();
    let interior = |p: &SmallVec| {
        p.get(0) > 1e-9 && p.get(0) < 1.0 - 1e-9 && p.get(1) > 1e-9 && p.get(1) < 1.0 - 1e-9
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..mesh.node_count() {
        let p = mesh.nodes[i];
        if interior(&p) {
            for c in 0..2 {
                let v = p.get(c) + rng.random_range(-0.02..0.02);
                mesh.nodes[i].set(c, v);
            }
        }
    }
    let field = field_on(mesh.clone());
    let basis = SimplexBasis::new(2, 2).unwrap();
    let diag = mesh.bbox_diagonal();
    // forward-sampling oracle: points generated on a dense master grid of a
    // known element must localize back with matching mapped position
    let e_known = 3usize;
    let coords = mesh.element_coords(e_known);
    for i in 0..=20 {
        for j in 0..=(20 - i) {
            let xi = SmallVec::from_slice(&[i as f64 / 20.0 * 0.9 + 0.03, j as f64 / 20.0 * 0.9 + 0.03]);
            if 1.0 - xi.get(0) - xi.get(1) < 0.03 {
                continue;
            }
            let (p, _, _) = physical_map(&basis, &coords, &xi, false).unwrap();
            let (e, xi_hat) = field.localize(&p).unwrap();
            let chk = physical_map(
                &SimplexBasis::new(2, 2).unwrap(),
                &mesh.element_coords(e),
                &xi_hat,
                false,
            )
            .unwrap()
            .0;
            assert!(chk.sub(&p).norm() <= 1e-9 * diag);
        }
    }
}

#[test]
fn localize_outside_errors() {
    let mesh = structured_mesh(2, 2, 1, &BoxDomain::unit(2)).unwrap();
    let field = field_on(mesh);
    let err = field.localize(&SmallVec::from_slice(&[3.0, 3.0])).unwrap_err();
    assert!(matches!(err, Error::Localization { .. }));
}

#[test]
fn constant_field_reproduced_with_zero_derivatives() {
    let mesh = structured_mesh(2, 2, 2, &BoxDomain::unit(2)).unwrap();
    let m0 = SmallMat::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
    let mats = vec![m0; mesh.node_count()];
    let field = MetricField::from_spd(mesh, &mats).unwrap();
    let p = SmallVec::from_slice(&[0.37, 0.21]);
    let eval = field.interpolate(&p, 2).unwrap();
    assert!(eval.m.sub(&m0).max_abs() < 1e-12);
    let g = eval.grad.unwrap();
    let h = eval.hess.unwrap();
    for j in 0..2 {
        assert!(g[j].max_abs() < 1e-12);
        for k in 0..2 {
            assert!(h[j][k].max_abs() < 1e-12);
        }
    }
}

#[test]
fn centroid_log_average_matches_expm_oracle() {
    // p1 background triangle: interpolation at the centroid averages logs
    let mesh = HighOrderMesh {
        dimension: 2,
        degree: 1,
        nodes: vec![
            SmallVec::from_slice(&[0.0, 0.0]),
            SmallVec::from_slice(&[1.0, 0.0]),
            SmallVec::from_slice(&[0.0, 1.0]),
        ],
        elements: vec![vec![0, 1, 2]],
        boundary: Vec::new(),
        dof: DofSpec::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mats: Vec<SmallMat> = (0..3).map(|_| random_spd(&mut rng, 2, 0.8)).collect();
    let logs: Vec<SmallMat> = mats.iter().map(|m| spd_log(m).unwrap()).collect();
    let field = MetricField::from_spd(mesh, &mats).unwrap();
    let p = SmallVec::from_slice(&[1.0 / 3.0, 1.0 / 3.0]);
    let eval = field.interpolate(&p, 0).unwrap();
    let lbar = logs[0].add(&logs[1]).add(&logs[2]).scale(1.0 / 3.0);
    let want = expm_oracle(&lbar);
    assert!(eval.m.sub(&want).max_abs() < 1e-10, "{:?}", eval.m);
}

#[test]
fn nodal_reproduction_and_spd_closure() {
    let mesh = structured_mesh(2, 3, 2, &BoxDomain::unit(2)).unwrap();
    let field = field_on(mesh.clone());
    // nodal reproduction
    for i in (0..mesh.node_count()).step_by(7) {
        let want = smooth_field(2)(&mesh.nodes[i]);
        let eval = field.interpolate(&mesh.nodes[i], 0).unwrap();
        assert!(eval.m.sub(&want).max_abs() < 1e-10);
    }
    // SPD closure at random interior points
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let p = SmallVec::from_slice(&[rng.random_range(0.02..0.98), rng.random_range(0.02..0.98)]);
        let eval = field.interpolate(&p, 0).unwrap();
        let eig = sym_eigen(&eval.m);
        for c in 0..2 {
            assert!(eig.values.get(c) > 0.0);
        }
    }
}

/// Interior random point of a given element, all barycentrics >= margin.
fn interior_point(
    field: &MetricField,
    basis: &SimplexBasis,
    e: usize,
    rng: &mut ChaCha8Rng,
    margin: f64,
) -> SmallVec {
    let d = field.dimension();
    let coords = field.background.element_coords(e);
    loop {
        let mut x = [0.0f64; 3];
        let mut s = 0.0;
        for xc in x.iter_mut().take(d) {
            *xc = rng.random_range(0.0..1.0);
            s += *xc;
        }
        if s > 1.0 - margin {
            continue;
        }
        if x[..d].iter().any(|&v| v < margin) {
            continue;
        }
        let xi = SmallVec::from_slice(&x[..d]);
        return physical_map(basis, &coords, &xi, false).unwrap().0;
    }
}

#[test]
fn interpolation_derivatives_match_finite_differences() {
    for d in [2usize, 3] {
        let mesh = structured_mesh(d, 2, 2, &BoxDomain::unit(d)).unwrap();
        let field = field_on(mesh);
        let basis = SimplexBasis::new(d, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-5;
        let n_elems = field.background.element_count();
        for t in 0..(if d == 2 { 100 } else { 30 }) {
            let e = t % n_elems;
            let p = interior_point(&field, &basis, e, &mut rng, 0.15);
            let eval = field.interpolate(&p, 2).unwrap();
            let grad = eval.grad.unwrap();
            let hess = eval.hess.unwrap();
            // gradient vs central differences of the value
            for k in 0..d {
                let mut pp = p;
                pp.set(k, p.get(k) + h);
                let mut pm = p;
                pm.set(k, p.get(k) - h);
                let mp = field.interpolate(&pp, 0).unwrap().m;
                let mm = field.interpolate(&pm, 0).unwrap().m;
                let fd = mp.sub(&mm).scale(1.0 / (2.0 * h));
                let scale = fd.max_abs().max(eval.m.max_abs());
                assert!(
                    grad[k].sub(&fd).max_abs() / scale <= 1e-5,
                    "grad[{k}] rel err {}",
                    grad[k].sub(&fd).max_abs() / scale
                );
            }
            // Hessian vs central differences of the gradient
            for k in 0..d {
                let mut pp = p;
                pp.set(k, p.get(k) + h);
                let mut pm = p;
                pm.set(k, p.get(k) - h);
                let gp = field.interpolate(&pp, 1).unwrap().grad.unwrap();
                let gm = field.interpolate(&pm, 1).unwrap().grad.unwrap();
                for j in 0..d {
                    let fd = gp[j].sub(&gm[j]).scale(1.0 / (2.0 * h));
                    let scale = fd.max_abs().max(1.0);
                    assert!(
                        hess[j][k].sub(&fd).max_abs() / scale <= 1e-3,
                        "hess[{j}][{k}] rel err {}",
                        hess[j][k].sub(&fd).max_abs() / scale
                    );
                }
            }
            // symmetry of the Hessian
            for j in 0..d {
                for k in 0..d {
                    assert!(hess[j][k].sub(&hess[k][j]).max_abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn eig_derivatives_diagonal_case() {
    let l = SmallMat::diag(&[1.0, 2.0]);
    let mut dl = [SmallMat::zero(2); 3];
    dl[0] = SmallMat::diag(&[0.5, -0.25]);
    dl[1] = SmallMat::diag(&[0.1, 0.3]);
    let d2l = [[SmallMat::zero(2); 3]; 3];
    let out = eig_derivatives(&l, &dl, &d2l, 1e-12).unwrap();
    // eigenvalues ascending: lambda_0 = 1, lambda_1 = 2
    assert!((out.dvalues[0].get(0) - 0.5).abs() < 1e-14);
    assert!((out.dvalues[0].get(1) + 0.25).abs() < 1e-14);
    assert!((out.dvalues[1].get(0) - 0.1).abs() < 1e-14);
    for j in 0..2 {
        for l_ in 0..2 {
            assert!(out.dvectors[j][l_].norm() < 1e-14);
        }
    }
}

/// Sign-fixed eigen-decomposition for the finite-difference oracle.
fn fixed_eigen(l: &SmallMat, reference: &SmallMat) -> (SmallVec, SmallMat) {
    let e = sym_eigen(l);
    let mut vecs = e.vectors;
    for c in 0..l.d {
        let u = vecs.col(c);
        let r = reference.col(c);
        if u.dot(&r) < 0.0 {
            vecs.set_col(c, &u.scale(-1.0));
        }
    }
    (e.values, vecs)
}

#[test]
fn eig_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in [2usize, 3] {
        for _ in 0..20 {
            // random symmetric matrices and parameter dependence
            let base = random_spd(&mut rng, d, 1.0);
            let mut dl = [SmallMat::zero(d); 3];
            let mut d2l = [[SmallMat::zero(d); 3]; 3];
            for j in 0..d {
                dl[j] = random_spd(&mut rng, d, 0.3).sub(&SmallMat::identity(d).scale(0.5));
            }
            for j in 0..d {
                for k in j..d {
                    let m = random_spd(&mut rng, d, 0.2).sub(&SmallMat::identity(d).scale(0.5));
                    d2l[j][k] = m;
                    d2l[k][j] = m;
                }
            }
            // L(x) = base + sum_j x_j dl_j + 0.5 sum_jk x_j x_k d2l_jk at x = 0
            let l_at = |x: &[f64]| -> SmallMat {
                let mut l = base;
                for j in 0..d {
                    l = l.add(&dl[j].scale(x[j]));
                }
                for j in 0..d {
                    for k in 0..d {
                        l = l.add(&d2l[j][k].scale(0.5 * x[j] * x[k]));
                    }
                }
                l
            };
            // skip clustered spectra: the formulas are singular there
            let eig0 = sym_eigen(&base);
            let mut gap = f64::INFINITY;
            for a in 0..d {
                for b in (a + 1)..d {
                    gap = gap.min((eig0.values.get(a) - eig0.values.get(b)).abs());
                }
            }
            if gap < 0.05 {
                continue;
            }
            let out = eig_derivatives(&base, &dl, &d2l, 1e-8 * base.frobenius()).unwrap();

            let h = 1e-6;
            for j in 0..d {
                let mut xp = [0.0; 3];
                xp[j] = h;
                let mut xm = [0.0; 3];
                xm[j] = -h;
                let (vp, up) = fixed_eigen(&l_at(&xp), &out.vectors);
                let (vm, um) = fixed_eigen(&l_at(&xm), &out.vectors);
                for l_ in 0..d {
                    let fd_val = (vp.get(l_) - vm.get(l_)) / (2.0 * h);
                    let got = out.dvalues[j].get(l_);
                    assert!(
                        (got - fd_val).abs() / fd_val.abs().max(1.0) <= 1e-6,
                        "d={d} dvalue j={j} l={l_}: {got} vs {fd_val}"
                    );
                    let fd_vec = up.col(l_).sub(&um.col(l_)).scale(1.0 / (2.0 * h));
                    let got_vec = out.dvectors[j][l_];
                    assert!(
                        got_vec.sub(&fd_vec).norm() / fd_vec.norm().max(1.0) <= 1e-6,
                        "d={d} dvector j={j} l={l_}"
                    );
                }
            }
            // second derivatives of eigenvalues vs FD of first derivatives
            for j in 0..d {
                for k in 0..d {
                    let mut xp = [0.0; 3];
                    xp[k] = h;
                    let mut xm = [0.0; 3];
                    xm[k] = -h;
                    // first-derivative fields at x +- h e_k
                    let dl_at = |x: &[f64], jj: usize| -> SmallMat {
                        let mut m = dl[jj];
                        for kk in 0..d {
                            m = m.add(&d2l[jj][kk].scale(x[kk]));
                        }
                        m
                    };
                    let mut dlp = [SmallMat::zero(d); 3];
                    let mut dlm = [SmallMat::zero(d); 3];
                    for jj in 0..d {
                        dlp[jj] = dl_at(&xp, jj);
                        dlm[jj] = dl_at(&xm, jj);
                    }
                    let zero = [[SmallMat::zero(d); 3]; 3];
                    let op = eig_derivatives(&l_at(&xp), &dlp, &zero, 0.0).unwrap();
                    let om = eig_derivatives(&l_at(&xm), &dlm, &zero, 0.0).unwrap();
                    for l_ in 0..d {
                        let fd = (op.dvalues[j].get(l_) - om.dvalues[j].get(l_)) / (2.0 * h);
                        let got = out.d2values[j][k].get(l_);
                        assert!(
                            (got - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                            "d2value j={j} k={k} l={l_}: {got} vs {fd}"
                        );
                    }
                }
            }
            // symmetry and the redundant first-order equation
            for j in 0..d {
                for k in 0..d {
                    for l_ in 0..d {
                        let a = out.d2values[j][k].get(l_);
                        let b = out.d2values[k][j].get(l_);
                        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
                    }
                }
            }
            for j in 0..d {
                for l_ in 0..d {
                    let lam = out.values.get(l_);
                    let u = out.vectors.col(l_);
                    let du = out.dvectors[j][l_];
                    let ll = base.sub(&SmallMat::identity(d).scale(lam));
                    let dll = dl[j].sub(&SmallMat::identity(d).scale(out.dvalues[j].get(l_)));
                    let res = dll.mul_vec(&u).add(&ll.mul_vec(&du));
                    assert!(res.norm() <= 1e-9, "redundant eq residual {}", res.norm());
                }
            }
        }
    }
}

#[test]
fn analytic_boundary_layer_example() {
    // at (0, 0.1) with h_min = 0.01, alpha = 2 the deformed coordinate is 0
    let spec = AnalyticMetric::BoundaryLayer2d {
        h_min: 0.01,
        alpha: 2.0,
    };
    let eval = spec
        .evaluate(&SmallVec::from_slice(&[0.0, 0.1]), 0)
        .unwrap();
    let pi = std::f64::consts::PI;
    let want22 = 1e6 / (100.0 + 4.0 * pi * pi);
    assert!((eval.m.get(0, 0) - 1.0).abs() < 1e-12);
    assert!(eval.m.get(0, 1).abs() < 1e-12);
    assert!((eval.m.get(1, 1) - want22).abs() < 1e-9 * want22);
    assert!((eval.m.get(1, 1) - 7169.6).abs() < 0.1);
}

#[test]
fn analytic_alpha_zero_constant_in_y() {
    let spec = AnalyticMetric::BoundaryLayer2d {
        h_min: 0.05,
        alpha: 0.0,
    };
    let a = spec.evaluate(&SmallVec::from_slice(&[0.3, -0.2]), 0).unwrap();
    let b = spec.evaluate(&SmallVec::from_slice(&[0.3, 0.4]), 0).unwrap();
    assert!(a.m.sub(&b.m).max_abs() < 1e-12);
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for spec in [
        AnalyticMetric::BoundaryLayer2d {
            h_min: 0.01,
            alpha: 2.0,
        },
        AnalyticMetric::BoundaryLayer3d {
            h_min: 0.02,
            alpha: 2.0,
        },
    ] {
        let d = spec.dimension();
        let h = 1e-6;
        let mut tested = 0;
        while tested < 100 {
            let mut p = SmallVec::zero(d);
            for c in 0..d {
                p.set(c, rng.random_range(-0.5..0.5));
            }
            // avoid the |u| kink of the layer profile
            let (u, _, _, _) = deformation_jets(&spec, &p);
            if u.abs() < 1e-3 {
                continue;
            }
            tested += 1;
            let eval = spec.evaluate(&p, 2).unwrap();
            let grad = eval.grad.unwrap();
            let hess = eval.hess.unwrap();
            for k in 0..d {
                let mut pp = p;
                pp.set(k, p.get(k) + h);
                let mut pm = p;
                pm.set(k, p.get(k) - h);
                // do not cross the kink
                let (up_, _, _, _) = deformation_jets(&spec, &pp);
                let (um_, _, _, _) = deformation_jets(&spec, &pm);
                if up_.signum() != um_.signum() {
                    continue;
                }
                let mp = spec.evaluate(&pp, 1).unwrap();
                let mm = spec.evaluate(&pm, 1).unwrap();
                let fd = mp.m.sub(&mm.m).scale(1.0 / (2.0 * h));
                let scale = fd.max_abs().max(eval.m.max_abs());
                assert!(
                    grad[k].sub(&fd).max_abs() / scale <= 1e-6,
                    "grad[{k}] rel {}",
                    grad[k].sub(&fd).max_abs() / scale
                );
                let gp = mp.grad.unwrap();
                let gm = mm.grad.unwrap();
                for j in 0..d {
                    let fdh = gp[j].sub(&gm[j]).scale(1.0 / (2.0 * h));
                    let s = fdh.max_abs().max(1.0);
                    assert!(
                        hess[j][k].sub(&fdh).max_abs() / s <= 1e-4,
                        "hess[{j}][{k}]"
                    );
                }
            }
        }
    }
}

#[test]
fn anisotropic_quotient_cases() {
    assert!((anisotropic_quotient(&SmallMat::identity(2)).unwrap() - 1.0).abs() < 1e-14);
    let m = SmallMat::diag(&[1.0, 1e4]);
    assert!((anisotropic_quotient(&m).unwrap() - 100.0).abs() < 1e-9);
    // random SPD vs brute force over eigenvalues
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2usize, 3] {
        for _ in 0..20 {
            let m = random_spd(&mut rng, d, 1.5);
            let got = anisotropic_quotient(&m).unwrap();
            let e = sym_eigen(&m);
            let det: f64 = (0..d).map(|i| e.values.get(i)).product();
            let want = (0..d)
                .map(|i| (det / e.values.get(i).powi(d as i32)).sqrt())
                .fold(f64::MIN, f64::max);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
    let bad = SmallMat::diag(&[1.0, -2.0]);
    assert!(anisotropic_quotient(&bad).is_err());
}

#[test]
fn metric_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = structured_mesh(2, 2, 1, &BoxDomain::unit(2)).unwrap();
    crate::mesh::save_mesh(&mesh, &dir.path().join("bg.json")).unwrap();
    let f = smooth_field(2);
    let mats: Vec<SmallMat> = mesh.nodes.iter().map(|p| f(p)).collect();
    save_metric("bg.json", &mats, 2, &dir.path().join("metric.json")).unwrap();
    let field = load_metric(&dir.path().join("metric.json")).unwrap();
    assert_eq!(field.background.node_count(), mesh.node_count());
    let p = SmallVec::from_slice(&[0.4, 0.6]);
    let eval = field.interpolate(&p, 0).unwrap();
    let eig = sym_eigen(&eval.m);
    assert!(eig.values.get(0) > 0.0);
}
