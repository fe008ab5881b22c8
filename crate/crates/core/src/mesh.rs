//! Mesh data model, JSON file I/O, validity checking, and the
//! boundary-entity association consumed by the penalty term.

use crate::basis::{binomial, multi_indices, physical_map, SimplexBasis};
use crate::error::{Error, Result};
use crate::linalg::SmallVec;
use crate::quadrature::QuadratureRule;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundaryFacet {
    /// Node indices in facet-lattice order.
    pub facet: Vec<usize>,
    /// Model entities this facet targets (may be empty).
    #[serde(default)]
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SlideDof {
    pub node: usize,
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct DofSpec {
    #[serde(default)]
    pub fixed: Vec<usize>,
    #[serde(default)]
    pub slide: Vec<SlideDof>,
}

/// Per-node degree-of-freedom regime.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeDof {
    Free,
    Fixed,
    /// Free movement plus penalty attraction to the listed entities.
    Slide(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct HighOrderMesh {
    pub dimension: usize,
    pub degree: usize,
    pub nodes: Vec<SmallVec>,
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<BoundaryFacet>,
    pub dof: DofSpec,
}

/// Serde mirror of the mesh file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeshFile {
    dimension: usize,
    degree: usize,
    nodes: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    #[serde(default)]
    boundary: Vec<BoundaryFacet>,
    #[serde(default)]
    dof: DofSpec,
}

impl HighOrderMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        binomial(self.dimension + self.degree, self.degree)
    }

    pub fn nodes_per_facet(&self) -> usize {
        binomial(self.dimension - 1 + self.degree, self.degree)
    }

    pub fn bbox(&self) -> (SmallVec, SmallVec) {
        let d = self.dimension;
        let mut lo = SmallVec::from_slice(&[f64::INFINITY; 3][..d]);
        let mut hi = SmallVec::from_slice(&[f64::NEG_INFINITY; 3][..d]);
        for x in &self.nodes {
            for c in 0..d {
                lo.set(c, lo.get(c).min(x.get(c)));
                hi.set(c, hi.get(c).max(x.get(c)));
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        hi.sub(&lo).norm()
    }

    pub fn element_coords(&self, e: usize) -> Vec<SmallVec> {
        self.elements[e].iter().map(|&i| self.nodes[i]).collect()
    }

    /// Per-node DOF regime derived from the `dof` spec.
    pub fn dof_mask(&self) -> Vec<NodeDof> {
        let mut mask = vec![NodeDof::Free; self.node_count()];
        for &i in &self.dof.fixed {
            mask[i] = NodeDof::Fixed;
        }
        for s in &self.dof.slide {
            mask[s.node] = NodeDof::Slide(s.entities.clone());
        }
        mask
    }

    /// Structural checks: index ranges, node counts, facet-of-one-element,
    /// orphan nodes, slide nodes on the boundary.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        let npe = self.nodes_per_element();
        let mut referenced = vec![false; n];
        for (e, conn) in self.elements.iter().enumerate() {
            if conn.len() != npe {
                return Err(Error::Validation(format!(
                    "element {e} has {} nodes, expected {npe} for d={} p={}",
                    conn.len(),
                    self.dimension,
                    self.degree
                )));
            }
            for &i in conn {
                if i >= n {
                    return Err(Error::Validation(format!(
                        "element {e} references node {i} but the mesh has {n} nodes"
                    )));
                }
                referenced[i] = true;
            }
        }
        if let Some(orphan) = referenced.iter().position(|r| !r) {
            return Err(Error::Validation(format!(
                "node {orphan} is not referenced by any element"
            )));
        }
        // boundary facets must be faces of exactly one element
        let face_counts = self.face_multiplicity();
        let npf = self.nodes_per_facet();
        let mut facet_nodes = vec![false; n];
        for (fi, f) in self.boundary.iter().enumerate() {
            if f.facet.len() != npf {
                return Err(Error::Validation(format!(
                    "boundary facet {fi} has {} nodes, expected {npf}",
                    f.facet.len()
                )));
            }
            for &i in &f.facet {
                if i >= n {
                    return Err(Error::Validation(format!(
                        "boundary facet {fi} references node {i} but the mesh has {n} nodes"
                    )));
                }
                facet_nodes[i] = true;
            }
            let mut key: Vec<usize> = f.facet.clone();
            key.sort_unstable();
            match face_counts.get(&key) {
                Some(1) => {}
                Some(m) => {
                    return Err(Error::Validation(format!(
                        "boundary facet {fi} is shared by {m} elements"
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "boundary facet {fi} is not a face of any element"
                    )))
                }
            }
        }
        for (i, m) in self.dof_mask().iter().enumerate() {
            if matches!(m, NodeDof::Slide(_)) && !facet_nodes[i] {
                return Err(Error::Validation(format!(
                    "node {i} targets model entities but appears in no boundary facet"
                )));
            }
        }
        for &i in &self.dof.fixed {
            if i >= n {
                return Err(Error::Validation(format!(
                    "dof.fixed references node {i} but the mesh has {n} nodes"
                )));
            }
        }
        for s in &self.dof.slide {
            if s.node >= n {
                return Err(Error::Validation(format!(
                    "dof.slide references node {s} but the mesh has {n} nodes",
                    s = s.node
                )));
            }
            if self.dof.fixed.contains(&s.node) {
                return Err(Error::Validation(format!(
                    "node {} is both fixed and sliding",
                    s.node
                )));
            }
        }
        Ok(())
    }

    /// Multiplicity of every (d-1)-face, keyed by its sorted node ids.
    fn face_multiplicity(&self) -> HashMap<Vec<usize>, usize> {
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for conn in &self.elements {
            for f in 0..=self.dimension {
                let locals = face_local_nodes(self.dimension, self.degree, f);
                let mut key: Vec<usize> = locals.iter().map(|&l| conn[l]).collect();
                key.sort_unstable();
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Element-local node indices of face `f` (opposite local vertex `f`), in
/// facet-lattice order. Facet vertices follow the element vertex order
/// restricted to the face.
pub fn face_local_nodes(d: usize, p: usize, f: usize) -> Vec<usize> {
    let elem_mi = multi_indices(d, p);
    let lookup: HashMap<[usize; 3], usize> = elem_mi
        .iter()
        .enumerate()
        .map(|(i, a)| (*a, i))
        .collect();
    // multi-index of each element vertex: v0 = 0, vc = p * e_c
    let vert_mi = |v: usize| -> [usize; 3] {
        let mut a = [0usize; 3];
        if v > 0 {
            a[v - 1] = p;
        }
        a
    };
    let face_verts: Vec<usize> = (0..=d).filter(|&v| v != f).collect();
    multi_indices(d - 1, p)
        .iter()
        .map(|b| {
            // barycentric weights over the face vertices
            let sum: usize = b[..d - 1].iter().sum();
            let mut mu = vec![p - sum];
            mu.extend_from_slice(&b[..d - 1]);
            let mut a = [0usize; 3];
            for (m, &v) in face_verts.iter().enumerate() {
                let vm = vert_mi(v);
                for c in 0..d {
                    a[c] += mu[m] * vm[c] / p.max(1);
                }
            }
            lookup[&a]
        })
        .collect()
}

pub fn load_mesh(path: &Path) -> Result<HighOrderMesh> {
    let text = std::fs::read_to_string(path)?;
    let file: MeshFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    mesh_from_file(file, path)
}

/// Parse a mesh from an already-decoded JSON value (inline mesh objects).
pub fn mesh_from_value(value: &serde_json::Value, origin: &str) -> Result<HighOrderMesh> {
    let file: MeshFile = serde_json::from_value(value.clone()).map_err(|e| Error::Parse {
        path: origin.to_string(),
        context: "inline mesh".into(),
        message: e.to_string(),
    })?;
    mesh_from_file(file, Path::new(origin))
}

fn mesh_from_file(file: MeshFile, path: &Path) -> Result<HighOrderMesh> {
    let d = file.dimension;
    if !(2..=3).contains(&d) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            context: "dimension".into(),
            message: format!("dimension {d} not supported"),
        });
    }
    let nodes: Result<Vec<SmallVec>> = file
        .nodes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != d {
                Err(Error::Parse {
                    path: path.display().to_string(),
                    context: format!("node {i}"),
                    message: format!("expected {d} coordinates, got {}", v.len()),
                })
            } else {
                Ok(SmallVec::from_slice(v))
            }
        })
        .collect();
    let mesh = HighOrderMesh {
        dimension: d,
        degree: file.degree,
        nodes: nodes?,
        elements: file.elements,
        boundary: file.boundary,
        dof: file.dof,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_mesh(mesh: &HighOrderMesh, path: &Path) -> Result<()> {
    let file = MeshFile {
        dimension: mesh.dimension,
        degree: mesh.degree,
        nodes: mesh
            .nodes
            .iter()
            .map(|v| v.as_slice().to_vec())
            .collect(),
        elements: mesh.elements.clone(),
        boundary: mesh.boundary.clone(),
        dof: mesh.dof.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Jacobian positivity at every quadrature point of every element.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub min_det_per_element: Vec<f64>,
    pub valid: bool,
    pub invalid_elements: Vec<usize>,
}

pub fn check_validity(
    mesh: &HighOrderMesh,
    basis: &SimplexBasis,
    rule: &QuadratureRule,
) -> Result<ValidityReport> {
    let mut min_det = Vec::with_capacity(mesh.element_count());
    let mut invalid = Vec::new();
    for e in 0..mesh.element_count() {
        let coords = mesh.element_coords(e);
        let mut emin = f64::INFINITY;
        for q in &rule.points {
            let (_, jac, _) = physical_map(basis, &coords, q, false)?;
            emin = emin.min(jac.det());
        }
        if emin <= 0.0 {
            invalid.push(e);
        }
        min_det.push(emin);
    }
    Ok(ValidityReport {
        valid: invalid.is_empty(),
        min_det_per_element: min_det,
        invalid_elements: invalid,
    })
}

/// Maps (node, component) pairs to indices in the free-DOF vector.
/// Fixed nodes have no DOF; sliding nodes are free (penalty-attracted).
#[derive(Debug, Clone)]
pub struct DofMap {
    pub d: usize,
    /// `index[node * d + comp]`, `None` for fixed coordinates.
    pub index: Vec<Option<u32>>,
    /// Inverse map: DOF -> (node, comp).
    pub free: Vec<(u32, u8)>,
}

impl DofMap {
    pub fn new(mesh: &HighOrderMesh) -> Self {
        let d = mesh.dimension;
        let mask = mesh.dof_mask();
        let mut index = vec![None; mesh.node_count() * d];
        let mut free = Vec::new();
        for (node, m) in mask.iter().enumerate() {
            if matches!(m, NodeDof::Fixed) {
                continue;
            }
            for c in 0..d {
                index[node * d + c] = Some(free.len() as u32);
                free.push((node as u32, c as u8));
            }
        }
        Self { d, index, free }
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> Option<u32> {
        self.index[node * self.d + comp]
    }

    /// Extract the free coordinates from a mesh.
    pub fn gather(&self, mesh: &HighOrderMesh) -> Vec<f64> {
        self.free
            .iter()
            .map(|&(node, c)| mesh.nodes[node as usize].get(c as usize))
            .collect()
    }

    /// Write a free-coordinate vector back into the mesh.
    pub fn scatter(&self, x: &[f64], mesh: &mut HighOrderMesh) {
        for (k, &(node, c)) in self.free.iter().enumerate() {
            mesh.nodes[node as usize].set(c as usize, x[k]);
        }
    }
}

/// Axis-aligned box used by the structured generators.
#[derive(Debug, Clone, Copy)]
pub struct BoxDomain {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxDomain {
    pub fn unit(d: usize) -> Self {
        let mut b = Self {
            min: [0.0; 3],
            max: [0.0; 3],
        };
        for c in 0..d {
            b.max[c] = 1.0;
        }
        b
    }

    pub fn symmetric(d: usize, half: f64) -> Self {
        let mut b = Self {
            min: [0.0; 3],
            max: [0.0; 3],
        };
        for c in 0..d {
            b.min[c] = -half;
            b.max[c] = half;
        }
        b
    }
}

/// Simplicial subdivision of an axis-aligned box with a degree-p lattice on
/// each simplex: diagonal split in 2D, Kuhn split (6 tets per cell) in 3D.
pub fn structured_mesh(
    d: usize,
    divisions: usize,
    degree: usize,
    domain: &BoxDomain,
) -> Result<HighOrderMesh> {
    if divisions == 0 {
        return Err(Error::Usage("divisions must be >= 1".into()));
    }
    let p = degree;
    let m = divisions * p; // fine grid per axis
    let step: Vec<f64> = (0..d)
        .map(|c| (domain.max[c] - domain.min[c]) / m as f64)
        .collect();
    let grid_index = |g: &[usize]| -> usize {
        let mut idx = 0usize;
        for c in (0..d).rev() {
            idx = idx * (m + 1) + g[c];
        }
        idx
    };
    let grid_coord = |g: &[usize]| -> SmallVec {
        let mut v = SmallVec::zero(d);
        for c in 0..d {
            v.set(c, domain.min[c] + g[c] as f64 * step[c]);
        }
        v
    };

    // simplices as lists of grid-vertex offsets (in fine-grid units of p)
    let cell_simplices: Vec<Vec<[usize; 3]>> = match d {
        2 => vec![
            vec![[0, 0, 0], [p, 0, 0], [p, p, 0]],
            vec![[0, 0, 0], [p, p, 0], [0, p, 0]],
        ],
        3 => {
            let perms: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            let sign = |pm: &[usize; 3]| -> i32 {
                let mut s = 1;
                let mut v = *pm;
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        if v[i] > v[j] {
                            v.swap(i, j);
                            s = -s;
                        }
                    }
                }
                s
            };
            perms
                .iter()
                .map(|pm| {
                    let mut verts = Vec::with_capacity(4);
                    let mut cur = [0usize; 3];
                    verts.push(cur);
                    for &ax in pm {
                        cur[ax] += p;
                        verts.push(cur);
                    }
                    if sign(pm) < 0 {
                        verts.swap(2, 3);
                    }
                    verts
                })
                .collect()
        }
        _ => return Err(Error::Usage(format!("dimension {d} not supported"))),
    };

    let elem_mi = multi_indices(d, p);
    let mut used: HashMap<usize, usize> = HashMap::new(); // grid idx -> node id
    let mut nodes: Vec<SmallVec> = Vec::new();
    let mut elements: Vec<Vec<usize>> = Vec::new();

    let mut cells: Vec<[usize; 3]> = Vec::new();
    match d {
        2 => {
            for cy in 0..divisions {
                for cx in 0..divisions {
                    cells.push([cx, cy, 0]);
                }
            }
        }
        _ => {
            for cz in 0..divisions {
                for cy in 0..divisions {
                    for cx in 0..divisions {
                        cells.push([cx, cy, cz]);
                    }
                }
            }
        }
    }
    for cell in &cells {
        let base = [cell[0] * p, cell[1] * p, cell[2] * p];
        for simplex in &cell_simplices {
            let mut conn = Vec::with_capacity(elem_mi.len());
            for a in &elem_mi {
                // lattice point = v0 + sum_c (a_c / p) (v_{c+1} - v0), all in fine-grid ints
                let mut g = [0usize; 3];
                for c in 0..d {
                    let v0 = simplex[0][c] + base[c];
                    let mut acc = v0 * p;
                    for (ci, ac) in a.iter().enumerate().take(d) {
                        let delta = simplex[ci + 1][c] as i64 - simplex[0][c] as i64;
                        acc = (acc as i64 + *ac as i64 * delta) as usize;
                    }
                    g[c] = acc / p;
                }
                let gi = grid_index(&g[..d]);
                let id = *used.entry(gi).or_insert_with(|| {
                    nodes.push(grid_coord(&g[..d]));
                    nodes.len() - 1
                });
                conn.push(id);
            }
            elements.push(conn);
        }
    }

    let mut mesh = HighOrderMesh {
        dimension: d,
        degree: p,
        nodes,
        elements,
        boundary: Vec::new(),
        dof: DofSpec::default(),
    };
    mesh.boundary = extract_boundary(&mesh);
    mesh.validate()?;
    Ok(mesh)
}

/// All faces belonging to exactly one element, in facet-lattice order.
pub fn extract_boundary(mesh: &HighOrderMesh) -> Vec<BoundaryFacet> {
    let d = mesh.dimension;
    let p = mesh.degree;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for conn in &mesh.elements {
        for f in 0..=d {
            let locals = face_local_nodes(d, p, f);
            let mut key: Vec<usize> = locals.iter().map(|&l| conn[l]).collect();
            key.sort_unstable();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for conn in &mesh.elements {
        for f in 0..=d {
            let locals = face_local_nodes(d, p, f);
            let ordered: Vec<usize> = locals.iter().map(|&l| conn[l]).collect();
            let mut key = ordered.clone();
            key.sort_unstable();
            if counts[&key] == 1 {
                out.push(BoundaryFacet {
                    facet: ordered,
                    entities: Vec::new(),
                });
            }
        }
    }
    out
}
