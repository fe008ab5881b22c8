//! Assembly of a full implicit CAD model: per patch a normalized
//! implicitization trimmed by its normalized control-point hull, folded by
//! r-conjunction per entity and across entities, in input order.

use super::bezier::BezierPatch;
use super::hull::ConvexHullRep;
use super::mrep::{implicitize_patch, split_autointersections, MRepMatrix};
use super::stack::{normalize_det, rconj, trim, Bundle3};
use crate::error::{Error, Result};
use crate::linalg::SmallVec;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One trimmed Bézier piece: the determinant layer plus its hull.
#[derive(Debug, Clone)]
pub struct TrimmedPatch {
    pub patch: BezierPatch,
    pub mrep: MRepMatrix,
    pub hull: ConvexHullRep,
}

impl TrimmedPatch {
    pub fn new(patch: BezierPatch) -> Result<Self> {
        let mrep = implicitize_patch(&patch)?;
        let hull = ConvexHullRep::new(&patch.points, &patch.label)?;
        Ok(Self { patch, mrep, hull })
    }

    /// Trimmed, normalized implicit function of this piece.
    pub fn evaluate(&self, x: &SmallVec) -> Bundle3 {
        let det4 = self.mrep.det_stack(x);
        let patch_fn = normalize_det(&det4, 1e-300);
        let hull_fn = self.hull.evaluate(x);
        trim(&hull_fn, &patch_fn)
    }
}

/// Implicit function of one model entity (a fold of its pieces).
#[derive(Debug, Clone)]
pub struct ImplicitEntity {
    pub id: String,
    pub pieces: Vec<TrimmedPatch>,
}

impl ImplicitEntity {
    pub fn evaluate(&self, x: &SmallVec) -> Bundle3 {
        let mut acc = self.pieces[0].evaluate(x);
        for p in &self.pieces[1..] {
            acc = rconj(&acc, &p.evaluate(x));
        }
        acc
    }
}

/// Entity-wise implicit representation of a CAD model.
#[derive(Debug, Clone)]
pub struct ImplicitModel {
    pub entities: Vec<ImplicitEntity>,
    pub dim: usize,
}

impl ImplicitModel {
    /// Assemble from patches grouped by entity. Curves of degree >= 3 are
    /// split at detected auto-intersections before implicitization.
    pub fn from_patches(groups: Vec<(String, Vec<BezierPatch>)>) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(|(_, ps)| ps.is_empty()) {
            return Err(Error::Geometry("model has no patches".into()));
        }
        let dim = groups[0].1[0].dim;
        let mut entities = Vec::with_capacity(groups.len());
        for (id, patches) in groups {
            let mut pieces = Vec::new();
            for patch in patches {
                if patch.dim != dim {
                    return Err(Error::Geometry(format!(
                        "patch {} has embedding dimension {} but the model is {dim}D",
                        patch.label, patch.dim
                    )));
                }
                for piece in split_autointersections(&patch)? {
                    pieces.push(TrimmedPatch::new(piece)?);
                }
            }
            entities.push(ImplicitEntity { id, pieces });
        }
        Ok(Self { entities, dim })
    }

    pub fn entity(&self, id: &str) -> Result<&ImplicitEntity> {
        self.entities
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    /// Model-level function: fold of all entities in input order.
    pub fn evaluate(&self, x: &SmallVec) -> Bundle3 {
        let mut acc = self.entities[0].evaluate(x);
        for e in &self.entities[1..] {
            acc = rconj(&acc, &e.evaluate(x));
        }
        acc
    }

    /// Fold of exactly the requested entities, in model order.
    pub fn evaluate_subset(&self, ids: &[String], x: &SmallVec) -> Result<Bundle3> {
        for id in ids {
            self.entity(id)?;
        }
        let mut acc: Option<Bundle3> = None;
        for e in &self.entities {
            if ids.iter().any(|id| *id == e.id) {
                let b = e.evaluate(x);
                acc = Some(match acc {
                    None => b,
                    Some(a) => rconj(&a, &b),
                });
            }
        }
        acc.ok_or_else(|| Error::UnknownEntity(ids.join(",")))
    }

    /// Bounding box over all control points.
    pub fn bbox(&self) -> (SmallVec, SmallVec) {
        let d = self.dim;
        let mut lo = SmallVec::from_slice(&[f64::INFINITY; 3][..d]);
        let mut hi = SmallVec::from_slice(&[f64::NEG_INFINITY; 3][..d]);
        for e in &self.entities {
            for p in &e.pieces {
                for pt in &p.patch.points {
                    for c in 0..d {
                        lo.set(c, lo.get(c).min(pt.get(c)));
                        hi.set(c, hi.get(c).max(pt.get(c)));
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Uniform level-set raster over the padded model bbox:
    /// grid point and model value per row.
    pub fn raster(&self, n: usize) -> Result<Vec<(SmallVec, f64)>> {
        if n < 2 {
            return Err(Error::Usage("raster grid must be >= 2".into()));
        }
        let d = self.dim;
        let (lo, hi) = self.bbox();
        let pad = 0.05 * hi.sub(&lo).norm();
        let mut out = Vec::new();
        let steps: Vec<f64> = (0..d)
            .map(|c| (hi.get(c) - lo.get(c) + 2.0 * pad) / (n - 1) as f64)
            .collect();
        let total = n.pow(d as u32);
        for flat in 0..total {
            let mut idx = flat;
            let mut x = SmallVec::zero(d);
            for c in 0..d {
                x.set(c, lo.get(c) - pad + (idx % n) as f64 * steps[c]);
                idx /= n;
            }
            let v = self.evaluate(&x).v;
            out.push((x, v));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Model file I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub entities: Vec<EntityFile>,
    /// Optional association hints mirrored from mesh files; not interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub associations: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityFile {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub patches: Vec<PatchFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchFile {
    /// Curve degree as an int, surface bidegree as a two-element array.
    pub degree: serde_json::Value,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub fn load_model(path: &Path) -> Result<ImplicitModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    model_from_file(&file)
}

pub fn model_from_file(file: &ModelFile) -> Result<ImplicitModel> {
    let mut groups = Vec::new();
    for ent in &file.entities {
        let mut patches = Vec::new();
        for (i, pf) in ent.patches.iter().enumerate() {
            let dim = pf
                .points
                .first()
                .map(|p| p.len())
                .ok_or_else(|| Error::Geometry(format!("entity {}: empty patch", ent.id)))?;
            let points: Vec<SmallVec> = pf.points.iter().map(|p| SmallVec::from_slice(p)).collect();
            let label = format!("{}[{}]", ent.id, i);
            let patch = match ent.kind.as_str() {
                "curve" => BezierPatch::curve(dim, points, pf.weights.clone(), &label)?,
                "surface" => {
                    let deg: [usize; 2] = serde_json::from_value(pf.degree.clone())
                        .map_err(|e| Error::Geometry(format!("{label}: bad bidegree: {e}")))?;
                    BezierPatch::surface(deg, points, pf.weights.clone(), &label)?
                }
                other => {
                    return Err(Error::Geometry(format!(
                        "entity {}: unknown type {other:?}",
                        ent.id
                    )))
                }
            };
            patches.push(patch);
        }
        groups.push((ent.id.clone(), patches));
    }
    ImplicitModel::from_patches(groups)
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}
