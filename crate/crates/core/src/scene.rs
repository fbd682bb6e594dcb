//! Scene description documents: vocabulary reference, structure, anchors
//! and retrieved placements, stored as JSON.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::Anchor;
use crate::error::{Error, Result};
use crate::geometry::{add, is_finite, Heading, Mesh, Polygon, Triangle, Vec3};
use crate::metrics::{Boundary, EvalObject, EvalScene, Face, ShelfVolume};
use crate::retrieval::{AssetDb, AssetRecord, Match};
use crate::vocab::Vocabulary;
use crate::voxgrid::{Occupancy, FREE, STRUCT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShelfBounds {
    pub min: Vec3,
    pub max: Vec3,
    pub opening: Face,
}

/// Room or shelf geometry. Paths are relative to the scene file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxRecord>,
    /// Floor plan as xz vertices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shelf: Option<ShelfBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub id: u32,
    pub category: String,
    pub position: Vec3,
    /// Unit xz direction `[cos θ, sin θ]` of the object's local +x axis.
    pub heading: [f64; 2],
    pub size: Vec3,
}

/// A retrieved asset placed in the world: the canonical asset is stretched
/// per axis by `scale`, yawed by `heading` and centered on `position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub anchor_id: u32,
    pub asset_id: u32,
    pub position: Vec3,
    pub heading: [f64; 2],
    pub scale: Vec3,
}

impl Placement {
    pub fn from_match(anchor_id: u32, m: &Match) -> Self {
        let h = Heading::from_angle(m.heading);
        Placement {
            anchor_id,
            asset_id: m.asset_id,
            position: m.position,
            heading: [h.cos(), h.sin()],
            scale: m.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLayout {
    /// `room`, `shelf`, or a palette file path.
    pub vocabulary: String,
    #[serde(default)]
    pub structure: StructureRecord,
    #[serde(default)]
    pub anchors: Vec<AnchorRecord>,
    #[serde(default)]
    pub placements: Vec<Placement>,
}

impl SceneLayout {
    /// Schema checks that need no vocabulary; errors carry the field path.
    pub fn validate(&self) -> Result<()> {
        let s = &self.structure;
        for (i, b) in s.boxes.iter().enumerate() {
            if !is_finite(b.min) || !is_finite(b.max) || (0..3).any(|a| b.min[a] > b.max[a]) {
                return Err(Error::parse(format!("structure.boxes[{i}]"), "needs finite min <= max"));
            }
        }
        if let Some(f) = &s.floor {
            Polygon::new(f.clone()).map_err(|e| Error::parse("structure.floor", e.to_string()))?;
        }
        if let Some(sh) = &s.shelf {
            if !is_finite(sh.min) || !is_finite(sh.max) || (0..3).any(|a| sh.min[a] >= sh.max[a]) {
                return Err(Error::parse("structure.shelf", "needs finite min < max"));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, a) in self.anchors.iter().enumerate() {
            let at = |f: &str| format!("anchors[{i}].{f}");
            if a.id == FREE || a.id == STRUCT {
                return Err(Error::parse(at("id"), format!("id {} is reserved", a.id)));
            }
            if !ids.insert(a.id) {
                return Err(Error::parse(at("id"), format!("duplicate anchor id {}", a.id)));
            }
            Heading::from_vector(a.heading[0], a.heading[1]).map_err(|e| Error::parse(at("heading"), e.to_string()))?;
            if !is_finite(a.position) {
                return Err(Error::parse(at("position"), "must be finite"));
            }
            if !a.size.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(Error::parse(at("size"), "must be finite and > 0"));
            }
        }
        let mut placed = BTreeSet::new();
        for (i, p) in self.placements.iter().enumerate() {
            let at = |f: &str| format!("placements[{i}].{f}");
            if !ids.contains(&p.anchor_id) {
                return Err(Error::parse(at("anchor_id"), format!("no anchor with id {}", p.anchor_id)));
            }
            if !placed.insert(p.anchor_id) {
                return Err(Error::parse(at("anchor_id"), format!("anchor {} placed twice", p.anchor_id)));
            }
            Heading::from_vector(p.heading[0], p.heading[1]).map_err(|e| Error::parse(at("heading"), e.to_string()))?;
            if !is_finite(p.position) {
                return Err(Error::parse(at("position"), "must be finite"));
            }
            if !p.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err(Error::parse(at("scale"), "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Sorts anchors and placements by id.
    pub fn canonicalize(&mut self) {
        self.anchors.sort_by_key(|a| a.id);
        self.placements.sort_by_key(|p| p.anchor_id);
    }

    pub fn vocabulary(&self, base: &Path) -> Result<Vocabulary> {
        Vocabulary::resolve(&self.vocabulary, base)
    }

    pub fn anchors(&self, vocab: &Vocabulary) -> Result<Vec<Anchor>> {
        self.anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let category = vocab.index(&a.category).ok_or_else(|| {
                    Error::parse(format!("anchors[{i}].category"), format!("unknown category {:?}", a.category))
                })?;
                if category == vocab.structure_index() {
                    return Err(Error::parse(
                        format!("anchors[{i}].category"),
                        "the structure category cannot be an anchor",
                    ));
                }
                let h = Heading::from_vector(a.heading[0], a.heading[1])?;
                Anchor::new(a.id, category, a.position, h, a.size)
            })
            .collect()
    }

    /// Structure mesh file plus the listed boxes; `None` when both are absent.
    pub fn structure_mesh(&self, base: &Path) -> Result<Option<Mesh>> {
        let s = &self.structure;
        if s.mesh.is_none() && s.boxes.is_empty() {
            return Ok(None);
        }
        let mut mesh = match &s.mesh {
            Some(path) => {
                let p = base.join(path);
                let f = std::fs::File::open(&p)?;
                Mesh::read_obj(std::io::BufReader::new(f), &p.display().to_string())?
            }
            None => Mesh::default(),
        };
        for b in &s.boxes {
            mesh.extend(&Mesh::cuboid(b.min, b.max));
        }
        Ok(Some(mesh))
    }

    /// Objects for evaluation: each anchor becomes its placed asset when a
    /// placement exists, otherwise its oriented box.
    pub fn eval_scene(&self, vocab: &Vocabulary, db: Option<&AssetDb>, base: &Path) -> Result<EvalScene> {
        let anchors = self.anchors(vocab)?;
        let mut objects = Vec::with_capacity(anchors.len());
        for a in &anchors {
            let mesh = match self.placements.iter().find(|p| p.anchor_id == a.id) {
                Some(p) => {
                    let db = db.ok_or_else(|| Error::invalid("placements need an asset database"))?;
                    let asset = db
                        .get(p.asset_id)
                        .ok_or_else(|| Error::invalid(format!("asset {} is not in the database", p.asset_id)))?;
                    placement_mesh(asset, p)?
                }
                None => oriented_box(a.position, a.heading, a.size),
            };
            objects.push(EvalObject { id: a.id, category: a.category, mesh });
        }
        let structure = self.structure_mesh(base)?;
        let boundary = match (&self.structure.shelf, &self.structure.floor) {
            (Some(sh), _) => Boundary::Shelf(ShelfVolume {
                min: sh.min,
                max: sh.max,
                opening: sh.opening,
                boards: structure.clone().unwrap_or_default(),
            }),
            (None, Some(f)) => Boundary::Floor(Polygon::new(f.clone())?),
            (None, None) => Boundary::None,
        };
        let support = if matches!(boundary, Boundary::Shelf(_)) { None } else { structure };
        Ok(EvalScene { objects, boundary, support })
    }
}

pub fn oriented_box(center: Vec3, heading: Heading, size: Vec3) -> Mesh {
    let h = [0.5 * size[0], 0.5 * size[1], 0.5 * size[2]];
    Mesh::cuboid([-h[0], -h[1], -h[2]], h).map_vertices(|v| add(center, heading.rotate(v)))
}

/// Closed surface of a voxel set: one quad per face between an occupied and
/// an empty cell, in the set's world coordinates.
pub fn occupancy_mesh(occ: &Occupancy) -> Mesh {
    let spec = occ.spec();
    let s = spec.voxel_size();
    let o = spec.origin();
    let dims = spec.dims();
    let mut tris = Vec::new();
    for c in occ.coords() {
        for axis in 0..3 {
            for dir in [-1i64, 1] {
                let mut n = c.map(|v| v as i64);
                n[axis] += dir;
                let outside = n[axis] < 0 || n[axis] >= dims[axis] as i64;
                if !outside && occ.contains_coords(n.map(|v| v as usize)) {
                    continue;
                }
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let plane = c[axis] as f64 + if dir > 0 { 1.0 } else { 0.0 };
                let corner = |du: f64, dv: f64| {
                    let mut p = [0.0; 3];
                    p[axis] = o[axis] + plane * s;
                    p[u] = o[u] + (c[u] as f64 + du) * s;
                    p[v] = o[v] + (c[v] as f64 + dv) * s;
                    p
                };
                let q = [corner(0.0, 0.0), corner(1.0, 0.0), corner(1.0, 1.0), corner(0.0, 1.0)];
                if dir > 0 {
                    tris.push(Triangle([q[0], q[1], q[2]]));
                    tris.push(Triangle([q[0], q[2], q[3]]));
                } else {
                    tris.push(Triangle([q[0], q[2], q[1]]));
                    tris.push(Triangle([q[0], q[3], q[2]]));
                }
            }
        }
    }
    Mesh::new(tris)
}

/// World mesh of a placed asset.
pub fn placement_mesh(asset: &AssetRecord, p: &Placement) -> Result<Mesh> {
    let h = Heading::from_vector(p.heading[0], p.heading[1])?;
    let ext = [0, 1, 2].map(|a| asset.extents[a] * p.scale[a]);
    Ok(occupancy_mesh(&asset.occupancy).map_vertices(|v| add(p.position, h.rotate([0, 1, 2].map(|a| v[a] * ext[a])))))
}

/// Parses and validates a scene document. JSON errors report `source:line:column`.
pub fn read_scene(text: &str, source: &str) -> Result<SceneLayout> {
    let scene: SceneLayout = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("{source}:{}:{}", e.line(), e.column()), e.to_string()))?;
    scene.validate()?;
    Ok(scene)
}

/// Canonical text: sorted records, pretty JSON, trailing newline.
pub fn write_scene(scene: &SceneLayout) -> String {
    let mut s = scene.clone();
    s.canonicalize();
    let mut out = serde_json::to_string_pretty(&s).expect("scene serializes");
    out.push('\n');
    out
}
