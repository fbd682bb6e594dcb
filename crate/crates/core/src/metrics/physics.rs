use crate::geometry::{triangle_box_overlap, vertical_ray_height, Aabb, Mesh, Vec3};
use crate::voxgrid::Occupancy;

use super::{EvalObject, OPEN_FACE_MARGIN, OTHER_FACE_MARGIN};

/// A face of the axis-aligned shelf volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Face {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Face {
    pub fn axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 0,
            Face::PosY | Face::NegY => 1,
            Face::PosZ | Face::NegZ => 2,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, Face::PosX | Face::PosY | Face::PosZ)
    }
}

/// Valid interior of a shelf, aligned with the world axes, with one open face.
#[derive(Debug, Clone, PartialEq)]
pub struct ShelfVolume {
    pub min: Vec3,
    pub max: Vec3,
    pub opening: Face,
    /// Shelf geometry (boards, walls) used for collision and support.
    pub boards: Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShelfMargins {
    pub open: f64,
    pub other: f64,
}

impl Default for ShelfMargins {
    fn default() -> Self {
        ShelfMargins {
            open: OPEN_FACE_MARGIN,
            other: OTHER_FACE_MARGIN,
        }
    }
}

/// Whether a voxel center violates the shelf volume.
///
/// Every closed face tolerates `other`. Past the open face a voxel is fine
/// within `open`, and beyond that only while its projection onto the
/// opening plane stays inside the (untolerated) aperture.
fn voxel_out(p: Vec3, shelf: &ShelfVolume, m: &ShelfMargins) -> bool {
    let ao = shelf.opening.axis();
    for a in 0..3 {
        let below = p[a] < shelf.min[a] - m.other;
        let above = p[a] > shelf.max[a] + m.other;
        if a != ao && (below || above) {
            return true;
        }
        if a == ao && (if shelf.opening.is_max() { below } else { above }) {
            return true;
        }
    }
    let spill = if shelf.opening.is_max() {
        p[ao] - shelf.max[ao]
    } else {
        shelf.min[ao] - p[ao]
    };
    if spill <= m.open {
        return false;
    }
    let in_aperture = (0..3)
        .filter(|&a| a != ao)
        .all(|a| p[a] >= shelf.min[a] && p[a] <= shelf.max[a]);
    !in_aperture
}

/// Out-of-bounds flag per object.
pub fn shelf_out_flags(vs: &[Occupancy], shelf: &ShelfVolume, margins: &ShelfMargins) -> Vec<bool> {
    vs.iter()
        .map(|v| v.centers().any(|p| voxel_out(p, shelf, margins)))
        .collect()
}

/// Fraction of objects with any voxel outside the tolerated shelf volume.
pub fn shelf_out_of_bounds(vs: &[Occupancy], shelf: &ShelfVolume, margins: &ShelfMargins) -> f64 {
    if vs.is_empty() {
        return 0.0;
    }
    let flags = shelf_out_flags(vs, shelf, margins);
    flags.iter().filter(|&&f| f).count() as f64 / vs.len() as f64
}

/// Fraction of objects whose AABB, shrunk by `margin`, meets a shelf
/// triangle. A box that inverts under shrinking never collides.
pub fn shelf_collision(boxes: &[Aabb], shelf: &Mesh, margin: f64) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let tri_boxes: Vec<Aabb> = shelf.triangles.iter().map(|t| t.aabb()).collect();
    let hits = boxes
        .iter()
        .filter(|b| {
            let Some(inner) = b.shrunk(margin) else {
                return false;
            };
            shelf.triangles.iter().zip(&tri_boxes).any(|(t, tb)| {
                (0..3).all(|a| tb.min[a] <= inner.max[a] && tb.max[a] >= inner.min[a]) && triangle_box_overlap(t, &inner)
            })
        })
        .count();
    hits as f64 / boxes.len() as f64
}

/// Fraction of floating objects. The support height under an object's
/// bottom center is the highest surface (support mesh or another object)
/// crossed by the vertical line there at or below `h_bottom + δ`; the
/// object floats when there is none or the gap exceeds `δ`.
pub fn floating_rate(objects: &[EvalObject], support: &Mesh, delta: f64) -> f64 {
    if objects.is_empty() {
        return 0.0;
    }
    let floating = objects
        .iter()
        .enumerate()
        .filter(|(i, o)| {
            let bb = o.mesh.aabb();
            let c = bb.center();
            let bottom = bb.min[1];
            let others = objects
                .iter()
                .enumerate()
                .filter(|(j, _)| j != i)
                .flat_map(|(_, p)| p.mesh.triangles.iter());
            let h_sup = support
                .triangles
                .iter()
                .chain(others)
                .filter_map(|t| vertical_ray_height(t, c[0], c[2]))
                .filter(|&h| h <= bottom + delta)
                .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.max(h))));
            match h_sup {
                None => true,
                Some(h) => bottom - h > delta,
            }
        })
        .count();
    floating as f64 / objects.len() as f64
}
