//! Small f64 geometry kernel: vectors, yaw rotations, triangle meshes,
//! point/triangle distance, triangle/box overlap and 2-D polygons.
//!
//! The world frame is Y-up; the floor is the xz plane and every heading is a
//! yaw about +y.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn mul(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm_sq(a: Vec3) -> f64 {
    dot(a, a)
}

pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Planar heading stored as the unit vector `(cos θ, sin θ)`.
///
/// The heading is the world xz direction of the local +x axis. Local +z maps
/// to `(-sin θ, cos θ)` and local +y is world +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    cos: f64,
    sin: f64,
}

impl Heading {
    pub const IDENTITY: Heading = Heading { cos: 1.0, sin: 0.0 };

    pub fn from_angle(theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Heading { cos, sin }
    }

    /// Accepts a 2-vector whose norm is within 1e-6 of one.
    pub fn from_vector(cos: f64, sin: f64) -> Result<Self> {
        let n = (cos * cos + sin * sin).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "heading ({cos}, {sin}) is not a unit vector (norm {n})"
            )));
        }
        Ok(Heading { cos, sin })
    }

    pub fn cos(&self) -> f64 {
        self.cos
    }

    pub fn sin(&self) -> f64 {
        self.sin
    }

    pub fn angle(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    /// Local offset to world offset.
    #[inline]
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        [
            self.cos * v[0] - self.sin * v[2],
            v[1],
            self.sin * v[0] + self.cos * v[2],
        ]
    }

    /// World offset to local offset.
    #[inline]
    pub fn unrotate(&self, v: Vec3) -> Vec3 {
        [
            self.cos * v[0] + self.sin * v[2],
            v[1],
            -self.sin * v[0] + self.cos * v[2],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    pub fn grow(&mut self, p: Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(other.min);
        out.grow(other.max);
        out
    }

    pub fn extents(&self) -> Vec3 {
        sub(self.max, self.min)
    }

    pub fn center(&self) -> Vec3 {
        scale(add(self.min, self.max), 0.5)
    }

    /// Shrinks every face inward by `margin`; `None` when the box inverts.
    pub fn shrunk(&self, margin: f64) -> Option<Aabb> {
        let min = add(self.min, [margin; 3]);
        let max = sub(self.max, [margin; 3]);
        if (0..3).any(|a| min[a] > max[a]) {
            None
        } else {
            Some(Aabb { min, max })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle(pub [Vec3; 3]);

impl Triangle {
    pub fn aabb(&self) -> Aabb {
        let mut b = Aabb::empty();
        for v in self.0 {
            b.grow(v);
        }
        b
    }
}

/// Triangle soup in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub triangles: Vec<Triangle>,
}

impl Mesh {
    pub fn new(triangles: Vec<Triangle>) -> Self {
        Mesh { triangles }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn aabb(&self) -> Aabb {
        self.triangles
            .iter()
            .fold(Aabb::empty(), |acc, t| acc.union(&t.aabb()))
    }

    pub fn is_finite(&self) -> bool {
        self.triangles.iter().all(|t| t.0.iter().all(|v| is_finite(*v)))
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh {
            triangles: self
                .triangles
                .iter()
                .map(|t| Triangle([f(t.0[0]), f(t.0[1]), f(t.0[2])]))
                .collect(),
        }
    }

    pub fn translated(&self, offset: Vec3) -> Mesh {
        self.map_vertices(|v| add(v, offset))
    }

    pub fn extend(&mut self, other: &Mesh) {
        self.triangles.extend_from_slice(&other.triangles);
    }

    /// Closed axis-aligned box with outward-consistent winding.
    pub fn cuboid(min: Vec3, max: Vec3) -> Mesh {
        let c = |x: usize, y: usize, z: usize| -> Vec3 {
            [
                if x == 0 { min[0] } else { max[0] },
                if y == 0 { min[1] } else { max[1] },
                if z == 0 { min[2] } else { max[2] },
            ]
        };
        let quads = [
            [c(0, 0, 0), c(0, 0, 1), c(0, 1, 1), c(0, 1, 0)],
            [c(1, 0, 0), c(1, 1, 0), c(1, 1, 1), c(1, 0, 1)],
            [c(0, 0, 0), c(1, 0, 0), c(1, 0, 1), c(0, 0, 1)],
            [c(0, 1, 0), c(0, 1, 1), c(1, 1, 1), c(1, 1, 0)],
            [c(0, 0, 0), c(0, 1, 0), c(1, 1, 0), c(1, 0, 0)],
            [c(0, 0, 1), c(1, 0, 1), c(1, 1, 1), c(0, 1, 1)],
        ];
        let mut triangles = Vec::with_capacity(12);
        for q in quads {
            triangles.push(Triangle([q[0], q[1], q[2]]));
            triangles.push(Triangle([q[0], q[2], q[3]]));
        }
        Mesh { triangles }
    }

    /// Reads the vertex/face subset of Wavefront OBJ (`v x y z`, `f a b c ...`).
    /// Polygonal faces are fan-triangulated; texture/normal indices are ignored.
    pub fn read_obj(reader: impl BufRead, source: &str) -> Result<Mesh> {
        let mut vertices: Vec<Vec3> = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let loc = || format!("{source}:{}", lineno + 1);
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let mut p = [0.0; 3];
                    for slot in &mut p {
                        let tok = parts
                            .next()
                            .ok_or_else(|| Error::parse(loc(), "vertex needs 3 coordinates"))?;
                        *slot = tok
                            .parse::<f64>()
                            .map_err(|e| Error::parse(loc(), format!("bad coordinate {tok:?}: {e}")))?;
                    }
                    if !is_finite(p) {
                        return Err(Error::parse(loc(), "non-finite vertex"));
                    }
                    vertices.push(p);
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in parts {
                        let head = tok.split('/').next().unwrap_or(tok);
                        let raw: i64 = head
                            .parse()
                            .map_err(|e| Error::parse(loc(), format!("bad face index {tok:?}: {e}")))?;
                        let resolved = if raw < 0 {
                            vertices.len() as i64 + raw
                        } else {
                            raw - 1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(Error::parse(loc(), format!("face index {raw} out of range")));
                        }
                        idx.push(resolved as usize);
                    }
                    if idx.len() < 3 {
                        return Err(Error::parse(loc(), "face needs at least 3 vertices"));
                    }
                    for w in 1..idx.len() - 1 {
                        triangles.push(Triangle([
                            vertices[idx[0]],
                            vertices[idx[w]],
                            vertices[idx[w + 1]],
                        ]));
                    }
                }
                _ => {}
            }
        }
        Ok(Mesh { triangles })
    }

    /// Writes an unindexed OBJ (three fresh vertices per face).
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for t in &self.triangles {
            for v in t.0 {
                let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
            }
        }
        for i in 0..self.triangles.len() {
            let b = 3 * i + 1;
            let _ = writeln!(out, "f {} {} {}", b, b + 1, b + 2);
        }
        out
    }
}

/// Squared distance from `p` to the closest point of triangle `t`.
pub fn point_triangle_distance_sq(p: Vec3, t: &Triangle) -> f64 {
    let q = closest_point_on_triangle(p, t);
    norm_sq(sub(p, q))
}

/// Closest point by Voronoi-region classification; degenerate triangles
/// fall through to the edge regions.
pub fn closest_point_on_triangle(p: Vec3, t: &Triangle) -> Vec3 {
    let [a, b, c] = t.0;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let denom = d1 - d3;
        let v = if denom > 0.0 { d1 / denom } else { 0.0 };
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let denom = d2 - d6;
        let w = if denom > 0.0 { d2 / denom } else { 0.0 };
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let denom = (d4 - d3) + (d5 - d6);
        let w = if denom > 0.0 { (d4 - d3) / denom } else { 0.0 };
        return add(b, scale(sub(c, b), w));
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        // Fully degenerate (zero-area) triangle: nearest of the three edges.
        let candidates = [
            closest_point_on_segment(p, a, b),
            closest_point_on_segment(p, b, c),
            closest_point_on_segment(p, c, a),
        ];
        return candidates
            .into_iter()
            .min_by(|x, y| norm_sq(sub(p, *x)).total_cmp(&norm_sq(sub(p, *y))))
            .unwrap_or(a);
    }
    let v = vb / denom;
    let w = vc / denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

fn closest_point_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let len = norm_sq(ab);
    if len == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / len).clamp(0.0, 1.0);
    add(a, scale(ab, t))
}

/// Separating-axis overlap test between a closed triangle and a closed
/// axis-aligned box (13 axes: 3 box faces, triangle normal, 9 edge crosses).
pub fn triangle_box_overlap(t: &Triangle, bx: &Aabb) -> bool {
    let c = bx.center();
    let h = scale(bx.extents(), 0.5);
    let v = [sub(t.0[0], c), sub(t.0[1], c), sub(t.0[2], c)];
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];

    // Box face normals.
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > h[a] || hi < -h[a] {
            return false;
        }
    }

    let separated = |axis: Vec3| -> bool {
        if norm_sq(axis) == 0.0 {
            return false;
        }
        let p = [dot(axis, v[0]), dot(axis, v[1]), dot(axis, v[2])];
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        let r = h[0] * axis[0].abs() + h[1] * axis[1].abs() + h[2] * axis[2].abs();
        lo > r || hi < -r
    };

    let units = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for edge in e {
        for u in units {
            if separated(cross(u, edge)) {
                return false;
            }
        }
    }
    !separated(cross(e[0], e[1]))
}

/// Height of triangle `t` above the vertical line through `(x, z)`, if the
/// line crosses it. Vertical (edge-on) triangles report their highest point
/// on the line.
pub fn vertical_ray_height(t: &Triangle, x: f64, z: f64) -> Option<f64> {
    let [a, b, c] = t.0;
    let det = (b[2] - c[2]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[2] - c[2]);
    if det.abs() < 1e-15 {
        return None;
    }
    let l1 = ((b[2] - c[2]) * (x - c[0]) + (c[0] - b[0]) * (z - c[2])) / det;
    let l2 = ((c[2] - a[2]) * (x - c[0]) + (a[0] - c[0]) * (z - c[2])) / det;
    let l3 = 1.0 - l1 - l2;
    const TOL: f64 = -1e-12;
    if l1 < TOL || l2 < TOL || l3 < TOL {
        return None;
    }
    Some(l1 * a[1] + l2 * b[1] + l3 * c[1])
}

/// Simple closed polygon on the xz floor plane; vertices are `(x, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("polygon needs at least 3 vertices"));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::invalid("polygon has non-finite vertices"));
        }
        Ok(Polygon { vertices })
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd crossing test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        self.edges()
            .map(|(a, b)| {
                let ab = [b[0] - a[0], b[1] - a[1]];
                let ap = [p[0] - a[0], p[1] - a[1]];
                let len = ab[0] * ab[0] + ab[1] * ab[1];
                let t = if len == 0.0 {
                    0.0
                } else {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len).clamp(0.0, 1.0)
                };
                let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
                (d[0] * d[0] + d[1] * d[1]).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        let d = self.boundary_distance(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    pub fn translated(&self, dx: f64, dz: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| [v[0] + dx, v[1] + dz]).collect(),
        }
    }
}
