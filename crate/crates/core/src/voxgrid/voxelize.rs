use crate::error::{Error, Result};
use crate::geometry::{point_triangle_distance_sq, Mesh};

use super::{GridSpec, Occupancy};

/// Band that catches every voxel the surface passes through: half the voxel
/// diagonal.
pub fn default_band(voxel_size: f64) -> f64 {
    0.5 * 3f64.sqrt() * voxel_size
}

/// Surface-band voxelization: a voxel is occupied iff the distance from its
/// center to the mesh surface is at most `band` meters.
///
/// Thin or zero-thickness geometry stays connected because the test is a
/// point/surface distance rather than a center-inside test.
pub fn voxelize_mesh(mesh: &Mesh, spec: &GridSpec, band: f64) -> Result<Occupancy> {
    if !(band >= 0.0 && band.is_finite()) {
        return Err(Error::invalid(format!("surface band must be >= 0, got {band}")));
    }
    if !mesh.is_finite() {
        return Err(Error::invalid("mesh has non-finite vertices"));
    }
    let band_sq = band * band;
    let mut cells = Vec::new();
    for tri in &mesh.triangles {
        let bb = tri.aabb();
        let lo = crate::geometry::sub(bb.min, [band; 3]);
        let hi = crate::geometry::add(bb.max, [band; 3]);
        let Some(range) = spec.index_range(lo, hi) else {
            continue;
        };
        for z in range[2].0..=range[2].1 {
            for y in range[1].0..=range[1].1 {
                for x in range[0].0..=range[0].1 {
                    let c = spec.center([x, y, z]);
                    if point_triangle_distance_sq(c, tri) <= band_sq {
                        cells.push(spec.linear([x, y, z]));
                    }
                }
            }
        }
    }
    Occupancy::from_linear(*spec, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Triangle, Vec3};

    /// Independent distance to an axis-aligned rectangle lying in a y-plane.
    fn rect_distance(p: Vec3, y: f64, x: (f64, f64), z: (f64, f64)) -> f64 {
        let dx = (x.0 - p[0]).max(0.0).max(p[0] - x.1);
        let dz = (z.0 - p[2]).max(0.0).max(p[2] - z.1);
        (dx * dx + (p[1] - y).powi(2) + dz * dz).sqrt()
    }

    #[test]
    fn unit_cube_fills_two_cubed_grid() {
        let mesh = Mesh::cuboid([0.0; 3], [1.0; 3]);
        let spec = GridSpec::new([0.0; 3], 0.5, [2, 2, 2]).unwrap();
        let occ = voxelize_mesh(&mesh, &spec, 0.26).unwrap();
        // Oracle: every center is 0.25 from its nearest face.
        let expected: Vec<usize> = (0..spec.len())
            .filter(|&l| {
                let c = spec.center(spec.coords(l));
                mesh.triangles
                    .iter()
                    .map(|t| point_triangle_distance_sq(c, t).sqrt())
                    .fold(f64::INFINITY, f64::min)
                    <= 0.26
            })
            .collect();
        assert_eq!(expected.len(), 8);
        assert_eq!(occ.linear_indices(), expected.as_slice());
    }

    #[test]
    fn empty_mesh_gives_empty_occupancy() {
        let spec = GridSpec::new([0.0; 3], 0.5, [2, 2, 2]).unwrap();
        assert!(voxelize_mesh(&Mesh::default(), &spec, 0.3).unwrap().is_empty());
    }

    #[test]
    fn zero_thickness_quad_gives_one_voxel_slab() {
        let s = 1.0;
        let spec = GridSpec::new([0.0; 3], s, [6, 5, 6]).unwrap();
        // Quad in the plane of the y=2 voxel centers (y = 2.5).
        let y = 2.5;
        let (x0, x1, z0, z1) = (0.3, 4.7, 1.2, 3.9);
        let quad = Mesh::new(vec![
            Triangle([[x0, y, z0], [x1, y, z0], [x1, y, z1]]),
            Triangle([[x0, y, z0], [x1, y, z1], [x0, y, z1]]),
        ]);
        let occ = voxelize_mesh(&quad, &spec, 0.5 * s).unwrap();
        let expected: Vec<usize> = (0..spec.len())
            .filter(|&l| rect_distance(spec.center(spec.coords(l)), y, (x0, x1), (z0, z1)) <= 0.5 * s)
            .collect();
        assert_eq!(occ.linear_indices(), expected.as_slice());
        assert!(occ.coords().all(|c| c[1] == 2));
        // Unfractured: every center whose xz projection is inside the quad.
        for x in 0..6 {
            for z in 0..6 {
                let c = spec.center([x, 2, z]);
                if c[0] >= x0 && c[0] <= x1 && c[2] >= z0 && c[2] <= z1 {
                    assert!(occ.contains_coords([x, 2, z]));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = GridSpec::new([0.0; 3], 0.5, [2, 2, 2]).unwrap();
        let mesh = Mesh::cuboid([0.0; 3], [1.0; 3]);
        assert!(voxelize_mesh(&mesh, &spec, -1.0).is_err());
        let bad = Mesh::new(vec![Triangle([[f64::NAN, 0.0, 0.0], [0.0; 3], [1.0; 3]])]);
        assert!(voxelize_mesh(&bad, &spec, 0.1).is_err());
    }
}
