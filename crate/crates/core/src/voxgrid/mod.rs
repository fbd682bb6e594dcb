//! World- and block-level voxel grids.
//!
//! A [`GlobalGrid`] stores exactly one owner per voxel, which is what makes
//! scene-level collisions impossible by construction: every operation that
//! produces a grid writes only into free voxels or resolves contention first.

mod block;
mod conflict;
mod fill;
pub mod format;
mod voxelize;

pub use block::{
    compute_target_sdf, extract_local_block, write_back, write_back_in_place, BlockFrame,
    LocalBlock, WriteBack, WriteBackStatus, STATE_CONTEXT, STATE_FREE, STATE_TARGET,
};
pub use conflict::{resolve_conflicts, ConflictObject};
pub use fill::fill_holes;
pub use voxelize::{default_band, voxelize_mesh};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Instance id of unoccupied voxels.
pub const FREE: u32 = 0;
/// Instance id reserved for the architectural structure.
pub const STRUCT: u32 = u32::MAX;

/// Truncation distance of the target SDF, in voxels.
pub const DEFAULT_SDF_TRUNCATION: f64 = 8.0;

/// Axis-aligned voxel lattice: `origin` is the min corner of voxel (0,0,0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    origin: Vec3,
    voxel_size: f64,
    dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if !crate::geometry::is_finite(origin) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::invalid(format!("grid dims {dims:?} too large")))?;
        Ok(GridSpec {
            origin,
            voxel_size,
            dims,
        })
    }

    /// Smallest lattice-aligned grid (voxel corners at integer multiples of
    /// `voxel_size`) covering `[min, max]` plus `pad` voxels on every side.
    pub fn covering(min: Vec3, max: Vec3, voxel_size: f64, pad: usize) -> Result<Self> {
        let mut origin = [0.0; 3];
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let lo = (min[a] / voxel_size).floor() as i64 - pad as i64;
            let hi = (max[a] / voxel_size).floor() as i64 + 1 + pad as i64;
            origin[a] = lo as f64 * voxel_size;
            dims[a] = (hi - lo).max(1) as usize;
        }
        GridSpec::new(origin, voxel_size, dims)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        [
            self.origin[0] + (idx[0] as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (idx[1] as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (idx[2] as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Lattice index of the voxel containing `p`, possibly out of range.
    #[inline]
    pub fn locate_unbounded(&self, p: Vec3) -> [i64; 3] {
        [
            ((p[0] - self.origin[0]) / self.voxel_size).floor() as i64,
            ((p[1] - self.origin[1]) / self.voxel_size).floor() as i64,
            ((p[2] - self.origin[2]) / self.voxel_size).floor() as i64,
        ]
    }

    #[inline]
    pub fn in_bounds(&self, idx: [i64; 3]) -> Option<[usize; 3]> {
        if (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.dims[a]) {
            Some([idx[0] as usize, idx[1] as usize, idx[2] as usize])
        } else {
            None
        }
    }

    pub fn locate(&self, p: Vec3) -> Option<[usize; 3]> {
        self.in_bounds(self.locate_unbounded(p))
    }

    /// Clamped inclusive index range whose voxel centers may lie in `[min, max]`.
    pub(crate) fn index_range(&self, min: Vec3, max: Vec3) -> Option<[(usize, usize); 3]> {
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = ((min[a] - self.origin[a]) / self.voxel_size - 0.5).ceil() as i64;
            let hi = ((max[a] - self.origin[a]) / self.voxel_size - 0.5).floor() as i64;
            let lo = lo.max(0);
            let hi = hi.min(self.dims[a] as i64 - 1);
            if lo > hi {
                return None;
            }
            out[a] = (lo as usize, hi as usize);
        }
        Some(out)
    }
}

/// Sparse voxel set on a [`GridSpec`]; linear indices kept sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    spec: GridSpec,
    cells: Vec<usize>,
}

impl Occupancy {
    pub fn empty(spec: GridSpec) -> Self {
        Occupancy {
            spec,
            cells: Vec::new(),
        }
    }

    /// Builds from linear indices; duplicates are removed.
    pub fn from_linear(spec: GridSpec, mut cells: Vec<usize>) -> Result<Self> {
        let n = spec.len();
        if let Some(bad) = cells.iter().find(|&&c| c >= n) {
            return Err(Error::invalid(format!("voxel index {bad} outside grid of {n} voxels")));
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(Occupancy { spec, cells })
    }

    pub fn from_coords(spec: GridSpec, coords: impl IntoIterator<Item = [usize; 3]>) -> Result<Self> {
        let dims = spec.dims();
        let mut cells = Vec::new();
        for c in coords {
            if (0..3).any(|a| c[a] >= dims[a]) {
                return Err(Error::invalid(format!("voxel {c:?} outside grid {dims:?}")));
            }
            cells.push(spec.linear(c));
        }
        Occupancy::from_linear(spec, cells)
    }

    /// Every voxel whose center lies in the closed box `[min, max]`.
    pub fn from_box(spec: GridSpec, min: Vec3, max: Vec3) -> Self {
        let mut cells = Vec::new();
        if let Some(r) = spec.index_range(min, max) {
            for z in r[2].0..=r[2].1 {
                for y in r[1].0..=r[1].1 {
                    for x in r[0].0..=r[0].1 {
                        cells.push(spec.linear([x, y, z]));
                    }
                }
            }
        }
        cells.sort_unstable();
        Occupancy { spec, cells }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn linear_indices(&self) -> &[usize] {
        &self.cells
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.cells.binary_search(&linear).is_ok()
    }

    pub fn contains_coords(&self, c: [usize; 3]) -> bool {
        self.contains(self.spec.linear(c))
    }

    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.cells.iter().map(|&c| self.spec.coords(c))
    }

    pub fn centers(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.coords().map(|c| self.spec.center(c))
    }

    /// Sorted-merge intersection count; both sets must share a grid.
    pub fn intersection_count(&self, other: &Occupancy) -> usize {
        debug_assert_eq!(self.spec, other.spec);
        let (a, b) = (&self.cells, &other.cells);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn is_superset_of(&self, other: &Occupancy) -> bool {
        self.intersection_count(other) == other.len()
    }

    /// Inclusive index bounds, `None` when empty.
    pub fn index_bounds(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut it = self.coords();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for c in it {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        Some((lo, hi))
    }
}

/// World-frame exclusive instance/semantic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGrid {
    spec: GridSpec,
    owner: Vec<u32>,
    semantic: Vec<u16>,
}

impl GlobalGrid {
    pub fn new(spec: GridSpec) -> Self {
        GlobalGrid {
            spec,
            owner: vec![FREE; spec.len()],
            semantic: vec![0; spec.len()],
        }
    }

    pub(crate) fn from_parts(spec: GridSpec, owner: Vec<u32>, semantic: Vec<u16>) -> Result<Self> {
        if owner.len() != spec.len() || semantic.len() != spec.len() {
            return Err(Error::invalid("owner/semantic arrays do not match grid size"));
        }
        Ok(GlobalGrid {
            spec,
            owner,
            semantic,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn owner(&self, linear: usize) -> u32 {
        self.owner[linear]
    }

    #[inline]
    pub fn semantic(&self, linear: usize) -> u16 {
        self.semantic[linear]
    }

    pub fn owners(&self) -> &[u32] {
        &self.owner
    }

    pub fn semantics(&self) -> &[u16] {
        &self.semantic
    }

    pub fn is_free(&self, linear: usize) -> bool {
        self.owner[linear] == FREE
    }

    pub fn non_free_count(&self) -> usize {
        self.owner.iter().filter(|&&o| o != FREE).count()
    }

    pub fn contains_id(&self, id: u32) -> bool {
        self.owner.contains(&id)
    }

    /// Distinct owners other than [`FREE`], ascending ([`STRUCT`] last).
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.owner.iter().copied().filter(|&o| o != FREE).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_occupancy(&self, id: u32) -> Occupancy {
        let cells = self
            .owner
            .iter()
            .enumerate()
            .filter(|(_, &o)| o == id)
            .map(|(i, _)| i)
            .collect();
        Occupancy {
            spec: self.spec,
            cells,
        }
    }

    /// Per-instance voxel sets for every owner except FREE and STRUCT,
    /// ascending by id, in one pass over the grid.
    pub fn object_occupancies(&self) -> Vec<(u32, u16, Occupancy)> {
        let mut by_id: std::collections::BTreeMap<u32, (u16, Vec<usize>)> = Default::default();
        for (i, (&o, &s)) in self.owner.iter().zip(&self.semantic).enumerate() {
            if o != FREE && o != STRUCT {
                by_id.entry(o).or_insert_with(|| (s, Vec::new())).1.push(i);
            }
        }
        by_id
            .into_iter()
            .map(|(id, (sem, cells))| {
                (
                    id,
                    sem,
                    Occupancy {
                        spec: self.spec,
                        cells,
                    },
                )
            })
            .collect()
    }

    /// Claims every free voxel of `occ` for `id`; returns how many were claimed.
    pub fn claim_free(&mut self, occ: &Occupancy, id: u32, category: u16) -> Result<usize> {
        if occ.spec != self.spec {
            return Err(Error::invalid("occupancy grid does not match global grid"));
        }
        let mut n = 0;
        for &c in &occ.cells {
            if self.owner[c] == FREE {
                self.owner[c] = id;
                self.semantic[c] = category;
                n += 1;
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new([0.0; 3], 1.0, [4, 3, 2]).unwrap()
    }

    #[test]
    fn index_mapping_is_bijective() {
        let s = spec();
        for l in 0..s.len() {
            let c = s.coords(l);
            assert_eq!(s.linear(c), l);
            assert_eq!(s.locate(s.center(c)), Some(c));
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(GridSpec::new([0.0; 3], 0.0, [1, 1, 1]).is_err());
        assert!(GridSpec::new([0.0; 3], 1.0, [0, 1, 1]).is_err());
        assert!(GridSpec::new([f64::NAN, 0.0, 0.0], 1.0, [1, 1, 1]).is_err());
    }

    #[test]
    fn occupancy_set_semantics() {
        let s = spec();
        let occ = Occupancy::from_coords(s, [[1, 1, 1], [1, 1, 1], [0, 0, 0]]).unwrap();
        assert_eq!(occ.len(), 2);
        assert!(occ.contains_coords([1, 1, 1]));
        assert!(Occupancy::from_coords(s, [[4, 0, 0]]).is_err());
    }

    #[test]
    fn covering_grid_is_lattice_aligned() {
        let s = GridSpec::covering([0.013, -0.05, 0.0], [0.1, 0.05, 0.02], 0.02, 1).unwrap();
        for a in 0..3 {
            let k = s.origin()[a] / 0.02;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn from_box_counts_closed_centers() {
        let s = GridSpec::new([0.0; 3], 1.0, [5, 5, 5]).unwrap();
        let occ = Occupancy::from_box(s, [0.5, 0.5, 0.5], [2.5, 0.5, 0.5]);
        assert_eq!(occ.len(), 3);
    }
}
