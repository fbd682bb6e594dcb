use crate::anchors::Anchor;
use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::geometry::{add, sub, Heading, Vec3};

use super::{GlobalGrid, FREE, STRUCT};

pub const STATE_FREE: u8 = 0;
pub const STATE_CONTEXT: u8 = 1;
pub const STATE_TARGET: u8 = 2;

/// Placement of a cubic K³ block in the world: yaw-only rotation about its
/// center, same voxel pitch as the global grid.
///
/// Block voxel `a` has its center at local offset `(a + 0.5 - K/2) * s_v`,
/// so for even K the frame center sits on a voxel corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockFrame {
    center: Vec3,
    heading: Heading,
    voxel_size: f64,
    resolution: usize,
}

impl BlockFrame {
    pub fn new(center: Vec3, heading: Heading, voxel_size: f64, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("block resolution must be positive"));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if !crate::geometry::is_finite(center) {
            return Err(Error::invalid("block center must be finite"));
        }
        Ok(BlockFrame {
            center,
            heading,
            voxel_size,
            resolution,
        })
    }

    /// Block centered on the anchor, offset by `origin_shift` voxels along
    /// the anchor's own (canonical) axes.
    pub fn for_anchor(anchor: &Anchor, resolution: usize, voxel_size: f64, origin_shift: [i32; 3]) -> Result<Self> {
        let local = [
            origin_shift[0] as f64 * voxel_size,
            origin_shift[1] as f64 * voxel_size,
            origin_shift[2] as f64 * voxel_size,
        ];
        let center = add(anchor.position, anchor.heading.rotate(local));
        BlockFrame::new(center, anchor.heading, voxel_size, resolution)
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn heading(&self) -> Heading {
        self.heading
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    #[inline]
    pub fn linear(&self, a: [usize; 3]) -> usize {
        a[0] + self.resolution * (a[1] + self.resolution * a[2])
    }

    #[inline]
    pub fn coords(&self, l: usize) -> [usize; 3] {
        let k = self.resolution;
        [l % k, (l / k) % k, l / (k * k)]
    }

    /// Local (canonical) offset of a block voxel center from the frame center.
    #[inline]
    pub fn local_offset(&self, a: [usize; 3]) -> Vec3 {
        let half = self.resolution as f64 / 2.0;
        [
            (a[0] as f64 + 0.5 - half) * self.voxel_size,
            (a[1] as f64 + 0.5 - half) * self.voxel_size,
            (a[2] as f64 + 0.5 - half) * self.voxel_size,
        ]
    }

    #[inline]
    pub fn voxel_center(&self, a: [usize; 3]) -> Vec3 {
        add(self.center, self.heading.rotate(self.local_offset(a)))
    }

    /// Continuous block coordinates of a world point; voxel `a` spans `[a, a+1)`.
    #[inline]
    pub fn to_block_coords(&self, w: Vec3) -> Vec3 {
        let local = self.heading.unrotate(sub(w, self.center));
        let half = self.resolution as f64 / 2.0;
        [
            local[0] / self.voxel_size + half,
            local[1] / self.voxel_size + half,
            local[2] / self.voxel_size + half,
        ]
    }

    /// Block voxel containing `w`, if inside the block.
    #[inline]
    pub fn nearest_voxel(&self, w: Vec3) -> Option<[usize; 3]> {
        let c = self.to_block_coords(w);
        let k = self.resolution as f64;
        if (0..3).all(|a| c[a] >= 0.0 && c[a] < k) {
            Some([c[0] as usize, c[1] as usize, c[2] as usize])
        } else {
            None
        }
    }
}

/// Canonicalized K³ block of ternary states around one target.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    frame: BlockFrame,
    state: Vec<u8>,
    context_semantic: Vec<u16>,
    sdf: Option<Vec<f32>>,
}

impl LocalBlock {
    pub fn new(frame: BlockFrame, state: Vec<u8>, context_semantic: Vec<u16>) -> Result<Self> {
        if state.len() != frame.len() || context_semantic.len() != frame.len() {
            return Err(Error::invalid(format!(
                "block arrays must hold {} voxels",
                frame.len()
            )));
        }
        if let Some(bad) = state.iter().find(|&&s| s > STATE_TARGET) {
            return Err(Error::invalid(format!("state {bad} outside {{0,1,2}}")));
        }
        Ok(LocalBlock {
            frame,
            state,
            context_semantic,
            sdf: None,
        })
    }

    pub fn empty(frame: BlockFrame) -> Self {
        LocalBlock {
            frame,
            state: vec![STATE_FREE; frame.len()],
            context_semantic: vec![0; frame.len()],
            sdf: None,
        }
    }

    pub fn frame(&self) -> &BlockFrame {
        &self.frame
    }

    pub fn resolution(&self) -> usize {
        self.frame.resolution
    }

    pub fn states(&self) -> &[u8] {
        &self.state
    }

    pub fn state(&self, l: usize) -> u8 {
        self.state[l]
    }

    pub fn context_semantics(&self) -> &[u16] {
        &self.context_semantic
    }

    pub fn sdf(&self) -> Option<&[f32]> {
        self.sdf.as_deref()
    }

    pub fn set_state(&mut self, l: usize, state: u8, semantic: u16) {
        assert!(state <= STATE_TARGET);
        self.state[l] = state;
        self.context_semantic[l] = if state == STATE_CONTEXT { semantic } else { 0 };
    }

    pub(crate) fn with_sdf(mut self, sdf: Vec<f32>) -> Self {
        debug_assert_eq!(sdf.len(), self.state.len());
        self.sdf = Some(sdf);
        self
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.indices_with_state(STATE_TARGET)
    }

    pub fn indices_with_state(&self, s: u8) -> Vec<usize> {
        self.state
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == s)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_state(&self, s: u8) -> usize {
        self.state.iter().filter(|&&v| v == s).count()
    }
}

/// Samples the global grid into a yaw-canonical block by nearest neighbour.
///
/// Voxels owned by `target` become τ=2, any other owner (structure included)
/// τ=1 with its semantic, everything else τ=0. Samples outside the grid read
/// as free.
pub fn extract_local_block(grid: &GlobalGrid, frame: &BlockFrame, target: u32) -> Result<LocalBlock> {
    let spec = grid.spec();
    if (frame.voxel_size - spec.voxel_size()).abs() > 1e-9 * spec.voxel_size() {
        return Err(Error::invalid(format!(
            "block voxel size {} differs from grid voxel size {}",
            frame.voxel_size,
            spec.voxel_size()
        )));
    }
    let mut block = LocalBlock::empty(*frame);
    let mut any_inside = false;
    for l in 0..frame.len() {
        let a = frame.coords(l);
        let Some(g) = spec.locate(frame.voxel_center(a)) else {
            continue;
        };
        any_inside = true;
        let gl = spec.linear(g);
        let owner = grid.owner(gl);
        if owner == FREE {
            continue;
        }
        if owner == target {
            block.state[l] = STATE_TARGET;
        } else {
            block.state[l] = STATE_CONTEXT;
            block.context_semantic[l] = grid.semantic(gl);
        }
    }
    if !any_inside {
        return Err(Error::OutOfDomain("block lies entirely outside the grid".into()));
    }
    Ok(block)
}

/// Truncated signed distance of the τ=2 mask, in voxels, scaled to [-1, 1].
///
/// Interior voxels get `-(d_out - 0.5) / T`, exterior `(d_in - 0.5) / T`,
/// where `d_out`/`d_in` are center distances to the nearest non-target /
/// target voxel; the surface sits half a voxel from each boundary center.
/// Space beyond the block counts as non-target.
pub fn compute_target_sdf(block: &LocalBlock, truncation: f64) -> Result<LocalBlock> {
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(Error::invalid(format!("SDF truncation must be > 0, got {truncation}")));
    }
    let k = block.resolution();
    if block.count_state(STATE_TARGET) == 0 {
        return Ok(block.clone().with_sdf(vec![1.0; block.state.len()]));
    }
    let p = k + 2;
    let dims = [p, p, p];
    let mut target = vec![false; p * p * p];
    for l in 0..block.state.len() {
        if block.state[l] == STATE_TARGET {
            let a = block.frame.coords(l);
            target[(a[0] + 1) + p * ((a[1] + 1) + p * (a[2] + 1))] = true;
        }
    }
    let outside: Vec<bool> = target.iter().map(|t| !t).collect();
    let to_target = squared_edt(&target, dims);
    let to_outside = squared_edt(&outside, dims);

    let mut sdf = Vec::with_capacity(block.state.len());
    for l in 0..block.state.len() {
        let a = block.frame.coords(l);
        let pi = (a[0] + 1) + p * ((a[1] + 1) + p * (a[2] + 1));
        let v = if target[pi] {
            -(to_outside[pi].sqrt() - 0.5) / truncation
        } else {
            (to_target[pi].sqrt() - 0.5) / truncation
        };
        sdf.push(v.clamp(-1.0, 1.0) as f32);
    }
    Ok(block.clone().with_sdf(sdf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteBackStatus {
    Written,
    /// No τ=2 voxel of the block maps into the grid.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteBack {
    pub written: usize,
    pub status: WriteBackStatus,
}

/// Pure form of [`write_back_in_place`]: returns a new grid.
pub fn write_back(grid: &GlobalGrid, block: &LocalBlock, new_id: u32, category: u16) -> Result<(GlobalGrid, WriteBack)> {
    let mut out = grid.clone();
    let wb = write_back_in_place(&mut out, block, new_id, category)?;
    Ok((out, wb))
}

/// Writes the block's τ=2 voxels into the free space of the grid.
///
/// Each τ=2 block voxel center goes through the forward frame transform and
/// lands in the global voxel containing it, the same nearest-neighbour
/// correspondence extraction uses. Only free global voxels are written;
/// non-free voxels are never touched.
pub fn write_back_in_place(grid: &mut GlobalGrid, block: &LocalBlock, new_id: u32, category: u16) -> Result<WriteBack> {
    if new_id == FREE || new_id == STRUCT {
        return Err(Error::invalid(format!("instance id {new_id} is reserved")));
    }
    if grid.contains_id(new_id) {
        return Err(Error::invalid(format!("instance id {new_id} already present in grid")));
    }
    let frame = block.frame;
    let spec = *grid.spec();
    if (frame.voxel_size - spec.voxel_size()).abs() > 1e-9 * spec.voxel_size() {
        return Err(Error::invalid("block voxel size differs from grid voxel size"));
    }

    let mut hits = 0usize;
    let mut written = 0usize;
    for (l, &s) in block.state.iter().enumerate() {
        if s != STATE_TARGET {
            continue;
        }
        let Some(g) = spec.locate(frame.voxel_center(frame.coords(l))) else {
            continue;
        };
        hits += 1;
        let gl = spec.linear(g);
        if grid.owner[gl] == FREE {
            grid.owner[gl] = new_id;
            grid.semantic[gl] = category;
            written += 1;
        }
    }
    let status = if hits == 0 {
        WriteBackStatus::Empty
    } else {
        WriteBackStatus::Written
    };
    Ok(WriteBack { written, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::{resolve_conflicts, ConflictObject, GridSpec, Occupancy};
    use std::f64::consts::FRAC_PI_2;

    fn grid_with_box(dims: [usize; 3], lo: [usize; 3], hi: [usize; 3], id: u32, cat: u16) -> GlobalGrid {
        let spec = GridSpec::new([0.0; 3], 1.0, dims).unwrap();
        let mut coords = Vec::new();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    coords.push([x, y, z]);
                }
            }
        }
        let occ = Occupancy::from_coords(spec, coords).unwrap();
        resolve_conflicts(
            spec,
            &[ConflictObject {
                occupancy: occ,
                bounding_volume: 1.0,
                id,
                category: cat,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_frame_reproduces_subgrid() {
        let grid = grid_with_box([16, 16, 16], [5, 6, 7], [9, 8, 10], 3, 2);
        // Center on a voxel corner so block and grid lattices coincide.
        let frame = BlockFrame::new([8.0, 8.0, 8.0], Heading::IDENTITY, 1.0, 8).unwrap();
        let block = extract_local_block(&grid, &frame, 99).unwrap();
        for l in 0..frame.len() {
            let a = frame.coords(l);
            let g = [a[0] + 4, a[1] + 4, a[2] + 4];
            let gl = grid.spec().linear(g);
            let expected = if grid.owner(gl) == FREE { STATE_FREE } else { STATE_CONTEXT };
            assert_eq!(block.state(l), expected);
            if expected == STATE_CONTEXT {
                assert_eq!(block.context_semantics()[l], grid.semantic(gl));
            }
        }
    }

    #[test]
    fn quarter_turn_swaps_horizontal_extents() {
        // Box spans 6 voxels in x and 2 in z around the block center.
        let grid = grid_with_box([16, 16, 16], [5, 7, 7], [10, 8, 8], 4, 1);
        let frame = BlockFrame::new([8.0, 8.0, 8.0], Heading::from_angle(FRAC_PI_2), 1.0, 12).unwrap();
        let block = extract_local_block(&grid, &frame, 0).unwrap();
        // Oracle: nearest-neighbour resample of every block voxel center.
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for l in 0..frame.len() {
            let a = frame.coords(l);
            let w = frame.voxel_center(a);
            let expected = grid
                .spec()
                .locate(w)
                .map(|g| grid.owner(grid.spec().linear(g)) == 4)
                .unwrap_or(false);
            assert_eq!(block.state(l) == STATE_CONTEXT, expected);
            if expected {
                for ax in 0..3 {
                    lo[ax] = lo[ax].min(a[ax]);
                    hi[ax] = hi[ax].max(a[ax]);
                }
            }
        }
        assert_eq!(hi[0] - lo[0] + 1, 2);
        assert_eq!(hi[2] - lo[2] + 1, 6);
    }

    #[test]
    fn target_and_context_states() {
        let mut grid = grid_with_box([12, 12, 12], [4, 4, 4], [5, 5, 5], 1, 3);
        let other = Occupancy::from_coords(*grid.spec(), [[6, 4, 4]]).unwrap();
        grid.claim_free(&other, 2, 5).unwrap();
        let frame = BlockFrame::new([6.0, 6.0, 6.0], Heading::IDENTITY, 1.0, 6).unwrap();
        let block = extract_local_block(&grid, &frame, 1).unwrap();
        assert_eq!(block.count_state(STATE_TARGET), 8);
        assert_eq!(block.count_state(STATE_CONTEXT), 1);
        let l = block.indices_with_state(STATE_CONTEXT)[0];
        assert_eq!(block.context_semantics()[l], 5);
    }

    #[test]
    fn block_fully_outside_is_out_of_domain() {
        let grid = grid_with_box([4, 4, 4], [0, 0, 0], [1, 1, 1], 1, 0);
        let frame = BlockFrame::new([100.0, 0.0, 0.0], Heading::IDENTITY, 1.0, 4).unwrap();
        assert!(matches!(extract_local_block(&grid, &frame, 1), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn out_of_grid_samples_read_free() {
        let grid = grid_with_box([4, 4, 4], [0, 0, 0], [3, 3, 3], 1, 0);
        let frame = BlockFrame::new([0.0, 0.0, 0.0], Heading::IDENTITY, 1.0, 4).unwrap();
        let block = extract_local_block(&grid, &frame, 7).unwrap();
        assert_eq!(block.count_state(STATE_CONTEXT), 8);
        assert_eq!(block.count_state(STATE_FREE), 56);
    }

    fn block_with_targets(k: usize, cells: &[[usize; 3]]) -> LocalBlock {
        let frame = BlockFrame::new([0.0; 3], Heading::IDENTITY, 1.0, k).unwrap();
        let mut b = LocalBlock::empty(frame);
        for &c in cells {
            b.set_state(frame.linear(c), STATE_TARGET, 0);
        }
        b
    }

    /// Brute force: nearest opposite-class center, block exterior counts as outside.
    fn sdf_oracle(b: &LocalBlock, t: f64) -> Vec<f32> {
        let f = b.frame();
        let k = f.resolution() as i64;
        let is_target = |p: [i64; 3]| {
            (0..3).all(|a| p[a] >= 0 && p[a] < k)
                && b.state(f.linear([p[0] as usize, p[1] as usize, p[2] as usize])) == STATE_TARGET
        };
        (0..f.len())
            .map(|l| {
                let a = f.coords(l);
                let p = [a[0] as i64, a[1] as i64, a[2] as i64];
                let inside = is_target(p);
                let mut best = f64::INFINITY;
                for z in -1..=k {
                    for y in -1..=k {
                        for x in -1..=k {
                            if is_target([x, y, z]) != inside {
                                let d = (((x - p[0]).pow(2) + (y - p[1]).pow(2) + (z - p[2]).pow(2)) as f64).sqrt();
                                best = best.min(d);
                            }
                        }
                    }
                }
                let v = if inside { -(best - 0.5) / t } else { (best - 0.5) / t };
                v.clamp(-1.0, 1.0) as f32
            })
            .collect()
    }

    #[test]
    fn single_voxel_sdf_is_half_voxel() {
        let b = block_with_targets(6, &[[3, 3, 3]]);
        let s = compute_target_sdf(&b, 8.0).unwrap();
        let l = b.frame().linear([3, 3, 3]);
        assert_eq!(s.sdf().unwrap()[l], (-0.5f64 / 8.0) as f32);
        assert_eq!(s.sdf().unwrap(), sdf_oracle(&b, 8.0).as_slice());
    }

    #[test]
    fn solid_cube_center_sdf() {
        let mut cells = Vec::new();
        for z in 2..5 {
            for y in 2..5 {
                for x in 2..5 {
                    cells.push([x, y, z]);
                }
            }
        }
        let b = block_with_targets(8, &cells);
        let s = compute_target_sdf(&b, 8.0).unwrap();
        assert_eq!(s.sdf().unwrap()[b.frame().linear([3, 3, 3])], (-1.5f64 / 8.0) as f32);
        assert_eq!(s.sdf().unwrap(), sdf_oracle(&b, 8.0).as_slice());
    }

    #[test]
    fn far_voxels_truncate_to_one() {
        let b = block_with_targets(12, &[[0, 0, 0]]);
        let s = compute_target_sdf(&b, 8.0).unwrap();
        assert_eq!(s.sdf().unwrap()[b.frame().linear([9, 0, 0])], 1.0);
        let none = compute_target_sdf(&block_with_targets(4, &[]), 8.0).unwrap();
        assert!(none.sdf().unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sdf_sign_matches_target_membership() {
        let cells = [[1, 1, 1], [2, 1, 1], [2, 2, 1], [4, 4, 4], [5, 5, 5]];
        let b = block_with_targets(7, &cells);
        let s = compute_target_sdf(&b, 3.0).unwrap();
        assert_eq!(s.sdf().unwrap(), sdf_oracle(&b, 3.0).as_slice());
        for l in 0..b.frame().len() {
            assert_eq!(s.sdf().unwrap()[l] < 0.0, b.state(l) == STATE_TARGET);
        }
    }

    #[test]
    fn write_back_into_free_space_copies_target() {
        let spec = GridSpec::new([0.0; 3], 1.0, [10, 10, 10]).unwrap();
        let grid = GlobalGrid::new(spec);
        let frame = BlockFrame::new([5.0, 5.0, 5.0], Heading::IDENTITY, 1.0, 4).unwrap();
        let mut block = LocalBlock::empty(frame);
        for l in [0, 5, 17, 63] {
            block.set_state(l, STATE_TARGET, 0);
        }
        let (out, wb) = write_back(&grid, &block, 7, 2).unwrap();
        assert_eq!(wb.status, WriteBackStatus::Written);
        assert_eq!(wb.written, 4);
        assert_eq!(out.instance_occupancy(7).len(), 4);
    }

    #[test]
    fn write_back_preserves_owned_voxels() {
        let grid = grid_with_box([10, 10, 10], [3, 3, 3], [3, 3, 3], 1, 4);
        let frame = BlockFrame::new([4.0, 4.0, 4.0], Heading::IDENTITY, 1.0, 2).unwrap();
        let mut block = LocalBlock::empty(frame);
        for l in 0..8 {
            block.set_state(l, STATE_TARGET, 0);
        }
        let (out, wb) = write_back(&grid, &block, 2, 0).unwrap();
        assert_eq!(wb.written, 7);
        assert_eq!(out.owner(grid.spec().linear([3, 3, 3])), 1);
        assert_eq!(out.semantic(grid.spec().linear([3, 3, 3])), 4);
    }

    #[test]
    fn extract_then_write_back_is_identity() {
        let grid = grid_with_box([12, 12, 12], [4, 4, 5], [7, 6, 6], 1, 3);
        let frame = BlockFrame::new([6.0, 6.0, 6.0], Heading::from_angle(0.3), 1.0, 10).unwrap();
        let block = extract_local_block(&grid, &frame, 1).unwrap();
        let (out, wb) = write_back(&grid, &block, 2, 3).unwrap();
        assert_eq!(wb.written, 0);
        assert_eq!(out, grid);
    }

    #[test]
    fn empty_write_back_status() {
        let spec = GridSpec::new([0.0; 3], 1.0, [4, 4, 4]).unwrap();
        let grid = GlobalGrid::new(spec);
        let frame = BlockFrame::new([50.0, 50.0, 50.0], Heading::IDENTITY, 1.0, 4).unwrap();
        let mut block = LocalBlock::empty(frame);
        block.set_state(0, STATE_TARGET, 0);
        let (_, wb) = write_back(&grid, &block, 1, 0).unwrap();
        assert_eq!(wb.status, WriteBackStatus::Empty);
        assert!(write_back(&grid, &block, STRUCT, 0).is_err());
    }
}
