use super::Occupancy;

/// Morphological hole filling: every voxel that cannot reach the grid
/// boundary through 6-connected free voxels becomes occupied.
///
/// Work is confined to the occupancy's bounding box padded by one voxel;
/// voxels outside the box are free and trivially boundary-connected, so the
/// result equals a full-grid flood fill.
pub fn fill_holes(occ: &Occupancy) -> Occupancy {
    let Some((lo, hi)) = occ.index_bounds() else {
        return occ.clone();
    };
    let spec = *occ.spec();
    let dims = spec.dims();
    let mut start = [0usize; 3];
    let mut size = [0usize; 3];
    for a in 0..3 {
        start[a] = lo[a].saturating_sub(1);
        let end = (hi[a] + 1).min(dims[a] - 1);
        size[a] = end - start[a] + 1;
    }
    let local = |c: [usize; 3]| (c[0] - start[0]) + size[0] * ((c[1] - start[1]) + size[1] * (c[2] - start[2]));
    let n = size[0] * size[1] * size[2];

    // 0 = free-unvisited, 1 = solid, 2 = reached from outside
    let mut mark = vec![0u8; n];
    for c in occ.coords() {
        mark[local(c)] = 1;
    }

    let mut stack = Vec::new();
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let on_face = x == 0 || y == 0 || z == 0 || x + 1 == size[0] || y + 1 == size[1] || z + 1 == size[2];
                if on_face {
                    let i = x + size[0] * (y + size[1] * z);
                    if mark[i] == 0 {
                        mark[i] = 2;
                        stack.push([x, y, z]);
                    }
                }
            }
        }
    }
    while let Some(p) = stack.pop() {
        for a in 0..3 {
            for step in [-1i64, 1] {
                let v = p[a] as i64 + step;
                if v < 0 || v as usize >= size[a] {
                    continue;
                }
                let mut q = p;
                q[a] = v as usize;
                let i = q[0] + size[0] * (q[1] + size[1] * q[2]);
                if mark[i] == 0 {
                    mark[i] = 2;
                    stack.push(q);
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(occ.len());
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let i = x + size[0] * (y + size[1] * z);
                if mark[i] != 2 {
                    cells.push(spec.linear([x + start[0], y + start[1], z + start[2]]));
                }
            }
        }
    }
    Occupancy::from_linear(spec, cells).expect("filled cells lie inside the grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::GridSpec;
    use proptest::prelude::*;

    /// Full-grid flood fill from every boundary free voxel.
    fn oracle(occ: &Occupancy) -> Occupancy {
        let spec = *occ.spec();
        let d = spec.dims();
        let mut reached = vec![false; spec.len()];
        let mut queue = std::collections::VecDeque::new();
        for l in 0..spec.len() {
            let c = spec.coords(l);
            let boundary = (0..3).any(|a| c[a] == 0 || c[a] + 1 == d[a]);
            if boundary && !occ.contains(l) {
                reached[l] = true;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            for a in 0..3 {
                for s in [-1i64, 1] {
                    let v = c[a] as i64 + s;
                    if v < 0 || v as usize >= d[a] {
                        continue;
                    }
                    let mut q = c;
                    q[a] = v as usize;
                    let l = spec.linear(q);
                    if !reached[l] && !occ.contains(l) {
                        reached[l] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        Occupancy::from_linear(spec, (0..spec.len()).filter(|&l| !reached[l]).collect()).unwrap()
    }

    fn shell(spec: GridSpec, lo: usize, hi: usize, open_top: bool) -> Occupancy {
        let mut coords = Vec::new();
        for z in lo..=hi {
            for y in lo..=hi {
                for x in lo..=hi {
                    let face = [x, y, z].iter().any(|&v| v == lo || v == hi);
                    if face && !(open_top && y == hi && x > lo && x < hi && z > lo && z < hi) {
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        Occupancy::from_coords(spec, coords).unwrap()
    }

    #[test]
    fn hollow_shell_becomes_solid() {
        let spec = GridSpec::new([0.0; 3], 1.0, [9, 9, 9]).unwrap();
        let occ = shell(spec, 2, 6, false);
        assert_eq!(occ.len(), 125 - 27);
        assert_eq!(fill_holes(&occ).len(), 125);
    }

    #[test]
    fn solid_cube_unchanged() {
        let spec = GridSpec::new([0.0; 3], 1.0, [9, 9, 9]).unwrap();
        let occ = fill_holes(&shell(spec, 2, 6, false));
        assert_eq!(fill_holes(&occ), occ);
    }

    #[test]
    fn open_top_cavity_stays_empty() {
        let spec = GridSpec::new([0.0; 3], 1.0, [9, 9, 9]).unwrap();
        let occ = shell(spec, 2, 6, true);
        let filled = fill_holes(&occ);
        assert_eq!(filled, oracle(&occ));
        assert_eq!(filled, occ);
    }

    #[test]
    fn shell_touching_grid_boundary() {
        let spec = GridSpec::new([0.0; 3], 1.0, [5, 5, 5]).unwrap();
        let occ = shell(spec, 0, 4, false);
        assert_eq!(fill_holes(&occ).len(), 125);
    }

    proptest! {
        #[test]
        fn matches_full_grid_oracle_and_is_idempotent(
            bits in proptest::collection::vec(any::<u8>(), 216)
        ) {
            let spec = GridSpec::new([0.0; 3], 1.0, [6, 6, 6]).unwrap();
            let cells: Vec<usize> = bits.iter().enumerate().filter(|(_, b)| **b < 110).map(|(i, _)| i).collect();
            let occ = Occupancy::from_linear(spec, cells).unwrap();
            let filled = fill_holes(&occ);
            prop_assert!(filled.is_superset_of(&occ));
            prop_assert_eq!(&filled, &oracle(&occ));
            prop_assert_eq!(fill_holes(&filled), filled);
        }
    }
}
