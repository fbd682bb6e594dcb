//! `VXG1` binary voxel-grid files.
//!
//! Layout (little-endian): magic `VXG1`, version byte, `u32` dims D W H,
//! `f32` origin xyz, `f32` voxel size, `u32` run count, then runs of
//! `(u32 length, u32 owner, u16 semantic)` covering the grid in x-fastest
//! order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::{expect_header, read_f32, read_u16, read_u32, write_f32, write_header, write_u16, write_u32};

use super::{GlobalGrid, GridSpec};

pub const MAGIC: &[u8; 4] = b"VXG1";
pub const VERSION: u8 = 1;

pub fn write_grid(grid: &GlobalGrid, mut w: impl Write) -> Result<()> {
    let spec = grid.spec();
    write_header(&mut w, MAGIC, VERSION)?;
    for d in spec.dims() {
        write_u32(&mut w, d as u32)?;
    }
    for o in spec.origin() {
        write_f32(&mut w, o as f32)?;
    }
    write_f32(&mut w, spec.voxel_size() as f32)?;

    let mut runs: Vec<(u32, u32, u16)> = Vec::new();
    for (&o, &s) in grid.owners().iter().zip(grid.semantics()) {
        match runs.last_mut() {
            Some(run) if run.1 == o && run.2 == s && run.0 < u32::MAX => run.0 += 1,
            _ => runs.push((1, o, s)),
        }
    }
    write_u32(&mut w, runs.len() as u32)?;
    for (len, owner, sem) in runs {
        write_u32(&mut w, len)?;
        write_u32(&mut w, owner)?;
        write_u16(&mut w, sem)?;
    }
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<GlobalGrid> {
    expect_header(&mut r, MAGIC, VERSION, "VXG1")?;
    let dims = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
    let origin = [read_f32(&mut r)? as f64, read_f32(&mut r)? as f64, read_f32(&mut r)? as f64];
    let voxel_size = read_f32(&mut r)? as f64;
    let spec = GridSpec::new(origin, voxel_size, dims).map_err(|e| Error::format("VXG1", e.to_string()))?;

    let n = spec.len();
    let runs = read_u32(&mut r)? as usize;
    let mut owner = Vec::with_capacity(n);
    let mut semantic = Vec::with_capacity(n);
    for _ in 0..runs {
        let len = read_u32(&mut r)? as usize;
        let o = read_u32(&mut r)?;
        let s = read_u16(&mut r)?;
        if owner.len() + len > n {
            return Err(Error::format("VXG1", "runs exceed grid size"));
        }
        owner.extend(std::iter::repeat_n(o, len));
        semantic.extend(std::iter::repeat_n(s, len));
    }
    if owner.len() != n {
        return Err(Error::format("VXG1", format!("runs cover {} of {n} voxels", owner.len())));
    }
    GlobalGrid::from_parts(spec, owner, semantic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxgrid::{Occupancy, STRUCT};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(cells in proptest::collection::vec((0usize..60, 1u32..4, 0u16..5), 0..40)) {
            let spec = GridSpec::new([0.5, -1.0, 2.0], 0.25, [3, 4, 5]).unwrap();
            let mut grid = GlobalGrid::new(spec);
            for (c, id, sem) in cells {
                let id = if id == 3 { STRUCT } else { id };
                grid.claim_free(&Occupancy::from_linear(spec, vec![c]).unwrap(), id, sem).unwrap();
            }
            let mut buf = Vec::new();
            write_grid(&grid, &mut buf).unwrap();
            let back = read_grid(buf.as_slice()).unwrap();
            prop_assert_eq!(back, grid);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_grid(&b"NOPE\x01"[..]).is_err());
        let spec = GridSpec::new([0.0; 3], 1.0, [2, 2, 2]).unwrap();
        let mut buf = Vec::new();
        write_grid(&GlobalGrid::new(spec), &mut buf).unwrap();
        assert!(read_grid(&buf[..buf.len() - 3]).is_err());
    }
}
