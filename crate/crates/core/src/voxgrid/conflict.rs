use std::collections::HashSet;

use crate::error::{Error, Result};

use super::{GlobalGrid, GridSpec, Occupancy, FREE, STRUCT};

/// One voxelized object competing for grid cells.
#[derive(Debug, Clone)]
pub struct ConflictObject {
    pub occupancy: Occupancy,
    /// Bounding volume in m³; larger wins contested voxels.
    pub bounding_volume: f64,
    pub id: u32,
    pub category: u16,
}

/// Merges per-object occupancies into one exclusive grid.
///
/// A contested voxel goes to the object with the larger bounding volume,
/// then to the lower instance id. Structure ([`STRUCT`]) outranks every
/// object.
pub fn resolve_conflicts(spec: GridSpec, objects: &[ConflictObject]) -> Result<GlobalGrid> {
    let mut seen = HashSet::new();
    for o in objects {
        if o.id == FREE {
            return Err(Error::invalid("instance id 0 is reserved for free space"));
        }
        if !seen.insert(o.id) {
            return Err(Error::invalid(format!("duplicate instance id {}", o.id)));
        }
        if *o.occupancy.spec() != spec {
            return Err(Error::invalid(format!("object {} uses a different grid", o.id)));
        }
        if !o.bounding_volume.is_finite() {
            return Err(Error::invalid(format!("object {} has non-finite volume", o.id)));
        }
    }

    let mut order: Vec<&ConflictObject> = objects.iter().collect();
    order.sort_by(|a, b| {
        (b.id == STRUCT)
            .cmp(&(a.id == STRUCT))
            .then(b.bounding_volume.total_cmp(&a.bounding_volume))
            .then(a.id.cmp(&b.id))
    });

    let mut grid = GlobalGrid::new(spec);
    for o in order {
        grid.claim_free(&o.occupancy, o.id, o.category)?;
    }
    Ok(grid)
}
