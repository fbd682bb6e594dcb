//! Anchors, condition-tensor rasterization and the two training-time
//! policies (stochastic context masking, anchor shifting).

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{add, is_finite, Heading, Vec3};
use crate::voxgrid::{BlockFrame, LocalBlock, STATE_CONTEXT, STRUCT, FREE};

/// Slack for the closed-box containment test, in voxels.
const BOX_EPS: f64 = 1e-9;

/// Spatial prior for one object. `size` holds full extents along the
/// anchor's local axes; `category` indexes the one-hot semantic vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: u32,
    pub category: u16,
    pub position: Vec3,
    pub heading: Heading,
    pub size: Vec3,
}

impl Anchor {
    pub fn new(id: u32, category: u16, position: Vec3, heading: Heading, size: Vec3) -> Result<Self> {
        let a = Anchor {
            id,
            category,
            position,
            heading,
            size,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id == FREE || self.id == STRUCT {
            return Err(Error::invalid(format!("anchor id {} is reserved", self.id)));
        }
        if !is_finite(self.position) {
            return Err(Error::invalid(format!("anchor {} position is not finite", self.id)));
        }
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("anchor {} size must be positive, got {:?}", self.id, self.size)));
        }
        Ok(())
    }

    pub fn bounding_volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn one_hot(&self, num_categories: usize) -> Result<Vec<u8>> {
        check_category(self.category, num_categories)?;
        let mut y = vec![0u8; num_categories];
        y[self.category as usize] = 1;
        Ok(y)
    }
}

fn check_category(c: u16, num_categories: usize) -> Result<()> {
    if (c as usize) < num_categories {
        Ok(())
    } else {
        Err(Error::invalid(format!("semantic index {c} >= category count {num_categories}")))
    }
}

/// Maximum per-axis shift E (voxels); the anchor kernel is `2E + 1` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftPolicy {
    pub max_shift: [u32; 3],
}

impl ShiftPolicy {
    pub fn new(max_shift: [u32; 3]) -> Self {
        ShiftPolicy { max_shift }
    }

    pub fn kernel_size(&self) -> [u32; 3] {
        self.max_shift.map(|e| 2 * e + 1)
    }

    fn check_shift(&self, delta: [i32; 3]) -> Result<()> {
        for a in 0..3 {
            if delta[a].unsigned_abs() > self.max_shift[a] {
                return Err(Error::invalid(format!(
                    "shift {delta:?} exceeds policy bound {:?}",
                    self.max_shift
                )));
            }
        }
        Ok(())
    }
}

/// Binary multi-channel K³ tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    channels: usize,
    resolution: usize,
    data: Vec<u8>,
}

impl ChannelGrid {
    pub fn zeros(channels: usize, resolution: usize) -> Self {
        ChannelGrid {
            channels,
            resolution,
            data: vec![0; channels * resolution.pow(3)],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn voxels(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn get(&self, channel: usize, l: usize) -> u8 {
        self.data[channel * self.voxels() + l]
    }

    pub fn set(&mut self, channel: usize, l: usize) {
        let n = self.voxels();
        self.data[channel * n + l] = 1;
    }

    pub fn channel(&self, channel: usize) -> &[u8] {
        let n = self.voxels();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn count(&self, channel: usize) -> usize {
        self.channel(channel).iter().filter(|&&v| v != 0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }
}

/// Channel 0 of the target spatial tensor: expanded target OBB.
pub const TARGET_OBB_CHANNEL: usize = 0;
/// Channel 1 of the target spatial tensor: anchor kernel.
pub const TARGET_KERNEL_CHANNEL: usize = 1;

/// All conditions for one generation step. `target_category` is the
/// one-hot vector the consumer broadcasts across its latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTensors {
    pub generated: ChannelGrid,
    pub pending: ChannelGrid,
    pub target_spatial: ChannelGrid,
    pub target_category: Vec<u8>,
}

/// Each τ=1 voxel sets its semantic channel; τ=0 and τ=2 contribute nothing.
pub fn rasterize_generated_context(block: &LocalBlock, num_categories: usize) -> Result<ChannelGrid> {
    let mut out = ChannelGrid::zeros(num_categories, block.resolution());
    for (l, (&s, &sem)) in block.states().iter().zip(block.context_semantics()).enumerate() {
        if s == STATE_CONTEXT {
            check_category(sem, num_categories)?;
            out.set(sem as usize, l);
        }
    }
    Ok(out)
}

/// Calls `f` for every block voxel whose center lies in the closed OBB.
fn for_each_voxel_in_obb(frame: &BlockFrame, center: Vec3, heading: Heading, half: Vec3, mut f: impl FnMut(usize)) {
    let k = frame.resolution();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let local = [
            if corner & 1 == 0 { -half[0] } else { half[0] },
            if corner & 2 == 0 { -half[1] } else { half[1] },
            if corner & 4 == 0 { -half[2] } else { half[2] },
        ];
        let b = frame.to_block_coords(add(center, heading.rotate(local)));
        for a in 0..3 {
            lo[a] = lo[a].min(b[a]);
            hi[a] = hi[a].max(b[a]);
        }
    }
    let mut range = [(0usize, 0usize); 3];
    for a in 0..3 {
        // Voxel centers sit at block coordinate a + 0.5.
        let l = (lo[a] - 0.5 - BOX_EPS).ceil().max(0.0);
        let h = (hi[a] - 0.5 + BOX_EPS).floor().min(k as f64 - 1.0);
        if l > h {
            return;
        }
        range[a] = (l as usize, h as usize);
    }
    let tol = BOX_EPS * frame.voxel_size();
    for z in range[2].0..=range[2].1 {
        for y in range[1].0..=range[1].1 {
            for x in range[0].0..=range[0].1 {
                let w = frame.voxel_center([x, y, z]);
                let local = heading.unrotate(crate::geometry::sub(w, center));
                if (0..3).all(|a| local[a].abs() <= half[a] + tol) {
                    f(frame.linear([x, y, z]));
                }
            }
        }
    }
}

fn expanded_half_extents(anchor: &Anchor, expansion: [u32; 3], voxel_size: f64) -> Vec3 {
    [
        0.5 * anchor.size[0] + expansion[0] as f64 * voxel_size,
        0.5 * anchor.size[1] + expansion[1] as f64 * voxel_size,
        0.5 * anchor.size[2] + expansion[2] as f64 * voxel_size,
    ]
}

/// Pending anchors as OBBs with extents `s + 2E·s_v`, OR-merged per
/// category channel (multi-hot where boxes of different categories overlap).
pub fn rasterize_pending(
    pending: &[Anchor],
    frame: &BlockFrame,
    expansion: [u32; 3],
    num_categories: usize,
) -> Result<ChannelGrid> {
    let mut out = ChannelGrid::zeros(num_categories, frame.resolution());
    for a in pending {
        check_category(a.category, num_categories)?;
        let half = expanded_half_extents(a, expansion, frame.voxel_size());
        let ch = a.category as usize;
        for_each_voxel_in_obb(frame, a.position, a.heading, half, |l| out.set(ch, l));
    }
    Ok(out)
}

/// Block voxel containing the anchor center (may lie outside the block).
pub fn anchor_center_voxel(anchor: &Anchor, frame: &BlockFrame) -> [i64; 3] {
    frame.to_block_coords(anchor.position).map(|c| c.floor() as i64)
}

/// Two-channel target tensor: channel 0 the OBB with extents `s + 2E·s_v`,
/// channel 1 a solid `2E+1` kernel around the anchor-center voxel shifted by
/// `delta`. The kernel always covers the unshifted center since |δ| ≤ E.
pub fn rasterize_target(anchor: &Anchor, delta: [i32; 3], policy: &ShiftPolicy, frame: &BlockFrame) -> Result<ChannelGrid> {
    policy.check_shift(delta)?;
    let k = frame.resolution() as i64;
    let c = anchor_center_voxel(anchor, frame);
    let mut range = [(0i64, 0i64); 3];
    for a in 0..3 {
        let e = policy.max_shift[a] as i64;
        let lo = (c[a] + delta[a] as i64 - e).max(0);
        let hi = (c[a] + delta[a] as i64 + e).min(k - 1);
        if lo > hi {
            return Err(Error::invalid(format!(
                "anchor {} kernel lies entirely outside the block",
                anchor.id
            )));
        }
        range[a] = (lo, hi);
    }

    let mut out = ChannelGrid::zeros(2, frame.resolution());
    let half = expanded_half_extents(anchor, policy.max_shift, frame.voxel_size());
    for_each_voxel_in_obb(frame, anchor.position, anchor.heading, half, |l| out.set(TARGET_OBB_CHANNEL, l));
    for z in range[2].0..=range[2].1 {
        for y in range[1].0..=range[1].1 {
            for x in range[0].0..=range[0].1 {
                out.set(TARGET_KERNEL_CHANNEL, frame.linear([x as usize, y as usize, z as usize]));
            }
        }
    }
    Ok(out)
}

/// Assembles `c_gen`, `c_p` and `c_t` for one step.
pub fn build_conditions(
    block: &LocalBlock,
    target: &Anchor,
    pending: &[Anchor],
    delta: [i32; 3],
    policy: &ShiftPolicy,
    num_categories: usize,
) -> Result<ConditionTensors> {
    let frame = block.frame();
    Ok(ConditionTensors {
        generated: rasterize_generated_context(block, num_categories)?,
        pending: rasterize_pending(pending, frame, policy.max_shift, num_categories)?,
        target_spatial: rasterize_target(target, delta, policy, frame)?,
        target_category: target.one_hot(num_categories)?,
    })
}

/// Draws the kernel shift δ and the block-origin shift δ_l, independently and
/// uniformly over the integer lattice `[-E, E]` per axis.
pub fn sample_shift(policy: &ShiftPolicy, rng: &mut impl Rng) -> ([i32; 3], [i32; 3]) {
    let mut draw = || {
        let mut d = [0i32; 3];
        for a in 0..3 {
            let e = policy.max_shift[a] as i32;
            d[a] = rng.random_range(-e..=e);
        }
        d
    };
    let delta = draw();
    let origin = draw();
    (delta, origin)
}

/// Context masking: each object independently goes to the pending set with
/// probability `p`, otherwise to the generated set. Returns the two index
/// lists `(generated, pending)`; they partition `0..count`.
pub fn mask_context(count: usize, p: f64, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("masking probability must lie in [0, 1], got {p}")));
    }
    let mut generated = Vec::new();
    let mut pending = Vec::new();
    for i in 0..count {
        if rng.random::<f64>() < p {
            pending.push(i);
        } else {
            generated.push(i);
        }
    }
    Ok((generated, pending))
}
