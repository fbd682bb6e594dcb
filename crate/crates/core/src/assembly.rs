//! The sequential generation loop: order anchors, extract each target's
//! block, build conditions, run a generator and write the result back into
//! free space.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::anchors::{build_conditions, Anchor, ConditionTensors, ShiftPolicy, TARGET_OBB_CHANNEL};
use crate::codec::{pooling_decode, pooling_encode};
use crate::diffusion::{sample, Denoiser, OracleDenoiser, SamplerMode, Schedule};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::retrieval::{max_axis_ratio, AssetDb, AssetRecord};
use crate::voxgrid::{
    default_band, extract_local_block, voxelize_mesh, write_back_in_place, BlockFrame, GlobalGrid, GridSpec,
    LocalBlock, WriteBackStatus, STATE_FREE, STATE_TARGET, STRUCT,
};

/// Produces the target's voxels (block linear indices) for one step.
pub trait Generator {
    fn generate(
        &self,
        block: &LocalBlock,
        conditions: &ConditionTensors,
        anchor: &Anchor,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<usize>>;
}

/// Descending bounding volume, ties by ascending id.
pub fn plan_order(anchors: &[Anchor]) -> Vec<Anchor> {
    let mut out = anchors.to_vec();
    out.sort_by(|a, b| {
        b.bounding_volume()
            .total_cmp(&a.bounding_volume())
            .then(a.id.cmp(&b.id))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyConfig {
    pub resolution: usize,
    pub shift: ShiftPolicy,
    pub num_categories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Written,
    /// The generator returned no voxels.
    EmptyOutput,
    /// Every generated voxel was already occupied or outside the grid.
    NoFreeSpace,
    /// The anchor's block does not overlap the grid.
    OutsideGrid,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepReport {
    pub id: u32,
    pub category: u16,
    pub generated: usize,
    pub written: usize,
    pub skipped: bool,
    pub status: StepStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct GenerationReport {
    pub structure_voxels: usize,
    pub steps: Vec<StepReport>,
}

impl GenerationReport {
    pub fn skipped(&self) -> impl Iterator<Item = &StepReport> {
        self.steps.iter().filter(|s| s.skipped)
    }

    /// Drops wall-clock timings so reports compare bit-for-bit across runs.
    pub fn without_timings(mut self) -> Self {
        for s in &mut self.steps {
            s.wall_time_ms = None;
        }
        self
    }
}

/// Runs the full loop. The structure mesh is surface-voxelized and claimed
/// first under [`STRUCT`] with the vocabulary's structure category; anchors
/// then follow [`plan_order`]. Finished anchors are context, the rest pending.
pub fn generate_scene(
    anchors: &[Anchor],
    structure: Option<&Mesh>,
    generator: &dyn Generator,
    spec: GridSpec,
    config: &AssemblyConfig,
    seed: u64,
) -> Result<(GlobalGrid, GenerationReport)> {
    let mut ids: Vec<u32> = anchors.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("anchor ids must be unique"));
    }
    for a in anchors {
        a.validate()?;
    }
    if config.num_categories == 0 {
        return Err(Error::invalid("vocabulary must contain at least the structure category"));
    }
    let structure_category = (config.num_categories - 1) as u16;

    let mut grid = GlobalGrid::new(spec);
    let mut report = GenerationReport::default();
    if let Some(mesh) = structure {
        let occ = voxelize_mesh(mesh, &spec, default_band(spec.voxel_size()))?;
        report.structure_voxels = grid.claim_free(&occ, STRUCT, structure_category)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = plan_order(anchors);
    for (i, anchor) in order.iter().enumerate() {
        let start = Instant::now();
        let mut step = StepReport {
            id: anchor.id,
            category: anchor.category,
            generated: 0,
            written: 0,
            skipped: true,
            status: StepStatus::OutsideGrid,
            wall_time_ms: None,
        };
        let frame = BlockFrame::for_anchor(anchor, config.resolution, spec.voxel_size(), [0; 3])?;
        match extract_local_block(&grid, &frame, anchor.id) {
            Err(Error::OutOfDomain(_)) => {}
            Err(e) => return Err(e),
            Ok(block) => {
                let pending = &order[i + 1..];
                let cond = build_conditions(&block, anchor, pending, [0; 3], &config.shift, config.num_categories)?;
                let raw = generator.generate(&block, &cond, anchor, &mut rng)?;
                let mut out = LocalBlock::empty(frame);
                for l in raw {
                    if l < frame.len()
                        && block.state(l) == STATE_FREE
                        && cond.target_spatial.get(TARGET_OBB_CHANNEL, l) == 1
                    {
                        out.set_state(l, STATE_TARGET, 0);
                    }
                }
                step.generated = out.count_state(STATE_TARGET);
                if step.generated == 0 {
                    step.status = StepStatus::EmptyOutput;
                } else {
                    let wb = write_back_in_place(&mut grid, &out, anchor.id, anchor.category)?;
                    step.written = wb.written;
                    step.status = if wb.status == WriteBackStatus::Written && wb.written > 0 {
                        StepStatus::Written
                    } else {
                        StepStatus::NoFreeSpace
                    };
                }
                step.skipped = step.status != StepStatus::Written;
            }
        }
        step.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        report.steps.push(step);
    }
    Ok((grid, report))
}

/// Picks the same-category asset closest in size to `anchor` among those
/// within the scale gate (smallest worst-axis deformation, then lowest id).
pub fn select_template<'a>(db: &'a AssetDb, anchor: &Anchor, t_a: f64) -> Result<Option<&'a AssetRecord>> {
    if !db.has_category(anchor.category) {
        return Err(Error::invalid(format!("no assets of category {} in the database", anchor.category)));
    }
    let mut best: Option<(f64, &AssetRecord)> = None;
    for r in db.by_category(anchor.category) {
        let d = max_axis_ratio(anchor.size, r.extents);
        if d <= t_a && best.is_none_or(|(b, _)| d < b) {
            best = Some((d, r));
        }
    }
    Ok(best.map(|(_, r)| r))
}

/// Stretches `asset` to the anchor's box in the anchor frame and returns the
/// free block voxels whose centers sample an occupied canonical cell.
pub fn place_asset(block: &LocalBlock, anchor: &Anchor, asset: &AssetRecord) -> Vec<usize> {
    let frame = block.frame();
    let k = frame.resolution();
    let s_v = frame.voxel_size();
    let cspec = *asset.occupancy.spec();
    let center_shift = crate::geometry::sub(frame.center(), anchor.position);
    let local_shift = frame.heading().unrotate(center_shift);

    let mut range = [(0usize, 0usize); 3];
    for a in 0..3 {
        let lo = ((-local_shift[a] - 0.5 * anchor.size[a]) / s_v + k as f64 / 2.0 - 0.5).ceil().max(0.0);
        let hi = ((-local_shift[a] + 0.5 * anchor.size[a]) / s_v + k as f64 / 2.0 - 0.5).floor();
        if hi < 0.0 || lo > hi {
            return Vec::new();
        }
        range[a] = (lo as usize, (hi as usize).min(k - 1));
    }
    let mut out = Vec::new();
    for z in range[2].0..=range[2].1 {
        for y in range[1].0..=range[1].1 {
            for x in range[0].0..=range[0].1 {
                let l = frame.linear([x, y, z]);
                if block.state(l) != STATE_FREE {
                    continue;
                }
                let off = frame.local_offset([x, y, z]);
                let n = [0, 1, 2].map(|a| (off[a] + local_shift[a]) / anchor.size[a]);
                if let Some(c) = cspec.locate(n) {
                    if asset.occupancy.contains_coords(c) {
                        out.push(l);
                    }
                }
            }
        }
    }
    out
}

/// Reference generator: instantiates the best-fitting database asset.
#[derive(Debug, Clone)]
pub struct TemplateGenerator<'a> {
    pub db: &'a AssetDb,
    pub scale_gate: f64,
}

impl Generator for TemplateGenerator<'_> {
    fn generate(&self, block: &LocalBlock, _: &ConditionTensors, anchor: &Anchor, _: &mut dyn RngCore) -> Result<Vec<usize>> {
        Ok(match select_template(self.db, anchor, self.scale_gate)? {
            Some(asset) => place_asset(block, anchor, asset),
            None => Vec::new(),
        })
    }
}

/// Where the latent denoiser for each step comes from.
pub enum DenoiserSource<'a> {
    /// The same denoiser for every step.
    Fixed(Box<dyn Denoiser + 'a>),
    /// An oracle steering toward the pooled latent of the template output.
    TemplateOracle(TemplateGenerator<'a>),
}

/// Latent sampler: noise → reverse chain → pooling decode → τ=2 voxels.
pub struct DiffusionGenerator<'a> {
    pub source: DenoiserSource<'a>,
    pub schedule: Schedule,
    pub mode: SamplerMode,
}

impl Generator for DiffusionGenerator<'_> {
    fn generate(
        &self,
        block: &LocalBlock,
        conditions: &ConditionTensors,
        anchor: &Anchor,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<usize>> {
        let frame = *block.frame();
        let shape = pooling_encode(&LocalBlock::empty(frame))?;
        let oracle;
        let denoiser: &dyn Denoiser = match &self.source {
            DenoiserSource::Fixed(d) => d.as_ref(),
            DenoiserSource::TemplateOracle(t) => {
                let mut target = LocalBlock::empty(frame);
                for l in t.generate(block, conditions, anchor, rng)? {
                    target.set_state(l, STATE_TARGET, 0);
                }
                oracle = OracleDenoiser {
                    z0: pooling_encode(&target)?.into_values(),
                };
                &oracle
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let noise: Vec<f64> = (0..shape.values().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z0 = sample(noise, denoiser, Some(conditions), &self.schedule, self.mode, &mut rng)?;
        let latent = crate::codec::LatentGrid::new(shape.resolution(), shape.channels(), z0)?;
        let decoded = pooling_decode(&latent, frame)?;
        Ok(decoded
            .target_indices()
            .into_iter()
            .filter(|&l| block.state(l) == STATE_FREE)
            .collect())
    }
}
