//! End-to-end stages shared by the command-line tool and the tests:
//! scene generation, per-instance retrieval with style clustering, and
//! voxel-level metrics on a generated grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anchors::Anchor;
use crate::assembly::{generate_scene, AssemblyConfig, DenoiserSource, DiffusionGenerator, GenerationReport, Generator, TemplateGenerator};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Mesh, Polygon};
use crate::metrics::{floor_violations, overlap_ratio, pairwise_intersection, SceneMetrics, REPORT_SCALE};
use crate::retrieval::{apply_cluster_assignment, canonicalize_query, cluster_styles, retrieve, AssetDb, Match, Retrieval, StyleCluster, StyleInstance};
use crate::scene::oriented_box;
use crate::voxgrid::{GlobalGrid, GridSpec, Occupancy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Best-fitting database asset written directly.
    Template,
    /// Latent reverse chain steered by the template oracle.
    Diffusion,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "template" => Ok(GeneratorKind::Template),
            "diffusion" => Ok(GeneratorKind::Diffusion),
            _ => Err(Error::invalid(format!("unknown generator {s:?}"))),
        }
    }
}

/// Lattice-aligned grid covering every anchor box and the structure, with
/// a two-voxel margin.
pub fn scene_grid_spec(anchors: &[Anchor], structure: Option<&Mesh>, voxel_size: f64) -> Result<GridSpec> {
    let mut bb = Aabb::empty();
    for a in anchors {
        bb = bb.union(&oriented_box(a.position, a.heading, a.size).aabb());
    }
    if let Some(m) = structure {
        if !m.is_empty() {
            bb = bb.union(&m.aabb());
        }
    }
    if bb.is_empty() {
        return Err(Error::invalid("scene has neither anchors nor structure"));
    }
    GridSpec::covering(bb.min, bb.max, voxel_size, 2)
}

pub fn assembly_config(cfg: &PipelineConfig, num_categories: usize) -> AssemblyConfig {
    AssemblyConfig {
        resolution: cfg.voxel.block_resolution,
        shift: cfg.shift_policy(),
        num_categories,
    }
}

/// Generates a scene with the chosen reference generator.
pub fn generate(
    anchors: &[Anchor],
    structure: Option<&Mesh>,
    num_categories: usize,
    db: &AssetDb,
    cfg: &PipelineConfig,
    kind: GeneratorKind,
) -> Result<(GlobalGrid, GenerationReport)> {
    let spec = scene_grid_spec(anchors, structure, cfg.voxel.voxel_size)?;
    let template = TemplateGenerator {
        db,
        scale_gate: cfg.retrieval.scale_gate,
    };
    let diffusion;
    let generator: &dyn Generator = match kind {
        GeneratorKind::Template => &template,
        GeneratorKind::Diffusion => {
            diffusion = DiffusionGenerator {
                source: DenoiserSource::TemplateOracle(template.clone()),
                schedule: cfg.schedule()?,
                mode: cfg.diffusion.sampler,
            };
            &diffusion
        }
    };
    generate_scene(anchors, structure, generator, spec, &assembly_config(cfg, num_categories), cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub clusters: Vec<StyleCluster>,
    pub matches: BTreeMap<u32, Match>,
    /// Instances with no voxels, no same-category asset, or none inside the
    /// scale gate.
    pub unmatched: Vec<u32>,
}

/// Retrieves an asset for every generated instance, then shares assets
/// within style clusters of each category.
pub fn retrieve_scene(grid: &GlobalGrid, anchors: &[Anchor], db: &AssetDb, cfg: &PipelineConfig) -> Result<RetrievalOutcome> {
    let k = cfg.retrieval.asset_resolution;
    if db.resolution().is_some_and(|r| r != k) {
        return Err(Error::invalid(format!(
            "asset database resolution {} differs from the configured {k}",
            db.resolution().unwrap_or(0)
        )));
    }
    let mut matches = BTreeMap::new();
    let mut unmatched = Vec::new();
    let mut by_category: BTreeMap<u16, Vec<StyleInstance>> = BTreeMap::new();
    let mut sorted: Vec<&Anchor> = anchors.iter().collect();
    sorted.sort_by_key(|a| a.id);
    for a in sorted {
        let occ = grid.instance_occupancy(a.id);
        if occ.is_empty() || !db.has_category(a.category) {
            unmatched.push(a.id);
            continue;
        }
        let query = canonicalize_query(&occ, a, k)?;
        match retrieve(&query, db, a.category, cfg.retrieval.scale_gate, cfg.retrieval.sigma)? {
            Retrieval::NoMatch => unmatched.push(a.id),
            Retrieval::Found(m) => {
                by_category.entry(a.category).or_default().push(StyleInstance {
                    id: a.id,
                    occupancy: query.occupancy,
                    extents: query.extents,
                });
                matches.insert(a.id, m);
            }
        }
    }
    let mut clusters = Vec::new();
    let mut shared = BTreeMap::new();
    for instances in by_category.values() {
        let groups = cluster_styles(instances, cfg.retrieval.iou_threshold, cfg.retrieval.size_ratio);
        let (c, m) = apply_cluster_assignment(&groups, &matches, db)?;
        clusters.extend(c);
        shared.extend(m);
    }
    clusters.sort_by_key(|c| c.members[0]);
    Ok(RetrievalOutcome {
        clusters,
        matches: shared,
        unmatched,
    })
}

/// `I_p`, `OR` and, given a floor plan, `R_o`/`R_vo` computed directly on
/// the instance voxel sets of a grid (structure excluded).
pub fn grid_metrics(grid: &GlobalGrid, floor: Option<&Polygon>, eta: f64, epsilon: f64) -> Result<SceneMetrics> {
    let vs: Vec<Occupancy> = grid.object_occupancies().into_iter().map(|(_, _, o)| o).collect();
    let (ip, overlap) = if vs.is_empty() {
        (0.0, 0.0)
    } else {
        (pairwise_intersection(&vs)?, overlap_ratio(&vs, epsilon))
    };
    let (r_o, r_vo) = match floor {
        Some(p) => {
            let (a, b) = floor_violations(&vs, p, eta);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(SceneMetrics {
        objects: vs.len(),
        ip,
        overlap,
        ip_x1e3: ip * REPORT_SCALE,
        overlap_x1e3: overlap * REPORT_SCALE,
        r_o,
        r_vo,
        r_s: None,
        r_f: None,
    })
}
