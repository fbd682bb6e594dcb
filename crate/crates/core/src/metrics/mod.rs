//! Scene evaluation: voxel-level intersection metrics, floor-plan and shelf
//! validity, collision and floating tests, asset diversity, Fréchet distance
//! and the top-down semantic renderer.

mod fid;
mod physics;
mod render;

use std::collections::{BTreeMap, HashMap};

pub use fid::{frechet_distance, read_feature_stats, write_feature_stats, FeatureStats};
pub use physics::{floating_rate, shelf_collision, shelf_out_of_bounds, Face, ShelfMargins, ShelfVolume};
pub use render::{render_topdown, write_png, BACKGROUND, IMAGE_SIZE};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Mesh, Polygon};
use crate::voxgrid::{default_band, fill_holes, voxelize_mesh, GridSpec, Occupancy};

pub const ROOM_PITCH: f64 = 0.02;
pub const SHELF_PITCH: f64 = 0.012;
pub const FLOOR_TOLERANCE: f64 = 0.02;
pub const OPEN_FACE_MARGIN: f64 = 0.012;
pub const OTHER_FACE_MARGIN: f64 = 0.036;
pub const INTRUSION_MARGIN: f64 = 0.012;
pub const FLOAT_TOLERANCE: f64 = 0.01;
pub const OVERLAP_EPSILON: f64 = 1e-9;

/// Factor applied to `I_p` and `OR` in reports.
pub const REPORT_SCALE: f64 = 1e3;

/// A placed mesh taking part in evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalObject {
    pub id: u32,
    pub category: u16,
    pub mesh: Mesh,
}

/// Surface-voxelizes each object at `pitch` on one shared world grid and
/// fills interior holes. Returns the grid and one solid set per object.
pub fn eval_voxelize(objects: &[EvalObject], pitch: f64) -> Result<(GridSpec, Vec<Occupancy>)> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::invalid(format!("evaluation pitch must be > 0, got {pitch}")));
    }
    let mut bb = Aabb::empty();
    for o in objects {
        if !o.mesh.is_finite() {
            return Err(Error::invalid(format!("object {} mesh is not finite", o.id)));
        }
        bb = bb.union(&o.mesh.aabb());
    }
    if bb.is_empty() {
        let spec = GridSpec::new([0.0; 3], pitch, [1, 1, 1])?;
        return Ok((spec, objects.iter().map(|_| Occupancy::empty(spec)).collect()));
    }
    let spec = GridSpec::covering(bb.min, bb.max, pitch, 2)?;
    let band = default_band(pitch);
    let mut out = Vec::with_capacity(objects.len());
    for o in objects {
        out.push(fill_holes(&voxelize_mesh(&o.mesh, &spec, band)?));
    }
    Ok((spec, out))
}

fn check_nonempty(vs: &[Occupancy]) -> Result<()> {
    if let Some(i) = vs.iter().position(Occupancy::is_empty) {
        return Err(Error::invalid(format!("object {i} has no voxels")));
    }
    Ok(())
}

/// `|V_i ∩ V_j|` for every unordered pair `i < j`, row-major.
pub fn pair_intersections(vs: &[Occupancy]) -> Vec<usize> {
    let bounds: Vec<_> = vs.iter().map(Occupancy::index_bounds).collect();
    let mut out = Vec::with_capacity(vs.len() * vs.len().saturating_sub(1) / 2);
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let disjoint = match (bounds[i], bounds[j]) {
                (Some((li, hi)), Some((lj, hj))) => (0..3).any(|a| hi[a] < lj[a] || hj[a] < li[a]),
                _ => true,
            };
            out.push(if disjoint { 0 } else { vs[i].intersection_count(&vs[j]) });
        }
    }
    out
}

/// Mean over object pairs of `max(|V_i∩V_j|/|V_i|, |V_i∩V_j|/|V_j|)`;
/// 0 for fewer than two objects. Unscaled.
pub fn pairwise_intersection(vs: &[Occupancy]) -> Result<f64> {
    check_nonempty(vs)?;
    if vs.len() < 2 {
        return Ok(0.0);
    }
    let inter = pair_intersections(vs);
    let mut k = 0;
    let mut sum = 0.0;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let c = inter[k] as f64;
            sum += (c / vs[i].len() as f64).max(c / vs[j].len() as f64);
            k += 1;
        }
    }
    Ok(sum / inter.len() as f64)
}

/// `Σ|V_i∩V_j| / (Σ|V_i| − Σ|V_i∩V_j| + ε)` over unordered pairs. Unscaled.
pub fn overlap_ratio(vs: &[Occupancy], epsilon: f64) -> f64 {
    let inter: usize = pair_intersections(vs).iter().sum();
    let total: usize = vs.iter().map(Occupancy::len).sum();
    inter as f64 / (total as f64 - inter as f64 + epsilon)
}

/// Per-object out-of-floor voxel counts: a voxel is out when its xz center
/// lies farther than `eta` outside `floor`.
pub fn floor_out_counts(vs: &[Occupancy], floor: &Polygon, eta: f64) -> Vec<usize> {
    vs.iter()
        .map(|v| {
            let spec = v.spec();
            let mut columns: HashMap<(usize, usize), bool> = HashMap::new();
            v.coords()
                .filter(|c| {
                    *columns.entry((c[0], c[2])).or_insert_with(|| {
                        let p = spec.center(*c);
                        floor.signed_distance([p[0], p[2]]) > eta
                    })
                })
                .count()
        })
        .collect()
}

/// `(R_o, R_vo)`: fraction of objects with any out-of-floor voxel, and
/// fraction of all voxels that are out.
pub fn floor_violations(vs: &[Occupancy], floor: &Polygon, eta: f64) -> (f64, f64) {
    if vs.is_empty() {
        return (0.0, 0.0);
    }
    let out = floor_out_counts(vs, floor, eta);
    let objects = out.iter().filter(|&&c| c > 0).count();
    let total: usize = vs.iter().map(Occupancy::len).sum();
    let voxels: usize = out.iter().sum();
    let r_vo = if total == 0 { 0.0 } else { voxels as f64 / total as f64 };
    (objects as f64 / vs.len() as f64, r_vo)
}

/// Share of distinct assets among retrievals, per category, weighted by
/// each category's share of retrievals. Input pairs are `(category, asset)`.
pub fn category_diversity(retrievals: &[(u16, u32)]) -> Result<f64> {
    if retrievals.is_empty() {
        return Err(Error::invalid("category diversity needs at least one retrieval"));
    }
    let mut per: BTreeMap<u16, (usize, Vec<u32>)> = BTreeMap::new();
    for &(c, a) in retrievals {
        let e = per.entry(c).or_default();
        e.0 += 1;
        e.1.push(a);
    }
    let n = retrievals.len() as f64;
    Ok(per
        .into_values()
        .map(|(count, mut assets)| {
            assets.sort_unstable();
            assets.dedup();
            (count as f64 / n) * (assets.len() as f64 / count as f64)
        })
        .sum())
}

/// Evaluation tolerances, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricConfig {
    pub pitch: f64,
    pub eta: f64,
    pub margins: ShelfMargins,
    pub intrusion_margin: f64,
    pub float_tolerance: f64,
    pub epsilon: f64,
}

impl MetricConfig {
    pub fn room() -> Self {
        MetricConfig {
            pitch: ROOM_PITCH,
            eta: FLOOR_TOLERANCE,
            margins: ShelfMargins::default(),
            intrusion_margin: INTRUSION_MARGIN,
            float_tolerance: FLOAT_TOLERANCE,
            epsilon: OVERLAP_EPSILON,
        }
    }

    pub fn shelf() -> Self {
        MetricConfig {
            pitch: SHELF_PITCH,
            ..MetricConfig::room()
        }
    }
}

/// What bounds the scene: a floor plan, a shelf, or nothing.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    None,
    Floor(Polygon),
    Shelf(ShelfVolume),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalScene {
    pub objects: Vec<EvalObject>,
    pub boundary: Boundary,
    /// Extra surfaces that can support objects (floor, shelf boards).
    pub support: Option<Mesh>,
}

/// Metric values of one scene. `I_p` and `OR` appear both raw and ×10³.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneMetrics {
    pub objects: usize,
    pub ip: f64,
    pub overlap: f64,
    pub ip_x1e3: f64,
    pub overlap_x1e3: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_vo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_f: Option<f64>,
}

pub fn evaluate_scene(scene: &EvalScene, cfg: &MetricConfig) -> Result<SceneMetrics> {
    let (_, vs) = eval_voxelize(&scene.objects, cfg.pitch)?;
    let (ip, overlap) = if vs.is_empty() {
        (0.0, 0.0)
    } else {
        (pairwise_intersection(&vs)?, overlap_ratio(&vs, cfg.epsilon))
    };
    let mut m = SceneMetrics {
        objects: vs.len(),
        ip,
        overlap,
        ip_x1e3: ip * REPORT_SCALE,
        overlap_x1e3: overlap * REPORT_SCALE,
        r_o: None,
        r_vo: None,
        r_s: None,
        r_f: None,
    };
    match &scene.boundary {
        Boundary::None => {}
        Boundary::Floor(poly) => {
            let (r_o, r_vo) = floor_violations(&vs, poly, cfg.eta);
            m.r_o = Some(r_o);
            m.r_vo = Some(r_vo);
        }
        Boundary::Shelf(shelf) => {
            m.r_o = Some(shelf_out_of_bounds(&vs, shelf, &cfg.margins));
            let boxes: Vec<Aabb> = scene.objects.iter().map(|o| o.mesh.aabb()).collect();
            m.r_s = Some(shelf_collision(&boxes, &shelf.boards, cfg.intrusion_margin));
        }
    }
    if scene.support.is_some() || matches!(scene.boundary, Boundary::Shelf(_)) {
        let mut support = scene.support.clone().unwrap_or_default();
        if let Boundary::Shelf(shelf) = &scene.boundary {
            support.extend(&shelf.boards);
        }
        m.r_f = Some(floating_rate(&scene.objects, &support, cfg.float_tolerance));
    }
    Ok(m)
}

/// Full report for a scene set: configuration, per-scene values and means.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub config: MetricConfig,
    #[serde(default)]
    pub retrieval: BTreeMap<String, f64>,
    pub scenes: Vec<SceneMetrics>,
    pub mean: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub category_diversity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fid: Option<f64>,
}

impl MetricsReport {
    pub fn new(config: MetricConfig, scenes: Vec<SceneMetrics>) -> Self {
        let mut mean = BTreeMap::new();
        if !scenes.is_empty() {
            let avg = |f: &dyn Fn(&SceneMetrics) -> Option<f64>| {
                let v: Vec<f64> = scenes.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let fields: [(&str, &dyn Fn(&SceneMetrics) -> Option<f64>); 8] = [
                ("ip", &|s| Some(s.ip)),
                ("ip_x1e3", &|s| Some(s.ip_x1e3)),
                ("overlap", &|s| Some(s.overlap)),
                ("overlap_x1e3", &|s| Some(s.overlap_x1e3)),
                ("r_o", &|s| s.r_o),
                ("r_vo", &|s| s.r_vo),
                ("r_s", &|s| s.r_s),
                ("r_f", &|s| s.r_f),
            ];
            for (name, f) in fields {
                if let Some(v) = avg(f) {
                    mean.insert(name.to_string(), v);
                }
            }
        }
        MetricsReport {
            config,
            retrieval: BTreeMap::new(),
            scenes,
            mean,
            category_diversity: None,
            fid: None,
        }
    }
}
