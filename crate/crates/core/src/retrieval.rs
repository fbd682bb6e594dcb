//! Asset database, Soft Chamfer scoring, anisotropic scale gating, top-1
//! retrieval and style clustering.
//!
//! Canonical space is the unit cube `[-0.5, 0.5]³` sampled at `K_A³`. Shapes
//! are normalized per axis by their own extents, so the Chamfer score
//! compares form while the scale gate compares metric size.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use crate::anchors::Anchor;
use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::geometry::{add, Heading, Mesh, Vec3};
use crate::io::{expect_header, read_f32, read_u16, read_u32, write_f32, write_header, write_u16, write_u32};
use crate::voxgrid::{default_band, fill_holes, voxelize_mesh, GridSpec, Occupancy};

pub const DEFAULT_ASSET_RESOLUTION: usize = 64;
pub const DEFAULT_SIGMA: f64 = 1.5;
pub const DEFAULT_SCALE_GATE: f64 = 1.5;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
pub const DEFAULT_SIZE_RATIO: f64 = 1.1;

/// Grid over the canonical unit cube at resolution `k`.
pub fn canonical_spec(k: usize) -> Result<GridSpec> {
    GridSpec::new([-0.5; 3], 1.0 / k as f64, [k; 3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetRecord {
    pub id: u32,
    pub category: u16,
    /// Metric extents of the source shape along its canonical axes.
    pub extents: Vec3,
    pub occupancy: Occupancy,
}

impl AssetRecord {
    pub fn new(id: u32, category: u16, extents: Vec3, occupancy: Occupancy) -> Result<Self> {
        if occupancy.is_empty() {
            return Err(Error::invalid(format!("asset {id} has empty occupancy")));
        }
        if !extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::invalid(format!("asset {id} extents must be positive, got {extents:?}")));
        }
        let d = occupancy.spec().dims();
        if d[0] != d[1] || d[1] != d[2] || *occupancy.spec() != canonical_spec(d[0])? {
            return Err(Error::invalid(format!("asset {id} occupancy is not on a canonical grid")));
        }
        Ok(AssetRecord {
            id,
            category,
            extents,
            occupancy,
        })
    }

    pub fn resolution(&self) -> usize {
        self.occupancy.spec().dims()[0]
    }
}

/// Normalizes a mesh per axis into the unit cube, surface-voxelizes it at
/// `K_A³` and fills interior holes.
pub fn build_asset(id: u32, category: u16, mesh: &Mesh, resolution: usize) -> Result<AssetRecord> {
    let bb = mesh.aabb();
    if bb.is_empty() || !mesh.is_finite() {
        return Err(Error::invalid(format!("asset {id} mesh is empty or non-finite")));
    }
    let extents = bb.extents();
    if !extents.iter().all(|e| *e > 1e-9) {
        return Err(Error::invalid(format!("asset {id} mesh is flat along an axis: {extents:?}")));
    }
    let center = bb.center();
    let unit = mesh.map_vertices(|v| [0, 1, 2].map(|a| (v[a] - center[a]) / extents[a]));
    let spec = canonical_spec(resolution)?;
    let surface = voxelize_mesh(&unit, &spec, default_band(spec.voxel_size()))?;
    AssetRecord::new(id, category, extents, fill_holes(&surface))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssetDb {
    records: Vec<AssetRecord>,
}

impl AssetDb {
    pub fn new(mut records: Vec<AssetRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        for w in records.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::invalid(format!("duplicate asset id {}", w[0].id)));
            }
            if w[0].resolution() != w[1].resolution() {
                return Err(Error::invalid("assets use different canonical resolutions"));
            }
        }
        Ok(AssetDb { records })
    }

    pub fn records(&self) -> &[AssetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&AssetRecord> {
        self.records.binary_search_by_key(&id, |r| r.id).ok().map(|i| &self.records[i])
    }

    pub fn has_category(&self, category: u16) -> bool {
        self.records.iter().any(|r| r.category == category)
    }

    pub fn by_category(&self, category: u16) -> impl Iterator<Item = &AssetRecord> {
        self.records.iter().filter(move |r| r.category == category)
    }

    pub fn resolution(&self) -> Option<usize> {
        self.records.first().map(|r| r.resolution())
    }
}

pub const ADB_MAGIC: &[u8; 4] = b"ADB1";
pub const ADB_VERSION: u8 = 1;

/// `ADB1`: header, `u32` resolution, `u32` entry count, then per entry
/// `u32` id, `u16` category, `f32×3` extents and alternating empty/occupied
/// run lengths (`u32` count, then `u32` lengths, starting with empty).
pub fn write_asset_db(db: &AssetDb, mut w: impl Write) -> Result<()> {
    write_header(&mut w, ADB_MAGIC, ADB_VERSION)?;
    write_u32(&mut w, db.resolution().unwrap_or(0) as u32)?;
    write_u32(&mut w, db.len() as u32)?;
    for r in &db.records {
        write_u32(&mut w, r.id)?;
        write_u16(&mut w, r.category)?;
        for e in r.extents {
            write_f32(&mut w, e as f32)?;
        }
        let mut runs = Vec::new();
        let mut cursor = 0usize;
        let cells = r.occupancy.linear_indices();
        let mut i = 0;
        while i < cells.len() {
            let start = cells[i];
            let mut end = start + 1;
            while i + 1 < cells.len() && cells[i + 1] == end {
                i += 1;
                end += 1;
            }
            runs.push((start - cursor) as u32);
            runs.push((end - start) as u32);
            cursor = end;
            i += 1;
        }
        write_u32(&mut w, runs.len() as u32)?;
        for run in runs {
            write_u32(&mut w, run)?;
        }
    }
    Ok(())
}

pub fn read_asset_db(mut r: impl Read) -> Result<AssetDb> {
    expect_header(&mut r, ADB_MAGIC, ADB_VERSION, "ADB1")?;
    let k = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let bad = |m: String| Error::format("ADB1", m);
    if count > 0 && k == 0 {
        return Err(bad("zero resolution".into()));
    }
    let mut records = Vec::new();
    for _ in 0..count {
        let id = read_u32(&mut r)?;
        let category = read_u16(&mut r)?;
        let extents = [read_f32(&mut r)? as f64, read_f32(&mut r)? as f64, read_f32(&mut r)? as f64];
        let spec = canonical_spec(k).map_err(|e| bad(e.to_string()))?;
        let runs = read_u32(&mut r)? as usize;
        let mut cells = Vec::new();
        let mut cursor = 0usize;
        for j in 0..runs {
            let len = read_u32(&mut r)? as usize;
            if cursor + len > spec.len() {
                return Err(bad(format!("asset {id} runs exceed the grid")));
            }
            if j % 2 == 1 {
                cells.extend(cursor..cursor + len);
            }
            cursor += len;
        }
        let occ = Occupancy::from_linear(spec, cells).map_err(|e| bad(e.to_string()))?;
        records.push(AssetRecord::new(id, category, extents, occ).map_err(|e| bad(e.to_string()))?);
    }
    AssetDb::new(records).map_err(|e| bad(e.to_string()))
}

/// A generated object in canonical form, plus what is needed to place a
/// retrieved asset back into the world.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub occupancy: Occupancy,
    /// Metric extents of the generated voxels in the anchor frame.
    pub extents: Vec3,
    /// World-space center of those extents.
    pub center: Vec3,
    pub heading: Heading,
}

/// Undoes the anchor yaw, normalizes by the generated extents and resamples
/// to `K_A³` by nearest-neighbour gather: a canonical cell is occupied when
/// its center maps into an occupied world voxel.
pub fn canonicalize_query(voxels: &Occupancy, anchor: &Anchor, resolution: usize) -> Result<Query> {
    if voxels.is_empty() {
        return Err(Error::invalid("cannot canonicalize an empty voxel set"));
    }
    let spec = voxels.spec();
    let half = 0.5 * spec.voxel_size();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in voxels.centers() {
        let l = anchor.heading.unrotate(crate::geometry::sub(c, anchor.position));
        for a in 0..3 {
            lo[a] = lo[a].min(l[a] - half);
            hi[a] = hi[a].max(l[a] + half);
        }
    }
    let extents = [0, 1, 2].map(|a| hi[a] - lo[a]);
    let mid = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let center = add(anchor.position, anchor.heading.rotate(mid));

    let cspec = canonical_spec(resolution)?;
    let mut cells = Vec::new();
    for l in 0..cspec.len() {
        let n = cspec.center(cspec.coords(l));
        let local = [0, 1, 2].map(|a| mid[a] + n[a] * extents[a]);
        let w = add(anchor.position, anchor.heading.rotate(local));
        if let Some(g) = spec.locate(w) {
            if voxels.contains_coords(g) {
                cells.push(l);
            }
        }
    }
    Ok(Query {
        occupancy: Occupancy::from_linear(cspec, cells)?,
        extents,
        center,
        heading: anchor.heading,
    })
}

/// Largest per-axis deformation `max(q/c, c/q)` needed to fit `c` to `q`.
pub fn max_axis_ratio(q: Vec3, c: Vec3) -> f64 {
    (0..3).map(|a| (q[a] / c[a]).max(c[a] / q[a])).fold(1.0, f64::max)
}

/// Keeps candidates whose per-axis deformation stays within `t_a` (closed).
pub fn filter_by_scale<'a>(query_extents: Vec3, candidates: impl IntoIterator<Item = &'a AssetRecord>, t_a: f64) -> Vec<&'a AssetRecord> {
    candidates
        .into_iter()
        .filter(|c| max_axis_ratio(query_extents, c.extents) <= t_a)
        .collect()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must be > 0, got {sigma}")))
    }
}

fn gaussian_mean(sq_dists: impl Iterator<Item = f64>, n: usize, sigma: f64) -> f64 {
    let k = 1.0 / (2.0 * sigma * sigma);
    sq_dists.map(|d2| (-d2 * k).exp()).sum::<f64>() / n as f64
}

fn mask(occ: &Occupancy) -> Vec<bool> {
    let mut m = vec![false; occ.spec().len()];
    for &l in occ.linear_indices() {
        m[l] = true;
    }
    m
}

/// Squared distance (in voxels) from every grid cell to the nearest cell of `occ`.
pub fn distance_field(occ: &Occupancy) -> Vec<f64> {
    squared_edt(&mask(occ), occ.spec().dims())
}

/// Soft Chamfer score of two voxel sets on one grid, with `sigma` in voxels.
/// Nearest-voxel distances are exact (Euclidean distance transform).
pub fn soft_chamfer(q: &Occupancy, c: &Occupancy, sigma: f64) -> Result<f64> {
    if q.spec() != c.spec() {
        return Err(Error::invalid("soft chamfer needs both sets on one grid"));
    }
    soft_chamfer_with_field(q, &distance_field(q), c, sigma)
}

/// As [`soft_chamfer`], reusing a precomputed distance field of `q`.
pub fn soft_chamfer_with_field(q: &Occupancy, q_field: &[f64], c: &Occupancy, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if q.is_empty() || c.is_empty() {
        return Err(Error::invalid("soft chamfer of an empty set"));
    }
    let c_field = distance_field(c);
    let qc = gaussian_mean(q.linear_indices().iter().map(|&l| c_field[l]), q.len(), sigma);
    let cq = gaussian_mean(c.linear_indices().iter().map(|&l| q_field[l]), c.len(), sigma);
    Ok(0.5 * (qc + cq))
}

/// Soft Chamfer score of two point sets by exhaustive nearest-neighbour search.
pub fn soft_chamfer_points(q: &[Vec3], c: &[Vec3], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if q.is_empty() || c.is_empty() {
        return Err(Error::invalid("soft chamfer of an empty set"));
    }
    let nearest = |p: &Vec3, set: &[Vec3]| {
        set.iter()
            .map(|s| crate::geometry::norm_sq(crate::geometry::sub(*p, *s)))
            .fold(f64::INFINITY, f64::min)
    };
    let qc = gaussian_mean(q.iter().map(|p| nearest(p, c)), q.len(), sigma);
    let cq = gaussian_mean(c.iter().map(|p| nearest(p, q)), c.len(), sigma);
    Ok(0.5 * (qc + cq))
}

/// A retrieved asset and its world placement.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Match {
    pub asset_id: u32,
    pub score: f64,
    /// Per-axis stretch applied to the asset's extents.
    pub scale: Vec3,
    pub position: Vec3,
    pub heading: f64,
    /// Extents of the generated object the match was fitted to.
    pub target_extents: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Retrieval {
    Found(Match),
    /// No same-category candidate passed the scale gate.
    NoMatch,
}

fn fit(query: &Query, asset: &AssetRecord, score: f64) -> Match {
    Match {
        asset_id: asset.id,
        score,
        scale: [0, 1, 2].map(|a| query.extents[a] / asset.extents[a]),
        position: query.center,
        heading: query.heading.angle(),
        target_extents: query.extents,
    }
}

/// Top-1 same-category asset by Soft Chamfer score among candidates that
/// pass the scale gate; ties go to the lower asset id.
pub fn retrieve(query: &Query, db: &AssetDb, category: u16, t_a: f64, sigma: f64) -> Result<Retrieval> {
    if !db.has_category(category) {
        return Err(Error::invalid(format!("no assets of category {category} in the database")));
    }
    if t_a < 1.0 {
        return Err(Error::invalid(format!("scale gate must be >= 1, got {t_a}")));
    }
    check_sigma(sigma)?;
    let candidates = filter_by_scale(query.extents, db.by_category(category), t_a);
    if candidates.is_empty() {
        return Ok(Retrieval::NoMatch);
    }
    let q_field = distance_field(&query.occupancy);
    let mut best: Option<(f64, &AssetRecord)> = None;
    for c in candidates {
        if c.occupancy.spec() != query.occupancy.spec() {
            return Err(Error::invalid("query and asset resolutions differ"));
        }
        let s = soft_chamfer_with_field(&query.occupancy, &q_field, &c.occupancy, sigma)?;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, c));
        }
    }
    let (score, asset) = best.expect("nonempty candidates");
    Ok(Retrieval::Found(fit(query, asset, score)))
}

/// One instance entering style clustering.
#[derive(Debug, Clone)]
pub struct StyleInstance {
    pub id: u32,
    pub occupancy: Occupancy,
    pub extents: Vec3,
}

fn centered_cells(occ: &Occupancy) -> HashSet<[i64; 3]> {
    let n = occ.len() as f64;
    let mut sum = [0.0; 3];
    for c in occ.coords() {
        for a in 0..3 {
            sum[a] += c[a] as f64;
        }
    }
    let shift = [0, 1, 2].map(|a| (sum[a] / n).round() as i64);
    occ.coords().map(|c| [0, 1, 2].map(|a| c[a] as i64 - shift[a])).collect()
}

/// IoU of two canonical occupancies after moving each centroid to the origin
/// (rounded to whole cells).
pub fn aligned_iou(a: &Occupancy, b: &Occupancy) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let sa = centered_cells(a);
    let sb = centered_cells(b);
    let inter = sa.iter().filter(|c| sb.contains(*c)).count();
    inter as f64 / (sa.len() + sb.len() - inter) as f64
}

/// Connected components of the relation `IoU > t_iou ∧ size ratio ≤ t_s`.
/// Members are sorted by id; clusters by their smallest member.
pub fn cluster_styles(instances: &[StyleInstance], t_iou: f64, t_s: f64) -> Vec<Vec<u32>> {
    let n = instances.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let cells: Vec<_> = instances.iter().map(|i| centered_cells(&i.occupancy)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if max_axis_ratio(instances[i].extents, instances[j].extents) > t_s {
                continue;
            }
            let inter = cells[i].iter().filter(|c| cells[j].contains(*c)).count();
            let union = cells[i].len() + cells[j].len() - inter;
            let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            if iou > t_iou {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(instances[i].id);
    }
    let mut out: Vec<Vec<u32>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StyleCluster {
    pub members: Vec<u32>,
    pub representative: u32,
    pub asset_id: u32,
}

/// Gives every cluster member the top-1 asset of the member with the best
/// score (ties to the lower id). Each member keeps its own placement and
/// refits its own anisotropic scale to the shared asset.
pub fn apply_cluster_assignment(
    clusters: &[Vec<u32>],
    matches: &BTreeMap<u32, Match>,
    db: &AssetDb,
) -> Result<(Vec<StyleCluster>, BTreeMap<u32, Match>)> {
    let mut out = BTreeMap::new();
    let mut assigned = Vec::with_capacity(clusters.len());
    for members in clusters {
        let mut rep: Option<(u32, &Match)> = None;
        for &id in members {
            let m = matches
                .get(&id)
                .ok_or_else(|| Error::invalid(format!("instance {id} has no retrieval result")))?;
            let better = match rep {
                None => true,
                Some((rid, rm)) => m.score > rm.score || (m.score == rm.score && id < rid),
            };
            if better {
                rep = Some((id, m));
            }
        }
        let Some((rep_id, rep_match)) = rep else {
            continue;
        };
        let asset = db
            .get(rep_match.asset_id)
            .ok_or_else(|| Error::invalid(format!("asset {} missing from database", rep_match.asset_id)))?;
        for &id in members {
            let mut m = matches[&id].clone();
            m.asset_id = asset.id;
            m.scale = [0, 1, 2].map(|a| m.target_extents[a] / asset.extents[a]);
            out.insert(id, m);
        }
        assigned.push(StyleCluster {
            members: members.clone(),
            representative: rep_id,
            asset_id: asset.id,
        });
    }
    Ok((assigned, out))
}
