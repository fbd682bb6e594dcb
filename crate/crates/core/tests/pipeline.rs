use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxscene::anchors::Anchor;
use voxscene::config::{load_config, Mode, PipelineConfig};
use voxscene::diffusion::SamplerMode;
use voxscene::geometry::{Heading, Mesh};
use voxscene::metrics::{overlap_ratio, read_feature_stats, write_feature_stats, FeatureStats};
use voxscene::pipeline::{generate, grid_metrics, retrieve_scene, GeneratorKind};
use voxscene::retrieval::{build_asset, read_asset_db, write_asset_db, AssetDb};
use voxscene::voxgrid::format::{read_grid, write_grid};
use voxscene::voxgrid::{Occupancy, FREE, STRUCT};

fn db(k: usize) -> AssetDb {
    let mut records = Vec::new();
    for c in 0..3u16 {
        for j in 0..2u32 {
            let ext = [0.06 + 0.03 * c as f64, 0.08 + 0.02 * j as f64, 0.07];
            let mut m = Mesh::cuboid([0.0; 3], [ext[0], ext[1] * 0.4, ext[2]]);
            m.extend(&Mesh::cuboid([0.0; 3], [ext[0] * 0.3, ext[1], ext[2]]));
            records.push(build_asset(c as u32 * 10 + j + 1, c, &m, k).unwrap());
        }
    }
    AssetDb::new(records).unwrap()
}

fn cfg() -> PipelineConfig {
    let mut c = PipelineConfig::preset(Mode::Shelf);
    c.voxel.block_resolution = 32;
    c.retrieval.asset_resolution = 16;
    c.diffusion.steps = 50;
    c
}

fn board() -> Mesh {
    Mesh::cuboid([-0.1, -0.02, -0.1], [0.6, 0.0, 0.3])
}

fn crowded(n: u32) -> Vec<Anchor> {
    (0..n)
        .map(|i| {
            let size = [0.08 + 0.03 * (i % 3) as f64, 0.09, 0.07];
            let h = Heading::from_angle(0.4 * i as f64);
            Anchor::new(i + 1, (i % 3) as u16, [0.05 * i as f64, 0.045, 0.1], h, size).unwrap()
        })
        .collect()
}

#[test]
fn diffusion_generator_keeps_instances_exclusive() {
    let anchors = crowded(6);
    let db = db(16);
    for mode in [SamplerMode::Deterministic, SamplerMode::Ancestral] {
        let mut c = cfg();
        c.diffusion.sampler = mode;
        let (grid, report) = generate(&anchors, Some(&board()), 4, &db, &c, GeneratorKind::Diffusion).unwrap();
        let m = grid_metrics(&grid, None, 0.02, 1e-9).unwrap();
        assert_eq!(m.overlap, 0.0);
        assert!(m.objects >= 4, "{mode:?}: only {} objects", m.objects);
        assert_eq!(report.structure_voxels, grid.owners().iter().filter(|&&o| o == STRUCT).count());
        let (again, _) = generate(&anchors, Some(&board()), 4, &db, &c, GeneratorKind::Diffusion).unwrap();
        assert_eq!(grid.owners(), again.owners());
    }
}

#[test]
fn files_round_trip() {
    let anchors = crowded(4);
    let db = db(16);
    let (grid, _) = generate(&anchors, Some(&board()), 4, &db, &cfg(), GeneratorKind::Template).unwrap();

    let mut buf = Vec::new();
    write_grid(&grid, &mut buf).unwrap();
    let back = read_grid(&buf[..]).unwrap();
    assert_eq!(back.owners(), grid.owners());
    assert_eq!(back.semantics(), grid.semantics());

    let mut buf = Vec::new();
    write_asset_db(&db, &mut buf).unwrap();
    let back = read_asset_db(&buf[..]).unwrap();
    assert_eq!(back.len(), db.len());
    for (x, y) in back.records().iter().zip(db.records()) {
        assert_eq!((x.id, x.category, &x.occupancy), (y.id, y.category, &y.occupancy));
        // Extents are stored as f32.
        assert_eq!(x.extents.map(|e| e as f32), y.extents.map(|e| e as f32));
    }
    assert!(read_asset_db(&buf[..buf.len() - 1]).is_err());

    let stats = FeatureStats::new(
        nalgebra::DVector::from_vec(vec![1.0, -2.0]),
        nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_feature_stats(&stats, &mut buf).unwrap();
    assert_eq!(read_feature_stats(&buf[..]).unwrap(), stats);
}

#[test]
fn config_file_overlays_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "seed = 9\n[retrieval]\nsigma = 2\n").unwrap();
    let c = load_config(&path, Mode::Room).unwrap();
    let mut want = PipelineConfig::preset(Mode::Room);
    want.seed = 9;
    want.retrieval.sigma = 2.0;
    assert_eq!(c, want);

    std::fs::write(&path, "[retrieval]\nsigmaa = 2\n").unwrap();
    let e = load_config(&path, Mode::Room).unwrap_err().to_string();
    assert!(e.contains("retrieval.sigmaa"), "{e}");
}

#[test]
fn retrieval_matches_every_generated_instance() {
    let anchors = crowded(4);
    let db = db(16);
    let c = cfg();
    let (grid, _) = generate(&anchors, None, 4, &db, &c, GeneratorKind::Template).unwrap();
    let r = retrieve_scene(&grid, &anchors, &db, &c).unwrap();
    for a in &anchors {
        let present = !grid.instance_occupancy(a.id).is_empty();
        assert_eq!(r.matches.contains_key(&a.id), present);
        if let Some(m) = r.matches.get(&a.id) {
            assert_eq!(db.get(m.asset_id).unwrap().category, a.category);
        }
    }
    let members: usize = r.clusters.iter().map(|c| c.members.len()).sum();
    assert_eq!(members, r.matches.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenes_never_share_voxels(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<Anchor> = (0..n)
            .map(|i| {
                let size = [rng.random_range(0.05..0.15), rng.random_range(0.05..0.12), rng.random_range(0.05..0.15)];
                let pos = [rng.random_range(0.0..0.3), size[1] / 2.0, rng.random_range(0.0..0.2)];
                let h = Heading::from_angle(rng.random_range(0.0..std::f64::consts::TAU));
                Anchor::new(i as u32 + 1, rng.random_range(0..3), pos, h, size).unwrap()
            })
            .collect();
        let mut c = cfg();
        c.seed = seed;
        let db = db(16);
        let (grid, report) = generate(&anchors, Some(&board()), 4, &db, &c, GeneratorKind::Template).unwrap();
        let objects: Vec<Occupancy> = grid.object_occupancies().into_iter().map(|(_, _, o)| o).collect();
        let mut seen = HashSet::new();
        for o in &objects {
            for &l in o.linear_indices() {
                prop_assert!(seen.insert(l));
            }
        }
        if !objects.is_empty() {
            prop_assert_eq!(overlap_ratio(&objects, 1e-9), 0.0);
        }
        let written: usize = report.steps.iter().map(|s| s.written).sum();
        let owned = grid.owners().iter().filter(|&&o| o != FREE && o != STRUCT).count();
        prop_assert_eq!(written, owned);
    }
}
