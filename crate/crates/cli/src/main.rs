//! `voxscene`: asset database building, voxelization, scene generation,
//! retrieval, evaluation and rendering from the command line.
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a usage error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use voxscene::config::{load_config, parse_config, Mode, PipelineConfig};
use voxscene::geometry::{Mesh, Polygon};
use voxscene::metrics::{
    category_diversity, eval_voxelize, evaluate_scene, frechet_distance, read_feature_stats, render_topdown, write_png,
    MetricsReport,
};
use voxscene::pipeline::{self, GeneratorKind};
use voxscene::retrieval::{build_asset, read_asset_db, write_asset_db, AssetDb};
use voxscene::scene::{read_scene, write_scene, Placement, SceneLayout};
use voxscene::vocab::Vocabulary;
use voxscene::voxgrid::format::{read_grid, write_grid};
use voxscene::voxgrid::{default_band, fill_holes, voxelize_mesh, GlobalGrid, GridSpec};
use voxscene::{Error, Result};

#[derive(Parser)]
#[command(name = "voxscene", version, about = "Voxel-exclusive scene generation toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the mode presets.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset family.
    #[arg(long, global = true, default_value = "shelf", value_parser = ["room", "shelf"])]
    mode: String,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a canonical asset database from `<dir>/<category>/<id>.obj`.
    BuildDb {
        /// Directory of `<category>/<id>.obj` meshes.
        #[arg(long)]
        meshes: PathBuf,
        /// `room`, `shelf` or a palette file.
        #[arg(long, default_value = "shelf")]
        vocabulary: String,
        /// Asset database file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Surface-voxelize one mesh into a grid file.
    Voxelize {
        /// Input OBJ mesh.
        #[arg(long)]
        mesh: PathBuf,
        /// Grid file.
        #[arg(long)]
        out: PathBuf,
        /// Voxel edge in meters; defaults to the configured voxel size.
        #[arg(long)]
        voxel_size: Option<f64>,
        /// Surface band in meters; defaults to half the voxel diagonal.
        #[arg(long)]
        band: Option<f64>,
        /// Fill interior cavities.
        #[arg(long)]
        fill: bool,
        /// Instance id written into the owner channel.
        #[arg(long, default_value_t = 1)]
        id: u32,
        /// Semantic category index.
        #[arg(long, default_value_t = 0)]
        category: u16,
    },
    /// Generate the voxel scene of a layout's anchors.
    Generate {
        /// Scene layout (JSON).
        #[arg(long)]
        scene: PathBuf,
        /// Asset database file.
        #[arg(long)]
        db: PathBuf,
        /// Grid file.
        #[arg(long)]
        out: PathBuf,
        /// Per-step generation report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "template", value_parser = ["template", "diffusion"])]
        generator: String,
    },
    /// Retrieve assets for a generated grid and write the placed layout.
    Retrieve {
        /// Scene layout (JSON).
        #[arg(long)]
        scene: PathBuf,
        /// Generated grid file.
        #[arg(long)]
        grid: PathBuf,
        /// Asset database file.
        #[arg(long)]
        db: PathBuf,
        /// Layout with placements (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Clusters and match scores (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compute the metric suite for a layout or a generated grid.
    Evaluate {
        /// Scene layout (JSON).
        #[arg(long)]
        scene: PathBuf,
        /// Evaluate the instance voxels of this grid instead of meshes.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Needed when the layout has placements.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Reference and generated feature statistics for the Fréchet distance.
        #[arg(long, num_args = 2, value_names = ["REAL", "GENERATED"])]
        fid: Option<Vec<PathBuf>>,
        /// Metrics report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a top-down semantic image.
    #[command(group(ArgGroup::new("input").required(true).args(["grid", "scene"])))]
    Render {
        /// Grid to render; otherwise the layout is voxelized.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Scene layout (JSON).
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Asset database for placed layouts.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Palette when rendering a grid: `room`, `shelf` or a file.
        #[arg(long, default_value = "shelf")]
        vocabulary: String,
        /// PNG file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn config(common: &Common) -> Result<PipelineConfig> {
    let mode: Mode = common.mode.parse()?;
    let mut cfg = match &common.config {
        Some(p) => load_config(p, mode)?,
        None => parse_config("", mode, "<preset>")?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_scene(path: &Path) -> Result<(SceneLayout, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let scene = read_scene(&text, &path.display().to_string())?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((scene, base))
}

fn load_db(path: &Path) -> Result<AssetDb> {
    read_asset_db(BufReader::new(File::open(path)?))
}

fn load_grid(path: &Path) -> Result<GlobalGrid> {
    read_grid(BufReader::new(File::open(path)?))
}

fn vocabulary(reference: &str) -> Result<Vocabulary> {
    Vocabulary::resolve(reference, Path::new(""))
}

fn read_mesh(path: &Path) -> Result<Mesh> {
    Mesh::read_obj(BufReader::new(File::open(path)?), &path.display().to_string())
}

#[derive(Serialize)]
struct GenerateReport<'a> {
    config: &'a PipelineConfig,
    generator: GeneratorKind,
    report: voxscene::assembly::GenerationReport,
}

#[derive(Serialize)]
struct RetrieveReport<'a> {
    config: &'a PipelineConfig,
    outcome: &'a pipeline::RetrievalOutcome,
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a PipelineConfig,
    source: &'static str,
    metrics: MetricsReport,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::BuildDb { meshes, vocabulary: vocab, out } => {
            let vocab = vocabulary(&vocab)?;
            let mut records = Vec::new();
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&meshes)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            dirs.sort();
            for dir in dirs.into_iter().filter(|d| d.is_dir()) {
                let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                let category = vocab
                    .index(&name)
                    .ok_or_else(|| Error::InvalidArgument(format!("directory {name:?} is not a category")))?;
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                files.sort();
                for f in files.into_iter().filter(|f| f.extension().is_some_and(|e| e == "obj")) {
                    let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    let id: u32 = stem
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("{} is not named <id>.obj", f.display())))?;
                    records.push(build_asset(id, category, &read_mesh(&f)?, cfg.retrieval.asset_resolution)?);
                }
            }
            let db = AssetDb::new(records)?;
            let mut w = create(&out)?;
            write_asset_db(&db, &mut w)?;
            w.flush()?;
            println!("{} assets", db.len());
        }
        Command::Voxelize { mesh, out, voxel_size, band, fill, id, category } => {
            let mesh = read_mesh(&mesh)?;
            let s = voxel_size.unwrap_or(cfg.voxel.voxel_size);
            let bb = mesh.aabb();
            if bb.is_empty() {
                return Err(Error::InvalidArgument("mesh has no triangles".into()));
            }
            let spec = GridSpec::covering(bb.min, bb.max, s, 2)?;
            let mut occ = voxelize_mesh(&mesh, &spec, band.unwrap_or_else(|| default_band(s)))?;
            if fill {
                occ = fill_holes(&occ);
            }
            let mut grid = GlobalGrid::new(spec);
            grid.claim_free(&occ, id, category)?;
            let mut w = create(&out)?;
            write_grid(&grid, &mut w)?;
            w.flush()?;
            println!("{} voxels", occ.len());
        }
        Command::Generate { scene, db, out, report, generator } => {
            let (layout, base) = load_scene(&scene)?;
            let vocab = layout.vocabulary(&base)?;
            let anchors = layout.anchors(&vocab)?;
            let structure = layout.structure_mesh(&base)?;
            let db = load_db(&db)?;
            let kind: GeneratorKind = generator.parse()?;
            let (grid, rep) = pipeline::generate(&anchors, structure.as_ref(), vocab.len(), &db, &cfg, kind)?;
            let mut w = create(&out)?;
            write_grid(&grid, &mut w)?;
            w.flush()?;
            let rep = rep.without_timings();
            println!(
                "{} of {} objects written, {} skipped",
                rep.steps.len() - rep.skipped().count(),
                rep.steps.len(),
                rep.skipped().count()
            );
            if let Some(p) = report {
                write_json(&p, &GenerateReport { config: &cfg, generator: kind, report: rep })?;
            }
        }
        Command::Retrieve { scene, grid, db, out, report } => {
            let (mut layout, base) = load_scene(&scene)?;
            let vocab = layout.vocabulary(&base)?;
            let anchors = layout.anchors(&vocab)?;
            let grid = load_grid(&grid)?;
            let db = load_db(&db)?;
            let outcome = pipeline::retrieve_scene(&grid, &anchors, &db, &cfg)?;
            layout.placements = outcome.matches.iter().map(|(id, m)| Placement::from_match(*id, m)).collect();
            std::fs::write(&out, write_scene(&layout))?;
            println!("{} placed, {} unmatched", outcome.matches.len(), outcome.unmatched.len());
            if let Some(p) = report {
                write_json(&p, &RetrieveReport { config: &cfg, outcome: &outcome })?;
            }
        }
        Command::Evaluate { scene, grid, db, fid, out } => {
            let (layout, base) = load_scene(&scene)?;
            let vocab = layout.vocabulary(&base)?;
            let mcfg = cfg.metric_config();
            let db = db.map(|p| load_db(&p)).transpose()?;
            let (source, scene_metrics) = match grid {
                Some(g) => {
                    let grid = load_grid(&g)?;
                    let floor = layout.structure.floor.clone().map(Polygon::new).transpose()?;
                    let m = pipeline::grid_metrics(&grid, floor.as_ref(), mcfg.eta, mcfg.epsilon)?;
                    ("grid", m)
                }
                None => {
                    let eval = layout.eval_scene(&vocab, db.as_ref(), &base)?;
                    ("meshes", evaluate_scene(&eval, &mcfg)?)
                }
            };
            let mut report = MetricsReport::new(mcfg, vec![scene_metrics]);
            report.retrieval = BTreeMap::from([
                ("sigma".to_string(), cfg.retrieval.sigma),
                ("scale_gate".to_string(), cfg.retrieval.scale_gate),
            ]);
            if !layout.placements.is_empty() {
                let anchors = layout.anchors(&vocab)?;
                let pairs: Vec<(u16, u32)> = layout
                    .placements
                    .iter()
                    .map(|p| {
                        let a = anchors.iter().find(|a| a.id == p.anchor_id).expect("validated placement");
                        (a.category, p.asset_id)
                    })
                    .collect();
                report.category_diversity = Some(category_diversity(&pairs)?);
            }
            if let Some(paths) = fid {
                let real = read_feature_stats(BufReader::new(File::open(&paths[0])?))?;
                let generated = read_feature_stats(BufReader::new(File::open(&paths[1])?))?;
                report.fid = Some(frechet_distance(&real, &generated)?);
            }
            let m = &report.scenes[0];
            println!("I_p x1e3 = {:.4}, OR x1e3 = {:.4}", m.ip_x1e3, m.overlap_x1e3);
            write_json(&out, &EvaluateReport { config: &cfg, source, metrics: report })?;
        }
        Command::Render { grid, scene, db, vocabulary: vocab, out } => {
            let (grid, vocab) = match (grid, scene) {
                (Some(g), _) => (load_grid(&g)?, vocabulary(&vocab)?),
                (None, Some(s)) => {
                    let (layout, base) = load_scene(&s)?;
                    let vocab = layout.vocabulary(&base)?;
                    let db = db.map(|p| load_db(&p)).transpose()?;
                    let eval = layout.eval_scene(&vocab, db.as_ref(), &base)?;
                    let (spec, occs) = eval_voxelize(&eval.objects, cfg.metrics.pitch)?;
                    let mut grid = GlobalGrid::new(spec);
                    for (o, occ) in eval.objects.iter().zip(&occs) {
                        grid.claim_free(occ, o.id, o.category)?;
                    }
                    (grid, vocab)
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            let img = render_topdown(&grid, &vocab)?;
            let mut w = create(&out)?;
            write_png(&img, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
