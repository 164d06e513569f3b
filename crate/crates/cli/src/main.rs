//! Command-line driver: synthesize scenes and run the curb pipeline stage by
//! stage or end to end.
//!
//! Stages exchange files under `--out`:
//! `candidates.json` (extract), `clusters/<clustering>.json` (cluster),
//! `filtered/<clustering>.json` and `models/<clustering>.json` (filter),
//! `report.json` and `report.csv` (evaluate). `--debug-dump` adds mesh,
//! Voronoi and medial-axis files plus gnuplot data under `debug/`.
//!
//! Exit status: 0 on success, 1 when the run flagged degeneracies, 2 on
//! configuration errors or missing inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use curbfuse::clustering::CurbClusterSet;
use curbfuse::config::{FilterMethod, PipelineConfig};
use curbfuse::delaunay::delaunay_filter_traced;
use curbfuse::eval::GroundTruthCurb;
use curbfuse::exec::{self, Execution};
use curbfuse::io;
use curbfuse::pipeline::{self, Extraction, FilteredCluster, ModelDump};
use curbfuse::synth::{self, Layout, SceneSpec};

#[derive(Parser)]
#[command(name = "curbfuse", version, about = "Curb extraction from lidar and fisheye-camera semantics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 runs every stage sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write intermediate geometry under <out>/debug.
    #[arg(long, global = true)]
    debug_dump: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Filter methods to run, comma separated: none, ransac, delaunay.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory in --out.
    Synth(SynthArgs),
    /// Pick curb candidates from a scene directory.
    Extract(SceneArg),
    /// Cluster the candidates of every frame into curb segments.
    Cluster,
    /// Filter outliers out of every cluster.
    Filter,
    /// Score filtered clusters against ground truth.
    Evaluate(SceneArg),
    /// Extract, cluster, filter and evaluate in one go.
    All(SceneArg),
}

#[derive(Args)]
struct SceneArg {
    /// Scene directory (cameras/, frames/, poses.csv, gt.geojson).
    #[arg(long)]
    scene: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Straight,
    Curve,
    Isle,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings (JSON); the flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    /// Curve radius, meters.
    #[arg(long, default_value_t = 40.0)]
    radius: f64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    curbs: Option<usize>,
}

struct Ctx {
    cfg: PipelineConfig,
    exec: Execution,
    out: PathBuf,
    debug: bool,
}

impl Ctx {
    fn path(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.out.clone(), |p, s| p.join(s))
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if !c.method.is_empty() {
        cfg.filter_methods = c
            .method
            .iter()
            .map(|m| FilterMethod::from_name(m))
            .collect::<curbfuse::Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth_spec(a: &SynthArgs, seed: Option<u64>) -> Result<SceneSpec> {
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => SceneSpec::default(),
    };
    if let Some(l) = a.layout {
        spec.layout = match l {
            LayoutArg::Straight => Layout::Straight,
            LayoutArg::Curve => Layout::Curve { radius: a.radius },
            LayoutArg::Isle => Layout::IntersectionIsle,
        };
        if a.spec.is_none() && matches!(l, LayoutArg::Isle) {
            spec.curb_count = 3;
        }
    }
    if let Some(n) = a.frames {
        spec.n_frames = n;
    }
    if let Some(n) = a.curbs {
        spec.curb_count = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {}", path.display());
    }
    Ok(())
}

fn stage_extract(ctx: &Ctx, scene: &Path) -> Result<bool> {
    require(scene, "scene directory")?;
    let input = io::read_scene(scene).context("reading scene")?;
    let ex = pipeline::extract(ctx.exec, &input, &ctx.cfg);
    let n: usize = ex.frames.iter().map(|f| f.points.len()).sum();
    log::info!("extract: {} frames, {n} candidates, {} skipped", ex.frames.len(), ex.flags.len());
    io::write_json(&ctx.path(&["candidates.json"]), &ex)?;
    io::write_json(&ctx.path(&["config.json"]), &ctx.cfg)?;
    Ok(!ex.flags.is_empty())
}

fn stage_cluster(ctx: &Ctx) -> Result<bool> {
    let cand = ctx.path(&["candidates.json"]);
    require(&cand, "extraction output (run `extract` first)")?;
    let ex: Extraction = io::read_json(&cand)?;
    for m in &ctx.cfg.clustering_methods {
        let set = pipeline::cluster(ctx.exec, &ex.frames, m, &ctx.cfg)?;
        log::info!("cluster: {} → {} clusters, {} points", m.name(), set.len(), set.total_points());
        io::write_json(&ctx.path(&["clusters", &format!("{}.json", m.name())]), &set)?;
    }
    Ok(false)
}

fn read_clusters(ctx: &Ctx, name: &str) -> Result<CurbClusterSet> {
    let p = ctx.path(&["clusters", &format!("{name}.json")]);
    require(&p, "cluster output (run `cluster` first)")?;
    Ok(io::read_json(&p)?)
}

fn dump_delaunay(ctx: &Ctx, clustering: &str, set: &CurbClusterSet) -> Result<()> {
    for c in &set.clusters {
        let dir = ctx.path(&["debug", clustering, &format!("cluster_{}", c.id)]);
        let (outcome, trace) = delaunay_filter_traced(&c.points, &ctx.cfg.delaunay);
        if let Some(t) = trace {
            io::write_mesh_off(&dir.join("mesh.off"), &t.mesh)?;
            io::write_voronoi_ply(&dir.join("voronoi.ply"), &t.subgraph)?;
        }
        if let Some(a) = &outcome.axis {
            io::write_polyline_ply(&dir.join("axis.ply"), &a.polyline)?;
        }
    }
    Ok(())
}

fn stage_filter(ctx: &Ctx) -> Result<bool> {
    let mut flagged = false;
    for m in &ctx.cfg.clustering_methods {
        let set = read_clusters(ctx, m.name())?;
        let mut filtered: BTreeMap<FilterMethod, Vec<FilteredCluster>> = BTreeMap::new();
        for &f in &ctx.cfg.filter_methods {
            let out = pipeline::filter_set(ctx.exec, &set, f, &ctx.cfg);
            let kept: usize = out.iter().map(|c| c.kept.len()).sum();
            log::info!("filter: {} / {} keeps {kept} of {} points", m.name(), f.name(), set.total_points());
            flagged |= out.iter().any(|c| !c.flags.is_empty());
            filtered.insert(f, out);
        }
        if let Some(r) = filtered.get(&FilterMethod::Ransac) {
            let models: BTreeMap<u32, &ModelDump> =
                r.iter().filter_map(|c| Some((c.cluster_id, c.model.as_ref()?))).collect();
            io::write_json(&ctx.path(&["models", &format!("{}.json", m.name())]), &models)?;
        }
        if ctx.debug && filtered.contains_key(&FilterMethod::Delaunay) {
            dump_delaunay(ctx, m.name(), &set)?;
        }
        io::write_json(&ctx.path(&["filtered", &format!("{}.json", m.name())]), &filtered)?;
    }
    Ok(flagged)
}

fn dump_segments(ctx: &Ctx, run: &pipeline::ClusteringRun, gt: &[GroundTruthCurb]) -> Result<()> {
    for g in gt {
        let reference = g.densify(ctx.cfg.eval.gt_spacing);
        for (method, filtered) in &run.filtered {
            let mut pts = Vec::new();
            for (c, f) in run.clusters.clusters.iter().zip(filtered) {
                if run.assignment.get(&c.id) == Some(&Some(g.segment_id)) {
                    pts.extend(f.kept.iter().map(|&i| c.points[i]));
                }
            }
            let name = format!("segment_{}_{}.dat", g.segment_id, method.name());
            io::write_xy_dump(
                &ctx.path(&["debug", &run.clustering, &name]),
                &[("filtered", &pts), ("ground truth", &reference)],
            )?;
        }
    }
    Ok(())
}

fn stage_evaluate(ctx: &Ctx, scene: &Path) -> Result<bool> {
    require(scene, "scene directory")?;
    let Some(gt_path) = io::find_ground_truth(scene) else {
        bail!("no ground truth (gt.geojson or gt.csv) in {}", scene.display());
    };
    let gt = io::read_ground_truth(&gt_path)?;
    let cand = ctx.path(&["candidates.json"]);
    require(&cand, "extraction output (run `extract` first)")?;
    let ex: Extraction = io::read_json(&cand)?;
    let mut runs = Vec::new();
    for m in &ctx.cfg.clustering_methods {
        let set = read_clusters(ctx, m.name())?;
        let p = ctx.path(&["filtered", &format!("{}.json", m.name())]);
        require(&p, "filter output (run `filter` first)")?;
        let mut filtered: BTreeMap<FilterMethod, Vec<FilteredCluster>> = io::read_json(&p)?;
        filtered.retain(|f, _| ctx.cfg.filter_methods.contains(f));
        if filtered.len() != ctx.cfg.filter_methods.len() {
            bail!("{} lacks some of the requested filter methods", p.display());
        }
        if filtered.values().any(|v| v.len() != set.len()) {
            bail!("{} does not match the cluster output", p.display());
        }
        let run = pipeline::clustering_run(m.name(), set, filtered, &gt, &ctx.cfg);
        if ctx.debug {
            dump_segments(ctx, &run, &gt)?;
        }
        runs.push(run);
    }
    let report = pipeline::build_report(&runs, &gt, &ctx.cfg, ex.flags);
    io::write_file(&ctx.path(&["report.json"]), report.to_json() + "\n")?;
    io::write_file(&ctx.path(&["report.csv"]), report.to_csv())?;
    println!("clustering  method    points  mean_l2     mean_chamfer  false_pos  flagged");
    for t in &report.totals {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        println!(
            "{:<11} {:<9} {:>6}  {:<11} {:<13} {:>9}  {:>7}",
            t.clustering,
            t.method,
            t.detected_points,
            f(t.mean_normalized_l2),
            f(t.mean_chamfer),
            t.false_positive_clusters,
            t.flagged_rows
        );
    }
    Ok(report.is_flagged())
}

fn execute(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    if let Command::Synth(a) = &cli.command {
        let spec = synth_spec(a, c.seed)?;
        let exec = if c.jobs == Some(1) { Execution::Sequential } else { Execution::Parallel };
        exec::set_threads(c.jobs.unwrap_or(0));
        let scene = synth::generate_with(exec, &spec)?;
        io::write_scene(&c.out, &scene)?;
        log::info!("synth: {} frames written to {}", scene.frames.len(), c.out.display());
        return Ok(false);
    }
    let cfg = load_config(c)?;
    exec::set_threads(c.jobs.unwrap_or(0));
    let ctx = Ctx {
        cfg,
        exec: if c.jobs == Some(1) { Execution::Sequential } else { Execution::Parallel },
        out: c.out.clone(),
        debug: c.debug_dump,
    };
    match &cli.command {
        Command::Synth(_) => unreachable!(),
        Command::Extract(s) => stage_extract(&ctx, &s.scene),
        Command::Cluster => stage_cluster(&ctx),
        Command::Filter => stage_filter(&ctx),
        Command::Evaluate(s) => stage_evaluate(&ctx, &s.scene),
        Command::All(s) => {
            require(&s.scene, "scene directory")?;
            if io::find_ground_truth(&s.scene).is_none() {
                bail!("no ground truth (gt.geojson or gt.csv) in {}", s.scene.display());
            }
            let mut flagged = stage_extract(&ctx, &s.scene)?;
            flagged |= stage_cluster(&ctx)?;
            flagged |= stage_filter(&ctx)?;
            flagged |= stage_evaluate(&ctx, &s.scene)?;
            Ok(flagged)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            log::warn!("run finished with flagged degeneracies");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}\nsee `curbfuse --help` for usage");
            ExitCode::from(2)
        }
    }
}
