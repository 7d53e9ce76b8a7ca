use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use lidarloc::geometry::{pose_to_transform, transform_to_pose, Pose, Vec3};
use lidarloc::io::{assemble_map, generate_world, read_scan_file, write_scan_file, CityLayout, KittiSequence, SyntheticWorld};
use lidarloc::nn_grid::build_grid;
use lidarloc::pipeline::{
    alignment_rmse, map_bev, match_global, metrics_from_trace, run_sequence, MapArtifacts, Pipeline, PipelineConfig,
    RunReport, S2mOutcome,
};
use lidarloc::pointcloud::{voxel_downsample, Vec2};
use lidarloc::{matcher, DistanceGrid, GridSpec, MatchPyramid};

#[derive(Parser)]
#[command(name = "lidarloc", version, about = "LIDAR-only global localization in a prebuilt point cloud map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a map from a sequence's scans and ground-truth poses.
    BuildMap {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Precompute the sparse distance grid of a map.
    BuildGrid {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Precompute the bird's-eye-view match pyramid of a map.
    BuildPyramid {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Run the localizer over a sequence and write an NDJSON run report.
    Localize(LocalizeArgs),
    /// Generate a synthetic city and write it as a sequence directory.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Side length of the square world in metres.
        #[arg(long, default_value_t = 200.0)]
        extent: f64,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        /// Reference surface sampling density, points per square metre.
        #[arg(long)]
        density: Option<f64>,
    },
    /// Match individual scans against the whole map and report alignment errors.
    MatchOne {
        #[arg(long)]
        seq: PathBuf,
        /// Map file; defaults to `map.bin` inside the sequence.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Number of scans to match, spread evenly over the sequence.
        #[arg(long)]
        count: Option<usize>,
        /// Per-scan results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Summarize a run report and optionally export plot data.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving `trajectory.csv` and `events.csv`.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                PipelineConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
            }
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    seq: PathBuf,
    #[command(flatten)]
    cfg: ConfigArg,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Map file; defaults to `map.bin` inside the sequence.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Prebuilt distance grid; built from the map when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Prebuilt match pyramid; built from the map when omitted.
    #[arg(long)]
    pyramid: Option<PathBuf>,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the particle updates.
    #[arg(long)]
    threads: Option<usize>,
    /// Run scan-to-map matching on a background thread.
    #[arg(long)]
    live: bool,
    /// Stop after this many scans.
    #[arg(long)]
    max_scans: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildMap { seq, out, cfg } => {
            let cfg = cfg.load()?;
            let seq = KittiSequence::open(&seq, cfg.dt)?;
            let poses = seq.poses.clone().context("sequence has no poses.txt")?;
            let scans = (0..poses.len()).map(|k| seq.scan(k)).collect::<lidarloc::Result<Vec<_>>>()?;
            let map = assemble_map(&scans, &poses, cfg.voxel_res, 0)?;
            write_scan_file(&out, &map)?;
            info!("map with {} points written to {}", map.len(), out.display());
        }
        Command::BuildGrid { map, out, cfg } => {
            let cfg = cfg.load()?;
            let map = downsampled_map(&map, &cfg)?;
            let spec = GridSpec::covering(&map, Vec3::repeat(cfg.grid_delta), cfg.d_max, cfg.sigma)?;
            let grid = build_grid(&map, &spec)?;
            grid.write_to(BufWriter::new(File::create(&out)?))?;
            info!("grid with {} nodes written to {}", grid.len(), out.display());
        }
        Command::BuildPyramid { map, out, cfg } => {
            let cfg = cfg.load()?;
            let map = downsampled_map(&map, &cfg)?;
            let pyr = matcher::build_pyramid(&map_bev(&map, &cfg)?, &Vec2::repeat(cfg.d_m), cfg.cell_value())?;
            pyr.write_to(BufWriter::new(File::create(&out)?))?;
            info!("pyramid with {} levels written to {}", pyr.top_level() + 1, out.display());
        }
        Command::Localize(args) => localize(args)?,
        Command::GenWorld { out, seed, extent, steps, density } => {
            let layout = CityLayout { extent, steps, ..CityLayout::default() };
            let mut world = SyntheticWorld::city(&layout, seed)?;
            if let Some(d) = density {
                world.density = d;
            }
            let gen = generate_world(&world, seed)?;
            let poses: Vec<_> = gen.truth.iter().map(pose_to_transform).collect();
            KittiSequence::write(&out, &gen.scans, &poses)?;
            write_scan_file(&out.join("map.bin"), &gen.map)?;
            fs::write(out.join("world.json"), serde_json::to_string_pretty(&world)?)?;
            info!("{} scans and a {}-point map written to {}", gen.scans.len(), gen.map.len(), out.display());
        }
        Command::MatchOne { seq, map, count, csv, cfg } => match_one(&seq, map, count, csv, &cfg.load()?)?,
        Command::Report { input, csv_dir } => report(&input, csv_dir.as_deref())?,
    }
    Ok(())
}

fn downsampled_map(path: &Path, cfg: &PipelineConfig) -> Result<lidarloc::PointCloud> {
    let map = read_scan_file(path).with_context(|| format!("reading map {}", path.display()))?;
    Ok(voxel_downsample(&map, &Vec3::repeat(cfg.voxel_res), 0)?)
}

fn load_artifacts(
    seq: &Path,
    map: Option<PathBuf>,
    grid: Option<PathBuf>,
    pyramid: Option<PathBuf>,
    cfg: &PipelineConfig,
) -> Result<MapArtifacts> {
    let map_path = map.unwrap_or_else(|| seq.join("map.bin"));
    if grid.is_none() && pyramid.is_none() {
        let raw = read_scan_file(&map_path).with_context(|| format!("reading map {}", map_path.display()))?;
        return Ok(MapArtifacts::build(&raw, cfg)?);
    }
    let map = downsampled_map(&map_path, cfg)?;
    let grid = match grid {
        Some(p) => DistanceGrid::read_from(BufReader::new(File::open(&p).with_context(|| p.display().to_string())?))?,
        None => build_grid(&map, &GridSpec::covering(&map, Vec3::repeat(cfg.grid_delta), cfg.d_max, cfg.sigma)?)?,
    };
    let pyramid = match pyramid {
        Some(p) => MatchPyramid::read_from(BufReader::new(File::open(&p).with_context(|| p.display().to_string())?))?,
        None => matcher::build_pyramid(&map_bev(&map, cfg)?, &Vec2::repeat(cfg.d_m), cfg.cell_value())?,
    };
    Ok(MapArtifacts::from_parts(map, grid, pyramid, cfg)?)
}

fn localize(args: LocalizeArgs) -> Result<()> {
    let mut cfg = args.cfg.load()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let seq = KittiSequence::open(&args.seq, cfg.dt)?;
    if seq.is_empty() {
        bail!("sequence {} has no scans", args.seq.display());
    }
    let n = args.max_scans.map_or(seq.len(), |m| m.min(seq.len()));
    let truth: Option<Vec<Pose>> =
        seq.poses.as_ref().map(|p| p.iter().take(n).map(|t| transform_to_pose(t).pose).collect());
    let art = Arc::new(load_artifacts(&args.seq, args.map, args.grid, args.pyramid, &cfg)?);
    let body = || -> Result<RunReport> {
        let mut pipeline =
            if args.live { Pipeline::new_live(art.clone(), cfg.clone())? } else { Pipeline::new(art.clone(), cfg.clone())? };
        Ok(run_sequence(&mut pipeline, (0..n).map(|k| seq.scan(k)), truth.as_deref(), None)?)
    };
    let report = match args.threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build()?.install(body)?,
        None => body()?,
    };
    let text = report.to_ndjson();
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn match_one(seq_dir: &Path, map: Option<PathBuf>, count: Option<usize>, csv: Option<PathBuf>, cfg: &PipelineConfig) -> Result<()> {
    let seq = KittiSequence::open(seq_dir, cfg.dt)?;
    let poses = seq.poses.clone().context("match-one needs ground-truth poses")?;
    let art = load_artifacts(seq_dir, map, None, None, cfg)?;
    let total = poses.len();
    let count = count.unwrap_or(total).min(total);
    if count == 0 {
        bail!("no scans to match");
    }
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let k = i * total / count;
        let scan = voxel_downsample(&seq.scan(k)?, &Vec3::repeat(cfg.voxel_res), k as u64)?;
        let truth = transform_to_pose(&poses[k]).pose;
        let rmse = match match_global(&art, cfg, &scan) {
            S2mOutcome::Matched { refined, .. } => Some(alignment_rmse(&scan, &refined, &truth)),
            S2mOutcome::Failed(_) => None,
        };
        rows.push((k, rmse));
    }
    let ok = rows.iter().filter(|(_, r)| r.is_some_and(|r| r <= cfg.d_m)).count();
    println!("scans: {count}");
    println!("within {} m: {ok} ({:.1}%)", cfg.d_m, 100.0 * ok as f64 / count as f64);
    if let Some(path) = csv {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "scan,rmse")?;
        for (k, r) in &rows {
            writeln!(w, "{k},{}", r.map_or(String::new(), |r| r.to_string()))?;
        }
    }
    Ok(())
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn report(input: &Path, csv_dir: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report = RunReport::from_ndjson(&text)?;
    let m = metrics_from_trace(&report.steps);
    println!("steps: {}", report.steps.len());
    println!("A: {}", fmt_opt(m.a));
    println!("B: {}", fmt_opt(m.b));
    println!("C: {}", fmt_opt(m.c));
    println!("D: {}", fmt_opt(m.d));
    println!("E: {}", fmt_opt(m.e));
    println!("resets: {}", m.resets);
    println!("post-localization error: {}", fmt_opt(m.post_loc_error.map(|e| format!("{e:.3} m"))));
    if let Some(dir) = csv_dir {
        fs::create_dir_all(dir)?;
        let mut traj = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
        writeln!(traj, "step,timestamp,x,y,z,yaw,pitch,roll,pos_std,ess,error")?;
        let mut events = BufWriter::new(File::create(dir.join("events.csv"))?);
        writeln!(events, "step,event")?;
        for s in &report.steps {
            writeln!(
                traj,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.step,
                s.timestamp,
                s.x,
                s.y,
                s.z,
                s.yaw,
                s.pitch,
                s.roll,
                s.pos_std,
                s.ess,
                s.error.map_or(String::new(), |e| e.to_string())
            )?;
            for e in &s.events {
                writeln!(events, "{},{}", s.step, serde_json::to_string(e)?.trim_matches('"'))?;
            }
        }
    }
    Ok(())
}
