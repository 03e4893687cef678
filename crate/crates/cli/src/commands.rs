//! Subcommand implementations: extract, synth, score, detect, render.
//!
//! Commands return module errors unchanged; the binary maps error kinds to
//! exit codes and prints one machine-readable JSON object on stderr. Every
//! primary output is byte-deterministic for a fixed seed and config.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use semloft::detectors::{detect_doors, detect_walls, propose_units};
use semloft::error::{Error, Result};
use semloft::gridmap::{
    classify, dominant_orientation, load_pgm, rotate_grid, save_pgm, synth_map, ClassifiedGrid,
    NoiseModel, OccupancyGrid,
};
use semloft::mcmc::{run_chains, ChainTrace, InitMode, Kernel};
use semloft::scoring::{cell_prediction_rate, posterior_log, PosteriorScore};
use semloft::world::{
    load_world, world_to_json, Axis, SemanticWorld, UnitClassThresholds, UnitType,
};

use crate::config::{parse_init_mode, Config};
use crate::render::write_overlay;

pub const METRICS_SCHEMA: &str = "semmetrics/1";
pub const REPORT_SCHEMA: &str = "semreport/1";
pub const CANDIDATES_SCHEMA: &str = "semcandidates/1";

#[derive(Debug, clap::Args)]
pub struct ExtractArgs {
    /// Input occupancy grid map (PGM).
    #[arg(long)]
    pub map: PathBuf,
    /// Output world JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics JSON path; defaults next to --out.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Optional overlay image of the result (.png or .pgm).
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// Optional line-delimited JSON trace of recorded samples.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Config file; falls back to $SEMLOFT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Chain seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iteration count override.
    #[arg(long)]
    pub iters: Option<u64>,
    /// Initial world: random or detected.
    #[arg(long, value_parser = parse_init_mode)]
    pub init: Option<InitMode>,
    /// Independent chains with consecutive seeds; best score wins.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Input uses the opposite occupancy convention (bright = occupied).
    #[arg(long)]
    pub invert: bool,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Ground-truth world JSON.
    #[arg(long)]
    pub world: PathBuf,
    /// Output map path (PGM).
    #[arg(long)]
    pub out: PathBuf,
    /// Where to copy the canonical ground truth; defaults next to --out.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Class flip probability per cell.
    #[arg(long, default_value_t = 0.0)]
    pub flip: f64,
    /// Fraction of free cells turned into clutter blobs.
    #[arg(long, default_value_t = 0.0)]
    pub clutter: f64,
    /// Noise generator seed.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Config file; falls back to $SEMLOFT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    /// Map to score against (PGM).
    #[arg(long)]
    pub map: PathBuf,
    /// World JSON to score.
    #[arg(long)]
    pub world: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file; falls back to $SEMLOFT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input uses the opposite occupancy convention.
    #[arg(long)]
    pub invert: bool,
}

#[derive(Debug, clap::Args)]
pub struct DetectArgs {
    /// Map to scan (PGM).
    #[arg(long)]
    pub map: PathBuf,
    /// Candidates path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file; falls back to $SEMLOFT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input uses the opposite occupancy convention.
    #[arg(long)]
    pub invert: bool,
}

#[derive(Debug, clap::Args)]
pub struct RenderArgs {
    /// Map to draw under the world (PGM).
    #[arg(long)]
    pub map: PathBuf,
    /// World JSON to draw.
    #[arg(long)]
    pub world: PathBuf,
    /// Output image (.png or .pgm).
    #[arg(long)]
    pub out: PathBuf,
    /// Config file; falls back to $SEMLOFT_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input uses the opposite occupancy convention.
    #[arg(long)]
    pub invert: bool,
}

/// Full pipeline: load, classify, align, detect, chain, write outputs.
pub fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let mut cfg = Config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.chain.seed = seed;
    }
    if let Some(iters) = args.iters {
        cfg.chain.max_iterations = iters;
        // A shortened run keeps a proportionate burn-in instead of dying on
        // the config default.
        if cfg.chain.burn_in >= iters {
            cfg.chain.burn_in = iters / 10;
        }
    }
    if let Some(init) = args.init {
        cfg.chain.init = init;
    }
    if let Some(chains) = args.chains {
        cfg.chains = chains;
    }
    if args.invert {
        cfg.invert = true;
    }
    cfg.validate()?;

    let grid = load_map(&args.map, &cfg)?;
    let fallback_resolution = grid.resolution;
    let (grid, map_c, rotation) = aligned_classified(grid, &cfg)?;
    let mut scoring = cfg.scoring.clone();
    if cfg.area_big.is_none() {
        scoring.world.class = adaptive_class_thresholds(&map_c, &cfg);
    }

    let trace = run_chains(&map_c, &scoring, &cfg.detect, &cfg.chain, cfg.chains)?;
    let world = &trace.best_world;
    let dims = (map_c.width, map_c.height);
    let resolution = cfg.resolution.unwrap_or(fallback_resolution);

    write_text(&args.out, &world_to_json(world, dims, resolution))?;
    if rotation != 0.0 {
        // The world lives in the aligned frame; ship that frame so scoring
        // the output against a map stays meaningful.
        save_pgm(&grid, &args.out.with_extension("aligned.pgm"))?;
    }
    let score = posterior_log(&map_c, world, &scoring)?;
    let k = cell_prediction_rate(&map_c, world, &scoring)?;
    let metrics = metrics_json(&trace, &score, k, dims, rotation, &cfg, world);
    let metrics_path =
        args.metrics.clone().unwrap_or_else(|| args.out.with_extension("metrics.json"));
    write_text(&metrics_path, &to_pretty(&metrics))?;
    if let Some(path) = &args.render {
        write_overlay(path, &map_c, world, scoring.world.wall_thickness)?;
    }
    if let Some(path) = &args.trace {
        write_trace(path, &trace, dims, resolution)?;
    }
    Ok(())
}

/// Renders a ground-truth world to a noisy synthetic map plus a canonical
/// copy of the truth for later comparison.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = Config::load(args.config.as_deref())?;
    let data = load_world(&args.world)?;
    let noise = if args.flip == 0.0 && args.clutter == 0.0 {
        NoiseModel::identity(args.noise_seed)
    } else {
        NoiseModel::uniform(args.flip, args.clutter, args.noise_seed)
    };
    noise.validate()?;
    let mut grid = synth_map(&data.world, data.dims, cfg.scoring.world.wall_thickness, &noise)?;
    if data.resolution > 0.0 {
        grid.resolution = data.resolution;
    }
    save_pgm(&grid, &args.out)?;
    let truth_path =
        args.truth.clone().unwrap_or_else(|| args.out.with_extension("world.json"));
    write_text(&truth_path, &world_to_json(&data.world, data.dims, data.resolution))
}

/// Scores a world JSON against a map and emits the report.
pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let mut cfg = Config::load(args.config.as_deref())?;
    if args.invert {
        cfg.invert = true;
    }
    let grid = load_map(&args.map, &cfg)?;
    let map_c = classify(&grid, &cfg.scoring.classify);
    let data = load_world(&args.world)?;
    ensure_dims(data.dims, (map_c.width, map_c.height))?;
    let score = posterior_log(&map_c, &data.world, &cfg.scoring)?;
    let k = cell_prediction_rate(&map_c, &data.world, &cfg.scoring)?;
    emit(args.out.as_deref(), &to_pretty(&report_json(&score, k)))
}

/// Dumps wall, door, and unit candidates for inspection and seeding.
pub fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let mut cfg = Config::load(args.config.as_deref())?;
    if args.invert {
        cfg.invert = true;
    }
    let grid = load_map(&args.map, &cfg)?;
    let (_, map_c, _) = aligned_classified(grid, &cfg)?;
    let walls = detect_walls(&map_c, &cfg.detect);
    let doors = detect_doors(&map_c, &walls, &cfg.detect);
    let units = propose_units(&walls, &cfg.detect);
    let candidates = json!({
        "schema": CANDIDATES_SCHEMA,
        "walls": walls
            .iter()
            .map(|w| {
                json!({
                    "axis": axis_str(w.axis),
                    "line": w.line_coord,
                    "thickness": w.thickness,
                    "span": [w.span.0, w.span.1],
                    "support": w.support,
                })
            })
            .collect::<Vec<_>>(),
        "doors": doors
            .iter()
            .map(|d| {
                json!({
                    "axis": axis_str(d.axis),
                    "segment": d.segment,
                    "width": d.width_cells,
                    "gap_support": d.gap_support,
                })
            })
            .collect::<Vec<_>>(),
        "units": units
            .iter()
            .map(|u| {
                json!({
                    "rect": [u.rect.x0(), u.rect.y0(), u.rect.x1(), u.rect.y1()],
                    "score": u.score,
                })
            })
            .collect::<Vec<_>>(),
    });
    emit(args.out.as_deref(), &to_pretty(&candidates))
}

/// Draws a world overlay on a map.
pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let mut cfg = Config::load(args.config.as_deref())?;
    if args.invert {
        cfg.invert = true;
    }
    let grid = load_map(&args.map, &cfg)?;
    let map_c = classify(&grid, &cfg.scoring.classify);
    let data = load_world(&args.world)?;
    ensure_dims(data.dims, (map_c.width, map_c.height))?;
    write_overlay(&args.out, &map_c, &data.world, cfg.scoring.world.wall_thickness)
}

fn load_map(path: &Path, cfg: &Config) -> Result<OccupancyGrid> {
    let mut grid = load_pgm(path)?;
    if cfg.invert {
        grid.invert();
    }
    Ok(grid)
}

/// Classifies the map, rotating it to the dominant wall orientation first
/// when alignment is on. Maps without occupied cells have no orientation and
/// pass through unrotated.
fn aligned_classified(
    grid: OccupancyGrid,
    cfg: &Config,
) -> Result<(OccupancyGrid, ClassifiedGrid, f64)> {
    let map_c = classify(&grid, &cfg.scoring.classify);
    if cfg.align {
        if let Ok(angle) = dominant_orientation(&map_c) {
            if angle != 0.0 {
                let rotated = rotate_grid(&grid, angle)?;
                let map_c = classify(&rotated, &cfg.scoring.classify);
                return Ok((rotated, map_c, angle));
            }
        }
    }
    Ok((grid, map_c, 0.0))
}

/// Hall threshold from this map's own candidates: `area_factor` times the
/// median candidate area.
fn adaptive_class_thresholds(map_c: &ClassifiedGrid, cfg: &Config) -> UnitClassThresholds {
    let walls = detect_walls(map_c, &cfg.detect);
    let areas: Vec<f64> = propose_units(&walls, &cfg.detect)
        .iter()
        .map(|c| c.rect.area_cells() as f64)
        .collect();
    UnitClassThresholds::from_candidate_areas(&areas, cfg.area_factor, cfg.ratio_big)
}

fn metrics_json(
    trace: &ChainTrace,
    score: &PosteriorScore,
    k: f64,
    dims: (usize, usize),
    rotation: f64,
    cfg: &Config,
    world: &SemanticWorld,
) -> Value {
    let mut counts = [0usize; 3];
    for &t in world.types() {
        counts[match t {
            UnitType::Room => 0,
            UnitType::Corridor => 1,
            UnitType::Hall => 2,
        }] += 1;
    }
    let acceptance: serde_json::Map<String, Value> = Kernel::ALL
        .iter()
        .zip(&trace.acceptance)
        .map(|(kernel, s)| {
            (
                kernel.as_str().to_string(),
                json!({"proposed": s.proposed, "accepted": s.accepted}),
            )
        })
        .collect();
    json!({
        "schema": METRICS_SCHEMA,
        "K": k,
        "log_likelihood": score.log_likelihood,
        "log_prior": score.log_prior,
        "log_posterior": score.log_posterior,
        "unit_count": world.n(),
        "door_count": world.doors().len(),
        "type_counts": {"room": counts[0], "corridor": counts[1], "hall": counts[2]},
        "dims": [dims.0, dims.1],
        "rotation_deg": rotation,
        "seed": cfg.chain.seed,
        "chains": cfg.chains,
        "iterations": trace.iterations,
        "acceptance": acceptance,
    })
}

fn report_json(score: &PosteriorScore, k: f64) -> Value {
    json!({
        "schema": REPORT_SCHEMA,
        "K": k,
        "log_likelihood": score.log_likelihood,
        "log_prior": score.log_prior,
        "log_posterior": score.log_posterior,
        "overlap_cells": score.overlap_cells,
        "per_pair_b": score
            .per_pair_b
            .iter()
            .map(|t| json!({"p": t.p, "q": t.q, "d": t.d, "log_b": t.log_b}))
            .collect::<Vec<_>>(),
    })
}

fn write_trace(
    path: &Path,
    trace: &ChainTrace,
    dims: (usize, usize),
    resolution: f64,
) -> Result<()> {
    let mut out = String::new();
    for s in &trace.samples {
        let world: Value = serde_json::from_str(&world_to_json(&s.world, dims, resolution))
            .expect("world serialization is valid JSON");
        let line = json!({
            "iteration": s.iteration,
            "log_posterior": s.log_posterior,
            "world": world,
        });
        out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
        out.push('\n');
    }
    write_text(path, &out)
}

fn axis_str(axis: Axis) -> &'static str {
    match axis {
        Axis::Vertical => "vertical",
        Axis::Horizontal => "horizontal",
    }
}

fn ensure_dims(world_dims: (usize, usize), map_dims: (usize, usize)) -> Result<()> {
    if world_dims != map_dims {
        return Err(Error::Geometry(format!(
            "world raster context {}x{} does not match map {}x{}",
            world_dims.0, world_dims.1, map_dims.0, map_dims.1
        )));
    }
    Ok(())
}

fn to_pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
