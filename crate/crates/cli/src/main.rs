mod config;
mod render;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use foresight::eval::{objectnav_suite, pointnav_suite, run_benchmark, EpisodeSpec, TraceStep};
use foresight::geosem::{EmbeddingProvider, GeoSemMap};
use foresight::goal_select::{select_goal, GoalSelectConfig, QueryEmbedding};
use foresight::grid::Cell;
use foresight::imagination::training::{generate_training_masks, save_pair};
use foresight::imagination::{ImaginationBackend, OracleBackend};
use foresight::scene::io::META_FILE;
use foresight::scene::{generate_synthetic_scene, load_scene, save_scene, GeneratorConfig, Scene};
use foresight::sensor::SensorConfig;
use serde::{Deserialize, Serialize};

use config::{load_json, RunConfig, TaskKind};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";
pub const LOG_ENV: &str = "FORESIGHT_BENCH_LOG";

#[derive(Parser)]
#[command(
    name = "foresight-bench",
    version,
    about = "Grid-world imagination and ObjectNav benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    GenScenes(GenScenesArgs),
    /// Generate partial-map training pairs from scenes.
    GenTrainingData(GenTrainingArgs),
    /// Run a PointNav or ObjectNav benchmark.
    Run(RunArgs),
    /// Render scenes, query heatmaps or episode paths to PNG.
    #[command(subcommand)]
    Visualize(VisualizeCommand),
}

#[derive(Args)]
struct GenScenesArgs {
    /// Number of scenes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainingConfig {
    sensor: SensorConfig,
    waypoints: usize,
    snapshots: usize,
    seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            waypoints: 4,
            snapshots: 3,
            seed: 0,
        }
    }
}

#[derive(Args)]
struct GenTrainingArgs {
    /// A scene directory or a directory of scene directories.
    #[arg(long)]
    scenes: PathBuf,
    /// Training config (JSON: sensor, waypoints, snapshots, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    waypoints: Option<usize>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(value_enum)]
    task: TaskKind,
    /// Run config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// A scene directory or a directory of scene directories; overrides the config.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated policies, e.g. `greedy,random,foresight:oracle`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// `builtin:<oracle|identity|heuristic>` or `remote:<endpoint>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Write per-step traces as JSON lines.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum VisualizeCommand {
    /// Top-down occupancy with object labels.
    Scene {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scale: u32,
    },
    /// Similarity to a text query over interior cells, with goal zones.
    Heatmap {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        query: String,
        /// Agent cell `row,col`; marks the chosen goal.
        #[arg(long, value_parser = parse_cell)]
        agent: Option<Cell>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scale: u32,
    },
    /// Paths from a JSON-lines trace over the scene.
    Trace {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        episode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scale: u32,
    },
}

fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Cell::new(parse(r)?, parse(c)?))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScenes(a) => gen_scenes(a),
        Command::GenTrainingData(a) => gen_training_data(a),
        Command::Run(a) => run(a),
        Command::Visualize(v) => visualize(v),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Creates `out`, refusing to reuse a non-empty directory unless `force`.
fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("cannot read {}", out.display()))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                bail!(
                    "output directory {} is not empty (use --force to replace it)",
                    out.display()
                );
            }
            fs::remove_dir_all(out).with_context(|| format!("cannot clear {}", out.display()))?;
        }
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

/// Scene directories under `path`: the path itself if it holds a scene,
/// otherwise its scene subdirectories in name order.
fn discover_scenes(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        bail!("scene path {} does not exist", path.display());
    }
    if path.join(META_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("cannot read {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenes found under {}", path.display());
    }
    Ok(dirs)
}

fn load(path: &Path) -> Result<Scene> {
    load_scene(path).with_context(|| format!("cannot load scene {}", path.display()))
}

fn gen_scenes(a: GenScenesArgs) -> Result<()> {
    let cfg: GeneratorConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => GeneratorConfig::default(),
    };
    prepare_out(&a.out, a.force)?;
    for i in 0..a.n {
        let seed = a.seed.wrapping_add(i);
        let scene =
            generate_synthetic_scene(seed, &cfg).with_context(|| format!("scene seed {seed}"))?;
        save_scene(&scene, a.out.join(&scene.id))?;
        log::info!("wrote scene {}", scene.id);
    }
    write_json(&a.out.join(RESOLVED_CONFIG), &cfg)?;
    println!("wrote {} scenes to {}", a.n, a.out.display());
    Ok(())
}

fn gen_training_data(a: GenTrainingArgs) -> Result<()> {
    let mut cfg: TrainingConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(v) = a.waypoints {
        cfg.waypoints = v;
    }
    if let Some(v) = a.snapshots {
        cfg.snapshots = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.sensor.validate()?;
    if cfg.waypoints == 0 || cfg.snapshots == 0 {
        bail!("waypoints and snapshots must be at least 1");
    }
    let dirs = discover_scenes(&a.scenes)?;
    prepare_out(&a.out, a.force)?;
    let mut total = 0;
    for dir in &dirs {
        let scene = load(dir)?;
        let pairs =
            generate_training_masks(&scene, &cfg.sensor, cfg.waypoints, cfg.snapshots, cfg.seed)
                .with_context(|| format!("scene {}", scene.id))?;
        for (k, pair) in pairs.iter().enumerate() {
            save_pair(pair, a.out.join(&scene.id).join(format!("pair-{k:03}")))?;
        }
        total += pairs.len();
    }
    write_json(&a.out.join(RESOLVED_CONFIG), &cfg)?;
    println!(
        "wrote {total} pairs from {} scenes to {}",
        dirs.len(),
        a.out.display()
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.scenes {
        cfg.scenes = discover_scenes(p)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.out {
        cfg.out = Some(v);
    }
    if let Some(v) = a.policies {
        cfg.policies = v;
    }
    if let Some(v) = a.backend {
        cfg.backend = v;
    }
    if let Some(v) = a.parallelism {
        cfg.parallelism = v;
    }
    cfg.trace |= a.trace;
    cfg.validate(a.task)?;
    let policies = cfg.policy_specs(a.task)?;
    cfg.policies = policies.iter().map(|p| p.to_string()).collect();
    cfg.backend = match cfg.backend_spec()? {
        foresight::eval::BackendSpec::Remote(ep) => format!("remote:{ep}"),
        b => format!("builtin:{b}"),
    };
    let Some(out) = cfg.out.clone() else {
        bail!("no output directory: pass --out or set \"out\" in the config");
    };

    let scenes: Vec<Scene> = if cfg.scenes.is_empty() {
        (0..cfg.num_scenes as u64)
            .map(|i| {
                let seed = cfg.seed.wrapping_add(i);
                generate_synthetic_scene(seed, &cfg.generator)
                    .with_context(|| format!("scene seed {seed}"))
            })
            .collect::<Result<_>>()?
    } else {
        cfg.scenes.iter().map(|p| load(p)).collect::<Result<_>>()?
    };
    let mut by_id = BTreeMap::new();
    for s in &scenes {
        if by_id.insert(s.id.clone(), s.clone()).is_some() {
            bail!("duplicate scene id {}", s.id);
        }
    }
    let refs: Vec<&Scene> = scenes.iter().collect();
    let suite: Vec<EpisodeSpec> = match a.task {
        TaskKind::Pointnav => pointnav_suite(&refs, cfg.seed)?,
        TaskKind::Objectnav => {
            let cats = if cfg.categories.is_empty() {
                cfg.generator.categories.clone()
            } else {
                cfg.categories.clone()
            };
            objectnav_suite(&refs, &cats, cfg.seed)?
        }
    };
    if suite.is_empty() {
        bail!("no evaluable episodes in the selected scenes");
    }

    prepare_out(&out, a.force)?;
    let report = run_benchmark(
        &by_id,
        &suite,
        &policies,
        &cfg.run_options(),
        cfg.parallelism,
    )?;

    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    write_json(&out.join("episodes.json"), &suite)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("summary.txt"), report.summary())?;
    let mut results = BufWriter::new(fs::File::create(out.join("results.jsonl"))?);
    for r in &report.results {
        let mut r = r.clone();
        r.trace = None;
        serde_json::to_writer(&mut results, &r)?;
        results.write_all(b"\n")?;
    }
    results.flush()?;
    if cfg.trace {
        let mut w = BufWriter::new(fs::File::create(out.join("traces.jsonl"))?);
        report.write_traces(&mut w)?;
        w.flush()?;
    }
    print!("{}", report.summary());
    println!("wrote report to {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
struct TraceLine {
    episode: String,
    policy: String,
    #[serde(flatten)]
    step: TraceStep,
}

fn visualize(cmd: VisualizeCommand) -> Result<()> {
    match cmd {
        VisualizeCommand::Scene { scene, out, scale } => {
            let s = load(&scene)?;
            render::save_png(&render::scene_colors(&s), scale, &out)?;
        }
        VisualizeCommand::Heatmap {
            scene,
            query,
            agent,
            out,
            scale,
        } => {
            let s = load(&scene)?;
            let provider = s.provider()?;
            let q = QueryEmbedding::new(query.clone(), provider.embed_text(&query)?)?;
            let mut colors = render::heatmap_colors(&s, &q.vector);
            let (h, w) = s.shape();
            let empty = GeoSemMap::new(h, w, s.embedding_dim(), s.resolution, (0.0, 0.0));
            let imagined = OracleBackend::new(&s).imagine(&empty, "visualize")?;
            let agent_cell = agent.unwrap_or(Cell::new(h / 2, w / 2));
            if !s.in_bounds(agent_cell) {
                bail!("agent cell {agent_cell:?} is outside the {h}x{w} scene");
            }
            let sel = select_goal(
                &imagined,
                &q,
                agent_cell,
                &s.occupancy,
                &[],
                &GoalSelectConfig::default(),
            )?;
            render::mark_zones(&mut colors, &sel.zones, agent.and(sel.goal));
            render::save_png(&colors, scale, &out)?;
        }
        VisualizeCommand::Trace {
            scene,
            trace,
            episode,
            out,
            scale,
        } => {
            let s = load(&scene)?;
            let raw = fs::read_to_string(&trace)
                .with_context(|| format!("cannot read {}", trace.display()))?;
            let mut paths: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let t: TraceLine = serde_json::from_str(line)
                    .with_context(|| format!("{}:{}", trace.display(), i + 1))?;
                if t.episode == episode {
                    paths.entry(t.policy).or_default().push(t.step.state.cell);
                }
            }
            if paths.is_empty() {
                bail!("episode {episode} not found in {}", trace.display());
            }
            let mut colors = render::scene_colors(&s);
            for (k, (policy, cells)) in paths.iter().enumerate() {
                let color = render::PATH_COLORS[k % render::PATH_COLORS.len()];
                render::mark_path(&mut colors, cells, color);
                println!("{policy}: rgb{color:?}, {} steps", cells.len());
            }
            for cells in paths.values() {
                render::mark_path(&mut colors, &cells[cells.len() - 1..], render::END);
            }
            if let Some(first) = paths.values().next().and_then(|c| c.first()) {
                render::mark_path(&mut colors, &[*first], render::START);
            }
            render::save_png(&colors, scale, &out)?;
        }
    }
    Ok(())
}
