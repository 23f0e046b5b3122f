//! Closed-loop episode runner, metrics and benchmark suites.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geosem::{EmbeddingProvider, GeoSemMap};
use crate::goal_select::{GoalSelectConfig, QueryEmbedding};
use crate::grid::{occ, Cell, Grid};
use crate::imagination::remote::{Endpoint, RemoteClient, DEFAULT_TIMEOUT};
use crate::imagination::{
    HeuristicBackend, HeuristicConfig, IdentityBackend, ImaginationBackend, OracleBackend, RemoteBackend,
};
use crate::planner::{astar, distance_field, follow_path, step_kinematics, Action, Path, UnknownPolicy};
use crate::scene::{sample_waypoints, Scene};
use crate::sensor::{
    apply_exterior_mask_in_place, raycast_fov, update_predicted_map_in_place, AgentState, PredictedMap, SensorConfig,
};
use crate::strategies::{
    belief_distances, detect_frontiers, goal_visible, policy_greedy, ForesightPolicy, FrontierPolicy, FrontierRule,
    ObjectNavPolicy, PointNavAgent, PointNavController, PolicyContext,
};

pub const POINTNAV_BUDGET: usize = 3000;
pub const OBJECTNAV_BUDGET: usize = 500;
pub const POINTNAV_WAYPOINTS: usize = 2;
pub const POINTNAV_CATEGORY: &str = "pointnav";

/// Aggregate row labels.
pub const ALL_POOLED: &str = "all-pooled";
pub const ALL_CATEGORY_MEAN: &str = "all-category-mean";

/// ObjectNav success radius in cells: one meter, rounded up.
pub fn success_radius_cells(resolution: f64) -> usize {
    (1.0 / resolution).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    PointNav { waypoints: Vec<Cell> },
    ObjectNav { category: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: String,
    pub scene_id: String,
    pub start: AgentState,
    pub task: Task,
    pub budget: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn category(&self) -> &str {
        match &self.task {
            Task::PointNav { .. } => POINTNAV_CATEGORY,
            Task::ObjectNav { category } => category,
        }
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if scene.id != self.scene_id {
            return Err(Error::InvalidArgument(format!(
                "episode {} targets scene {}, got {}",
                self.id, self.scene_id, scene.id
            )));
        }
        self.start.validate(scene)?;
        match &self.task {
            Task::PointNav { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::InvalidArgument(format!("episode {} has no waypoints", self.id)));
                }
                for &w in waypoints {
                    if !scene.in_bounds(w) {
                        return Err(Error::OutOfBounds(w));
                    }
                    if !scene.is_interior_free(w) {
                        return Err(Error::InvalidArgument(format!(
                            "episode {}: waypoint {w:?} is not a free interior cell",
                            self.id
                        )));
                    }
                }
            }
            Task::ObjectNav { category } => {
                if scene.instances_of(category).next().is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "episode {}: category '{category}' is absent from scene {}",
                        self.id, scene.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Imagination backend selection.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BackendSpec {
    Oracle,
    Identity,
    Heuristic,
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(ep) = s.strip_prefix("remote:") {
            ep.parse::<Endpoint>()?;
            return Ok(Self::Remote(ep.to_string()));
        }
        match s.strip_prefix("builtin:").unwrap_or(s) {
            "oracle" => Ok(Self::Oracle),
            "identity" => Ok(Self::Identity),
            "heuristic" => Ok(Self::Heuristic),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend '{other}' (expected oracle, identity, heuristic or remote:<endpoint>)"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle => f.write_str("oracle"),
            Self::Identity => f.write_str("identity"),
            Self::Heuristic => f.write_str("heuristic"),
            Self::Remote(ep) => write!(f, "remote:{ep}"),
        }
    }
}

/// A policy under evaluation. PointNav takes `vanilla` and `imagination`;
/// ObjectNav takes the rest.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PolicySpec {
    Vanilla,
    Imagination(BackendSpec),
    Random,
    Greedy,
    Prior,
    Value,
    Foresight(BackendSpec),
}

impl PolicySpec {
    /// Parses a policy name, filling in `default_backend` for a bare
    /// `imagination` or `foresight`.
    pub fn parse_with_default(s: &str, default_backend: Option<&BackendSpec>) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let backend = || -> Result<BackendSpec> {
            match rest {
                Some(r) => r.parse(),
                None => default_backend
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("policy '{s}' needs a backend, e.g. {s}:oracle"))),
            }
        };
        let simple = |p: PolicySpec| -> Result<PolicySpec> {
            match rest {
                None => Ok(p),
                Some(_) => Err(Error::InvalidArgument(format!("policy '{head}' takes no backend"))),
            }
        };
        match head {
            "vanilla" => simple(Self::Vanilla),
            "random" => simple(Self::Random),
            "greedy" => simple(Self::Greedy),
            "prior" => simple(Self::Prior),
            "value" => simple(Self::Value),
            "imagination" => Ok(Self::Imagination(backend()?)),
            "foresight" => Ok(Self::Foresight(backend()?)),
            other => Err(Error::InvalidArgument(format!("unknown policy '{other}'"))),
        }
    }

    pub fn is_pointnav(&self) -> bool {
        matches!(self, Self::Vanilla | Self::Imagination(_))
    }

    pub fn backend(&self) -> Option<&BackendSpec> {
        match self {
            Self::Imagination(b) | Self::Foresight(b) => Some(b),
            _ => None,
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_default(s, None)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Vanilla => f.write_str("vanilla"),
            Self::Imagination(b) => write!(f, "imagination:{b}"),
            Self::Random => f.write_str("random"),
            Self::Greedy => f.write_str("greedy"),
            Self::Prior => f.write_str("prior"),
            Self::Value => f.write_str("value"),
            Self::Foresight(b) => write!(f, "foresight:{b}"),
        }
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub sensor: SensorConfig,
    pub goal_select: GoalSelectConfig,
    pub heuristic: HeuristicConfig,
    /// Record per-step traces in the results.
    pub trace: bool,
    pub remote_timeout_secs: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            goal_select: GoalSelectConfig::default(),
            heuristic: HeuristicConfig::default(),
            trace: false,
            remote_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

/// Shared backends for a run. Remote backends pool their connections across
/// episodes; builtin backends are built per scene.
pub struct BackendPool {
    remote: HashMap<String, Arc<RemoteBackend>>,
    heuristic: HeuristicConfig,
}

impl BackendPool {
    pub fn new(policies: &[PolicySpec], opts: &RunOptions) -> Result<Self> {
        if !(opts.remote_timeout_secs.is_finite() && opts.remote_timeout_secs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "remote timeout must be positive, got {}",
                opts.remote_timeout_secs
            )));
        }
        let mut remote = HashMap::new();
        for p in policies {
            if let Some(BackendSpec::Remote(ep)) = p.backend() {
                if !remote.contains_key(ep) {
                    let client = RemoteClient::new(ep.parse()?)
                        .with_timeout(Duration::from_secs_f64(opts.remote_timeout_secs));
                    remote.insert(ep.clone(), Arc::new(RemoteBackend::new(client)));
                }
            }
        }
        Ok(Self {
            remote,
            heuristic: opts.heuristic,
        })
    }

    pub fn backend(&self, spec: &BackendSpec, scene: &Scene) -> Result<Arc<dyn ImaginationBackend>> {
        Ok(match spec {
            BackendSpec::Oracle => Arc::new(OracleBackend::new(scene)),
            BackendSpec::Identity => Arc::new(IdentityBackend),
            BackendSpec::Heuristic => Arc::new(HeuristicBackend::new(self.heuristic)),
            BackendSpec::Remote(ep) => match self.remote.get(ep) {
                Some(b) => b.clone(),
                None => {
                    let client = RemoteClient::new(ep.parse()?);
                    Arc::new(RemoteBackend::new(client))
                }
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub state: AgentState,
    pub action: Action,
    pub goal: Option<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub scene_id: String,
    pub policy: String,
    pub category: String,
    pub success: bool,
    /// Actions executed, STOP included.
    pub steps: usize,
    pub budget: usize,
    /// Executed MOVE_FORWARD actions times the resolution.
    pub path_length_m: f64,
    /// Geodesic shortest length; `None` when the goal is unreachable.
    pub shortest_m: Option<f64>,
    /// Geodesic distance to the goal at termination, 0 on success.
    pub dtg_m: Option<f64>,
    pub backend_failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

impl EpisodeResult {
    /// `S·l/max(p, l)`; a successful episode with `l = 0` counts 1.
    pub fn spl(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        match self.shortest_m {
            Some(l) if l > 0.0 => l / self.path_length_m.max(l),
            _ => 1.0,
        }
    }
}

fn nonempty(results: &[EpisodeResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("empty result set".into()));
    }
    Ok(())
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn spl(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().map(EpisodeResult::spl)))
}

pub fn success_rate(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().map(|r| r.success as u8 as f64)))
}

/// Mean over episodes whose goal was reachable.
pub fn mean_dtg(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().filter_map(|r| r.dtg_m)))
}

/// Fraction of PointNav episodes that reached every waypoint in budget.
pub fn completion_rate(results: &[EpisodeResult]) -> Result<f64> {
    success_rate(results)
}

pub fn mean_timesteps(results: &[EpisodeResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(mean(results.iter().map(|r| r.steps as f64)))
}

fn episode_rng(seed: u64, scene_index: usize, k: usize) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((scene_index as u64) << 16)
        .wrapping_add(k as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn random_heading(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..4) as f64 * 90.0
}

/// One PointNav episode per scene: two FPS waypoints and a seeded start.
pub fn pointnav_suite(scenes: &[&Scene], seed: u64) -> Result<Vec<EpisodeSpec>> {
    let mut out = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = episode_rng(seed, i, 0);
        let ep_seed = rng.random::<u64>();
        let waypoints = sample_waypoints(scene, POINTNAV_WAYPOINTS, ep_seed)?;
        let free: Vec<Cell> = scene
            .interior_free_cells()
            .into_iter()
            .filter(|c| !waypoints.contains(c))
            .collect();
        if free.is_empty() {
            return Err(Error::NotEnoughCells {
                needed: POINTNAV_WAYPOINTS + 1,
                available: POINTNAV_WAYPOINTS,
            });
        }
        let start = AgentState::new(free[rng.random_range(0..free.len())], random_heading(&mut rng));
        out.push(EpisodeSpec {
            id: format!("{}/pointnav", scene.id),
            scene_id: scene.id.clone(),
            start,
            task: Task::PointNav { waypoints },
            budget: POINTNAV_BUDGET,
            seed: ep_seed,
        });
    }
    Ok(out)
}

/// One ObjectNav episode per scene and present category, starting at a
/// seeded cell outside the success radius that can reach the goal.
pub fn objectnav_suite(scenes: &[&Scene], categories: &[String], seed: u64) -> Result<Vec<EpisodeSpec>> {
    let mut out = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let r = success_radius_cells(scene.resolution) as u32;
        for (k, category) in categories.iter().enumerate() {
            let goals: Vec<Cell> = scene.instances_of(category).map(|o| o.centroid).collect();
            if goals.is_empty() {
                continue;
            }
            let mut rng = episode_rng(seed, i, k + 1);
            let ep_seed = rng.random::<u64>();
            let dist = distance_field(&scene.occupancy, &goals, |c| scene.is_free(c));
            let starts: Vec<Cell> = scene
                .interior_free_cells()
                .into_iter()
                .filter(|&c| dist[c].is_some_and(|d| d > r))
                .collect();
            if starts.is_empty() {
                log::warn!("scene {}: no start for '{category}' outside the success radius", scene.id);
                continue;
            }
            let start = AgentState::new(starts[rng.random_range(0..starts.len())], random_heading(&mut rng));
            out.push(EpisodeSpec {
                id: format!("{}/{category}", scene.id),
                scene_id: scene.id.clone(),
                start,
                task: Task::ObjectNav {
                    category: category.clone(),
                },
                budget: OBJECTNAV_BUDGET,
                seed: ep_seed,
            });
        }
    }
    Ok(out)
}

fn sense(scene: &Scene, state: &AgentState, sensor: &SensorConfig, p: &mut PredictedMap) -> Result<crate::sensor::ObservationMask> {
    let o = raycast_fov(scene, state, sensor);
    update_predicted_map_in_place(p, &o, &scene.occupancy)?;
    apply_exterior_mask_in_place(p, &scene.interior)?;
    Ok(o)
}

pub fn run_episode(
    scene: &Scene,
    spec: &EpisodeSpec,
    policy: &PolicySpec,
    opts: &RunOptions,
    backends: &BackendPool,
) -> Result<EpisodeResult> {
    opts.sensor.validate()?;
    spec.validate(scene)?;
    match &spec.task {
        Task::PointNav { waypoints } => run_pointnav(scene, spec, waypoints, policy, opts, backends),
        Task::ObjectNav { category } => run_objectnav(scene, spec, category, policy, opts, backends),
    }
}

fn run_pointnav(
    scene: &Scene,
    spec: &EpisodeSpec,
    waypoints: &[Cell],
    policy: &PolicySpec,
    opts: &RunOptions,
    backends: &BackendPool,
) -> Result<EpisodeResult> {
    let agent = match policy {
        PolicySpec::Vanilla => PointNavAgent::Vanilla,
        PolicySpec::Imagination(b) => PointNavAgent::Imagination(backends.backend(b, scene)?),
        other => {
            return Err(Error::InvalidArgument(format!("policy '{other}' does not run PointNav")));
        }
    };
    let legs = |from: Cell, rest: &[Cell]| -> Option<u32> {
        let mut total = 0;
        let mut at = from;
        for &w in rest {
            total += distance_field(&scene.occupancy, &[at], |c| scene.is_free(c))[w]?;
            at = w;
        }
        Some(total)
    };
    let res = scene.resolution;
    let shortest = legs(spec.start.cell, waypoints);

    let mut ctl = PointNavController::new(agent);
    let mut queue: VecDeque<Cell> = waypoints.iter().copied().collect();
    let mut p = PredictedMap::unknown(scene.height(), scene.width());
    let mut state = spec.start;
    let (mut steps, mut moves) = (0, 0);
    let mut trace = opts.trace.then(Vec::new);
    while steps < spec.budget {
        sense(scene, &state, &opts.sensor, &mut p)?;
        let Some(action) = ctl.step(scene, &state, &p, &mut queue, opts.sensor.turn_angle, &spec.id)? else {
            break;
        };
        let next = step_kinematics(&scene.occupancy, &state, action, opts.sensor.turn_angle);
        moves += (next.cell != state.cell) as usize;
        state = next;
        steps += 1;
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                step: steps,
                state,
                action,
                goal: queue.front().copied(),
            });
        }
    }
    while queue.front() == Some(&state.cell) {
        queue.pop_front();
    }
    let success = queue.is_empty();
    let remaining: Vec<Cell> = queue.into_iter().collect();
    let dtg = if success { Some(0) } else { legs(state.cell, &remaining) };
    Ok(EpisodeResult {
        episode_id: spec.id.clone(),
        scene_id: scene.id.clone(),
        policy: policy.to_string(),
        category: POINTNAV_CATEGORY.into(),
        success,
        steps,
        budget: spec.budget,
        path_length_m: moves as f64 * res,
        shortest_m: shortest.map(|l| l as f64 * res),
        dtg_m: dtg.map(|d| d as f64 * res),
        backend_failures: ctl.backend_failures,
        trace,
    })
}

fn make_objectnav_policy(
    policy: &PolicySpec,
    scene: &Scene,
    seed: u64,
    opts: &RunOptions,
    backends: &BackendPool,
) -> Result<Box<dyn ObjectNavPolicy>> {
    Ok(match policy {
        PolicySpec::Random => Box::new(FrontierPolicy::new(FrontierRule::Random, seed)),
        PolicySpec::Greedy => Box::new(FrontierPolicy::new(FrontierRule::Greedy, seed)),
        PolicySpec::Prior => Box::new(FrontierPolicy::new(FrontierRule::PriorMatrix, seed)),
        PolicySpec::Value => Box::new(FrontierPolicy::new(FrontierRule::ValueFrontier, seed)),
        PolicySpec::Foresight(b) => {
            let config = GoalSelectConfig {
                seed,
                ..opts.goal_select.clone()
            };
            Box::new(ForesightPolicy::new(backends.backend(b, scene)?, config))
        }
        other => return Err(Error::InvalidArgument(format!("policy '{other}' does not run ObjectNav"))),
    })
}

/// Cached path toward one target.
#[derive(Default)]
struct Navigator {
    target: Option<Cell>,
    path: Option<Path>,
}

impl Navigator {
    /// Path from `from` to `target` on `grid`, reusing the cached one while
    /// the agent is on it and it stays passable.
    fn path_to(&mut self, grid: &Grid<f32>, from: Cell, target: Cell) -> Result<Option<&Path>> {
        let valid = self.target == Some(target)
            && self.path.as_ref().is_some_and(|path| match path.position_of(from) {
                Some(i) => path.cells()[i..].iter().all(|&c| UnknownPolicy::Traversable.passable(grid[c])),
                None => false,
            });
        if !valid {
            self.target = Some(target);
            self.path = astar(grid, from, target, UnknownPolicy::Traversable)?;
        }
        Ok(self.path.as_ref())
    }

    fn clear(&mut self) {
        self.target = None;
        self.path = None;
    }
}

/// Cells left on `path` after `from`.
fn remaining_cells(path: &Path, from: Cell) -> Option<&[Cell]> {
    path.position_of(from).map(|i| &path.cells()[i + 1..])
}

fn run_objectnav(
    scene: &Scene,
    spec: &EpisodeSpec,
    category: &str,
    policy_spec: &PolicySpec,
    opts: &RunOptions,
    backends: &BackendPool,
) -> Result<EpisodeResult> {
    let goals: Vec<Cell> = scene.instances_of(category).map(|o| o.centroid).collect();
    let radius = success_radius_cells(scene.resolution);
    let truth = distance_field(&scene.occupancy, &goals, |c| scene.is_free(c));
    let res = scene.resolution;
    let turn = opts.sensor.turn_angle;

    let provider = scene.provider()?;
    let query = QueryEmbedding::new(category, provider.embed_text(category)?)?;
    let mut policy = make_objectnav_policy(policy_spec, scene, spec.seed, opts, backends)?;

    let (h, w) = scene.shape();
    let mut p = PredictedMap::unknown(h, w);
    let mut geosem = GeoSemMap::new(h, w, scene.embedding_dim(), res, (0.0, 0.0));
    let mut state = spec.start;
    let (mut steps, mut moves) = (0, 0);
    let mut stopped = false;
    let mut nav = Navigator::default();
    let mut trace = opts.trace.then(Vec::new);

    while steps < spec.budget {
        let o = sense(scene, &state, &opts.sensor, &mut p)?;
        for (c, &seen) in o.grid().cells() {
            if seen && p.is_known(c) {
                geosem.integrate_cell(c, scene.semantic_at(c))?;
            }
        }
        geosem.occupancy.clone_from(p.grid());

        let visible: Vec<Cell> = goals.iter().copied().filter(|&g| goal_visible(&p, g)).collect();
        let (action, goal) = if !visible.is_empty() {
            approach(&p, &state, &visible, radius, turn, &mut nav)?
        } else {
            let frontiers = detect_frontiers(&p);
            let ctx = PolicyContext {
                scene,
                belief: &p,
                geosem: &geosem,
                frontiers: &frontiers,
                state,
                observation: &o,
                category,
                query: &query,
                provider: &provider as &dyn EmbeddingProvider,
                episode: &spec.id,
            };
            explore(policy.as_mut(), &ctx, turn, &mut nav)?
        };

        let next = step_kinematics(&scene.occupancy, &state, action, turn);
        moves += (next.cell != state.cell) as usize;
        state = next;
        steps += 1;
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                step: steps,
                state,
                action,
                goal,
            });
        }
        if action == Action::Stop {
            stopped = true;
            break;
        }
    }

    let final_dist = truth[state.cell];
    let success = stopped && final_dist.is_some_and(|d| d as usize <= radius);
    let shortest = truth[spec.start.cell].map(|d| (d as usize).saturating_sub(radius));
    let backend_failures = policy.backend_failures();
    Ok(EpisodeResult {
        episode_id: spec.id.clone(),
        scene_id: scene.id.clone(),
        policy: policy_spec.to_string(),
        category: category.into(),
        success,
        steps,
        budget: spec.budget,
        path_length_m: moves as f64 * res,
        shortest_m: shortest.map(|l| l as f64 * res),
        dtg_m: if success { Some(0.0) } else { final_dist.map(|d| d as f64 * res) },
        backend_failures,
        trace,
    })
}

/// Heads for the nearest observed goal and stops once the rest of the way is
/// known free and within the radius.
fn approach(
    p: &PredictedMap,
    state: &AgentState,
    visible: &[Cell],
    radius: usize,
    turn: f64,
    nav: &mut Navigator,
) -> Result<(Action, Option<Cell>)> {
    let dist = belief_distances(p.grid(), state.cell);
    let target = visible
        .iter()
        .copied()
        .filter(|&g| dist[g].is_some())
        .min_by_key(|&g| (dist[g], g));
    let Some(target) = target else {
        return Ok((Action::TurnRight, None));
    };
    let Some(path) = nav.path_to(p.grid(), state.cell, target)? else {
        nav.clear();
        return Ok((Action::TurnRight, Some(target)));
    };
    let rest = remaining_cells(path, state.cell).unwrap_or(&[]);
    if rest.len() <= radius && rest.iter().all(|&c| occ::is_free(p.grid()[c])) {
        return Ok((Action::Stop, Some(target)));
    }
    let action = follow_path(state, path, turn).filter(|a| *a != Action::Stop);
    Ok((action.unwrap_or(Action::TurnRight), Some(target)))
}

/// Moves toward the policy's goal, falling back to greedy frontiers. Stops
/// when nothing is left to explore.
fn explore(
    policy: &mut dyn ObjectNavPolicy,
    ctx: &PolicyContext,
    turn: f64,
    nav: &mut Navigator,
) -> Result<(Action, Option<Cell>)> {
    let grid = policy.planning_grid(ctx.belief);
    let mut last = None;
    for _ in 0..2 {
        let goal = policy
            .goal(ctx)?
            .or_else(|| policy_greedy(ctx.frontiers, ctx.belief.grid(), &ctx.state));
        let Some(goal) = goal else {
            return Ok((Action::Stop, None));
        };
        last = Some(goal);
        if goal != ctx.state.cell {
            if let Some(path) = nav.path_to(&grid, ctx.state.cell, goal)? {
                if let Some(a) = follow_path(&ctx.state, path, turn).filter(|a| *a != Action::Stop) {
                    return Ok((a, Some(goal)));
                }
            }
        }
        nav.clear();
        policy.invalidate();
    }
    Ok((Action::TurnRight, last))
}

/// Per-policy, per-category metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub policy: String,
    pub category: String,
    pub success: f64,
    pub spl: f64,
    pub dtg: f64,
    pub episodes: usize,
}

impl MetricRow {
    fn of(policy: &str, category: &str, results: &[&EpisodeResult]) -> Self {
        let owned: Vec<EpisodeResult> = results.iter().map(|r| (*r).clone()).collect();
        Self {
            policy: policy.into(),
            category: category.into(),
            success: success_rate(&owned).unwrap_or(0.0),
            spl: spl(&owned).unwrap_or(0.0),
            dtg: mean_dtg(&owned).unwrap_or(0.0),
            episodes: owned.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub policies: Vec<String>,
    /// Results in (policy, episode) order.
    pub results: Vec<EpisodeResult>,
    pub rows: Vec<MetricRow>,
}

impl BenchmarkReport {
    pub fn from_results(policies: Vec<String>, results: Vec<EpisodeResult>) -> Self {
        let mut categories: Vec<String> = Vec::new();
        for r in &results {
            if !categories.contains(&r.category) {
                categories.push(r.category.clone());
            }
        }
        let mut rows = Vec::new();
        for policy in &policies {
            let mine: Vec<&EpisodeResult> = results.iter().filter(|r| &r.policy == policy).collect();
            let mut per_cat = Vec::new();
            for cat in &categories {
                let sel: Vec<&EpisodeResult> = mine.iter().copied().filter(|r| &r.category == cat).collect();
                if !sel.is_empty() {
                    per_cat.push(MetricRow::of(policy, cat, &sel));
                }
            }
            let multi = per_cat.len() > 1;
            rows.extend(per_cat.iter().cloned());
            if multi {
                rows.push(MetricRow::of(policy, ALL_POOLED, &mine));
                let n = per_cat.len() as f64;
                rows.push(MetricRow {
                    policy: policy.clone(),
                    category: ALL_CATEGORY_MEAN.into(),
                    success: per_cat.iter().map(|r| r.success).sum::<f64>() / n,
                    spl: per_cat.iter().map(|r| r.spl).sum::<f64>() / n,
                    dtg: per_cat.iter().map(|r| r.dtg).sum::<f64>() / n,
                    episodes: mine.len(),
                });
            }
        }
        Self {
            policies,
            results,
            rows,
        }
    }

    pub fn results_for(&self, policy: &str) -> Vec<EpisodeResult> {
        self.results.iter().filter(|r| r.policy == policy).cloned().collect()
    }

    /// `policy,category,success,spl,dtg,episodes`; DTG in meters.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("policy,category,success,spl,dtg,episodes\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{}\n",
                csv_field(&r.policy),
                csv_field(&r.category),
                r.success,
                r.spl,
                r.dtg,
                r.episodes
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for policy in &self.policies {
            let mine = self.results_for(policy);
            if mine.is_empty() {
                continue;
            }
            s.push_str(&format!(
                "{policy}: {} episodes, success {:.3}, SPL {:.3}, DTG {:.2} m, mean timesteps {:.1}\n",
                mine.len(),
                success_rate(&mine).unwrap_or(0.0),
                spl(&mine).unwrap_or(0.0),
                mean_dtg(&mine).unwrap_or(0.0),
                mean_timesteps(&mine).unwrap_or(0.0),
            ));
        }
        s
    }

    /// One JSON object per trace step, tagged with episode and policy.
    pub fn write_traces(&self, mut w: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            episode: &'a str,
            policy: &'a str,
            #[serde(flatten)]
            step: &'a TraceStep,
        }
        for r in &self.results {
            for step in r.trace.iter().flatten() {
                let line = Line {
                    episode: &r.episode_id,
                    policy: &r.policy,
                    step,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs every policy on every episode. Results do not depend on
/// `parallelism`.
pub fn run_benchmark(
    scenes: &BTreeMap<String, Scene>,
    suite: &[EpisodeSpec],
    policies: &[PolicySpec],
    opts: &RunOptions,
    parallelism: usize,
) -> Result<BenchmarkReport> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("empty episode suite".into()));
    }
    if policies.is_empty() {
        return Err(Error::InvalidArgument("no policies".into()));
    }
    for spec in suite {
        if !scenes.contains_key(&spec.scene_id) {
            return Err(Error::InvalidArgument(format!(
                "episode {} references unknown scene {}",
                spec.id, spec.scene_id
            )));
        }
    }
    let backends = BackendPool::new(policies, opts)?;
    let jobs: Vec<(&PolicySpec, &EpisodeSpec)> =
        policies.iter().flat_map(|p| suite.iter().map(move |e| (p, e))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<EpisodeResult> = pool.install(|| {
        jobs.par_iter()
            .map(|(p, e)| run_episode(&scenes[&e.scene_id], e, p, opts, &backends))
            .collect::<Result<_>>()
    })?;
    Ok(BenchmarkReport::from_results(
        policies.iter().map(|p| p.to_string()).collect(),
        results,
    ))
}
