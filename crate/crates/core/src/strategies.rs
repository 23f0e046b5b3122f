//! Exploration policies: frontier baselines, the imagination-driven
//! foresight policy, and the PointNav agents.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geosem::embedding::{cosine, PriorMatrix, STRUCTURAL_LABELS};
use crate::geosem::{zero_shot_segment, EmbeddingProvider, GeoSemMap};
use crate::goal_select::{select_goal, GoalSelectConfig, QueryEmbedding};
use crate::grid::{occ, Cell, Grid};
use crate::imagination::{
    binarize_occupancy, geosem_from_predicted, overlay_observed, ImaginationBackend, OCCUPANCY_THRESHOLD,
};
use crate::planner::{astar, distance_field, follow_path, Action, Path, UnknownPolicy};
use crate::scene::{nearest_to_mean, Scene};
use crate::sensor::{fov_overlap, AgentState, ObservationMask, PredictedMap};

/// Connected free cells bordering unknown space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frontier {
    pub cells: Vec<Cell>,
    /// Member cell closest to the members' mean.
    pub centroid: Cell,
}

pub const MIN_FRONTIER_SIZE: usize = 3;

pub fn is_frontier_cell(p: &Grid<f32>, c: Cell) -> bool {
    occ::is_free(p[c]) && p.neighbors4(c).any(|n| occ::is_unknown(p[n]))
}

/// Frontier cells grouped with 8-connectivity, in row-major order of their
/// first cell. Groups under three cells are dropped unless no larger group
/// exists.
pub fn detect_frontiers(p: &PredictedMap) -> Vec<Frontier> {
    let g = p.grid();
    let (h, w) = g.shape();
    let mut seen = Grid::filled(h, w, false);
    let mut groups = Vec::new();
    for (start, _) in g.cells() {
        if seen[start] || !is_frontier_cell(g, start) {
            continue;
        }
        seen[start] = true;
        let mut cells = vec![start];
        let mut stack = vec![start];
        while let Some(c) = stack.pop() {
            for n in g.neighbors8(c) {
                if !seen[n] && is_frontier_cell(g, n) {
                    seen[n] = true;
                    cells.push(n);
                    stack.push(n);
                }
            }
        }
        cells.sort_unstable();
        groups.push(cells);
    }
    if groups.iter().any(|c| c.len() >= MIN_FRONTIER_SIZE) {
        groups.retain(|c| c.len() >= MIN_FRONTIER_SIZE);
    }
    groups
        .into_iter()
        .map(|cells| Frontier {
            centroid: nearest_to_mean(&cells),
            cells,
        })
        .collect()
}

/// Uniformly random frontier centroid.
pub fn policy_random(frontiers: &[Frontier], rng: &mut impl Rng) -> Option<Cell> {
    if frontiers.is_empty() {
        return None;
    }
    Some(frontiers[rng.random_range(0..frontiers.len())].centroid)
}

/// Geodesic distances from `from` on the belief with unknown cells traversable.
pub fn belief_distances(p: &Grid<f32>, from: Cell) -> Grid<Option<u32>> {
    distance_field(p, &[from], |c| UnknownPolicy::Traversable.passable(p[c]))
}

/// Reachable frontier with the smallest geodesic distance, ties by `(row, col)`.
pub fn policy_greedy(frontiers: &[Frontier], p: &Grid<f32>, state: &AgentState) -> Option<Cell> {
    let dist = belief_distances(p, state.cell);
    frontiers
        .iter()
        .filter_map(|f| dist[f.centroid].map(|d| (d, f.centroid)))
        .min()
        .map(|(_, c)| c)
}

/// Highest-scoring frontier; ties go to the geodesically nearest.
fn argmax_or_greedy(
    frontiers: &[Frontier],
    scores: &[Option<f64>],
    p: &Grid<f32>,
    state: &AgentState,
) -> Option<Cell> {
    let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return policy_greedy(frontiers, p, state);
    }
    let tied: Vec<Frontier> = frontiers
        .iter()
        .zip(scores)
        .filter(|(_, s)| **s == Some(best))
        .map(|(f, _)| f.clone())
        .collect();
    policy_greedy(&tied, p, state).or_else(|| policy_greedy(frontiers, p, state))
}

fn cells_within(g: &Grid<f32>, c: Cell, radius: usize) -> impl Iterator<Item = Cell> + '_ {
    let r = radius as isize;
    (-r..=r)
        .flat_map(move |dr| (-r..=r).map(move |dc| (dr, dc)))
        .filter(move |(dr, dc)| dr * dr + dc * dc <= r * r)
        .filter_map(move |(dr, dc)| c.offset(dr, dc))
        .filter(|n| g.in_bounds(*n))
}

/// Majority label among observed cells within `radius` of `c`. Object labels
/// win over floor and wall whenever any is present; ties go to the lower
/// label index.
pub fn frontier_label(labels: &Grid<Option<usize>>, queries: &[String], c: Cell, radius: usize) -> Option<usize> {
    let mut counts = vec![0usize; queries.len()];
    let r = radius as isize;
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc > r * r {
                continue;
            }
            if let Some(l) = c.offset(dr, dc).and_then(|n| labels.get(n)).copied().flatten() {
                counts[l] += 1;
            }
        }
    }
    let is_background = |i: usize| STRUCTURAL_LABELS.contains(&queries[i].as_str());
    let has_object = counts.iter().enumerate().any(|(i, &n)| n > 0 && !is_background(i));
    counts
        .iter()
        .enumerate()
        .filter(|&(i, &n)| n > 0 && (!has_object || !is_background(i)))
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

/// Scores each frontier by `prior[label, goal]`; unlabeled frontiers never win.
pub fn policy_prior_matrix(
    frontiers: &[Frontier],
    geosem: &GeoSemMap,
    provider: &dyn EmbeddingProvider,
    prior: &PriorMatrix,
    goal: &str,
    p: &Grid<f32>,
    state: &AgentState,
) -> Result<Option<Cell>> {
    if frontiers.is_empty() {
        return Ok(None);
    }
    let Some(goal_idx) = prior.index_of(goal) else {
        return Ok(policy_greedy(frontiers, p, state));
    };
    let seg = zero_shot_segment(geosem, prior.labels(), provider)?;
    let scores: Vec<Option<f64>> = frontiers
        .iter()
        .map(|f| frontier_label(&seg.labels, prior.labels(), f.centroid, 3).map(|l| prior.score(l, goal_idx)))
        .collect();
    Ok(argmax_or_greedy(frontiers, &scores, p, state))
}

/// Frontier value = best cosine between the query and observed semantics
/// within radius 5 of the centroid.
pub fn policy_value_frontier(
    frontiers: &[Frontier],
    geosem: &GeoSemMap,
    query: &QueryEmbedding,
    p: &Grid<f32>,
    state: &AgentState,
) -> Option<Cell> {
    if frontiers.is_empty() {
        return None;
    }
    let scores: Vec<Option<f64>> = frontiers
        .iter()
        .map(|f| {
            cells_within(p, f.centroid, 5)
                .filter(|&c| geosem.is_observed(c))
                .filter_map(|c| cosine(&geosem.semantic_at_f32(c), &query.vector))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    if scores.iter().all(|s| s.is_none_or(|v| v <= 0.0)) {
        return policy_greedy(frontiers, p, state);
    }
    Some(argmax_or_greedy(frontiers, &scores, p, state)?)
}

/// True once the goal cell has been observed.
pub fn goal_visible(p: &PredictedMap, goal: Cell) -> bool {
    !occ::is_unknown(p.grid()[goal])
}

/// Per-step inputs to an ObjectNav policy.
pub struct PolicyContext<'a> {
    pub scene: &'a Scene,
    pub belief: &'a PredictedMap,
    pub geosem: &'a GeoSemMap,
    pub frontiers: &'a [Frontier],
    pub state: AgentState,
    pub observation: &'a ObservationMask,
    pub category: &'a str,
    pub query: &'a QueryEmbedding,
    pub provider: &'a dyn EmbeddingProvider,
    pub episode: &'a str,
}

/// An ObjectNav exploration policy. Policies keep per-episode state, such as
/// the goal they are committed to.
pub trait ObjectNavPolicy: Send {
    fn name(&self) -> String;

    /// Exploration goal for this step, or `None` when there is nothing left.
    fn goal(&mut self, ctx: &PolicyContext) -> Result<Option<Cell>>;

    /// Called when the committed goal turned out unreachable.
    fn invalidate(&mut self);

    /// Grid to plan on; defaults to the belief.
    fn planning_grid(&self, belief: &PredictedMap) -> Grid<f32> {
        belief.grid().clone()
    }

    /// Imagination calls that failed so far.
    fn backend_failures(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrontierRule {
    Random,
    Greedy,
    PriorMatrix,
    ValueFrontier,
}

/// Frontier baseline that keeps its goal until it is reached, stops being a
/// frontier cell, or becomes unreachable.
pub struct FrontierPolicy {
    rule: FrontierRule,
    rng: ChaCha8Rng,
    committed: Option<Cell>,
    prior: Option<PriorMatrix>,
}

impl FrontierPolicy {
    pub fn new(rule: FrontierRule, seed: u64) -> Self {
        Self {
            rule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            committed: None,
            prior: None,
        }
    }
}

impl ObjectNavPolicy for FrontierPolicy {
    fn name(&self) -> String {
        match self.rule {
            FrontierRule::Random => "random",
            FrontierRule::Greedy => "greedy",
            FrontierRule::PriorMatrix => "prior",
            FrontierRule::ValueFrontier => "value",
        }
        .into()
    }

    fn goal(&mut self, ctx: &PolicyContext) -> Result<Option<Cell>> {
        let p = ctx.belief.grid();
        if let Some(g) = self.committed {
            if g != ctx.state.cell && is_frontier_cell(p, g) {
                return Ok(Some(g));
            }
        }
        let goal = match self.rule {
            FrontierRule::Random => policy_random(ctx.frontiers, &mut self.rng),
            FrontierRule::Greedy => policy_greedy(ctx.frontiers, p, &ctx.state),
            FrontierRule::PriorMatrix => {
                if self.prior.is_none() {
                    let labels: Vec<String> = STRUCTURAL_LABELS
                        .iter()
                        .map(|s| s.to_string())
                        .chain(ctx.scene.categories.iter().cloned())
                        .collect();
                    self.prior = Some(PriorMatrix::from_provider(ctx.provider, &labels)?);
                }
                let prior = self.prior.as_ref().expect("just built");
                policy_prior_matrix(ctx.frontiers, ctx.geosem, ctx.provider, prior, ctx.category, p, &ctx.state)?
            }
            FrontierRule::ValueFrontier => policy_value_frontier(ctx.frontiers, ctx.geosem, ctx.query, p, &ctx.state),
        };
        self.committed = goal;
        Ok(goal)
    }

    fn invalidate(&mut self) {
        self.committed = None;
    }
}

/// Re-imagination trigger: field-of-view overlap with the observation at the
/// last imagination below this.
pub const REIMAGINE_OVERLAP: f64 = 0.5;

/// Imagine, then extract a goal from the imagined map. Falls back to greedy
/// frontiers when the backend fails, when no zone survives, or after reaching
/// a zone without finding the object.
pub struct ForesightPolicy {
    backend: Arc<dyn ImaginationBackend>,
    config: GoalSelectConfig,
    last_mask: Option<ObservationMask>,
    imagined: Option<Grid<f32>>,
    committed: Option<Cell>,
    exhausted: bool,
    fallback: FrontierPolicy,
    pub backend_failures: usize,
}

impl ForesightPolicy {
    pub fn new(backend: Arc<dyn ImaginationBackend>, config: GoalSelectConfig) -> Self {
        Self {
            backend,
            config,
            last_mask: None,
            imagined: None,
            committed: None,
            exhausted: false,
            fallback: FrontierPolicy::new(FrontierRule::Greedy, 0),
            backend_failures: 0,
        }
    }

    fn reimagine(&mut self, ctx: &PolicyContext) -> Result<Option<Cell>> {
        self.last_mask = Some(ctx.observation.clone());
        self.exhausted = false;
        let imagined = match self.backend.imagine(ctx.geosem, ctx.episode) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("episode {}: imagination failed, using greedy: {e}", ctx.episode);
                self.backend_failures += 1;
                self.imagined = None;
                return Ok(None);
            }
        };
        self.imagined = Some(binarize_occupancy(&imagined, OCCUPANCY_THRESHOLD));
        let sel = select_goal(
            &imagined,
            ctx.query,
            ctx.state.cell,
            ctx.belief.grid(),
            ctx.frontiers,
            &self.config,
        )?;
        Ok(sel.goal)
    }
}

impl ObjectNavPolicy for ForesightPolicy {
    fn name(&self) -> String {
        format!("foresight:{}", self.backend.name())
    }

    fn goal(&mut self, ctx: &PolicyContext) -> Result<Option<Cell>> {
        let stale = match &self.last_mask {
            None => true,
            Some(m) => fov_overlap(m, ctx.observation)? < REIMAGINE_OVERLAP,
        };
        if stale {
            self.committed = self.reimagine(ctx)?;
            if self.committed.is_some() {
                self.fallback.invalidate();
            }
        }
        if self.committed == Some(ctx.state.cell) {
            self.committed = None;
            self.exhausted = true;
        }
        if self.exhausted || self.committed.is_none() {
            return self.fallback.goal(ctx);
        }
        Ok(self.committed)
    }

    fn invalidate(&mut self) {
        if self.exhausted || self.committed.is_none() {
            self.fallback.invalidate();
        }
        self.committed = None;
        self.exhausted = true;
    }

    fn backend_failures(&self) -> usize {
        self.backend_failures
    }

    fn planning_grid(&self, belief: &PredictedMap) -> Grid<f32> {
        match &self.imagined {
            Some(g) => overlay_observed(g, belief).expect("imagined map matches the belief"),
            None => belief.grid().clone(),
        }
    }
}

/// PointNav agent variants.
#[derive(Clone)]
pub enum PointNavAgent {
    Vanilla,
    Imagination(Arc<dyn ImaginationBackend>),
}

impl PointNavAgent {
    pub fn name(&self) -> String {
        match self {
            Self::Vanilla => "vanilla".into(),
            Self::Imagination(b) => format!("imagination:{}", b.name()),
        }
    }
}

/// Replans every `replan_every` steps, when the path runs into an observed
/// obstacle, or when the agent leaves it.
pub struct PointNavController {
    pub agent: PointNavAgent,
    pub replan_every: usize,
    path: Option<Path>,
    since_plan: usize,
    pub backend_failures: usize,
}

pub const POINTNAV_REPLAN_EVERY: usize = 10;

impl PointNavController {
    pub fn new(agent: PointNavAgent) -> Self {
        Self {
            agent,
            replan_every: POINTNAV_REPLAN_EVERY,
            path: None,
            since_plan: 0,
            backend_failures: 0,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_ref()
    }

    fn planning_grid(&mut self, scene: &Scene, p: &PredictedMap, episode: &str) -> Result<Grid<f32>> {
        match &self.agent {
            PointNavAgent::Vanilla => Ok(p.grid().clone()),
            PointNavAgent::Imagination(backend) => {
                let map = geosem_from_predicted(p, scene)?;
                match backend.imagine(&map, episode) {
                    Ok(j) => overlay_observed(&binarize_occupancy(&j, OCCUPANCY_THRESHOLD), p),
                    Err(e) => {
                        log::warn!("episode {episode}: imagination failed, planning on the belief: {e}");
                        self.backend_failures += 1;
                        Ok(p.grid().clone())
                    }
                }
            }
        }
    }

    fn path_blocked(&self, p: &PredictedMap, from: Cell) -> bool {
        let Some(path) = &self.path else { return true };
        let Some(i) = path.position_of(from) else { return true };
        path.cells()[i..].iter().any(|&c| occ::is_occupied(p.grid()[c]))
    }

    /// Action toward the head of `waypoints`, popping waypoints on arrival.
    /// Returns `None` once the queue is empty.
    pub fn step(
        &mut self,
        scene: &Scene,
        state: &AgentState,
        p: &PredictedMap,
        waypoints: &mut VecDeque<Cell>,
        turn_angle: f64,
        episode: &str,
    ) -> Result<Option<Action>> {
        while waypoints.front() == Some(&state.cell) {
            waypoints.pop_front();
            self.path = None;
        }
        let Some(&target) = waypoints.front() else {
            return Ok(None);
        };
        let due = self.since_plan >= self.replan_every;
        if due || self.path_blocked(p, state.cell) {
            let grid = self.planning_grid(scene, p, episode)?;
            self.path = astar(&grid, state.cell, target, UnknownPolicy::Traversable)?;
            self.since_plan = 0;
        }
        self.since_plan += 1;
        let action = self
            .path
            .as_ref()
            .and_then(|path| follow_path(state, path, turn_angle))
            .filter(|a| *a != Action::Stop);
        match action {
            Some(a) => Ok(Some(a)),
            None => {
                // No usable path: turn in place and replan next step.
                self.path = None;
                Ok(Some(Action::TurnRight))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geosem::embedding::{EmbeddingKind, SyntheticProvider};
    use crate::imagination::{IdentityBackend, OracleBackend};
    use crate::planner::step_kinematics;
    use crate::scene::tests_support::open_room;
    use crate::sensor::{apply_exterior_mask_in_place, raycast_fov, update_predicted_map_in_place, SensorConfig};

    fn grid(rows: &[&str]) -> PredictedMap {
        let h = rows.len();
        let w = rows[0].len();
        PredictedMap(Grid::from_fn(h, w, |c| match rows[c.row].as_bytes()[c.col] {
            b'.' => 0.0,
            b'#' => 1.0,
            _ => 0.5,
        }))
    }

    /// Brute-force classification plus union-find over 8-neighbours.
    fn frontier_oracle(p: &PredictedMap) -> Vec<Vec<Cell>> {
        let g = p.grid();
        let cells: Vec<Cell> = g
            .cells()
            .map(|(c, _)| c)
            .filter(|&c| {
                g[c] == 0.0
                    && [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .any(|&(dr, dc)| c.offset(dr, dc).and_then(|n| g.get(n)) == Some(&0.5))
            })
            .collect();
        let mut parent: Vec<usize> = (0..cells.len()).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for i in 0..cells.len() {
            for j in 0..i {
                if cells[i].row.abs_diff(cells[j].row) <= 1 && cells[i].col.abs_diff(cells[j].col) <= 1 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<Cell>> = Default::default();
        for i in 0..cells.len() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(cells[i]);
        }
        let mut out: Vec<Vec<Cell>> = groups.into_values().collect();
        for g in &mut out {
            g.sort();
        }
        if out.iter().any(|g| g.len() >= 3) {
            out.retain(|g| g.len() >= 3);
        }
        out.sort();
        out
    }

    #[test]
    fn fully_observed_has_no_frontiers() {
        let s = open_room(10, 10);
        assert!(detect_frontiers(&PredictedMap(s.occupancy.clone())).is_empty());
    }

    #[test]
    fn single_free_cell_is_a_frontier() {
        let mut p = PredictedMap::unknown(5, 5);
        p.0[Cell::new(2, 2)] = 0.0;
        let f = detect_frontiers(&p);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].centroid, Cell::new(2, 2));
    }

    #[test]
    fn half_observed_room_matches_oracle() {
        let p = grid(&[
            "##########",
            "#....?????",
            "#....?????",
            "#.....????",
            "#....?????",
            "##########",
        ]);
        let f = detect_frontiers(&p);
        let mut got: Vec<Vec<Cell>> = f.iter().map(|f| f.cells.clone()).collect();
        got.sort();
        assert_eq!(got, frontier_oracle(&p));
        assert_eq!(f.len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn frontiers_match_oracle(vals in proptest::collection::vec(0u8..3, 64)) {
            let p = PredictedMap(Grid::from_vec(8, 8, vals.iter().map(|&v| v as f32 / 2.0).collect()).unwrap());
            let mut got: Vec<Vec<Cell>> = detect_frontiers(&p).into_iter().map(|f| f.cells).collect();
            got.sort();
            proptest::prop_assert_eq!(got, frontier_oracle(&p));
        }
    }

    #[test]
    fn random_policy_is_uniform() {
        let f: Vec<Frontier> = (0..4)
            .map(|i| Frontier {
                cells: vec![Cell::new(i, 0)],
                centroid: Cell::new(i, 0),
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[policy_random(&f, &mut rng).unwrap().row] += 1;
        }
        // Chi-square with 3 degrees of freedom, 0.999 quantile 16.27.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(chi2 < 16.27, "{counts:?}");
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02);
        }
        assert_eq!(policy_random(&[], &mut rng), None);
    }

    #[test]
    fn greedy_uses_geodesic_distance() {
        // The left frontier is closer in a straight line but sits behind a wall.
        let p = grid(&[
            "?...#....",
            "?...#....",
            "....#...?",
            "#####...?",
            ".........",
        ]);
        let f = |c: Cell| Frontier {
            cells: vec![c],
            centroid: c,
        };
        let state = AgentState::new(Cell::new(2, 5), 0.0);
        let left = f(Cell::new(1, 1));
        let right = f(Cell::new(2, 7));
        assert_eq!(policy_greedy(&[left.clone(), right.clone()], &p.0, &state), Some(Cell::new(2, 7)));

        // Equal distances break ties by (row, col).
        let a = f(Cell::new(0, 5));
        let b = f(Cell::new(4, 5));
        assert_eq!(policy_greedy(&[b, a], &p.0, &state), Some(Cell::new(0, 5)));
        assert_eq!(policy_greedy(&[], &p.0, &state), None);
    }

    fn labeled_map(labels: &[(&str, Vec<Cell>)], provider: &SyntheticProvider, h: usize, w: usize) -> GeoSemMap {
        let mut m = GeoSemMap::new(h, w, provider.dim(), 0.25, (0.0, 0.0));
        for (label, cells) in labels {
            let e = provider.label_embedding(label);
            for c in cells {
                m.integrate_cell(*c, &e).unwrap();
            }
        }
        m
    }

    #[test]
    fn prior_matrix_prefers_goal_labeled_frontier() {
        let cats = vec!["bed".to_string(), "tv".to_string()];
        let provider = SyntheticProvider::for_categories(8, EmbeddingKind::Orthonormal, &cats).unwrap();
        let labels: Vec<String> = ["floor", "wall", "bed", "tv"].iter().map(|s| s.to_string()).collect();
        let prior = PriorMatrix::from_provider(&provider, &labels).unwrap();
        let near_bed = Frontier {
            cells: vec![Cell::new(2, 15)],
            centroid: Cell::new(2, 15),
        };
        let near_wall = Frontier {
            cells: vec![Cell::new(2, 3)],
            centroid: Cell::new(2, 3),
        };
        let geo = labeled_map(
            &[("bed", vec![Cell::new(2, 16), Cell::new(3, 16)]), ("wall", vec![Cell::new(2, 2), Cell::new(3, 2)])],
            &provider,
            6,
            20,
        );
        let p = Grid::filled(6, 20, 0.0);
        let state = AgentState::new(Cell::new(2, 4), 0.0);
        let goal = policy_prior_matrix(&[near_wall.clone(), near_bed.clone()], &geo, &provider, &prior, "bed", &p, &state).unwrap();
        assert_eq!(goal, Some(Cell::new(2, 15)));

        // Nothing observed: greedy fallback picks the nearer frontier.
        let empty = GeoSemMap::new(6, 20, 8, 0.25, (0.0, 0.0));
        let goal = policy_prior_matrix(&[near_wall, near_bed], &empty, &provider, &prior, "bed", &p, &state).unwrap();
        assert_eq!(goal, Some(Cell::new(2, 3)));
    }

    #[test]
    fn value_frontier_follows_query_semantics() {
        let cats = vec!["bed".to_string(), "tv".to_string()];
        let provider = SyntheticProvider::for_categories(8, EmbeddingKind::Orthonormal, &cats).unwrap();
        let q = QueryEmbedding::new("tv", provider.label_embedding("tv")).unwrap();
        let far = Frontier {
            cells: vec![Cell::new(2, 15)],
            centroid: Cell::new(2, 15),
        };
        let near = Frontier {
            cells: vec![Cell::new(2, 3)],
            centroid: Cell::new(2, 3),
        };
        let geo = labeled_map(&[("tv", vec![Cell::new(2, 17)]), ("bed", vec![Cell::new(2, 1)])], &provider, 6, 20);
        let p = Grid::filled(6, 20, 0.0);
        let state = AgentState::new(Cell::new(2, 4), 0.0);
        let fs = [near.clone(), far.clone()];
        assert_eq!(policy_value_frontier(&fs, &geo, &q, &p, &state), Some(Cell::new(2, 15)));
        let scaled = QueryEmbedding {
            query: "tv".into(),
            vector: q.vector.iter().map(|v| v * 7.0).collect(),
        };
        assert_eq!(policy_value_frontier(&fs, &geo, &scaled, &p, &state), Some(Cell::new(2, 15)));
        let empty = GeoSemMap::new(6, 20, 8, 0.25, (0.0, 0.0));
        assert_eq!(policy_value_frontier(&fs, &empty, &q, &p, &state), Some(Cell::new(2, 3)));
    }

    #[test]
    fn goal_visibility_rule() {
        let p = grid(&["?.#"]);
        assert!(!goal_visible(&p, Cell::new(0, 0)));
        assert!(goal_visible(&p, Cell::new(0, 1)));
        assert!(goal_visible(&p, Cell::new(0, 2)));
    }

    fn run_pointnav(scene: &Scene, agent: PointNavAgent, start: AgentState, waypoints: &[Cell]) -> Vec<Action> {
        let cfg = SensorConfig::default();
        let mut ctl = PointNavController::new(agent);
        let mut p = PredictedMap::unknown(scene.height(), scene.width());
        let mut state = start;
        let mut queue: VecDeque<Cell> = waypoints.iter().copied().collect();
        let mut trace = Vec::new();
        for _ in 0..3000 {
            let o = raycast_fov(scene, &state, &cfg);
            update_predicted_map_in_place(&mut p, &o, &scene.occupancy).unwrap();
            apply_exterior_mask_in_place(&mut p, &scene.interior).unwrap();
            let Some(a) = ctl.step(scene, &state, &p, &mut queue, cfg.turn_angle, "t").unwrap() else { break };
            trace.push(a);
            state = step_kinematics(&scene.occupancy, &state, a, cfg.turn_angle);
        }
        assert!(queue.is_empty(), "did not finish");
        trace
    }

    #[test]
    fn identity_backend_matches_vanilla_trace() {
        let s = crate::scene::generate_synthetic_scene(3, &Default::default()).unwrap();
        let wps = crate::scene::sample_waypoints(&s, 2, 3).unwrap();
        let start = AgentState::new(s.interior_free_cells()[0], 90.0);
        let a = run_pointnav(&s, PointNavAgent::Vanilla, start, &wps);
        let b = run_pointnav(&s, PointNavAgent::Imagination(Arc::new(IdentityBackend)), start, &wps);
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_agent_is_not_slower_on_walled_fixture() {
        // The straight line to the goal runs into a pocket open only to the
        // west; vanilla walks in and has to back out.
        let mut s = open_room(24, 40);
        let wall: Vec<(usize, usize)> = (5..=25).map(|c| (8, c)).chain((1..8).map(|r| (r, 25))).collect();
        s.set_wall_for_test(&wall);
        let start = AgentState::new(Cell::new(3, 3), 90.0);
        let goal = [Cell::new(3, 35)];
        let vanilla = run_pointnav(&s, PointNavAgent::Vanilla, start, &goal);
        let oracle = run_pointnav(&s, PointNavAgent::Imagination(Arc::new(OracleBackend::new(&s))), start, &goal);
        assert!(oracle.len() < vanilla.len(), "oracle {} vs vanilla {}", oracle.len(), vanilla.len());
    }
}
