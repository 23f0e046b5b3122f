//! Long-term goal extraction: similarity heatmap, thresholding, DBSCAN
//! outlier removal, silhouette model selection and a Gaussian mixture whose
//! nearest component becomes the goal.
//!
//! Points live in cell space as `(row, col)` vectors.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geosem::embedding::norm;
use crate::grid::{occ, Cell, Grid};
use crate::imagination::ImaginedMap;
use crate::strategies::Frontier;

pub type Point = Vector2<f64>;

pub fn cell_point(c: Cell) -> Point {
    Point::new(c.row as f64, c.col as f64)
}

/// Unit-norm text embedding together with its source query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEmbedding {
    pub query: String,
    pub vector: Vec<f32>,
}

impl QueryEmbedding {
    pub fn new(query: impl Into<String>, vector: Vec<f32>) -> Result<Self> {
        let n = norm(&vector);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("query embedding has zero norm".into()));
        }
        Ok(Self {
            query: query.into(),
            vector: vector.iter().map(|&v| (v as f64 / n) as f32).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalSelectConfig {
    pub tau: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub k_max: usize,
    pub silhouette_floor: f64,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Radius searched for a non-occupied cell when a zone mean is occupied.
    pub relocate_radius: usize,
    pub seed: u64,
}

impl Default for GoalSelectConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            eps: 3.0,
            min_pts: 5,
            k_max: 5,
            silhouette_floor: 0.25,
            restarts: 10,
            max_iters: 100,
            tol: 1e-5,
            relocate_radius: 5,
            seed: 0,
        }
    }
}

/// Cosine similarity per cell; `None` outside the predicted interior
/// (`interior_prob ≤ 0.5`) and on zero-norm cells.
pub fn similarity_heatmap(map: &ImaginedMap, q: &QueryEmbedding) -> Result<Grid<Option<f64>>> {
    if q.vector.len() != map.dim() {
        return Err(Error::Dimension(format!(
            "query has {} values, map has D = {}",
            q.vector.len(),
            map.dim()
        )));
    }
    let (h, w) = map.shape();
    Ok(Grid::from_fn(h, w, |c| {
        if map.interior_prob[c] <= 0.5 {
            return None;
        }
        crate::geosem::embedding::cosine(map.semantic_at(c), &q.vector)
    }))
}

/// Min-max normalizes valid scores and keeps cells at or above `tau`. A
/// constant heatmap normalizes to all ones.
pub fn normalize_threshold(heatmap: &Grid<Option<f64>>, tau: f64) -> Vec<Cell> {
    let valid = || heatmap.cells().filter_map(|(c, v)| v.map(|v| (c, v)));
    let (lo, hi) = valid().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Vec::new();
    }
    let span = hi - lo;
    valid()
        .filter(|&(_, v)| if span > 0.0 { (v - lo) / span >= tau } else { true })
        .map(|(c, _)| c)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dbscan {
    /// Cluster id per input point; `None` marks an outlier.
    pub labels: Vec<Option<usize>>,
    pub clusters: usize,
}

impl Dbscan {
    pub fn inliers<'a>(&'a self, points: &'a [Point]) -> impl Iterator<Item = Point> + 'a {
        points.iter().zip(&self.labels).filter(|(_, l)| l.is_some()).map(|(p, _)| *p)
    }
}

/// Density clustering; a point is core when at least `min_pts` points,
/// itself included, lie within `eps`.
pub fn dbscan(points: &[Point], eps: f64, min_pts: usize) -> Dbscan {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| (points[i] - points[j]).norm_squared() <= eps2).collect()
    };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = neighbours(i);
        if nb.len() < min_pts {
            continue;
        }
        let id = clusters;
        clusters += 1;
        labels[i] = Some(id);
        let mut queue = nb;
        while let Some(j) = queue.pop() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| labels[k].is_none() || !visited[k]));
            }
        }
    }
    Dbscan { labels, clusters }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Point>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn nearest_center(p: &Point, centers: &[Point]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(k, c)| (k, (p - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
}

fn kmeans_once(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    // k-means++ seeding.
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest_center(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (k, _) = nearest_center(p, &centers);
            if labels[i] != k {
                labels[i] = k;
                changed = true;
            }
        }
        let mut sums = vec![(Point::zeros(), 0usize); k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].0 += p;
            sums[l].1 += 1;
        }
        for (c, (s, n)) in centers.iter_mut().zip(&sums) {
            if *n > 0 {
                *c = s / *n as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| (p - centers[l]).norm_squared()).sum();
    KMeans {
        centers,
        labels,
        inertia,
    }
}

/// Best of `restarts` k-means++ runs by inertia.
pub fn kmeans(points: &[Point], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Mean silhouette. Points alone in their cluster score 0.
pub fn silhouette(points: &[Point], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += (points[i] - points[j]).norm();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

/// Number of clusters by mean silhouette over `k ∈ 2..=min(k_max, n−1)`.
/// Fewer than four points, or a best silhouette under the floor, gives 1.
pub fn select_k_silhouette(points: &[Point], config: &GoalSelectConfig) -> usize {
    let n = points.len();
    if n < 4 {
        return 1;
    }
    let mut best = (1usize, f64::NEG_INFINITY);
    for k in 2..=config.k_max.min(n - 1) {
        let km = kmeans(points, k, config.restarts, config.seed).expect("k <= n");
        let s = silhouette(points, &km.labels, k);
        if s > best.1 {
            best = (k, s);
        }
    }
    if best.1 < config.silhouette_floor {
        1
    } else {
        best.0
    }
}

/// One Gaussian component in cell space.
#[derive(Clone, Debug, PartialEq)]
pub struct Zone {
    pub mean: Point,
    pub covariance: Matrix2<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateZones {
    pub zones: Vec<Zone>,
}

impl CandidateZones {
    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// Mixture log-density at `p`.
    pub fn log_density(&self, p: &Point) -> f64 {
        log_sum_exp(self.zones.iter().map(|z| z.weight.ln() + log_gaussian(p, &z.mean, &z.covariance)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub zones: CandidateZones,
    /// Total log-likelihood before the first and after every EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Clamps eigenvalues from below so the matrix stays positive definite.
fn floor_covariance(c: Matrix2<f64>) -> Matrix2<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= COVARIANCE_FLOOR) {
        return sym;
    }
    let vals = eig.eigenvalues.map(|l| l.max(COVARIANCE_FLOOR));
    eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn log_gaussian(p: &Point, mean: &Point, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    let inv = cov.try_inverse().unwrap_or_else(Matrix2::identity);
    let d = p - mean;
    -0.5 * (d.dot(&(inv * d)) + det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln())
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn total_log_likelihood(points: &[Point], zones: &CandidateZones) -> f64 {
    points.iter().map(|p| zones.log_density(p)).sum()
}

/// Expectation-maximisation with full covariances, initialised from k-means.
/// Covariances are floored at `1e-6·I` in the eigenvalue sense.
pub fn fit_gmm(points: &[Point], k: usize, config: &GoalSelectConfig) -> Result<GmmFit> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {k} components to {} points",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let km = kmeans(points, k, config.restarts, config.seed)?;
    let mut zones = CandidateZones {
        zones: (0..k)
            .map(|c| {
                let members: Vec<&Point> = points.iter().zip(&km.labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                let m = members.len().max(1) as f64;
                let cov = members
                    .iter()
                    .map(|p| (*p - km.centers[c]) * (*p - km.centers[c]).transpose())
                    .fold(Matrix2::zeros(), |a, b| a + b)
                    / m;
                Zone {
                    mean: km.centers[c],
                    covariance: floor_covariance(cov),
                    weight: members.len() as f64 / n,
                }
            })
            .collect(),
    };
    let mut lls = vec![total_log_likelihood(points, &zones)];
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        // E-step.
        let resp: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                let logs: Vec<f64> = zones
                    .zones
                    .iter()
                    .map(|z| z.weight.ln() + log_gaussian(p, &z.mean, &z.covariance))
                    .collect();
                let norm = log_sum_exp(logs.iter().copied());
                logs.iter().map(|l| (l - norm).exp()).collect()
            })
            .collect();
        // M-step.
        let mut next = Vec::with_capacity(k);
        for (c, old) in zones.zones.iter().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= f64::EPSILON {
                // Empty component: keep it with negligible weight.
                next.push(Zone {
                    weight: 0.0,
                    ..old.clone()
                });
                continue;
            }
            let mean = points.iter().zip(&resp).map(|(p, r)| p * r[c]).fold(Point::zeros(), |a, b| a + b) / nk;
            let cov = points
                .iter()
                .zip(&resp)
                .map(|(p, r)| (p - mean) * (p - mean).transpose() * r[c])
                .fold(Matrix2::zeros(), |a, b| a + b)
                / nk;
            next.push(Zone {
                mean,
                covariance: floor_covariance(cov),
                weight: nk / n,
            });
        }
        zones.zones = next;
        iterations += 1;
        let ll = total_log_likelihood(points, &zones);
        let prev = *lls.last().unwrap();
        lls.push(ll);
        if (ll - prev).abs() <= config.tol * prev.abs().max(1.0) {
            break;
        }
    }
    zones.zones.retain(|z| z.weight > 0.0);
    Ok(GmmFit {
        zones,
        log_likelihoods: lls,
        iterations,
    })
}

/// Nearest zone mean (Euclidean) rounded into the grid; if that cell is
/// occupied in `belief`, the closest non-occupied cell within the relocate
/// radius. With no zones, the nearest frontier centroid.
pub fn choose_goal(
    zones: &CandidateZones,
    agent: Cell,
    belief: &Grid<f32>,
    fallback: &[Frontier],
    relocate_radius: usize,
) -> Option<Cell> {
    let a = cell_point(agent);
    let mut order: Vec<&Zone> = zones.zones.iter().collect();
    order.sort_by(|x, y| (x.mean - a).norm().total_cmp(&(y.mean - a).norm()));
    for z in order {
        let row = z.mean.x.round().clamp(0.0, (belief.height() - 1) as f64) as usize;
        let col = z.mean.y.round().clamp(0.0, (belief.width() - 1) as f64) as usize;
        if let Some(c) = nearest_unoccupied(belief, Cell::new(row, col), relocate_radius) {
            return Some(c);
        }
    }
    fallback
        .iter()
        .map(|f| f.centroid)
        .min_by(|x, y| x.euclidean(agent).total_cmp(&y.euclidean(agent)).then(x.cmp(y)))
}

fn nearest_unoccupied(belief: &Grid<f32>, c: Cell, radius: usize) -> Option<Cell> {
    if !occ::is_occupied(belief[c]) {
        return Some(c);
    }
    let r = radius as isize;
    let mut best: Option<(f64, Cell)> = None;
    for dr in -r..=r {
        for dc in -r..=r {
            let d = ((dr * dr + dc * dc) as f64).sqrt();
            if d > radius as f64 {
                continue;
            }
            if let Some(n) = c.offset(dr, dc).filter(|n| belief.in_bounds(*n)) {
                if !occ::is_occupied(belief[n]) && best.is_none_or(|(bd, bc)| (d, n) < (bd, bc)) {
                    best = Some((d, n));
                }
            }
        }
    }
    best.map(|(_, n)| n)
}

/// Where a goal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSource {
    Zones,
    Frontier,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalSelection {
    pub goal: Option<Cell>,
    pub source: GoalSource,
    pub candidates: usize,
    pub k: usize,
    pub zones: CandidateZones,
}

/// Full pipeline from an imagined map and a query to a goal cell.
pub fn select_goal(
    map: &ImaginedMap,
    query: &QueryEmbedding,
    agent: Cell,
    belief: &Grid<f32>,
    fallback: &[Frontier],
    config: &GoalSelectConfig,
) -> Result<GoalSelection> {
    let heat = similarity_heatmap(map, query)?;
    let candidates = normalize_threshold(&heat, config.tau);
    let pts: Vec<Point> = candidates.iter().map(|&c| cell_point(c)).collect();
    let db = dbscan(&pts, config.eps, config.min_pts);
    let inliers: Vec<Point> = db.inliers(&pts).collect();
    let (k, zones) = if inliers.is_empty() {
        (0, CandidateZones::default())
    } else {
        let k = select_k_silhouette(&inliers, config);
        (k, fit_gmm(&inliers, k, config)?.zones)
    };
    let goal = choose_goal(&zones, agent, belief, fallback, config.relocate_radius);
    let source = match goal {
        None => GoalSource::None,
        Some(_) if !zones.is_empty() => GoalSource::Zones,
        Some(_) => GoalSource::Frontier,
    };
    Ok(GoalSelection {
        goal,
        source,
        candidates: candidates.len(),
        k,
        zones,
    })
}

/// Centre of `cell` in world meters: `origin + (col + 0.5, row + 0.5)·res`.
pub fn grid_to_world(cell: Cell, shape: (usize, usize), resolution: f64, origin: (f64, f64)) -> Result<(f64, f64)> {
    if cell.row >= shape.0 || cell.col >= shape.1 {
        return Err(Error::OutOfBounds(cell));
    }
    Ok((
        origin.0 + (cell.col as f64 + 0.5) * resolution,
        origin.1 + (cell.row as f64 + 0.5) * resolution,
    ))
}

pub fn world_to_grid(xy: (f64, f64), shape: (usize, usize), resolution: f64, origin: (f64, f64)) -> Option<Cell> {
    let col = ((xy.0 - origin.0) / resolution).floor();
    let row = ((xy.1 - origin.1) / resolution).floor();
    if col < 0.0 || row < 0.0 || row >= shape.0 as f64 || col >= shape.1 as f64 {
        return None;
    }
    Some(Cell::new(row as usize, col as usize))
}
