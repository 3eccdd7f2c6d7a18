//! Scenario construction: seeded mazes, a grid planner for reference paths,
//! the lane-change and moose-test layouts, and the JSON scenario format.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, GeometryError, ObstacleSet};
use crate::pipeline::CesConfig;
use crate::stretch::StretchError;
use crate::{BubbleParams, Point, Polygon, ReferencePath, VehicleParams, Workspace};

/// Occupancy grid resolution (m).
pub const GRID_CELL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{what} ({x}, {y}) is in collision")]
    Blocked { what: &'static str, x: f64, y: f64 },
    #[error("goal unreachable from start")]
    Unreachable,
    #[error("maze generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("lane fully blocked at x = {0}")]
    LaneBlocked(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Path(#[from] StretchError),
}

impl ScenarioError {
    /// True for errors caused by the scene itself rather than the input
    /// format (no path, blocked start or goal).
    pub fn is_infeasible(&self) -> bool {
        matches!(self, ScenarioError::Unreachable | ScenarioError::Blocked { .. } | ScenarioError::LaneBlocked(_) | ScenarioError::GenerationFailed(_))
    }
}

// ---------------------------------------------------------------- grid

/// 8-connected occupancy grid over the workspace bounds. A cell is free when
/// its center has clearance above `inflation`.
#[derive(Debug, Clone)]
pub struct Grid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

impl Grid {
    pub fn new(w: &Workspace, cell: f64, inflation: f64) -> Self {
        let b = w.bounds();
        let nx = (b.width() / cell).floor().max(1.0) as usize;
        let ny = (b.height() / cell).floor().max(1.0) as usize;
        let origin = b.min;
        let mut free = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let c = Point::new(origin.x + (i as f64 + 0.5) * cell, origin.y + (j as f64 + 0.5) * cell);
                free[j * nx + i] = w.distance_to_obstacles(c).map(|d| d > inflation).unwrap_or(false);
            }
        }
        Grid { origin, cell, nx, ny, free }
    }

    /// Grid with obstacles inflated by half the cell diagonal.
    pub fn standard(w: &Workspace) -> Self {
        Grid::new(w, GRID_CELL, 0.5 * GRID_CELL * std::f64::consts::SQRT_2)
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let i = ((p.x - self.origin.x) / self.cell).floor();
        let j = ((p.y - self.origin.y) / self.cell).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new(self.origin.x + (i as f64 + 0.5) * self.cell, self.origin.y + (j as f64 + 0.5) * self.cell)
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.free[j * self.nx + i]
    }

    pub fn free_cells(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Shortest 8-connected cell path (A*, octile heuristic), as cell
    /// centers. Diagonal moves must not cut a blocked corner.
    pub fn shortest_path(&self, from: (usize, usize), to: (usize, usize)) -> Option<Vec<Point>> {
        #[derive(PartialEq)]
        struct Node(f64, usize);
        impl Eq for Node {}
        impl Ord for Node {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Node {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        if !self.is_free(from.0, from.1) || !self.is_free(to.0, to.1) {
            return None;
        }
        let nx = self.nx;
        let idx = |i: usize, j: usize| j * nx + i;
        let h = |i: usize, j: usize| {
            let dx = (i as f64 - to.0 as f64).abs();
            let dy = (j as f64 - to.1 as f64).abs();
            dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
        };
        let mut g = vec![f64::INFINITY; self.free.len()];
        let mut parent = vec![usize::MAX; self.free.len()];
        let mut heap = BinaryHeap::new();
        let s = idx(from.0, from.1);
        g[s] = 0.0;
        heap.push(Node(h(from.0, from.1), s));
        let goal = idx(to.0, to.1);
        while let Some(Node(f, u)) = heap.pop() {
            let (ui, uj) = (u % nx, u / nx);
            if f > g[u] + h(ui, uj) + 1e-9 {
                continue;
            }
            if u == goal {
                break;
            }
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (vi, vj) = (ui as i64 + di, uj as i64 + dj);
                    if vi < 0 || vj < 0 || vi >= nx as i64 || vj >= self.ny as i64 {
                        continue;
                    }
                    let (vi, vj) = (vi as usize, vj as usize);
                    if !self.is_free(vi, vj) {
                        continue;
                    }
                    if di != 0 && dj != 0 && !(self.is_free(vi, uj) && self.is_free(ui, vj)) {
                        continue;
                    }
                    let step = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let v = idx(vi, vj);
                    let cand = g[u] + step;
                    if cand < g[v] {
                        g[v] = cand;
                        parent[v] = u;
                        heap.push(Node(cand + h(vi, vj), v));
                    }
                }
            }
        }
        if !g[goal].is_finite() {
            return None;
        }
        let mut cells = vec![goal];
        while let Some(&u) = cells.last() {
            if u == s {
                break;
            }
            cells.push(parent[u]);
        }
        cells.reverse();
        Some(cells.into_iter().map(|u| self.center(u % nx, u / nx)).collect())
    }
}

// ------------------------------------------------------------ polylines

pub fn polyline_length(p: &[Point]) -> f64 {
    p.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// `n` points equally spaced by arc length along the polyline.
pub fn resample(path: &[Point], n: usize) -> Vec<Point> {
    assert!(n >= 2 && path.len() >= 2);
    let cum: Vec<f64> = std::iter::once(0.0)
        .chain(path.windows(2).scan(0.0, |acc, w| {
            *acc += w[0].distance(w[1]);
            Some(*acc)
        }))
        .collect();
    let total = *cum.last().expect("non-empty");
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(path[seg].lerp(path[seg + 1], t));
    }
    out[n - 1] = *path.last().expect("non-empty");
    out
}

/// Resamples to the point count whose spacing is closest to `spacing`.
pub fn resample_spacing(path: &[Point], spacing: f64) -> Vec<Point> {
    let n = ((polyline_length(path) / spacing).round() as usize).max(3) + 1;
    resample(path, n)
}

/// Drops collinear and repeated vertices.
fn simplify(path: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(path.len());
    for &p in path {
        if out.last().is_some_and(|q| q.distance(p) < 1e-12) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            if (b - a).cross(p - b).abs() < 1e-12 && (b - a).dot(p - b) > 0.0 {
                out.pop();
            }
        }
        out.push(p);
    }
    out
}

/// Greedy line-of-sight shortcutting: from each kept vertex jump to the
/// farthest later vertex reachable by a segment with at least `clearance`.
pub fn shortcut(w: &Workspace, path: &[Point], clearance: f64) -> Vec<Point> {
    let mut out = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && w.segment_clearance(path[i], path[j]) < clearance {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

/// Replaces each corner by a circular fillet of radius up to `radius`,
/// shrinking it until the arc keeps `clearance` from obstacles. Fillets
/// use at most half of each adjacent leg (the whole leg at the ends).
pub fn round_corners(w: &Workspace, path: &[Point], radius: f64, clearance: f64) -> Vec<Point> {
    let m = path.len();
    if m < 3 || radius <= 0.0 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    for i in 1..m - 1 {
        let (a, v, b) = (path[i - 1], path[i], path[i + 1]);
        let (u0, u1) = match ((v - a).normalized(), (b - v).normalized()) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                out.push(v);
                continue;
            }
        };
        let phi = u0.cross(u1).atan2(u0.dot(u1));
        if phi.abs() < 1e-9 {
            out.push(v);
            continue;
        }
        let half = (phi.abs() / 2.0).tan();
        let share_in = if i == 1 { 1.0 } else { 0.5 };
        let share_out = if i == m - 2 { 1.0 } else { 0.5 };
        let t_max = (share_in * v.distance(a)).min(share_out * v.distance(b));
        let mut r = radius.min(t_max / half);
        let mut arc = None;
        while r > 0.05 {
            let t = r * half;
            let (p0, p1) = (v - u0 * t, v + u1 * t);
            let normal = if phi > 0.0 { u0.perp() } else { -u0.perp() };
            let c = p0 + normal * r;
            let steps = ((phi.abs() * r / 0.05).ceil() as usize).clamp(4, 400);
            let a0 = (p0 - c).y.atan2((p0 - c).x);
            let pts: Vec<Point> = (0..=steps)
                .map(|s| {
                    let ang = a0 + phi * s as f64 / steps as f64;
                    Point::new(c.x + r * ang.cos(), c.y + r * ang.sin())
                })
                .collect();
            let ok = pts.windows(2).all(|s| w.segment_clearance(s[0], s[1]) >= clearance);
            if ok {
                let mut pts = pts;
                pts[0] = p0;
                *pts.last_mut().expect("non-empty") = p1;
                arc = Some(pts);
                break;
            }
            r *= 0.8;
        }
        match arc {
            Some(pts) => out.extend(pts),
            None => out.push(v),
        }
    }
    out.push(path[m - 1]);
    simplify(&out)
}

fn check_free(w: &Workspace, what: &'static str, p: Point) -> Result<(), ScenarioError> {
    if w.point_in_collision(p) {
        return Err(ScenarioError::Blocked { what, x: p.x, y: p.y });
    }
    Ok(())
}

/// Shortest grid path from `start` to `goal`, with the exact endpoints
/// swapped in for the first and last cell centers.
pub fn grid_path(w: &Workspace, start: Point, goal: Point) -> Result<Vec<Point>, ScenarioError> {
    grid_path_with(w, start, goal, SHAPING_CLEARANCE)
}

/// [`grid_path`] with cells free only beyond `clearance` from obstacles.
pub fn grid_path_with(w: &Workspace, start: Point, goal: Point, clearance: f64) -> Result<Vec<Point>, ScenarioError> {
    check_free(w, "start", start)?;
    check_free(w, "goal", goal)?;
    let grid = Grid::new(w, GRID_CELL, clearance);
    let (from, to) = match (grid.cell_of(start), grid.cell_of(goal)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ScenarioError::Unreachable),
    };
    let mut cells = grid.shortest_path(from, to).ok_or(ScenarioError::Unreachable)?;
    cells[0] = start;
    let last = cells.len() - 1;
    cells[last] = goal;
    if cells.len() == 1 {
        cells.push(goal);
    }
    Ok(simplify(&cells))
}

/// Grid shortest path resampled to about `spacing` between waypoints.
pub fn reference_from_grid(w: &Workspace, start: Point, goal: Point, spacing: f64) -> Result<ReferencePath, ScenarioError> {
    if !(spacing > 0.0) {
        return Err(ScenarioError::Invalid("spacing must be positive".into()));
    }
    let path = grid_path(w, start, goal)?;
    finish_reference(w, resample_spacing(&path, spacing))
}

fn finish_reference(w: &Workspace, pts: Vec<Point>) -> Result<ReferencePath, ScenarioError> {
    for &p in &pts {
        check_free(w, "reference waypoint", p)?;
    }
    Ok(ReferencePath::new(pts)?)
}

// ---------------------------------------------------------------- mazes

/// Random rectangle maze with a shaped grid-planner reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeSpec {
    /// `[xmin, ymin, xmax, ymax]`.
    pub bounds: [f64; 4],
    /// Target fraction of the area covered by obstacles.
    pub coverage: f64,
    pub side_min: f64,
    pub side_max: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Obstacles keep at least this distance from start and goal.
    pub endpoint_clearance: f64,
    /// Reference waypoint count.
    pub waypoints: usize,
    /// Largest corner fillet radius of the reference (0 keeps corners).
    pub turn_radius: f64,
    /// Preferred obstacle clearance of the reference. The planner steps it
    /// down until start and goal connect.
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for MazeSpec {
    fn default() -> Self {
        MazeSpec {
            bounds: [0.0, 0.0, 100.0, 100.0],
            coverage: 0.5,
            side_min: 2.0,
            side_max: 15.0,
            start: [5.0, 5.0],
            goal: [95.0, 95.0],
            endpoint_clearance: 2.0,
            waypoints: 257,
            turn_radius: 100.0,
            clearance: 3.0,
            max_attempts: 50,
        }
    }
}

/// Area of a union of axis-aligned rectangles (coordinate compression).
pub fn union_area(rects: &[Aabb<f64>]) -> f64 {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.min.x, r.max.x]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let mut spans: Vec<(f64, f64)> = rects.iter().filter(|r| r.min.x <= x0 && r.max.x >= x1).map(|r| (r.min.y, r.max.y)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (a, b) in spans {
            cur = match cur {
                Some((c0, c1)) if a <= c1 => Some((c0, c1.max(b))),
                Some((c0, c1)) => {
                    covered += c1 - c0;
                    Some((a, b))
                }
                None => Some((a, b)),
            };
        }
        if let Some((c0, c1)) = cur {
            covered += c1 - c0;
        }
        area += covered * (x1 - x0);
    }
    area
}

fn mix_seed(seed: u64, attempt: u64) -> u64 {
    // splitmix64 step so retries do not overlap neighbouring seeds
    let mut z = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn maze_bounds(spec: &MazeSpec) -> Result<Aabb<f64>, ScenarioError> {
    let [x0, y0, x1, y1] = spec.bounds;
    Ok(Aabb::new(Point::new(x0, y0), Point::new(x1, y1))?)
}

fn sample_rectangles(spec: &MazeSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Aabb<f64>>, ScenarioError> {
    let b = maze_bounds(spec)?;
    let total = b.area();
    let (lo, hi) = (spec.coverage * 0.95, spec.coverage * 1.05);
    let start = Point::new(spec.start[0], spec.start[1]);
    let goal = Point::new(spec.goal[0], spec.goal[1]);
    let mut rects: Vec<Aabb<f64>> = Vec::new();
    let mut covered = 0.0;
    let mut rejects = 0;
    while covered / total < spec.coverage && rejects < 10_000 {
        let wdt = rng.gen_range(spec.side_min..=spec.side_max);
        let hgt = rng.gen_range(spec.side_min..=spec.side_max);
        let x = rng.gen_range(b.min.x..b.max.x - wdt);
        let y = rng.gen_range(b.min.y..b.max.y - hgt);
        let r = Aabb::new(Point::new(x, y), Point::new(x + wdt, y + hgt))?;
        if r.distance_outside(start) < spec.endpoint_clearance || r.distance_outside(goal) < spec.endpoint_clearance {
            rejects += 1;
            continue;
        }
        rects.push(r);
        let c = union_area(&rects);
        if c / total > hi {
            rects.pop();
            rejects += 1;
            continue;
        }
        covered = c;
    }
    if covered / total < lo {
        return Err(ScenarioError::GenerationFailed(1));
    }
    Ok(rects)
}

fn rect_workspace(bounds: Aabb<f64>, rects: &[Aabb<f64>]) -> Result<Workspace, ScenarioError> {
    let obstacles = rects.iter().map(|r| Polygon::rectangle(r.min, r.max)).collect::<Result<Vec<_>, _>>()?;
    Ok(Workspace::new(bounds, ObstacleSet::new(obstacles)))
}

/// Bookkeeping about how a scenario was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    pub attempts: usize,
    pub coverage: Option<f64>,
    pub obstacle_count: usize,
    /// Length of the raw grid path before shaping.
    pub planner_length: Option<f64>,
    /// Obstacle clearance the grid path was planned with.
    pub planner_clearance: Option<f64>,
}

/// Seeded maze whose start and goal are connected on the occupancy grid.
/// Failed attempts are reseeded deterministically.
pub fn generate_maze(spec: &MazeSpec, seed: u64) -> Result<(Workspace, Vec<Point>, Provenance), ScenarioError> {
    if !(spec.coverage >= 0.0 && spec.coverage < 0.6) {
        return Err(ScenarioError::Invalid(format!("coverage {} outside [0, 0.6)", spec.coverage)));
    }
    if !(spec.side_min > 0.0 && spec.side_min <= spec.side_max) {
        return Err(ScenarioError::Invalid("need 0 < side_min <= side_max".into()));
    }
    let bounds = maze_bounds(spec)?;
    let start = Point::new(spec.start[0], spec.start[1]);
    let goal = Point::new(spec.goal[0], spec.goal[1]);
    for attempt in 0..spec.max_attempts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, attempt as u64));
        let rects = if spec.coverage == 0.0 {
            Vec::new()
        } else {
            match sample_rectangles(spec, &mut rng) {
                Ok(r) => r,
                Err(_) => continue,
            }
        };
        let w = rect_workspace(bounds, &rects)?;
        match grid_path(&w, start, goal) {
            Ok(path) => {
                let prov = Provenance {
                    generator: "maze".into(),
                    seed: Some(seed),
                    attempts: attempt + 1,
                    coverage: Some(union_area(&rects) / bounds.area()),
                    obstacle_count: rects.len(),
                    planner_length: Some(polyline_length(&path)),
                    planner_clearance: Some(SHAPING_CLEARANCE),
                };
                return Ok((w, path, prov));
            }
            Err(ScenarioError::Unreachable) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ScenarioError::GenerationFailed(spec.max_attempts))
}

/// Clearance kept by the shaped maze reference.
const SHAPING_CLEARANCE: f64 = 0.5 * GRID_CELL * std::f64::consts::SQRT_2;

/// Clearances tried by the maze planner, from `preferred` down to the
/// grid minimum.
fn clearance_ladder(preferred: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut c = preferred;
    while c > SHAPING_CLEARANCE {
        out.push(c);
        c *= 0.75;
    }
    out.push(SHAPING_CLEARANCE);
    out
}

/// Maze plus reference: grid path at the largest workable clearance,
/// line-of-sight shortcuts, corner fillets, then uniform resampling.
pub fn maze_scenario(spec: &MazeSpec, seed: u64) -> Result<GeneratedScenario, ScenarioError> {
    let (w, mut path, mut provenance) = generate_maze(spec, seed)?;
    let start = Point::new(spec.start[0], spec.start[1]);
    let goal = Point::new(spec.goal[0], spec.goal[1]);
    let mut clearance = SHAPING_CLEARANCE;
    for c in clearance_ladder(spec.clearance) {
        if c == SHAPING_CLEARANCE {
            break;
        }
        if let Ok(p) = grid_path_with(&w, start, goal, c) {
            path = p;
            clearance = c;
            break;
        }
    }
    provenance.planner_clearance = Some(clearance);
    provenance.planner_length = Some(polyline_length(&path));
    let short = shortcut(&w, &path, clearance);
    let round = round_corners(&w, &short, spec.turn_radius, 0.5 * clearance);
    let reference = finish_reference(&w, resample(&round, spec.waypoints.max(4)))?;
    Ok(GeneratedScenario { workspace: w, reference, provenance, vehicle: None, preset: CesPreset::default() })
}

// ------------------------------------------------------------ lane change

/// Straight road with rectangular obstacles; the reference is the midline
/// of the free interval at each station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneSpec {
    pub length: f64,
    pub width: f64,
    /// `[xmin, ymin, xmax, ymax]` per obstacle.
    pub obstacles: Vec<[f64; 4]>,
    pub spacing: f64,
}

impl Default for LaneSpec {
    fn default() -> Self {
        LaneSpec { length: 50.0, width: 7.0, obstacles: vec![[12.0, 0.0, 18.0, 3.5], [32.0, 3.5, 38.0, 7.0]], spacing: 0.5 }
    }
}

/// Largest free interval of `[lo, hi]` once `blocked` intervals are removed.
fn widest_gap(lo: f64, hi: f64, mut blocked: Vec<(f64, f64)>) -> Option<(f64, f64)> {
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    let mut cur = lo;
    for (a, b) in blocked.into_iter().chain(std::iter::once((hi, hi))) {
        let (a, b) = (a.max(lo), b.min(hi));
        if a > cur && best.is_none_or(|(x, y)| a - cur > y - x) {
            best = Some((cur, a));
        }
        cur = cur.max(b);
    }
    best
}

pub fn lane_change_centerline(spec: &LaneSpec) -> Result<GeneratedScenario, ScenarioError> {
    if !(spec.length > 0.0 && spec.width > 0.0 && spec.spacing > 0.0) {
        return Err(ScenarioError::Invalid("lane length, width and spacing must be positive".into()));
    }
    let bounds = Aabb::new(Point::zero(), Point::new(spec.length, spec.width))?;
    let rects = spec.obstacles.iter().map(|o| Aabb::new(Point::new(o[0], o[1]), Point::new(o[2], o[3]))).collect::<Result<Vec<_>, _>>()?;
    let w = rect_workspace(bounds, &rects)?;
    let stations = (spec.length / spec.spacing).round() as usize;
    let mut pts = Vec::with_capacity(stations + 1);
    for s in 0..=stations {
        // stay a hair inside the end walls
        let x = (s as f64 * spec.length / stations as f64).clamp(1e-3, spec.length - 1e-3);
        let blocked = rects.iter().filter(|r| r.min.x <= x && r.max.x >= x).map(|r| (r.min.y, r.max.y)).collect();
        let (a, b) = widest_gap(0.0, spec.width, blocked).ok_or(ScenarioError::LaneBlocked(x))?;
        pts.push(Point::new(x, 0.5 * (a + b)));
    }
    let pts = simplify(&pts);
    let reference = finish_reference(&w, resample_spacing(&pts, spec.spacing))?;
    let provenance = Provenance { generator: "lane_change".into(), obstacle_count: rects.len(), ..Default::default() };
    Ok(GeneratedScenario { workspace: w, reference, provenance, vehicle: Some(lane_change_vehicle()), preset: CesPreset::default() })
}

/// Vehicle of the lane-change experiment.
pub fn lane_change_vehicle() -> VehicleParams {
    let (m, mu, g) = (1725.0, 0.5, 9.81);
    VehicleParams { mass_kg: m, mu, g, u_long_max_n: 0.3 * mu * m * g, r_min_m: 5.0 }
}

/// Vehicle of the maze experiments.
pub fn maze_vehicle() -> VehicleParams {
    let (m, mu, g) = (833.0, 0.8, 9.81);
    VehicleParams { mass_kg: m, mu, g, u_long_max_n: 0.5 * mu * m * g, r_min_m: 4.0 }
}

// -------------------------------------------------------------- moose test

/// Constant speed used by the moose test (m/s).
pub const MOOSE_SPEED: f64 = 5.0;

/// S-turn between two offset blocks. The layout is symmetric under a
/// half turn about `(30, 6)`.
pub fn moose_test_scenario() -> GeneratedScenario {
    let bounds = Aabb::new(Point::zero(), Point::new(60.0, 12.0)).expect("valid bounds");
    let rects =
        [Aabb::new(Point::new(0.0, 5.0), Point::new(20.0, 12.0)).expect("valid"), Aabb::new(Point::new(40.0, 0.0), Point::new(60.0, 7.0)).expect("valid")];
    let w = rect_workspace(bounds, &rects).expect("valid rectangles");
    let corners = [Point::new(1.0, 3.0), Point::new(20.0, 3.0), Point::new(40.0, 9.0), Point::new(59.0, 9.0)];
    let reference = finish_reference(&w, resample_spacing(&corners, 0.5)).expect("moose reference is free");
    let vehicle = VehicleParams { r_min_m: 5.0, ..maze_vehicle() };
    GeneratedScenario {
        workspace: w,
        reference,
        provenance: Provenance { generator: "moose".into(), obstacle_count: 2, ..Default::default() },
        vehicle: Some(vehicle),
        preset: CesPreset { constant_speed: Some(MOOSE_SPEED) },
    }
}

// ------------------------------------------------------------ file format

/// Configuration defaults a generator suggests; file values win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CesPreset {
    pub constant_speed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub workspace: Workspace,
    pub reference: ReferencePath,
    pub provenance: Provenance,
    pub vehicle: Option<VehicleParams>,
    pub preset: CesPreset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub bounds: [f64; 4],
    #[serde(default)]
    pub obstacles: Vec<Vec<[f64; 2]>>,
}

impl WorkspaceSpec {
    pub fn build(&self) -> Result<Workspace, ScenarioError> {
        let [x0, y0, x1, y1] = self.bounds;
        let bounds = Aabb::new(Point::new(x0, y0), Point::new(x1, y1))?;
        let obstacles = self.obstacles.iter().map(|poly| Polygon::new(poly.iter().map(|&p| Point::from(p)).collect())).collect::<Result<Vec<_>, _>>()?;
        Ok(Workspace::new(bounds, ObstacleSet::new(obstacles)))
    }

    pub fn from_workspace(w: &Workspace) -> Self {
        let b = w.bounds();
        WorkspaceSpec {
            bounds: [b.min.x, b.min.y, b.max.x, b.max.y],
            obstacles: w.obstacles().iter().map(|p| p.vertices().iter().map(|&v| v.into()).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    Maze(MazeSpec),
    /// Grid planner on the file's workspace.
    Grid {
        start: [f64; 2],
        goal: [f64; 2],
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    LaneChange(LaneSpec),
    Moose,
}

fn default_spacing() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSpec {
    Waypoints(Vec<[f64; 2]>),
    Generator(GeneratorSpec),
}

/// The `ces` section; absent keys take the pipeline defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CesSection {
    pub r_l: Option<f64>,
    pub r_u: Option<f64>,
    pub max_iterations: Option<usize>,
    pub timeout_s: Option<f64>,
    pub constant_speed: Option<bool>,
    /// Speed used when `constant_speed` is on (m/s).
    pub constant_speed_value: Option<f64>,
    pub time_tolerance: Option<f64>,
    pub v_start: Option<f64>,
    pub v_end: Option<f64>,
    pub speed_first: Option<bool>,
    pub feas_tol: Option<f64>,
    pub opt_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub workspace: Option<WorkspaceSpec>,
    pub vehicle: VehicleParams,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub ces: CesSection,
}

/// A fully resolved scenario, ready for [`crate::pipeline::run_ces`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub workspace: Workspace,
    pub reference: ReferencePath,
    pub config: CesConfig,
    pub provenance: Provenance,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let given = self.workspace.as_ref().map(WorkspaceSpec::build).transpose()?;
        let (generated, seed) = match &self.reference {
            ReferenceSpec::Waypoints(pts) => {
                let w = given.clone().ok_or_else(|| ScenarioError::Invalid("explicit waypoints need a workspace".into()))?;
                let reference = ReferencePath::new(pts.iter().map(|&p| Point::from(p)).collect())?;
                let provenance = Provenance { generator: "file".into(), obstacle_count: w.obstacles().len(), ..Default::default() };
                (GeneratedScenario { workspace: w, reference, provenance, vehicle: None, preset: CesPreset::default() }, None)
            }
            ReferenceSpec::Generator(g) => {
                let sc = match &g.kind {
                    GeneratorKind::Maze(spec) => {
                        let mut spec = spec.clone();
                        if let Some(w) = &self.workspace {
                            spec.bounds = w.bounds;
                        }
                        maze_scenario(&spec, g.seed)?
                    }
                    GeneratorKind::Grid { start, goal, spacing } => {
                        let w = given.clone().ok_or_else(|| ScenarioError::Invalid("grid generator needs a workspace".into()))?;
                        let reference = reference_from_grid(&w, Point::from(*start), Point::from(*goal), *spacing)?;
                        let provenance = Provenance { generator: "grid".into(), obstacle_count: w.obstacles().len(), ..Default::default() };
                        GeneratedScenario { workspace: w, reference, provenance, vehicle: None, preset: CesPreset::default() }
                    }
                    GeneratorKind::LaneChange(spec) => lane_change_centerline(spec)?,
                    GeneratorKind::Moose => moose_test_scenario(),
                };
                (sc, Some(g.seed))
            }
        };
        let c = &self.ces;
        let bubbles = BubbleParams::new(c.r_l.unwrap_or(1.0), c.r_u.unwrap_or(10.0)).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.vehicle.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut config = CesConfig::new(bubbles, self.vehicle);
        if let Some(v) = c.max_iterations {
            config.max_iterations = v;
        }
        config.timeout_s = c.timeout_s;
        if let Some(v) = c.time_tolerance {
            config.time_tolerance = v;
        }
        config.constant_speed = match c.constant_speed {
            Some(true) => Some(c.constant_speed_value.or(generated.preset.constant_speed).unwrap_or(MOOSE_SPEED)),
            Some(false) => None,
            None => generated.preset.constant_speed,
        };
        config.boundary.v_start = c.v_start.unwrap_or(0.0);
        config.boundary.v_end = c.v_end.unwrap_or(0.0);
        if let Some(v) = c.speed_first {
            config.speed_first = v;
        }
        if let Some(v) = c.feas_tol {
            config.solver.feas_tol = v;
        }
        if let Some(v) = c.opt_tol {
            config.solver.opt_tol = v;
        }
        config.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut provenance = generated.provenance;
        if provenance.seed.is_none() {
            provenance.seed = seed;
        }
        let id = self.id.clone().unwrap_or_else(|| match seed {
            Some(s) => format!("{}-{s}", provenance.generator),
            None => provenance.generator.clone(),
        });
        Ok(Scenario { id, workspace: generated.workspace, reference: generated.reference, config, provenance })
    }
}

/// Scenario file for maze `seed` with the default maze vehicle.
pub fn maze_file(seed: u64) -> ScenarioFile {
    ScenarioFile {
        id: Some(format!("maze-{seed:03}")),
        workspace: None,
        vehicle: maze_vehicle(),
        reference: ReferenceSpec::Generator(GeneratorSpec { kind: GeneratorKind::Maze(MazeSpec::default()), seed }),
        ces: CesSection::default(),
    }
}

pub fn lane_change_file() -> ScenarioFile {
    ScenarioFile {
        id: Some("lane-change".into()),
        workspace: None,
        vehicle: lane_change_vehicle(),
        reference: ReferenceSpec::Generator(GeneratorSpec { kind: GeneratorKind::LaneChange(LaneSpec::default()), seed: 0 }),
        ces: CesSection::default(),
    }
}

pub fn moose_file() -> ScenarioFile {
    let sc = moose_test_scenario();
    ScenarioFile {
        id: Some("moose".into()),
        workspace: None,
        vehicle: sc.vehicle.expect("moose preset has a vehicle"),
        reference: ReferenceSpec::Generator(GeneratorSpec { kind: GeneratorKind::Moose, seed: 0 }),
        ces: CesSection { constant_speed: Some(true), constant_speed_value: Some(MOOSE_SPEED), ..Default::default() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Aabb<f64> {
        Aabb::new(Point::new(x0, y0), Point::new(x1, y1)).unwrap()
    }

    #[test]
    fn union_area_handles_overlap() {
        assert_eq!(union_area(&[]), 0.0);
        assert_eq!(union_area(&[rect(0.0, 0.0, 2.0, 2.0), rect(1.0, 1.0, 3.0, 3.0)]), 7.0);
        assert_eq!(union_area(&[rect(0.0, 0.0, 4.0, 4.0), rect(1.0, 1.0, 2.0, 2.0)]), 16.0);
        assert_eq!(union_area(&[rect(0.0, 0.0, 1.0, 1.0), rect(2.0, 0.0, 3.0, 1.0)]), 2.0);
    }

    #[test]
    fn empty_workspace_gives_straight_reference() {
        let w = Workspace::empty(rect(0.0, 0.0, 20.0, 20.0));
        let r = reference_from_grid(&w, Point::new(1.0, 1.0), Point::new(19.0, 19.0), 0.5).unwrap();
        let d = Point::new(18.0, 18.0).normalized().unwrap();
        for p in r.waypoints() {
            assert!((*p - Point::new(1.0, 1.0)).cross(d).abs() < 1e-9);
        }
        let seg = r.segment_lengths();
        assert!(seg.iter().all(|&s| (s - 0.5).abs() <= 0.1));
    }

    #[test]
    fn wall_with_gap() {
        let w = Workspace::new(
            rect(0.0, 0.0, 20.0, 10.0),
            ObstacleSet::new(vec![
                Polygon::rectangle(Point::new(9.0, 0.0), Point::new(11.0, 4.0)).unwrap(),
                Polygon::rectangle(Point::new(9.0, 6.0), Point::new(11.0, 10.0)).unwrap(),
            ]),
        );
        let r = reference_from_grid(&w, Point::new(2.0, 2.0), Point::new(18.0, 8.0), 0.4).unwrap();
        assert!(r.waypoints().iter().all(|&p| !w.point_in_collision(p)));
        assert!(r.waypoints().iter().any(|p| p.x > 9.5 && p.x < 10.5 && p.y > 4.0 && p.y < 6.0));
        let seg = r.segment_lengths();
        assert!(seg.iter().all(|&s| (s - 0.4).abs() <= 0.08));
    }

    #[test]
    fn blocked_goal_is_unreachable() {
        let w = Workspace::new(rect(0.0, 0.0, 20.0, 10.0), ObstacleSet::new(vec![Polygon::rectangle(Point::new(9.0, 0.0), Point::new(11.0, 10.0)).unwrap()]));
        assert!(matches!(reference_from_grid(&w, Point::new(2.0, 2.0), Point::new(18.0, 8.0), 0.5), Err(ScenarioError::Unreachable)));
        assert!(matches!(reference_from_grid(&w, Point::new(10.0, 2.0), Point::new(18.0, 8.0), 0.5), Err(ScenarioError::Blocked { what: "start", .. })));
    }

    #[test]
    fn hundred_metre_line_has_257_waypoints() {
        let line = [Point::new(0.0, 0.0), Point::new(100.0, 0.0)];
        assert_eq!(resample_spacing(&line, 0.39).len(), 257);
        assert_eq!(resample(&line, 257).len(), 257);
    }

    #[test]
    fn maze_coverage_and_determinism() {
        let spec = MazeSpec::default();
        let (w, _, prov) = generate_maze(&spec, 7).unwrap();
        let c = prov.coverage.unwrap();
        assert!((0.475..=0.525).contains(&c), "{c}");
        let (w2, _, _) = generate_maze(&spec, 7).unwrap();
        assert_eq!(w, w2);
        let empty = generate_maze(&MazeSpec { coverage: 0.0, ..spec }, 1).unwrap();
        assert!(empty.0.obstacles().is_empty());
    }

    #[test]
    fn maze_reference_is_free_and_sized() {
        let sc = maze_scenario(&MazeSpec::default(), 3).unwrap();
        assert_eq!(sc.reference.len(), 257);
        assert!(sc.reference.waypoints().iter().all(|&p| !sc.workspace.point_in_collision(p)));
        assert_eq!(sc.reference.waypoints()[0], Point::new(5.0, 5.0));
        assert_eq!(*sc.reference.waypoints().last().unwrap(), Point::new(95.0, 95.0));
    }

    #[test]
    fn lane_centerline_shifts_around_obstacles() {
        let plain = lane_change_centerline(&LaneSpec { obstacles: vec![], ..Default::default() }).unwrap();
        assert!(plain.reference.waypoints().iter().all(|p| (p.y - 3.5).abs() < 1e-12));
        let one = lane_change_centerline(&LaneSpec { obstacles: vec![[20.0, 0.0, 30.0, 3.5]], ..Default::default() }).unwrap();
        let at = |x: f64| one.reference.waypoints().iter().min_by(|a, b| (a.x - x).abs().total_cmp(&(b.x - x).abs())).unwrap().y;
        assert!((at(25.0) - 5.25).abs() < 1e-9);
        assert!((at(5.0) - 3.5).abs() < 1e-9);
        let blocked = lane_change_centerline(&LaneSpec { obstacles: vec![[20.0, 0.0, 30.0, 7.0]], ..Default::default() });
        assert!(matches!(blocked, Err(ScenarioError::LaneBlocked(_))));
    }

    #[test]
    fn moose_layout() {
        let sc = moose_test_scenario();
        assert_eq!(sc.preset.constant_speed, Some(MOOSE_SPEED));
        assert_eq!(sc.vehicle.unwrap().r_min_m, 5.0);
        // half-turn symmetry about (30, 6)
        let rot = |p: Point| Point::new(60.0 - p.x, 12.0 - p.y);
        let obs: Vec<_> = sc.workspace.obstacles().iter().collect();
        for (a, b) in [(0, 1), (1, 0)] {
            for v in obs[a].vertices() {
                assert!(obs[b].vertices().contains(&rot(*v)));
            }
        }
        let q = sc.reference.waypoints();
        let n = q.len();
        for k in 0..n {
            assert!(rot(q[k]).distance(q[n - 1 - k]) < 1e-9);
        }
    }

    #[test]
    fn scenario_file_round_trip() {
        let f = maze_file(4);
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"generator\""));
        let back = ScenarioFile::from_json(&text).unwrap();
        assert_eq!(back, f);
        let err = ScenarioFile::from_json("{\"vehicle\": ").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn explicit_waypoints_file() {
        let text = r#"{
            "workspace": {"bounds": [0, 0, 10, 10], "obstacles": [[[4, 4], [6, 4], [6, 6], [4, 6]]]},
            "vehicle": {"mass_kg": 833, "mu": 0.8, "g": 9.81, "u_long_max_n": 3268.8, "r_min_m": 4},
            "reference": {"waypoints": [[1, 1], [2, 1], [3, 1], [4, 1], [5, 1]]},
            "ces": {"r_l": 0.5, "r_u": 5, "max_iterations": 3, "timeout_s": 10, "constant_speed": false}
        }"#;
        let sc = ScenarioFile::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(sc.reference.len(), 5);
        assert_eq!(sc.config.max_iterations, 3);
        assert_eq!(sc.config.bubbles.r_u, 5.0);
        assert_eq!(sc.workspace.obstacles().len(), 1);
        assert_eq!(sc.config.constant_speed, None);
    }

    #[test]
    fn moose_file_presets_constant_speed() {
        let sc = moose_file().resolve().unwrap();
        assert_eq!(sc.config.constant_speed, Some(MOOSE_SPEED));
        assert_eq!(sc.id, "moose");
    }
}
