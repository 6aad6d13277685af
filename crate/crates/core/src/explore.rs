//! Map-based navigation: frontiers, Fast Marching planning, waypoint
//! following, and the exploration and object-goal episode runners.
//!
//! Planning happens on a window of the metric map. Obstacles are inflated
//! by the agent radius and unexplored cells count as free.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::SQRT_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{
    aggregate_in_place, corrupt_semantics, coverage, project_scan, semantic_channel, spatial_transform, DetectorModel,
    MetricMap, CURIOSITY_SCALE, EXPLORED, OBSTACLE, THRESHOLD,
};
use crate::noise::NoiseModelSet;
use crate::world::{apply_control, AGENT_RADIUS, continuous_step, normalize_angle, raycast, Action, ContinuousPose, GridWorld};

/// Bearing error beyond which the controller turns instead of moving.
pub const TURN_DEADBAND: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Inclusive rectangle of map cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Window {
    pub fn full(size: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: size - 1,
            y1: size - 1,
        }
    }

    pub fn around(i: usize, j: usize) -> Self {
        Self {
            x0: i,
            y0: j,
            x1: i,
            y1: j,
        }
    }

    pub fn include(&mut self, i: usize, j: usize) {
        self.x0 = self.x0.min(i);
        self.y0 = self.y0.min(j);
        self.x1 = self.x1.max(i);
        self.y1 = self.y1.max(j);
    }

    pub fn union(&mut self, other: &Window) {
        self.include(other.x0, other.y0);
        self.include(other.x1, other.y1);
    }

    pub fn grow(&self, margin: usize, size: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            x1: (self.x1 + margin).min(size - 1),
            y1: (self.y1 + margin).min(size - 1),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.x0..=self.x1).contains(&i) && (self.y0..=self.y1).contains(&j)
    }
}

/// Traversability grid for planning, addressed in map cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningGrid {
    window: Window,
    resolution: f64,
    blocked: Vec<bool>,
}

impl PlanningGrid {
    pub fn new(width: usize, height: usize, resolution: f64, blocked: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || blocked.len() != width * height || !(resolution > 0.0) {
            return Err(Error::Dimension(format!("planning grid {width}x{height} with {} cells", blocked.len())));
        }
        Ok(Self {
            window: Window {
                x0: 0,
                y0: 0,
                x1: width - 1,
                y1: height - 1,
            },
            resolution,
            blocked,
        })
    }

    /// Obstacle cells of `map` inside `window`, dilated by a disc of
    /// `inflation` cells.
    pub fn from_map(map: &MetricMap, window: Window, inflation: usize) -> Self {
        let (w, h) = (window.width(), window.height());
        let mut blocked = vec![false; w * h];
        let r = inflation as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let n = map.size() as i64;
        let grown = window.grow(inflation, map.size());
        for j in grown.y0..=grown.y1 {
            for i in grown.x0..=grown.x1 {
                if !map.is_obstacle(i, j) {
                    continue;
                }
                for (dx, dy) in &offsets {
                    let (x, y) = (i as i64 + dx, j as i64 + dy);
                    if x < 0 || y < 0 || x >= n || y >= n || !window.contains(x as usize, y as usize) {
                        continue;
                    }
                    blocked[(y as usize - window.y0) * w + (x as usize - window.x0)] = true;
                }
            }
        }
        Self {
            window,
            resolution: map.resolution(),
            blocked,
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.window.width()
    }

    pub fn height(&self) -> usize {
        self.window.height()
    }

    fn local(&self, i: usize, j: usize) -> Option<usize> {
        self.window
            .contains(i, j)
            .then(|| (j - self.window.y0) * self.width() + (i - self.window.x0))
    }

    fn global(&self, k: usize) -> (usize, usize) {
        (self.window.x0 + k % self.width(), self.window.y0 + k / self.width())
    }

    /// Blocked, or outside the window.
    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.local(i, j).is_none_or(|k| self.blocked[k])
    }

    /// Frees every cell within `radius` cells of `(i, j)`.
    pub fn clear_disc(&mut self, i: usize, j: usize, radius: usize) {
        self.fill_disc(i, j, radius, false);
    }

    pub fn block_disc(&mut self, i: usize, j: usize, radius: usize) {
        self.fill_disc(i, j, radius, true);
    }

    fn fill_disc(&mut self, i: usize, j: usize, radius: usize, value: bool) {
        let r = radius as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (i as i64 + dx, j as i64 + dy);
                if x >= 0 && y >= 0 {
                    if let Some(k) = self.local(x as usize, y as usize) {
                        self.blocked[k] = value;
                    }
                }
            }
        }
    }

    /// Neighbours of local index `k`: axis ones at spacing 1, diagonal ones at
    /// spacing sqrt 2. A diagonal move squeezing between two blocked cells is
    /// not a neighbour.
    fn neighbours(&self, k: usize) -> impl Iterator<Item = (usize, bool)> {
        let n = self.stencil(k);
        n.cells.into_iter().take(n.len).map(|(m, dir)| (m, dir >= 4))
    }

    /// Bit `d` set when `STEPS[d]` leads to a usable neighbour.
    fn stencil_mask(&self, k: usize) -> u8 {
        let s = self.stencil(k);
        s.cells[..s.len].iter().fold(0u8, |m, &(_, d)| m | (1 << d))
    }

    fn stencil(&self, k: usize) -> Stencil {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let (x, y) = ((k as i64) % w, (k as i64) / w);
        let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && !self.blocked[(y * w + x) as usize];
        let mut out = Stencil {
            cells: [(0, 0); 8],
            len: 0,
        };
        for (dir, (dx, dy)) in STEPS.into_iter().enumerate() {
            let (nx, ny) = (x + dx, y + dy);
            let diagonal = dir >= 4;
            if !free(nx, ny) || (diagonal && !free(x + dx, y) && !free(x, y + dy)) {
                continue;
            }
            out.cells[out.len] = ((ny * w + nx) as usize, dir as u8);
            out.len += 1;
        }
        out
    }
}

/// Axis steps first, then diagonals; entries `2s` and `2s + 1` are opposite.
const STEPS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (-1, 1), (1, -1)];

struct Stencil {
    /// Neighbour index and its position in `STEPS`.
    cells: [(usize, u8); 8],
    len: usize,
}

/// Travel distances in meters over a planning window; `INFINITY` where
/// unreachable or not computed.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    window: Window,
    resolution: f64,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if !self.window.contains(i, j) {
            return f64::INFINITY;
        }
        self.values[(j - self.window.y0) * self.window.width() + (i - self.window.x0)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest gap between a finite non-source value and its recomputation
    /// from lower-valued neighbours.
    pub fn consistency_error(&self, grid: &PlanningGrid) -> f64 {
        let h = self.resolution;
        let mut worst = 0.0f64;
        for (k, v) in self.values.iter().enumerate() {
            if !v.is_finite() || *v == 0.0 {
                continue;
            }
            let upwind = |n: usize| if self.values[n] < *v { self.values[n] } else { f64::INFINITY };
            worst = worst.max((stencil_update(grid, k, h, upwind) - v).abs());
        }
        worst
    }
}

fn solve_pair(a: f64, b: f64, h: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo.is_infinite() {
        return f64::INFINITY;
    }
    if hi - lo >= h {
        lo + h
    } else {
        0.5 * (lo + hi + (2.0 * h * h - (hi - lo) * (hi - lo)).sqrt())
    }
}

/// First-order eikonal update from the axis stencil and the diagonal stencil
/// (spacing `h·sqrt 2`), keeping the smaller.
fn stencil_update(grid: &PlanningGrid, k: usize, h: f64, value: impl Fn(usize) -> f64) -> f64 {
    let s = grid.stencil(k);
    let mask = s.cells[..s.len].iter().fold(0u8, |m, &(_, d)| m | (1 << d));
    masked_update(k, mask, grid.width(), h, value)
}

/// Index offsets of `STEPS` in a row-major grid of width `w`.
fn step_offsets(w: usize) -> [isize; 8] {
    STEPS.map(|(dx, dy)| dy as isize * w as isize + dx as isize)
}

fn masked_update(k: usize, mask: u8, w: usize, h: f64, value: impl Fn(usize) -> f64) -> f64 {
    let offsets = step_offsets(w);
    // Slots: x axis, y axis, main diagonal, anti-diagonal.
    let mut best = [f64::INFINITY; 4];
    for (dir, off) in offsets.iter().enumerate() {
        if mask & (1 << dir) != 0 {
            let slot = dir / 2;
            best[slot] = best[slot].min(value(k.wrapping_add_signed(*off)));
        }
    }
    solve_pair(best[0], best[1], h).min(solve_pair(best[2], best[3], h * SQRT_2))
}

/// Placeholder for a neighbour mask not computed yet.
const UNSET: u16 = 0x100;

fn heap_key(v: f64, k: usize) -> Reverse<(u64, usize)> {
    Reverse((v.to_bits(), k))
}

/// Fast Marching solve of `|∇T| = 1` from `sources` (map cells). Stops early
/// once `stop(i, j, distance)` returns true for an accepted cell; cells not accepted
/// by then stay infinite.
pub fn fmm_field_until(
    grid: &PlanningGrid,
    sources: &[(usize, usize)],
    mut stop: impl FnMut(usize, usize, f64) -> bool,
) -> Result<DistanceField> {
    let n = grid.width() * grid.height();
    let h = grid.resolution;
    let mut values = vec![f64::INFINITY; n];
    // Accepted values; infinite until a cell is accepted.
    let mut frozen = vec![f64::INFINITY; n];
    // Neighbour masks, filled on first use; blocked cells never get one.
    let mut masks = vec![UNSET; n];
    let mask_of = |k: usize, masks: &mut Vec<u16>| {
        if masks[k] == UNSET {
            masks[k] = u16::from(grid.stencil_mask(k));
        }
        masks[k] as u8
    };
    let w = grid.width();
    let offsets = step_offsets(w);
    let mut heap = BinaryHeap::new();
    for &(i, j) in sources {
        if let Some(k) = grid.local(i, j) {
            if !grid.blocked[k] && values[k] != 0.0 {
                values[k] = 0.0;
                heap.push(heap_key(0.0, k));
            }
        }
    }
    if heap.is_empty() {
        return Err(Error::Unreachable("no source lies on a traversable cell".into()));
    }
    while let Some(Reverse((bits, k))) = heap.pop() {
        if frozen[k].is_finite() || f64::from_bits(bits) != values[k] {
            continue;
        }
        frozen[k] = values[k];
        let (i, j) = grid.global(k);
        if stop(i, j, frozen[k]) {
            break;
        }
        let mask = mask_of(k, &mut masks);
        for (dir, off) in offsets.iter().enumerate() {
            if mask & (1 << dir) == 0 {
                continue;
            }
            let nb = k.wrapping_add_signed(*off);
            if frozen[nb].is_finite() {
                continue;
            }
            let t = masked_update(nb, mask_of(nb, &mut masks), w, h, |m| frozen[m]);
            if t < values[nb] {
                values[nb] = t;
                heap.push(heap_key(t, nb));
            }
        }
    }
    Ok(DistanceField {
        window: grid.window,
        resolution: h,
        values: frozen,
    })
}

pub fn fmm_field(grid: &PlanningGrid, sources: &[(usize, usize)]) -> Result<DistanceField> {
    fmm_field_until(grid, sources, |_, _, _| false)
}

/// Dijkstra distances in meters over the grid's 4- or 8-neighbourhood.
pub fn grid_dijkstra(grid: &PlanningGrid, sources: &[(usize, usize)], diagonal: bool) -> DistanceField {
    let n = grid.width() * grid.height();
    let h = grid.resolution;
    let mut values = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &(i, j) in sources {
        if let Some(k) = grid.local(i, j) {
            if !grid.blocked[k] {
                values[k] = 0.0;
                heap.push(heap_key(0.0, k));
            }
        }
    }
    while let Some(Reverse((bits, k))) = heap.pop() {
        let v = f64::from_bits(bits);
        if v != values[k] {
            continue;
        }
        for (nb, diag) in grid.neighbours(k) {
            if diag && !diagonal {
                continue;
            }
            let t = v + if diag { h * SQRT_2 } else { h };
            if t < values[nb] {
                values[nb] = t;
                heap.push(heap_key(t, nb));
            }
        }
    }
    DistanceField {
        window: grid.window,
        resolution: h,
        values,
    }
}

/// True for explored, non-obstacle cells 4-adjacent to an unexplored cell.
pub fn is_frontier_cell(map: &MetricMap, i: usize, j: usize) -> bool {
    if !map.is_explored(i, j) || map.is_obstacle(i, j) {
        return false;
    }
    let n = map.size();
    [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
        let (x, y) = (i as i64 + dx, j as i64 + dy);
        x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < n && !map.is_explored(x as usize, y as usize)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierComponent {
    pub cells: Vec<(usize, usize)>,
    /// Mean cell position, in map cells.
    pub centroid: (f64, f64),
}

/// Frontier cells inside `window`, grouped into 8-connected components in
/// row-major order of their first cell.
pub fn detect_frontiers_in(map: &MetricMap, window: Window) -> Vec<FrontierComponent> {
    let (w, h) = (window.width(), window.height());
    let mut mask = vec![false; w * h];
    for j in window.y0..=window.y1 {
        for i in window.x0..=window.x1 {
            mask[(j - window.y0) * w + (i - window.x0)] = is_frontier_cell(map, i, j);
        }
    }
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut cells = Vec::new();
        while let Some(k) = stack.pop() {
            let (x, y) = ((k % w) as i64, (k / w) as i64);
            cells.push((window.x0 + x as usize, window.y0 + y as usize));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let m = (ny * w as i64 + nx) as usize;
                    if mask[m] && !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        cells.sort_by_key(|&(i, j)| (j, i));
        let n = cells.len() as f64;
        let centroid = (
            cells.iter().map(|c| c.0 as f64).sum::<f64>() / n,
            cells.iter().map(|c| c.1 as f64).sum::<f64>() / n,
        );
        out.push(FrontierComponent { cells, centroid });
    }
    out
}

pub fn detect_frontiers(map: &MetricMap) -> Vec<FrontierComponent> {
    detect_frontiers_in(map, Window::full(map.size()))
}

/// Bounding window of explored cells, if any.
pub fn explored_window(map: &MetricMap) -> Option<Window> {
    let mut out: Option<Window> = None;
    for j in 0..map.size() {
        for i in 0..map.size() {
            if map.get(EXPLORED, i, j) > 0.0 {
                match out.as_mut() {
                    Some(w) => w.include(i, j),
                    None => out = Some(Window::around(i, j)),
                }
            }
        }
    }
    out
}

/// Grows the agent's planning reach into the unknown around explored space.
const PLAN_MARGIN: usize = 12;

/// Goal cell: the first cell within `reach` cells of a target cell to be
/// reached by a Fast Marching front started at `start`.
fn nearest_target(grid: &PlanningGrid, start: (usize, usize), targets: &[(usize, usize)], reach: usize) -> Option<(usize, usize)> {
    cheapest_target(grid, start, targets, reach, |_, _| 0.0)
}

/// Like [`nearest_target`], ranking cells by geodesic distance plus a
/// nonnegative `extra(i, j)` cost in meters.
fn cheapest_target(
    grid: &PlanningGrid,
    start: (usize, usize),
    targets: &[(usize, usize)],
    reach: usize,
    extra: impl Fn(usize, usize) -> f64,
) -> Option<(usize, usize)> {
    let w = grid.window();
    let mut hit = vec![false; w.width() * w.height()];
    let r = reach as i64;
    for &(i, j) in targets {
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (i as i64 + dx, j as i64 + dy);
                if x >= 0 && y >= 0 && w.contains(x as usize, y as usize) {
                    hit[(y as usize - w.y0) * w.width() + (x as usize - w.x0)] = true;
                }
            }
        }
    }
    let mut goal = None;
    let mut best = f64::INFINITY;
    fmm_field_until(grid, &[start], |i, j, t| {
        // Cells come out in distance order, so once the front passes the
        // best total cost nothing later can beat it.
        if t >= best {
            return true;
        }
        if hit[(j - w.y0) * w.width() + (i - w.x0)] {
            let cost = t + extra(i, j);
            if cost < best {
                best = cost;
                goal = Some((i, j));
            }
        }
        false
    })
    .ok()?;
    goal
}

/// Frontier cell geodesically nearest to `pose`, planning over the explored
/// part of the map with obstacles inflated by `inflation` cells.
pub fn nearest_frontier_goal(map: &MetricMap, pose: &ContinuousPose, inflation: usize) -> Result<Option<(usize, usize)>> {
    let (i, j) = map
        .cell_of(pose.x, pose.y)
        .ok_or_else(|| Error::OutOfBounds(format!("pose ({:.3}, {:.3}) outside the map", pose.x, pose.y)))?;
    let mut window = explored_window(map).unwrap_or(Window::around(i, j));
    window.include(i, j);
    let window = window.grow(PLAN_MARGIN, map.size());
    let frontier: Vec<_> = detect_frontiers_in(map, window).into_iter().flat_map(|c| c.cells).collect();
    if frontier.is_empty() {
        return Ok(None);
    }
    let mut grid = PlanningGrid::from_map(map, window, inflation);
    grid.clear_disc(i, j, inflation);
    Ok(nearest_target(&grid, (i, j), &frontier, 0))
}

/// Follows steepest descent of `field` from the pose cell and returns the
/// world position of the last path cell within `max_distance` of the pose
/// that the pose sees along a straight, unblocked segment of `grid`.
pub fn short_term_goal(
    grid: &PlanningGrid,
    field: &DistanceField,
    map: &MetricMap,
    pose: &ContinuousPose,
    max_distance: f64,
) -> Result<(f64, f64)> {
    let path = descent_path(field, map, pose)?;
    let mut goal = map.cell_center(path[0].0, path[0].1);
    for &(i, j) in &path[1..] {
        let c = map.cell_center(i, j);
        if (c.0 - pose.x).hypot(c.1 - pose.y) > max_distance {
            break;
        }
        if !line_of_sight(grid, map, (pose.x, pose.y), c) {
            break;
        }
        goal = c;
    }
    Ok(goal)
}

/// True if every cell crossed by the segment, sampled at quarter cells, is
/// unblocked.
pub fn line_of_sight(grid: &PlanningGrid, map: &MetricMap, from: (f64, f64), to: (f64, f64)) -> bool {
    let length = (to.0 - from.0).hypot(to.1 - from.1);
    let n = ((length / (0.25 * map.resolution())).ceil() as usize).max(1);
    (0..=n).all(|k| {
        let f = k as f64 / n as f64;
        map.cell_of(from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
            .is_some_and(|(i, j)| !grid.is_blocked(i, j))
    })
}

/// Cells visited by steepest descent from the pose cell to a field minimum.
pub fn descent_path(field: &DistanceField, map: &MetricMap, pose: &ContinuousPose) -> Result<Vec<(usize, usize)>> {
    let start = map
        .cell_of(pose.x, pose.y)
        .ok_or_else(|| Error::OutOfBounds("pose outside the map".into()))?;
    if !field.get(start.0, start.1).is_finite() {
        return Err(Error::Unreachable(format!("no finite distance at cell {start:?}")));
    }
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let here = field.get(cur.0, cur.1);
        if here == 0.0 {
            break;
        }
        let mut best = (here, cur);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (cur.0 as i64 + dx, cur.1 as i64 + dy);
                if (dx, dy) == (0, 0) || x < 0 || y < 0 {
                    continue;
                }
                let v = field.get(x as usize, y as usize);
                if v < best.0 {
                    best = (v, (x as usize, y as usize));
                }
            }
        }
        if best.1 == cur {
            break;
        }
        cur = best.1;
        path.push(cur);
    }
    Ok(path)
}

/// Turn toward the waypoint when the bearing error exceeds the deadband,
/// otherwise move forward.
pub fn local_controller(pose: &ContinuousPose, waypoint: (f64, f64)) -> Action {
    let bearing = (waypoint.1 - pose.y).atan2(waypoint.0 - pose.x);
    let error = normalize_angle(bearing - pose.theta);
    if error > TURN_DEADBAND {
        Action::TurnLeft
    } else if error < -TURN_DEADBAND {
        Action::TurnRight
    } else {
        Action::Forward
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorePolicy {
    Frontier,
    RandomGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavConfig {
    pub steps: usize,
    /// Long-term goal refresh cadence, steps.
    pub replan_every: usize,
    /// Waypoint lookahead along the planned path, meters.
    pub short_term_distance: f64,
    /// Obstacle dilation for planning, cells.
    pub inflation: usize,
    pub vision_range: f64,
    pub rays: usize,
    pub fov_degrees: f64,
    pub map_size: usize,
    /// Steps an unreachable or unresolved goal region stays excluded.
    pub ignore_steps: usize,
    /// Frontier components smaller than this are ignored.
    pub min_frontier: usize,
    /// A long-term goal closer than this is considered reached, meters.
    pub goal_radius: f64,
    /// Object-goal success radius, meters.
    pub success_distance: f64,
    /// The agent stops once its estimated distance to the goal is below this.
    pub stop_distance: f64,
    /// Cells within this distance of a goal object are navigation targets.
    pub approach_distance: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            replan_every: 25,
            short_term_distance: 1.25,
            inflation: 3,
            vision_range: 3.0,
            rays: 181,
            fov_degrees: 90.0,
            map_size: 480,
            ignore_steps: 50,
            min_frontier: 8,
            goal_radius: 0.25,
            success_distance: 1.0,
            stop_distance: 0.9,
            approach_distance: 0.8,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.replan_every == 0 || self.rays == 0 || self.map_size < 8 {
            return Err(Error::InvariantViolation(
                "steps, replan_every and rays must be positive and map_size at least 8".into(),
            ));
        }
        if !(self.vision_range > 0.0 && self.fov_degrees > 0.0 && self.fov_degrees <= 360.0) {
            return Err(Error::InvariantViolation("vision range and field of view must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub pose: ContinuousPose,
    pub estimate: ContinuousPose,
    pub action: Action,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationResult {
    /// Covered fraction after each step's observation.
    pub coverage: Vec<f64>,
    pub coverage_m2: Vec<f64>,
    /// Curiosity reward of each step's map update.
    pub curiosity: Vec<f64>,
    /// Semantic map mass before the first update.
    pub initial_semantic_mass: f64,
    /// Step at which no frontier remained, if that happened.
    pub exhausted_at: Option<usize>,
    pub collisions: usize,
    pub trajectory: Vec<TrajectoryStep>,
    pub map: MetricMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub success: bool,
    pub spl: f64,
    /// Distance to the success boundary at episode end, meters.
    pub dts: f64,
    pub path_length: f64,
    pub shortest_path: f64,
    pub final_distance: f64,
}

/// Success, SPL and DTS from episode quantities. SPL is
/// `success · L / max(L, P)`, taken as `success` when both lengths are 0.
pub fn nav_metrics(stopped: bool, final_distance: f64, path_length: f64, shortest_path: f64, success_distance: f64) -> NavMetrics {
    let success = stopped && final_distance <= success_distance;
    let spl = if !success {
        0.0
    } else if shortest_path.max(path_length) == 0.0 {
        1.0
    } else {
        shortest_path / shortest_path.max(path_length)
    };
    NavMetrics {
        success,
        spl,
        dts: (final_distance - success_distance).max(0.0),
        path_length,
        shortest_path,
        final_distance,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGoalResult {
    pub metrics: NavMetrics,
    pub stopped: bool,
    pub steps: usize,
    pub goal_category: u8,
    pub trajectory: Vec<TrajectoryStep>,
    /// True pose at the end of the episode.
    pub final_pose: ContinuousPose,
    pub map: MetricMap,
}

/// World cells carrying `category`.
pub fn category_cells(world: &GridWorld, category: u8) -> Vec<(usize, usize)> {
    (0..world.height())
        .flat_map(|y| (0..world.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| world.semantic(x, y) == category)
        .collect()
}

/// Euclidean distance from a point to the nearest listed cell center.
pub fn distance_to_cells(world: &GridWorld, x: f64, y: f64, cells: &[(usize, usize)]) -> f64 {
    cells
        .iter()
        .map(|&(i, j)| {
            let c = world.cell_center(i, j);
            (c.0 - x).hypot(c.1 - y)
        })
        .fold(f64::INFINITY, f64::min)
}

/// 8-connected shortest path over free world cells from the cell holding
/// `(x, y)` to any free cell whose center is within `radius` of a goal cell.
pub fn shortest_path_to_goal(world: &GridWorld, x: f64, y: f64, goals: &[(usize, usize)], radius: f64) -> Option<f64> {
    let start = world.cell_at(x, y)?;
    let (w, h) = (world.width(), world.height());
    let blocked = (0..w * h).map(|k| !world.is_free(k % w, k / w)).collect();
    let grid = PlanningGrid::new(w, h, world.cell_size(), blocked).ok()?;
    let field = grid_dijkstra(&grid, &[start], true);
    world
        .free_cells()
        .filter(|&(i, j)| {
            let c = world.cell_center(i, j);
            distance_to_cells(world, c.0, c.1, goals) <= radius
        })
        .map(|(i, j)| field.get(i, j))
        .filter(|d| d.is_finite())
        .min_by(f64::total_cmp)
}

/// State shared by both episode runners.
struct Navigator<'a> {
    world: &'a GridWorld,
    cfg: &'a NavConfig,
    noise: Option<&'a NoiseModelSet>,
    detector: Option<&'a DetectorModel>,
    map: MetricMap,
    pose: ContinuousPose,
    estimate: ContinuousPose,
    seen: Window,
    path_length: f64,
    collisions: usize,
    goal: Option<Goal>,
    /// Cells excluded as goals, with the step their exclusion ends.
    ignored: HashMap<(usize, usize), usize>,
    /// Map cells where the agent bumped into something.
    contacts: Vec<(usize, usize)>,
    steering: Option<SteeringField>,
}

/// Distance field toward the current targets, reused while the planning
/// grid stays the same. New explored space alone leaves it unchanged.
struct SteeringField {
    targets: Vec<(usize, usize)>,
    raw: PlanningGrid,
    grid: PlanningGrid,
    field: DistanceField,
}

#[derive(Debug, Clone, Copy)]
struct Goal {
    cell: (usize, usize),
    chosen_at: usize,
    budget: usize,
}

impl<'a> Navigator<'a> {
    fn new(
        world: &'a GridWorld,
        start: ContinuousPose,
        cfg: &'a NavConfig,
        noise: Option<&'a NoiseModelSet>,
        detector: Option<&'a DetectorModel>,
    ) -> Result<Self> {
        cfg.validate()?;
        if !world.is_free_point(start.x, start.y) {
            return Err(Error::PoseInObstacle { x: start.x, y: start.y });
        }
        let categories = usize::from(world.max_category());
        let map = MetricMap::new(cfg.map_size, categories, world.cell_size(), (start.x, start.y))?;
        let c = map.cell_of(start.x, start.y).expect("origin is the map center");
        Ok(Self {
            world,
            cfg,
            noise,
            detector,
            map,
            pose: start,
            estimate: start,
            seen: Window::around(c.0, c.1),
            path_length: 0.0,
            collisions: 0,
            goal: None,
            ignored: HashMap::new(),
            contacts: Vec::new(),
            steering: None,
        })
    }

    /// Scans from the true pose and writes the scan at the estimated pose.
    /// Returns the semantic mass gained.
    fn observe<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let fov = self.cfg.fov_degrees.to_radians();
        let mut scan = raycast(self.world, &self.pose, self.cfg.rays, fov, self.cfg.vision_range)?;
        if let Some(d) = self.detector {
            scan = corrupt_semantics(&scan, d, rng)?;
        }
        let ego = project_scan(&scan, self.cfg.vision_range, self.map.resolution(), self.map.categories())?;
        let patch = spatial_transform(&ego, &self.estimate, &self.map)?;
        self.seen.union(&Window {
            x0: patch.x0,
            y0: patch.y0,
            x1: patch.x0 + patch.width - 1,
            y1: patch.y0 + patch.height - 1,
        });
        let gain = aggregate_in_place(&mut self.map, &patch)?;
        Ok(gain[2..].iter().sum())
    }

    fn act<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) {
        let out = continuous_step(self.world, &self.pose, action, self.noise, rng);
        self.path_length += (out.pose.x - self.pose.x).hypot(out.pose.y - self.pose.y);
        self.collisions += usize::from(out.collided);
        self.pose = out.pose;
        self.estimate = if self.noise.is_some() {
            apply_control(&self.estimate, &out.sensed)
        } else {
            out.pose
        };
        if out.collided {
            // Mark a strip as wide as the agent just ahead of it.
            let reach = AGENT_RADIUS + self.map.resolution();
            let (c, s) = (self.estimate.theta.cos(), self.estimate.theta.sin());
            for k in -2..=2 {
                let side = f64::from(k) * 0.5 * AGENT_RADIUS;
                if let Some(cell) = self.map.cell_of(self.estimate.x + reach * c - side * s, self.estimate.y + reach * s + side * c) {
                    if !self.contacts.contains(&cell) {
                        self.contacts.push(cell);
                    }
                }
            }
        }
    }

    fn agent_cell(&self) -> Result<(usize, usize)> {
        self.map
            .cell_of(self.estimate.x, self.estimate.y)
            .ok_or_else(|| Error::OutOfBounds("estimated pose left the map".into()))
    }

    fn planning_grid(&self, extra: Option<(usize, usize)>) -> Result<PlanningGrid> {
        let mut grid = self.raw_planning_grid(extra)?;
        self.clear_around_agent(&mut grid, self.agent_cell()?);
        Ok(grid)
    }

    /// Inflated map obstacles, without the clearing around the agent.
    fn raw_planning_grid(&self, extra: Option<(usize, usize)>) -> Result<PlanningGrid> {
        let agent = self.agent_cell()?;
        let mut window = self.seen;
        window.include(agent.0, agent.1);
        if let Some(c) = extra {
            window.include(c.0, c.1);
        }
        Ok(PlanningGrid::from_map(&self.map, window.grow(PLAN_MARGIN, self.map.size()), self.cfg.inflation))
    }

    /// Frees the agent's surroundings, then re-blocks recorded contacts.
    fn clear_around_agent(&self, grid: &mut PlanningGrid, agent: (usize, usize)) {
        grid.clear_disc(agent.0, agent.1, self.cfg.inflation.saturating_sub(1));
        for &(i, j) in &self.contacts {
            grid.block_disc(i, j, 1);
        }
        grid.clear_disc(agent.0, agent.1, 1);
    }

    fn is_ignored(&self, cell: (usize, usize), step: usize) -> bool {
        self.ignored.get(&cell).is_some_and(|&until| step < until)
    }

    /// Ignores `cell` and every frontier component passing near it.
    fn ignore(&mut self, cell: (usize, usize), step: usize) {
        let r = (2.0 * self.cfg.goal_radius / self.map.resolution()).ceil() as i64;
        let near = |c: &(usize, usize)| (c.0 as i64 - cell.0 as i64).abs() <= r && (c.1 as i64 - cell.1 as i64).abs() <= r;
        let mut cells = vec![cell];
        for component in detect_frontiers_in(&self.map, self.seen.grow(1, self.map.size())) {
            if component.cells.iter().any(near) {
                cells.extend(component.cells);
            }
        }
        self.ignore_cells(&cells, step);
        self.goal = None;
    }

    fn ignore_cells(&mut self, cells: &[(usize, usize)], step: usize) {
        let until = step + self.cfg.ignore_steps;
        for &c in cells {
            self.ignored.insert(c, until);
        }
    }

    fn frontier_exhausted(&self) -> bool {
        detect_frontiers_in(&self.map, self.seen.grow(1, self.map.size())).is_empty()
    }

    /// Frontier cells of components large enough to matter, not ignored
    /// and not right under the agent. Small components and nearby cells are
    /// used only when nothing else is left.
    fn frontier_targets(&self, step: usize) -> Vec<(usize, usize)> {
        let components = detect_frontiers_in(&self.map, self.seen.grow(1, self.map.size()));
        let large = components.iter().any(|c| c.cells.len() >= self.cfg.min_frontier);
        let cells: Vec<_> = components
            .into_iter()
            .filter(|c| !large || c.cells.len() >= self.cfg.min_frontier)
            .flat_map(|c| c.cells)
            .filter(|c| !self.is_ignored(*c, step))
            .collect();
        let far: Vec<_> = cells
            .iter()
            .copied()
            .filter(|&(i, j)| {
                let c = self.map.cell_center(i, j);
                (c.0 - self.estimate.x).hypot(c.1 - self.estimate.y) > 2.0 * self.cfg.goal_radius
            })
            .collect();
        if far.is_empty() {
            cells
        } else {
            far
        }
    }

    fn goal_is_stale(&self, step: usize, frontier: bool) -> Result<bool> {
        let Some(goal) = self.goal else {
            return Ok(true);
        };
        if step >= goal.chosen_at + self.cfg.replan_every {
            return Ok(true);
        }
        let (gx, gy) = self.map.cell_center(goal.cell.0, goal.cell.1);
        if (gx - self.estimate.x).hypot(gy - self.estimate.y) < self.cfg.goal_radius {
            return Ok(true);
        }
        if frontier {
            let r = self.cfg.inflation as i64 + 1;
            let n = self.map.size() as i64;
            let still = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (x, y) = (goal.cell.0 as i64 + dx, goal.cell.1 as i64 + dy);
                    x >= 0 && y >= 0 && x < n && y < n && is_frontier_cell(&self.map, x as usize, y as usize)
                })
            });
            return Ok(!still);
        }
        Ok(false)
    }

    /// Picks a new long-term goal. `None` means nothing is left to pursue.
    fn choose_goal<R: Rng + ?Sized>(&mut self, policy: ExplorePolicy, step: usize, rng: &mut R) -> Result<Option<(usize, usize)>> {
        match policy {
            ExplorePolicy::Frontier => {
                let targets = self.frontier_targets(step);
                if targets.is_empty() {
                    return Ok(None);
                }
                let grid = self.planning_grid(None)?;
                let (pose, map) = (self.estimate, &self.map);
                // Each turn step costs as much as a forward step.
                let turn_cost = |i: usize, j: usize| {
                    let (x, y) = map.cell_center(i, j);
                    let error = normalize_angle((y - pose.y).atan2(x - pose.x) - pose.theta).abs();
                    (error / Action::TurnLeft.control().o.abs()).floor() * Action::Forward.control().x
                };
                let goal = cheapest_target(&grid, self.agent_cell()?, &targets, self.cfg.inflation, turn_cost);
                if goal.is_none() {
                    self.ignore_cells(&targets, step);
                }
                Ok(goal)
            }
            ExplorePolicy::RandomGoal => {
                // Uniform over cells the agent can currently plan a path to.
                let grid = self.planning_grid(None)?;
                let field = fmm_field(&grid, &[self.agent_cell()?])?;
                let window = field.window();
                let reachable: Vec<(usize, usize)> = (window.y0..=window.y1)
                    .flat_map(|j| (window.x0..=window.x1).map(move |i| (i, j)))
                    .filter(|&(i, j)| field.get(i, j).is_finite() && !self.is_ignored((i, j), step))
                    .collect();
                if reachable.is_empty() {
                    return Ok(None);
                }
                Ok(Some(reachable[rng.random_range(0..reachable.len())]))
            }
        }
    }

    fn set_goal(&mut self, cell: (usize, usize), step: usize, distance: f64) {
        // Keep the running budget while the goal stays in the same place.
        let near = |g: &Goal| {
            (g.cell.0 as i64 - cell.0 as i64).abs() <= 10 && (g.cell.1 as i64 - cell.1 as i64).abs() <= 10
        };
        // Enough steps to turn around twice and walk the straight-line distance.
        let budget = match self.goal {
            Some(g) if near(&g) => g.budget,
            _ => step + (distance / 0.25) as usize + 2 * 36 + self.cfg.replan_every,
        };
        self.goal = Some(Goal {
            cell,
            chosen_at: step,
            budget,
        });
    }

    /// Plans toward `targets` (map cells) and returns the next action, or
    /// `None` when the agent cannot reach them.
    fn steer_to(&mut self, targets: &[(usize, usize)]) -> Result<Option<Action>> {
        let agent = self.agent_cell()?;
        let raw = self.raw_planning_grid(targets.first().copied())?;
        let reusable = self.steering.as_ref().is_some_and(|c| {
            c.targets == targets
                && c.raw == raw
                && !c.grid.is_blocked(agent.0, agent.1)
                && c.field.get(agent.0, agent.1).is_finite()
        });
        if !reusable {
            let mut grid = raw.clone();
            self.clear_around_agent(&mut grid, agent);
            for &(i, j) in targets {
                grid.clear_disc(i, j, 0);
            }
            let Ok(field) = fmm_field_until(&grid, targets, |i, j, _| (i, j) == agent) else {
                return Ok(None);
            };
            self.steering = Some(SteeringField {
                targets: targets.to_vec(),
                raw,
                grid,
                field,
            });
        }
        let SteeringField { grid, field, .. } = self.steering.as_ref().expect("steering field was just set");
        if !field.get(agent.0, agent.1).is_finite() {
            return Ok(None);
        }
        let waypoint = short_term_goal(grid, field, &self.map, &self.estimate, self.cfg.short_term_distance)?;
        if (waypoint.0 - self.estimate.x).hypot(waypoint.1 - self.estimate.y) < 0.5 * self.map.resolution() {
            return Ok(Some(Action::TurnLeft));
        }
        Ok(Some(local_controller(&self.estimate, waypoint)))
    }

    /// One exploration decision. `None` once no frontier is left.
    fn explore_action<R: Rng + ?Sized>(&mut self, policy: ExplorePolicy, step: usize, rng: &mut R) -> Result<Option<Action>> {
        self.ignored.retain(|_, until| step < *until);
        if let Some(g) = self.goal {
            if step > g.budget {
                self.ignore(g.cell, step);
            }
        }
        for _ in 0..4 {
            if self.goal_is_stale(step, policy == ExplorePolicy::Frontier)? {
                match self.choose_goal(policy, step, rng)? {
                    Some(cell) => {
                        let (gx, gy) = self.map.cell_center(cell.0, cell.1);
                        let d = (gx - self.estimate.x).hypot(gy - self.estimate.y);
                        self.set_goal(cell, step, d);
                    }
                    None if policy == ExplorePolicy::Frontier && self.frontier_exhausted() => return Ok(None),
                    None => return Ok(Some(Action::TurnLeft)),
                }
            }
            let goal = self.goal.expect("goal was just set");
            match self.steer_to(&[goal.cell])? {
                Some(a) => return Ok(Some(a)),
                None => self.ignore(goal.cell, step),
            }
        }
        Ok(Some(Action::TurnLeft))
    }

    fn record(&self, step: usize, action: Action, coverage: f64) -> TrajectoryStep {
        TrajectoryStep {
            step,
            pose: self.pose,
            estimate: self.estimate,
            action,
            coverage,
        }
    }
}

/// Explores for `cfg.steps` steps from `start`. Once no frontier is left
/// the remaining coverage entries repeat the final value.
pub fn run_exploration_episode<R: Rng + ?Sized>(
    world: &GridWorld,
    start: ContinuousPose,
    policy: ExplorePolicy,
    cfg: &NavConfig,
    noise: Option<&NoiseModelSet>,
    detector: Option<&DetectorModel>,
    rng: &mut R,
) -> Result<ExplorationResult> {
    let mut nav = Navigator::new(world, start, cfg, noise, detector)?;
    let initial_semantic_mass = nav.map.semantic_mass();
    let mut result = ExplorationResult {
        coverage: Vec::with_capacity(cfg.steps),
        coverage_m2: Vec::with_capacity(cfg.steps),
        curiosity: Vec::with_capacity(cfg.steps),
        initial_semantic_mass,
        exhausted_at: None,
        collisions: 0,
        trajectory: Vec::with_capacity(cfg.steps),
        map: MetricMap::new(1, 0, 1.0, (0.0, 0.0))?,
    };
    for step in 0..cfg.steps {
        let gain = nav.observe(rng)?;
        let cov = coverage(&nav.map, world);
        result.coverage.push(cov.fraction);
        result.coverage_m2.push(cov.area_m2);
        result.curiosity.push(CURIOSITY_SCALE * gain);
        let Some(action) = nav.explore_action(policy, step, rng)? else {
            result.exhausted_at = Some(step);
            result.trajectory.push(nav.record(step, Action::Stop, cov.fraction));
            break;
        };
        result.trajectory.push(nav.record(step, action, cov.fraction));
        nav.act(action, rng);
    }
    let last = (*result.coverage.last().expect("at least one step"), *result.coverage_m2.last().unwrap());
    while result.coverage.len() < cfg.steps {
        result.coverage.push(last.0);
        result.coverage_m2.push(last.1);
        result.curiosity.push(0.0);
    }
    result.collisions = nav.collisions;
    result.map = nav.map;
    Ok(result)
}

/// Searches for an object of `goal_category`: frontier exploration until
/// the category shows up in the map, then navigation toward it, stopping
/// once the estimated distance drops below `cfg.stop_distance`.
pub fn run_objectgoal_episode<R: Rng + ?Sized>(
    world: &GridWorld,
    start: ContinuousPose,
    goal_category: u8,
    cfg: &NavConfig,
    noise: Option<&NoiseModelSet>,
    detector: Option<&DetectorModel>,
    rng: &mut R,
) -> Result<ObjectGoalResult> {
    let goals = category_cells(world, goal_category);
    let mut nav = Navigator::new(world, start, cfg, noise, detector)?;
    if goals.is_empty() || goal_category == 0 {
        let any: Vec<_> = (1..=world.max_category()).flat_map(|c| category_cells(world, c)).collect();
        if any.is_empty() {
            return Err(Error::InvalidWorld("world has no semantic objects".into()));
        }
        let d = distance_to_cells(world, start.x, start.y, &any);
        return Ok(ObjectGoalResult {
            metrics: nav_metrics(false, d, 0.0, 0.0, cfg.success_distance),
            stopped: false,
            steps: 0,
            goal_category,
            trajectory: Vec::new(),
            final_pose: start,
            map: nav.map,
        });
    }
    let shortest = shortest_path_to_goal(world, start.x, start.y, &goals, cfg.success_distance).unwrap_or(f64::INFINITY);
    let channel = semantic_channel(usize::from(goal_category));
    let approach = (cfg.approach_distance / world.cell_size()).floor() as i64;
    let mut trajectory = Vec::new();
    let mut stopped = false;
    let mut steps = 0;
    for step in 0..cfg.steps {
        nav.observe(rng)?;
        steps = step + 1;
        let seen = nav.seen;
        let known: Vec<(usize, usize)> = (seen.y0..=seen.y1)
            .flat_map(|j| (seen.x0..=seen.x1).map(move |i| (i, j)))
            .filter(|&(i, j)| nav.map.get(channel, i, j) >= THRESHOLD)
            .collect();
        let mut action = None;
        if !known.is_empty() {
            let est = known
                .iter()
                .map(|&(i, j)| {
                    let c = nav.map.cell_center(i, j);
                    (c.0 - nav.estimate.x).hypot(c.1 - nav.estimate.y)
                })
                .fold(f64::INFINITY, f64::min);
            if est <= cfg.stop_distance {
                action = Some(Action::Stop);
            } else {
                let targets = approach_cells(&nav, &known, approach);
                if !targets.is_empty() {
                    action = nav.steer_to(&targets)?;
                }
            }
        }
        let action = match action {
            Some(a) => a,
            None => nav.explore_action(ExplorePolicy::Frontier, step, rng)?.unwrap_or(Action::TurnLeft),
        };
        trajectory.push(nav.record(step, action, f64::NAN));
        if action == Action::Stop {
            stopped = true;
            break;
        }
        nav.act(action, rng);
    }
    let final_distance = distance_to_cells(world, nav.pose.x, nav.pose.y, &goals);
    Ok(ObjectGoalResult {
        metrics: nav_metrics(stopped, final_distance, nav.path_length, shortest, cfg.success_distance),
        stopped,
        steps,
        goal_category,
        trajectory,
        final_pose: nav.pose,
        map: nav.map,
    })
}

/// Non-obstacle map cells within `radius` cells of a known goal cell.
fn approach_cells(nav: &Navigator<'_>, known: &[(usize, usize)], radius: i64) -> Vec<(usize, usize)> {
    let n = nav.map.size() as i64;
    let mut mark = std::collections::BTreeSet::new();
    for &(i, j) in known {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (x, y) = (i as i64 + dx, j as i64 + dy);
                if x >= 0 && y >= 0 && x < n && y < n && nav.map.get(OBSTACLE, x as usize, y as usize) < THRESHOLD {
                    mark.insert((y as usize, x as usize));
                }
            }
        }
    }
    mark.into_iter().map(|(j, i)| (i, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_maze;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_grid(n: usize) -> PlanningGrid {
        PlanningGrid::new(n, n, 1.0, vec![false; n * n]).unwrap()
    }

    #[test]
    fn fmm_source_is_zero_and_field_is_consistent() {
        let mut blocked = vec![false; 40 * 40];
        for y in 5..35 {
            blocked[y * 40 + 20] = true;
        }
        let grid = PlanningGrid::new(40, 40, 1.0, blocked).unwrap();
        let f = fmm_field(&grid, &[(3, 20)]).unwrap();
        assert_eq!(f.get(3, 20), 0.0);
        assert!(f.get(20, 20).is_infinite());
        assert!(f.consistency_error(&grid) < 1e-6);
        assert!(fmm_field(&grid, &[(20, 10)]).is_err());
    }

    #[test]
    fn fmm_open_field_tracks_euclidean_distance() {
        let grid = open_grid(61);
        let f = fmm_field(&grid, &[(30, 30)]).unwrap();
        let mut worst = 0.0f64;
        for j in 0..61 {
            for i in 0..61 {
                let e = ((i as f64 - 30.0).powi(2) + (j as f64 - 30.0).powi(2)).sqrt();
                if e >= 5.0 {
                    worst = worst.max((f.get(i, j) - e).abs() / e);
                }
            }
        }
        assert!(worst < 0.08, "{worst}");
    }

    #[test]
    fn fmm_never_exceeds_four_connected_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let blocked: Vec<bool> = (0..30 * 30).map(|_| rng.random_bool(0.25)).collect();
            let mut grid = PlanningGrid::new(30, 30, 0.05, blocked).unwrap();
            grid.clear_disc(15, 15, 0);
            let f = fmm_field(&grid, &[(15, 15)]).unwrap();
            let d4 = grid_dijkstra(&grid, &[(15, 15)], false);
            for (a, b) in f.values().iter().zip(d4.values()) {
                assert!(*a <= b + 1e-6);
                assert_eq!(a.is_finite(), b.is_finite());
            }
        }
    }

    fn half_explored() -> MetricMap {
        let mut m = MetricMap::new(20, 1, 0.05, (0.0, 0.0)).unwrap();
        for j in 0..20 {
            for i in 0..10 {
                m.set(EXPLORED, i, j, 1.0);
            }
        }
        m
    }

    #[test]
    fn frontier_of_half_explored_room_is_a_line() {
        let m = half_explored();
        let f = detect_frontiers(&m);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].cells.len(), 20);
        assert!(f[0].cells.iter().all(|c| c.0 == 9));
        assert_eq!(f[0].centroid, (9.0, 9.5));
        let mut full = m.clone();
        for j in 0..20 {
            for i in 0..20 {
                full.set(EXPLORED, i, j, 1.0);
            }
        }
        assert!(detect_frontiers(&full).is_empty());
    }

    #[test]
    fn frontiers_match_definition_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mut m = MetricMap::new(24, 1, 0.05, (0.0, 0.0)).unwrap();
            for j in 0..24 {
                for i in 0..24 {
                    if rng.random_bool(0.6) {
                        m.set(EXPLORED, i, j, 1.0);
                        if rng.random_bool(0.2) {
                            m.set(OBSTACLE, i, j, 1.0);
                        }
                    }
                }
            }
            let found: std::collections::BTreeSet<_> = detect_frontiers(&m).into_iter().flat_map(|c| c.cells).collect();
            let mut oracle = std::collections::BTreeSet::new();
            for j in 0..24usize {
                for i in 0..24usize {
                    let unexplored_nb = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                        let (x, y) = (i as i64 + dx, j as i64 + dy);
                        (0..24).contains(&x) && (0..24).contains(&y) && m.get(EXPLORED, x as usize, y as usize) < 0.5
                    });
                    if m.get(EXPLORED, i, j) >= 0.5 && m.get(OBSTACLE, i, j) < 0.5 && unexplored_nb {
                        oracle.insert((i, j));
                    }
                }
            }
            assert_eq!(found, oracle);
        }
    }

    #[test]
    fn nearest_frontier_is_geodesic() {
        // Explored 30x30 block; a wall at x = 14 with the map's unexplored
        // edge right behind it, and a farther opening to the south.
        let mut m = MetricMap::new(40, 1, 0.05, (0.0, 0.0)).unwrap();
        for j in 5..35 {
            for i in 5..35 {
                m.set(EXPLORED, i, j, 1.0);
            }
        }
        for j in 5..35 {
            m.set(OBSTACLE, 14, j, 1.0);
            m.set(OBSTACLE, 5, j, 1.0);
            m.set(OBSTACLE, 34, j, 1.0);
        }
        for i in 5..35 {
            m.set(OBSTACLE, i, 34, 1.0);
            if !(20..=24).contains(&i) {
                m.set(OBSTACLE, i, 5, 1.0);
            }
        }
        // Unexplored pocket just west of the wall, unreachable from the east.
        for j in 15..20 {
            m.set(EXPLORED, 12, j, 0.0);
        }
        let pose = ContinuousPose::new(m.cell_center(16, 17).0, m.cell_center(16, 17).1, 0.0);
        let goal = nearest_frontier_goal(&m, &pose, 0).unwrap().unwrap();
        assert!((20..=24).contains(&goal.0) && goal.1 == 5, "{goal:?}");
        let closed = {
            let mut c = m.clone();
            for j in 0..40 {
                for i in 0..40 {
                    c.set(EXPLORED, i, j, 1.0);
                }
            }
            c
        };
        assert_eq!(nearest_frontier_goal(&closed, &pose, 0).unwrap(), None);
    }

    #[test]
    fn waypoint_within_lookahead() {
        let m = MetricMap::new(400, 0, 0.05, (0.0, 0.0)).unwrap();
        let grid = PlanningGrid::from_map(&m, Window::full(400), 2);
        let pose = ContinuousPose::new(0.0, 0.0, 0.0);
        // Goal 0.5 m away.
        let near = m.cell_of(0.5, 0.0).unwrap();
        let f = fmm_field(&grid, &[near]).unwrap();
        let wp = short_term_goal(&grid, &f, &m, &pose, 1.25).unwrap();
        assert!((wp.0 - 0.5).abs() < 1e-9 && wp.1.abs() < 1e-9);
        // Goal 8 m away along x.
        let far = m.cell_of(8.0, 0.0).unwrap();
        let f = fmm_field(&grid, &[far]).unwrap();
        let wp = short_term_goal(&grid, &f, &m, &pose, 1.25).unwrap();
        assert!((wp.0 - 1.25).abs() <= 0.05 && wp.1.abs() <= 0.05, "{wp:?}");
        let path = descent_path(&f, &m, &pose).unwrap();
        assert!(path.windows(2).all(|p| f.get(p[1].0, p[1].1) < f.get(p[0].0, p[0].1)));
    }

    #[test]
    fn controller_turns_toward_waypoint() {
        let pose = ContinuousPose::new(0.0, 0.0, 0.0);
        assert_eq!(local_controller(&pose, (1.0, 0.0)), Action::Forward);
        assert_eq!(local_controller(&pose, (1.0, 0.2)), Action::Forward);
        assert_eq!(local_controller(&pose, (0.0, 1.0)), Action::TurnLeft);
        assert_eq!(local_controller(&pose, (0.0, -1.0)), Action::TurnRight);
        assert_eq!(local_controller(&pose, (-1.0, 0.1)), Action::TurnLeft);
        assert_eq!(local_controller(&pose, (-1.0, -0.1)), Action::TurnRight);
    }

    #[test]
    fn closed_loop_reaches_waypoints() {
        let w = GridWorld::room(122, 122, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..20 {
            let start = ContinuousPose::new(3.0, 3.0, rng.random_range(-3.1..3.1));
            let target = (rng.random_range(0.5..5.5), rng.random_range(0.5..5.5));
            let dist = (target.0 - start.x).hypot(target.1 - start.y);
            let bound = (dist / 0.25) as usize + 36;
            let mut pose = start;
            let mut steps = 0;
            while (target.0 - pose.x).hypot(target.1 - pose.y) > 0.25 {
                let a = local_controller(&pose, target);
                pose = continuous_step(&w, &pose, a, None, &mut rng).pose;
                steps += 1;
                assert!(steps <= bound, "case {k}: {steps} > {bound}");
            }
        }
    }

    #[test]
    fn metrics_formulas() {
        let m = nav_metrics(true, 0.5, 10.0, 8.0, 1.0);
        assert!(m.success && m.spl == 0.8 && m.dts == 0.0);
        let m = nav_metrics(false, 3.5, 10.0, 8.0, 1.0);
        assert!(!m.success && m.spl == 0.0 && m.dts == 2.5);
        let m = nav_metrics(true, 1.5, 4.0, 8.0, 1.0);
        assert!(!m.success && m.dts == 0.5);
        assert_eq!(nav_metrics(true, 0.2, 0.0, 0.0, 1.0).spl, 1.0);
    }

    fn maze_world(seed: u64) -> (GridWorld, ContinuousPose) {
        let w = generate_maze(15, 15, seed).unwrap().inflate_maze(16, 4, 0.05).unwrap();
        // Lattice cell (1, 1) spans cells 4..20; its center cell is 12.
        let (x, y) = w.cell_center(12, 12);
        (w, ContinuousPose::new(x, y, 0.0))
    }

    #[test]
    fn exploration_coverage_is_monotone() {
        let (w, start) = maze_world(2);
        let cfg = NavConfig {
            steps: 150,
            ..NavConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = run_exploration_episode(&w, start, ExplorePolicy::Frontier, &cfg, None, None, &mut rng).unwrap();
        assert_eq!(r.coverage.len(), 150);
        assert!(r.coverage.windows(2).all(|p| p[1] >= p[0]));
        assert!(r.coverage[149] > r.coverage[0]);
        r.map.validate().unwrap();
    }

    #[test]
    fn object_visible_ahead_is_found_at_once() {
        let mut w = GridWorld::room(60, 40, 0.05);
        for y in 15..25 {
            w.set_obstacle(58, y, 2);
        }
        // Face of the object at x = 2.9 m; start 0.8 m in front of it.
        let start = ContinuousPose::new(2.1, 1.0, 0.0);
        let cfg = NavConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_objectgoal_episode(&w, start, 2, &cfg, None, None, &mut rng).unwrap();
        assert!(r.stopped && r.metrics.success);
        assert_eq!(r.metrics.dts, 0.0);
        assert_eq!(r.steps, 1);
        assert_eq!(r.metrics.spl, 1.0);
    }

    #[test]
    fn budget_exhaustion_fails() {
        let (mut w, start) = maze_world(4);
        w.paint_objects(3, 6, 6, 9);
        let cfg = NavConfig {
            steps: 5,
            ..NavConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let far = (1..=3u8)
            .max_by(|a, b| {
                let da = distance_to_cells(&w, start.x, start.y, &category_cells(&w, *a));
                let db = distance_to_cells(&w, start.x, start.y, &category_cells(&w, *b));
                da.total_cmp(&db)
            })
            .unwrap();
        let r = run_objectgoal_episode(&w, start, far, &cfg, None, None, &mut rng).unwrap();
        if !r.stopped {
            assert!(!r.metrics.success);
            assert_eq!(r.metrics.spl, 0.0);
            assert_eq!(r.metrics.dts, (r.metrics.final_distance - 1.0).max(0.0));
        }
    }
}
