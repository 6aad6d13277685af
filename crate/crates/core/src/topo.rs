//! Topological mapping with geometric oracles.
//!
//! Nodes stand for places about one node radius apart; ghost nodes mark
//! directions that look explorable from a node but have not been visited.
//! Localization, explorable directions and goal-direction scores are all
//! computed from the world geometry.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explore::{fmm_field_until, grid_dijkstra, DistanceField, PlanningGrid};
use crate::world::{cast_ray, normalize_angle, traverse_grid, ContinuousPose, DepthScan, GridWorld, PoseDelta};

/// Radius of a node, meters.
pub const NODE_RADIUS: f64 = 3.0;
pub const DIRECTIONS: usize = 12;
/// Angular width of the visibility patch used by the connection test.
pub const VISIBILITY_PATCH: f64 = 5.0 * PI / 180.0;
/// A direction is explorable when its probe point is at most this factor
/// times the node radius away along the local map.
pub const EXPLORABLE_SLACK: f64 = 1.05;
/// Geodesic distance at which a direction's goal score reaches zero.
pub const SCORE_HORIZON: f64 = 20.0;

const PATCH_RAYS: usize = 6;

/// Direction bin of an angle: nearest multiple of `2π/12`, wrapped.
pub fn direction_bin(angle: f64) -> usize {
    let k = (angle / TAU * DIRECTIONS as f64).round() as i64;
    k.rem_euclid(DIRECTIONS as i64) as usize
}

/// Center angle of bin `i`.
pub fn bin_angle(i: usize) -> f64 {
    i as f64 * TAU / DIRECTIONS as f64
}

/// Whether `goal` belongs to the node at `start`: within the node radius
/// and visible through a narrow patch of rays toward it.
pub fn connection_label(world: &GridWorld, start: &ContinuousPose, goal: &ContinuousPose) -> bool {
    let d = start.distance(goal);
    if d > NODE_RADIUS {
        return false;
    }
    if d == 0.0 {
        return true;
    }
    let bearing = normalize_angle((goal.y - start.y).atan2(goal.x - start.x) - start.theta);
    let max_range = d + world.cell_size();
    (0..PATCH_RAYS).any(|k| {
        let offset = VISIBILITY_PATCH * (k as f64 / (PATCH_RAYS - 1) as f64 - 0.5);
        cast_ray(world, start, bearing + offset, max_range).range > d
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraLabel {
    pub direction_bin: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterLabel {
    pub directions: [bool; DIRECTIONS],
    pub scores: [f64; DIRECTIONS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLabels {
    pub connection: bool,
    pub intra: Option<IntraLabel>,
    pub inter: Option<InterLabel>,
}

/// Direction bin of `goal` in the start frame and a closeness score
/// `max(1 − d/r, 0)`.
pub fn intra_node_labels(start: &ContinuousPose, goal: &ContinuousPose) -> IntraLabel {
    let d = start.distance(goal);
    let theta = (goal.y - start.y).atan2(goal.x - start.x) - start.theta;
    IntraLabel {
        direction_bin: direction_bin(normalize_angle(theta)),
        score: (1.0 - d / NODE_RADIUS).max(0.0),
    }
}

/// Obstacles within one node radius of `pose`, on a square window of world
/// cells just large enough for paths up to the explorable limit.
#[derive(Debug, Clone)]
pub struct LocalMap {
    grid: PlanningGrid,
    /// World cell at the window origin; may be negative near the border.
    origin: (i64, i64),
    source: (usize, usize),
    cell_size: f64,
}

impl LocalMap {
    pub fn new(world: &GridWorld, pose: &ContinuousPose) -> Result<Self> {
        let s = world.cell_size();
        let center = world
            .cell_at(pose.x, pose.y)
            .filter(|&(x, y)| world.is_free(x, y))
            .ok_or(Error::PoseInObstacle { x: pose.x, y: pose.y })?;
        let half = (EXPLORABLE_SLACK * NODE_RADIUS / s).ceil() as i64 + 2;
        let side = (2 * half + 1) as usize;
        let origin = (center.0 as i64 - half, center.1 as i64 - half);
        let mut blocked = vec![false; side * side];
        for v in 0..side {
            for u in 0..side {
                let (x, y) = (origin.0 + u as i64, origin.1 + v as i64);
                let (cx, cy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
                if (cx - pose.x).hypot(cy - pose.y) <= NODE_RADIUS {
                    blocked[v * side + u] = !world.is_free_i(x, y);
                }
            }
        }
        Ok(Self {
            grid: PlanningGrid::new(side, side, s, blocked)?,
            origin,
            source: (half as usize, half as usize),
            cell_size: s,
        })
    }

    pub fn grid(&self) -> &PlanningGrid {
        &self.grid
    }

    pub fn source(&self) -> (usize, usize) {
        self.source
    }

    /// Local cell holding world point `(x, y)`, if inside the window.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let u = (x / self.cell_size).floor() as i64 - self.origin.0;
        let v = (y / self.cell_size).floor() as i64 - self.origin.1;
        let n = self.grid.width() as i64;
        ((0..n).contains(&u) && (0..n).contains(&v)).then_some((u as usize, v as usize))
    }

    /// Travel distances from the pose cell, computed out to the explorable
    /// limit.
    pub fn distances(&self) -> DistanceField {
        let limit = EXPLORABLE_SLACK * NODE_RADIUS;
        fmm_field_until(&self.grid, &[self.source], |_, _, t| t > limit).expect("the pose cell is free")
    }
}

/// Probe point of direction `i`: one node radius away at bearing `i·2π/12`
/// from the pose heading.
pub fn probe_point(pose: &ContinuousPose, i: usize) -> (f64, f64) {
    let a = pose.theta + bin_angle(i);
    (pose.x + NODE_RADIUS * a.cos(), pose.y + NODE_RADIUS * a.sin())
}

/// Per direction, whether its probe point is reachable within the
/// explorable limit on the local obstacle map.
pub fn explorable_directions(world: &GridWorld, pose: &ContinuousPose) -> Result<[bool; DIRECTIONS]> {
    let local = LocalMap::new(world, pose)?;
    let field = local.distances();
    let limit = EXPLORABLE_SLACK * NODE_RADIUS;
    Ok(std::array::from_fn(|i| {
        let (x, y) = probe_point(pose, i);
        local.cell_of(x, y).is_some_and(|(u, v)| field.get(u, v) <= limit)
    }))
}

/// Geodesic distances over the world's free cells to one goal, 8-connected
/// without squeezing between diagonal obstacles.
#[derive(Debug, Clone)]
pub struct GoalField {
    field: DistanceField,
}

impl GoalField {
    pub fn new(world: &GridWorld, goal: &ContinuousPose) -> Result<Self> {
        let cell = world
            .cell_at(goal.x, goal.y)
            .filter(|&(x, y)| world.is_free(x, y))
            .ok_or(Error::PoseInObstacle { x: goal.x, y: goal.y })?;
        let (w, h) = (world.width(), world.height());
        let blocked = (0..w * h).map(|k| !world.is_free(k % w, k / w)).collect();
        let grid = PlanningGrid::new(w, h, world.cell_size(), blocked)?;
        Ok(Self {
            field: grid_dijkstra(&grid, &[cell], true),
        })
    }

    pub fn distance_at_cell(&self, x: usize, y: usize) -> f64 {
        self.field.get(x, y)
    }

    pub fn distance(&self, world: &GridWorld, x: f64, y: f64) -> f64 {
        world.cell_at(x, y).map_or(f64::INFINITY, |(i, j)| self.field.get(i, j))
    }
}

/// Farthest free point within one node radius along absolute `angle`: the
/// center of the last cell the ray crosses before leaving free space.
pub fn farthest_free_point(world: &GridWorld, pose: &ContinuousPose, angle: f64) -> (f64, f64) {
    let s = world.cell_size();
    let mut last = None;
    traverse_grid((pose.x / s, pose.y / s), (angle.cos(), angle.sin()), NODE_RADIUS / s, |x, y, _| {
        if !world.is_free_i(x, y) {
            return false;
        }
        last = Some((x as usize, y as usize));
        true
    });
    last.map_or((pose.x, pose.y), |(x, y)| world.cell_center(x, y))
}

/// `max(1 − d/20, 0)` for a geodesic distance `d`.
pub fn goal_score(distance: f64) -> f64 {
    (1.0 - distance / SCORE_HORIZON).max(0.0)
}

/// Score of the direction at absolute `angle` from `pose` toward the goal
/// behind `field`.
pub fn direction_score(world: &GridWorld, pose: &ContinuousPose, angle: f64, field: &GoalField) -> f64 {
    let (x, y) = farthest_free_point(world, pose, angle);
    goal_score(field.distance(world, x, y))
}

/// Goal scores of the twelve directions; zero for directions that are not
/// explorable.
pub fn semantic_score_labels(world: &GridWorld, start: &ContinuousPose, goal: &ContinuousPose) -> Result<[f64; DIRECTIONS]> {
    let field = GoalField::new(world, goal)?;
    let open = explorable_directions(world, start)?;
    inter_scores(world, start, &open, &field)
}

fn inter_scores(world: &GridWorld, start: &ContinuousPose, open: &[bool; DIRECTIONS], field: &GoalField) -> Result<[f64; DIRECTIONS]> {
    if !field.distance(world, start.x, start.y).is_finite() {
        return Err(Error::Unreachable(format!("goal unreachable from ({:.3}, {:.3})", start.x, start.y)));
    }
    Ok(std::array::from_fn(|i| {
        if open[i] {
            direction_score(world, start, start.theta + bin_angle(i), field)
        } else {
            0.0
        }
    }))
}

/// All labels for one ordered pose pair.
pub fn pair_labels(world: &GridWorld, start: &ContinuousPose, goal: &ContinuousPose) -> Result<PairLabels> {
    if connection_label(world, start, goal) {
        return Ok(PairLabels {
            connection: true,
            intra: Some(intra_node_labels(start, goal)),
            inter: None,
        });
    }
    let directions = explorable_directions(world, start)?;
    let scores = semantic_score_labels(world, start, goal)?;
    Ok(PairLabels {
        connection: false,
        intra: None,
        inter: Some(InterLabel { directions, scores }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopoNode {
    pub id: usize,
    pub pose: ContinuousPose,
    /// Mean scan range in each of the twelve sectors around the heading.
    pub signature: [f64; DIRECTIONS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ghost {
    pub id: usize,
    pub parent: usize,
    /// Absolute direction from the parent, radians.
    pub direction: f64,
    pub distance: f64,
}

impl Ghost {
    pub fn position(&self, parent: &TopoNode) -> (f64, f64) {
        (
            parent.pose.x + self.distance * self.direction.cos(),
            parent.pose.y + self.distance * self.direction.sin(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopoEdge {
    pub from: usize,
    pub to: usize,
    /// Pose of `to` in the frame of `from`.
    pub delta: PoseDelta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopoGraph {
    pub nodes: Vec<TopoNode>,
    pub ghosts: Vec<Ghost>,
    pub edges: Vec<TopoEdge>,
    pub current: Option<usize>,
    next_ghost: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateOutcome {
    Stayed(usize),
    Moved { from: usize, to: usize },
    Created(usize),
}

/// Twelve sector means of a scan, sector `i` centered on bearing `i·2π/12`.
pub fn depth_signature(scan: &DepthScan) -> [f64; DIRECTIONS] {
    let mut sum = [0.0; DIRECTIONS];
    let mut count = [0usize; DIRECTIONS];
    for ray in &scan.rays {
        let b = direction_bin(ray.bearing);
        sum[b] += ray.range;
        count[b] += 1;
    }
    std::array::from_fn(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 })
}

/// Absolute direction bin from node `a` toward node `b`.
fn heading_bin(a: &TopoNode, b: &TopoNode) -> usize {
    direction_bin((b.pose.y - a.pose.y).atan2(b.pose.x - a.pose.x))
}

impl TopoGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: usize) -> &TopoNode {
        &self.nodes[id]
    }

    pub fn neighbours(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.from == id {
                Some(e.to)
            } else if e.to == id {
                Some(e.from)
            } else {
                None
            }
        })
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbours(a).any(|n| n == b)
    }

    fn add_edge(&mut self, from: usize, to: usize) {
        if from == to || self.has_edge(from, to) {
            return;
        }
        let delta = self.nodes[from].pose.relative(&self.nodes[to].pose);
        self.edges.push(TopoEdge { from, to, delta });
        let (a, b) = (self.nodes[from], self.nodes[to]);
        let (ab, ba) = (heading_bin(&a, &b), heading_bin(&b, &a));
        self.ghosts.retain(|g| {
            !((g.parent == from && direction_bin(g.direction) == ab) || (g.parent == to && direction_bin(g.direction) == ba))
        });
    }

    /// Localizes `pose` in the graph, moving between or creating nodes.
    pub fn update(&mut self, world: &GridWorld, pose: &ContinuousPose, scan: &DepthScan) -> Result<UpdateOutcome> {
        if let Some(cur) = self.current {
            if connection_label(world, pose, &self.nodes[cur].pose) {
                return Ok(UpdateOutcome::Stayed(cur));
            }
        }
        let found = self
            .nodes
            .iter()
            .filter(|n| connection_label(world, pose, &n.pose))
            .min_by(|a, b| pose.distance(&a.pose).total_cmp(&pose.distance(&b.pose)))
            .map(|n| n.id);
        if let Some(to) = found {
            let from = self.current.expect("a localized node implies a current node");
            self.add_edge(from, to);
            self.current = Some(to);
            return Ok(UpdateOutcome::Moved { from, to });
        }
        let id = self.nodes.len();
        self.nodes.push(TopoNode {
            id,
            pose: *pose,
            signature: depth_signature(scan),
        });
        // Ghosts that land inside the new node's place are now known.
        let nodes = &self.nodes;
        self.ghosts.retain(|g| {
            let (x, y) = g.position(&nodes[g.parent]);
            !connection_label(world, pose, &ContinuousPose::new(x, y, 0.0))
        });
        let open = explorable_directions(world, pose)?;
        for (i, ok) in open.iter().enumerate() {
            if *ok {
                let direction = normalize_angle(pose.theta + bin_angle(i));
                self.ghosts.push(Ghost {
                    id: self.next_ghost,
                    parent: id,
                    direction,
                    distance: NODE_RADIUS,
                });
                self.next_ghost += 1;
            }
        }
        if let Some(prev) = self.current {
            self.add_edge(prev, id);
        }
        self.current = Some(id);
        self.prune_ghosts();
        Ok(UpdateOutcome::Created(id))
    }

    /// Drops ghosts pointing where their parent already has an edge.
    fn prune_ghosts(&mut self) {
        let taken: Vec<(usize, usize)> = self
            .edges
            .iter()
            .flat_map(|e| {
                let (a, b) = (&self.nodes[e.from], &self.nodes[e.to]);
                [(e.from, heading_bin(a, b)), (e.to, heading_bin(b, a))]
            })
            .collect();
        self.ghosts
            .retain(|g| !taken.contains(&(g.parent, direction_bin(g.direction))));
    }

    /// Checks ghost exclusivity and edge consistency.
    pub fn validate(&self) -> Result<()> {
        for g in &self.ghosts {
            if g.parent >= self.nodes.len() {
                return Err(Error::InvariantViolation(format!("ghost {} has no parent", g.id)));
            }
            let parent = &self.nodes[g.parent];
            let bin = direction_bin(g.direction);
            if self.neighbours(g.parent).any(|n| heading_bin(parent, &self.nodes[n]) == bin) {
                return Err(Error::InvariantViolation(format!("ghost {} shares a direction with an edge", g.id)));
            }
        }
        for e in &self.edges {
            let expect = self.nodes[e.from].pose.relative(&self.nodes[e.to].pose);
            if (expect.x - e.delta.x).abs() > 1e-9 || (expect.y - e.delta.y).abs() > 1e-9 {
                return Err(Error::InvariantViolation(format!("edge {}-{} disagrees with node poses", e.from, e.to)));
            }
        }
        Ok(())
    }

    /// Dijkstra over nodes with edge weight equal to the stored translation.
    /// Returns the node path from `from` to `to`, inclusive.
    pub fn shortest_path(&self, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Reverse((0u64, from)));
        while let Some(Reverse((bits, u))) = heap.pop() {
            let d = f64::from_bits(bits);
            if d > dist[u] {
                continue;
            }
            for e in &self.edges {
                let v = match (e.from == u, e.to == u) {
                    (true, _) => e.to,
                    (_, true) => e.from,
                    _ => continue,
                };
                let nd = d + e.delta.translation();
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(Reverse((nd.to_bits(), v)));
                }
            }
        }
        if !dist[to].is_finite() {
            return Err(Error::Unreachable(format!("node {to} is not connected to node {from}")));
        }
        let mut path = vec![to];
        while *path.last().unwrap() != from {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        Ok((path, dist[to]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SubgoalTarget {
    Node(usize),
    Pose(ContinuousPose),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Waypoint {
    Node(usize),
    Ghost(usize),
    /// The goal itself, inside the current node.
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub next: Waypoint,
    /// Pose of the waypoint in the current node's frame.
    pub delta: PoseDelta,
    /// Score of the chosen ghost when planning toward an unknown goal.
    pub score: Option<f64>,
}

/// Next hop toward a target: along the node graph when the target is a
/// known place, otherwise toward the best-scoring ghost.
pub fn plan_subgoal(graph: &TopoGraph, world: &GridWorld, target: &SubgoalTarget) -> Result<Subgoal> {
    let cur = graph
        .current
        .ok_or_else(|| Error::InvariantViolation("graph has no current node".into()))?;
    let here = graph.nodes[cur].pose;
    let toward = |node: usize| -> Result<Subgoal> {
        let (path, _) = graph.shortest_path(cur, node)?;
        let next = *path.get(1).unwrap_or(&cur);
        Ok(Subgoal {
            next: Waypoint::Node(next),
            delta: here.relative(&graph.nodes[next].pose),
            score: None,
        })
    };
    let goal = match target {
        SubgoalTarget::Node(id) => {
            if *id >= graph.nodes.len() {
                return Err(Error::OutOfBounds(format!("node {id}")));
            }
            return toward(*id);
        }
        SubgoalTarget::Pose(p) => *p,
    };
    let home = graph
        .nodes
        .iter()
        .filter(|n| connection_label(world, &n.pose, &goal))
        .min_by(|a, b| a.pose.distance(&goal).total_cmp(&b.pose.distance(&goal)));
    if let Some(node) = home {
        if node.id == cur {
            return Ok(Subgoal {
                next: Waypoint::Goal,
                delta: here.relative(&goal),
                score: None,
            });
        }
        return toward(node.id);
    }
    let field = GoalField::new(world, &goal)?;
    let best = graph
        .ghosts
        .iter()
        .map(|g| (g, direction_score(world, &graph.nodes[g.parent].pose, g.direction, &field)))
        .fold(None::<(&Ghost, f64)>, |best, (g, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((g, s)),
        })
        .ok_or_else(|| Error::Unreachable("goal is outside the graph and no ghost is left".into()))?;
    let (ghost, score) = best;
    if ghost.parent == cur {
        let (x, y) = ghost.position(&graph.nodes[cur]);
        return Ok(Subgoal {
            next: Waypoint::Ghost(ghost.id),
            delta: here.relative(&ContinuousPose::new(x, y, ghost.direction)),
            score: Some(score),
        });
    }
    let mut plan = toward(ghost.parent)?;
    plan.score = Some(score);
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub start: ContinuousPose,
    pub goal: ContinuousPose,
    pub labels: PairLabels,
}

/// Uniform free-space pose: a random free cell, a uniform point inside it
/// and a uniform heading.
pub fn random_free_pose<R: Rng + ?Sized>(world: &GridWorld, free: &[(usize, usize)], rng: &mut R) -> ContinuousPose {
    let (x, y) = free[rng.random_range(0..free.len())];
    let s = world.cell_size();
    ContinuousPose::new(
        (x as f64 + rng.random::<f64>()) * s,
        (y as f64 + rng.random::<f64>()) * s,
        rng.random_range(-PI..PI),
    )
}

/// Labels every ordered pair of `n_poses` random poses, excluding
/// self-pairs: `n·(n − 1)` rows, ordered by start then goal index.
pub fn generate_label_dataset(world: &GridWorld, n_poses: usize, seed: u64) -> Result<Vec<LabeledPair>> {
    if n_poses < 2 {
        return Err(Error::Dimension(format!("need at least two poses, got {n_poses}")));
    }
    let free: Vec<_> = world.free_cells().collect();
    if free.is_empty() {
        return Err(Error::InvalidWorld("world has no free cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<_> = (0..n_poses).map(|_| random_free_pose(world, &free, &mut rng)).collect();
    let fields = poses.par_iter().map(|g| GoalField::new(world, g)).collect::<Result<Vec<_>>>()?;
    let rows = poses
        .par_iter()
        .enumerate()
        .map(|(i, start)| -> Result<Vec<LabeledPair>> {
            let mut open = None;
            let mut out = Vec::with_capacity(n_poses - 1);
            for (j, goal) in poses.iter().enumerate() {
                if i == j {
                    continue;
                }
                let labels = if connection_label(world, start, goal) {
                    PairLabels {
                        connection: true,
                        intra: Some(intra_node_labels(start, goal)),
                        inter: None,
                    }
                } else {
                    let directions = match open {
                        Some(d) => d,
                        None => *open.insert(explorable_directions(world, start)?),
                    };
                    PairLabels {
                        connection: false,
                        intra: None,
                        inter: Some(InterLabel {
                            directions,
                            scores: inter_scores(world, start, &directions, &fields[j])?,
                        }),
                    }
                };
                out.push(LabeledPair {
                    start: *start,
                    goal: *goal,
                    labels,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Writes the dataset as CSV: both poses, the connection flag, intra
/// labels, then twelve direction flags and twelve scores (empty when absent).
pub fn write_label_csv<W: Write>(pairs: &[LabeledPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["sx", "sy", "stheta", "gx", "gy", "gtheta", "connection", "direction_bin", "score"]
        .map(String::from)
        .to_vec();
    header.extend((0..DIRECTIONS).map(|i| format!("dir_{i}")));
    header.extend((0..DIRECTIONS).map(|i| format!("score_{i}")));
    w.write_record(&header)?;
    for p in pairs {
        let mut row = vec![
            p.start.x.to_string(),
            p.start.y.to_string(),
            p.start.theta.to_string(),
            p.goal.x.to_string(),
            p.goal.y.to_string(),
            p.goal.theta.to_string(),
            u8::from(p.labels.connection).to_string(),
        ];
        match p.labels.intra {
            Some(l) => row.extend([l.direction_bin.to_string(), l.score.to_string()]),
            None => row.extend([String::new(), String::new()]),
        }
        match p.labels.inter {
            Some(l) => {
                row.extend(l.directions.iter().map(|d| u8::from(*d).to_string()));
                row.extend(l.scores.iter().map(|s| s.to_string()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2 * DIRECTIONS)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
