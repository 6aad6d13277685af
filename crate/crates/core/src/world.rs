//! Deterministic 2D environments.
//!
//! A [`GridWorld`] is a binary obstacle grid with optional per-cell semantic
//! categories. Cell `(x, y)` covers `[x·s, (x+1)·s) × [y·s, (y+1)·s)` in world
//! meters, with `y` pointing north. Discrete agents live on cells with one of
//! four headings; continuous agents are discs moving in the plane.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModelSet;

/// Number of discrete headings.
pub const ORIENTATIONS: usize = 4;

/// Radius of the continuous agent disc, meters.
pub const AGENT_RADIUS: f64 = 0.10;

/// Forward step length of the continuous agent, meters.
pub const FORWARD_STEP: f64 = 0.25;

/// On-the-spot turn angle of the continuous agent, radians.
pub const TURN_ANGLE: f64 = 10.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Obstacle,
}

/// Agent actions. `Stop` is only meaningful to goal-task episode runners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    /// The three motion actions, in planner enumeration order.
    pub const MOVES: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
            Action::Stop => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
            Action::Stop => "stop",
        }
    }

    /// Control command of the continuous agent for this action.
    pub fn control(self) -> PoseDelta {
        match self {
            Action::Forward => PoseDelta::new(FORWARD_STEP, 0.0, 0.0),
            Action::TurnLeft => PoseDelta::new(0.0, 0.0, TURN_ANGLE),
            Action::TurnRight => PoseDelta::new(0.0, 0.0, -TURN_ANGLE),
            Action::Stop => PoseDelta::default(),
        }
    }
}

/// Heading of a discrete agent, counter-clockwise from east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    East = 0,
    North = 1,
    West = 2,
    South = 3,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::East,
        Orientation::North,
        Orientation::West,
        Orientation::South,
    ];

    pub fn from_index(i: usize) -> Orientation {
        Self::ALL[i % ORIENTATIONS]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn left(self) -> Orientation {
        Self::from_index(self.index() + 1)
    }

    pub fn right(self) -> Orientation {
        Self::from_index(self.index() + 3)
    }

    /// Unit cell offset in this heading.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Orientation::East => (1, 0),
            Orientation::North => (0, 1),
            Orientation::West => (-1, 0),
            Orientation::South => (0, -1),
        }
    }

    pub fn angle(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscretePose {
    pub x: usize,
    pub y: usize,
    pub o: Orientation,
}

impl DiscretePose {
    pub fn new(x: usize, y: usize, o: Orientation) -> Self {
        Self { x, y, o }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContinuousPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ContinuousPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn distance(&self, other: &ContinuousPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pose of `other` expressed in this pose's frame.
    pub fn relative(&self, other: &ContinuousPose) -> PoseDelta {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        PoseDelta::new(
            c * dx + s * dy,
            -s * dx + c * dy,
            normalize_angle(other.theta - self.theta),
        )
    }
}

/// A rigid-motion increment `(x, y, o)` in the agent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub x: f64,
    pub y: f64,
    pub o: f64,
}

impl PoseDelta {
    pub fn new(x: f64, y: f64, o: f64) -> Self {
        Self { x, y, o }
    }

    pub fn translation(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Add for PoseDelta {
    type Output = PoseDelta;
    fn add(self, rhs: PoseDelta) -> PoseDelta {
        PoseDelta::new(self.x + rhs.x, self.y + rhs.y, self.o + rhs.o)
    }
}

impl From<[f64; 3]> for PoseDelta {
    fn from(v: [f64; 3]) -> Self {
        PoseDelta::new(v[0], v[1], v[2])
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Applies a control increment: translation in the agent frame, then rotation.
pub fn apply_control(pose: &ContinuousPose, du: &PoseDelta) -> ContinuousPose {
    let (s, c) = pose.theta.sin_cos();
    ContinuousPose::new(
        pose.x + c * du.x - s * du.y,
        pose.y + s * du.x + c * du.y,
        pose.theta + du.o,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    semantic: Vec<u8>,
    cell_size: f64,
}

impl GridWorld {
    /// Builds a world from row-major cells (`index = y * width + x`).
    ///
    /// Only shape and the semantic/free invariant are checked here; use
    /// [`GridWorld::validate`] for the closed-boundary and connectivity rules.
    pub fn new(
        width: usize,
        height: usize,
        cells: Vec<Cell>,
        semantic: Vec<u8>,
        cell_size: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("{width}x{height}")));
        }
        if cells.len() != width * height || semantic.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} cells, got {} cells and {} semantic ids",
                width * height,
                cells.len(),
                semantic.len()
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Dimension(format!("cell size {cell_size}")));
        }
        if let Some(i) = (0..cells.len()).find(|&i| cells[i] == Cell::Free && semantic[i] != 0) {
            return Err(Error::InvalidWorld(format!(
                "free cell ({}, {}) carries semantic id {}",
                i % width,
                i / width,
                semantic[i]
            )));
        }
        Ok(Self {
            width,
            height,
            cells,
            semantic,
            cell_size,
        })
    }

    /// An all-free world; useful for open-space geometry.
    pub fn open(width: usize, height: usize, cell_size: f64) -> Self {
        Self::new(
            width,
            height,
            vec![Cell::Free; width * height],
            vec![0; width * height],
            cell_size,
        )
        .expect("valid open world")
    }

    /// A closed rectangular room: boundary walls, free interior.
    pub fn room(width: usize, height: usize, cell_size: f64) -> Self {
        let mut w = Self::open(width, height, cell_size);
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    w.set_obstacle(x, y, 0);
                }
            }
        }
        w
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[self.index(x, y)]
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.cell(x, y) == Cell::Free
    }

    /// Free test with out-of-bounds treated as obstacle.
    pub fn is_free_i(&self, x: i64, y: i64) -> bool {
        self.in_bounds(x, y) && self.is_free(x as usize, y as usize)
    }

    pub fn semantic(&self, x: usize, y: usize) -> u8 {
        self.semantic[self.index(x, y)]
    }

    pub fn set_free(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.cells[i] = Cell::Free;
        self.semantic[i] = 0;
    }

    pub fn set_obstacle(&mut self, x: usize, y: usize, category: u8) {
        let i = self.index(x, y);
        self.cells[i] = Cell::Obstacle;
        self.semantic[i] = category;
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_free(x, y))
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Free).count()
    }

    /// Largest semantic id present.
    pub fn max_category(&self) -> u8 {
        self.semantic.iter().copied().max().unwrap_or(0)
    }

    /// World-meter extent `(width, height)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    /// Cell containing a world point, if inside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = (x / self.cell_size).floor();
        let cy = (y / self.cell_size).floor();
        if cx < 0.0 || cy < 0.0 {
            return None;
        }
        let (cx, cy) = (cx as usize, cy as usize);
        (cx < self.width && cy < self.height).then_some((cx, cy))
    }

    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            (x as f64 + 0.5) * self.cell_size,
            (y as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.cell_at(x, y).is_some_and(|(cx, cy)| self.is_free(cx, cy))
    }

    /// Checks the closed-boundary, free-semantics and connectivity invariants.
    pub fn validate(&self) -> Result<()> {
        for x in 0..self.width {
            for y in [0, self.height - 1] {
                if self.is_free(x, y) {
                    return Err(Error::InvalidWorld(format!("boundary cell ({x}, {y}) is free")));
                }
            }
        }
        for y in 0..self.height {
            for x in [0, self.width - 1] {
                if self.is_free(x, y) {
                    return Err(Error::InvalidWorld(format!("boundary cell ({x}, {y}) is free")));
                }
            }
        }
        let Some(start) = self.free_cells().next() else {
            return Ok(());
        };
        let reached = self.flood_fill(start).len();
        let total = self.free_count();
        if reached != total {
            return Err(Error::InvalidWorld(format!(
                "free space is disconnected: {reached} of {total} free cells reachable from ({}, {})",
                start.0, start.1
            )));
        }
        Ok(())
    }

    /// 4-connected free cells reachable from `start`.
    pub fn flood_fill(&self, start: (usize, usize)) -> Vec<(usize, usize)> {
        let mut seen = vec![false; self.cells.len()];
        let mut out = Vec::new();
        if !self.is_free(start.0, start.1) {
            return out;
        }
        let mut queue = VecDeque::from([start]);
        seen[self.index(start.0, start.1)] = true;
        while let Some((x, y)) = queue.pop_front() {
            out.push((x, y));
            for o in Orientation::ALL {
                let (dx, dy) = o.offset();
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if self.is_free_i(nx, ny) {
                    let i = self.index(nx as usize, ny as usize);
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
        out
    }

    /// Loads the text world format: a `W H cell_size` header, then `H` rows of
    /// `W` characters (`#` obstacle, `.` free, `A`-`Z` obstacle with category
    /// 1-26). The first row is the northernmost.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            field: "header".into(),
            message: "empty world file".into(),
        })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let field_err = |field: &str, message: String| Error::Parse {
            line: hline + 1,
            field: field.into(),
            message,
        };
        if parts.len() != 3 {
            return Err(field_err("header", format!("expected `W H cell_size`, got `{header}`")));
        }
        let width: usize = parts[0]
            .parse()
            .map_err(|e| field_err("width", format!("{e}")))?;
        let height: usize = parts[1]
            .parse()
            .map_err(|e| field_err("height", format!("{e}")))?;
        let cell_size: f64 = parts[2]
            .parse()
            .map_err(|e| field_err("cell_size", format!("{e}")))?;
        let mut cells = vec![Cell::Obstacle; width * height];
        let mut semantic = vec![0u8; width * height];
        let mut rows = 0;
        for (row, (lno, line)) in lines.enumerate() {
            if row >= height {
                return Err(Error::Parse {
                    line: lno + 1,
                    field: "rows".into(),
                    message: format!("more than {height} rows"),
                });
            }
            let chars: Vec<char> = line.trim_end().chars().collect();
            if chars.len() != width {
                return Err(Error::Parse {
                    line: lno + 1,
                    field: format!("row {row}"),
                    message: format!("expected {width} characters, got {}", chars.len()),
                });
            }
            let y = height - 1 - row;
            for (x, ch) in chars.into_iter().enumerate() {
                let i = y * width + x;
                match ch {
                    '.' => cells[i] = Cell::Free,
                    '#' => {}
                    'A'..='Z' => semantic[i] = ch as u8 - b'A' + 1,
                    other => {
                        return Err(Error::Parse {
                            line: lno + 1,
                            field: format!("row {row} column {x}"),
                            message: format!("unknown cell character `{other}`"),
                        })
                    }
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(Error::Parse {
                line: hline + 1,
                field: "rows".into(),
                message: format!("expected {height} rows, got {rows}"),
            });
        }
        let world = Self::new(width, height, cells, semantic, cell_size)?;
        world.validate()?;
        Ok(world)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1));
        let _ = writeln!(out, "{} {} {}", self.width, self.height, self.cell_size);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(match (self.cell(x, y), self.semantic(x, y)) {
                    (Cell::Free, _) => '.',
                    (Cell::Obstacle, 0) => '#',
                    (Cell::Obstacle, c) => (b'A' + (c - 1).min(25)) as char,
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Scales a maze into a metric world: lattice rows/columns at odd indices
    /// (passages) become `passage` cells wide, even ones (walls) `wall` cells.
    pub fn inflate_maze(&self, passage: usize, wall: usize, cell_size: f64) -> Result<Self> {
        if passage == 0 || wall == 0 {
            return Err(Error::Dimension("passage and wall widths must be positive".into()));
        }
        let span = |i: usize| if i % 2 == 1 { passage } else { wall };
        let starts = |n: usize| {
            let mut v = Vec::with_capacity(n + 1);
            let mut acc = 0;
            for i in 0..n {
                v.push(acc);
                acc += span(i);
            }
            v.push(acc);
            v
        };
        let xs = starts(self.width);
        let ys = starts(self.height);
        let (w, h) = (xs[self.width], ys[self.height]);
        let mut cells = vec![Cell::Obstacle; w * h];
        let mut semantic = vec![0u8; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                let (c, s) = (self.cell(x, y), self.semantic(x, y));
                for fy in ys[y]..ys[y + 1] {
                    for fx in xs[x]..xs[x + 1] {
                        cells[fy * w + fx] = c;
                        semantic[fy * w + fx] = s;
                    }
                }
            }
        }
        Self::new(w, h, cells, semantic, cell_size)
    }

    /// Paints `n_objects` semantic objects onto wall faces. Each object is a run
    /// of up to `length` face cells; categories cycle through `1..=categories`
    /// and distinct objects keep a Chebyshev gap of at least 3 cells.
    pub fn paint_objects(&mut self, categories: u8, n_objects: usize, length: usize, seed: u64) {
        if categories == 0 || n_objects == 0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let faces: Vec<(usize, usize)> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| !self.is_free(x, y) && self.is_face(x, y))
            .collect();
        if faces.is_empty() {
            return;
        }
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n_objects && attempts < 200 * n_objects {
            attempts += 1;
            let anchor = faces[rng.random_range(0..faces.len())];
            let category = (placed % categories as usize) as u8 + 1;
            let mut object = vec![anchor];
            let mut queue = VecDeque::from([anchor]);
            while let Some((x, y)) = queue.pop_front() {
                if object.len() >= length {
                    break;
                }
                for o in Orientation::ALL {
                    let (dx, dy) = o.offset();
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !self.in_bounds(nx, ny) || object.len() >= length {
                        continue;
                    }
                    let n = (nx as usize, ny as usize);
                    if !self.is_free(n.0, n.1) && self.is_face(n.0, n.1) && !object.contains(&n) {
                        object.push(n);
                        queue.push_back(n);
                    }
                }
            }
            let clear = object.iter().all(|&(x, y)| self.semantic_gap_clear(x, y, 3));
            if clear {
                for &(x, y) in &object {
                    self.set_obstacle(x, y, category);
                }
                placed += 1;
            }
        }
    }

    fn is_face(&self, x: usize, y: usize) -> bool {
        Orientation::ALL.iter().any(|o| {
            let (dx, dy) = o.offset();
            self.is_free_i(x as i64 + dx, y as i64 + dy)
        })
    }

    fn semantic_gap_clear(&self, x: usize, y: usize, gap: i64) -> bool {
        for dy in -gap..=gap {
            for dx in -gap..=gap {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if self.in_bounds(nx, ny) && self.semantic(nx as usize, ny as usize) != 0 {
                    return false;
                }
            }
        }
        true
    }

    /// True if a disc of `radius` centered at `(x, y)` overlaps an obstacle
    /// cell or leaves the grid.
    pub fn disc_collides(&self, x: f64, y: f64, radius: f64) -> bool {
        let s = self.cell_size;
        let x0 = ((x - radius) / s).floor() as i64;
        let x1 = ((x + radius) / s).floor() as i64;
        let y0 = ((y - radius) / s).floor() as i64;
        let y1 = ((y + radius) / s).floor() as i64;
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                if self.is_free_i(cx, cy) {
                    continue;
                }
                let nx = x.clamp(cx as f64 * s, (cx + 1) as f64 * s);
                let ny = y.clamp(cy as f64 * s, (cy + 1) as f64 * s);
                if (x - nx).hypot(y - ny) < radius {
                    return true;
                }
            }
        }
        false
    }
}

/// Disjoint-set forest with path halving and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Edges of the odd maze lattice in canonical order: lattice cells row-major,
/// east edge before north edge. Each edge is `(cell_a, cell_b)` in lattice
/// indices `j * cols + i`.
pub fn maze_lattice_edges(cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let a = j * cols + i;
            if i + 1 < cols {
                edges.push((a, a + 1));
            }
            if j + 1 < rows {
                edges.push((a, a + cols));
            }
        }
    }
    edges
}

/// Generates a perfect maze with Kruskal's algorithm on the odd lattice.
///
/// The seed stream is a `ChaCha8Rng` seeded from `seed`, used once to shuffle
/// [`maze_lattice_edges`]; edges are then accepted in shuffled order.
pub fn generate_maze(width: usize, height: usize, seed: u64) -> Result<GridWorld> {
    if width < 5 || height < 5 || width % 2 == 0 || height % 2 == 0 {
        return Err(Error::Dimension(format!(
            "maze size must be odd and at least 5, got {width}x{height}"
        )));
    }
    let (cols, rows) = ((width - 1) / 2, (height - 1) / 2);
    let mut edges = maze_lattice_edges(cols, rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    let mut cells = vec![Cell::Obstacle; width * height];
    let lattice_xy = |k: usize| (2 * (k % cols) + 1, 2 * (k / cols) + 1);
    for k in 0..cols * rows {
        let (x, y) = lattice_xy(k);
        cells[y * width + x] = Cell::Free;
    }
    let mut sets = DisjointSet::new(cols * rows);
    for (a, b) in edges {
        if sets.union(a, b) {
            let (ax, ay) = lattice_xy(a);
            let (bx, by) = lattice_xy(b);
            let (wx, wy) = ((ax + bx) / 2, (ay + by) / 2);
            cells[wy * width + wx] = Cell::Free;
        }
    }
    GridWorld::new(width, height, cells, vec![0; width * height], 1.0)
}

/// Next discrete pose. Forward into an obstacle is a legal no-op.
pub fn discrete_step(world: &GridWorld, pose: DiscretePose, action: Action) -> DiscretePose {
    match action {
        Action::TurnLeft => DiscretePose { o: pose.o.left(), ..pose },
        Action::TurnRight => DiscretePose { o: pose.o.right(), ..pose },
        Action::Stop => pose,
        Action::Forward => {
            let (dx, dy) = pose.o.offset();
            let (nx, ny) = (pose.x as i64 + dx, pose.y as i64 + dy);
            if world.is_free_i(nx, ny) {
                DiscretePose { x: nx as usize, y: ny as usize, ..pose }
            } else {
                pose
            }
        }
    }
}

/// Number of consecutive free cells ahead of the agent.
pub fn depth_observation(world: &GridWorld, pose: DiscretePose) -> usize {
    let (dx, dy) = pose.o.offset();
    let (mut x, mut y) = (pose.x as i64, pose.y as i64);
    let mut d = 0;
    loop {
        x += dx;
        y += dy;
        if !world.is_free_i(x, y) {
            return d;
        }
        d += 1;
    }
}

/// Depth observation of every state, indexed like a belief grid
/// (`o`, then `y`, then `x`); obstacle states hold `None`.
#[derive(Debug, Clone)]
pub struct DepthTable {
    width: usize,
    height: usize,
    depths: Vec<Option<u16>>,
}

impl DepthTable {
    pub fn new(world: &GridWorld) -> Self {
        let (w, h) = (world.width(), world.height());
        let mut depths = vec![None; ORIENTATIONS * w * h];
        for o in Orientation::ALL {
            for y in 0..h {
                for x in 0..w {
                    if world.is_free(x, y) {
                        let d = depth_observation(world, DiscretePose::new(x, y, o));
                        depths[(o.index() * h + y) * w + x] = Some(d as u16);
                    }
                }
            }
        }
        Self {
            width: w,
            height: h,
            depths,
        }
    }

    pub fn get(&self, state: usize) -> Option<usize> {
        self.depths[state].map(usize::from)
    }

    pub fn at(&self, pose: DiscretePose) -> Option<usize> {
        self.get((pose.o.index() * self.height + pose.y) * self.width + pose.x)
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// One range sample of a [`DepthScan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRay {
    /// Bearing relative to the agent heading, radians.
    pub bearing: f64,
    /// Range in meters, clamped at the scan's `max_range`.
    pub range: f64,
    /// Semantic id of the hit cell (0 when nothing was hit).
    pub semantic: u8,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthScan {
    pub rays: Vec<ScanRay>,
    pub max_range: f64,
}

/// Visits grid cells pierced by a ray, in order (Amanatides-Woo traversal).
///
/// Coordinates are in cell units. `visit(cx, cy, t_enter)` is called for the
/// starting cell with `t_enter = 0` and then for each subsequent cell with the
/// ray parameter at which it is entered; traversal stops when `visit` returns
/// false or `t_enter` exceeds `max_t`.
pub fn traverse_grid(
    origin: (f64, f64),
    dir: (f64, f64),
    max_t: f64,
    mut visit: impl FnMut(i64, i64, f64) -> bool,
) {
    let (mut cx, mut cy) = (origin.0.floor() as i64, origin.1.floor() as i64);
    let step_x: i64 = if dir.0 > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dir.1 > 0.0 { 1 } else { -1 };
    let next_boundary = |o: f64, c: i64, d: f64| {
        if d > 0.0 {
            (c as f64 + 1.0 - o) / d
        } else if d < 0.0 {
            (o - c as f64) / -d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_x = next_boundary(origin.0, cx, dir.0);
    let mut t_max_y = next_boundary(origin.1, cy, dir.1);
    let t_delta_x = if dir.0 != 0.0 { 1.0 / dir.0.abs() } else { f64::INFINITY };
    let t_delta_y = if dir.1 != 0.0 { 1.0 / dir.1.abs() } else { f64::INFINITY };
    if !visit(cx, cy, 0.0) {
        return;
    }
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t > max_t || !visit(cx, cy, t) {
            return;
        }
    }
}

/// Casts `n_rays` rays across `fov` centered on the pose heading.
///
/// Ray `i` has bearing `fov·(i/(n_rays−1) − ½)` (a single ray looks straight
/// ahead). The range of a hit is the distance to the entry face of the first
/// obstacle cell; rays that leave the grid or exceed `max_range` report
/// `max_range` with semantic id 0.
pub fn raycast(
    world: &GridWorld,
    pose: &ContinuousPose,
    n_rays: usize,
    fov: f64,
    max_range: f64,
) -> Result<DepthScan> {
    if n_rays == 0 || !(max_range > 0.0) {
        return Err(Error::Dimension(format!(
            "raycast needs n_rays >= 1 and max_range > 0 (got {n_rays}, {max_range})"
        )));
    }
    if !world.is_free_point(pose.x, pose.y) {
        return Err(Error::PoseInObstacle {
            x: pose.x,
            y: pose.y,
        });
    }
    let rays = (0..n_rays)
        .map(|i| {
            let bearing = if n_rays == 1 {
                0.0
            } else {
                fov * (i as f64 / (n_rays - 1) as f64 - 0.5)
            };
            cast_ray(world, pose, bearing, max_range)
        })
        .collect();
    Ok(DepthScan { rays, max_range })
}

/// Casts a single ray at `bearing` relative to the pose heading.
pub fn cast_ray(world: &GridWorld, pose: &ContinuousPose, bearing: f64, max_range: f64) -> ScanRay {
    let s = world.cell_size();
    let angle = pose.theta + bearing;
    let dir = (angle.cos(), angle.sin());
    let mut out = ScanRay {
        bearing,
        range: max_range,
        semantic: 0,
        hit: false,
    };
    traverse_grid((pose.x / s, pose.y / s), dir, max_range / s, |cx, cy, t| {
        if !world.in_bounds(cx, cy) {
            return false;
        }
        if t > 0.0 && !world.is_free(cx as usize, cy as usize) {
            out.range = (t * s).min(max_range);
            out.semantic = world.semantic(cx as usize, cy as usize);
            out.hit = true;
            return false;
        }
        true
    });
    out
}

/// Result of one continuous simulator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pose: ContinuousPose,
    /// Odometry reading: true motion in the previous agent frame plus sensor noise.
    pub sensed: PoseDelta,
    pub collided: bool,
}

/// Advances a continuous agent by one action.
///
/// The executed command is the action's control plus sampled actuation noise;
/// translation is swept along a straight segment and truncated at the first
/// contact of the agent disc with an obstacle. Noise draws happen in a fixed
/// order (actuation, then sensor) so episodes replay exactly from a seed.
pub fn continuous_step<R: Rng + ?Sized>(
    world: &GridWorld,
    pose: &ContinuousPose,
    action: Action,
    noise: Option<&NoiseModelSet>,
    rng: &mut R,
) -> StepOutcome {
    if action == Action::Stop {
        return StepOutcome {
            pose: *pose,
            sensed: PoseDelta::default(),
            collided: false,
        };
    }
    let mut command = action.control();
    if let Some(model) = noise.and_then(|n| n.actuation(action)) {
        command = command + model.sample_delta(rng);
    }
    let target = apply_control(pose, &command);
    let (moved, collided) = sweep_disc(world, pose, (target.x, target.y));
    let true_pose = ContinuousPose::new(moved.0, moved.1, target.theta);
    let mut sensed = pose.relative(&true_pose);
    if let Some(model) = noise.and_then(|n| n.sensor(action)) {
        sensed = sensed + model.sample_delta(rng);
    }
    StepOutcome {
        pose: true_pose,
        sensed,
        collided,
    }
}

fn sweep_disc(world: &GridWorld, from: &ContinuousPose, to: (f64, f64)) -> ((f64, f64), bool) {
    let (dx, dy) = (to.0 - from.x, to.1 - from.y);
    let length = dx.hypot(dy);
    if length == 0.0 {
        return ((from.x, from.y), false);
    }
    let at = |f: f64| (from.x + f * dx, from.y + f * dy);
    let collides = |f: f64| {
        let (x, y) = at(f);
        world.disc_collides(x, y, AGENT_RADIUS)
    };
    let n = ((length / (world.cell_size() * 0.125)).ceil() as usize).max(1);
    let mut free = 0.0;
    for k in 1..=n {
        let f = k as f64 / n as f64;
        if collides(f) {
            let mut blocked = f;
            for _ in 0..30 {
                let mid = 0.5 * (free + blocked);
                if collides(mid) {
                    blocked = mid;
                } else {
                    free = mid;
                }
            }
            return (at(free), true);
        }
        free = f;
    }
    (at(1.0), false)
}
