//! Multi-channel top-down maps built from depth scans.
//!
//! Channel order is obstacle, explored, then one channel per semantic
//! category `1..=C`. Maps are axis-aligned with the world; the world point
//! `origin` sits at the center of cell `(M/2, M/2)`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{traverse_grid, ContinuousPose, DepthScan, GridWorld};

pub const OBSTACLE: usize = 0;
pub const EXPLORED: usize = 1;

pub const DEFAULT_MAP_SIZE: usize = 480;
pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_VISION_RANGE: f64 = 3.0;

/// Cells at or above this value count as set when thresholding.
pub const THRESHOLD: f32 = 0.5;

/// Semantic curiosity reward coefficient.
pub const CURIOSITY_SCALE: f64 = 2.5e-3;

/// Channel index of semantic category `category` (1-based).
pub fn semantic_channel(category: usize) -> usize {
    1 + category
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMap {
    size: usize,
    categories: usize,
    resolution: f64,
    origin: (f64, f64),
    data: Vec<f32>,
}

impl MetricMap {
    pub fn new(size: usize, categories: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if size == 0 || !(resolution > 0.0) {
            return Err(Error::Dimension(format!("map size {size}, resolution {resolution}")));
        }
        Ok(Self {
            size,
            categories,
            resolution,
            origin,
            data: vec![0.0; (categories + 2) * size * size],
        })
    }

    pub fn with_defaults(categories: usize, origin: (f64, f64)) -> Self {
        Self::new(DEFAULT_MAP_SIZE, categories, DEFAULT_RESOLUTION, origin).expect("defaults are valid")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn channels(&self) -> usize {
        self.categories + 2
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    fn index(&self, channel: usize, i: usize, j: usize) -> usize {
        (channel * self.size + j) * self.size + i
    }

    pub fn get(&self, channel: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(channel, i, j)]
    }

    pub fn set(&mut self, channel: usize, i: usize, j: usize, value: f32) {
        let k = self.index(channel, i, j);
        self.data[k] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn is_explored(&self, i: usize, j: usize) -> bool {
        self.get(EXPLORED, i, j) >= THRESHOLD
    }

    pub fn is_obstacle(&self, i: usize, j: usize) -> bool {
        self.get(OBSTACLE, i, j) >= THRESHOLD
    }

    /// Continuous grid coordinates of a world point; cell centers are integers.
    pub fn grid_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        (
            (x - self.origin.0) / self.resolution + half,
            (y - self.origin.1) / self.resolution + half,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (gx, gy) = self.grid_coords(x, y);
        let (i, j) = ((gx + 0.5).floor(), (gy + 0.5).floor());
        let n = self.size as f64;
        (i >= 0.0 && j >= 0.0 && i < n && j < n).then(|| (i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let half = (self.size / 2) as f64;
        (
            self.origin.0 + (i as f64 - half) * self.resolution,
            self.origin.1 + (j as f64 - half) * self.resolution,
        )
    }

    pub fn channel_sum(&self, channel: usize) -> f64 {
        self.channel(channel).iter().map(|v| f64::from(*v)).sum()
    }

    /// Total mass of the semantic channels.
    pub fn semantic_mass(&self) -> f64 {
        (1..=self.categories).map(|c| self.channel_sum(semantic_channel(c))).sum()
    }

    /// Checks value bounds and that semantic mass only sits on explored cells.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvariantViolation(format!("map value {v} outside [0, 1]")));
        }
        for j in 0..self.size {
            for i in 0..self.size {
                let explored = self.get(EXPLORED, i, j);
                for c in 1..=self.categories {
                    if self.get(semantic_channel(c), i, j) > explored {
                        return Err(Error::InvariantViolation(format!("semantic mass on unexplored cell ({i}, {j})")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Binary PGM of one channel, north up.
    pub fn write_channel_pgm<W: Write>(&self, channel: usize, out: &mut W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.size, self.size)?;
        let mut row = vec![0u8; self.size];
        for j in (0..self.size).rev() {
            for (i, px) in row.iter_mut().enumerate() {
                *px = (self.get(channel, i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            out.write_all(&row)?;
        }
        Ok(())
    }

    /// Projects, aligns and pools one scan taken at `pose`. Returns the mass
    /// gained by each channel.
    pub fn integrate(&mut self, scan: &DepthScan, pose: &ContinuousPose, vision_range: f64) -> Result<Vec<f64>> {
        let ego = project_scan(scan, vision_range, self.resolution, self.categories)?;
        let patch = spatial_transform(&ego, pose, self)?;
        aggregate_in_place(self, &patch)
    }
}

/// Agent-centric grid: the agent sits at the center cell `(R, R)` facing +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoProjection {
    radius: usize,
    categories: usize,
    resolution: f64,
    data: Vec<f32>,
}

impl EgoProjection {
    pub fn new(radius: usize, categories: usize, resolution: f64) -> Self {
        let side = 2 * radius + 1;
        Self {
            radius,
            categories,
            resolution,
            data: vec![0.0; (categories + 2) * side * side],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn channels(&self) -> usize {
        self.categories + 2
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn get(&self, channel: usize, u: usize, v: usize) -> f32 {
        let s = self.side();
        self.data[(channel * s + v) * s + u]
    }

    fn set(&mut self, channel: usize, u: usize, v: usize) {
        let s = self.side();
        self.data[(channel * s + v) * s + u] = 1.0;
    }

    pub fn count(&self, channel: usize) -> usize {
        let n = self.side() * self.side();
        self.data[channel * n..(channel + 1) * n].iter().filter(|v| **v > 0.0).count()
    }
}

/// Rasterizes a scan into an agent-centric grid of radius
/// `vision_range / resolution` cells. Cells pierced by a ray before its
/// range are explored; a hit within range marks the cell just past the hit
/// point as obstacle and sets its semantic channel. Ids outside `1..=C`
/// carry no semantics.
pub fn project_scan(scan: &DepthScan, vision_range: f64, resolution: f64, categories: usize) -> Result<EgoProjection> {
    if scan.rays.is_empty() {
        return Err(Error::Dimension("empty scan".into()));
    }
    let radius = (vision_range / resolution).round() as usize;
    let mut ego = EgoProjection::new(radius, categories, resolution);
    let side = ego.side() as i64;
    let center = radius as f64 + 0.5;
    let inside = |u: i64, v: i64| u >= 0 && v >= 0 && u < side && v < side;
    for ray in &scan.rays {
        let dir = (ray.bearing.cos(), ray.bearing.sin());
        let reach = ray.range.min(vision_range) / resolution;
        traverse_grid((center, center), dir, reach, |u, v, t| {
            if t >= reach || !inside(u, v) {
                return false;
            }
            ego.set(EXPLORED, u as usize, v as usize);
            true
        });
        if ray.hit && ray.range <= vision_range {
            let t = ray.range / resolution + 0.5;
            let (u, v) = ((center + t * dir.0).floor() as i64, (center + t * dir.1).floor() as i64);
            if inside(u, v) {
                let (u, v) = (u as usize, v as usize);
                ego.set(OBSTACLE, u, v);
                ego.set(EXPLORED, u, v);
                let id = usize::from(ray.semantic);
                if (1..=categories).contains(&id) {
                    ego.set(semantic_channel(id), u, v);
                }
            }
        }
    }
    Ok(ego)
}

/// A window of a map-aligned grid; cells outside the window are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPatch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl AlignedPatch {
    /// The whole of `map` as a patch.
    pub fn from_map(map: &MetricMap) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: map.size,
            height: map.size,
            channels: map.channels(),
            data: map.data.clone(),
        }
    }

    pub fn get(&self, channel: usize, i: usize, j: usize) -> f32 {
        self.data[(channel * self.height + j) * self.width + i]
    }

    pub fn sum(&self, channel: usize) -> f64 {
        let n = self.width * self.height;
        self.data[channel * n..(channel + 1) * n].iter().map(|v| f64::from(*v)).sum()
    }
}

/// Rotates and translates an ego grid into the map frame by inverse warping:
/// each map cell samples the ego grid bilinearly at its agent-frame position.
pub fn spatial_transform(ego: &EgoProjection, pose: &ContinuousPose, map: &MetricMap) -> Result<AlignedPatch> {
    if ego.channels() != map.channels() || (ego.resolution - map.resolution).abs() > 1e-12 {
        return Err(Error::Dimension("ego projection and map disagree on channels or resolution".into()));
    }
    if map.cell_of(pose.x, pose.y).is_none() {
        return Err(Error::OutOfBounds(format!("pose ({:.3}, {:.3}) outside the map", pose.x, pose.y)));
    }
    let (gx, gy) = map.grid_coords(pose.x, pose.y);
    let r = ego.radius as f64;
    let reach = (r + 1.0) * std::f64::consts::SQRT_2;
    let n = map.size as f64;
    let lo = |g: f64| (g - reach).floor().clamp(0.0, n - 1.0) as usize;
    let hi = |g: f64| (g + reach).ceil().clamp(0.0, n - 1.0) as usize;
    let (x0, x1, y0, y1) = (lo(gx), hi(gx), lo(gy), hi(gy));
    let (width, height) = (x1 - x0 + 1, y1 - y0 + 1);
    let k = ego.channels();
    let mut data = vec![0.0f32; k * width * height];
    let (sin, cos) = pose.theta.sin_cos();
    let side = ego.side() as i64;
    let ego_at = |c: usize, u: i64, v: i64| -> f32 {
        if u < 0 || v < 0 || u >= side || v >= side {
            0.0
        } else {
            ego.get(c, u as usize, v as usize)
        }
    };
    for j in 0..height {
        for i in 0..width {
            let dx = (x0 + i) as f64 - gx;
            let dy = (y0 + j) as f64 - gy;
            let u = cos * dx + sin * dy + r;
            let v = -sin * dx + cos * dy + r;
            if u <= -1.0 || v <= -1.0 || u >= side as f64 || v >= side as f64 {
                continue;
            }
            let (u0, v0) = (u.floor(), v.floor());
            let (fu, fv) = ((u - u0) as f32, (v - v0) as f32);
            let (u0, v0) = (u0 as i64, v0 as i64);
            let taps = [
                (u0, v0, (1.0 - fu) * (1.0 - fv)),
                (u0 + 1, v0, fu * (1.0 - fv)),
                (u0, v0 + 1, (1.0 - fu) * fv),
                (u0 + 1, v0 + 1, fu * fv),
            ];
            if taps.iter().all(|(a, b, _)| ego_at(EXPLORED, *a, *b) == 0.0) {
                continue;
            }
            for c in 0..k {
                let value: f32 = taps.iter().map(|(a, b, w)| w * ego_at(c, *a, *b)).sum();
                data[(c * height + j) * width + i] = value.clamp(0.0, 1.0);
            }
        }
    }
    Ok(AlignedPatch {
        x0,
        y0,
        width,
        height,
        channels: k,
        data,
    })
}

/// Element-wise maximum of `map` and `patch`, in place. Returns the mass each
/// channel gained.
pub fn aggregate_in_place(map: &mut MetricMap, patch: &AlignedPatch) -> Result<Vec<f64>> {
    if patch.channels != map.channels() || patch.x0 + patch.width > map.size || patch.y0 + patch.height > map.size {
        return Err(Error::Dimension("patch does not fit the map".into()));
    }
    let mut gain = vec![0.0; patch.channels];
    for (c, g) in gain.iter_mut().enumerate() {
        for j in 0..patch.height {
            for i in 0..patch.width {
                let value = patch.get(c, i, j);
                let k = map.index(c, patch.x0 + i, patch.y0 + j);
                let old = map.data[k];
                if value > old {
                    map.data[k] = value;
                    *g += f64::from(value) - f64::from(old);
                }
            }
        }
    }
    Ok(gain)
}

pub fn aggregate(map: &MetricMap, patch: &AlignedPatch) -> Result<MetricMap> {
    let mut out = map.clone();
    aggregate_in_place(&mut out, patch)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub area_m2: f64,
    pub fraction: f64,
}

/// Known-traversable area: explored map cells whose center is free in
/// `world`. Explored marks only ever grow, so this never decreases.
pub fn coverage(map: &MetricMap, world: &GridWorld) -> Coverage {
    let (ex, ey) = world.extent();
    let total = world.free_count() as f64 * world.cell_size() * world.cell_size();
    let (Some(lo), Some(hi)) = (cell_range(map, 0.0, 0.0), cell_range(map, ex, ey)) else {
        return Coverage {
            area_m2: 0.0,
            fraction: 0.0,
        };
    };
    let mut count = 0usize;
    for j in lo.1..=hi.1 {
        for i in lo.0..=hi.0 {
            if map.is_explored(i, j) {
                let (x, y) = map.cell_center(i, j);
                if world.is_free_point(x, y) {
                    count += 1;
                }
            }
        }
    }
    let area = count as f64 * map.resolution * map.resolution;
    Coverage {
        area_m2: area,
        fraction: if total > 0.0 { area / total } else { 0.0 },
    }
}

fn cell_range(map: &MetricMap, x: f64, y: f64) -> Option<(usize, usize)> {
    let (gx, gy) = map.grid_coords(x, y);
    let n = map.size as f64 - 1.0;
    Some(((gx + 0.5).floor().clamp(0.0, n) as usize, (gy + 0.5).floor().clamp(0.0, n) as usize))
}

/// Intersection over union of thresholded obstacle cells against the world,
/// over explored map cells that lie inside the world.
pub fn occupancy_iou(map: &MetricMap, world: &GridWorld) -> f64 {
    let (ex, ey) = world.extent();
    let (lo, hi) = (cell_range(map, 0.0, 0.0).unwrap(), cell_range(map, ex, ey).unwrap());
    let (mut inter, mut union) = (0usize, 0usize);
    for j in lo.1..=hi.1 {
        for i in lo.0..=hi.0 {
            if !map.is_explored(i, j) {
                continue;
            }
            let (x, y) = map.cell_center(i, j);
            if world.cell_at(x, y).is_none() {
                continue;
            }
            let truth = !world.is_free_point(x, y);
            let pred = map.is_obstacle(i, j);
            inter += usize::from(truth && pred);
            union += usize::from(truth || pred);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Noisy object detector: ids are dropped with `miss_rate`, otherwise
/// replaced by a draw from the confusion row of the true category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub confusion: Vec<Vec<f64>>,
    pub miss_rate: f64,
}

impl DetectorModel {
    pub fn identity(categories: usize) -> Self {
        let confusion = (0..categories)
            .map(|r| (0..categories).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            confusion,
            miss_rate: 0.0,
        }
    }

    /// Keeps `1 − off_diagonal` on the diagonal and spreads the rest evenly.
    pub fn uniform_confusion(categories: usize, off_diagonal: f64, miss_rate: f64) -> Self {
        let other = if categories > 1 { off_diagonal / (categories - 1) as f64 } else { 0.0 };
        let confusion = (0..categories)
            .map(|r| {
                (0..categories)
                    .map(|c| if r == c { 1.0 - off_diagonal } else { other })
                    .collect()
            })
            .collect();
        Self { confusion, miss_rate }
    }

    pub fn categories(&self) -> usize {
        self.confusion.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.confusion.len();
        for (r, row) in self.confusion.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("confusion row {r} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvariantViolation(format!("confusion row {r} is not a distribution")));
            }
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::InvariantViolation(format!("miss rate {} outside [0, 1]", self.miss_rate)));
        }
        Ok(())
    }

    fn detect<R: Rng + ?Sized>(&self, id: u8, rng: &mut R) -> u8 {
        let missed = rng.random::<f64>() < self.miss_rate;
        let row = &self.confusion[usize::from(id) - 1];
        let mut u = rng.random::<f64>();
        let mut pick = row.len() - 1;
        for (c, p) in row.iter().enumerate() {
            if u < *p {
                pick = c;
                break;
            }
            u -= p;
        }
        if missed {
            0
        } else {
            pick as u8 + 1
        }
    }
}

/// Applies the detector to every semantic hit; geometry is untouched.
pub fn corrupt_semantics<R: Rng + ?Sized>(scan: &DepthScan, detector: &DetectorModel, rng: &mut R) -> Result<DepthScan> {
    detector.validate()?;
    let mut out = scan.clone();
    for ray in &mut out.rays {
        if ray.semantic == 0 {
            continue;
        }
        if usize::from(ray.semantic) > detector.categories() {
            return Err(Error::OutOfBounds(format!("semantic id {} beyond detector categories", ray.semantic)));
        }
        ray.semantic = detector.detect(ray.semantic, rng);
    }
    Ok(out)
}

/// `λ · (semantic mass of next − semantic mass of prev)`.
pub fn semantic_curiosity_reward(prev: &MetricMap, next: &MetricMap, scale: f64) -> Result<f64> {
    let gain = next.semantic_mass() - prev.semantic_mass();
    if gain < 0.0 {
        return Err(Error::InvariantViolation(format!("semantic mass decreased by {}", -gain)));
    }
    Ok(scale * gain)
}

/// Semantic mass beyond the strongest channel of each cell; zero when every
/// cell carries at most one category.
pub fn inconsistency_surplus(map: &MetricMap) -> f64 {
    let n = map.size * map.size;
    let mut total = 0.0;
    for cell in 0..n {
        let (mut sum, mut max) = (0.0f64, 0.0f64);
        for c in 1..=map.categories {
            let v = f64::from(map.data[semantic_channel(c) * n + cell]);
            sum += v;
            max = max.max(v);
        }
        total += sum - max;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{raycast, ScanRay};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn ray(bearing: f64, range: f64, semantic: u8, hit: bool) -> ScanRay {
        ScanRay {
            bearing,
            range,
            semantic,
            hit,
        }
    }

    fn scan(rays: Vec<ScanRay>) -> DepthScan {
        DepthScan { rays, max_range: 3.0 }
    }

    #[test]
    fn single_ray_hit() {
        let ego = project_scan(&scan(vec![ray(0.0, 1.0, 3, true)]), 3.0, 0.05, 4).unwrap();
        assert_eq!(ego.count(OBSTACLE), 1);
        assert_eq!(ego.count(semantic_channel(3)), 1);
        // From the center of cell 60 the ray ends halfway through cell 80;
        // the hit cell is the next one.
        assert_eq!(ego.count(EXPLORED), 22);
        assert_eq!(ego.get(OBSTACLE, 81, 60), 1.0);
        assert_eq!(ego.get(semantic_channel(3), 81, 60), 1.0);
    }

    #[test]
    fn misses_only_explore() {
        let rays = (0..31).map(|i| ray(-0.5 + i as f64 / 30.0, 3.0, 0, false)).collect();
        let ego = project_scan(&scan(rays), 3.0, 0.05, 2).unwrap();
        assert_eq!(ego.count(OBSTACLE), 0);
        assert!(ego.count(EXPLORED) > 100);
        for c in 1..=2 {
            assert_eq!(ego.count(semantic_channel(c)), 0);
        }
    }

    #[test]
    fn ranges_clip_to_vision() {
        let ego = project_scan(&scan(vec![ray(0.0, 5.0, 1, true)]), 1.0, 0.05, 1).unwrap();
        assert_eq!(ego.count(OBSTACLE), 0);
        assert_eq!(ego.count(EXPLORED), 21);
        assert!(project_scan(&scan(vec![]), 1.0, 0.05, 1).is_err());
    }

    fn room_world() -> GridWorld {
        // 4 m x 3 m interior at 0.05 m.
        let mut w = GridWorld::room(82, 62, 0.05);
        w.set_obstacle(0, 30, 2);
        w
    }

    #[test]
    fn panoramic_scan_matches_visibility() {
        let w = room_world();
        let pose = ContinuousPose::new(1.525, 1.225, 0.3);
        let s = raycast(&w, &pose, 2880, TAU, 3.0).unwrap();
        let ego = project_scan(&s, 3.0, 0.05, 2).unwrap();
        let mut map = MetricMap::new(200, 2, 0.05, (pose.x, pose.y)).unwrap();
        let patch = spatial_transform(&ego, &pose, &map).unwrap();
        aggregate_in_place(&mut map, &patch).unwrap();
        // Convex room: every free cell within range is visible.
        let mut bad = 0;
        for (x, y) in w.free_cells() {
            let (cx, cy) = w.cell_center(x, y);
            let d = (cx - pose.x).hypot(cy - pose.y);
            let near_edge = x <= 1 || y <= 1 || x >= 80 || y >= 60 || (d - 3.0).abs() < 0.1;
            let (i, j) = map.cell_of(cx, cy).unwrap();
            if map.is_explored(i, j) != (d < 3.0) && !near_edge {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
    }

    fn filled_ego(seed: u64) -> EgoProjection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rays = (0..90)
            .map(|i| {
                let r = rng.random_range(0.3..2.9);
                ray(-PI / 4.0 + i as f64 * (PI / 2.0) / 89.0, r, rng.random_range(0..3), rng.random_bool(0.7))
            })
            .collect();
        project_scan(&scan(rays), 3.0, 0.05, 2).unwrap()
    }

    #[test]
    fn identity_transform_keeps_cells() {
        let ego = filled_ego(1);
        let map = MetricMap::new(200, 2, 0.05, (1.0, 1.0)).unwrap();
        let patch = spatial_transform(&ego, &ContinuousPose::new(1.0, 1.0, 0.0), &map).unwrap();
        let out = aggregate(&map, &patch).unwrap();
        for c in 0..4 {
            for v in 0..ego.side() {
                for u in 0..ego.side() {
                    let m = out.get(c, 100 - 60 + u, 100 - 60 + v);
                    assert!((m - ego.get(c, u, v)).abs() <= 1e-6);
                }
            }
            assert!((out.channel_sum(c) - ego.count(c) as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn quarter_turn_rotates_and_keeps_mass() {
        let ego = filled_ego(2);
        let map = MetricMap::new(200, 2, 0.05, (0.0, 0.0)).unwrap();
        let patch = spatial_transform(&ego, &ContinuousPose::new(0.0, 0.0, FRAC_PI_2), &map).unwrap();
        let out = aggregate(&map, &patch).unwrap();
        for v in 0..ego.side() {
            for u in 0..ego.side() {
                // Ego +x maps to world +y.
                let (i, j) = (100 + 60 - v, 100 - 60 + u);
                assert!((out.get(EXPLORED, i, j) - ego.get(EXPLORED, u, v)).abs() <= 1e-6);
            }
        }
        let before = ego.count(EXPLORED) as f64;
        assert!((out.channel_sum(EXPLORED) - before).abs() / before <= 0.02);
    }

    #[test]
    fn oblique_rotation_roughly_preserves_mass() {
        let ego = filled_ego(3);
        let map = MetricMap::new(200, 2, 0.05, (0.0, 0.0)).unwrap();
        let before = ego.count(EXPLORED) as f64;
        for k in 0..12 {
            let theta = k as f64 * 0.37;
            let patch = spatial_transform(&ego, &ContinuousPose::new(0.013, -0.021, theta), &map).unwrap();
            let after = patch.sum(EXPLORED);
            assert!((after - before).abs() / before <= 0.02, "theta {theta}: {before} -> {after}");
        }
    }

    #[test]
    fn transform_outside_map_fails() {
        let ego = filled_ego(4);
        let map = MetricMap::new(50, 2, 0.05, (0.0, 0.0)).unwrap();
        assert!(matches!(
            spatial_transform(&ego, &ContinuousPose::new(5.0, 0.0, 0.0), &map),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn aggregate_identities() {
        let ego = filled_ego(5);
        let base = MetricMap::new(200, 2, 0.05, (0.0, 0.0)).unwrap();
        let a = aggregate(&base, &spatial_transform(&ego, &ContinuousPose::new(0.1, 0.2, 0.4), &base).unwrap()).unwrap();
        assert_eq!(aggregate(&a, &AlignedPatch::from_map(&base)).unwrap(), a);
        assert_eq!(aggregate(&a, &AlignedPatch::from_map(&a)).unwrap(), a);
        a.validate().unwrap();
    }

    #[test]
    fn scan_order_does_not_matter() {
        let base = MetricMap::new(200, 2, 0.05, (0.0, 0.0)).unwrap();
        let patches: Vec<_> = (0..6)
            .map(|k| {
                let pose = ContinuousPose::new(0.1 * k as f64, -0.05 * k as f64, 0.7 * k as f64);
                spatial_transform(&filled_ego(10 + k), &pose, &base).unwrap()
            })
            .collect();
        let mut forward = base.clone();
        for p in &patches {
            aggregate_in_place(&mut forward, p).unwrap();
        }
        let mut backward = base.clone();
        for p in patches.iter().rev() {
            aggregate_in_place(&mut backward, p).unwrap();
        }
        assert_eq!(forward, backward);
    }

    #[test]
    fn coverage_of_fresh_and_full_maps() {
        let w = room_world();
        let mut map = MetricMap::new(128, 2, 0.05, w.cell_center(41, 31)).unwrap();
        assert_eq!(coverage(&map, &w), Coverage { area_m2: 0.0, fraction: 0.0 });
        for j in 0..128 {
            for i in 0..128 {
                map.set(EXPLORED, i, j, 1.0);
                let (x, y) = map.cell_center(i, j);
                if !w.is_free_point(x, y) {
                    map.set(OBSTACLE, i, j, 1.0);
                }
            }
        }
        let c = coverage(&map, &w);
        assert!((c.fraction - 1.0).abs() <= 0.02, "{c:?}");
        assert!((c.area_m2 - 80.0 * 60.0 * 0.0025).abs() < 1e-9);
    }

    #[test]
    fn detector_edge_cases() {
        let s = scan(vec![ray(0.0, 1.0, 2, true), ray(0.1, 1.0, 0, true), ray(0.2, 3.0, 0, false)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(corrupt_semantics(&s, &DetectorModel::identity(3), &mut rng).unwrap(), s);
        let blind = DetectorModel {
            miss_rate: 1.0,
            ..DetectorModel::uniform_confusion(3, 0.3, 0.0)
        };
        let out = corrupt_semantics(&s, &blind, &mut rng).unwrap();
        assert!(out.rays.iter().all(|r| r.semantic == 0));
        assert_eq!(out.rays[0].range, s.rays[0].range);
        let bad = DetectorModel {
            confusion: vec![vec![0.5, 0.4], vec![0.0, 1.0]],
            miss_rate: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn detector_frequencies_follow_confusion() {
        let det = DetectorModel {
            confusion: vec![vec![0.7, 0.2, 0.1], vec![0.05, 0.9, 0.05], vec![0.25, 0.25, 0.5]],
            miss_rate: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for true_id in 1..=3u8 {
            let s = scan(vec![ray(0.0, 1.0, true_id, true); 100_000]);
            let out = corrupt_semantics(&s, &det, &mut rng).unwrap();
            let mut counts = [0usize; 3];
            for r in &out.rays {
                counts[usize::from(r.semantic) - 1] += 1;
            }
            for (c, n) in counts.iter().enumerate() {
                let p = det.confusion[usize::from(true_id) - 1][c];
                assert!((*n as f64 / 1e5 - p).abs() < 0.01, "{true_id}->{}: {n}", c + 1);
            }
        }
    }

    #[test]
    fn curiosity_reward_counts_new_labels() {
        let prev = MetricMap::new(10, 2, 0.05, (0.0, 0.0)).unwrap();
        assert_eq!(semantic_curiosity_reward(&prev, &prev, CURIOSITY_SCALE).unwrap(), 0.0);
        let mut next = prev.clone();
        next.set(EXPLORED, 3, 3, 1.0);
        next.set(semantic_channel(2), 3, 3, 1.0);
        assert_eq!(semantic_curiosity_reward(&prev, &next, CURIOSITY_SCALE).unwrap(), 2.5e-3);
        assert!(semantic_curiosity_reward(&next, &prev, CURIOSITY_SCALE).is_err());
    }

    #[test]
    fn surplus_counts_extra_channels() {
        let mut m = MetricMap::new(4, 3, 0.05, (0.0, 0.0)).unwrap();
        m.set(semantic_channel(1), 1, 1, 1.0);
        assert_eq!(inconsistency_surplus(&m), 0.0);
        m.set(semantic_channel(3), 1, 1, 0.5);
        m.set(semantic_channel(2), 2, 1, 1.0);
        assert_eq!(inconsistency_surplus(&m), 0.5);
    }

    #[test]
    fn pgm_channel_export() {
        let mut m = MetricMap::new(3, 1, 0.05, (0.0, 0.0)).unwrap();
        m.set(OBSTACLE, 0, 2, 1.0);
        let mut buf = Vec::new();
        m.write_channel_pgm(OBSTACLE, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 3\n255\n");
        assert_eq!(&buf[11..], &[255, 0, 0, 0, 0, 0, 0, 0, 0]);
    }
}
