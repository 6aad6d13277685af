//! Histogram Bayes filter over discrete poses.
//!
//! Beliefs and likelihoods are dense `O × H × W` grids stored with the
//! orientation plane outermost, so a linear scan visits states in `(o, y, x)`
//! lexicographic order.

use std::io::Write;

use crate::error::{Error, Result};
use crate::world::{Action, DepthTable, DiscretePose, GridWorld, Orientation, ORIENTATIONS};

/// Allowed drift of the total belief mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

/// Per-state observation weights; not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

pub fn state_index(width: usize, height: usize, pose: DiscretePose) -> usize {
    (pose.o.index() * height + pose.y) * width + pose.x
}

pub fn state_pose(width: usize, height: usize, index: usize) -> DiscretePose {
    let plane = width * height;
    let o = Orientation::from_index(index / plane);
    let rem = index % plane;
    DiscretePose::new(rem % width, rem / width, o)
}

impl BeliefGrid {
    /// Wraps raw values after checking the belief invariants against `world`.
    pub fn from_values(world: &GridWorld, values: Vec<f64>) -> Result<Self> {
        let (w, h) = (world.width(), world.height());
        if values.len() != ORIENTATIONS * w * h {
            return Err(Error::Dimension(format!(
                "belief needs {} values, got {}",
                ORIENTATIONS * w * h,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            let p = state_pose(w, h, i);
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvariantViolation(format!("belief value {v} at {p:?}")));
            }
            if *v != 0.0 && !world.is_free(p.x, p.y) {
                return Err(Error::InvariantViolation(format!("belief mass on obstacle {p:?}")));
            }
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvariantViolation(format!("belief sums to {total}")));
        }
        Ok(Self {
            width: w,
            height: h,
            values,
        })
    }

    pub fn point_mass(world: &GridWorld, pose: DiscretePose) -> Self {
        let (w, h) = (world.width(), world.height());
        let mut values = vec![0.0; ORIENTATIONS * w * h];
        values[state_index(w, h, pose)] = 1.0;
        Self {
            width: w,
            height: h,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, pose: DiscretePose) -> f64 {
        self.values[state_index(self.width, self.height, pose)]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Nonzero entries as `(state index, probability)`, in index order.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }

    pub fn pose_of(&self, index: usize) -> DiscretePose {
        state_pose(self.width, self.height, index)
    }

    /// Writes one orientation plane as a binary PGM heat map, north up,
    /// scaled so the largest value over all planes maps to 255.
    pub fn write_pgm<W: Write>(&self, orientation: Orientation, out: &mut W) -> std::io::Result<()> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let plane = orientation.index() * self.width * self.height;
        let mut row = vec![0u8; self.width];
        for y in (0..self.height).rev() {
            for (x, px) in row.iter_mut().enumerate() {
                let v = self.values[plane + y * self.width + x];
                *px = if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 };
            }
            out.write_all(&row)?;
        }
        Ok(())
    }
}

impl LikelihoodGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != ORIENTATIONS * width * height {
            return Err(Error::Dimension(format!(
                "likelihood needs {} values, got {}",
                ORIENTATIONS * width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvariantViolation("likelihood weights must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Uniform belief over every (orientation, free cell) state.
pub fn uniform_prior(world: &GridWorld) -> Result<BeliefGrid> {
    let free = world.free_count();
    if free == 0 {
        return Err(Error::InvalidWorld("world has no free cell".into()));
    }
    let (w, h) = (world.width(), world.height());
    let p = 1.0 / (ORIENTATIONS * free) as f64;
    let mut values = vec![0.0; ORIENTATIONS * w * h];
    for o in 0..ORIENTATIONS {
        for (x, y) in world.free_cells() {
            values[(o * h + y) * w + x] = p;
        }
    }
    Ok(BeliefGrid {
        width: w,
        height: h,
        values,
    })
}

/// Indicator likelihood: 1 on states whose depth reading equals `depth`.
pub fn likelihood_from_table(table: &DepthTable, width: usize, height: usize, depth: usize) -> LikelihoodGrid {
    let values = (0..table.len())
        .map(|i| if table.get(i) == Some(depth) { 1.0 } else { 0.0 })
        .collect();
    LikelihoodGrid {
        width,
        height,
        values,
    }
}

pub fn likelihood_from_depth(world: &GridWorld, depth: usize) -> LikelihoodGrid {
    likelihood_from_table(&DepthTable::new(world), world.width(), world.height(), depth)
}

/// Pushes the belief through the deterministic motion model. Turns rotate the
/// orientation planes; forward shifts each plane one cell along its heading,
/// leaving mass in place where the next cell is an obstacle.
pub fn transition(belief: &BeliefGrid, action: Action, world: &GridWorld) -> BeliefGrid {
    let (w, h) = (belief.width, belief.height);
    let plane = w * h;
    let mut out = vec![0.0; belief.values.len()];
    match action {
        Action::Stop => out.copy_from_slice(&belief.values),
        Action::TurnLeft | Action::TurnRight => {
            for o in Orientation::ALL {
                let to = if action == Action::TurnLeft { o.left() } else { o.right() };
                out[to.index() * plane..(to.index() + 1) * plane]
                    .copy_from_slice(&belief.values[o.index() * plane..(o.index() + 1) * plane]);
            }
        }
        Action::Forward => {
            for o in Orientation::ALL {
                let (dx, dy) = o.offset();
                let base = o.index() * plane;
                for y in 0..h {
                    for x in 0..w {
                        let v = belief.values[base + y * w + x];
                        if v == 0.0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        let target = if world.is_free_i(nx, ny) {
                            base + ny as usize * w + nx as usize
                        } else {
                            base + y * w + x
                        };
                        out[target] += v;
                    }
                }
            }
        }
    }
    BeliefGrid {
        width: w,
        height: h,
        values: out,
    }
}

/// `Bel = Lik ⊙ prior / Z`. A zero normalizer means the observation is
/// impossible under the current belief and is reported as divergence.
pub fn bayes_update(prior: &BeliefGrid, lik: &LikelihoodGrid) -> Result<BeliefGrid> {
    if prior.values.len() != lik.values.len() {
        return Err(Error::Dimension("belief and likelihood shapes differ".into()));
    }
    let mut values: Vec<f64> = prior.values.iter().zip(&lik.values).map(|(p, l)| p * l).collect();
    let z: f64 = values.iter().sum();
    if !(z > 0.0) {
        return Err(Error::FilterDivergence);
    }
    for v in &mut values {
        *v /= z;
    }
    Ok(BeliefGrid {
        width: prior.width,
        height: prior.height,
        values,
    })
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(belief: &BeliefGrid) -> f64 {
    entropy_of(belief.values.iter().copied())
}

pub fn entropy_of(probabilities: impl IntoIterator<Item = f64>) -> f64 {
    -probabilities
        .into_iter()
        .filter(|p| *p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Most probable state; ties go to the lowest `(o, y, x)` index.
pub fn map_estimate(belief: &BeliefGrid) -> DiscretePose {
    let mut best = 0;
    for (i, v) in belief.values.iter().enumerate() {
        if *v > belief.values[best] {
            best = i;
        }
    }
    belief.pose_of(best)
}

/// Per-step reward: the largest state probability.
pub fn step_reward(belief: &BeliefGrid) -> f64 {
    belief.values.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{depth_observation, generate_maze};

    /// 6x4 room with 4x2 interior: 8 free cells.
    fn room() -> GridWorld {
        GridWorld::room(6, 4, 1.0)
    }

    #[test]
    fn uniform_prior_spreads_over_free_states() {
        let mut w = GridWorld::room(8, 4, 1.0);
        w.set_obstacle(3, 1, 0);
        assert_eq!(w.free_count(), 11);
        let b = uniform_prior(&w).unwrap();
        for v in b.values().iter().filter(|v| **v > 0.0) {
            assert_eq!(*v, 1.0 / 44.0);
        }
        assert!((b.total() - 1.0).abs() < 1e-12);
        assert!((entropy(&b) - 44f64.ln()).abs() < 1e-12);
        assert!((step_reward(&b) - 1.0 / 44.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_prior_needs_free_space() {
        let w = GridWorld::new(3, 3, vec![crate::world::Cell::Obstacle; 9], vec![0; 9], 1.0).unwrap();
        assert!(matches!(uniform_prior(&w), Err(Error::InvalidWorld(_))));
    }

    #[test]
    fn turns_are_inverse_permutations_with_period_four() {
        let w = generate_maze(7, 7, 4).unwrap();
        let b = uniform_prior(&w).unwrap();
        let b = bayes_update(&b, &likelihood_from_depth(&w, 1)).unwrap();
        let mut c = b.clone();
        for _ in 0..4 {
            c = transition(&c, Action::TurnLeft, &w);
        }
        assert_eq!(c, b);
        let lr = transition(&transition(&b, Action::TurnLeft, &w), Action::TurnRight, &w);
        assert_eq!(lr, b);
    }

    #[test]
    fn forward_into_wall_keeps_mass() {
        let w = room();
        let p = DiscretePose::new(1, 1, Orientation::South);
        let b = BeliefGrid::point_mass(&w, p);
        assert_eq!(transition(&b, Action::Forward, &w), b);
        let q = DiscretePose::new(1, 1, Orientation::East);
        let moved = transition(&BeliefGrid::point_mass(&w, q), Action::Forward, &w);
        assert_eq!(moved.get(DiscretePose::new(2, 1, Orientation::East)), 1.0);
    }

    #[test]
    fn bayes_update_identity_and_point_mass() {
        let w = room();
        let prior = uniform_prior(&w).unwrap();
        let ones = LikelihoodGrid::new(6, 4, vec![1.0; 96]).unwrap();
        let post = bayes_update(&prior, &ones).unwrap();
        for (a, b) in post.values().iter().zip(prior.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let a = DiscretePose::new(1, 1, Orientation::East);
        let b = DiscretePose::new(4, 2, Orientation::West);
        let mut two = vec![0.0; 96];
        two[state_index(6, 4, a)] = 0.5;
        two[state_index(6, 4, b)] = 0.5;
        let prior = BeliefGrid::from_values(&w, two).unwrap();
        let mut lik = vec![0.0; 96];
        lik[state_index(6, 4, a)] = 1.0;
        let post = bayes_update(&prior, &LikelihoodGrid::new(6, 4, lik).unwrap()).unwrap();
        assert_eq!(post, BeliefGrid::point_mass(&w, a));
    }

    #[test]
    fn zero_normalizer_is_divergence() {
        let w = room();
        let prior = BeliefGrid::point_mass(&w, DiscretePose::new(1, 1, Orientation::East));
        let lik = LikelihoodGrid::new(6, 4, vec![0.0; 96]).unwrap();
        assert!(matches!(bayes_update(&prior, &lik), Err(Error::FilterDivergence)));
    }

    #[test]
    fn likelihood_marks_true_pose() {
        let w = generate_maze(9, 9, 2).unwrap();
        for (x, y) in w.free_cells() {
            for o in Orientation::ALL {
                let p = DiscretePose::new(x, y, o);
                let lik = likelihood_from_depth(&w, depth_observation(&w, p));
                assert_eq!(lik.values()[state_index(9, 9, p)], 1.0);
            }
        }
    }

    #[test]
    fn longest_run_is_seen_only_from_its_ends() {
        // L-shaped corridor: the east arm is the unique longest run.
        let text = "9 5 1\n#########\n#.......#\n#.#######\n#.#######\n#########\n";
        let w = GridWorld::parse(text).unwrap();
        let lik = likelihood_from_depth(&w, 6);
        let support: Vec<_> = lik
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| state_pose(9, 5, i))
            .collect();
        assert_eq!(
            support,
            vec![
                DiscretePose::new(1, 3, Orientation::East),
                DiscretePose::new(7, 3, Orientation::West)
            ]
        );
    }

    #[test]
    fn symmetric_room_likelihood_is_symmetric() {
        let w = GridWorld::room(7, 7, 1.0);
        for d in 0..5 {
            let lik = likelihood_from_depth(&w, d);
            for (i, v) in lik.values().iter().enumerate() {
                let p = state_pose(7, 7, i);
                // Rotation by 90 degrees about the room center maps (x, y, o) to (6 - y, x, o + 1).
                let r = DiscretePose::new(6 - p.y, p.x, p.o.left());
                assert_eq!(*v, lik.values()[state_index(7, 7, r)]);
                let m = DiscretePose::new(6 - p.x, p.y, match p.o {
                    Orientation::East => Orientation::West,
                    Orientation::West => Orientation::East,
                    o => o,
                });
                assert_eq!(*v, lik.values()[state_index(7, 7, m)]);
            }
        }
    }

    #[test]
    fn map_estimate_breaks_ties_lexicographically() {
        let w = room();
        let a = DiscretePose::new(4, 2, Orientation::East);
        let b = DiscretePose::new(1, 1, Orientation::North);
        let mut v = vec![0.0; 96];
        v[state_index(6, 4, a)] = 0.5;
        v[state_index(6, 4, b)] = 0.5;
        let belief = BeliefGrid::from_values(&w, v).unwrap();
        assert_eq!(map_estimate(&belief), a);
        let point = BeliefGrid::point_mass(&w, DiscretePose::new(2, 2, Orientation::North));
        assert_eq!(map_estimate(&point), DiscretePose::new(2, 2, Orientation::North));
        assert_eq!(entropy(&point), 0.0);
        assert_eq!(step_reward(&point), 1.0);
    }

    #[test]
    fn from_values_checks_invariants() {
        let w = room();
        assert!(BeliefGrid::from_values(&w, vec![0.0; 96]).is_err());
        let mut on_wall = vec![0.0; 96];
        on_wall[0] = 1.0;
        assert!(matches!(BeliefGrid::from_values(&w, on_wall), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn pgm_export_has_header_and_pixels() {
        let w = room();
        let b = BeliefGrid::point_mass(&w, DiscretePose::new(1, 1, Orientation::East));
        let mut buf = Vec::new();
        b.write_pgm(Orientation::East, &mut buf).unwrap();
        let header = b"P5\n6 4\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let pixels = &buf[header.len()..];
        assert_eq!(pixels.len(), 24);
        // Row y = 1 is the third line from the top.
        assert_eq!(pixels[2 * 6 + 1], 255);
        assert_eq!(pixels.iter().filter(|p| **p != 0).count(), 1);
    }
}
