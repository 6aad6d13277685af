//! Property tests for the structural invariants of each module.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use navlab::belief::{bayes_update, entropy, likelihood_from_depth, transition, uniform_prior, BeliefGrid};
use navlab::explore::{fmm_field, nav_metrics, PlanningGrid};
use navlab::localize::{aml_select, expected_entropy_after, AmlConfig, PlannerCache, StateModel};
use navlab::mapping::{MetricMap, EXPLORED};
use navlab::noise::{fit_gmm, EmSettings, Gaussian3, GaussianMixture3, NoiseModelSet};
use navlab::topo::{bin_angle, direction_bin, goal_score, intra_node_labels, TopoGraph, DIRECTIONS};
use navlab::world::{
    depth_observation, discrete_step, generate_maze, normalize_angle, raycast, Action, ContinuousPose, DiscretePose,
    GridWorld, Orientation,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MOVES: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

fn odd_size() -> impl Strategy<Value = usize> {
    (2usize..=5).prop_map(|k| 2 * k + 1)
}

fn random_pose(world: &GridWorld, rng: &mut ChaCha8Rng) -> DiscretePose {
    let free: Vec<_> = world.free_cells().collect();
    let (x, y) = free[rng.random_range(0..free.len())];
    DiscretePose::new(x, y, Orientation::from_index(rng.random_range(0..4)))
}

fn random_belief(world: &GridWorld, rng: &mut ChaCha8Rng) -> BeliefGrid {
    let (w, h) = (world.width(), world.height());
    let mut values = vec![0.0; 4 * w * h];
    for (x, y) in world.free_cells() {
        for o in 0..4 {
            if rng.random_bool(0.6) {
                values[(o * h + y) * w + x] = rng.random::<f64>();
            }
        }
    }
    let (x, y) = world.free_cells().next().unwrap();
    values[y * w + x] += 0.1;
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    BeliefGrid::from_values(world, values).unwrap()
}

fn metric_world(seed: u64) -> GridWorld {
    let mut w = generate_maze(5, 5, seed).unwrap().inflate_maze(12, 3, 0.05).unwrap();
    w.paint_objects(3, 6, 6, seed);
    w
}

fn random_continuous_pose(world: &GridWorld, rng: &mut ChaCha8Rng) -> ContinuousPose {
    loop {
        let (w, h) = world.extent();
        let (x, y) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
        if world.is_free_point(x, y) && !world.disc_collides(x, y, 0.1) {
            return ContinuousPose::new(x, y, rng.random_range(-PI..PI));
        }
    }
}

/// A wandering pose sequence: short forward moves that avoid walls, turning
/// when blocked.
fn random_walk(world: &GridWorld, steps: usize, rng: &mut ChaCha8Rng) -> Vec<ContinuousPose> {
    let mut pose = random_continuous_pose(world, rng);
    let mut out = vec![pose];
    for _ in 1..steps {
        let (x, y) = (pose.x + 0.25 * pose.theta.cos(), pose.y + 0.25 * pose.theta.sin());
        if world.is_free_point(x, y) && !world.disc_collides(x, y, 0.1) && rng.random_bool(0.85) {
            pose = ContinuousPose::new(x, y, pose.theta);
        } else {
            pose = ContinuousPose::new(pose.x, pose.y, normalize_angle(pose.theta + rng.random_range(-2.0..2.0)));
        }
        out.push(pose);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn discrete_moves_never_teleport(size in odd_size(), seed in any::<u64>(), actions in prop::collection::vec(0usize..3, 1..40)) {
        let world = generate_maze(size, size, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = random_pose(&world, &mut rng);
        for a in actions {
            let action = MOVES[a];
            let next = discrete_step(&world, pose, action);
            prop_assert!(world.is_free(next.x, next.y));
            let cells = next.x.abs_diff(pose.x) + next.y.abs_diff(pose.y);
            let turn = (next.o.index() + 4 - pose.o.index()) % 4;
            prop_assert!(cells <= 1);
            prop_assert!(turn == 0 || turn == 1 || turn == 3);
            prop_assert!(cells == 0 || turn == 0, "a single action either moves or turns");
            if action == Action::Forward && cells == 1 {
                prop_assert_eq!(depth_observation(&world, next), depth_observation(&world, pose) - 1);
            }
            pose = next;
        }
    }

    #[test]
    fn perfect_maze_free_cell_identity(w in odd_size(), h in odd_size(), seed in any::<u64>()) {
        let world = generate_maze(w, h, seed).unwrap();
        prop_assert_eq!(world.free_count(), ((w - 1) / 2) * ((h - 1) / 2) * 2 - 1);
        prop_assert_eq!(world.flood_fill(world.free_cells().next().unwrap()).len(), world.free_count());
    }

    #[test]
    fn raycast_is_monotone_in_max_range(seed in any::<u64>(), r1 in 0.1f64..4.0, extra in 0.0f64..3.0) {
        let world = metric_world(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let pose = random_continuous_pose(&world, &mut rng);
        let short = raycast(&world, &pose, 31, PI / 2.0, r1).unwrap();
        let long = raycast(&world, &pose, 31, PI / 2.0, r1 + extra).unwrap();
        for (a, b) in short.rays.iter().zip(&long.rays) {
            prop_assert!(b.range >= a.range - 1e-12, "{} < {}", b.range, a.range);
            prop_assert!(a.range > 0.0 && a.range <= r1);
        }
    }

    #[test]
    fn angles_normalize_into_half_open_interval(a in -100.0f64..100.0) {
        let n = normalize_angle(a);
        prop_assert!(n > -PI && n <= PI);
        prop_assert!(((a - n) / (2.0 * PI) - ((a - n) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn world_text_round_trips(seed in any::<u64>()) {
        let world = metric_world(seed);
        prop_assert_eq!(GridWorld::parse(&world.to_text()).unwrap(), world);
    }

    #[test]
    fn transitions_conserve_mass_and_turns_invert(size in odd_size(), seed in any::<u64>()) {
        let world = generate_maze(size, size, seed).unwrap();
        let b = random_belief(&world, &mut ChaCha8Rng::seed_from_u64(seed));
        for a in MOVES {
            prop_assert!((transition(&b, a, &world).total() - b.total()).abs() <= 1e-12);
        }
        let lr = transition(&transition(&b, Action::TurnLeft, &world), Action::TurnRight, &world);
        let rl = transition(&transition(&b, Action::TurnRight, &world), Action::TurnLeft, &world);
        prop_assert_eq!(lr.values(), b.values());
        prop_assert_eq!(rl.values(), b.values());
    }

    #[test]
    fn bayes_update_ignores_likelihood_scale(size in odd_size(), seed in any::<u64>(), c in 1e-3f64..1e3) {
        let world = generate_maze(size, size, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_belief(&world, &mut rng);
        let lik = likelihood_from_depth(&world, depth_observation(&world, random_pose(&world, &mut rng)));
        if let (Ok(p), Ok(q)) = (bayes_update(&b, &lik), bayes_update(&b, &lik.scaled(c))) {
            for (x, y) in p.values().iter().zip(q.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn filter_support_keeps_the_true_pose(size in odd_size(), seed in any::<u64>(), actions in prop::collection::vec(0usize..3, 1..30)) {
        let world = generate_maze(size, size, seed).unwrap();
        let mut pose = random_pose(&world, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut belief = uniform_prior(&world).unwrap();
        for a in actions {
            belief = bayes_update(&belief, &likelihood_from_depth(&world, depth_observation(&world, pose))).unwrap();
            prop_assert!(belief.get(pose) > 0.0);
            belief = transition(&belief, MOVES[a], &world);
            pose = discrete_step(&world, pose, MOVES[a]);
            prop_assert!(belief.get(pose) > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_step_planner_is_the_classical_maximizer(size in odd_size(), seed in any::<u64>()) {
        let world = generate_maze(size, size, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = uniform_prior(&world).unwrap();
        let belief = bayes_update(&prior, &likelihood_from_depth(&world, depth_observation(&world, random_pose(&world, &mut rng)))).unwrap();
        let model = StateModel::new(&world);
        let cfg = AmlConfig { lookahead: 1, greediness: 1, concentration: usize::MAX, tau: 0.0 };
        let plan = aml_select(&belief, &model, &cfg, &mut PlannerCache::new());
        let h = entropy(&belief);
        let utilities: Vec<f64> = MOVES.iter().map(|a| h - expected_entropy_after(&belief, &[*a], &world)).collect();
        let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((plan.utility - best).abs() <= 1e-12, "{} vs {}", plan.utility, best);
        let chosen = MOVES.iter().position(|a| *a == plan.actions[0]).unwrap();
        prop_assert!((utilities[chosen] - best).abs() <= 1e-12);
        prop_assert!(utilities.iter().all(|u| *u >= -1e-9));
    }

    #[test]
    fn planner_cache_is_transparent_and_bounded(size in odd_size(), seed in any::<u64>(), lookahead in 1usize..=3) {
        let world = generate_maze(size, size, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = uniform_prior(&world).unwrap();
        let belief = bayes_update(&prior, &likelihood_from_depth(&world, depth_observation(&world, random_pose(&world, &mut rng)))).unwrap();
        let model = StateModel::new(&world);
        let cfg = AmlConfig { lookahead, greediness: 1, concentration: usize::MAX, tau: 1e-3 };
        let mut cache = PlannerCache::new();
        let cached = aml_select(&belief, &model, &cfg, &mut cache);
        let plain = aml_select(&belief, &model, &cfg, &mut PlannerCache::disabled());
        prop_assert_eq!(&cached, &plain);
        prop_assert_eq!(cached.utility.to_bits(), plain.utility.to_bits());
        prop_assert!(cache.stats().sequences_evaluated <= 3u64.pow(lookahead as u32));
    }
}

fn random_mixture(rng: &mut ChaCha8Rng, k: usize) -> GaussianMixture3 {
    let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let components = weights
        .into_iter()
        .map(|weight| {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            Gaussian3 {
                weight,
                mean: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                covariance: a * a.transpose() + Matrix3::identity() * 0.01,
            }
        })
        .collect();
    GaussianMixture3::new(components).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn fitted_mixtures_are_valid_and_selection_is_argmax(seed in any::<u64>(), k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_mixture(&mut rng, k);
        let samples: Vec<[f64; 3]> = (0..400).map(|_| truth.sample(&mut rng).into()).collect();
        let fit = fit_gmm(&samples, &[1, 2, 3], 0.3, &EmSettings::default(), &mut rng).unwrap();
        let weights: f64 = fit.model.components().iter().map(|c| c.weight).sum();
        prop_assert!((weights - 1.0).abs() <= 1e-9);
        for c in fit.model.components() {
            prop_assert!(c.weight > 0.0);
            prop_assert!(c.covariance.symmetric_eigen().eigenvalues.min() >= 1e-10);
        }
        let chosen = fit.heldout.iter().find(|(k, _)| *k == fit.chosen_k).unwrap().1;
        prop_assert!(fit.heldout.iter().all(|(_, ll)| chosen >= *ll));
        prop_assert_eq!(fit.model.len(), fit.chosen_k);
    }

    #[test]
    fn noise_model_text_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mix = || { let k = rng.random_range(1..=3); random_mixture(&mut rng, k) };
        let set = NoiseModelSet::new([mix(), mix(), mix()], [mix(), mix(), mix()]);
        prop_assert_eq!(NoiseModelSet::parse(&set.to_text()).unwrap(), set);
    }

    #[test]
    fn map_channels_stay_bounded_monotone_and_contained(seed in any::<u64>()) {
        let world = metric_world(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = world.extent();
        let mut map = MetricMap::new(160, 3, 0.05, (w / 2.0, h / 2.0)).unwrap();
        let size = map.size();
        for _ in 0..6 {
            let before = map.clone();
            let pose = random_continuous_pose(&world, &mut rng);
            let scan = raycast(&world, &pose, 61, PI / 2.0, 3.0).unwrap();
            map.integrate(&scan, &pose, 3.0).unwrap();
            for c in 0..map.channels() {
                for (new, old) in map.channel(c).iter().zip(before.channel(c)) {
                    prop_assert!((0.0..=1.0).contains(new));
                    prop_assert!(new >= old);
                }
            }
            for c in 2..map.channels() {
                for k in 0..size * size {
                    if map.channel(EXPLORED)[k] == 0.0 {
                        prop_assert_eq!(map.channel(c)[k], 0.0);
                    }
                }
            }
        }
    }
}

/// Hop counts from `source` with 4- or 8-connected moves; diagonal moves
/// need one free side cell, as in the planner.
fn hops(grid: &PlanningGrid, source: (usize, usize), diagonal: bool) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let mut dist = vec![f64::INFINITY; w * h];
    dist[source.1 * w + source.0] = 0.0;
    let mut queue = VecDeque::from([source]);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * w + x];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx == 0 && dy == 0) || (!diagonal && dx != 0 && dy != 0) {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if grid.is_blocked(nx, ny) {
                    continue;
                }
                if dx != 0 && dy != 0 && grid.is_blocked(nx, y) && grid.is_blocked(x, ny) {
                    continue;
                }
                if dist[ny * w + nx].is_infinite() {
                    dist[ny * w + nx] = d + 1.0;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fmm_is_consistent_and_sandwiched(seed in any::<u64>(), density in 0.0f64..0.35) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, res) = (24, 20, 0.05);
        let mut blocked: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let source = (rng.random_range(0..w), rng.random_range(0..h));
        blocked[source.1 * w + source.0] = false;
        let grid = PlanningGrid::new(w, h, res, blocked).unwrap();
        let field = fmm_field(&grid, &[source]).unwrap();
        prop_assert_eq!(field.get(source.0, source.1), 0.0);
        prop_assert!(field.consistency_error(&grid) <= 1e-6);
        let (h8, h4) = (hops(&grid, source, true), hops(&grid, source, false));
        for y in 0..h {
            for x in 0..w {
                let f = field.get(x, y);
                let (lo, hi) = (h8[y * w + x] * res, h4[y * w + x] * res);
                prop_assert_eq!(f.is_finite(), lo.is_finite(), "reachability differs at ({}, {})", x, y);
                if f.is_finite() {
                    prop_assert!(lo <= f + 1e-9 && f <= hi + 1e-6, "({x}, {y}): {lo} <= {f} <= {hi}");
                }
            }
        }
    }

    #[test]
    fn navigation_metric_ranges(stopped in any::<bool>(), fd in 0.0f64..10.0, path in 0.0f64..30.0, shortest in 0.0f64..30.0) {
        let m = nav_metrics(stopped, fd, path, shortest, 1.0);
        prop_assert!((0.0..=1.0).contains(&m.spl));
        prop_assert!(m.success || m.spl == 0.0);
        prop_assert_eq!(m.success, stopped && fd <= 1.0);
        prop_assert!(m.dts >= 0.0);
        prop_assert_eq!(m.dts, (fd - 1.0).max(0.0));
    }

    #[test]
    fn direction_bins_wrap(a in -20.0f64..20.0, i in 0usize..DIRECTIONS) {
        prop_assert!(direction_bin(a) < DIRECTIONS);
        prop_assert_eq!(direction_bin(bin_angle(i)), i);
        let frac = (a / (2.0 * PI) * DIRECTIONS as f64).fract().abs();
        prop_assume!((frac - 0.5).abs() > 1e-6);
        prop_assert_eq!(direction_bin(a + 2.0 * PI), direction_bin(a));
    }

    #[test]
    fn scores_are_bounded_and_intra_score_decreases(d1 in 0.0f64..3.0, gap in 1e-6f64..3.0, heading in -PI..PI, g in -5.0f64..60.0) {
        let s = goal_score(g.max(0.0));
        prop_assert!((0.0..=1.0).contains(&s));
        let start = ContinuousPose::new(1.0, 1.0, 0.3);
        let at = |d: f64| ContinuousPose::new(1.0 + d * heading.cos(), 1.0 + d * heading.sin(), 0.0);
        let (near, far) = (intra_node_labels(&start, &at(d1)).score, intra_node_labels(&start, &at(d1 + gap)).score);
        prop_assert!((0.0..=1.0).contains(&near) && (0.0..=1.0).contains(&far));
        if d1 + gap <= 3.0 - 1e-9 {
            prop_assert!(near > far);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn graph_updates_keep_invariants_and_paths_are_shortest(seed in any::<u64>()) {
        let world = metric_world(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walk = random_walk(&world, 120, &mut rng);
        let mut graph = TopoGraph::new();
        for pose in &walk {
            let scan = raycast(&world, pose, 37, PI / 2.0, 3.0).unwrap();
            graph.update(&world, pose, &scan).unwrap();
            prop_assert!(graph.validate().is_ok());
            prop_assert!(graph.nodes.len() <= walk.len());
            for ghost in &graph.ghosts {
                prop_assert!(ghost.parent < graph.nodes.len());
            }
        }
        // Floyd-Warshall over the edge list.
        let n = graph.nodes.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for e in &graph.edges {
            let c = e.delta.translation();
            d[e.from][e.to] = d[e.from][e.to].min(c);
            d[e.to][e.from] = d[e.to][e.from].min(c);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                match graph.shortest_path(i, j) {
                    Ok((path, cost)) => {
                        prop_assert!((cost - d[i][j]).abs() <= 1e-9);
                        prop_assert_eq!(path.first(), Some(&i));
                        prop_assert_eq!(path.last(), Some(&j));
                    }
                    Err(_) => prop_assert!(d[i][j].is_infinite()),
                }
            }
        }
    }
}
