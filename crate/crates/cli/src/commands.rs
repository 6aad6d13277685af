//! Subcommand implementations. Each task writes its artifacts into the run
//! directory and returns the summary; the caller stamps timing and writes it.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use navlab::belief::{bayes_update, likelihood_from_depth, map_estimate, transition, uniform_prior, BeliefGrid};
use navlab::explore::{run_exploration_episode, run_objectgoal_episode, ExplorePolicy, NavConfig};
use navlab::localize::{
    evaluate_suite, run_localization_episode, suite_instance, EpisodeOptions, Policy, StateModel, TraceStep,
};
use navlab::noise::{fit_gmm, read_samples_csv, GaussianMixture3, NoiseModelSet};
use navlab::seed::{derive_rng, derive_seed, tag};
use navlab::topo::{generate_label_dataset, TopoGraph};
use navlab::world::{raycast, ContinuousPose, GridWorld};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    load, ExploreConfig, FitNoiseConfig, GenWorldConfig, LocalizeConfig, ObjectGoalConfig, TopoLabelConfig, Validate,
};
use crate::error::CliError;
use crate::record::{self, ExploreRow, NoiseRow, ObjectGoalRow, Summary, Task};
use crate::render;

/// A self-contained render input: the world travels as its text format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Artifact {
    Trajectory { world: String, poses: Vec<ContinuousPose> },
    TopoGraph { world: String, graph: TopoGraph },
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn prepared<T: Validate + Default + serde::de::DeserializeOwned>(config: Option<&Path>) -> Result<T, CliError> {
    let (mut cfg, base) = load::<T>(config)?;
    cfg.prepare(&base)?;
    Ok(cfg)
}

fn load_noise(path: Option<&PathBuf>) -> Result<Option<NoiseModelSet>, CliError> {
    Ok(path.map(NoiseModelSet::load).transpose()?)
}

pub fn gen_world(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    let cfg: GenWorldConfig = prepared(config)?;
    let (world_seed, world) = cfg.world.build(seed)?;
    world.save(out.join("world.txt"))?;
    write_file(&out.join("world.svg"), render::world_svg(&world, &[]))?;
    let aggregates = serde_json::json!({
        "world_seed": world_seed,
        "width": world.width(),
        "height": world.height(),
        "free_cells": world.free_count(),
    });
    Summary::new(Task::GenWorld, &cfg, seed, rayon::current_num_threads(), &aggregates)
}

/// Posterior after an episode, replayed from its trace.
fn replay_belief(world: &GridWorld, trace: &[TraceStep]) -> Result<BeliefGrid, CliError> {
    let mut belief = uniform_prior(world)?;
    for step in trace {
        belief = bayes_update(&belief, &likelihood_from_depth(world, step.depth))?;
        if let Some(a) = step.action {
            belief = transition(&belief, a, world);
        }
    }
    Ok(belief)
}

pub fn localize(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    let cfg: LocalizeConfig = prepared(config)?;
    let suite = cfg.suite(seed);
    let report = evaluate_suite(&suite)?;
    record::write_rows(out, Task::Localize, &report.records)?;
    if cfg.renders {
        for policy in &suite.policies {
            for cell in &suite.cells {
                let (_, world, start) = suite_instance(seed, cell.size, 0)?;
                let model = StateModel::new(&world);
                let mut rng = derive_rng(seed, &[tag("actions"), cell.size as u64, cell.episode_len as u64, 0]);
                let p = match policy.aml {
                    Some(c) => Policy::Aml(c),
                    None => Policy::Markov,
                };
                let options = EpisodeOptions {
                    record_trace: true,
                    ..EpisodeOptions::default()
                };
                let r = run_localization_episode(&world, &model, start, p, cell.episode_len, options, &mut rng)?;
                let belief = replay_belief(&world, r.trace.as_deref().unwrap_or_default())?;
                let path = out.join(format!("belief_{}_{}x{}.pgm", policy.name, cell.size, cell.episode_len));
                let mut buf = Vec::new();
                belief
                    .write_pgm(map_estimate(&belief).o, &mut buf)
                    .map_err(|e| CliError::io(&path, e))?;
                write_file(&path, buf)?;
            }
        }
    }
    let mut summary = Summary::new(Task::Localize, &cfg, seed, rayon::current_num_threads(), &report.cells)?;
    summary.timing = serde_json::to_value(&report.timing)?;
    Ok(summary)
}

/// Coverage after the first `frac` of the step budget.
fn coverage_at(coverage: &[f64], frac: f64) -> f64 {
    let i = ((coverage.len() as f64 * frac).ceil() as usize).clamp(1, coverage.len());
    coverage[i - 1]
}

fn world_for_episode(spec: &crate::config::WorldSpec, seed: u64, episode: usize) -> Result<(u64, GridWorld), CliError> {
    Ok(spec.build(derive_seed(seed, &[tag("world"), episode as u64]))?)
}

pub fn explore(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    let cfg: ExploreConfig = prepared(config)?;
    let noise = load_noise(cfg.noise.as_ref())?;
    let categories = usize::from(cfg.world.categories);
    let detector = cfg.detector.as_ref().map(|d| d.model(categories));
    let jobs: Vec<(usize, ExplorePolicy)> = (0..cfg.episodes)
        .flat_map(|i| cfg.policies.iter().map(move |p| (i, *p)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, policy)| {
            let (world_seed, world) = world_for_episode(&cfg.world, seed, i)?;
            let start = cfg.world.default_start(&world);
            let name = policy_name(policy);
            let mut rng = derive_rng(seed, &[tag("explore"), tag(name), i as u64]);
            let r = run_exploration_episode(&world, start, policy, &cfg.nav, noise.as_ref(), detector.as_ref(), &mut rng)?;
            let row = ExploreRow {
                policy: name.to_string(),
                episode: i,
                world_seed,
                steps: r.trajectory.len(),
                coverage_quarter: coverage_at(&r.coverage, 0.25),
                coverage_half: coverage_at(&r.coverage, 0.5),
                coverage_final: *r.coverage.last().expect("nonempty coverage"),
                area_m2_final: *r.coverage_m2.last().expect("nonempty coverage"),
                collisions: r.collisions,
                exhausted_at: r.exhausted_at,
                // `+ 0.0` turns an all-zero sum of -0.0 into 0.0.
                curiosity: r.curiosity.iter().sum::<f64>() + 0.0,
            };
            if i < cfg.renders {
                let poses: Vec<_> = r.trajectory.iter().map(|s| s.pose).collect();
                let stem = format!("{name}_{i:03}");
                write_file(&out.join(format!("map_{stem}.svg")), render::map_svg(&r.map, &poses))?;
                write_json(
                    &out.join(format!("trajectory_{stem}.json")),
                    &Artifact::Trajectory {
                        world: world.to_text(),
                        poses,
                    },
                )?;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    record::write_rows(out, Task::Explore, &results)?;
    Summary::new(
        Task::Explore,
        &cfg,
        seed,
        rayon::current_num_threads(),
        &record::explore_aggregates(&results),
    )
}

pub fn policy_name(policy: ExplorePolicy) -> &'static str {
    match policy {
        ExplorePolicy::Frontier => "frontier",
        ExplorePolicy::RandomGoal => "random-goal",
    }
}

pub fn objectgoal(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    let cfg: ObjectGoalConfig = prepared(config)?;
    let noise = load_noise(cfg.noise.as_ref())?;
    let rows = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let (world_seed, world) = world_for_episode(&cfg.world, seed, i)?;
            let categories = world.max_category();
            if categories == 0 {
                return Err(CliError::Config("world: object-goal search needs a world with objects".into()));
            }
            let detector = cfg.detector.as_ref().map(|d| d.model(usize::from(categories)));
            let goal = 1 + (i % usize::from(categories)) as u8;
            let start = cfg.world.default_start(&world);
            let mut rng = derive_rng(seed, &[tag("objectgoal"), i as u64]);
            let r = run_objectgoal_episode(&world, start, goal, &cfg.nav, noise.as_ref(), detector.as_ref(), &mut rng)?;
            if i < cfg.renders {
                let mut poses: Vec<_> = r.trajectory.iter().map(|s| s.pose).collect();
                poses.push(r.final_pose);
                write_file(&out.join(format!("map_{i:03}.svg")), render::map_svg(&r.map, &poses))?;
                write_json(
                    &out.join(format!("trajectory_{i:03}.json")),
                    &Artifact::Trajectory {
                        world: world.to_text(),
                        poses,
                    },
                )?;
            }
            Ok(ObjectGoalRow {
                episode: i,
                world_seed,
                goal_category: goal,
                steps: r.steps,
                stopped: r.stopped,
                success: r.metrics.success,
                spl: r.metrics.spl,
                dts: r.metrics.dts,
                path_length: r.metrics.path_length,
                shortest_path: r.metrics.shortest_path,
                final_distance: r.metrics.final_distance,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    record::write_rows(out, Task::Objectgoal, &rows)?;
    Summary::new(
        Task::Objectgoal,
        &cfg,
        seed,
        rayon::current_num_threads(),
        &record::objectgoal_aggregate(&rows),
    )
}

/// Replays a frontier-exploration trajectory into a topological graph.
fn replay_graph(world: &GridWorld, start: ContinuousPose, steps: usize, seed: u64) -> Result<TopoGraph, CliError> {
    let nav = NavConfig {
        steps,
        ..NavConfig::default()
    };
    let mut rng = derive_rng(seed, &[tag("graph")]);
    let r = run_exploration_episode(world, start, ExplorePolicy::Frontier, &nav, None, None, &mut rng)?;
    let mut graph = TopoGraph::new();
    for step in &r.trajectory {
        let scan = raycast(world, &step.pose, nav.rays, nav.fov_degrees * PI / 180.0, nav.vision_range)?;
        graph.update(world, &step.pose, &scan)?;
    }
    graph.validate()?;
    Ok(graph)
}

pub fn topo_label(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    let cfg: TopoLabelConfig = prepared(config)?;
    let (_, world) = cfg.world.build(seed)?;
    let pairs = generate_label_dataset(&world, cfg.poses, derive_seed(seed, &[tag("poses")]))?;
    record::write_label_rows(out, &pairs)?;
    world.save(out.join("world.txt"))?;
    if cfg.graph_steps > 0 {
        let graph = replay_graph(&world, cfg.world.default_start(&world), cfg.graph_steps, seed)?;
        write_file(&out.join("graph.svg"), render::graph_svg(&world, &graph))?;
        println!("graph: {} nodes, {} edges, {} ghosts", graph.nodes.len(), graph.edges.len(), graph.ghosts.len());
        write_json(
            &out.join("graph.json"),
            &Artifact::TopoGraph {
                world: world.to_text(),
                graph,
            },
        )?;
    }
    Summary::new(
        Task::TopoLabel,
        &cfg,
        seed,
        rayon::current_num_threads(),
        &record::topo_aggregate(&record::label_summary_rows(&pairs)),
    )
}

pub const NOISE_FILE: &str = "noise_models.txt";

pub fn fit_noise(config: Option<&Path>, seed: u64, out: &Path) -> Result<Summary, CliError> {
    if config.is_none() {
        return Err(CliError::Config("fit-noise needs --config naming the sample files".into()));
    }
    let cfg: FitNoiseConfig = prepared(config)?;
    let fits = cfg
        .samples
        .entries()
        .par_iter()
        .map(|(name, path)| {
            let samples = read_samples_csv(path)?;
            let mut rng = derive_rng(seed, &[tag(name)]);
            Ok((*name, fit_gmm(&samples, &cfg.k_candidates, cfg.holdout_fraction, &cfg.em, &mut rng)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows: Vec<NoiseRow> = fits
        .iter()
        .flat_map(|(name, fit)| {
            fit.heldout.iter().map(move |&(k, ll)| NoiseRow {
                model: name.to_string(),
                k,
                heldout_log_likelihood: ll,
                chosen: k == fit.chosen_k,
            })
        })
        .collect();
    let models: Vec<GaussianMixture3> = fits.into_iter().map(|(_, f)| f.model).collect();
    let [af, al, ar, sf, sl, sr]: [GaussianMixture3; 6] = models.try_into().expect("six noise models");
    NoiseModelSet::new([af, al, ar], [sf, sl, sr]).save(out.join(NOISE_FILE))?;
    record::write_rows(out, Task::FitNoise, &rows)?;
    Summary::new(
        Task::FitNoise,
        &cfg,
        seed,
        rayon::current_num_threads(),
        &record::noise_aggregates(&rows),
    )
}

/// Renders a world file or a JSON artifact to SVG.
pub fn render_input(input: &Path, output: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let svg = if input.extension().is_some_and(|e| e == "json") {
        match serde_json::from_str::<Artifact>(&text)? {
            Artifact::Trajectory { world, poses } => render::world_svg(&GridWorld::parse(&world)?, &poses),
            Artifact::TopoGraph { world, graph } => {
                graph.validate()?;
                render::graph_svg(&GridWorld::parse(&world)?, &graph)
            }
        }
    } else {
        render::world_svg(&GridWorld::parse(&text)?, &[])
    };
    write_file(output, svg)
}

/// Human-readable tables of one or more verified runs.
pub fn report(dirs: &[PathBuf]) -> Result<String, CliError> {
    let mut out = String::new();
    for dir in dirs {
        let summary = record::verify(dir)?;
        let _ = writeln!(
            out,
            "{} ({}, seed {}, fingerprint {}): aggregates verified",
            dir.display(),
            summary.task.name(),
            summary.seed,
            summary.fingerprint
        );
        match summary.task {
            Task::Localize => localize_table(&mut out, &summary)?,
            Task::Explore => {
                let _ = writeln!(out, "{:<12} {:>8} {:>9} {:>9} {:>9} {:>10} {:>9}", "policy", "episodes", "cov@25%", "cov@50%", "cov", "collisions", "exhausted");
                for a in serde_json::from_value::<Vec<record::ExploreAggregate>>(summary.aggregates.clone())? {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>8} {:>9.3} {:>9.3} {:>9.3} {:>10.1} {:>9}",
                        a.policy, a.episodes, a.mean_coverage_quarter, a.mean_coverage_half, a.mean_coverage_final, a.mean_collisions, a.exhausted
                    );
                }
            }
            Task::Objectgoal => {
                let a: record::ObjectGoalAggregate = serde_json::from_value(summary.aggregates.clone())?;
                let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8}", "episodes", "success", "SPL", "DTS");
                let _ = writeln!(out, "{:>8} {:>8.3} {:>8.3} {:>8.3}", a.episodes, a.success_rate, a.mean_spl, a.mean_dts);
            }
            Task::TopoLabel => {
                let a: record::TopoAggregate = serde_json::from_value(summary.aggregates.clone())?;
                let _ = writeln!(
                    out,
                    "pairs {}  connected {}  mean intra score {:.3}  explorable fraction {:.3}",
                    a.pairs, a.connected, a.mean_intra_score, a.explorable_fraction
                );
            }
            Task::FitNoise => {
                for a in serde_json::from_value::<Vec<record::NoiseAggregate>>(summary.aggregates.clone())? {
                    let _ = writeln!(out, "{:<18} k={}  held-out log-likelihood {:.4}", a.model, a.chosen_k, a.heldout_log_likelihood);
                }
            }
            Task::GenWorld => {
                let _ = writeln!(out, "{}", summary.aggregates);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Time and accuracy per policy, one column per (maze size, episode length)
/// cell and a final column over all cells.
fn localize_table(out: &mut String, summary: &Summary) -> Result<(), CliError> {
    let cells = record::localize_cells(summary)?;
    let timing: Vec<navlab::localize::CellTiming> = serde_json::from_value(summary.timing.clone()).unwrap_or_default();
    let mut columns: Vec<(usize, usize)> = Vec::new();
    let mut policies: Vec<&str> = Vec::new();
    for c in &cells {
        if !columns.contains(&(c.size, c.episode_len)) {
            columns.push((c.size, c.episode_len));
        }
        if !policies.contains(&c.policy.as_str()) {
            policies.push(&c.policy);
        }
    }
    let _ = write!(out, "{:<18}", "");
    for (s, l) in &columns {
        let _ = write!(out, " {:>9}", format!("{s}x{s}/{l}"));
    }
    let _ = writeln!(out, " {:>9}", "All");
    for p in policies {
        let find = |s: usize, l: usize| cells.iter().find(|c| c.policy == p && c.size == s && c.episode_len == l);
        let _ = write!(out, "{:<18}", format!("{p} Time (s)"));
        let mut total = 0.0;
        for &(s, l) in &columns {
            let per_episode = timing
                .iter()
                .find(|t| t.policy == p && t.size == s && t.episode_len == l)
                .zip(find(s, l))
                .map(|(t, c)| t.wall_seconds / c.episodes as f64);
            match per_episode {
                Some(t) => {
                    total += t;
                    let _ = write!(out, " {t:>9.4}");
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>9.4}", total / columns.len() as f64);
        let _ = write!(out, "{:<18}", format!("{p} Acc"));
        let (mut correct, mut n) = (0.0, 0usize);
        for &(s, l) in &columns {
            match find(s, l) {
                Some(c) => {
                    correct += c.accuracy * c.episodes as f64;
                    n += c.episodes;
                    let _ = write!(out, " {:>9.3}", c.accuracy);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>9.3}", correct / n.max(1) as f64);
    }
    Ok(())
}
