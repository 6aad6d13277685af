//! Localization policies and the episode benchmark.
//!
//! Passive Markov localization drives the filter with random actions. The
//! active planner scores every action sequence of a fixed lookahead by the
//! expected entropy of the belief after executing it, observing after each
//! action, and commits the first few actions of the best sequence.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{
    bayes_update, entropy, entropy_of, map_estimate, state_index, state_pose, step_reward, transition, uniform_prior,
    BeliefGrid, LikelihoodGrid,
};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, derive_seed, tag};
use crate::world::{discrete_step, generate_maze, Action, DepthTable, DiscretePose, GridWorld, Orientation, ORIENTATIONS};

pub const DEFAULT_TAU: f64 = 1e-3;

/// Utilities at or below this carry no information; the planner then acts randomly.
pub const UTILITY_EPS: f64 = 1e-12;

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmlConfig {
    /// Length of the evaluated action sequences.
    pub lookahead: usize,
    /// Actions committed per plan.
    pub greediness: usize,
    /// Planning starts once at most this many states exceed `tau`.
    pub concentration: usize,
    /// Belief entries at or below this are ignored by the planner.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl AmlConfig {
    pub const FAST: AmlConfig = AmlConfig {
        lookahead: 1,
        greediness: 1,
        concentration: 5,
        tau: DEFAULT_TAU,
    };

    pub const SLOW: AmlConfig = AmlConfig {
        lookahead: 5,
        greediness: 1,
        concentration: 10,
        tau: DEFAULT_TAU,
    };

    pub fn validate(&self) -> Result<()> {
        if self.greediness < 1 || self.greediness > self.lookahead {
            return Err(Error::InvariantViolation(format!(
                "greediness {} must lie in 1..={}",
                self.greediness, self.lookahead
            )));
        }
        if self.lookahead > 12 {
            return Err(Error::InvariantViolation(format!("lookahead {} is too large", self.lookahead)));
        }
        if self.concentration < 1 {
            return Err(Error::InvariantViolation("concentration must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvariantViolation(format!("tau {} outside [0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// Uniform over the three motion actions.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::MOVES[rng.random_range(0..Action::MOVES.len())]
}

/// True when at most `concentration` belief entries exceed `tau`.
pub fn is_concentrated(belief: &BeliefGrid, cfg: &AmlConfig) -> bool {
    belief.values().iter().filter(|v| **v > cfg.tau).count() <= cfg.concentration
}

const NO_DEPTH: u16 = u16::MAX;

/// Precomputed motion and observation tables of a world, indexed like a
/// belief grid.
#[derive(Debug, Clone)]
pub struct StateModel {
    width: usize,
    height: usize,
    next: [Vec<u32>; 3],
    depth: Vec<u16>,
}

impl StateModel {
    pub fn new(world: &GridWorld) -> Self {
        let (w, h) = (world.width(), world.height());
        let n = ORIENTATIONS * w * h;
        let table = DepthTable::new(world);
        let depth = (0..n)
            .map(|i| table.get(i).map_or(NO_DEPTH, |d| d as u16))
            .collect();
        let next = Action::MOVES.map(|a| {
            (0..n)
                .map(|i| {
                    let p = state_pose(w, h, i);
                    if world.is_free(p.x, p.y) {
                        state_index(w, h, discrete_step(world, p, a)) as u32
                    } else {
                        i as u32
                    }
                })
                .collect()
        });
        Self {
            width: w,
            height: h,
            next,
            depth,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn next(&self, state: u32, action: Action) -> u32 {
        match action {
            Action::Stop => state,
            a => self.next[a.index()][state as usize],
        }
    }

    pub fn depth(&self, state: u32) -> Option<usize> {
        match self.depth[state as usize] {
            NO_DEPTH => None,
            d => Some(d as usize),
        }
    }

    pub fn likelihood(&self, depth: usize) -> LikelihoodGrid {
        let values = self
            .depth
            .iter()
            .map(|d| if usize::from(*d) == depth { 1.0 } else { 0.0 })
            .collect();
        LikelihoodGrid::new(self.width, self.height, values).expect("table shape matches grid")
    }
}

/// Belief restricted to its support, states ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBelief {
    pub states: Vec<u32>,
    pub probs: Vec<f64>,
}

impl SparseBelief {
    /// Entries above `tau`, renormalized. Falls back to the full support when
    /// nothing exceeds `tau`.
    pub fn from_grid(belief: &BeliefGrid, tau: f64) -> Self {
        let pick = |t: f64| -> (Vec<u32>, Vec<f64>) {
            belief
                .values()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > t)
                .map(|(i, v)| (i as u32, *v))
                .unzip()
        };
        let (mut states, mut probs) = pick(tau);
        if states.is_empty() {
            (states, probs) = pick(0.0);
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Self { states, probs }
    }

    fn key(&self) -> (Vec<u32>, Vec<u64>) {
        (self.states.clone(), self.probs.iter().map(|p| p.to_bits()).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerStats {
    pub plans: u64,
    /// Top-level sequence utilities computed rather than read from the cache.
    pub sequences_evaluated: u64,
    /// Belief transitions split by observation.
    pub expansions: u64,
    pub value_hits: u64,
}

type Branches = Rc<Vec<(f64, u32)>>;

/// Per-episode memo of expected entropies keyed by (belief, action suffix),
/// plus the observation split of each (belief, action) pair.
#[derive(Debug)]
pub struct PlannerCache {
    enabled: bool,
    ids: HashMap<(Vec<u32>, Vec<u64>), u32>,
    beliefs: Vec<SparseBelief>,
    expansions: HashMap<(u32, usize), Branches>,
    values: HashMap<(u32, u64), f64>,
    stats: PlannerStats,
}

impl Default for PlannerCache {
    fn default() -> Self {
        Self::new()
    }
}

fn suffix_code(suffix: &[Action]) -> u64 {
    suffix
        .iter()
        .fold(suffix.len() as u64, |code, a| code * 4 + a.index() as u64)
}

impl PlannerCache {
    pub fn new() -> Self {
        Self::with_enabled(true)
    }

    /// A cache that never returns stored results; used to cross-check.
    pub fn disabled() -> Self {
        Self::with_enabled(false)
    }

    fn with_enabled(enabled: bool) -> Self {
        Self {
            enabled,
            ids: HashMap::new(),
            beliefs: Vec::new(),
            expansions: HashMap::new(),
            values: HashMap::new(),
            stats: PlannerStats::default(),
        }
    }

    pub fn stats(&self) -> PlannerStats {
        self.stats
    }

    fn intern(&mut self, belief: SparseBelief) -> u32 {
        let key = belief.key();
        if let Some(id) = self.ids.get(&key) {
            return *id;
        }
        let id = self.beliefs.len() as u32;
        self.beliefs.push(belief);
        self.ids.insert(key, id);
        id
    }

    fn expand(&mut self, model: &StateModel, id: u32, action: Action) -> Branches {
        if self.enabled {
            if let Some(b) = self.expansions.get(&(id, action.index())) {
                return Rc::clone(b);
            }
        }
        self.stats.expansions += 1;
        let belief = &self.beliefs[id as usize];
        let mut moved: Vec<(u16, u32, f64)> = belief
            .states
            .iter()
            .zip(&belief.probs)
            .map(|(s, p)| {
                let n = model.next(*s, action);
                (model.depth[n as usize], n, *p)
            })
            .collect();
        // Stable: equal states keep their source order, so merged sums are reproducible.
        moved.sort_by_key(|m| (m.0, m.1));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < moved.len() {
            let d = moved[i].0;
            let mut states: Vec<u32> = Vec::new();
            let mut probs: Vec<f64> = Vec::new();
            while i < moved.len() && moved[i].0 == d {
                let (_, s, p) = moved[i];
                if states.last() == Some(&s) {
                    *probs.last_mut().unwrap() += p;
                } else {
                    states.push(s);
                    probs.push(p);
                }
                i += 1;
            }
            let mass: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= mass;
            }
            groups.push((mass, SparseBelief { states, probs }));
        }
        let branches: Vec<(f64, u32)> = groups.into_iter().map(|(m, b)| (m, self.intern(b))).collect();
        let branches = Rc::new(branches);
        if self.enabled {
            self.expansions.insert((id, action.index()), Rc::clone(&branches));
        }
        branches
    }

    fn expected_entropy(&mut self, model: &StateModel, id: u32, suffix: &[Action]) -> f64 {
        let Some((&first, rest)) = suffix.split_first() else {
            return entropy_of(self.beliefs[id as usize].probs.iter().copied());
        };
        let key = (id, suffix_code(suffix));
        if self.enabled {
            if let Some(v) = self.values.get(&key) {
                self.stats.value_hits += 1;
                return *v;
            }
        }
        let branches = self.expand(model, id, first);
        let mut total = 0.0;
        for (mass, child) in branches.iter() {
            total += mass * self.expected_entropy(model, *child, rest);
        }
        if self.enabled {
            self.values.insert(key, total);
        }
        total
    }
}

/// Expected belief entropy after executing `seq`, observing depth after each
/// action. Exact over the belief support.
pub fn expected_entropy_after(belief: &BeliefGrid, seq: &[Action], world: &GridWorld) -> f64 {
    let model = StateModel::new(world);
    expected_entropy_with(&SparseBelief::from_grid(belief, 0.0), seq, &model, &mut PlannerCache::disabled())
}

pub fn expected_entropy_with(belief: &SparseBelief, seq: &[Action], model: &StateModel, cache: &mut PlannerCache) -> f64 {
    let id = cache.intern(belief.clone());
    cache.expected_entropy(model, id, seq)
}

/// All sequences of `len` motion actions in lexicographic (Forward, TurnLeft,
/// TurnRight) order.
pub fn action_sequences(len: usize) -> Vec<Vec<Action>> {
    let n = Action::MOVES.len();
    (0..n.pow(len as u32))
        .map(|mut k| {
            let mut seq = vec![Action::Forward; len];
            for slot in seq.iter_mut().rev() {
                *slot = Action::MOVES[k % n];
                k /= n;
            }
            seq
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmlPlan {
    /// First `greediness` actions of the best sequence.
    pub actions: Vec<Action>,
    pub sequence: Vec<Action>,
    /// Entropy of the planning belief minus the sequence's expected entropy.
    pub utility: f64,
}

impl AmlPlan {
    pub fn informative(&self) -> bool {
        self.utility > UTILITY_EPS
    }
}

/// Scores every sequence of `cfg.lookahead` actions on the belief restricted
/// to entries above `cfg.tau`. Equal utilities go to the sequence with the
/// lowest summed expected entropy over its proper prefixes, then to the
/// lexicographically first.
pub fn aml_select(belief: &BeliefGrid, model: &StateModel, cfg: &AmlConfig, cache: &mut PlannerCache) -> AmlPlan {
    if !cache.enabled {
        *cache = PlannerCache {
            stats: cache.stats,
            ..PlannerCache::disabled()
        };
    }
    cache.stats.plans += 1;
    let sparse = SparseBelief::from_grid(belief, cfg.tau);
    let current = entropy_of(sparse.probs.iter().copied());
    let id = cache.intern(sparse);
    let mut best: Option<(f64, f64, Vec<Action>)> = None;
    for seq in action_sequences(cfg.lookahead) {
        if !(cache.enabled && cache.values.contains_key(&(id, suffix_code(&seq)))) {
            cache.stats.sequences_evaluated += 1;
        }
        let u = current - cache.expected_entropy(model, id, &seq);
        // Among equal utilities prefer sequences that gain information early;
        // otherwise a receding horizon keeps deferring the informative action.
        let lag: f64 = (1..seq.len())
            .map(|k| cache.expected_entropy(model, id, &seq[..k]))
            .sum();
        let better = match &best {
            None => true,
            Some((bu, bl, _)) => u > bu + UTILITY_EPS || (u >= bu - UTILITY_EPS && lag < bl - UTILITY_EPS),
        };
        if better {
            best = Some((u, lag, seq));
        }
    }
    let (utility, _, sequence) = best.expect("at least one sequence");
    AmlPlan {
        actions: sequence[..cfg.greediness].to_vec(),
        sequence,
        utility,
    }
}

/// Hook for externally supplied policies, such as a learned one.
pub trait ExternalPolicy {
    fn act(&mut self, belief: &BeliefGrid, world: &GridWorld, step: usize) -> Action;
}

pub enum Policy<'a> {
    Markov,
    Aml(AmlConfig),
    External(&'a mut dyn ExternalPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub record_trace: bool,
    pub use_cache: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            record_trace: false,
            use_cache: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub pose: DiscretePose,
    pub depth: usize,
    pub entropy: f64,
    pub max_probability: f64,
    pub estimate: DiscretePose,
    /// Action taken after this observation; `None` on the last step.
    pub action: Option<Action>,
    pub planned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub correct: bool,
    pub rewards: Vec<f64>,
    pub steps: usize,
    pub wall_time: f64,
    pub start: DiscretePose,
    pub final_pose: DiscretePose,
    pub prediction: DiscretePose,
    pub actions: Vec<Action>,
    pub planner: PlannerStats,
    pub trace: Option<Vec<TraceStep>>,
}

/// Runs one episode of `episode_len` observations from a hidden start pose.
/// The belief starts uniform and is updated after every observation; the
/// prediction is the MAP state of the final posterior.
pub fn run_localization_episode<R: Rng + ?Sized>(
    world: &GridWorld,
    model: &StateModel,
    start: DiscretePose,
    mut policy: Policy<'_>,
    episode_len: usize,
    options: EpisodeOptions,
    rng: &mut R,
) -> Result<EpisodeResult> {
    if episode_len == 0 {
        return Err(Error::InvariantViolation("episode length must be at least 1".into()));
    }
    if start.x >= world.width() || start.y >= world.height() || !world.is_free(start.x, start.y) {
        return Err(Error::InvariantViolation(format!("start {start:?} is not a free cell")));
    }
    if let Policy::Aml(cfg) = &policy {
        cfg.validate()?;
    }
    let clock = Instant::now();
    let mut cache = if options.use_cache {
        PlannerCache::new()
    } else {
        PlannerCache::disabled()
    };
    let mut belief = uniform_prior(world)?;
    let mut pose = start;
    let mut queue: VecDeque<Action> = VecDeque::new();
    let mut rewards = Vec::with_capacity(episode_len);
    let mut actions = Vec::with_capacity(episode_len.saturating_sub(1));
    let mut trace = options.record_trace.then(Vec::new);

    for t in 0..episode_len {
        let depth = model
            .depth(state_index(model.width(), model.height(), pose) as u32)
            .expect("agent stays on free cells");
        belief = bayes_update(&belief, &model.likelihood(depth))?;
        rewards.push(step_reward(&belief));

        let mut planned = false;
        let action = if t + 1 == episode_len {
            None
        } else {
            Some(match &mut policy {
                Policy::Markov => random_policy(rng),
                Policy::External(p) => p.act(&belief, world, t),
                Policy::Aml(cfg) => {
                    if let Some(a) = queue.pop_front() {
                        planned = true;
                        a
                    } else if is_concentrated(&belief, cfg) {
                        let plan = aml_select(&belief, model, cfg, &mut cache);
                        if plan.informative() {
                            planned = true;
                            queue.extend(plan.actions);
                            queue.pop_front().expect("plan has at least one action")
                        } else {
                            random_policy(rng)
                        }
                    } else {
                        random_policy(rng)
                    }
                }
            })
        };
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceStep {
                step: t,
                pose,
                depth,
                entropy: entropy(&belief),
                max_probability: step_reward(&belief),
                estimate: map_estimate(&belief),
                action,
                planned,
            });
        }
        if let Some(a) = action {
            belief = transition(&belief, a, world);
            pose = discrete_step(world, pose, a);
            actions.push(a);
        }
    }

    let prediction = map_estimate(&belief);
    Ok(EpisodeResult {
        correct: prediction == pose,
        steps: rewards.len(),
        rewards,
        wall_time: clock.elapsed().as_secs_f64(),
        start,
        final_pose: pose,
        prediction,
        actions,
        planner: cache.stats(),
        trace,
    })
}

/// Uniformly random free cell and heading.
pub fn random_start<R: Rng + ?Sized>(world: &GridWorld, rng: &mut R) -> DiscretePose {
    let free: Vec<_> = world.free_cells().collect();
    let (x, y) = free[rng.random_range(0..free.len())];
    DiscretePose::new(x, y, Orientation::from_index(rng.random_range(0..ORIENTATIONS)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuitePolicy {
    pub name: String,
    /// Planner settings; absent means passive Markov localization.
    #[serde(default)]
    pub aml: Option<AmlConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteCell {
    pub size: usize,
    pub episode_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationSuite {
    pub cells: Vec<SuiteCell>,
    pub policies: Vec<SuitePolicy>,
    pub episodes: usize,
    pub seed: u64,
}

impl LocalizationSuite {
    /// Markov, AML fast and AML slow on 7, 15 and 21 mazes at two episode
    /// lengths each.
    pub fn standard(episodes: usize, seed: u64) -> Self {
        let cells = [(7, 15), (7, 30), (15, 20), (15, 40), (21, 30), (21, 60)]
            .into_iter()
            .map(|(size, episode_len)| SuiteCell { size, episode_len })
            .collect();
        let policies = vec![
            SuitePolicy {
                name: "markov".into(),
                aml: None,
            },
            SuitePolicy {
                name: "aml-fast".into(),
                aml: Some(AmlConfig::FAST),
            },
            SuitePolicy {
                name: "aml-slow".into(),
                aml: Some(AmlConfig::SLOW),
            },
        ];
        Self {
            cells,
            policies,
            episodes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            if c.size < 5 || c.size % 2 == 0 {
                return Err(Error::InvariantViolation(format!("maze size {} must be odd and at least 5", c.size)));
            }
            if c.episode_len == 0 {
                return Err(Error::InvariantViolation("episode_len must be at least 1".into()));
            }
        }
        for p in &self.policies {
            if let Some(cfg) = &p.aml {
                cfg.validate()?;
            }
        }
        Ok(())
    }
}

/// One persisted episode outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub policy: String,
    pub size: usize,
    pub episode_len: usize,
    pub episode: usize,
    pub maze_seed: u64,
    pub start_x: usize,
    pub start_y: usize,
    pub start_o: usize,
    pub correct: bool,
    pub mean_reward: f64,
    pub final_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub policy: String,
    pub size: usize,
    pub episode_len: usize,
    pub episodes: usize,
    pub accuracy: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub policy: String,
    pub size: usize,
    pub episode_len: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub records: Vec<EpisodeRecord>,
    pub cells: Vec<CellMetrics>,
    pub timing: Vec<CellTiming>,
}

impl SuiteReport {
    pub fn cell(&self, policy: &str, size: usize, episode_len: usize) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.size == size && c.episode_len == episode_len)
    }
}

/// Per-cell metrics from episode records, cells in order of first appearance.
pub fn aggregate_records(records: &[EpisodeRecord]) -> Vec<CellMetrics> {
    let mut order: Vec<(String, usize, usize)> = Vec::new();
    let mut sums: HashMap<(String, usize, usize), (usize, usize, f64)> = HashMap::new();
    for r in records {
        let key = (r.policy.clone(), r.size, r.episode_len);
        let entry = sums.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0, 0.0)
        });
        entry.0 += 1;
        entry.1 += usize::from(r.correct);
        entry.2 += r.mean_reward;
    }
    order
        .into_iter()
        .map(|key| {
            let (n, correct, reward) = sums[&key];
            CellMetrics {
                policy: key.0,
                size: key.1,
                episode_len: key.2,
                episodes: n,
                accuracy: correct as f64 / n as f64,
                mean_reward: reward / n as f64,
            }
        })
        .collect()
}

/// The maze seed and hidden start of episode `i` at maze size `size`. Shared
/// by every policy and episode length so comparisons are paired.
pub fn suite_instance(seed: u64, size: usize, i: usize) -> Result<(u64, GridWorld, DiscretePose)> {
    let maze_seed = derive_seed(seed, &[tag("maze"), size as u64, i as u64]);
    let world = generate_maze(size, size, maze_seed)?;
    let start = random_start(&world, &mut derive_rng(seed, &[tag("start"), size as u64, i as u64]));
    Ok((maze_seed, world, start))
}

/// Runs every (policy, cell) of the suite. Episodes of a cell run on the
/// current rayon pool; records come back in episode order regardless of
/// scheduling.
pub fn evaluate_suite(suite: &LocalizationSuite) -> Result<SuiteReport> {
    suite.validate()?;
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for policy in &suite.policies {
        for cell in &suite.cells {
            let clock = Instant::now();
            let rows: Vec<EpisodeRecord> = (0..suite.episodes)
                .into_par_iter()
                .map(|i| {
                    let (maze_seed, world, start) = suite_instance(suite.seed, cell.size, i)?;
                    let model = StateModel::new(&world);
                    let mut rng =
                        derive_rng(suite.seed, &[tag("actions"), cell.size as u64, cell.episode_len as u64, i as u64]);
                    let p = match policy.aml {
                        Some(cfg) => Policy::Aml(cfg),
                        None => Policy::Markov,
                    };
                    let r = run_localization_episode(
                        &world,
                        &model,
                        start,
                        p,
                        cell.episode_len,
                        EpisodeOptions::default(),
                        &mut rng,
                    )?;
                    Ok(EpisodeRecord {
                        policy: policy.name.clone(),
                        size: cell.size,
                        episode_len: cell.episode_len,
                        episode: i,
                        maze_seed,
                        start_x: start.x,
                        start_y: start.y,
                        start_o: start.o.index(),
                        correct: r.correct,
                        mean_reward: r.rewards.iter().sum::<f64>() / r.steps as f64,
                        final_reward: *r.rewards.last().expect("episode has a step"),
                    })
                })
                .collect::<Result<_>>()?;
            timing.push(CellTiming {
                policy: policy.name.clone(),
                size: cell.size,
                episode_len: cell.episode_len,
                wall_seconds: clock.elapsed().as_secs_f64(),
            });
            records.extend(rows);
        }
    }
    Ok(SuiteReport {
        cells: aggregate_records(&records),
        records,
        timing,
    })
}
