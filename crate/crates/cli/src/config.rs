//! Task configuration files.
//!
//! Configs are TOML. Unknown keys are rejected so typos surface as errors
//! instead of silently falling back to defaults. Relative paths inside a
//! config resolve against the config file's directory.

use std::path::{Path, PathBuf};

use navlab::explore::{ExplorePolicy, NavConfig};
use navlab::localize::{LocalizationSuite, SuiteCell, SuitePolicy};
use navlab::mapping::DetectorModel;
use navlab::noise::EmSettings;
use navlab::world::{generate_maze, ContinuousPose, GridWorld};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// How to obtain the world of each episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    /// Load this world file instead of generating one.
    pub file: Option<PathBuf>,
    pub kind: WorldKind,
    /// Maze lattice size (odd), or room size in cells.
    pub size: usize,
    /// Passage and wall widths in cells when a maze is scaled to metric.
    pub passage: usize,
    pub wall: usize,
    pub cell_size: f64,
    /// Fixed world seed; by default every episode derives its own.
    pub seed: Option<u64>,
    pub categories: u8,
    pub objects: usize,
    pub object_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    /// Lattice maze, one cell per lattice square.
    Maze,
    /// Lattice maze scaled to a metric grid.
    MetricMaze,
    Room,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            file: None,
            kind: WorldKind::MetricMaze,
            size: 15,
            passage: 16,
            wall: 4,
            cell_size: 0.05,
            seed: None,
            categories: 0,
            objects: 0,
            object_length: 8,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(f) = &self.file {
            if !f.exists() {
                return Err(CliError::Config(format!("world.file: {} does not exist", f.display())));
            }
            return Ok(());
        }
        if self.size < 3 {
            return Err(CliError::Config(format!("world.size: {} is too small", self.size)));
        }
        if self.kind != WorldKind::Room && self.size % 2 == 0 {
            return Err(CliError::Config(format!("world.size: maze size {} must be odd", self.size)));
        }
        if !(self.cell_size > 0.0) {
            return Err(CliError::Config(format!("world.cell_size: {} must be positive", self.cell_size)));
        }
        if self.passage == 0 || self.wall == 0 {
            return Err(CliError::Config("world.passage and world.wall must be positive".into()));
        }
        if self.objects > 0 && self.categories == 0 {
            return Err(CliError::Config("world.objects needs world.categories >= 1".into()));
        }
        Ok(())
    }

    /// Builds the world; `seed` is used unless the spec fixes one.
    pub fn build(&self, seed: u64) -> navlab::Result<(u64, GridWorld)> {
        let seed = self.seed.unwrap_or(seed);
        let mut world = match (&self.file, self.kind) {
            (Some(f), _) => GridWorld::load(f)?,
            (None, WorldKind::Maze) => generate_maze(self.size, self.size, seed)?,
            (None, WorldKind::MetricMaze) => {
                generate_maze(self.size, self.size, seed)?.inflate_maze(self.passage, self.wall, self.cell_size)?
            }
            (None, WorldKind::Room) => GridWorld::room(self.size, self.size, self.cell_size),
        };
        world.paint_objects(self.categories, self.objects, self.object_length, seed);
        Ok((seed, world))
    }

    /// Default start: the middle of the first maze passage, or the world
    /// center otherwise.
    pub fn default_start(&self, world: &GridWorld) -> ContinuousPose {
        let (x, y) = match (&self.file, self.kind) {
            (None, WorldKind::MetricMaze) => {
                let c = self.wall + self.passage / 2;
                world.cell_center(c, c)
            }
            (None, WorldKind::Maze) => world.cell_center(1, 1),
            _ => {
                let (w, h) = world.extent();
                (w / 2.0, h / 2.0)
            }
        };
        ContinuousPose::new(x, y, 0.0)
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(f) = &self.file {
            self.file = Some(base.join(f));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub off_diagonal: f64,
    #[serde(default)]
    pub miss_rate: f64,
}

impl DetectorSpec {
    pub fn model(&self, categories: usize) -> DetectorModel {
        DetectorModel::uniform_confusion(categories, self.off_diagonal, self.miss_rate)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.off_diagonal) {
            return Err(CliError::Config(format!("detector.off_diagonal: {} outside [0, 1]", self.off_diagonal)));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(CliError::Config(format!("detector.miss_rate: {} outside [0, 1]", self.miss_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenWorldConfig {
    pub world: WorldSpec,
}

impl Default for GenWorldConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub episodes: usize,
    pub cells: Vec<SuiteCell>,
    pub policies: Vec<SuitePolicy>,
    /// Belief heat maps of the first episode of each (policy, cell).
    pub renders: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        let standard = LocalizationSuite::standard(100, 0);
        Self {
            episodes: standard.episodes,
            cells: standard.cells,
            policies: standard.policies,
            renders: false,
        }
    }
}

impl LocalizeConfig {
    pub fn suite(&self, seed: u64) -> LocalizationSuite {
        LocalizationSuite {
            cells: self.cells.clone(),
            policies: self.policies.clone(),
            episodes: self.episodes,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    pub episodes: usize,
    pub policies: Vec<ExplorePolicy>,
    pub world: WorldSpec,
    pub nav: NavConfig,
    /// Noise-model file; noiseless when absent.
    pub noise: Option<PathBuf>,
    pub detector: Option<DetectorSpec>,
    /// Episodes per policy to render.
    pub renders: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            policies: vec![ExplorePolicy::Frontier, ExplorePolicy::RandomGoal],
            world: WorldSpec::default(),
            nav: NavConfig::default(),
            noise: None,
            detector: None,
            renders: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectGoalConfig {
    pub episodes: usize,
    pub world: WorldSpec,
    pub nav: NavConfig,
    pub noise: Option<PathBuf>,
    pub detector: Option<DetectorSpec>,
    pub renders: usize,
}

impl Default for ObjectGoalConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            world: WorldSpec {
                categories: 4,
                objects: 12,
                ..WorldSpec::default()
            },
            nav: NavConfig {
                steps: 500,
                ..NavConfig::default()
            },
            noise: None,
            detector: None,
            renders: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopoLabelConfig {
    pub world: WorldSpec,
    pub poses: usize,
    /// Frontier-exploration steps replayed into a topological graph;
    /// 0 skips the graph.
    pub graph_steps: usize,
}

impl Default for TopoLabelConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            poses: 300,
            graph_steps: 500,
        }
    }
}

/// Sample files for the six noise models, three actions each for actuation
/// and sensing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSamples {
    pub actuation_forward: PathBuf,
    pub actuation_left: PathBuf,
    pub actuation_right: PathBuf,
    pub sensor_forward: PathBuf,
    pub sensor_left: PathBuf,
    pub sensor_right: PathBuf,
}

impl NoiseSamples {
    pub fn entries(&self) -> [(&'static str, &Path); 6] {
        [
            ("actuation.forward", &self.actuation_forward),
            ("actuation.left", &self.actuation_left),
            ("actuation.right", &self.actuation_right),
            ("sensor.forward", &self.sensor_forward),
            ("sensor.left", &self.sensor_left),
            ("sensor.right", &self.sensor_right),
        ]
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.actuation_forward,
            &mut self.actuation_left,
            &mut self.actuation_right,
            &mut self.sensor_forward,
            &mut self.sensor_left,
            &mut self.sensor_right,
        ] {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitNoiseConfig {
    pub samples: NoiseSamples,
    #[serde(default = "default_k")]
    pub k_candidates: Vec<usize>,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub em: EmSettings,
}

fn default_k() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}

fn default_holdout() -> f64 {
    1.0 / 6.0
}

fn validate_nav(nav: &NavConfig) -> Result<(), CliError> {
    nav.validate().map_err(|e| CliError::Config(format!("nav: {e}")))
}

fn check_file(field: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: {} does not exist", path.display())))
    }
}

fn episodes_at_least_one(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("episodes: must be at least 1".into()));
    }
    Ok(())
}

/// Parses a config, or returns the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, PathBuf), CliError> {
    let Some(path) = path else {
        return Ok((T::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub trait Validate {
    /// Resolves relative paths against `base` and checks field ranges.
    fn prepare(&mut self, base: &Path) -> Result<(), CliError>;
}

impl Validate for GenWorldConfig {
    fn prepare(&mut self, base: &Path) -> Result<(), CliError> {
        self.world.resolve(base);
        self.world.validate()
    }
}

impl Validate for LocalizeConfig {
    fn prepare(&mut self, _: &Path) -> Result<(), CliError> {
        episodes_at_least_one(self.episodes)?;
        self.suite(0).validate().map_err(|e| CliError::Config(format!("localize: {e}")))
    }
}

impl Validate for ExploreConfig {
    fn prepare(&mut self, base: &Path) -> Result<(), CliError> {
        episodes_at_least_one(self.episodes)?;
        if self.policies.is_empty() {
            return Err(CliError::Config("policies: at least one policy is needed".into()));
        }
        self.world.resolve(base);
        self.world.validate()?;
        validate_nav(&self.nav)?;
        if let Some(p) = &mut self.noise {
            *p = base.join(&*p);
            check_file("noise", p)?;
        }
        if let Some(d) = &self.detector {
            d.validate()?;
        }
        Ok(())
    }
}

impl Validate for ObjectGoalConfig {
    fn prepare(&mut self, base: &Path) -> Result<(), CliError> {
        episodes_at_least_one(self.episodes)?;
        self.world.resolve(base);
        self.world.validate()?;
        if self.world.file.is_none() && (self.world.categories == 0 || self.world.objects == 0) {
            return Err(CliError::Config("world: object-goal search needs categories and objects".into()));
        }
        validate_nav(&self.nav)?;
        if let Some(p) = &mut self.noise {
            *p = base.join(&*p);
            check_file("noise", p)?;
        }
        if let Some(d) = &self.detector {
            d.validate()?;
        }
        Ok(())
    }
}

impl Validate for TopoLabelConfig {
    fn prepare(&mut self, base: &Path) -> Result<(), CliError> {
        if self.poses < 2 {
            return Err(CliError::Config(format!("poses: {} must be at least 2", self.poses)));
        }
        self.world.resolve(base);
        self.world.validate()
    }
}

impl Validate for FitNoiseConfig {
    fn prepare(&mut self, base: &Path) -> Result<(), CliError> {
        self.samples.resolve(base);
        for (name, p) in self.samples.entries() {
            check_file(&format!("samples.{}", name.replace('.', "_")), p)?;
        }
        if self.k_candidates.is_empty() || self.k_candidates.contains(&0) {
            return Err(CliError::Config("k_candidates: need positive component counts".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(CliError::Config(format!("holdout_fraction: {} outside (0, 1)", self.holdout_fraction)));
        }
        Ok(())
    }
}

impl Default for FitNoiseConfig {
    fn default() -> Self {
        Self {
            samples: NoiseSamples {
                actuation_forward: PathBuf::new(),
                actuation_left: PathBuf::new(),
                actuation_right: PathBuf::new(),
                sensor_forward: PathBuf::new(),
                sensor_left: PathBuf::new(),
                sensor_right: PathBuf::new(),
            },
            k_candidates: default_k(),
            holdout_fraction: default_holdout(),
            em: EmSettings::default(),
        }
    }
}
