//! Per-action actuation and odometry-sensor noise models.
//!
//! Each model is a Gaussian mixture over pose increments `(x, y, o)` in
//! meters, meters and radians. Angles are treated as unwrapped reals, which is
//! adequate while noise magnitudes stay far below π.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Action, PoseDelta};

const WEIGHT_TOLERANCE: f64 = 1e-9;
const MIN_EIGENVALUE: f64 = 1e-10;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3 {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Mixture of trivariate Gaussians with cached Cholesky factors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture3 {
    components: Vec<Gaussian3>,
    lower: Vec<Matrix3<f64>>,
    log_norm: Vec<f64>,
}

impl GaussianMixture3 {
    /// Builds a mixture. Weights must be positive and sum to one; every
    /// covariance must be symmetric and admit a Cholesky factorization.
    pub fn new(components: Vec<Gaussian3>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvariantViolation("mixture has no components".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "mixture weights must be positive and sum to 1 (sum = {total})"
            )));
        }
        let mut lower = Vec::with_capacity(components.len());
        let mut log_norm = Vec::with_capacity(components.len());
        for (k, c) in components.iter().enumerate() {
            let cov = c.covariance;
            if (cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
                return Err(Error::InvalidCovariance(format!("component {k} is not symmetric")));
            }
            let chol = cov.cholesky().ok_or_else(|| {
                Error::InvalidCovariance(format!("component {k} is not positive definite"))
            })?;
            let l = chol.l();
            let log_det = 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
            lower.push(l);
            log_norm.push(c.weight.ln() - 0.5 * (3.0 * LN_2PI + log_det));
        }
        Ok(Self {
            components,
            lower,
            log_norm,
        })
    }

    /// Single zero-mean component with covariance `variance · I`.
    pub fn isotropic(variance: f64) -> Result<Self> {
        Self::new(vec![Gaussian3 {
            weight: 1.0,
            mean: Vector3::zeros(),
            covariance: Matrix3::identity() * variance,
        }])
    }

    pub fn components(&self) -> &[Gaussian3] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Full invariant check, including the covariance eigenvalue floor.
    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.components.iter().enumerate() {
            let min = SymmetricEigen::new(c.covariance).eigenvalues.min();
            if min < MIN_EIGENVALUE {
                return Err(Error::InvalidCovariance(format!(
                    "component {k} has eigenvalue {min:e} below {MIN_EIGENVALUE:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.components.iter().map(|c| c.mean * c.weight).sum()
    }

    /// Covariance of the mixture (law of total covariance).
    pub fn covariance(&self) -> Matrix3<f64> {
        let mu = self.mean();
        self.components
            .iter()
            .map(|c| {
                let d = c.mean - mu;
                (c.covariance + d * d.transpose()) * c.weight
            })
            .sum()
    }

    /// Ancestral sample: a component by weight, then `μ + L·z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        self.components[k].mean + self.lower[k] * z
    }

    pub fn sample_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> PoseDelta {
        let v = self.sample(rng);
        PoseDelta::new(v[0], v[1], v[2])
    }

    fn component_log_densities(&self, x: &Vector3<f64>, out: &mut [f64]) {
        for (k, c) in self.components.iter().enumerate() {
            let z = self.lower[k]
                .solve_lower_triangular(&(x - c.mean))
                .expect("cholesky factor has a nonzero diagonal");
            out[k] = self.log_norm[k] - 0.5 * z.norm_squared();
        }
    }

    /// `log Σ_k w_k N(x; μ_k, Σ_k)` via log-sum-exp.
    pub fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let mut terms = vec![0.0; self.components.len()];
        self.component_log_densities(x, &mut terms);
        log_sum_exp(&terms)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Which half of the noise model a mixture describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    Actuation,
    Sensor,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Actuation => "actuation",
            NoiseKind::Sensor => "sensor",
        }
    }
}

/// Actuation and sensor mixtures for each of the three motion actions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModelSet {
    actuation: [GaussianMixture3; 3],
    sensor: [GaussianMixture3; 3],
}

impl NoiseModelSet {
    /// Models indexed by [`Action::index`] (forward, left, right).
    pub fn new(actuation: [GaussianMixture3; 3], sensor: [GaussianMixture3; 3]) -> Self {
        Self { actuation, sensor }
    }

    pub fn actuation(&self, action: Action) -> Option<&GaussianMixture3> {
        self.actuation.get(action.index())
    }

    pub fn sensor(&self, action: Action) -> Option<&GaussianMixture3> {
        self.sensor.get(action.index())
    }

    pub fn get(&self, action: Action, kind: NoiseKind) -> Option<&GaussianMixture3> {
        match kind {
            NoiseKind::Actuation => self.actuation(action),
            NoiseKind::Sensor => self.sensor(action),
        }
    }

    /// Synthetic illustrative models, not fitted to any robot. Forward motion
    /// undershoots by 1-3 cm with ~1° heading drift; turns carry a few
    /// millimeters of translation and ~1.5° of rotation error; odometry adds
    /// roughly 1 cm and 0.5° of error per step.
    pub fn synthetic() -> Self {
        let deg = PI / 180.0;
        let g = |w: f64, m: [f64; 3], sd: [f64; 3]| Gaussian3 {
            weight: w,
            mean: Vector3::from(m),
            covariance: Matrix3::from_diagonal(&Vector3::new(sd[0] * sd[0], sd[1] * sd[1], sd[2] * sd[2])),
        };
        let mix = |c: Vec<Gaussian3>| GaussianMixture3::new(c).expect("synthetic model is valid");
        let forward = mix(vec![
            g(0.7, [-0.01, 0.0, 0.0], [0.02, 0.01, 1.0 * deg]),
            g(0.3, [-0.03, 0.005, 0.5 * deg], [0.03, 0.015, 1.5 * deg]),
        ]);
        let left = mix(vec![g(1.0, [0.0, 0.002, -0.5 * deg], [0.005, 0.005, 1.5 * deg])]);
        let right = mix(vec![g(1.0, [0.0, -0.002, 0.5 * deg], [0.005, 0.005, 1.5 * deg])]);
        let sensor_fwd = mix(vec![g(1.0, [0.0, 0.0, 0.0], [0.01, 0.005, 0.5 * deg])]);
        let sensor_turn = mix(vec![g(1.0, [0.0, 0.0, 0.0], [0.003, 0.003, 0.5 * deg])]);
        Self::new(
            [forward, left, right],
            [sensor_fwd, sensor_turn.clone(), sensor_turn],
        )
    }

    /// Same models with means scaled by `factor` and covariances by `factor²`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let scale = |m: &GaussianMixture3| {
            GaussianMixture3::new(
                m.components()
                    .iter()
                    .map(|c| Gaussian3 {
                        weight: c.weight,
                        mean: c.mean * factor,
                        covariance: c.covariance * (factor * factor),
                    })
                    .collect(),
            )
        };
        let a = [scale(&self.actuation[0])?, scale(&self.actuation[1])?, scale(&self.actuation[2])?];
        let s = [scale(&self.sensor[0])?, scale(&self.sensor[1])?, scale(&self.sensor[2])?];
        Ok(Self::new(a, s))
    }

    /// Serializes to the line-oriented noise-model format. Floats are written
    /// in shortest round-trip form, so a reload is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::from(NOISE_HEADER);
        out.push('\n');
        out.push_str("# action kind weight mean_x mean_y mean_o cov_xx cov_xy cov_xo cov_yy cov_yo cov_oo\n");
        for action in Action::MOVES {
            for kind in [NoiseKind::Actuation, NoiseKind::Sensor] {
                let model = self.get(action, kind).expect("motion action");
                for c in model.components() {
                    let m = &c.mean;
                    let s = &c.covariance;
                    let _ = writeln!(
                        out,
                        "{} {} {} {} {} {} {} {} {} {} {} {}",
                        action.name(),
                        kind.name(),
                        c.weight,
                        m[0],
                        m[1],
                        m[2],
                        s[(0, 0)],
                        s[(0, 1)],
                        s[(0, 2)],
                        s[(1, 1)],
                        s[(1, 2)],
                        s[(2, 2)]
                    );
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        const FIELDS: [&str; 12] = [
            "action", "kind", "weight", "mean_x", "mean_y", "mean_o", "cov_xx", "cov_xy", "cov_xo",
            "cov_yy", "cov_yo", "cov_oo",
        ];
        let mut groups: Vec<Vec<Gaussian3>> = vec![Vec::new(); 6];
        let mut saw_header = false;
        for (lno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let line_no = lno + 1;
            if line == NOISE_HEADER {
                saw_header = true;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != FIELDS.len() {
                let field = FIELDS.get(parts.len()).copied().unwrap_or("end of line");
                return Err(Error::Parse {
                    line: line_no,
                    field: field.into(),
                    message: format!("expected {} fields, found {}", FIELDS.len(), parts.len()),
                });
            }
            let action = match parts[0] {
                "forward" => Action::Forward,
                "left" => Action::TurnLeft,
                "right" => Action::TurnRight,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        field: "action".into(),
                        message: format!("unknown action `{other}`"),
                    })
                }
            };
            let kind = match parts[1] {
                "actuation" => NoiseKind::Actuation,
                "sensor" => NoiseKind::Sensor,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        field: "kind".into(),
                        message: format!("unknown model kind `{other}`"),
                    })
                }
            };
            let mut v = [0.0; 10];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = parts[i + 2].parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    field: FIELDS[i + 2].into(),
                    message: format!("`{}`: {e}", parts[i + 2]),
                })?;
            }
            let covariance = Matrix3::new(v[4], v[5], v[6], v[5], v[7], v[8], v[6], v[8], v[9]);
            let slot = action.index() * 2 + usize::from(kind == NoiseKind::Sensor);
            groups[slot].push(Gaussian3 {
                weight: v[0],
                mean: Vector3::new(v[1], v[2], v[3]),
                covariance,
            });
        }
        if !saw_header {
            return Err(Error::Parse {
                line: 1,
                field: "header".into(),
                message: format!("missing `{NOISE_HEADER}` schema line"),
            });
        }
        let mut models = Vec::with_capacity(6);
        for (slot, comps) in groups.into_iter().enumerate() {
            let action = Action::MOVES[slot / 2];
            let kind = if slot % 2 == 0 { NoiseKind::Actuation } else { NoiseKind::Sensor };
            if comps.is_empty() {
                return Err(Error::InvariantViolation(format!(
                    "no {} model for action `{}`",
                    kind.name(),
                    action.name()
                )));
            }
            let model = GaussianMixture3::new(comps).map_err(|e| {
                Error::InvariantViolation(format!("{} {}: {e}", action.name(), kind.name()))
            })?;
            model.validate()?;
            models.push(model);
        }
        let mut it = models.into_iter();
        let mut next = || it.next().expect("six models");
        let (fa, fs, la, ls, ra, rs) = (next(), next(), next(), next(), next(), next());
        Ok(Self::new([fa, la, ra], [fs, ls, rs]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub const NOISE_HEADER: &str = "# navlab noise-models v1";

/// Reads `(x, y, o)` sample rows from CSV. A leading non-numeric row is
/// treated as a header.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == 3 => out.push([v[0], v[1], v[2]]),
            Err(_) if i == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    field: "x,y,o".into(),
                    message: format!("expected three numbers, got `{}`", record.iter().collect::<Vec<_>>().join(",")),
                })
            }
        }
    }
    Ok(out)
}

/// EM settings. Defaults: 5 k-means++ restarts, 500 iterations, mean
/// log-likelihood tolerance 1e-7, covariance eigenvalue floor 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub covariance_floor: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 500,
            tolerance: 1e-7,
            covariance_floor: 1e-8,
        }
    }
}

/// One EM run: the fitted mixture and its per-iteration mean log-likelihood.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub model: GaussianMixture3,
    pub trace: Vec<f64>,
}

impl EmRun {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.trace.last().expect("nonempty trace")
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: GaussianMixture3,
    pub chosen_k: usize,
    /// Mean held-out log-likelihood for each candidate `k`.
    pub heldout: Vec<(usize, f64)>,
    /// Traces of every EM run performed, selection and refit alike.
    pub traces: Vec<Vec<f64>>,
}

/// Fits a mixture, choosing the component count on a single held-out split.
///
/// For each candidate `k`, EM runs from several k-means++ starts on the
/// training split and the best training fit is scored on the held-out split.
/// The winning `k` is refit on all samples.
pub fn fit_gmm<R: Rng + ?Sized>(
    samples: &[[f64; 3]],
    k_candidates: &[usize],
    holdout_fraction: f64,
    settings: &EmSettings,
    rng: &mut R,
) -> Result<FitReport> {
    let max_k = k_candidates.iter().copied().max().ok_or_else(|| Error::Fitting("no candidate component counts".into()))?;
    if k_candidates.contains(&0) {
        return Err(Error::Fitting("component counts must be positive".into()));
    }
    if samples.len() < 10 * max_k {
        return Err(Error::Fitting(format!(
            "{} samples is fewer than 10 x {max_k}",
            samples.len()
        )));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Fitting(format!("holdout fraction {holdout_fraction} outside (0, 1)")));
    }
    let data: Vec<Vector3<f64>> = samples.iter().map(|s| Vector3::from(*s)).collect();
    if data.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::Fitting("non-finite sample".into()));
    }
    let spread = SymmetricEigen::new(sample_covariance(&data, &mean_of(&data))).eigenvalues.max();
    if spread < 1e-14 {
        return Err(Error::Fitting("samples are degenerate (zero spread)".into()));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let n_hold = ((data.len() as f64 * holdout_fraction).round() as usize).clamp(1, data.len() - 1);
    let holdout: Vec<Vector3<f64>> = order[..n_hold].iter().map(|&i| data[i]).collect();
    let train: Vec<Vector3<f64>> = order[n_hold..].iter().map(|&i| data[i]).collect();

    let mut traces = Vec::new();
    let mut heldout = Vec::with_capacity(k_candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for &k in k_candidates {
        let run = fit_em_restarts(&train, k, settings, rng, &mut traces)?;
        let score = holdout.iter().map(|x| run.model.log_density(x)).sum::<f64>() / holdout.len() as f64;
        heldout.push((k, score));
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((k, score));
        }
    }
    let (chosen_k, _) = best.expect("at least one candidate");
    let refit = fit_em_restarts(&data, chosen_k, settings, rng, &mut traces)?;
    Ok(FitReport {
        model: refit.model,
        chosen_k,
        heldout,
        traces,
    })
}

fn fit_em_restarts<R: Rng + ?Sized>(
    data: &[Vector3<f64>],
    k: usize,
    settings: &EmSettings,
    rng: &mut R,
    traces: &mut Vec<Vec<f64>>,
) -> Result<EmRun> {
    let mut best: Option<EmRun> = None;
    for _ in 0..settings.restarts.max(1) {
        let init = kmeans_pp_init(data, k, settings.covariance_floor, rng)?;
        let run = run_em(data, init, settings)?;
        traces.push(run.trace.clone());
        if best.as_ref().is_none_or(|b| run.final_log_likelihood() > b.final_log_likelihood()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn mean_of(data: &[Vector3<f64>]) -> Vector3<f64> {
    data.iter().sum::<Vector3<f64>>() / data.len() as f64
}

fn sample_covariance(data: &[Vector3<f64>], mean: &Vector3<f64>) -> Matrix3<f64> {
    data.iter()
        .map(|x| {
            let d = x - mean;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>()
        / data.len() as f64
}

fn floor_covariance(cov: Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&clamped) * v.transpose();
    (out + out.transpose()) * 0.5
}

/// k-means++ seeding followed by a few Lloyd iterations.
fn kmeans_pp_init<R: Rng + ?Sized>(
    data: &[Vector3<f64>],
    k: usize,
    floor: f64,
    rng: &mut R,
) -> Result<GaussianMixture3> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[next]);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - data[next]).norm_squared());
        }
    }
    let mut assign = vec![0usize; data.len()];
    for _ in 0..10 {
        for (i, x) in data.iter().enumerate() {
            assign[i] = (0..k)
                .min_by(|&a, &b| (x - centers[a]).norm_squared().total_cmp(&(x - centers[b]).norm_squared()))
                .expect("k >= 1");
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<Vector3<f64>> = (0..data.len()).filter(|&i| assign[i] == c).map(|i| data[i]).collect();
            if !members.is_empty() {
                *center = mean_of(&members);
            }
        }
    }
    let global = sample_covariance(data, &mean_of(data));
    let components = (0..k)
        .map(|c| {
            let members: Vec<Vector3<f64>> = (0..data.len()).filter(|&i| assign[i] == c).map(|i| data[i]).collect();
            let cov = if members.len() >= 4 {
                sample_covariance(&members, &centers[c])
            } else {
                global
            };
            Gaussian3 {
                weight: (members.len().max(1)) as f64,
                mean: centers[c],
                covariance: floor_covariance(cov, floor),
            }
        })
        .collect::<Vec<_>>();
    let total: f64 = components.iter().map(|c| c.weight).sum();
    GaussianMixture3::new(
        components
            .into_iter()
            .map(|c| Gaussian3 {
                weight: c.weight / total,
                ..c
            })
            .collect(),
    )
}

/// Expectation-maximization from `init` until the mean log-likelihood gain
/// drops below the tolerance or the iteration cap is hit.
pub fn run_em(data: &[Vector3<f64>], init: GaussianMixture3, settings: &EmSettings) -> Result<EmRun> {
    let n = data.len();
    let k = init.len();
    let mut model = init;
    let mut resp = vec![0.0; n * k];
    let mut terms = vec![0.0; k];
    let mut trace = Vec::new();
    for _ in 0..settings.max_iterations {
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            model.component_log_densities(x, &mut terms);
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        let converged = trace.last().is_some_and(|prev: &f64| ll - prev < settings.tolerance);
        trace.push(ll);
        if converged {
            break;
        }
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= 1e-12 {
                // Collapsed component: keep it, with a token weight.
                components.push(Gaussian3 {
                    weight: 1e-12,
                    ..model.components()[j].clone()
                });
                continue;
            }
            let mean = (0..n).map(|i| data[i] * resp[i * k + j]).sum::<Vector3<f64>>() / nk;
            let cov = (0..n)
                .map(|i| {
                    let d = data[i] - mean;
                    d * d.transpose() * resp[i * k + j]
                })
                .sum::<Matrix3<f64>>()
                / nk;
            components.push(Gaussian3 {
                weight: nk / n as f64,
                mean,
                covariance: floor_covariance(cov, settings.covariance_floor),
            });
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        model = GaussianMixture3::new(components)?;
    }
    Ok(EmRun { model, trace })
}
