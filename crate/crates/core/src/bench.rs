//! Training runs, the variance replay, and their configuration.
//!
//! Every run is a pure function of its [`BenchConfig`] (including the seed):
//! randomness comes from named streams (see [`crate::rng`]) and CSV output
//! contains no wall-clock data unless `record_wall_time` is set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::CategoryOrder;
use crate::registry::EstimatorId;
use crate::rng::{stream, StreamRng};
use crate::toy::{Dataset, LinearToyVae, VaeGrads};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub dims: usize,
    pub categories: usize,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { data_dim: 16, dims: 4, categories: 4, init_scale: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub eval_size: usize,
    pub templates: usize,
    /// Read the training set from a dataset file instead of generating it.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_size: 1000, eval_size: 100, templates: 8, path: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random instances per enumeration check.
    pub instances: usize,
    /// Random instances per Monte Carlo check.
    pub mc_instances: usize,
    pub mc_draws: usize,
    /// Paired draws per variance comparison; the differences are small, so
    /// this needs to be large.
    pub rao_blackwell_draws: usize,
    /// Accepted samples per rejection-sampling check.
    pub rejection_samples: usize,
    pub rejection_instances: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            mc_instances: 4,
            mc_draws: 20_000,
            rao_blackwell_draws: 200_000,
            rejection_samples: 10_000,
            rejection_instances: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Estimators trained by `train`, one run each.
    pub estimators: Vec<EstimatorId>,
    /// Estimators measured by `variance-replay`.
    pub replay_estimators: Vec<EstimatorId>,
    /// Estimator that drives the replay trajectory.
    pub trajectory_estimator: EstimatorId,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Samples in the multi-sample evaluation bound.
    pub eval_samples: usize,
    /// Overrides the category order of every stick-breaking estimator.
    pub ordering: Option<CategoryOrder>,
    pub ema_decay: f64,
    /// Replay rows at or before this step are excluded from summaries.
    pub burn_in: usize,
    pub record_wall_time: bool,
    pub verify: VerifyConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            estimators: vec![EstimatorId::Rloo(2)],
            replay_estimators: EstimatorId::replay_defaults(),
            trajectory_estimator: EstimatorId::Rloo(2),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            optimizer: OptimizerConfig::default(),
            steps: 5000,
            batch_size: 32,
            seed: 0,
            eval_every: 100,
            eval_samples: 100,
            ordering: None,
            ema_decay: 0.999,
            burn_in: 1000,
            record_wall_time: false,
            verify: VerifyConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_samples == 0 {
            return bad("batch_size, eval_every and eval_samples must be positive".into());
        }
        let lr = self.optimizer.learning_rate;
        if !(lr.is_finite() && lr >= 0.0) {
            return bad(format!("learning rate {lr} must be finite and non-negative"));
        }
        for b in [self.optimizer.beta1, self.optimizer.beta2] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("moment decay {b} outside [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("EMA decay {} outside [0, 1)", self.ema_decay));
        }
        if self.data.path.is_none() && (self.data.train_size == 0 || self.data.templates == 0) {
            return bad("train_size and templates must be positive".into());
        }
        if self.model.data_dim == 0 || self.model.data_dim > 64 {
            return bad(format!("data_dim {} outside 1..=64", self.model.data_dim));
        }
        if self.model.dims == 0 || self.model.categories < 2 {
            return bad("need dims >= 1 and categories >= 2".into());
        }
        let all = self.estimators.iter().chain(&self.replay_estimators).chain([&self.trajectory_estimator]);
        for id in all {
            if *id == EstimatorId::DisarmTree && !self.model.categories.is_power_of_two() {
                return bad(format!("{id} needs a power-of-two category count"));
            }
        }
        Ok(())
    }

    /// `id` with the configured category order applied.
    pub fn resolve(&self, id: EstimatorId) -> EstimatorId {
        match (id, self.ordering) {
            (EstimatorId::DisarmSb(_), Some(order)) => EstimatorId::DisarmSb(order),
            _ => id,
        }
    }

    pub fn optimizer_description(&self) -> String {
        let o = &self.optimizer;
        match o.kind {
            OptimizerKind::Adam => {
                format!("adam lr={} beta1={} beta2={} eps={}", o.learning_rate, o.beta1, o.beta2, o.epsilon)
            }
            OptimizerKind::Sgd => format!("sgd lr={}", o.learning_rate),
        }
    }
}

/// Exponential moving averages of a gradient's first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTracker {
    pub decay: f64,
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    pub updates: usize,
}

impl VarianceTracker {
    pub fn new(decay: f64) -> Self {
        Self { decay, mean: Vec::new(), second: Vec::new(), updates: 0 }
    }

    /// Per-parameter `EMA(g²) − EMA(g)²`, clamped at 0.
    pub fn variance(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.second).map(|(m, s)| (s - m * m).max(0.0)).collect()
    }

    pub fn mean_variance(&self) -> f64 {
        if self.mean.is_empty() {
            return 0.0;
        }
        self.variance().iter().sum::<f64>() / self.mean.len() as f64
    }
}

/// `m ← d m + (1 − d) g`, `s ← d s + (1 − d) g²`; the first call sets
/// `m = g`, `s = g²`.
pub fn ema_update(tracker: &mut VarianceTracker, g: &[f64]) -> Result<()> {
    if tracker.updates == 0 {
        tracker.mean = g.to_vec();
        tracker.second = g.iter().map(|v| v * v).collect();
    } else {
        if g.len() != tracker.mean.len() {
            return Err(Error::Shape(format!("tracker has {} entries, gradient {}", tracker.mean.len(), g.len())));
        }
        let d = tracker.decay;
        for ((m, s), &v) in tracker.mean.iter_mut().zip(tracker.second.iter_mut()).zip(g) {
            *m = d * *m + (1.0 - d) * v;
            *s = d * *s + (1.0 - d) * v * v;
        }
    }
    tracker.updates += 1;
    Ok(())
}

/// Adam (or plain SGD) for gradient ascent.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: VaeGrads,
    v: VaeGrads,
    t: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, like: &VaeGrads) -> Self {
        let mut zero = like.clone();
        zero.iter_mut().for_each(|p| *p = 0.0);
        Self { config, m: zero.clone(), v: zero, t: 0 }
    }

    pub fn ascend(&mut self, params: &mut VaeGrads, grad: &VaeGrads) {
        let c = &self.config;
        match c.kind {
            OptimizerKind::Sgd => params.scaled_add(c.learning_rate, grad),
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - c.beta1.powi(self.t);
                let bc2 = 1.0 - c.beta2.powi(self.t);
                for (((p, &g), m), v) in
                    params.iter_mut().zip(grad.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut())
                {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p += c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                }
            }
        }
    }
}

/// Batch-averaged gradient of one estimator.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub grads: VaeGrads,
    /// Mean of `f` at each example's first evaluated configuration.
    pub elbo: f64,
    pub f_evals: usize,
}

/// The gradient of the batch-mean `E_q[ELBO]` from estimator `id`.
pub fn batch_gradient<R: Rng + ?Sized>(
    model: &LinearToyVae,
    batch: &[Vec<u8>],
    id: EstimatorId,
    rng: &mut R,
) -> Result<BatchGradient> {
    let mut grads = model.zero_grads();
    let mut elbo = 0.0;
    let mut f_evals = 0;
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let logits = model.encoder_logits(x)?;
        let f = |z: &[usize]| model.elbo_with_logits(x, &logits, z);
        let out = id.estimate(&logits, &f, rng)?;
        grads.scaled_add(scale, &model.training_grads(x, &logits, &out.grad.cat, &out.samples));
        elbo += scale * out.values[0];
        f_evals += out.f_evals;
    }
    Ok(BatchGradient { grads, elbo, f_evals })
}

fn check_finite(step: usize, g: &BatchGradient) -> Result<()> {
    if !g.elbo.is_finite() {
        return Err(Error::Diverged { step, what: "ELBO".into() });
    }
    if g.grads.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step, what: "gradient".into() });
    }
    Ok(())
}

/// Model, data and streams shared by `train` and `variance_replay`.
struct Session {
    model: LinearToyVae,
    optimizer: Optimizer,
    train: Dataset,
    eval: Vec<Vec<u8>>,
    batch_rng: StreamRng,
    binarize_rng: StreamRng,
}

impl Session {
    fn new(config: &BenchConfig, label: &str) -> Result<Self> {
        let m = &config.model;
        let mut data_rng = stream(config.seed, "data", "", 0);
        let (train, eval_gray) = match &config.data.path {
            Some(path) => {
                let ds = Dataset::load(path)?;
                (ds.clone(), ds)
            }
            None => {
                let mix = crate::toy::TemplateMixture::random(&mut data_rng, config.data.templates, m.data_dim)?;
                (mix.sample(&mut data_rng, config.data.train_size), mix.sample(&mut data_rng, config.data.eval_size))
            }
        };
        if train.data_dim != m.data_dim || train.len == 0 {
            return Err(Error::Config(format!(
                "dataset has {} examples of dimension {}, model expects dimension {}",
                train.len, train.data_dim, m.data_dim
            )));
        }
        let mut eval_rng = stream(config.seed, "eval-binarize", "", 0);
        let eval = (0..eval_gray.len.min(config.data.eval_size.max(1)))
            .map(|i| eval_gray.binarize(i, &mut eval_rng))
            .collect();
        let mut init_rng = stream(config.seed, "init", "", 0);
        let model = LinearToyVae::random(&mut init_rng, m.data_dim, m.dims, m.categories, m.init_scale)?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &model.params);
        Ok(Self {
            model,
            optimizer,
            train,
            eval,
            batch_rng: stream(config.seed, "batch", label, 0),
            binarize_rng: stream(config.seed, "binarize", label, 0),
        })
    }

    fn next_batch(&mut self, size: usize) -> Vec<Vec<u8>> {
        (0..size)
            .map(|_| {
                let i = self.batch_rng.random_range(0..self.train.len);
                self.train.binarize(i, &mut self.binarize_rng)
            })
            .collect()
    }

    fn eval_bound(&self, samples: usize, rng: &mut StreamRng) -> Result<f64> {
        let mut total = 0.0;
        for x in &self.eval {
            total += self.model.multi_sample_bound(x, samples, rng)?;
        }
        Ok(total / self.eval.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub elbo: f64,
    pub grad_var_mean: f64,
    pub f_evals: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: usize,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub step: usize,
    pub estimator: String,
    pub grad_var_mean: f64,
}

/// Final values of one training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub estimator: String,
    pub steps: usize,
    /// Mean train ELBO over the first and last `eval_every` steps.
    pub initial_elbo: f64,
    pub final_elbo: f64,
    pub initial_bound: f64,
    pub final_bound: f64,
    pub final_grad_var_mean: f64,
    pub f_evals_per_step: f64,
    pub diverged: Option<String>,
}

fn build_id() -> String {
    format!("{} {} ({})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), env!("CATGRAD_GIT_DESCRIBE"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains one model with estimator `id`; returns the per-step and eval rows.
pub fn train_one(config: &BenchConfig, id: EstimatorId) -> Result<(Vec<TrainRow>, Vec<EvalRow>, RunSummary)> {
    config.validate()?;
    let id = config.resolve(id);
    let label = id.to_string();
    let mut s = Session::new(config, &label)?;
    let mut est_rng = stream(config.seed, "estimator", &label, 0);
    let mut eval_rng = stream(config.seed, "eval", &label, 0);
    let mut tracker = VarianceTracker::new(config.ema_decay);
    let mut rows = Vec::with_capacity(config.steps);
    let mut evals = vec![EvalRow { step: 0, bound: s.eval_bound(config.eval_samples, &mut eval_rng)? }];
    let start = Instant::now();
    let mut diverged = None;
    for step in 1..=config.steps {
        let batch = s.next_batch(config.batch_size);
        let g = batch_gradient(&s.model, &batch, id, &mut est_rng)?;
        if let Err(e) = check_finite(step, &g) {
            diverged = Some(e.to_string());
            break;
        }
        ema_update(&mut tracker, &g.grads.encoder_flat())?;
        s.optimizer.ascend(&mut s.model.params, &g.grads);
        rows.push(TrainRow {
            step,
            elbo: g.elbo,
            grad_var_mean: tracker.mean_variance(),
            f_evals: g.f_evals,
            wall_ms: if config.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
        });
        if step % config.eval_every == 0 || step == config.steps {
            evals.push(EvalRow { step, bound: s.eval_bound(config.eval_samples, &mut eval_rng)? });
        }
    }
    let w = config.eval_every.min(rows.len()).max(1);
    let summary = RunSummary {
        estimator: label,
        steps: rows.len(),
        initial_elbo: mean_of(rows.iter().take(w).map(|r| r.elbo)),
        final_elbo: mean_of(rows.iter().rev().take(w).map(|r| r.elbo)),
        initial_bound: evals[0].bound,
        final_bound: evals.last().map_or(f64::NAN, |e| e.bound),
        final_grad_var_mean: rows.last().map_or(f64::NAN, |r| r.grad_var_mean),
        f_evals_per_step: mean_of(rows.iter().map(|r| r.f_evals as f64)),
        diverged,
    };
    Ok((rows, evals, summary))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub build: String,
    pub optimizer: String,
    pub config: BenchConfig,
    pub runs: Vec<RunSummary>,
}

/// Trains every configured estimator and writes `train_<id>.csv`,
/// `eval_<id>.csv` and `train_summary.json` into `out_dir`. A diverged run
/// keeps its rows and is reported as an error after all files are written.
pub fn train(config: &BenchConfig, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<_> = config.estimators.par_iter().map(|&id| train_one(config, id)).collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for (rows, evals, summary) in results {
        write_csv(&out_dir.join(format!("train_{}.csv", summary.estimator)), &rows)?;
        write_csv(&out_dir.join(format!("eval_{}.csv", summary.estimator)), &evals)?;
        runs.push(summary);
    }
    let report =
        TrainReport { build: build_id(), optimizer: config.optimizer_description(), config: config.clone(), runs };
    write_json(&out_dir.join("train_summary.json"), &report)?;
    if let Some(run) = report.runs.iter().find(|r| r.diverged.is_some()) {
        return Err(Error::Diverged {
            step: run.steps + 1,
            what: format!("{}: {}", run.estimator, run.diverged.as_deref().unwrap_or("")),
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayEstimatorSummary {
    pub estimator: String,
    /// Mean `grad_var_mean` over rows after the burn-in.
    pub mean_variance: f64,
    pub f_evals_per_example: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    pub build: String,
    pub optimizer: String,
    pub config: BenchConfig,
    pub trajectory_estimator: String,
    pub estimators: Vec<ReplayEstimatorSummary>,
}

/// Trains with the trajectory estimator; at every step each replay estimator
/// computes its own gradient on the same minibatch and parameters and feeds
/// its variance tracker. Rows are emitted every `eval_every` steps.
pub fn variance_replay_rows(config: &BenchConfig) -> Result<(Vec<ReplayRow>, Vec<ReplayEstimatorSummary>)> {
    config.validate()?;
    let traj = config.resolve(config.trajectory_estimator);
    let ids: Vec<EstimatorId> = config.replay_estimators.iter().map(|&id| config.resolve(id)).collect();
    let mut s = Session::new(config, "replay")?;
    let mut traj_rng = stream(config.seed, "trajectory", &traj.to_string(), 0);
    let mut measured: Vec<(EstimatorId, StreamRng, VarianceTracker, usize)> = ids
        .iter()
        .map(|&id| (id, stream(config.seed, "replay", &id.to_string(), 0), VarianceTracker::new(config.ema_decay), 0))
        .collect();
    let mut rows = Vec::new();
    for step in 1..=config.steps {
        let batch = s.next_batch(config.batch_size);
        let model = &s.model;
        measured.par_iter_mut().try_for_each(|(id, rng, tracker, evals)| -> Result<()> {
            let g = batch_gradient(model, &batch, *id, rng)?;
            check_finite(step, &g)?;
            *evals += g.f_evals;
            ema_update(tracker, &g.grads.encoder_flat())
        })?;
        let g = batch_gradient(&s.model, &batch, traj, &mut traj_rng)?;
        check_finite(step, &g)?;
        s.optimizer.ascend(&mut s.model.params, &g.grads);
        if step % config.eval_every == 0 {
            for (id, _, tracker, _) in &measured {
                rows.push(ReplayRow { step, estimator: id.to_string(), grad_var_mean: tracker.mean_variance() });
            }
        }
    }
    let examples = (config.steps * config.batch_size) as f64;
    let summaries = measured
        .iter()
        .map(|(id, _, _, evals)| {
            let name = id.to_string();
            ReplayEstimatorSummary {
                mean_variance: mean_of(
                    rows.iter().filter(|r| r.estimator == name && r.step > config.burn_in).map(|r| r.grad_var_mean),
                ),
                estimator: name,
                f_evals_per_example: *evals as f64 / examples,
            }
        })
        .collect();
    Ok((rows, summaries))
}

/// [`variance_replay_rows`], writing `replay.csv` and `replay_summary.json`.
pub fn variance_replay(config: &BenchConfig, out_dir: &Path) -> Result<ReplayReport> {
    std::fs::create_dir_all(out_dir)?;
    let (rows, estimators) = variance_replay_rows(config)?;
    write_csv(&out_dir.join("replay.csv"), &rows)?;
    let report = ReplayReport {
        build: build_id(),
        optimizer: config.optimizer_description(),
        config: config.clone(),
        trajectory_estimator: config.resolve(config.trajectory_estimator).to_string(),
        estimators,
    };
    write_json(&out_dir.join("replay_summary.json"), &report)?;
    Ok(report)
}

/// Runs the verification suite, writes `verify.json`, and returns the
/// report; check `report.pass` for the overall result.
pub fn verify(config: &BenchConfig, out_dir: &Path) -> Result<crate::checks::VerifyReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = crate::checks::run_suite(&config.verify, config.seed)?;
    report.build = build_id();
    write_json(&out_dir.join("verify.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            steps: 40,
            batch_size: 4,
            eval_every: 10,
            eval_samples: 5,
            model: ModelConfig { data_dim: 6, dims: 2, categories: 4, init_scale: 0.1 },
            data: DataConfig { train_size: 50, eval_size: 5, templates: 3, path: None },
            burn_in: 10,
            ..Default::default()
        }
    }

    #[test]
    fn ema_examples() {
        let mut t = VarianceTracker::new(0.999);
        for _ in 0..100 {
            ema_update(&mut t, &[3.0, -1.0]).unwrap();
            assert_eq!(t.mean_variance(), 0.0);
        }
        let mut t = VarianceTracker::new(0.999);
        for i in 0..20_000 {
            ema_update(&mut t, &[if i % 2 == 0 { 1.0 } else { -1.0 }]).unwrap();
        }
        assert!((t.variance()[0] - 1.0).abs() < 1e-3);
        let mut t = VarianceTracker::new(0.0);
        for v in [1.0, 5.0, -2.0] {
            ema_update(&mut t, &[v]).unwrap();
            assert_eq!(t.mean_variance(), 0.0);
        }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = BenchConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(BenchConfig::from_toml(&text).unwrap(), c);
        let c =
            BenchConfig::from_toml("steps = 10\nestimators = [\"disarm-sb\", \"rloo-3\"]\nordering = \"descending\"\n")
                .unwrap();
        assert_eq!(c.resolve(c.estimators[0]), EstimatorId::DisarmSb(CategoryOrder::Descending));
        assert!(BenchConfig::from_toml("steps = 0").is_err());
        assert!(BenchConfig::from_toml("estimators = [\"bogus\"]").is_err());
        assert!(BenchConfig::from_toml("typo_field = 1").is_err());
        assert!(BenchConfig::from_toml("[model]\ncategories = 3\n").is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut c = small();
        c.optimizer.learning_rate = 0.0;
        let mut s = Session::new(&c, "x").unwrap();
        let before = s.model.clone();
        let mut rng = stream(0, "test", "", 0);
        for _ in 0..5 {
            let batch = s.next_batch(4);
            let g = batch_gradient(&s.model, &batch, EstimatorId::Rloo(2), &mut rng).unwrap();
            s.optimizer.ascend(&mut s.model.params, &g.grads);
        }
        assert_eq!(before, s.model);
    }

    #[test]
    fn f_eval_accounting() {
        // Counts are distinct configurations, so repeated draws count once.
        let c = small();
        for id in [EstimatorId::Reinforce, EstimatorId::Rloo(3), EstimatorId::DisarmIw, EstimatorId::Arsm] {
            let (rows, _, _) = train_one(&BenchConfig { steps: 5, ..c.clone() }, id).unwrap();
            for r in rows {
                assert!(r.f_evals >= c.batch_size && r.f_evals <= id.max_f_evals(4) * c.batch_size);
                if id == EstimatorId::Reinforce {
                    assert_eq!(r.f_evals, c.batch_size);
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let c = small();
        let a = train_one(&c, EstimatorId::DisarmTree).unwrap();
        let b = train_one(&c, EstimatorId::DisarmTree).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let r1 = variance_replay_rows(&c).unwrap();
        let r2 = variance_replay_rows(&c).unwrap();
        assert_eq!(r1.0, r2.0);
        assert_eq!(r1.0.len(), 4 * c.replay_estimators.len());
    }

    #[test]
    fn same_estimator_twice_gives_identical_columns() {
        let mut c = small();
        c.replay_estimators = vec![EstimatorId::DisarmSb(CategoryOrder::Ascending); 2];
        let (rows, _) = variance_replay_rows(&c).unwrap();
        assert_eq!(rows.len(), 8);
        for pair in rows.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }
}
