//! Experiment runner: builds a deployment and data shards per seed, runs one
//! algorithm, and emits one [`MetricsRecord`] per iteration plus a
//! per-seed [`SeedSummary`].

mod config;

pub use config::{Algorithm, DataSource, ExperimentConfig, Task};

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineError, ParameterServer, PsConfig};
use crate::gadmm::{Engine, EngineError, RunConfig, Schedule};
use crate::netsim::{account_round, Deployment, EnergyLedger, NetsimError, Topology, Transmission};
use crate::solvers::{
    centralized_oracle, load_csv, logistic_reference, shard_data, DataError, Dataset, InnerSolver, LocalObjective,
    LogisticObjective, PenalizedSubproblem, QuadraticObjective, Smooth, SolverError, SyntheticClassification,
    SyntheticRegression,
};
use crate::ModelVector;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
    #[error("engine error: {0}")]
    Engine(#[from] EngineError),
    #[error("baseline error: {0}")]
    Baseline(#[from] BaselineError),
    #[error("deployment error: {0}")]
    Netsim(#[from] NetsimError),
    #[error("every seed is censored; no energy-to-target values to summarize")]
    AllCensored,
    #[error("need at least two seeds, got {0}")]
    TooFewSeeds(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Data(_) | HarnessError::TooFewSeeds(_) | HarnessError::AllCensored => 2,
            HarnessError::Solver(_) | HarnessError::Engine(_) | HarnessError::Baseline(_) => 3,
            _ => 1,
        }
    }
}

/// A worker's local loss, either task.
#[derive(Debug, Clone)]
pub enum Objective {
    Quadratic(QuadraticObjective),
    Logistic(LogisticObjective),
}

impl Smooth for Objective {
    fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(f) => f.dim(),
            Objective::Logistic(f) => f.dim(),
        }
    }

    fn value(&self, theta: &ModelVector) -> f64 {
        match self {
            Objective::Quadratic(f) => f.value(theta),
            Objective::Logistic(f) => f.value(theta),
        }
    }

    fn gradient(&self, theta: &ModelVector) -> ModelVector {
        match self {
            Objective::Quadratic(f) => f.gradient(theta),
            Objective::Logistic(f) => f.gradient(theta),
        }
    }

    fn curvature_apply(&self, v: &ModelVector) -> ModelVector {
        match self {
            Objective::Quadratic(f) => f.curvature_apply(v),
            Objective::Logistic(f) => f.curvature_apply(v),
        }
    }
}

impl LocalObjective for Objective {
    fn solve(&mut self, sub: &PenalizedSubproblem, warm: &ModelVector) -> Result<ModelVector, SolverError> {
        match self {
            Objective::Quadratic(f) => f.solve(sub, warm),
            Objective::Logistic(f) => f.solve(sub, warm),
        }
    }
}

/// Independent seed for one purpose (data, sharding, placement, …).
pub fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const DATA_STREAM: u64 = 1;
const SHARD_STREAM: u64 = 2;
const PLACEMENT_STREAM: u64 = 3;
const QUANTIZER_STREAM: u64 = 4;
const BATCH_STREAM: u64 = 1000;

/// Everything an algorithm run shares with the other algorithms of the same
/// seed: data, shards, geometry and the loss target.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: Dataset,
    /// Indexed by worker.
    pub shards: Vec<Dataset>,
    pub deployment: Deployment,
    /// Regression: optimal total objective.
    pub f_star: Option<f64>,
    /// Classification: loss of the centralized reference model.
    pub reference_loss: Option<f64>,
    pub target: f64,
}

impl Problem {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        config.validate()?;
        let data = match &config.data {
            DataSource::Csv(path) => load_csv(path)?,
            DataSource::Synthetic => match config.task {
                Task::Regression => {
                    SyntheticRegression {
                        samples: config.samples,
                        dim: config.dim,
                        noise: config.noise,
                        condition: config.condition,
                    }
                    .generate(sub_seed(seed, DATA_STREAM))
                    .0
                }
                Task::Classification => {
                    SyntheticClassification {
                        samples: config.samples,
                        dim: config.dim,
                        separation: config.separation,
                    }
                    .generate(sub_seed(seed, DATA_STREAM))
                    .0
                }
            },
        };
        let shards = shard_data(&data, config.n_workers, sub_seed(seed, SHARD_STREAM))?;
        let deployment = Deployment::generate(config.n_workers, config.side, sub_seed(seed, PLACEMENT_STREAM));
        let (f_star, reference_loss, target) = match config.task {
            Task::Regression => {
                let quads = shards
                    .iter()
                    .map(|s| QuadraticObjective::new(s.features.clone(), s.targets.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                let opt = centralized_oracle(&quads, true)?;
                (Some(opt.f_star), None, config.target_loss)
            }
            Task::Classification => {
                let reference = logistic_reference(&data)?;
                let target = config.target_ratio.map_or(config.target_loss, |r| r * reference.loss);
                (None, Some(reference.loss), target)
            }
        };
        Ok(Self {
            data,
            shards,
            deployment,
            f_star,
            reference_loss,
            target,
        })
    }

    /// Local objectives indexed by worker.
    pub fn objectives(&self, config: &ExperimentConfig, seed: u64) -> Result<Vec<Objective>, HarnessError> {
        let inner = InnerSolver {
            steps: config.inner_steps,
            lr: config.inner_lr,
            minibatch: config.algorithm.is_stochastic().then_some(config.minibatch),
        };
        self.shards
            .iter()
            .enumerate()
            .map(|(w, s)| {
                Ok(match config.task {
                    Task::Regression => Objective::Quadratic(QuadraticObjective::new(s.features.clone(), s.targets.clone())?),
                    Task::Classification => Objective::Logistic(LogisticObjective::new(
                        s.features.clone(),
                        s.targets.clone(),
                        inner,
                        sub_seed(seed, BATCH_STREAM + w as u64),
                    )?),
                })
            })
            .collect()
    }

    /// Regression: `|Σ f_n(θ_n) − F*|`. Classification: `Σ f_n(θ_n)/M`, the
    /// mean cross-entropy of each worker's model on its own shard.
    pub fn loss(&self, objectives: &[Objective], models: &[&ModelVector]) -> f64 {
        match self.f_star {
            Some(f_star) => {
                let total: f64 = objectives.iter().zip(models).map(|(f, m)| f.value(m)).sum();
                (total - f_star).abs()
            }
            None => {
                let total: f64 = objectives.iter().zip(models).map(|(f, m)| f.value(m)).sum();
                total / self.data.len() as f64
            }
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub round: usize,
    pub loss: f64,
    pub cum_bits: u64,
    pub cum_energy_j: f64,
    pub max_primal_res: f64,
    pub max_dual_res: f64,
}

/// Cost of reaching the target for one seed and staying there until the end
/// of the run; `None` fields mean censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub target: f64,
    pub records: usize,
    pub final_loss: f64,
    pub iterations_to_target: Option<usize>,
    pub rounds_to_target: Option<usize>,
    pub bits_to_target: Option<u64>,
    pub energy_to_target: Option<f64>,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: SeedSummary,
}

struct Tracker<'a> {
    problem: &'a Problem,
    topology: Topology,
    config: &'a ExperimentConfig,
    ledger: EnergyLedger,
    records: Vec<MetricsRecord>,
}

impl Tracker<'_> {
    fn push(&mut self, iteration: usize, loss: f64, transmissions: &[Transmission], primal: f64, dual: f64) {
        let delta = account_round(transmissions, &self.problem.deployment, &self.config.budget, self.topology);
        self.ledger.record(&delta);
        let per_iter = match self.topology {
            Topology::Decentralized => self.config.n_workers,
            Topology::ParameterServer => self.config.n_workers + 1,
        };
        self.records.push(MetricsRecord {
            iteration,
            round: iteration * per_iter,
            loss,
            cum_bits: self.ledger.cumulative_bits,
            cum_energy_j: self.ledger.cumulative_energy,
            max_primal_res: primal,
            max_dual_res: dual,
        });
    }
}

fn summarize(config: &ExperimentConfig, seed: u64, target: f64, records: &[MetricsRecord]) -> SeedSummary {
    // The loss can dip through the target and leave again, so a seed counts
    // from the iteration after which it stays at or below the target.
    let settled = records.iter().rposition(|r| r.loss > target).map_or(0, |i| i + 1);
    let hit = records.get(settled);
    SeedSummary {
        algorithm: config.algorithm,
        seed,
        target,
        records: records.len(),
        final_loss: records.last().map_or(f64::NAN, |r| r.loss),
        iterations_to_target: hit.map(|r| r.iteration),
        rounds_to_target: hit.map(|r| r.round),
        bits_to_target: hit.map(|r| r.cum_bits),
        energy_to_target: hit.map(|r| r.cum_energy_j),
        censored: hit.is_none(),
    }
}

/// Runs `config.algorithm` on a prepared problem.
pub fn run_on_problem(config: &ExperimentConfig, seed: u64, problem: &Problem) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let objectives = problem.objectives(config, seed)?;
    let algo_seed = sub_seed(seed, QUANTIZER_STREAM);
    let records = if config.algorithm.is_decentralized() {
        let order = &problem.deployment.chain_order;
        let chain: Vec<Objective> = order.iter().map(|&w| objectives[w].clone()).collect();
        let run = RunConfig {
            rho: config.rho,
            alpha: config.alpha,
            max_iters: config.max_iters,
            bit_policy: config.bit_policy,
            quantize: config.algorithm.is_quantized(),
            seed: algo_seed,
            accounting: config.accounting,
            early_stop_tol: config.early_stop_tol,
            schedule: Schedule::Forward,
        };
        let mut engine = Engine::new(chain, run)?;
        let mut tracker = Tracker {
            problem,
            topology: Topology::Decentralized,
            config,
            ledger: EnergyLedger::default(),
            records: Vec::with_capacity(config.max_iters),
        };
        while let Some(report) = engine.next() {
            let report = report?;
            let models: Vec<&ModelVector> = engine.workers().iter().map(|w| &w.theta).collect();
            let loss = problem.loss(engine.objectives(), &models);
            tracker.push(
                report.iteration,
                loss,
                &report.transmissions(),
                report.residuals.max_primal(),
                report.residuals.max_dual(),
            );
        }
        tracker.records
    } else {
        let ps = PsConfig {
            eta: config.eta,
            max_iters: config.max_iters,
            bits: config.algorithm.is_quantized().then(|| config.fixed_bits()),
            seed: algo_seed,
            accounting: config.accounting,
        };
        let mut server = ParameterServer::new(objectives, ps)?;
        let mut tracker = Tracker {
            problem,
            topology: Topology::ParameterServer,
            config,
            ledger: EnergyLedger::default(),
            records: Vec::with_capacity(config.max_iters),
        };
        while let Some(report) = server.next() {
            let report = report?;
            let theta = &server.state().theta;
            let models = vec![theta; server.objectives().len()];
            let loss = problem.loss(server.objectives(), &models);
            tracker.push(report.iteration, loss, &report.transmissions(), 0.0, 0.0);
        }
        tracker.records
    };
    let summary = summarize(config, seed, problem.target, &records);
    Ok(RunOutput { records, summary })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    let problem = Problem::build(config, seed)?;
    run_on_problem(config, seed, &problem)
}

/// Runs every seed of the experiment; results come back in seed-list order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunOutput>, HarnessError> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    {
        config.seeds.par_iter().map(|&s| run_seed(config, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        config.seeds.iter().map(|&s| run_seed(config, s)).collect()
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(r)?;
    }
    if records.is_empty() {
        writer.write_record(["iteration", "round", "loss", "cum_bits", "cum_energy_j", "max_primal_res", "max_dual_res"])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn csv_string(records: &[MetricsRecord]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Writes `<algorithm>_seed<seed>.csv` per seed and `summary.json` into `dir`.
pub fn write_outputs(dir: &std::path::Path, outputs: &[RunOutput]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for out in outputs {
        let name = format!("{}_seed{}.csv", out.summary.algorithm, out.summary.seed);
        write_csv(&out.records, std::fs::File::create(dir.join(name))?)?;
    }
    let summaries: Vec<&SeedSummary> = outputs.iter().map(|o| &o.summary).collect();
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    Ok(())
}

/// Empirical CDF of energy-to-target over seeds.
///
/// Quantiles are `(i + 1)/n` over all `n` seeds, so censored seeds keep the
/// curve below 1.
pub fn energy_cdf(summaries: &[SeedSummary]) -> Result<Vec<(f64, f64)>, HarnessError> {
    if summaries.len() < 2 {
        return Err(HarnessError::TooFewSeeds(summaries.len()));
    }
    let mut energies: Vec<f64> = summaries.iter().filter_map(|s| s.energy_to_target).collect();
    if energies.is_empty() {
        return Err(HarnessError::AllCensored);
    }
    energies.sort_by(f64::total_cmp);
    let n = summaries.len() as f64;
    Ok(energies
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect())
}

/// Grid of settings swept over a base configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSpec {
    pub algorithms: Vec<Algorithm>,
    pub rhos: Vec<f64>,
    pub bits: Vec<u32>,
    pub workers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub rho: f64,
    pub bits: u32,
    pub n_workers: usize,
    pub seed: u64,
    pub iterations_to_target: Option<usize>,
    pub rounds_to_target: Option<usize>,
    pub bits_to_target: Option<u64>,
    pub energy_to_target: Option<f64>,
    pub final_loss: f64,
}

/// Runs the cross product of the spec; empty axes keep the base value.
/// Every algorithm at a given `(N, seed)` sees the same problem.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>, HarnessError> {
    fn or<T: Clone>(axis: &[T], default: T) -> Vec<T> {
        if axis.is_empty() {
            vec![default]
        } else {
            axis.to_vec()
        }
    }
    let algorithms = or(&spec.algorithms, base.algorithm);
    let rhos = or(&spec.rhos, base.rho);
    let bits = or(&spec.bits, base.fixed_bits());
    let workers = or(&spec.workers, base.n_workers);
    let mut rows = Vec::new();
    for &n in &workers {
        for &seed in &base.seeds {
            let mut shared = base.clone();
            shared.n_workers = n;
            let problem = Problem::build(&shared, seed)?;
            for &algorithm in &algorithms {
                for &rho in &rhos {
                    for &b in &bits {
                        let mut cfg = shared.clone();
                        cfg.algorithm = algorithm;
                        cfg.rho = rho;
                        cfg.bit_policy = match base.bit_policy {
                            crate::gadmm::BitPolicy::Fixed(_) => crate::gadmm::BitPolicy::Fixed(b),
                            crate::gadmm::BitPolicy::Adaptive { floor, .. } => {
                                crate::gadmm::BitPolicy::Adaptive { initial: b, floor: floor.min(b) }
                            }
                        };
                        let s = run_on_problem(&cfg, seed, &problem)?.summary;
                        rows.push(SweepRow {
                            algorithm,
                            rho,
                            bits: b,
                            n_workers: n,
                            seed,
                            iterations_to_target: s.iterations_to_target,
                            rounds_to_target: s.rounds_to_target,
                            bits_to_target: s.bits_to_target,
                            energy_to_target: s.energy_to_target,
                            final_loss: s.final_loss,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
