//! Group ADMM iteration engine, with and without quantized transmissions.
//!
//! Workers sit on a chain `0, 1, …, N−1`. Even positions form the head group
//! and odd positions the tail group. Every worker keeps its own copies of the
//! neighbour reconstructions it has decoded and of the dual variables on its
//! links; nothing is shared between workers except messages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::netsim::{Phase, Sender, Transmission};
use crate::quantizer::{self, Accounting, QuantError, QuantizedMessage};
use crate::solvers::{LocalObjective, PenalizedSubproblem, SolverError};
use crate::ModelVector;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("worker {worker}: {source}")]
    Solver {
        worker: usize,
        #[source]
        source: SolverError,
    },
    #[error("worker {worker}: {source}")]
    Quantizer {
        worker: usize,
        #[source]
        source: QuantError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Head,
    Tail,
}

impl Role {
    pub fn of(chain_position: usize) -> Self {
        if chain_position.is_multiple_of(2) {
            Role::Head
        } else {
            Role::Tail
        }
    }

    fn phase(self) -> Phase {
        match self {
            Role::Head => Phase::Head,
            Role::Tail => Phase::Tail,
        }
    }
}

/// How a worker picks its quantizer resolution each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitPolicy {
    Fixed(u32),
    /// Start at `initial` and afterwards use the smallest width that keeps
    /// the step size from growing, but never fewer than `floor` bits.
    Adaptive { initial: u32, floor: u32 },
}

impl BitPolicy {
    fn validate(&self) -> Result<(), EngineError> {
        let ok = |b: u32| (1..=quantizer::MAX_BITS).contains(&b);
        let valid = match *self {
            BitPolicy::Fixed(b) => ok(b),
            BitPolicy::Adaptive { initial, floor } => ok(initial) && ok(floor),
        };
        if valid {
            Ok(())
        } else {
            Err(EngineError::Config(format!("bit widths out of range in {self:?}")))
        }
    }
}

/// Order in which members of one group are processed within a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Forward,
    Reverse,
    #[cfg(feature = "parallel")]
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rho: f64,
    /// Dual damping; 1 gives the plain update.
    pub alpha: f64,
    pub max_iters: usize,
    pub bit_policy: BitPolicy,
    /// `false` sends full-precision models (plain GADMM).
    pub quantize: bool,
    pub seed: u64,
    pub accounting: Accounting,
    /// Stop once both residual maxima fall below this.
    pub early_stop_tol: Option<f64>,
    pub schedule: Schedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rho: 24.0,
            alpha: 1.0,
            max_iters: 1000,
            bit_policy: BitPolicy::Fixed(2),
            quantize: true,
            seed: 0,
            accounting: Accounting::Experiment,
            early_stop_tol: None,
            schedule: Schedule::Forward,
        }
    }
}

impl RunConfig {
    pub fn gadmm(rho: f64, max_iters: usize) -> Self {
        Self {
            rho,
            max_iters,
            quantize: false,
            ..Self::default()
        }
    }

    pub fn qgadmm(rho: f64, max_iters: usize, bits: u32, seed: u64) -> Self {
        Self {
            rho,
            max_iters,
            bit_policy: BitPolicy::Fixed(bits),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(EngineError::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(EngineError::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(EngineError::Config("max_iters must be at least 1".into()));
        }
        self.bit_policy.validate()
    }
}

/// Everything one worker knows.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub index: usize,
    pub theta: ModelVector,
    /// The reconstruction of `theta` that the neighbours hold.
    pub self_hat: ModelVector,
    pub left_hat: Option<ModelVector>,
    pub right_hat: Option<ModelVector>,
    /// Multiplier on the link to the left neighbour.
    pub lambda_left: Option<ModelVector>,
    /// Multiplier on the link to the right neighbour.
    pub lambda_right: Option<ModelVector>,
}

impl WorkerState {
    /// All-zero models, reconstructions and multipliers.
    pub fn initial(index: usize, n_workers: usize, dim: usize) -> Self {
        let zero = || ModelVector::zeros(dim);
        let has_left = index > 0;
        let has_right = index + 1 < n_workers;
        Self {
            index,
            theta: zero(),
            self_hat: zero(),
            left_hat: has_left.then(zero),
            right_hat: has_right.then(zero),
            lambda_left: has_left.then(zero),
            lambda_right: has_right.then(zero),
        }
    }

    pub fn role(&self) -> Role {
        Role::of(self.index)
    }

    fn dim(&self) -> usize {
        self.theta.len()
    }

    /// The local subproblem implied by the worker's cached neighbour models
    /// and multipliers.
    pub fn subproblem(&self, rho: f64) -> PenalizedSubproblem {
        let anchors = [&self.left_hat, &self.right_hat]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        let mut drift = ModelVector::zeros(self.dim());
        if let Some(l) = &self.lambda_right {
            drift += l;
        }
        if let Some(l) = &self.lambda_left {
            drift -= l;
        }
        PenalizedSubproblem::new(anchors, drift, rho)
    }
}

fn primal_update<O: LocalObjective + ?Sized>(worker: &WorkerState, objective: &mut O, rho: f64) -> Result<ModelVector, EngineError> {
    objective
        .solve(&worker.subproblem(rho), &worker.theta)
        .map_err(|source| EngineError::Solver {
            worker: worker.index,
            source,
        })
}

/// Head primal step against the neighbour reconstructions from the previous
/// round.
pub fn head_update<O: LocalObjective + ?Sized>(worker: &WorkerState, objective: &mut O, rho: f64) -> Result<ModelVector, EngineError> {
    if worker.role() != Role::Head {
        return Err(EngineError::Config(format!("worker {} is not a head", worker.index)));
    }
    primal_update(worker, objective, rho)
}

/// Tail primal step against the head reconstructions received this round.
pub fn tail_update<O: LocalObjective + ?Sized>(worker: &WorkerState, objective: &mut O, rho: f64) -> Result<ModelVector, EngineError> {
    if worker.role() != Role::Tail {
        return Err(EngineError::Config(format!("worker {} is not a tail", worker.index)));
    }
    primal_update(worker, objective, rho)
}

/// `λ + αρ(θ̂_left − θ̂_right)` for the link between two adjacent workers.
///
/// Both endpoints call this with the same operands, so they agree bit for bit.
pub fn dual_update(lambda: &ModelVector, left_hat: &ModelVector, right_hat: &ModelVector, rho: f64, alpha: f64) -> ModelVector {
    lambda + (alpha * rho) * (left_hat - right_hat)
}

/// What a worker put on the air in one broadcast.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Full(ModelVector),
    Quantized(QuantizedMessage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentMessage {
    /// Chain position of the sender.
    pub sender: usize,
    pub phase: Phase,
    pub payload: Payload,
    pub bits: u64,
}

impl SentMessage {
    pub fn quantized(&self) -> Option<&QuantizedMessage> {
        match &self.payload {
            Payload::Quantized(m) => Some(m),
            Payload::Full(_) => None,
        }
    }
}

/// Primal residuals per link and dual residuals per head.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `θ_n − θ_{n+1}` for each of the `N − 1` links.
    pub primal: Vec<ModelVector>,
    /// `(head position, s_n)`.
    pub dual: Vec<(usize, ModelVector)>,
}

impl Residuals {
    pub fn max_primal(&self) -> f64 {
        self.primal.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    pub fn max_dual(&self) -> f64 {
        self.dual.iter().map(|(_, s)| s.norm()).fold(0.0, f64::max)
    }
}

pub fn primal_residuals(states: &[WorkerState]) -> Vec<ModelVector> {
    states.windows(2).map(|w| &w[0].theta - &w[1].theta).collect()
}

/// `ρ(θ̂_{n−1}^{k+1} − θ̂_{n−1}^k) + ρ(θ̂_{n+1}^{k+1} − θ̂_{n+1}^k)` for each head,
/// with boundary heads keeping the single term they have.
///
/// `prev_hats[n]` is worker `n`'s reconstruction before the round.
pub fn dual_residuals(states: &[WorkerState], prev_hats: &[ModelVector], rho: f64) -> Vec<(usize, ModelVector)> {
    states
        .iter()
        .filter(|w| w.role() == Role::Head)
        .map(|w| {
            let mut s = ModelVector::zeros(w.dim());
            if let Some(left) = &w.left_hat {
                s += rho * (left - &prev_hats[w.index - 1]);
            }
            if let Some(right) = &w.right_hat {
                s += rho * (right - &prev_hats[w.index + 1]);
            }
            (w.index, s)
        })
        .collect()
}

/// `(1/ρ) Σ‖λ_n − λ*_n‖² + ρ Σ_{heads≠first} ‖θ_{n−1} − θ*‖² + ρ Σ_{heads} ‖θ_{n+1} − θ*‖²`.
///
/// Squared norms on every term. `lambda_star` holds one multiplier per link.
pub fn lyapunov(states: &[WorkerState], theta_star: &ModelVector, lambda_star: &[ModelVector], rho: f64) -> f64 {
    let dual: f64 = states
        .iter()
        .filter_map(|w| w.lambda_right.as_ref().map(|l| (l - &lambda_star[w.index]).norm_squared()))
        .sum();
    let mut primal = 0.0;
    for head in states.iter().filter(|w| w.role() == Role::Head) {
        if head.index > 0 {
            primal += (&states[head.index - 1].theta - theta_star).norm_squared();
        }
        if let Some(right) = states.get(head.index + 1) {
            primal += (&right.theta - theta_star).norm_squared();
        }
    }
    dual / rho + rho * primal
}

/// `|Σ f_n(θ_n) − F*|`.
pub fn objective_gap<O: LocalObjective>(objectives: &[O], states: &[WorkerState], f_star: f64) -> f64 {
    (total_objective(objectives, states) - f_star).abs()
}

pub fn total_objective<O: LocalObjective>(objectives: &[O], states: &[WorkerState]) -> f64 {
    objectives.iter().zip(states).map(|(f, w)| f.value(&w.theta)).sum()
}

/// Result of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based iteration index.
    pub iteration: usize,
    pub residuals: Residuals,
    pub objective: f64,
    pub gap: Option<f64>,
    pub messages: Vec<SentMessage>,
}

impl RoundReport {
    pub fn bits(&self) -> u64 {
        self.messages.iter().map(|m| m.bits).sum()
    }

    pub fn transmissions(&self) -> Vec<Transmission> {
        self.messages
            .iter()
            .map(|m| Transmission {
                sender: Sender::Worker(m.sender),
                phase: m.phase,
                bits: m.bits,
            })
            .collect()
    }
}

/// Drives (Q-)GADMM iterations over a chain.
#[derive(Debug)]
pub struct Engine<O> {
    objectives: Vec<O>,
    workers: Vec<WorkerState>,
    last_quantizer: Vec<Option<(u32, f64)>>,
    rngs: Vec<ChaCha8Rng>,
    config: RunConfig,
    iteration: usize,
    f_star: Option<f64>,
    stopped: bool,
}

impl<O: LocalObjective> Engine<O> {
    /// Zero-initialized chain with one objective per chain position.
    pub fn new(objectives: Vec<O>, config: RunConfig) -> Result<Self, EngineError> {
        let n = objectives.len();
        let d = objectives.first().map(|f| f.dim()).unwrap_or(0);
        let workers = (0..n).map(|i| WorkerState::initial(i, n, d)).collect();
        Self::with_states(objectives, workers, config)
    }

    /// Starts from explicit worker states, which must hold consistent copies
    /// of each other's reconstructions and multipliers.
    pub fn with_states(objectives: Vec<O>, workers: Vec<WorkerState>, config: RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let n = objectives.len();
        if n < 2 {
            return Err(EngineError::Config("a chain needs at least two workers".into()));
        }
        if workers.len() != n {
            return Err(EngineError::Config(format!("{} states for {n} objectives", workers.len())));
        }
        let d = objectives[0].dim();
        if d == 0 || objectives.iter().any(|f| f.dim() != d) {
            return Err(EngineError::Config("objectives must share a positive dimension".into()));
        }
        check_consistency(&workers, d)?;
        let rngs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Ok(Self {
            objectives,
            workers,
            last_quantizer: vec![None; n],
            rngs,
            config,
            iteration: 0,
            f_star: None,
            stopped: false,
        })
    }

    /// Reports `|F − F*|` against this optimum from now on.
    pub fn with_optimum(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn objectives(&self) -> &[O] {
        &self.objectives
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn dim(&self) -> usize {
        self.workers[0].dim()
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Current models, in chain order.
    pub fn models(&self) -> Vec<ModelVector> {
        self.workers.iter().map(|w| w.theta.clone()).collect()
    }

    pub fn objective(&self) -> f64 {
        total_objective(&self.objectives, &self.workers)
    }

    fn group(&self, role: Role) -> Vec<usize> {
        let mut members: Vec<usize> = (0..self.workers.len()).filter(|&i| Role::of(i) == role).collect();
        if self.config.schedule == Schedule::Reverse {
            members.reverse();
        }
        members
    }

    fn primal_phase(&mut self, role: Role) -> Result<(), EngineError> {
        let rho = self.config.rho;
        #[cfg(feature = "parallel")]
        if self.config.schedule == Schedule::Parallel {
            return self
                .objectives
                .par_iter_mut()
                .zip(self.workers.par_iter_mut())
                .filter(|(_, w)| w.role() == role)
                .try_for_each(|(f, w)| {
                    w.theta = primal_update(w, f, rho)?;
                    Ok(())
                });
        }
        for i in self.group(role) {
            let theta = primal_update(&self.workers[i], &mut self.objectives[i], rho)?;
            self.workers[i].theta = theta;
        }
        Ok(())
    }

    fn choose_bits(&self, i: usize) -> Result<u32, EngineError> {
        match self.config.bit_policy {
            BitPolicy::Fixed(b) => Ok(b),
            BitPolicy::Adaptive { initial, floor } => match self.last_quantizer[i] {
                Some((b_prev, r_prev)) => {
                    let w = &self.workers[i];
                    let r_cur = quantizer::wire_range(&w.theta, &w.self_hat);
                    let b = quantizer::select_bits(b_prev, r_prev, r_cur)
                        .map_err(|source| EngineError::Quantizer { worker: i, source })?;
                    Ok(b.max(floor))
                }
                None => Ok(initial),
            },
        }
    }

    /// Encodes one worker's model and updates its own reconstruction.
    fn broadcast(&mut self, i: usize, phase: Phase) -> Result<SentMessage, EngineError> {
        let d = self.dim();
        if !self.config.quantize {
            let w = &mut self.workers[i];
            w.self_hat = w.theta.clone();
            return Ok(SentMessage {
                sender: i,
                phase,
                payload: Payload::Full(w.theta.clone()),
                bits: quantizer::full_precision_bits(d),
            });
        }
        let bits = self.choose_bits(i)?;
        let w = &mut self.workers[i];
        let encoded = quantizer::encode(&w.theta, &w.self_hat, bits, &mut self.rngs[i])
            .map_err(|source| EngineError::Quantizer { worker: i, source })?;
        w.self_hat = encoded.new_hat;
        let msg = encoded.message;
        if !msg.zero_diff {
            self.last_quantizer[i] = Some((msg.bits, f64::from(msg.range)));
        }
        let bits = quantizer::payload_bits(&msg, d, self.config.accounting);
        Ok(SentMessage {
            sender: i,
            phase,
            payload: Payload::Quantized(msg),
            bits,
        })
    }

    /// Neighbours of the sender decode the message into their own caches.
    fn deliver(&mut self, msg: &SentMessage) -> Result<(), EngineError> {
        let i = msg.sender;
        let decode = |cache: &ModelVector, worker: usize| -> Result<ModelVector, EngineError> {
            match &msg.payload {
                Payload::Full(theta) => Ok(theta.clone()),
                Payload::Quantized(q) => {
                    quantizer::decode(q, cache).map_err(|source| EngineError::Quantizer { worker, source })
                }
            }
        };
        if i > 0 {
            let left = &self.workers[i - 1];
            let cache = left.right_hat.as_ref().expect("interior link");
            let updated = decode(cache, i - 1)?;
            self.workers[i - 1].right_hat = Some(updated);
        }
        if i + 1 < self.workers.len() {
            let right = &self.workers[i + 1];
            let cache = right.left_hat.as_ref().expect("interior link");
            let updated = decode(cache, i + 1)?;
            self.workers[i + 1].left_hat = Some(updated);
        }
        Ok(())
    }

    fn communicate(&mut self, role: Role) -> Result<Vec<SentMessage>, EngineError> {
        let mut sent = Vec::new();
        for i in self.group(role) {
            sent.push(self.broadcast(i, role.phase())?);
        }
        for msg in &sent {
            self.deliver(msg)?;
        }
        sent.sort_by_key(|m| m.sender);
        Ok(sent)
    }

    fn dual_phase(&mut self) {
        let (rho, alpha) = (self.config.rho, self.config.alpha);
        for i in 0..self.workers.len() - 1 {
            let (left_side, right_side) = self.workers.split_at_mut(i + 1);
            let left = &mut left_side[i];
            let right = &mut right_side[0];
            let from_left = dual_update(
                left.lambda_right.as_ref().expect("interior link"),
                &left.self_hat,
                left.right_hat.as_ref().expect("interior link"),
                rho,
                alpha,
            );
            let from_right = dual_update(
                right.lambda_left.as_ref().expect("interior link"),
                right.left_hat.as_ref().expect("interior link"),
                &right.self_hat,
                rho,
                alpha,
            );
            left.lambda_right = Some(from_left);
            right.lambda_left = Some(from_right);
        }
    }

    /// Runs one full iteration: head solves and broadcasts, tail solves and
    /// broadcasts, then local multiplier updates.
    pub fn step(&mut self) -> Result<RoundReport, EngineError> {
        let prev_hats: Vec<ModelVector> = self.workers.iter().map(|w| w.self_hat.clone()).collect();

        self.primal_phase(Role::Head)?;
        let mut messages = self.communicate(Role::Head)?;
        self.primal_phase(Role::Tail)?;
        messages.extend(self.communicate(Role::Tail)?);
        self.dual_phase();

        self.iteration += 1;
        let residuals = Residuals {
            primal: primal_residuals(&self.workers),
            dual: dual_residuals(&self.workers, &prev_hats, self.config.rho),
        };
        if let Some(tol) = self.config.early_stop_tol {
            if residuals.max_primal() < tol && residuals.max_dual() < tol {
                self.stopped = true;
            }
        }
        let objective = self.objective();
        Ok(RoundReport {
            iteration: self.iteration,
            residuals,
            objective,
            gap: self.f_star.map(|f| (objective - f).abs()),
            messages,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.iteration >= self.config.max_iters
    }
}

impl<O: LocalObjective> Iterator for Engine<O> {
    type Item = Result<RoundReport, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.is_finished() {
            return None;
        }
        let out = self.step();
        if out.is_err() {
            self.stopped = true;
        }
        Some(out)
    }
}

fn check_consistency(workers: &[WorkerState], d: usize) -> Result<(), EngineError> {
    let n = workers.len();
    let bad = |msg: String| Err(EngineError::Config(msg));
    for (i, w) in workers.iter().enumerate() {
        if w.index != i {
            return bad(format!("state {i} carries index {}", w.index));
        }
        if w.theta.len() != d || w.self_hat.len() != d {
            return bad(format!("worker {i} has the wrong dimension"));
        }
        let has_left = i > 0;
        let has_right = i + 1 < n;
        if w.left_hat.is_some() != has_left
            || w.lambda_left.is_some() != has_left
            || w.right_hat.is_some() != has_right
            || w.lambda_right.is_some() != has_right
        {
            return bad(format!("worker {i} has neighbour slots that do not match the chain"));
        }
    }
    for pair in workers.windows(2) {
        let (l, r) = (&pair[0], &pair[1]);
        if l.right_hat.as_ref() != Some(&r.self_hat) || r.left_hat.as_ref() != Some(&l.self_hat) {
            return bad(format!("link {}–{} holds stale reconstructions", l.index, r.index));
        }
        if l.lambda_right != r.lambda_left {
            return bad(format!("link {}–{} disagrees on its multiplier", l.index, r.index));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{QuadraticObjective, Smooth};
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> ModelVector {
        ModelVector::from_column_slice(xs)
    }

    fn scalar(a: f64) -> QuadraticObjective {
        QuadraticObjective::new(DMatrix::identity(1, 1), v(&[a])).unwrap()
    }

    fn zero_objective(d: usize) -> QuadraticObjective {
        QuadraticObjective::new(DMatrix::zeros(0, d), ModelVector::zeros(0)).unwrap()
    }

    fn interior(index: usize, left: ModelVector, right: ModelVector, lambda_left: ModelVector, lambda_right: ModelVector) -> WorkerState {
        WorkerState {
            index,
            theta: ModelVector::zeros(left.len()),
            self_hat: ModelVector::zeros(left.len()),
            left_hat: Some(left),
            right_hat: Some(right),
            lambda_left: Some(lambda_left),
            lambda_right: Some(lambda_right),
        }
    }

    #[test]
    fn head_penalty_only_gives_midpoint() {
        let w = interior(2, v(&[1.0, -2.0]), v(&[3.0, 4.0]), ModelVector::zeros(2), ModelVector::zeros(2));
        let got = head_update(&w, &mut zero_objective(2), 5.0).unwrap();
        assert!((got - v(&[2.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn equal_multipliers_cancel() {
        let lam = v(&[0.7, -0.3]);
        let w = interior(2, ModelVector::zeros(2), ModelVector::zeros(2), lam.clone(), lam);
        let got = head_update(&w, &mut zero_objective(2), 3.0).unwrap();
        assert_eq!(got, ModelVector::zeros(2));
    }

    #[test]
    fn quadratic_head_and_tail_updates() {
        let (a, z, rho) = (2.0, -1.0, 3.0);
        let expected = (a + 2.0 * rho * z) / (1.0 + 2.0 * rho);
        let head = interior(2, v(&[z]), v(&[z]), v(&[0.0]), v(&[0.0]));
        let got = head_update(&head, &mut scalar(a), rho).unwrap();
        assert!((got[0] - expected).abs() < 1e-15);
        // Numeric cross-check on the penalized objective.
        let sub = head.subproblem(rho);
        let f = scalar(a);
        let probe = |t: f64| sub.total_value(&f, &v(&[t]));
        assert!(probe(got[0]) <= probe(got[0] + 1e-4) && probe(got[0]) <= probe(got[0] - 1e-4));

        let tail = interior(3, v(&[z]), v(&[z]), v(&[0.0]), v(&[0.0]));
        let got = tail_update(&tail, &mut scalar(a), rho).unwrap();
        assert!((got[0] - expected).abs() < 1e-15);
        assert!(head_update(&tail, &mut scalar(a), rho).is_err());
    }

    #[test]
    fn dual_update_examples() {
        let lam = v(&[0.4]);
        assert_eq!(dual_update(&lam, &v(&[1.0]), &v(&[1.0]), 2.0, 1.0), lam);
        assert_eq!(dual_update(&v(&[0.0]), &v(&[1.0]), &v(&[0.0]), 2.0, 1.0), v(&[2.0]));
        assert_eq!(dual_update(&v(&[0.0]), &v(&[1.0]), &v(&[0.0]), 2.0, 0.01), v(&[0.02]));
    }

    fn states_from_models(models: &[f64]) -> Vec<WorkerState> {
        let n = models.len();
        (0..n)
            .map(|i| {
                let mut w = WorkerState::initial(i, n, 1);
                w.theta = v(&[models[i]]);
                w.self_hat = w.theta.clone();
                w
            })
            .collect()
    }

    #[test]
    fn primal_residual_examples() {
        let r = primal_residuals(&states_from_models(&[2.0, 2.0, 2.0]));
        assert!(r.iter().all(|x| x == &v(&[0.0])));
        assert_eq!(primal_residuals(&states_from_models(&[1.0, 3.0])), vec![v(&[-2.0])]);
        assert_eq!(primal_residuals(&states_from_models(&[0.0, 1.0, 2.0])), vec![v(&[-1.0]), v(&[-1.0])]);
    }

    #[test]
    fn dual_residual_examples() {
        let mut states = states_from_models(&[0.0, 0.0, 0.0]);
        let prev = vec![v(&[0.0]); 3];
        assert!(dual_residuals(&states, &prev, 2.0).iter().all(|(_, s)| s == &v(&[0.0])));

        states[0].right_hat = Some(v(&[0.5]));
        let s = dual_residuals(&states, &prev, 2.0);
        assert_eq!(s[0], (0, v(&[1.0])));

        let mut chain = states_from_models(&[0.0; 4]);
        chain[2].left_hat = Some(v(&[1.0]));
        chain[2].right_hat = Some(v(&[1.0]));
        let s = dual_residuals(&chain, &[v(&[0.0]), v(&[0.0]), v(&[0.0]), v(&[0.0])], 1.0);
        assert_eq!(s[1], (2, v(&[2.0])));
    }

    #[test]
    fn lyapunov_examples() {
        let theta_star = v(&[1.0]);
        let lambda_star = vec![v(&[0.5]), v(&[-0.5]), v(&[0.25])];
        let rho = 3.0;
        let at_optimum = |n: usize| -> Vec<WorkerState> {
            (0..n)
                .map(|i| {
                    let mut w = WorkerState::initial(i, n, 1);
                    w.theta = theta_star.clone();
                    w.self_hat = theta_star.clone();
                    w.left_hat = w.left_hat.map(|_| theta_star.clone());
                    w.right_hat = w.right_hat.map(|_| theta_star.clone());
                    w.lambda_left = w.lambda_left.map(|_| lambda_star[i - 1].clone());
                    w.lambda_right = w.lambda_right.map(|_| lambda_star[i].clone());
                    w
                })
                .collect()
        };
        let states = at_optimum(4);
        assert_eq!(lyapunov(&states, &theta_star, &lambda_star, rho), 0.0);

        let mut moved = states.clone();
        moved[0].lambda_right = Some(&lambda_star[0] + v(&[rho]));
        assert!((lyapunov(&moved, &theta_star, &lambda_star, rho) - rho).abs() < 1e-12);

        // Worker 1 is right of head 0 and left of head 2: counted twice.
        let mut moved = states.clone();
        moved[1].theta = v(&[2.0]);
        assert!((lyapunov(&moved, &theta_star, &lambda_star, rho) - 2.0 * rho).abs() < 1e-12);
        // Worker 3 is only right of head 2.
        let mut moved = states.clone();
        moved[3].theta = v(&[0.0]);
        assert!((lyapunov(&moved, &theta_star, &lambda_star, rho) - rho).abs() < 1e-12);
        // Heads never enter the primal part.
        let mut moved = states;
        moved[2].theta = v(&[5.0]);
        assert_eq!(lyapunov(&moved, &theta_star, &lambda_star, rho), 0.0);
    }

    #[test]
    fn objective_gap_examples() {
        let objectives = vec![scalar(0.0), scalar(2.0)];
        let states = states_from_models(&[0.0, 0.0]);
        assert!((objective_gap(&objectives, &states, 1.0) - 1.0).abs() < 1e-15);
        let at_opt = states_from_models(&[1.0, 1.0]);
        assert!(objective_gap(&objectives, &at_opt, 1.0).abs() < 1e-15);
        // Scaling every f_n by c = 4 (each term by 2) scales the gap by 4.
        let scaled: Vec<_> = objectives.iter().map(|f| f.scaled(2.0)).collect();
        assert!((objective_gap(&scaled, &states, 4.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn two_identical_workers_agree_after_one_round() {
        let mut engine = Engine::new(vec![scalar(1.5), scalar(1.5)], RunConfig::gadmm(1.0, 10)).unwrap();
        engine.step().unwrap();
        // With f_1 = f_2 and a common starting point, both subproblems share a minimizer only
        // once the head has moved; the tail then lands on the same value.
        let report = engine.step().unwrap();
        let models = engine.models();
        assert!((&models[0] - &models[1]).amax() < 1.0);
        assert!(report.residuals.primal.len() == 1);
        let mut engine = Engine::new(vec![scalar(1.5), scalar(1.5)], RunConfig::gadmm(1.0, 500)).unwrap();
        for r in engine.by_ref() {
            r.unwrap();
        }
        let models = engine.models();
        assert!((models[0][0] - 1.5).abs() < 1e-12 && (models[1][0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn message_counts_per_phase() {
        let objectives: Vec<_> = (0..5).map(|i| scalar(i as f64)).collect();
        let mut engine = Engine::new(objectives, RunConfig::qgadmm(2.0, 3, 2, 7)).unwrap();
        let report = engine.step().unwrap();
        let heads = report.messages.iter().filter(|m| m.phase == Phase::Head).count();
        let tails = report.messages.iter().filter(|m| m.phase == Phase::Tail).count();
        assert_eq!((heads, tails), (3, 2));
        assert_eq!(report.residuals.dual.len(), 3);
        assert_eq!(report.residuals.primal.len(), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let objs = || vec![scalar(0.0), scalar(1.0)];
        let cfg = RunConfig {
            rho: 0.0,
            ..RunConfig::default()
        };
        assert!(matches!(Engine::new(objs(), cfg), Err(EngineError::Config(_))));
        let cfg = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(Engine::new(objs(), cfg).is_err());
        let cfg = RunConfig {
            bit_policy: BitPolicy::Fixed(0),
            ..RunConfig::default()
        };
        assert!(Engine::new(objs(), cfg).is_err());
        assert!(Engine::new(vec![scalar(0.0)], RunConfig::default()).is_err());
    }

    #[test]
    fn odd_chain_last_head_has_single_anchor() {
        let objectives: Vec<_> = (0..3).map(|i| scalar(i as f64)).collect();
        let engine = Engine::new(objectives, RunConfig::gadmm(1.0, 1)).unwrap();
        let last = &engine.workers()[2];
        assert_eq!(last.role(), Role::Head);
        assert_eq!(last.subproblem(1.0).anchors.len(), 1);
        assert!(engine.objectives()[2].dim() == 1);
    }
}
