//! Parameter-server gradient descent (GD) and its quantized variant (QGD).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::netsim::{Phase, Sender, Transmission};
use crate::quantizer::{self, Accounting, QuantError};
use crate::solvers::{mean_curvature, Smooth};
use crate::ModelVector;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("worker {worker}: {source}")]
    Quantizer {
        worker: usize,
        #[source]
        source: QuantError,
    },
}

/// Global model at the server plus, for QGD, each worker's last quantized
/// gradient as known to both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PsState {
    pub theta: ModelVector,
    pub eta: f64,
    pub grad_hats: Vec<ModelVector>,
}

impl PsState {
    pub fn new(dim: usize, n_workers: usize, eta: f64) -> Self {
        Self {
            theta: ModelVector::zeros(dim),
            eta,
            grad_hats: vec![ModelVector::zeros(dim); n_workers],
        }
    }
}

/// Bits sent in one PS iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsTraffic {
    pub uplink: Vec<u64>,
    pub downlink: u64,
}

impl PsTraffic {
    pub fn total(&self) -> u64 {
        self.uplink.iter().sum::<u64>() + self.downlink
    }

    pub fn transmissions(&self) -> Vec<Transmission> {
        let mut out: Vec<Transmission> = self
            .uplink
            .iter()
            .enumerate()
            .map(|(i, &bits)| Transmission {
                sender: Sender::Worker(i),
                phase: Phase::Uplink,
                bits,
            })
            .collect();
        out.push(Transmission {
            sender: Sender::Server,
            phase: Phase::Downlink,
            bits: self.downlink,
        });
        out
    }
}

/// Local gradients at the broadcast model, in worker order.
fn gradients<F: Smooth + Sync>(objectives: &[F], theta: &ModelVector) -> Vec<ModelVector> {
    #[cfg(feature = "parallel")]
    {
        objectives.par_iter().map(|f| f.gradient(theta)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        objectives.iter().map(|f| f.gradient(theta)).collect()
    }
}

fn mean<'a>(vectors: impl Iterator<Item = &'a ModelVector>, dim: usize, n: usize) -> ModelVector {
    let mut acc = ModelVector::zeros(dim);
    for v in vectors {
        acc += v;
    }
    acc / n as f64
}

/// `θ ← θ − (η/N) Σ ∇f_n(θ)` with full-precision uplinks and downlink.
pub fn gd_round<F: Smooth + Sync>(state: &mut PsState, objectives: &[F]) -> PsTraffic {
    let d = state.theta.len();
    let grads = gradients(objectives, &state.theta);
    let step = mean(grads.iter(), d, objectives.len());
    state.theta -= state.eta * step;
    PsTraffic {
        uplink: vec![quantizer::full_precision_bits(d); objectives.len()],
        downlink: quantizer::full_precision_bits(d),
    }
}

/// Like [`gd_round`], but each worker uploads a quantized difference between
/// its gradient and its previous quantized gradient.
pub fn qgd_round<F: Smooth + Sync>(
    state: &mut PsState,
    objectives: &[F],
    bits: u32,
    rngs: &mut [ChaCha8Rng],
    accounting: Accounting,
) -> Result<PsTraffic, BaselineError> {
    let d = state.theta.len();
    let grads = gradients(objectives, &state.theta);
    let mut uplink = Vec::with_capacity(grads.len());
    for (i, g) in grads.iter().enumerate() {
        let encoded = quantizer::encode(g, &state.grad_hats[i], bits, &mut rngs[i])
            .map_err(|source| BaselineError::Quantizer { worker: i, source })?;
        // The server decodes against the same previous value.
        let decoded = quantizer::decode(&encoded.message, &state.grad_hats[i])
            .map_err(|source| BaselineError::Quantizer { worker: i, source })?;
        debug_assert_eq!(decoded, encoded.new_hat);
        state.grad_hats[i] = decoded;
        uplink.push(quantizer::payload_bits(&encoded.message, d, accounting));
    }
    let step = mean(state.grad_hats.iter(), d, objectives.len());
    state.theta -= state.eta * step;
    Ok(PsTraffic {
        uplink,
        downlink: quantizer::full_precision_bits(d),
    })
}

/// `1/L`, with `L` the largest eigenvalue of the mean curvature bound.
pub fn default_step_size<F: Smooth>(objectives: &[F]) -> Result<f64, BaselineError> {
    let l = mean_curvature(objectives);
    if l > 0.0 && l.is_finite() {
        Ok(1.0 / l)
    } else {
        Err(BaselineError::Config(format!("curvature estimate {l} is not positive")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsConfig {
    /// `None` picks `1/L`.
    pub eta: Option<f64>,
    pub max_iters: usize,
    /// `None` runs plain GD.
    pub bits: Option<u32>,
    pub seed: u64,
    pub accounting: Accounting,
}

impl PsConfig {
    pub fn gd(max_iters: usize) -> Self {
        Self {
            eta: None,
            max_iters,
            bits: None,
            seed: 0,
            accounting: Accounting::Experiment,
        }
    }

    pub fn qgd(max_iters: usize, bits: u32, seed: u64) -> Self {
        Self {
            bits: Some(bits),
            seed,
            ..Self::gd(max_iters)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsReport {
    pub iteration: usize,
    pub objective: f64,
    pub gap: Option<f64>,
    pub traffic: PsTraffic,
}

impl PsReport {
    pub fn transmissions(&self) -> Vec<Transmission> {
        self.traffic.transmissions()
    }
}

/// Step-wise driver mirroring [`crate::gadmm::Engine`].
#[derive(Debug)]
pub struct ParameterServer<F> {
    objectives: Vec<F>,
    state: PsState,
    rngs: Vec<ChaCha8Rng>,
    config: PsConfig,
    iteration: usize,
    f_star: Option<f64>,
    failed: bool,
}

impl<F: Smooth + Sync> ParameterServer<F> {
    pub fn new(objectives: Vec<F>, config: PsConfig) -> Result<Self, BaselineError> {
        let n = objectives.len();
        if n == 0 {
            return Err(BaselineError::Config("no workers".into()));
        }
        let d = objectives[0].dim();
        if d == 0 || objectives.iter().any(|f| f.dim() != d) {
            return Err(BaselineError::Config("objectives must share a positive dimension".into()));
        }
        if config.max_iters == 0 {
            return Err(BaselineError::Config("max_iters must be at least 1".into()));
        }
        if let Some(b) = config.bits {
            if !(1..=quantizer::MAX_BITS).contains(&b) {
                return Err(BaselineError::Config(format!("bits must lie in 1..={}", quantizer::MAX_BITS)));
            }
        }
        let eta = match config.eta {
            Some(eta) if eta > 0.0 && eta.is_finite() => eta,
            Some(eta) => return Err(BaselineError::Config(format!("step size must be positive, got {eta}"))),
            None => default_step_size(&objectives)?,
        };
        let rngs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Ok(Self {
            state: PsState::new(d, n, eta),
            objectives,
            rngs,
            config,
            iteration: 0,
            f_star: None,
            failed: false,
        })
    }

    pub fn with_optimum(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn state(&self) -> &PsState {
        &self.state
    }

    pub fn objectives(&self) -> &[F] {
        &self.objectives
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn objective(&self) -> f64 {
        self.objectives.iter().map(|f| f.value(&self.state.theta)).sum()
    }

    pub fn step(&mut self) -> Result<PsReport, BaselineError> {
        let traffic = match self.config.bits {
            None => gd_round(&mut self.state, &self.objectives),
            Some(b) => qgd_round(&mut self.state, &self.objectives, b, &mut self.rngs, self.config.accounting)?,
        };
        self.iteration += 1;
        let objective = self.objective();
        Ok(PsReport {
            iteration: self.iteration,
            objective,
            gap: self.f_star.map(|f| (objective - f).abs()),
            traffic,
        })
    }
}

impl<F: Smooth + Sync> Iterator for ParameterServer<F> {
    type Item = Result<PsReport, BaselineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.iteration >= self.config.max_iters {
            return None;
        }
        let out = self.step();
        self.failed = out.is_err();
        Some(out)
    }
}
