//! Quantized group ADMM (Q-GADMM) over a chain of workers.
//!
//! Workers are split into alternating head and tail groups. Heads solve their
//! local penalized subproblem against the last models received from their
//! tail neighbours, broadcast a stochastically quantized model difference,
//! then tails do the same against the fresh head models. Dual variables are
//! updated redundantly at both ends of every link from the reconstructed
//! models, so they never travel over the air.
//!
//! The crate also carries parameter-server baselines ([`baselines`]), a free
//! space radio model that turns transmitted bits into joules ([`netsim`]),
//! and an experiment runner with CSV output ([`harness`]).

pub mod baselines;
pub mod gadmm;
pub mod harness;
pub mod netsim;
pub mod quantizer;
pub mod solvers;

/// Dense model parameter vector exchanged between workers.
pub type ModelVector = nalgebra::DVector<f64>;

pub use gadmm::{Engine, RoundReport, RunConfig, WorkerState};
pub use quantizer::{decode, encode, QuantizedMessage};
pub use solvers::{LocalObjective, LogisticObjective, QuadraticObjective, Smooth};
