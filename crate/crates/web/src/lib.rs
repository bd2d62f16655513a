//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and returns a JSON string; the `*_report` functions behind them
//! are ordinary Rust so they can be tested natively.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use qgadmm::gadmm::BitPolicy;
use qgadmm::harness::{self, Algorithm, ExperimentConfig, MetricsRecord, Problem};
use qgadmm::netsim::Deployment;
use qgadmm::quantizer::{self, Accounting};

#[derive(Debug, Serialize)]
pub struct QuantizeReport {
    pub bits: u32,
    pub range: f64,
    pub step_size: f64,
    pub levels: Vec<u64>,
    pub decoded: Vec<f64>,
    pub error: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub payload_bits: u64,
    pub full_precision_bits: u64,
}

/// One stochastic encode of `x` against `prev`, followed by a decode.
pub fn quantize_report(x: &[f64], prev: &[f64], bits: u32, seed: u64) -> Result<QuantizeReport, String> {
    if x.len() != prev.len() || x.is_empty() {
        return Err(format!("x has {} entries, prev has {}", x.len(), prev.len()));
    }
    let x = DVector::from_column_slice(x);
    let prev = DVector::from_column_slice(prev);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoded = quantizer::encode(&x, &prev, bits, &mut rng).map_err(|e| e.to_string())?;
    let decoded = quantizer::decode(&encoded.message, &prev).map_err(|e| e.to_string())?;
    let d = x.len();
    Ok(QuantizeReport {
        bits,
        range: f64::from(encoded.message.range),
        step_size: encoded.diagnostics.step_size,
        payload_bits: quantizer::payload_bits(&encoded.message, d, Accounting::Experiment),
        full_precision_bits: quantizer::full_precision_bits(d),
        levels: encoded.message.levels,
        error: (&x - &decoded).iter().copied().collect(),
        decoded: decoded.iter().copied().collect(),
        probabilities: encoded.diagnostics.probabilities,
    })
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub algorithm: String,
    pub iterations_to_target: Option<usize>,
    pub bits_to_target: Option<u64>,
    pub energy_to_target: Option<f64>,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub target: f64,
    pub traces: Vec<Trace>,
}

/// GADMM, Q-GADMM and both parameter-server baselines on one synthetic
/// regression problem.
pub fn compare_report(n_workers: usize, rho: f64, bits: u32, iterations: usize, seed: u64) -> Result<CompareReport, String> {
    let base = ExperimentConfig {
        n_workers,
        rho,
        bit_policy: BitPolicy::Fixed(bits),
        max_iters: iterations,
        seeds: vec![seed],
        ..ExperimentConfig::default()
    };
    base.validate().map_err(|e| e.to_string())?;
    let problem = Problem::build(&base, seed).map_err(|e| e.to_string())?;
    let mut traces = Vec::new();
    for algorithm in [Algorithm::Gadmm, Algorithm::Qgadmm, Algorithm::Gd, Algorithm::Qgd] {
        let config = ExperimentConfig {
            algorithm,
            ..base.clone()
        };
        let out = harness::run_on_problem(&config, seed, &problem).map_err(|e| e.to_string())?;
        traces.push(Trace {
            algorithm: algorithm.to_string(),
            iterations_to_target: out.summary.iterations_to_target,
            bits_to_target: out.summary.bits_to_target,
            energy_to_target: out.summary.energy_to_target,
            records: out.records,
        });
    }
    Ok(CompareReport {
        target: problem.target,
        traces,
    })
}

#[derive(Debug, Serialize)]
pub struct LayoutReport {
    pub positions: Vec<[f64; 2]>,
    pub ps_index: usize,
    pub chain_order: Vec<usize>,
    pub chain_length: f64,
    pub downlink_distance: f64,
}

pub fn layout_report(n_workers: usize, side: f64, seed: u64) -> Result<LayoutReport, String> {
    if n_workers < 2 || !(side > 0.0) {
        return Err("need at least two workers on a positive side length".into());
    }
    let deployment = Deployment::generate(n_workers, side, seed);
    Ok(LayoutReport {
        chain_length: deployment.chain_length(),
        downlink_distance: deployment.downlink_distance(),
        positions: deployment.positions,
        ps_index: deployment.ps_index,
        chain_order: deployment.chain_order,
    })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result
        .and_then(|r| serde_json::to_string(&r).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn quantize(x: &[f64], prev: &[f64], bits: u32, seed: u32) -> Result<String, JsValue> {
    to_js(quantize_report(x, prev, bits, u64::from(seed)))
}

#[wasm_bindgen]
pub fn compare(n_workers: usize, rho: f64, bits: u32, iterations: usize, seed: u32) -> Result<String, JsValue> {
    to_js(compare_report(n_workers, rho, bits, iterations, u64::from(seed)))
}

#[wasm_bindgen]
pub fn layout(n_workers: usize, side: f64, seed: u32) -> Result<String, JsValue> {
    to_js(layout_report(n_workers, side, u64::from(seed)))
}
